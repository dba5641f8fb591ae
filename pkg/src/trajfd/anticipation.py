"""Anticipated-density field and assembly of NLKV / LKV sample tables.

The anticipated density at cell (i, j) is the density the traffic there
expects to reach after the transition time tm while moving at its current
speed: the density field looked up floor(tm/ts) time steps ahead and
floor(v*tm/xs) space steps downstream. Samples are kept in SI units; the
fitting and reporting layers convert to km/h and veh/km.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fields import QUANTITY_ANTICIPATED_DENSITY, GridSpec, MacroField, SignField

logger = logging.getLogger(__name__)

DEFAULT_MIN_SAMPLES = 100


@dataclass(frozen=True)
class NlkvSample:
    """One non-local sample: anticipated density (veh/m), current speed (m/s),
    acceleration-sign label, plus grid provenance for diagnostics."""

    k_a: float
    v: float
    y: int
    i: int = -1
    j: int = -1
    accel: float = float("nan")


@dataclass(frozen=True)
class LkvSample:
    """One local sample: density (veh/m) and speed (m/s) of the same cell."""

    k: float
    v: float
    i: int = -1
    j: int = -1


def anticipated_density_field(K: MacroField, V: MacroField, spec: GridSpec) -> MacroField:
    """Shift the density field by the anticipation horizon.

    Undefined speed, out-of-grid lookups, and undefined target densities all
    propagate to undefined anticipated density.
    """
    if K.values.shape != V.values.shape:
        raise ValueError("K and V must share one grid")
    shape = K.values.shape
    max_i, max_j = shape[0] - 1, shape[1] - 1
    di = int(np.floor(spec.tm / spec.ts))

    out = np.full(shape, np.nan)
    defined = np.zeros(shape, dtype=bool)

    ii, jj = np.nonzero(V.defined)
    if len(ii):
        i2 = ii + di
        dj = np.floor(V.values[ii, jj] * spec.tm / spec.xs).astype(np.intp)
        j2 = jj + dj
        ok = (i2 <= max_i) & (j2 <= max_j)
        ii, jj, i2, j2 = ii[ok], jj[ok], i2[ok], j2[ok]
        ok = K.defined[i2, j2]
        ii, jj, i2, j2 = ii[ok], jj[ok], i2[ok], j2[ok]
        out[ii, jj] = K.values[i2, j2]
        defined[ii, jj] = True

    return MacroField(out, defined, QUANTITY_ANTICIPATED_DENSITY, spec, K.t0, K.x0)


def assemble_nlkv(K_a: MacroField, V: MacroField, y: SignField,
                  min_samples: int = DEFAULT_MIN_SAMPLES) -> list[NlkvSample]:
    """One sample per cell where anticipated density, speed, and label are all
    defined, in row-major (i, then j) order."""
    if not (K_a.values.shape == V.values.shape == y.labels.shape):
        raise ValueError("fields must share one grid")
    mask = K_a.defined & V.defined & y.defined
    ii, jj = np.nonzero(mask)
    samples = [
        NlkvSample(k_a=float(K_a.values[i, j]), v=float(V.values[i, j]),
                   y=int(y.labels[i, j]), i=int(i), j=int(j))
        for i, j in zip(ii, jj)
    ]
    if len(samples) < min_samples:
        logger.warning("only %d NLKV samples assembled (minimum %d expected)",
                       len(samples), min_samples)
    return samples


def attach_accelerations(samples: list[NlkvSample], A: MacroField) -> list[NlkvSample]:
    """Return the samples with the source acceleration value filled in."""
    return [
        NlkvSample(s.k_a, s.v, s.y, s.i, s.j, float(A.values[s.i, s.j]))
        for s in samples
    ]


def assemble_lkv(K: MacroField, V: MacroField,
                 min_samples: int = DEFAULT_MIN_SAMPLES) -> list[LkvSample]:
    """One sample per cell where density and speed are both defined, row-major."""
    if K.values.shape != V.values.shape:
        raise ValueError("fields must share one grid")
    mask = K.defined & V.defined
    ii, jj = np.nonzero(mask)
    samples = [
        LkvSample(k=float(K.values[i, j]), v=float(V.values[i, j]), i=int(i), j=int(j))
        for i, j in zip(ii, jj)
    ]
    if len(samples) < min_samples:
        logger.warning("only %d LKV samples assembled (minimum %d expected)",
                       len(samples), min_samples)
    return samples
