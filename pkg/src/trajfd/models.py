"""Parametric speed-density models and the logistic deceleration-probability model.

All model evaluation happens in reporting units: speeds in km/h, densities in
veh/km. The logistic link has an implicit unit scale of one speed unit, so the
choice of units is part of the model definition; conversion from the internal
SI fields happens at the fitting/reporting boundary (see `trajfd.fitting`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

MS_TO_KMH = 3.6
VEH_PER_M_TO_VEH_PER_KM = 1000.0

GREENBERG = "greenberg"
SMULDERS = "smulders"
FRANKLIN_NEWELL = "franklin_newell"

MODEL_NAMES = (GREENBERG, SMULDERS, FRANKLIN_NEWELL)

# Optimization vector layout per model.
PARAM_ORDER = {
    GREENBERG: ("v0", "k_jam"),
    SMULDERS: ("v0", "k_crit", "k_jam"),
    FRANKLIN_NEWELL: ("v0", "lam", "k_jam"),
}


class FdDomainError(ValueError):
    """Raised when a model is evaluated outside its density domain (k <= 0)."""


@dataclass(frozen=True)
class FdParams:
    """Parameters of one speed-density model.

    v0 and k_jam exist for every model; k_crit only for Smulders and lam
    (a flow-like rate, km/h * veh/km) only for Franklin-Newell.
    """

    model: str
    v0: float
    k_jam: float
    k_crit: Optional[float] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == SMULDERS and self.k_crit is None:
            raise ValueError("smulders requires k_crit")
        if self.model == FRANKLIN_NEWELL and self.lam is None:
            raise ValueError("franklin_newell requires lam")

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_ORDER[self.model]], dtype=float)

    @classmethod
    def from_vector(cls, model: str, vec) -> "FdParams":
        names = PARAM_ORDER[model]
        if len(vec) != len(names):
            raise ValueError(f"{model} expects {len(names)} parameters, got {len(vec)}")
        return cls(model=model, **{name: float(v) for name, v in zip(names, vec)})

    def as_dict(self) -> dict:
        params = {name: float(getattr(self, name)) for name in PARAM_ORDER[self.model]}
        return {
            "model": self.model,
            "params": params,
            "units": {"speed": "km/h", "density": "veh/km"},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FdParams":
        return cls(model=d["model"], **{k: float(v) for k, v in d["params"].items()})


def greenberg(v0: float, k_jam: float) -> FdParams:
    return FdParams(model=GREENBERG, v0=v0, k_jam=k_jam)


def smulders(v0: float, k_crit: float, k_jam: float) -> FdParams:
    return FdParams(model=SMULDERS, v0=v0, k_jam=k_jam, k_crit=k_crit)


def franklin_newell(v0: float, lam: float, k_jam: float) -> FdParams:
    return FdParams(model=FRANKLIN_NEWELL, v0=v0, k_jam=k_jam, lam=lam)


def _as_density_array(k):
    arr = np.asarray(k, dtype=float)
    if np.any(arr <= 0.0):
        raise FdDomainError("density must be > 0")
    return arr


def _match_input(k, out: np.ndarray):
    if np.ndim(k) == 0:
        return float(out)
    return out


def eval_greenberg(p: FdParams, k):
    """v = v0 * ln(k_jam / k), clamped to 0 beyond k_jam."""
    arr = _as_density_array(k)
    v = p.v0 * np.log(p.k_jam / arr)
    return _match_input(k, np.maximum(v, 0.0))


def eval_smulders(p: FdParams, k):
    """Linear free branch below k_crit, hyperbolic congested branch above."""
    arr = _as_density_array(k)
    free = p.v0 * (1.0 - arr / p.k_jam)
    congested = p.v0 * p.k_crit * (1.0 / arr - 1.0 / p.k_jam)
    v = np.where(arr < p.k_crit, free, congested)
    return _match_input(k, np.maximum(v, 0.0))


def eval_franklin_newell(p: FdParams, k):
    """v = v0 * (1 - exp(-(lam/v0) * (1/k - 1/k_jam))), clamped to 0 beyond k_jam."""
    arr = _as_density_array(k)
    expo = -(p.lam / p.v0) * (1.0 / arr - 1.0 / p.k_jam)
    # expo > 0 only for k > k_jam, where the result is clamped anyway; the clip
    # just keeps np.exp from overflowing on absurd trial parameters.
    v = p.v0 * (1.0 - np.exp(np.minimum(expo, 700.0)))
    return _match_input(k, np.maximum(v, 0.0))


_EVALUATORS = {
    GREENBERG: eval_greenberg,
    SMULDERS: eval_smulders,
    FRANKLIN_NEWELL: eval_franklin_newell,
}


def fd_speed(p: FdParams, k):
    """Evaluate the model's equilibrium speed (km/h) at density k (veh/km)."""
    return _EVALUATORS[p.model](p, k)


def deceleration_probability(v, k_a, p: FdParams, scale: float = 1.0):
    """Probability that traffic at speed v (km/h) facing anticipated density
    k_a (veh/km) decelerates: logistic((v - f(k_a)) / scale)."""
    if scale <= 0.0:
        raise ValueError("scale must be > 0")
    z = (np.asarray(v, dtype=float) - fd_speed(p, k_a)) / scale
    out = expit(z)
    if np.ndim(v) == 0 and np.ndim(k_a) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Violation:
    what: str
    amount: float


def validate_params(p: FdParams, k_max_observed: float) -> list[Violation]:
    """Check positivity, Smulders ordering, and that k_jam exceeds the largest
    observed density. Returns an empty list when the parameters are usable;
    the fitter turns the amounts into penalties."""
    violations = []
    for name in PARAM_ORDER[p.model]:
        value = getattr(p, name)
        if not np.isfinite(value) or value <= 0.0:
            bad = 0.0 if not np.isfinite(value) else value
            violations.append(Violation(f"{name} must be > 0, got {value}", 1.0 + abs(bad)))
    if p.model == SMULDERS and p.k_crit is not None and p.k_crit >= p.k_jam:
        violations.append(Violation(
            f"k_crit ({p.k_crit}) must be < k_jam ({p.k_jam})", p.k_crit - p.k_jam + 1.0))
    if p.k_jam <= k_max_observed:
        violations.append(Violation(
            f"k_jam ({p.k_jam}) must exceed max observed density ({k_max_observed})",
            k_max_observed - p.k_jam + 1.0))
    return violations
