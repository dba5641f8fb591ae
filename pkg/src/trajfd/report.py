"""Artifact writers: delimited dumps, JSON reports, and rendered figures.

Sample tables and plot data are written in reporting units (km/h, veh/km)
with full-precision floats so that downstream re-evaluation reproduces loss
values exactly. JSON is written with sorted keys and no volatile content,
so identical runs produce byte-identical reports.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .anticipation import LkvSample, NlkvSample
from .fields import (
    QUANTITY_ACCELERATION,
    QUANTITY_DENSITY,
    QUANTITY_SPEED,
    GridSpec,
    MacroField,
)
from .fitting import FitResult
from .models import MS_TO_KMH, VEH_PER_M_TO_VEH_PER_KM, FdParams, fd_speed
from .pipeline import SegmentFields
from .validation import CenteredCurve, DecelProbSurface

logger = logging.getLogger(__name__)

_PLOT_UNITS = {
    QUANTITY_SPEED: ("speed [km/h]", MS_TO_KMH),
    QUANTITY_DENSITY: ("density [veh/km]", VEH_PER_M_TO_VEH_PER_KM),
    QUANTITY_ACCELERATION: ("acceleration [m/s^2]", 1.0),
}


def _fmt(x: float) -> str:
    return repr(float(x))


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_field_csv(fieldd: MacroField, path) -> None:
    """Dump one field as `i,j,t0_s,x0_m,value`; undefined cells are omitted."""
    ii, jj = np.nonzero(fieldd.defined)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "t0_s", "x0_m", "value"])
        for i, j in zip(ii, jj):
            writer.writerow([int(i), int(j), _fmt(fieldd.cell_t0(i)),
                             _fmt(fieldd.cell_x0(j)), _fmt(fieldd.values[i, j])])


def write_grid_meta(spec: GridSpec, fieldd: MacroField, path) -> None:
    write_json({
        "grid": {"dt": spec.dt, "dx": spec.dx, "ts": spec.ts, "xs": spec.xs, "tm": spec.tm},
        "I": int(fieldd.max_i),
        "J": int(fieldd.max_j),
        "t0": float(fieldd.t0),
        "x0": float(fieldd.x0),
        "quantity": fieldd.quantity,
    }, path)


def write_nlkv_csv(samples: Sequence[NlkvSample], path, provenance: bool = False) -> None:
    header = ["k_a_veh_per_km", "v_km_per_h", "y"]
    if provenance:
        header += ["i", "j", "accel_m_per_s2"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in samples:
            row = [_fmt(s.k_a * VEH_PER_M_TO_VEH_PER_KM), _fmt(s.v * MS_TO_KMH), int(s.y)]
            if provenance:
                row += [s.i, s.j, _fmt(s.accel)]
            writer.writerow(row)


def read_nlkv_csv(path) -> list[NlkvSample]:
    samples = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            samples.append(NlkvSample(
                k_a=float(row["k_a_veh_per_km"]) / VEH_PER_M_TO_VEH_PER_KM,
                v=float(row["v_km_per_h"]) / MS_TO_KMH,
                y=int(row["y"]),
                i=int(row.get("i", -1)), j=int(row.get("j", -1)),
                accel=float(row.get("accel_m_per_s2", "nan"))))
    return samples


def write_lkv_csv(samples: Sequence[LkvSample], path, provenance: bool = False) -> None:
    header = ["k_veh_per_km", "v_km_per_h"]
    if provenance:
        header += ["i", "j"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in samples:
            row = [_fmt(s.k * VEH_PER_M_TO_VEH_PER_KM), _fmt(s.v * MS_TO_KMH)]
            if provenance:
                row += [s.i, s.j]
            writer.writerow(row)


def read_lkv_csv(path) -> list[LkvSample]:
    samples = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            samples.append(LkvSample(
                k=float(row["k_veh_per_km"]) / VEH_PER_M_TO_VEH_PER_KM,
                v=float(row["v_km_per_h"]) / MS_TO_KMH,
                i=int(row.get("i", -1)), j=int(row.get("j", -1))))
    return samples


def write_decel_surface_csv(surface: DecelProbSurface, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k_bin_lo", "k_bin_hi", "v_bin_lo", "v_bin_hi", "p", "n"])
        for r in range(surface.p.shape[0]):
            for c in range(surface.p.shape[1]):
                n = int(surface.n[r, c])
                p = "" if n == 0 else _fmt(surface.p[r, c])
                writer.writerow([_fmt(surface.k_edges[r]), _fmt(surface.k_edges[r + 1]),
                                 _fmt(surface.v_edges[c]), _fmt(surface.v_edges[c + 1]),
                                 p, n])


def write_centered_curves_csv(curves: Sequence[CenteredCurve], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k_bin_lo", "k_bin_hi", "v_star", "v_centered", "p"])
        for curve in curves:
            for vc, p in zip(curve.v_centered, curve.p):
                writer.writerow([_fmt(curve.k_lo), _fmt(curve.k_hi), _fmt(curve.v_star),
                                 _fmt(vc), _fmt(p)])


def comparison_rows(fits: Sequence[FitResult]) -> list[dict]:
    rows = []
    for fit in fits:
        d = fit.params.as_dict()
        rows.append({
            "model": d["model"],
            "loss": fit.loss,
            "params": d["params"],
            "loss_value": float(fit.loss_value),
            "omega": None if fit.omega is None else float(fit.omega),
            "m": int(fit.m),
            "converged": bool(fit.converged),
            "iterations": int(fit.iterations),
        })
    return rows


def write_comparison(fits: Sequence[FitResult], json_path, csv_path) -> None:
    rows = comparison_rows(fits)
    write_json({"rows": rows}, json_path)
    param_names = ("v0", "k_crit", "k_jam", "lam")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "loss", *param_names, "loss_value", "omega", "m",
                         "converged"])
        for row in rows:
            values = [row["params"].get(name) for name in param_names]
            writer.writerow([
                row["model"], row["loss"],
                *["" if v is None else _fmt(v) for v in values],
                _fmt(row["loss_value"]),
                "" if row["omega"] is None else _fmt(row["omega"]),
                row["m"], row["converged"],
            ])


# ---------------------------------------------------------------------------
# Plot data (delimited) and rendered figures
# ---------------------------------------------------------------------------


def write_heatmap_csv(fields: Sequence[MacroField], path) -> None:
    """Cell-center (t, x, value) rows for one quantity across all segments."""
    label, factor = _PLOT_UNITS.get(fields[0].quantity, (fields[0].quantity, 1.0))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "x_m", "value"])
        for fieldd in fields:
            spec = fieldd.spec
            ii, jj = np.nonzero(fieldd.defined)
            for i, j in zip(ii, jj):
                writer.writerow([
                    _fmt(fieldd.cell_t0(i) + spec.dt / 2.0),
                    _fmt(fieldd.cell_x0(j) + spec.dx / 2.0),
                    _fmt(fieldd.values[i, j] * factor)])


def write_curve_csv(params: FdParams, path, n_points: int = 500,
                    k_lo: float = 1.0) -> None:
    ks = np.linspace(k_lo, params.k_jam, n_points)
    vs = fd_speed(params, ks)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k_veh_per_km", "v_km_per_h"])
        for k, v in zip(ks, vs):
            writer.writerow([_fmt(k), _fmt(v)])


def emit_plot_data(out_dir, parts: Sequence[SegmentFields],
                   nlkv: Sequence[NlkvSample], lkv: Sequence[LkvSample],
                   fits: Sequence[FitResult]) -> list[Path]:
    """Write every plot-ready delimited file; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    for name, pick in (("V", lambda p: p.V), ("K", lambda p: p.K), ("A", lambda p: p.A)):
        path = out_dir / f"heatmap_{name}.csv"
        write_heatmap_csv([pick(p) for p in parts], path)
        written.append(path)

    path = out_dir / "scatter_lkv.csv"
    write_lkv_csv(lkv, path)
    written.append(path)
    path = out_dir / "scatter_nlkv.csv"
    write_nlkv_csv(nlkv, path)
    written.append(path)

    for fit in fits:
        path = out_dir / f"curve_{fit.params.model}_{fit.loss}.csv"
        write_curve_csv(fit.params, path)
        written.append(path)
    return written


def _collect_cells(parts: Sequence[SegmentFields], pick) -> tuple[np.ndarray, ...]:
    ts, xs, vals = [], [], []
    for part in parts:
        fieldd = pick(part)
        spec = fieldd.spec
        ii, jj = np.nonzero(fieldd.defined)
        ts.append(fieldd.t0 + ii * spec.ts + spec.dt / 2.0)
        xs.append(fieldd.x0 + jj * spec.xs + spec.dx / 2.0)
        vals.append(fieldd.values[ii, jj])
    return np.concatenate(ts), np.concatenate(xs), np.concatenate(vals)


def render_field_figures(out_dir, parts: Sequence[SegmentFields]) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    picks = {"V": lambda p: p.V, "K": lambda p: p.K, "A": lambda p: p.A}
    for name, pick in picks.items():
        t, x, val = _collect_cells(parts, pick)
        quantity = pick(parts[0]).quantity
        label, factor = _PLOT_UNITS.get(quantity, (quantity, 1.0))
        fig, ax = plt.subplots(figsize=(8, 4))
        cmap = "RdYlGn" if name == "A" else "viridis"
        sc = ax.scatter(t, x, c=val * factor, s=2, marker="s", cmap=cmap, rasterized=True)
        if name == "A":
            lim = np.nanmax(np.abs(val)) if len(val) else 1.0
            sc.set_clim(-lim, lim)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("position [m]")
        fig.colorbar(sc, ax=ax, label=label)
        fig.tight_layout()
        path = out_dir / f"field_{name}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def render_sample_figures(out_dir, nlkv: Sequence[NlkvSample],
                          lkv: Sequence[LkvSample],
                          fits: Sequence[FitResult]) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    if lkv:
        k = np.array([s.k for s in lkv]) * VEH_PER_M_TO_VEH_PER_KM
        v = np.array([s.v for s in lkv]) * MS_TO_KMH
        fig, ax = plt.subplots(figsize=(6, 4.5))
        ax.scatter(k, v, s=2, alpha=0.2, color="tab:gray", label="local samples")
        _overlay_fits(ax, [f for f in fits if f.loss == "lse"])
        ax.set_xlabel("density [veh/km]")
        ax.set_ylabel("speed [km/h]")
        ax.legend(markerscale=4)
        fig.tight_layout()
        path = out_dir / "scatter_lkv.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    if nlkv:
        k = np.array([s.k_a for s in nlkv]) * VEH_PER_M_TO_VEH_PER_KM
        v = np.array([s.v for s in nlkv]) * MS_TO_KMH
        y = np.array([s.y for s in nlkv])
        fig, ax = plt.subplots(figsize=(6, 4.5))
        ax.scatter(k[y == 0], v[y == 0], s=2, alpha=0.2, color="tab:blue",
                   label="accelerating (y=0)")
        ax.scatter(k[y == 1], v[y == 1], s=2, alpha=0.2, color="tab:red",
                   label="decelerating (y=1)")
        _overlay_fits(ax, [f for f in fits if f.loss in ("ece", "nll")])
        ax.set_xlabel("anticipated density [veh/km]")
        ax.set_ylabel("speed [km/h]")
        ax.legend(markerscale=4)
        fig.tight_layout()
        path = out_dir / "scatter_nlkv.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    if fits:
        fig, ax = plt.subplots(figsize=(6, 4.5))
        _overlay_fits(ax, fits)
        ax.set_xlabel("density [veh/km]")
        ax.set_ylabel("speed [km/h]")
        ax.legend()
        fig.tight_layout()
        path = out_dir / "fd_curves.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def _overlay_fits(ax, fits: Sequence[FitResult]) -> None:
    for fit in fits:
        ks = np.linspace(1.0, fit.params.k_jam, 400)
        ax.plot(ks, fd_speed(fit.params, ks), lw=1.5,
                label=f"{fit.params.model} ({fit.loss})")


def render_diagnostics_figures(out_dir, surface: DecelProbSurface,
                               curves: Sequence[CenteredCurve]) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4.5))
    mesh = ax.pcolormesh(surface.k_edges, surface.v_edges,
                         np.ma.masked_invalid(surface.p).T,
                         cmap="coolwarm", vmin=0.0, vmax=1.0)
    ax.set_xlabel("anticipated density [veh/km]")
    ax.set_ylabel("speed [km/h]")
    fig.colorbar(mesh, ax=ax, label="deceleration probability")
    fig.tight_layout()
    path = out_dir / "decel_probability.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    if curves:
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for curve in curves:
            ax.plot(curve.v_centered, curve.p, marker="o", ms=3, lw=1,
                    label=f"k in [{curve.k_lo:.0f}, {curve.k_hi:.0f})")
        ax.axhline(0.5, color="k", lw=0.5, ls=":")
        ax.axvline(0.0, color="k", lw=0.5, ls=":")
        ax.set_xlabel("speed - crossing speed [km/h]")
        ax.set_ylabel("deceleration probability")
        if len(curves) <= 10:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / "decel_probability_centered.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
