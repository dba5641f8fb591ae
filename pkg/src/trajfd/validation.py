"""Ground-truth oracles and diagnostics.

Synthetic traffic is generated by a speed-spacing rule taken directly from a
known speed-density model: every vehicle instantaneously drives at the
equilibrium speed of its current spacing, while a pace vehicle at the head of
the stream plays back the block speed profile. Uniform blocks are then exact
equilibria of the dynamics, and transitions between blocks propagate upstream
through the platoon as in kinematic wave theory, which is what gives the
transition cells anticipation-consistent acceleration labels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .fields import GridSpec, MacroField, SignField
from .fitting import FitConfig, FitResult, fit_fd
from .ingest import TrajectorySet, VehicleTrajectory
from .models import MS_TO_KMH, PARAM_ORDER, VEH_PER_M_TO_VEH_PER_KM, FdParams, fd_speed
from .pipeline import collect_samples, fields_for_set

logger = logging.getLogger(__name__)

DESPAWN_MARGIN_M = 150.0


@dataclass
class SyntheticScenario:
    """A piecewise-stationary traffic scenario with known equilibrium truth."""

    truth: FdParams
    density_profile: Sequence[float]  # veh/km per block; 0 empties the road
    block_s: float = 420.0
    road_m: float = 1500.0
    ramp_s: float = 30.0
    sample_dt: float = 1.0
    sim_dt: float = 0.25
    spacing_jitter: float = 0.0
    label_noise: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.density_profile:
            raise ValueError("density_profile must not be empty")
        for k in self.density_profile:
            if k < 0 or k >= self.truth.k_jam:
                raise ValueError(
                    f"profile density {k} must lie in [0, k_jam={self.truth.k_jam})")
        if self.block_s <= self.ramp_s:
            raise ValueError("block_s must exceed ramp_s")
        if self.sample_dt < self.sim_dt:
            raise ValueError("sample_dt must be >= sim_dt")


def _profile_value(values: np.ndarray, t: float, block_s: float, ramp_s: float) -> float:
    """Piecewise-constant profile with linear ramps at block starts."""
    idx = min(int(t // block_s), len(values) - 1)
    if idx >= 1 and t < idx * block_s + ramp_s:
        w = (t - idx * block_s) / ramp_s
        return (1.0 - w) * values[idx - 1] + w * values[idx]
    return float(values[idx])


def synthesize_stationary_trajectories(scenario: SyntheticScenario) -> TrajectorySet:
    """Simulate the scenario and return trajectories recorded on [0, road_m].

    Deterministic given the seed (the seed only matters when spacing_jitter
    is nonzero; label noise is applied later, on the fields).
    """
    truth = scenario.truth
    k_blocks = np.asarray(scenario.density_profile, dtype=float)
    positive = k_blocks[k_blocks > 0]
    if len(positive) == 0:
        raise ValueError("profile has no vehicles at all")
    v_cap_ms = fd_speed(truth, float(positive.min())) / MS_TO_KMH
    v_blocks = np.array([fd_speed(truth, k) / MS_TO_KMH if k > 0 else v_cap_ms
                         for k in k_blocks])

    total_t = len(k_blocks) * scenario.block_s
    dt = scenario.sim_dt
    n_steps = int(round(total_t / dt))
    rec_every = max(1, int(round(scenario.sample_dt / dt)))
    rng = np.random.default_rng(scenario.seed)

    capacity = 4096
    x = np.zeros(capacity)
    first = 0
    count = 0
    rec_t: list[list[float]] = []
    rec_x: list[list[float]] = []

    def spawn(position: float, t_now: float) -> None:
        nonlocal count, capacity, x
        if count == capacity:
            capacity *= 2
            x = np.resize(x, capacity)
        x[count] = position
        rec_t.append([])
        rec_x.append([])
        count += 1

    def speed_from_gap(gaps: np.ndarray) -> np.ndarray:
        dens = VEH_PER_M_TO_VEH_PER_KM / np.maximum(gaps, 1e-2)
        v = fd_speed(truth, np.minimum(dens, truth.k_jam * 10.0)) / MS_TO_KMH
        return np.minimum(v, v_cap_ms)

    for step in range(n_steps + 1):
        t_now = step * dt
        k_now = _profile_value(k_blocks, t_now, scenario.block_s, scenario.ramp_s)
        v_pace = _profile_value(v_blocks, t_now, scenario.block_s, scenario.ramp_s)

        # Entry: keep the upstream spacing at the current block's equilibrium.
        if k_now > 0:
            s_target = (VEH_PER_M_TO_VEH_PER_KM / k_now) * (
                1.0 + scenario.spacing_jitter * rng.uniform(-1.0, 1.0))
            if count == first:
                if count == 0:
                    spawn(0.0, t_now)
            elif x[count - 1] - s_target >= 0.0:
                spawn(x[count - 1] - s_target, t_now)

        if count > first:
            active = x[first:count]
            v = np.empty(len(active))
            v[0] = v_pace
            if len(active) > 1:
                v[1:] = speed_from_gap(active[:-1] - active[1:])

            if step % rec_every == 0:
                on_road = np.nonzero((active >= 0.0) & (active <= scenario.road_m))[0]
                for rel in on_road:
                    idx = first + rel
                    rec_t[idx].append(t_now)
                    rec_x[idx].append(float(active[rel]))

            x[first:count] = active + v * dt
            while first < count and x[first] > scenario.road_m + DESPAWN_MARGIN_M:
                first += 1

    trajectories = []
    for idx in range(count):
        if len(rec_t[idx]) >= 2:
            trajectories.append(VehicleTrajectory(
                f"v{idx:05d}",
                np.asarray(rec_t[idx], dtype=float),
                np.asarray(rec_x[idx], dtype=float)))
    if not trajectories:
        raise ValueError("scenario produced no recordable trajectories")
    meta = {"source": "synthetic", "seed": scenario.seed,
            "truth": truth.as_dict(), "n_vehicles": len(trajectories)}
    return TrajectorySet(trajectories, units_declared=meta)


def noisy_sign_field(A: MacroField, V: MacroField, K_a: MacroField,
                     truth: FdParams, seed: int = 0) -> SignField:
    """Replace deterministic sign labels by Bernoulli draws with deceleration
    probability logistic(v - f(k_a; truth)), wherever the structural validity
    of the acceleration and anticipated-density fields holds."""
    mask = A.defined & V.defined & K_a.defined
    labels = np.full(A.values.shape, -1, dtype=np.int8)
    ii, jj = np.nonzero(mask)
    if len(ii):
        v_kmh = V.values[ii, jj] * MS_TO_KMH
        k_kmh = K_a.values[ii, jj] * VEH_PER_M_TO_VEH_PER_KM
        z = v_kmh - fd_speed(truth, k_kmh)
        pi = expit(z)
        rng = np.random.default_rng(seed)
        labels[ii, jj] = (rng.random(len(ii)) < pi).astype(np.int8)
    return SignField(labels, mask, A.spec, A.t0, A.x0)


@dataclass
class DecelProbSurface:
    """Empirical deceleration probability per (anticipated density, speed) bin.
    Densities in veh/km, speeds in km/h; p is NaN where a bin is empty."""

    k_edges: np.ndarray
    v_edges: np.ndarray
    p: np.ndarray
    n: np.ndarray

    @property
    def k_centers(self) -> np.ndarray:
        return (self.k_edges[:-1] + self.k_edges[1:]) / 2.0

    @property
    def v_centers(self) -> np.ndarray:
        return (self.v_edges[:-1] + self.v_edges[1:]) / 2.0


def empirical_decel_probabilities(samples, k_edges=None, v_edges=None,
                                  n_bins: int = 20) -> DecelProbSurface:
    """Bin the NLKV samples and compute p = (# decelerating) / (# total) per bin."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    k = np.array([s.k_a for s in samples]) * VEH_PER_M_TO_VEH_PER_KM
    v = np.array([s.v for s in samples]) * MS_TO_KMH
    y = np.array([s.y for s in samples])
    if k_edges is None:
        k_edges = np.linspace(k.min(), k.max() * (1 + 1e-12), n_bins + 1)
    if v_edges is None:
        v_edges = np.linspace(v.min(), v.max() * (1 + 1e-12), n_bins + 1)
    k_edges = np.asarray(k_edges, dtype=float)
    v_edges = np.asarray(v_edges, dtype=float)

    total, _, _ = np.histogram2d(k, v, bins=[k_edges, v_edges])
    decel, _, _ = np.histogram2d(k[y == 1], v[y == 1], bins=[k_edges, v_edges])
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(total > 0, decel / total, np.nan)
    return DecelProbSurface(k_edges, v_edges, p, total.astype(int))


@dataclass
class CenteredCurve:
    """One density bin's p-vs-speed curve re-indexed around its p=0.5 speed."""

    k_lo: float
    k_hi: float
    v_star: float
    v_centered: np.ndarray
    p: np.ndarray


def center_speed_probabilities(surface: DecelProbSurface) -> list[CenteredCurve]:
    """For each density bin, locate the speed where p crosses 0.5 by linear
    interpolation and center that bin's curve on it. Bins without a crossing
    are omitted with a notice."""
    curves = []
    v_centers = surface.v_centers
    for row in range(surface.p.shape[0]):
        p_row = surface.p[row]
        have = ~np.isnan(p_row)
        if have.sum() < 1:
            continue
        v_have = v_centers[have]
        p_have = p_row[have]
        v_star = None
        for a in range(len(p_have)):
            if p_have[a] == 0.5:
                v_star = float(v_have[a])
                break
            if a + 1 < len(p_have) and (p_have[a] - 0.5) * (p_have[a + 1] - 0.5) < 0:
                frac = (0.5 - p_have[a]) / (p_have[a + 1] - p_have[a])
                v_star = float(v_have[a] + frac * (v_have[a + 1] - v_have[a]))
                break
        if v_star is None:
            logger.info("density bin [%.1f, %.1f) has no p=0.5 crossing; omitted",
                        surface.k_edges[row], surface.k_edges[row + 1])
            continue
        curves.append(CenteredCurve(
            k_lo=float(surface.k_edges[row]), k_hi=float(surface.k_edges[row + 1]),
            v_star=v_star, v_centered=v_have - v_star, p=p_have.copy()))
    return curves


DEFAULT_RECOVERY_TOLERANCES = {"v0": 0.05, "k_crit": 0.05, "k_jam": 0.10, "lam": 0.10}
DEFAULT_PROFILE = (30.0, 150.0, 50.0, 170.0, 40.0, 160.0, 30.0)


def default_scenario(truth: FdParams, seed: int = 0, label_noise: bool = False,
                     total_s: float = 2700.0) -> SyntheticScenario:
    """A congestion-pulse scenario alternating free and congested blocks."""
    profile = [k for k in DEFAULT_PROFILE if k < truth.k_jam * 0.9]
    block_s = max(60.0, total_s / len(profile))
    return SyntheticScenario(truth=truth, density_profile=profile, block_s=block_s,
                             spacing_jitter=0.05, label_noise=label_noise, seed=seed)


@dataclass
class PipelineFit:
    """One synthesize -> fields -> samples -> fit pass."""

    nlkv_fit: FitResult
    lse_fit: FitResult
    n_nlkv: int
    n_lkv: int


@dataclass
class RecoveryReport:
    truth: FdParams
    tolerances: dict
    run_a: Optional[PipelineFit] = None
    run_b: Optional[PipelineFit] = None
    deltas_truth: dict = field(default_factory=dict)
    deltas_seeds: dict = field(default_factory=dict)
    lse_spread: dict = field(default_factory=dict)
    recovery_passed: bool = False
    invariance_passed: bool = False
    error: str = ""

    def to_dict(self) -> dict:
        out = {
            "truth": self.truth.as_dict(),
            "tolerances": {k: float(v) for k, v in self.tolerances.items()},
            "deltas_truth": {k: float(v) for k, v in self.deltas_truth.items()},
            "deltas_seeds": {k: float(v) for k, v in self.deltas_seeds.items()},
            "lse_spread": {k: float(v) for k, v in self.lse_spread.items()},
            "recovery_passed": bool(self.recovery_passed),
            "invariance_passed": bool(self.invariance_passed),
            "error": self.error,
        }
        if self.run_a is not None:
            out["fitted_a"] = self.run_a.nlkv_fit.to_dict()
            out["lse_a"] = self.run_a.lse_fit.to_dict()
        if self.run_b is not None:
            out["fitted_b"] = self.run_b.nlkv_fit.to_dict()
            out["lse_b"] = self.run_b.lse_fit.to_dict()
        return out


def run_synthetic_pipeline(scenario: SyntheticScenario, spec: GridSpec,
                           cfg: FitConfig, zero_tol: float = 1e-9) -> PipelineFit:
    """Synthesize one scenario and fit both the non-local and local routes."""
    tset = synthesize_stationary_trajectories(scenario)
    parts = fields_for_set(tset, spec, zero_tol)
    if scenario.label_noise:
        parts.signs = noisy_sign_field(parts.A, parts.V, parts.K_a,
                                       scenario.truth, seed=scenario.seed)
    nlkv, lkv = collect_samples([parts])
    nlkv_cfg = FitConfig(loss=cfg.loss, multistart=cfg.multistart, max_iter=cfg.max_iter,
                         fatol=cfg.fatol, xatol=cfg.xatol, seed=cfg.seed,
                         penalty=cfg.penalty, bounds=cfg.bounds)
    lse_cfg = FitConfig(loss="lse", multistart=cfg.multistart, max_iter=cfg.max_iter,
                        fatol=cfg.fatol, xatol=cfg.xatol, seed=cfg.seed,
                        penalty=cfg.penalty, bounds=cfg.bounds)
    nlkv_fit = fit_fd(scenario.truth.model, nlkv, nlkv_cfg)
    lse_fit = fit_fd(scenario.truth.model, lkv, lse_cfg)
    return PipelineFit(nlkv_fit=nlkv_fit, lse_fit=lse_fit, n_nlkv=len(nlkv), n_lkv=len(lkv))


def _relative_deltas(a: FdParams, b: FdParams) -> dict[str, float]:
    return {name: abs(getattr(a, name) - getattr(b, name)) / abs(getattr(b, name))
            for name in PARAM_ORDER[a.model]}


def recovery_check(truth: FdParams, spec: GridSpec, cfg: FitConfig,
                   scenario: Optional[SyntheticScenario] = None,
                   seeds: tuple[int, int] = (101, 202),
                   tolerances: Optional[dict] = None) -> RecoveryReport:
    """End-to-end oracle: recover the truth from one synthetic scenario, and
    check that two different scenario seeds agree with each other within twice
    the recovery tolerances. LSE results ride along for comparison only."""
    tolerances = dict(DEFAULT_RECOVERY_TOLERANCES if tolerances is None else tolerances)
    report = RecoveryReport(truth=truth, tolerances=tolerances)
    base = scenario if scenario is not None else default_scenario(truth, label_noise=True)

    try:
        runs = []
        for seed in seeds:
            scen = SyntheticScenario(
                truth=base.truth, density_profile=base.density_profile,
                block_s=base.block_s, road_m=base.road_m, ramp_s=base.ramp_s,
                sample_dt=base.sample_dt, sim_dt=base.sim_dt,
                spacing_jitter=base.spacing_jitter, label_noise=base.label_noise,
                seed=seed)
            runs.append(run_synthetic_pipeline(scen, spec, cfg))
    except ValueError as exc:
        report.error = str(exc)
        return report

    report.run_a, report.run_b = runs
    names = PARAM_ORDER[truth.model]
    report.deltas_truth = _relative_deltas(report.run_a.nlkv_fit.params, truth)
    report.deltas_seeds = {
        name: abs(getattr(report.run_a.nlkv_fit.params, name)
                  - getattr(report.run_b.nlkv_fit.params, name)) / abs(getattr(truth, name))
        for name in names}
    report.lse_spread = {
        name: abs(getattr(report.run_a.lse_fit.params, name)
                  - getattr(report.run_b.lse_fit.params, name)) / abs(getattr(truth, name))
        for name in names}
    report.recovery_passed = all(
        report.deltas_truth[name] <= tolerances.get(name, 0.10) for name in names)
    report.invariance_passed = all(
        report.deltas_seeds[name] <= 2.0 * tolerances.get(name, 0.10) for name in names)
    return report
