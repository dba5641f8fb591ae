"""Loss functions and the derivative-free parameter-estimation engine.

Three losses: the class-rate-weighted cross entropy with a linear
misclassification-distance term (per-sample mean), the plain negative
log-likelihood (unnormalized sum), and least squares (per-sample mean).
Samples arrive in SI units and are converted once to km/h and veh/km, the
units the models are defined in.

Per-sample loss terms are sorted before pairwise summation so that every
loss value is bitwise independent of sample order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .anticipation import LkvSample, NlkvSample
from .models import (
    MS_TO_KMH,
    PARAM_ORDER,
    SMULDERS,
    VEH_PER_M_TO_VEH_PER_KM,
    FdDomainError,
    FdParams,
    fd_speed,
    validate_params,
)

logger = logging.getLogger(__name__)

LOSS_ECE = "ece"
LOSS_NLL = "nll"
LOSS_LSE = "lse"
LOSS_NAMES = (LOSS_ECE, LOSS_NLL, LOSS_LSE)


class DegenerateSampleError(ValueError):
    """Raised when every label in an NLKV sample belongs to one class."""


def softplus_stable(z):
    """log(1 + e^z) computed as max(z, 0) + log1p(e^(-|z|)); exact at the
    asymptotes and free of overflow for any representable z."""
    arr = np.asarray(z, dtype=float)
    out = np.maximum(arr, 0.0) + np.log1p(np.exp(-np.abs(arr)))
    if np.ndim(z) == 0:
        return float(out)
    return out


def compute_omega(samples: Sequence[NlkvSample]) -> float:
    """Fraction of accelerating (y = 0) samples."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    labels = np.array([s.y for s in samples])
    omega = float(np.count_nonzero(labels == 0)) / len(labels)
    if omega in (0.0, 1.0):
        raise DegenerateSampleError(
            "single-class sample; the weighted cross-entropy loss is degenerate")
    return omega


def nlkv_arrays(samples: Sequence[NlkvSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(density veh/km, speed km/h, label) arrays in fitting units."""
    k = np.array([s.k_a for s in samples]) * VEH_PER_M_TO_VEH_PER_KM
    v = np.array([s.v for s in samples]) * MS_TO_KMH
    y = np.array([s.y for s in samples], dtype=np.int8)
    return k, v, y


def lkv_arrays(samples: Sequence[LkvSample]) -> tuple[np.ndarray, np.ndarray]:
    k = np.array([s.k for s in samples]) * VEH_PER_M_TO_VEH_PER_KM
    v = np.array([s.v for s in samples]) * MS_TO_KMH
    return k, v


def _ordered_sum(terms: np.ndarray) -> float:
    return float(np.sum(np.sort(terms)))


def _ece_terms(params: FdParams, k: np.ndarray, v: np.ndarray, y: np.ndarray,
               omega: float) -> np.ndarray:
    z = v - fd_speed(params, k)
    # y=1: omega * log(1+e^-z); y=0: (1-omega) * (z + log(1+e^-z)) = (1-omega) * softplus(z)
    return np.where(y == 1, omega * softplus_stable(-z), (1.0 - omega) * softplus_stable(z))


def ece_loss(params: FdParams, samples: Sequence[NlkvSample], omega: float) -> float:
    """Weighted cross-entropy loss, averaged over samples. Non-negative and
    finite for any parameters inside the model domain."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    if not 0.0 < omega < 1.0:
        raise ValueError("omega must lie strictly between 0 and 1")
    k, v, y = nlkv_arrays(samples)
    try:
        return _ordered_sum(_ece_terms(params, k, v, y, omega)) / len(samples)
    except FdDomainError as exc:
        logger.debug("model domain error during loss evaluation: %s", exc)
        return math.inf


def nll_loss(params: FdParams, samples: Sequence[NlkvSample]) -> float:
    """Unnormalized negative log-likelihood of the Bernoulli label model."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    k, v, y = nlkv_arrays(samples)
    try:
        z = v - fd_speed(params, k)
    except FdDomainError as exc:
        logger.debug("model domain error during loss evaluation: %s", exc)
        return math.inf
    terms = np.where(y == 1, softplus_stable(-z), softplus_stable(z))
    return _ordered_sum(terms)


def lse_loss(params: FdParams, samples: Sequence[LkvSample]) -> float:
    """Mean squared speed residual."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    k, v = lkv_arrays(samples)
    try:
        resid = v - fd_speed(params, k)
    except FdDomainError as exc:
        logger.debug("model domain error during loss evaluation: %s", exc)
        return math.inf
    return _ordered_sum(resid * resid) / len(samples)


@dataclass
class FitConfig:
    """Loss selection plus multi-start simplex settings."""

    loss: str = LOSS_ECE
    multistart: int = 16
    max_iter: int = 1000
    fatol: float = 1e-12
    xatol: float = 1e-8
    seed: int = 0
    penalty: float = 1e3
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.loss not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.multistart < 1:
            raise ValueError("multistart must be >= 1")
        if self.fatol <= 0 or self.xatol <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass
class FitResult:
    params: FdParams
    loss_value: float
    loss: str
    iterations: int
    converged: bool
    m: int
    omega: Optional[float] = None
    seed: int = 0
    multistart: int = 1
    bounds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = self.params.as_dict()
        out.update({
            "loss": self.loss,
            "loss_value": float(self.loss_value),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "m": int(self.m),
            "omega": None if self.omega is None else float(self.omega),
            "seed": int(self.seed),
            "multistart": int(self.multistart),
            "bounds": {name: [float(lo), float(hi)] for name, (lo, hi) in self.bounds.items()},
        })
        return out


def default_bounds(model: str, k_max_observed: float) -> dict[str, tuple[float, float]]:
    """Physically generous parameter boxes; k_jam must clear the data."""
    bounds = {
        "v0": (1.0, 200.0),
        "k_jam": (k_max_observed * 1.01, 1000.0),
    }
    if "k_crit" in PARAM_ORDER[model]:
        bounds["k_crit"] = (1.0, 1000.0)
    if "lam" in PARAM_ORDER[model]:
        bounds["lam"] = (1.0, 10000.0)
    return {name: bounds[name] for name in PARAM_ORDER[model]}


def _sample_starts(model: str, bounds: dict, n: int, rng: np.random.Generator) -> np.ndarray:
    names = PARAM_ORDER[model]
    starts = np.empty((n, len(names)))
    for col, name in enumerate(names):
        lo, hi = bounds[name]
        starts[:, col] = rng.uniform(lo, hi, size=n)
    if model == SMULDERS:
        # Keep the ordering constraint satisfied at every start.
        j_crit = names.index("k_crit")
        j_jam = names.index("k_jam")
        lo = bounds["k_crit"][0]
        starts[:, j_crit] = rng.uniform(lo, 0.99 * starts[:, j_jam])
    return starts


def fit_fd(model: str, samples, cfg: FitConfig) -> FitResult:
    """Minimize the configured loss over the model parameters.

    Runs Nelder-Mead from `cfg.multistart` seeded starts inside the bounds;
    points violating the bounds or the physical constraints are charged the
    best feasible loss seen so far plus a penalty proportional to the total
    violation. Deterministic given seed, config, and sample order.
    """
    if len(samples) == 0:
        raise ValueError("need at least one sample")

    omega = None
    if cfg.loss == LOSS_LSE:
        k, v = lkv_arrays(samples)

        def clean_loss(params: FdParams) -> float:
            try:
                resid = v - fd_speed(params, k)
            except FdDomainError:
                return math.inf
            return _ordered_sum(resid * resid) / len(k)
    else:
        k, v, y = nlkv_arrays(samples)
        if cfg.loss == LOSS_ECE:
            omega = compute_omega(samples)

            def clean_loss(params: FdParams, _w=omega) -> float:
                try:
                    return _ordered_sum(_ece_terms(params, k, v, y, _w)) / len(k)
                except FdDomainError:
                    return math.inf
        else:

            def clean_loss(params: FdParams) -> float:
                try:
                    z = v - fd_speed(params, k)
                except FdDomainError:
                    return math.inf
                return _ordered_sum(np.where(y == 1, softplus_stable(-z), softplus_stable(z)))

    k_max_observed = float(k.max())
    bounds = dict(default_bounds(model, k_max_observed))
    bounds.update({name: tuple(b) for name, b in cfg.bounds.items() if name in PARAM_ORDER[model]})
    names = PARAM_ORDER[model]

    state = {"best": math.inf}

    def objective(vec: np.ndarray) -> float:
        violation = 0.0
        for x, name in zip(vec, names):
            lo, hi = bounds[name]
            violation += max(0.0, lo - x) + max(0.0, x - hi)
        params = None
        if all(np.isfinite(vec)):
            params = FdParams.from_vector(model, vec)
            violation += sum(viol.amount for viol in validate_params(params, k_max_observed))
        else:
            violation += 1.0
        if violation > 0.0:
            base = state["best"] if math.isfinite(state["best"]) else 1e9
            return base + cfg.penalty * violation
        value = clean_loss(params)
        if value < state["best"]:
            state["best"] = value
        return value

    rng = np.random.default_rng(cfg.seed)
    starts = _sample_starts(model, bounds, cfg.multistart, rng)

    candidates = []
    fallback = None
    for x0 in starts:
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"maxiter": cfg.max_iter, "fatol": cfg.fatol,
                                "xatol": cfg.xatol})
        params = FdParams.from_vector(model, res.x)
        feasible = not validate_params(params, k_max_observed) and all(
            bounds[name][0] <= x <= bounds[name][1] for x, name in zip(res.x, names))
        value = clean_loss(params) if feasible else math.inf
        entry = (value, tuple(res.x), int(res.nit), bool(res.success), params)
        if math.isfinite(value):
            candidates.append(entry)
        elif fallback is None or entry[:2] < fallback[:2]:
            fallback = entry

    if candidates:
        value, _, nit, success, params = min(candidates, key=lambda e: (e[0], e[1]))
        converged = success
    else:
        value, _, nit, success, params = fallback
        converged = False
        logger.warning("no start converged to a feasible point for %s/%s", model, cfg.loss)

    return FitResult(params=params, loss_value=value, loss=cfg.loss, iterations=nit,
                     converged=converged, m=len(samples), omega=omega, seed=cfg.seed,
                     multistart=cfg.multistart, bounds=bounds)
