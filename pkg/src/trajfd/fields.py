"""Sliding-grid discretization and macroscopic field estimation.

The space-time domain is covered by overlapping rectangular subdomains of
size dx x dt whose anchors advance in steps of xs and ts. Per-subdomain
density is total vehicle-time divided by the subdomain area and speed is
total vehicle-distance divided by vehicle-time, computed exactly from the
piecewise-linear trajectory polylines.

All quantities here are SI: seconds, meters, m/s, veh/m, m/s^2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ingest import TrajectorySet, VehicleTrajectory

logger = logging.getLogger(__name__)

# Cells with less vehicle-time than this are treated as empty (guards 0/0).
EMPTY_TIME_TOL = 1e-6
# Slack for floor() on exact-boundary domain sizes.
_FLOOR_EPS = 1e-9

QUANTITY_SPEED = "speed_m_per_s"
QUANTITY_DENSITY = "density_veh_per_m"
QUANTITY_ACCELERATION = "acceleration_m_per_s2"
QUANTITY_ANTICIPATED_DENSITY = "anticipated_density_veh_per_m"


@dataclass(frozen=True)
class GridSpec:
    """Subdomain geometry: window sizes (dt, dx), sliding steps (ts, xs), and
    the anticipation transition time tm."""

    dt: float = 50.0
    dx: float = 300.0
    ts: float = 2.0
    xs: float = 3.0
    tm: float = 12.0

    def __post_init__(self):
        for name in ("dt", "dx", "ts", "xs", "tm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"GridSpec.{name} must be > 0")
        if self.ts > self.dt:
            raise ValueError("ts must not exceed dt")
        if self.xs > self.dx:
            raise ValueError("xs must not exceed dx")
        if self.tm < self.ts:
            raise ValueError("tm must be >= ts")

    @property
    def time_bins(self) -> int:
        """dt expressed in sliding steps; must be an integer multiple."""
        return _exact_ratio(self.dt, self.ts, "dt", "ts")

    @property
    def space_bins(self) -> int:
        return _exact_ratio(self.dx, self.xs, "dx", "xs")


def _exact_ratio(big: float, small: float, big_name: str, small_name: str) -> int:
    ratio = big / small
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * ratio:
        raise ValueError(
            f"{big_name} must be an integer multiple of {small_name} "
            f"for field estimation (got {big}/{small})")
    return n


@dataclass
class MacroField:
    """(I+1) x (J+1) grid of optional scalars; cell (i, j) is anchored at
    (t0 + i*ts, x0 + j*xs). Undefined cells hold NaN and defined=False."""

    values: np.ndarray
    defined: np.ndarray
    quantity: str
    spec: GridSpec
    t0: float = 0.0
    x0: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def max_i(self) -> int:
        return self.values.shape[0] - 1

    @property
    def max_j(self) -> int:
        return self.values.shape[1] - 1

    def cell_t0(self, i: int) -> float:
        return self.t0 + i * self.spec.ts

    def cell_x0(self, j: int) -> float:
        return self.x0 + j * self.spec.xs

    def n_defined(self) -> int:
        return int(self.defined.sum())


@dataclass
class SignField:
    """Acceleration-sign labels: 0 accelerating, 1 decelerating; defined only
    where the label is meaningful."""

    labels: np.ndarray
    defined: np.ndarray
    spec: GridSpec
    t0: float = 0.0
    x0: float = 0.0


def grid_dims(spec: GridSpec, T: float, X: float) -> tuple[int, int]:
    """Largest indices I, J such that every subdomain [i*ts, i*ts + dt] x
    [j*xs, j*xs + dx] for i <= I, j <= J fits inside [0, T] x [0, X]."""
    if T < spec.dt or X < spec.dx:
        raise ValueError(
            f"domain too small for grid: T={T} < dt={spec.dt} or X={X} < dx={spec.dx}")
    I = int(np.floor((T - spec.dt) / spec.ts + _FLOOR_EPS))
    J = int(np.floor((X - spec.dx) / spec.xs + _FLOOR_EPS))
    return I, J


def cell_contributions(traj: VehicleTrajectory, t_lo: float, t_hi: float,
                       x_lo: float, x_hi: float) -> tuple[float, float]:
    """Clip the trajectory polyline to one space-time rectangle and return the
    in-cell (distance, duration). Both are 0 when the trajectory misses it."""
    t = np.asarray(traj.times, dtype=float)
    x = np.asarray(traj.positions, dtype=float)
    t1, x1 = t[:-1], x[:-1]
    dt = np.diff(t)
    dx = np.diff(x)

    with np.errstate(divide="ignore", invalid="ignore"):
        s_lo_t = (t_lo - t1) / dt
        s_hi_t = (t_hi - t1) / dt
        sa = (x_lo - x1) / dx
        sb = (x_hi - x1) / dx
    s_lo_x = np.minimum(sa, sb)
    s_hi_x = np.maximum(sa, sb)
    flat = dx == 0.0
    inside = (x1 >= x_lo) & (x1 <= x_hi)
    s_lo_x = np.where(flat, np.where(inside, -np.inf, np.inf), s_lo_x)
    s_hi_x = np.where(flat, np.where(inside, np.inf, -np.inf), s_hi_x)

    u1 = np.maximum(np.maximum(s_lo_t, s_lo_x), 0.0)
    u2 = np.minimum(np.minimum(s_hi_t, s_hi_x), 1.0)
    span = np.maximum(u2 - u1, 0.0)
    return float(np.sum(span * dx)), float(np.sum(span * dt))


def _rasterize(trajectories, t0: float, x0: float, ts: float, xs: float,
               U: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate per-fine-bin vehicle-time and vehicle-distance by splitting
    every polyline at all fine-grid boundary crossings."""
    time_acc = np.zeros((U, W))
    dist_acc = np.zeros((U, W))
    t_span = U * ts
    x_span = W * xs
    for traj in trajectories:
        if traj.n_points < 2:
            continue
        rt = np.asarray(traj.times, dtype=float) - t0
        rx = np.asarray(traj.positions, dtype=float) - x0

        k_lo = np.ceil(rt[0] / ts)
        k_hi = np.floor(rt[-1] / ts)
        t_bounds = np.arange(k_lo, k_hi + 1) * ts if k_hi >= k_lo else np.empty(0)

        b_lo = np.ceil(rx[0] / xs)
        b_hi = np.floor(rx[-1] / xs)
        if b_hi >= b_lo:
            x_bounds = np.arange(b_lo, b_hi + 1) * xs
            x_cross = np.interp(x_bounds, rx, rt)
        else:
            x_cross = np.empty(0)

        events = np.unique(np.concatenate([rt, t_bounds, x_cross]))
        events = events[(events >= rt[0]) & (events <= rt[-1])]
        if len(events) < 2:
            continue
        pos = np.interp(events, rt, rx)

        dt_piece = np.diff(events)
        dx_piece = np.diff(pos)
        mid_t = (events[:-1] + events[1:]) / 2.0
        mid_x = (pos[:-1] + pos[1:]) / 2.0

        keep = (dt_piece > 0) & (mid_t >= 0) & (mid_t < t_span) & \
               (mid_x >= 0) & (mid_x < x_span)
        if not keep.any():
            continue
        u = np.floor(mid_t[keep] / ts).astype(np.intp)
        w = np.floor(mid_x[keep] / xs).astype(np.intp)
        np.add.at(time_acc, (u, w), dt_piece[keep])
        np.add.at(dist_acc, (u, w), dx_piece[keep])
    return time_acc, dist_acc


def _window_sums(fine: np.ndarray, p: int, q: int, I: int, J: int) -> np.ndarray:
    """Sum fine bins over every p x q window anchored at (i, j), via a
    summed-area table."""
    U, W = fine.shape
    c = np.zeros((U + 1, W + 1))
    c[1:, 1:] = fine.cumsum(axis=0).cumsum(axis=1)
    return (c[p:p + I + 1, q:q + J + 1] - c[:I + 1, q:q + J + 1]
            - c[p:p + I + 1, :J + 1] + c[:I + 1, :J + 1])


def estimate_vk_fields(tset: TrajectorySet, spec: GridSpec,
                       t0: float | None = None, x0: float | None = None,
                       T: float | None = None, X: float | None = None,
                       ) -> tuple[MacroField, MacroField]:
    """Estimate the speed and density fields over the sliding grid.

    The grid is anchored at (t0, x0), by default the set's own minima; pass
    explicit origins/extents to place several segments on one spatial grid.
    """
    t0 = tset.t_min if t0 is None else t0
    x0 = tset.x_min if x0 is None else x0
    T = (tset.t_max - t0) if T is None else T
    X = (tset.x_max - x0) if X is None else X
    I, J = grid_dims(spec, T, X)
    p = spec.time_bins
    q = spec.space_bins

    time_fine, dist_fine = _rasterize(tset.trajectories, t0, x0, spec.ts, spec.xs,
                                      I + p, J + q)
    total_time = _window_sums(time_fine, p, q, I, J)
    total_dist = _window_sums(dist_fine, p, q, I, J)

    defined = total_time >= EMPTY_TIME_TOL
    area = spec.dx * spec.dt
    k = np.full_like(total_time, np.nan)
    v = np.full_like(total_time, np.nan)
    k[defined] = total_time[defined] / area
    with np.errstate(invalid="ignore"):
        v[defined] = total_dist[defined] / total_time[defined]

    V = MacroField(v, defined.copy(), QUANTITY_SPEED, spec, t0, x0)
    K = MacroField(k, defined.copy(), QUANTITY_DENSITY, spec, t0, x0)
    return V, K


def estimate_acceleration_field(V: MacroField, spec: GridSpec) -> MacroField:
    """Forward-difference acceleration following the traffic: compare the cell
    one time step ahead and b = floor(v*ts/xs) space steps downstream."""
    shape = V.values.shape
    max_i, max_j = shape[0] - 1, shape[1] - 1
    a = np.full(shape, np.nan)
    defined = np.zeros(shape, dtype=bool)

    ii, jj = np.nonzero(V.defined[:-1, :]) if max_i >= 1 else (np.empty(0, np.intp),) * 2
    if len(ii):
        v_here = V.values[ii, jj]
        b = np.floor(v_here * spec.ts / spec.xs).astype(np.intp)
        j2 = jj + b
        ok = j2 <= max_j
        ii, jj, j2, v_here = ii[ok], jj[ok], j2[ok], v_here[ok]
        ok = V.defined[ii + 1, j2]
        ii, jj, j2, v_here = ii[ok], jj[ok], j2[ok], v_here[ok]
        a[ii, jj] = (V.values[ii + 1, j2] - v_here) / spec.ts
        defined[ii, jj] = True

    return MacroField(a, defined, QUANTITY_ACCELERATION, spec, V.t0, V.x0)


def label_signs(A: MacroField, zero_tol: float = 1e-9) -> SignField:
    """0 where acceleration is positive, 1 where negative; cells with
    |a| <= zero_tol or undefined acceleration carry no label."""
    labels = np.full(A.values.shape, -1, dtype=np.int8)
    with np.errstate(invalid="ignore"):
        pos = A.defined & (A.values > zero_tol)
        neg = A.defined & (A.values < -zero_tol)
    labels[pos] = 0
    labels[neg] = 1
    return SignField(labels, pos | neg, A.spec, A.t0, A.x0)
