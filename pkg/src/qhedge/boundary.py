"""Boundary data for the probability axis: the p = 0 row is identically
zero and the p = 1 row is the super-replication price of the Bermudan
claim, solved here as a one-dimensional obstacle PDE on the same x-axis
and time mesh as the main solver."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalAbort, UsageError
from .model import ExerciseSchedule, MarketModel
from .scheme import Grid2D, ValueSurface


def time_mesh(schedule: ExerciseSchedule, dt: float):
    """Global backward time mesh: each interval [t_{i-1}, t_i] is split
    into round(len/dt) uniform steps.  Returns (times, exercise_index)
    where exercise_index marks the positions of the t_i (i >= 1)."""
    times = [0.0]
    ex_idx = []
    for a, b in zip(schedule.dates, schedule.dates[1:]):
        n = max(1, int(round((b - a) / dt)))
        seg = a + (b - a) * np.arange(1, n + 1) / n
        times.extend(seg.tolist())
        ex_idx.append(len(times) - 1)
    return np.array(times), ex_idx


@dataclass(frozen=True)
class BoundaryData:
    """Super-replication price per time layer (unshifted units).

    ``vbar[k]`` is the value at ``times[k]`` seen from the left: at
    exercise dates it includes the exercise max, so it is the correct
    p = 1 row for every step of the backward induction.  ``continuation``
    holds the pre-exercise rows at the exercise dates."""

    times: np.ndarray
    vbar: np.ndarray  # (n_times, n_x)
    continuation: dict

    def layer_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise UsageError(f"no boundary layer at t = {t}")
        return k

    def row(self, t: float) -> np.ndarray:
        return self.vbar[self.layer_index(t)]


def _vbar_step(w, dt, hx, sig, off, frac, model, t, x):
    """One backward step of the pricing PDE in x only (the a = 0
    direction of the 2-D scheme)."""
    n = w.size
    idx = np.arange(n)

    def val(o):
        r0 = np.clip(idx + o + off, 0, n - 1)
        r1 = np.clip(idx + o + off + 1, 0, n - 1)
        return (1.0 - frac) * w[r0] + frac * w[r1]

    kap = dt * sig * sig / (hx * hx)
    c = val(0)
    vp = val(1)
    vm = val(-1)
    cand = (1.0 - kap) * c + 0.5 * kap * (vp + vm)
    ups = (vp - vm) / (2.0 * hx)  # = x w_x
    cand = cand - dt * model.residual_drift(t, x, cand, ups)
    return np.maximum(cand, 0.0)


def solve_vbar(model: MarketModel, schedule: ExerciseSchedule, grid: Grid2D,
               dt: float | None = None) -> BoundaryData:
    """Backward solve of the one-dimensional super-replication PDE with
    terminal value zero (continuation convention) and the exercise max
    applied at every date.  ``model`` may be a shifted model; the returned
    data is always unshifted."""
    dt = grid.dt if dt is None else float(dt)
    x = grid.x_nodes
    hx = grid.h_logx
    sig = np.asarray(model.sigma(x), dtype=float)
    kap_max = dt * float(np.max(sig * sig)) / (hx * hx)
    if kap_max > 1.0 + 1e-12:
        raise ConfigurationError(
            f"vbar time step violates dt*sigma^2/h^2 <= 1 (got {kap_max:.3f})")
    zeta = np.asarray(model.premium(x), dtype=float)
    mu = np.asarray(model.mu(x), dtype=float)
    lam = model.shift_lambda

    times, ex_idx = time_mesh(schedule, dt)
    n_t = times.size
    vbar = np.empty((n_t, x.size))
    continuation = {}
    w = np.zeros(x.size)  # shifted value; terminal continuation is 0
    ex_set = set(ex_idx)
    vbar[n_t - 1] = w  # overwritten below after the exercise max at T
    for k in range(n_t - 1, -1, -1):
        t_k = times[k]
        if k in ex_set:
            continuation[float(t_k)] = w * math.exp(-lam * t_k)
            g_row = np.asarray(schedule.payoff(t_k, x), dtype=float)
            w = np.maximum(w, math.exp(lam * t_k) * g_row)
        vbar[k] = w * math.exp(-lam * t_k)
        if k > 0:
            dt_k = times[k] - times[k - 1]
            b_lx = dt_k * (mu - zeta * sig - 0.5 * sig * sig)
            off = np.floor(b_lx / hx).astype(np.int64)
            frac = b_lx / hx - off
            w = _vbar_step(w, dt_k, hx, sig, off, frac, model, times[k - 1], x)
            if not np.all(np.isfinite(w)):
                raise NumericalAbort("vbar solve produced NaN/inf", layer=k - 1)
    return BoundaryData(times=times, vbar=vbar, continuation=continuation)


def apply_p_boundaries(surface: ValueSurface, bdata: BoundaryData,
                       t: float) -> ValueSurface:
    """Impose the Dirichlet rows: p = 0 is zero, p = 1 is the
    super-replication price at time t (unshifted units on both sides)."""
    row = bdata.row(t)
    v = surface.values.copy()
    v[:, 0] = 0.0
    v[:, -1] = row
    return ValueSurface(grid=surface.grid, values=v, time_label=t)


def growth_fit(bdata: BoundaryData, x_nodes: np.ndarray, k: float = 2.0) -> float:
    """Smallest beta with vbar <= beta (1 + |x|^k) over all layers."""
    denom = 1.0 + np.abs(x_nodes) ** k
    return float(np.max(bdata.vbar / denom[None, :]))
