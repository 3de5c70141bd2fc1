"""Monotone lattice-direction scheme for the controlled-loss target PDE.

One backward step on a rectangular grid, log-uniform in x and uniform in
p (dimension one in x).  For each hedge-intensity control the generator is
a rank-one diffusion along ``(sigma, a)`` in (log x, p) coordinates; it is
discretized along integer lattice directions ``(i, j)`` so that the
displaced points fall exactly on grid nodes: second moments and the
x-p cross moment are then exact and every candidate is a convex
combination of nodal values (unconditionally monotone under the CFL
bound ``dt sigma^2 / h_lx^2 <= i^2``).

Drift terms enter as base-point shifts: the risk premium cancels the
physical drift of the factor leaving the log drift
``(mu - zeta sigma - sigma^2/2) dt``, and the premium earned on the
probability leg becomes a p-shift ``-zeta a_eff dt``.  What remains of the
wealth drift (rates, borrowing spread, monotonising shift) is evaluated
explicitly from the quadrature average and the directional derivative.

The degenerate equator branch of the sphere supremum carries no time
derivative; it is enforced as a convex-envelope projection in p after the
step (see :func:`convexify_in_p`), not as an evolution candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from .errors import ConfigurationError, DomainError, NumericalAbort, UsageError
from .facelift import lower_convex_envelope_rows
from .hamiltonian import ControlGrid
from .model import CustomDrift, LinearPricing, MarketModel, TwoRate, ZeroDrift


# ----------------------------------------------------------------------
# grid and surfaces
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Grid2D:
    """Log-uniform x nodes, uniform p nodes on [0, 1], and a time step."""

    x_nodes: np.ndarray
    p_nodes: np.ndarray
    dt: float

    def __post_init__(self):
        x = np.asarray(self.x_nodes, dtype=float)
        p = np.asarray(self.p_nodes, dtype=float)
        object.__setattr__(self, "x_nodes", x)
        object.__setattr__(self, "p_nodes", p)
        if x.ndim != 1 or x.size < 3 or np.any(np.diff(x) <= 0.0) or np.any(x <= 0.0):
            raise UsageError("x_nodes must be >= 3 strictly increasing positive reals")
        lx = np.log(x)
        h = np.diff(lx)
        if np.max(np.abs(h - h[0])) > 1e-9 * abs(h[0]):
            raise UsageError("x_nodes must be uniform in log x")
        if p.ndim != 1 or p.size < 3 or np.any(np.diff(p) <= 0.0):
            raise UsageError("p_nodes must be >= 3 strictly increasing reals")
        if p[0] != 0.0 or p[-1] != 1.0:
            raise UsageError("p_nodes must start at 0 and end at 1")
        hp = np.diff(p)
        if np.max(np.abs(hp - hp[0])) > 1e-9 * hp[0]:
            raise UsageError("p_nodes must be uniform")
        if self.dt <= 0.0:
            raise UsageError("dt must be positive")

    @classmethod
    def make(cls, x_center: float, half_width_log: float, n_x: int, n_p: int, dt: float):
        lx = np.linspace(math.log(x_center) - half_width_log,
                         math.log(x_center) + half_width_log, n_x)
        return cls(x_nodes=np.exp(lx), p_nodes=np.linspace(0.0, 1.0, n_p), dt=dt)

    @property
    def h_logx(self):
        return float(np.log(self.x_nodes[1]) - np.log(self.x_nodes[0]))

    @property
    def h_p(self):
        return float(self.p_nodes[1] - self.p_nodes[0])

    @property
    def n_x(self):
        return self.x_nodes.size

    @property
    def n_p(self):
        return self.p_nodes.size


@dataclass(frozen=True)
class ValueSurface:
    """Values on a Grid2D at one time; finite and non-negative."""

    grid: Grid2D
    values: np.ndarray
    time_label: float

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n_x, self.grid.n_p):
            raise UsageError(f"values must have shape {(self.grid.n_x, self.grid.n_p)}")
        if not np.all(np.isfinite(v)):
            raise NumericalAbort("surface contains NaN/inf", layer=self.time_label)
        if np.min(v) < 0.0:
            raise NumericalAbort("surface contains negative values", layer=self.time_label)


def interpolate(surface: ValueSurface, x, p):
    """Clamped bilinear interpolation (queries outside the hull are moved
    to the nearest face)."""
    g = surface.grid
    xq = np.asarray(x, dtype=float)
    pq = np.asarray(p, dtype=float)
    ix = np.clip(np.searchsorted(g.x_nodes, xq) - 1, 0, g.n_x - 2)
    tx = np.clip((xq - g.x_nodes[ix]) / (g.x_nodes[ix + 1] - g.x_nodes[ix]), 0.0, 1.0)
    jp = np.clip(np.searchsorted(g.p_nodes, pq) - 1, 0, g.n_p - 2)
    tp = np.clip((pq - g.p_nodes[jp]) / (g.p_nodes[jp + 1] - g.p_nodes[jp]), 0.0, 1.0)
    v = surface.values
    v00 = v[ix, jp]
    v01 = v[ix, jp + 1]
    v10 = v[ix + 1, jp]
    v11 = v[ix + 1, jp + 1]
    out = (1 - tx) * ((1 - tp) * v00 + tp * v01) + tx * ((1 - tp) * v10 + tp * v11)
    return out if out.ndim else float(out)


# ----------------------------------------------------------------------
# lattice direction fans
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionFan:
    """Integer lattice directions (i, j): i x-cells and j p-cells.

    ``i = 1`` covers slopes j in 0..j_linear plus a geometric tail up to
    the slope matching ``a_max``; denominators up to ``i_max`` refine the
    small-slope fan.  The realised hedge intensity at a node is
    ``a = sigma(x) * j h_p / (i h_lx)``.
    """

    a_max: float = 20.0
    i_max: int = 6
    j_linear: int = 16

    def directions(self, grid: Grid2D, sigma_min: float) -> np.ndarray:
        hx, hp = grid.h_logx, grid.h_p
        j_cap_grid = grid.n_p - 2
        j_cap_a = int(math.ceil(self.a_max * hx / (max(sigma_min, 1e-12) * hp)))
        dirs = set()
        jmax1 = min(j_cap_grid, j_cap_a)
        for j in range(0, min(self.j_linear, jmax1) + 1):
            dirs.add((1, j))
        j = self.j_linear
        while j < jmax1:
            j = min(int(math.ceil(j * 1.25)), jmax1)
            dirs.add((1, j))
        for i in range(2, self.i_max + 1):
            for j in range(1, 4 * i):
                f = Fraction(j, i)
                if f.denominator == i:
                    dirs.add((i, j))
        return np.array(sorted(dirs), dtype=np.int64)

    @classmethod
    def from_control_grid(cls, a_grid: ControlGrid, i_max: int = 6, j_linear: int = 16):
        return cls(a_max=a_grid.a_max, i_max=i_max, j_linear=j_linear)


# ----------------------------------------------------------------------
# stability audit
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CflReport:
    dt: float
    dt_max_diffusion: float
    dt_max_drift: float
    dt_max_source: float

    @property
    def dt_max(self):
        return min(self.dt_max_diffusion, self.dt_max_drift, self.dt_max_source)

    @property
    def margin(self):
        return self.dt_max / self.dt


def audit_time_step(model: MarketModel, grid: Grid2D, fan: DirectionFan,
                    dt: float | None = None) -> CflReport:
    """Monotonicity bounds for the explicit step.

    * diffusion: ``dt sigma^2 <= h_lx^2`` so the center weight stays >= 0;
    * drift:     ``dt |zeta| a_max <= h_p`` so the premium p-shift stays
      within the one-cell margin reserved next to the feet;
    * source:    ``dt * (y-slope of the residual drift) <= 1/2`` and the
      directional-slope condition for the residual term.
    """
    dt = grid.dt if dt is None else float(dt)
    x = grid.x_nodes
    sig = np.asarray(model.sigma(x), dtype=float)
    sig_max = float(np.max(np.abs(sig)))
    zeta_max = float(np.max(np.abs(model.premium(x))))
    hx = grid.h_logx
    hp = grid.h_p
    dt_diff = hx * hx / (sig_max * sig_max) if sig_max > 0 else math.inf
    dt_drift = hp / (zeta_max * fan.a_max) if zeta_max * fan.a_max > 0 else math.inf
    ys = model.y_slope_bound()
    us = model.residual_ups_slope_bound()
    dt_src = math.inf
    if ys > 0:
        dt_src = min(dt_src, 0.5 / ys)
    if us > 0:
        # residual directional slope: dt * us * Lambda <= sqrt(dt) i h_lx-scale bound
        dt_src = min(dt_src, (hx / (us * model.bound_Lambda)) ** 2 if us * model.bound_Lambda > 0 else math.inf)
    rep = CflReport(dt=dt, dt_max_diffusion=dt_diff, dt_max_drift=dt_drift,
                    dt_max_source=dt_src)
    return rep


def require_stable(model: MarketModel, grid: Grid2D, fan: DirectionFan,
                   dt: float | None = None) -> CflReport:
    rep = audit_time_step(model, grid, fan, dt)
    if rep.dt > rep.dt_max * (1.0 + 1e-12):
        raise ConfigurationError(
            f"time step {rep.dt:.3e} violates the monotonicity bound "
            f"{rep.dt_max:.3e} (diffusion {rep.dt_max_diffusion:.3e}, "
            f"drift {rep.dt_max_drift:.3e}, source {rep.dt_max_source:.3e})")
    return rep


# ----------------------------------------------------------------------
# the step kernel
# ----------------------------------------------------------------------

# residual drift kinds understood by the compiled kernel
_KIND_NONE = 0      # no residual source (zero drift / zero-rate linear)
_KIND_LINEAR = 1    # (rate + lam) * ybar
_KIND_TWORATE = 2   # (r + lam) * ybar - (R - r) * max(ups - ybar, 0)


@njit(cache=True)
def _step_kernel(V, out, abest, dirs, hx, hp, dt,
                 sig, zeta, base_off, base_frac,
                 kind, c_y, c_spread, clip_count):
    n_x, n_p = V.shape
    n_dir = dirs.shape[0]
    for ix in range(n_x):
        kap1 = dt * sig[ix] * sig[ix] / (hx * hx)
        zeta_x = zeta[ix]
        ob = base_off[ix]
        wb = base_frac[ix]
        for jp in range(1, n_p - 1):
            dist = jp if jp <= n_p - 1 - jp else n_p - 1 - jp
            best = 1e300
            best_a = 0.0
            for kd in range(n_dir):
                i = dirs[kd, 0]
                j = dirs[kd, 1]
                n_sign = 1 if j == 0 else 2
                for ks in range(n_sign):
                    sgn = 1.0 if ks == 0 else -1.0
                    je0 = j
                    cap = dist - 1
                    if cap < 0:
                        cap = 0
                    if je0 > cap:
                        je0 = cap
                    a_eff = sig[ix] * (je0 * hp) / (i * hx) * sgn
                    kap = kap1 / (i * i)
                    bp = -dt * zeta_x * a_eff
                    pos = (jp * hp + bp) / hp
                    if pos < 0.0:
                        pos = 0.0
                    if pos > n_p - 1.0:
                        pos = n_p - 1.0
                    j0 = int(pos)
                    if j0 > n_p - 2:
                        j0 = n_p - 2
                    wp = pos - j0
                    je = je0
                    if je > j0:
                        je = j0
                    if je > n_p - 2 - j0:
                        je = n_p - 2 - j0
                    if je < je0:
                        a_eff = sig[ix] * (je * hp) / (i * hx) * sgn
                    sje = int(sgn) * je
                    jup = j0 + sje
                    jdn = j0 - sje
                    # x rows: base, +i, -i with the drift blend
                    r0 = ix + ob
                    if r0 < 0:
                        r0 = 0
                    if r0 > n_x - 1:
                        r0 = n_x - 1
                    r1 = ix + ob + 1
                    if r1 < 0:
                        r1 = 0
                    if r1 > n_x - 1:
                        r1 = n_x - 1
                    ru0 = ix + i + ob
                    if ru0 < 0:
                        ru0 = 0
                    if ru0 > n_x - 1:
                        ru0 = n_x - 1
                    ru1 = ix + i + ob + 1
                    if ru1 < 0:
                        ru1 = 0
                    if ru1 > n_x - 1:
                        ru1 = n_x - 1
                    rd0 = ix - i + ob
                    if rd0 < 0:
                        rd0 = 0
                    if rd0 > n_x - 1:
                        rd0 = n_x - 1
                    rd1 = ix - i + ob + 1
                    if rd1 < 0:
                        rd1 = 0
                    if rd1 > n_x - 1:
                        rd1 = n_x - 1
                    c = (1.0 - wb) * ((1.0 - wp) * V[r0, j0] + wp * V[r0, j0 + 1]) \
                        + wb * ((1.0 - wp) * V[r1, j0] + wp * V[r1, j0 + 1])
                    vp = (1.0 - wb) * ((1.0 - wp) * V[ru0, jup] + wp * V[ru0, jup + 1]) \
                        + wb * ((1.0 - wp) * V[ru1, jup] + wp * V[ru1, jup + 1])
                    vm = (1.0 - wb) * ((1.0 - wp) * V[rd0, jdn] + wp * V[rd0, jdn + 1]) \
                        + wb * ((1.0 - wp) * V[rd1, jdn] + wp * V[rd1, jdn + 1])
                    cand = (1.0 - kap) * c + 0.5 * kap * (vp + vm)
                    if kind != _KIND_NONE:
                        ybar = cand
                        cand = cand - dt * c_y * ybar
                        if kind == _KIND_TWORATE:
                            # ups = x v_x + (a/sigma) v_p, exactly the
                            # directional difference over the x-span
                            ups = (vp - vm) / (2.0 * i * hx)
                            short = ups - ybar
                            if short > 0.0:
                                cand = cand + dt * c_spread * short
                    if cand < best:
                        best = cand
                        best_a = a_eff
            if best < 0.0:
                clip_count[ix] += 1
                best = 0.0
            out[ix, jp] = best
            abest[ix, jp] = best_a


def _python_step(V, out, abest, dirs, grid, dt, sig, zeta, base_off, base_frac,
                 residual, t, x_nodes, clip_counter):
    """Reference implementation used for custom drifts (vectorised numpy)."""
    n_x, n_p = V.shape
    hx, hp = grid.h_logx, grid.h_p
    jj = np.arange(n_p)
    dist = np.minimum(jj, n_p - 1 - jj)
    idx = np.arange(n_x)

    def xrow(off_int):
        r0 = np.clip(idx + off_int + base_off, 0, n_x - 1)
        r1 = np.clip(idx + off_int + base_off + 1, 0, n_x - 1)
        return r0, r1

    best = np.full((n_x, n_p), np.inf)
    best_a = np.zeros((n_x, n_p))
    kap1 = dt * sig * sig / (hx * hx)
    for (i, j) in dirs:
        i = int(i); j = int(j)
        rows = {}
        for off in (0, i, -i):
            rows[off] = xrow(off)
        for sgn in ((1.0,) if j == 0 else (1.0, -1.0)):
            je0 = np.minimum(j, np.maximum(dist - 1, 0))
            a_eff = sig[:, None] * (je0[None, :] * hp) / (i * hx) * sgn
            kap = (kap1 / (i * i))[:, None]
            bp = -dt * zeta[:, None] * a_eff
            pos = np.clip((jj[None, :] * hp + bp) / hp, 0.0, n_p - 1.0)
            j0 = np.minimum(pos.astype(np.int64), n_p - 2)
            wp = pos - j0
            je = np.minimum(np.minimum(je0[None, :], j0), n_p - 2 - j0)
            a_eff = sig[:, None] * (je * hp) / (i * hx) * sgn
            sje = (np.rint(sgn).astype(np.int64)) * je
            jup = j0 + sje
            jdn = j0 - sje

            def sample(off, cols):
                r0, r1 = rows[off]
                w = base_frac[:, None]
                return (1.0 - w) * ((1.0 - wp) * V[r0[:, None], cols] + wp * V[r0[:, None], cols + 1]) \
                    + w * ((1.0 - wp) * V[r1[:, None], cols] + wp * V[r1[:, None], cols + 1])

            c = sample(0, j0)
            vp = sample(i, jup)
            vm = sample(-i, jdn)
            cand = (1.0 - kap) * c + 0.5 * kap * (vp + vm)
            if residual is not None:
                ybar = cand
                ups = (vp - vm) / (2.0 * i * hx)  # = x v_x + (a/sigma) v_p
                cand = cand - dt * residual(t, x_nodes[:, None], ybar, ups)
            mask = cand < best
            best = np.where(mask, cand, best)
            best_a = np.where(mask, a_eff, best_a)
    clip_counter[0] += int(np.sum(best[:, 1:-1] < 0.0))
    out[:, 1:-1] = np.maximum(best[:, 1:-1], 0.0)
    abest[:, 1:-1] = best_a[:, 1:-1]


@dataclass
class StepStats:
    clip_count: int
    argmin_a: np.ndarray


def _drift_data(model: MarketModel, grid: Grid2D, dt: float):
    x = grid.x_nodes
    hx = grid.h_logx
    mu = np.asarray(model.mu(x), dtype=float)
    sig = np.asarray(model.sigma(x), dtype=float)
    zeta = np.asarray(model.premium(x), dtype=float)
    b_lx = dt * (mu - zeta * sig - 0.5 * sig * sig)
    off = np.floor(b_lx / hx).astype(np.int64)
    frac = b_lx / hx - off
    return sig, zeta, off, frac


def _residual_kind(model: MarketModel):
    m = model.mode
    lam = model.shift_lambda
    if isinstance(m, ZeroDrift):
        return (_KIND_NONE, 0.0, 0.0) if lam == 0.0 else (_KIND_LINEAR, lam, 0.0)
    if isinstance(m, LinearPricing):
        cy = m.rate + lam
        return (_KIND_NONE, 0.0, 0.0) if cy == 0.0 else (_KIND_LINEAR, cy, 0.0)
    if isinstance(m, TwoRate):
        return (_KIND_TWORATE, m.r + lam, m.R - m.r)
    return (None, 0.0, 0.0)  # custom: python path


def step(next_surface: ValueSurface, t: float, model: MarketModel,
         fan: DirectionFan, dt: float | None = None,
         check_cfl: bool = True) -> tuple[ValueSurface, StepStats]:
    """One explicit backward step from ``next_surface`` (time t + dt) to
    time ``t``.  The p-boundary rows are copied through untouched; the
    caller owns them.  Returns the new surface and per-step statistics
    (clip count, nodewise minimising control)."""
    grid = next_surface.grid
    dt = grid.dt if dt is None else float(dt)
    if model.dim != 1:
        raise UsageError("the grid scheme supports dim == 1 only")
    if check_cfl:
        require_stable(model, grid, fan, dt)
    V = next_surface.values
    sig, zeta, off, frac = _drift_data(model, grid, dt)
    dirs = fan.directions(grid, float(np.min(np.abs(sig))))
    out = V.copy()
    abest = np.zeros_like(V)
    kind, c_y, c_spread = _residual_kind(model)
    if kind is None:
        clip_counter = [0]
        _python_step(V, out, abest, dirs, grid, dt, sig, zeta, off, frac,
                     model.residual_drift, t, grid.x_nodes, clip_counter)
        clip = clip_counter[0]
    else:
        clip_count = np.zeros(grid.n_x, dtype=np.int64)
        _step_kernel(V, out, abest, dirs, grid.h_logx, grid.h_p, dt,
                     sig, zeta, off, frac, kind, c_y, c_spread, clip_count)
        clip = int(np.sum(clip_count))
    surf = ValueSurface(grid=grid, values=out, time_label=t)
    return surf, StepStats(clip_count=clip, argmin_a=abest)


def convexify_in_p(surface: ValueSurface) -> ValueSurface:
    """Degenerate-branch projection: replace every x-row by its lower
    convex envelope in p (endpoint rows are hull vertices and unchanged)."""
    env = lower_convex_envelope_rows(surface.grid.p_nodes, surface.values)
    return ValueSurface(grid=surface.grid, values=env, time_label=surface.time_label)
