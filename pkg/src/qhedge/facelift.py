"""Exercise-date operator: convex envelope in p of max(value, payoff 1_{p>0}).

For a convex slice v with v(0) = 0 and an obstacle level g > 0, the
envelope is the chord from the origin through the crossing point
(p_g, g) followed by v itself, i.e. max(v, q_g * p) with q_g = g / p_g.
When the slice never reaches g, the crossing clamps to p_g = 1 and the
envelope is the full chord g * p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .errors import ConvexityError, DomainError, UsageError

CROSSING_TOL = 1e-10


@njit(cache=True)
def _envelope_one(p, v, out):
    n = p.size
    hull = np.empty(n, np.int64)
    m = 0
    for j in range(n):
        while m >= 2:
            j1 = hull[m - 2]
            j2 = hull[m - 1]
            if (v[j2] - v[j1]) * (p[j] - p[j2]) >= (v[j] - v[j2]) * (p[j2] - p[j1]):
                m -= 1
            else:
                break
        hull[m] = j
        m += 1
    k = 0
    for j in range(n):
        while k + 1 < m and hull[k + 1] <= j:
            k += 1
        if hull[k] == j:
            out[j] = v[j]
        else:
            j1 = hull[k]
            j2 = hull[k + 1]
            w = (p[j] - p[j1]) / (p[j2] - p[j1])
            out[j] = (1.0 - w) * v[j1] + w * v[j2]


@njit(cache=True, parallel=True)
def _envelope_rows(p, V, out):
    for i in prange(V.shape[0]):
        _envelope_one(p, V[i], out[i])


def lower_convex_envelope(p_nodes, values) -> np.ndarray:
    """Greatest convex function below the nodal values, evaluated at the
    nodes (monotone-chain lower hull)."""
    p = np.asarray(p_nodes, dtype=float)
    v = np.asarray(values, dtype=float)
    if p.shape != v.shape or p.ndim != 1:
        raise UsageError("p_nodes and values must be 1-d arrays of equal length")
    if not np.all(np.isfinite(v)):
        raise DomainError("values must be finite")
    if np.any(np.diff(p) <= 0.0):
        raise UsageError("p_nodes must be strictly increasing")
    out = np.empty_like(v)
    _envelope_one(p, v, out)
    return out


def lower_convex_envelope_rows(p_nodes, values) -> np.ndarray:
    """Row-wise envelope of a (n_rows, n_p) array (compiled, parallel)."""
    p = np.asarray(p_nodes, dtype=float)
    V = np.ascontiguousarray(values, dtype=float)
    out = np.empty_like(V)
    _envelope_rows(p, V, out)
    return out


def convexity_violation(p_nodes, values) -> float:
    """Largest amount (raw units) by which an interior node exceeds the
    chord of its neighbours; <= 0 for convex data."""
    p = np.asarray(p_nodes, dtype=float)
    v = np.asarray(values, dtype=float)
    if p.size < 3:
        return 0.0
    w = (p[1:-1] - p[:-2]) / (p[2:] - p[:-2])
    chord = (1.0 - w) * v[:-2] + w * v[2:]
    return float(np.max(v[1:-1] - chord))


@dataclass(frozen=True)
class SliceFacelift:
    p_g: float
    q_g: float
    lifted: np.ndarray


def facelift_slice(p_nodes, v_slice, g_val: float,
                   convexity_tol: float = 1e-6) -> SliceFacelift:
    """Lift one p-slice over the obstacle ``g_val * 1_{p>0}``.

    ``p_g`` is the largest probability at which the slice still sits at or
    below the obstacle (linear interpolation between bracketing nodes,
    clamped to 1 when the slice never reaches it); ``q_g = g / p_g``; the
    lifted slice is ``max(v, q_g p)`` nodewise, which for convex input with
    v(0) = 0 equals the convex envelope of the obstacle problem.
    """
    p = np.asarray(p_nodes, dtype=float)
    v = np.asarray(v_slice, dtype=float)
    if p.shape != v.shape or p.ndim != 1:
        raise UsageError("p_nodes and v_slice must be 1-d arrays of equal length")
    if g_val < 0.0:
        raise DomainError("obstacle level must be non-negative")
    viol = convexity_violation(p, v)
    if viol > convexity_tol:
        raise ConvexityError(f"input slice is non-convex (violation {viol:.3e} > {convexity_tol:.1e})")
    if g_val == 0.0:
        tol = CROSSING_TOL
        at_zero = np.nonzero(v <= tol)[0]
        p_g = float(p[at_zero[-1]]) if at_zero.size else 0.0
        return SliceFacelift(p_g=p_g, q_g=0.0, lifted=v.copy())
    if v[0] > max(1e-9, 1e-9 * g_val):
        raise ConvexityError(f"slice must vanish at p = 0 (v[0] = {v[0]:.3e})")
    if v[-1] <= g_val + CROSSING_TOL:
        p_g = 1.0
        q_g = g_val
    else:
        below = np.nonzero(v <= g_val + CROSSING_TOL)[0]
        j = int(below[-1])
        dv = v[j + 1] - v[j]
        frac = (g_val - v[j]) / dv if dv > 0.0 else 1.0
        p_g = float(p[j] + np.clip(frac, 0.0, 1.0) * (p[j + 1] - p[j]))
        q_g = g_val / p_g if p_g > 0.0 else 0.0
    lifted = np.maximum(v, q_g * p)
    return SliceFacelift(p_g=p_g, q_g=q_g, lifted=lifted)


@dataclass(frozen=True)
class FaceliftData:
    """Per-x-node facelift data at one exercise date."""

    time: float
    x_nodes: np.ndarray
    p_g: np.ndarray
    q_g: np.ndarray
    lifted: np.ndarray  # (n_x, n_p)

    def to_csv_rows(self):
        for xv, pg, qg in zip(self.x_nodes, self.p_g, self.q_g):
            yield f"{xv:.17g},{pg:.17g},{qg:.17g}"


def facelift_surface(p_nodes, values, g_row, time: float, x_nodes,
                     convexity_tol: float = 1e-6) -> FaceliftData:
    """Apply :func:`facelift_slice` to every x-row of a surface."""
    values = np.asarray(values, dtype=float)
    g_row = np.asarray(g_row, dtype=float)
    n_x = values.shape[0]
    if g_row.shape != (n_x,):
        raise UsageError("payoff row and surface row count differ")
    p_g = np.empty(n_x)
    q_g = np.empty(n_x)
    lifted = np.empty_like(values)
    for i in range(n_x):
        res = facelift_slice(p_nodes, values[i], float(g_row[i]),
                             convexity_tol=convexity_tol)
        p_g[i] = res.p_g
        q_g[i] = res.q_g
        lifted[i] = res.lifted
    return FaceliftData(time=time, x_nodes=np.asarray(x_nodes, dtype=float),
                        p_g=p_g, q_g=q_g, lifted=lifted)
