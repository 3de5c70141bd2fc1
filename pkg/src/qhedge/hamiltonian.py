"""Renormalized Hamiltonian over sphere controls.

The unbounded hedge-intensity control ``a`` in R^d is compactified onto the
unit sphere of R^{d+1} via ``eta = (1, a) / sqrt(1 + |a|^2)``.  Off the
degenerate equator (first component zero) the operator value is
``(eta^1)^2 (-b + J^a)`` with ``a`` recovered by projection; on the equator
it is ``-A^pp / 2``, which is also the limit of the off-equator branch, so
the supremum over the sphere is continuous and attained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, UsageError
from .model import MarketModel, LinearPricing, ZeroDrift, lambda_shift  # noqa: F401  (re-export)

DEGENERATE_TOL = 1e-14
UNIT_TOL = 1e-12


@dataclass(frozen=True)
class SphereControl:
    """Point on the unit sphere of R^{d+1}."""

    eta: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.eta, dtype=float).reshape(-1)
        object.__setattr__(self, "eta", e)
        if abs(np.linalg.norm(e) - 1.0) > UNIT_TOL:
            raise UsageError(f"control must have unit norm, |eta| = {np.linalg.norm(e)}")

    @property
    def is_degenerate(self):
        """True on the equator {eta^1 = 0}, where the operator degenerates."""
        return abs(self.eta[0]) < DEGENERATE_TOL

    def project(self):
        """Recover the unbounded control a = (eta^2, ..., eta^{d+1}) / eta^1."""
        if self.is_degenerate:
            raise UsageError("degenerate controls have no finite projection")
        return self.eta[1:] / self.eta[0]


def lift(a) -> SphereControl:
    """Map a control a in R^d to the sphere: (1, a) / sqrt(1 + |a|^2)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise DomainError("control must be finite")
    r = 1.0 / math.sqrt(1.0 + float(a @ a))
    return SphereControl(np.concatenate(([r], r * a)))


def degenerate_controls(d: int):
    """Canonical equator points (0, +-e_i)."""
    out = []
    for i in range(d):
        for s in (1.0, -1.0):
            e = np.zeros(d + 1)
            e[i + 1] = s
            out.append(SphereControl(e))
    return out


@dataclass(frozen=True)
class OperatorPoint:
    """Evaluation point (t, x, y, b, q, A) with q = (q^x, q^p) in R^{d+1}
    and A symmetric of size d+1."""

    t: float
    x: np.ndarray
    y: float
    b: float
    q: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        A = np.asarray(self.A, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        d = x.size
        if np.any(x <= 0.0):
            raise DomainError("x must be strictly positive")
        if self.y < 0.0:
            raise DomainError("y must be non-negative")
        if q.size != d + 1:
            raise UsageError(f"q must have length d+1 = {d+1}")
        if A.shape != (d + 1, d + 1):
            raise UsageError(f"A must be ({d+1}, {d+1})")
        if np.max(np.abs(A - A.T)) > UNIT_TOL:
            raise UsageError("A must be symmetric to 1e-12")

    @property
    def dim(self):
        return self.x.size


def _mats(model: MarketModel, x: np.ndarray):
    """Coefficient matrices at x regardless of dim-1 scalar conventions."""
    if model.dim == 1:
        xv = float(x[0])
        mu = np.array([float(model.mu(xv))])
        sig = np.array([[float(model.sigma(xv))]])
        sig_inv = np.array([[float(model.sigma_inv(xv))]])
    else:
        mu = np.asarray(model.mu(x), dtype=float).reshape(-1)
        sig = np.asarray(model.sigma(x), dtype=float)
        sig_inv = np.asarray(model.sigma_inv(x), dtype=float)
    sigX = np.diag(x) @ sig
    muX = x * mu
    return mu, sig, sig_inv, sigX, muX


def _mu_y_at(model: MarketModel, t: float, x: np.ndarray, y: float, ups: np.ndarray):
    if model.dim == 1:
        return float(model.mu_Y(t, float(x[0]), y, float(ups[0])))
    return float(model.mu_Y(t, x, y, ups))


def eval_J(theta: OperatorPoint, model: MarketModel, a) -> float:
    """Drift-diffusion functional for the lifted control a:
    ``mu_hat_Y - mu_X' q^x - Tr[sbar sbar' A] / 2`` where the hedge is
    pinned by ``ups' sigma = q' sbar`` and ``sbar = (sigma_X; a')``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    d = theta.dim
    if a.size != d:
        raise UsageError(f"control must have dimension {d}")
    _, _, sig_inv, sigX, muX = _mats(model, theta.x)
    qx, qp = theta.q[:d], float(theta.q[d])
    Axx = theta.A[:d, :d]
    Axp = theta.A[:d, d]
    App = float(theta.A[d, d])
    ups = sig_inv.T @ (sigX.T @ qx + a * qp)
    mu_hat = _mu_y_at(model, theta.t, theta.x, theta.y, ups)
    trace = float(np.trace(sigX @ sigX.T @ Axx)) + 2.0 * float(a @ sigX.T @ Axp) \
        + float(a @ a) * App
    return mu_hat - float(muX @ qx) - 0.5 * trace


def eval_H(eta: SphereControl, theta: OperatorPoint, model: MarketModel) -> float:
    """Two-branch renormalized operator value at a sphere control."""
    if eta.eta.size != theta.dim + 1:
        raise UsageError("control and point dimensions do not match")
    if eta.is_degenerate:
        return -0.5 * float(theta.A[theta.dim, theta.dim])
    a = eta.project()
    return float(eta.eta[0]) ** 2 * (-theta.b + eval_J(theta, model, a))


# ----------------------------------------------------------------------
# control grids and the supremum
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ControlGrid:
    """Symmetric sinh-spaced grid on [-a_max, a_max] (dense near zero,
    geometric towards the edges)."""

    a_max: float = 20.0
    points_per_side: int = 65

    def __post_init__(self):
        if self.a_max <= 0.0 or self.points_per_side < 2:
            raise UsageError("a_max must be > 0 and points_per_side >= 2")

    @cached_property
    def values(self) -> np.ndarray:
        u = np.linspace(0.0, math.asinh(self.a_max), self.points_per_side)
        pos = np.sinh(u)
        return np.unique(np.concatenate([-pos, pos]))


@dataclass(frozen=True)
class SupResult:
    value: float
    argmax: SphereControl


def _quadratic_coeffs(theta: OperatorPoint, model: MarketModel):
    """Coefficients of J^a = c0 + c1 a - App a^2 / 2 for dim-1 models whose
    drift is linear in the hedge (linear pricing / zero drift)."""
    _, sig, sig_inv, sigX, muX = _mats(model, theta.x)
    qx, qp = float(theta.q[0]), float(theta.q[1])
    Axx = float(theta.A[0, 0])
    Axp = float(theta.A[0, 1])
    App = float(theta.A[1, 1])
    sX = float(sigX[0, 0])
    if isinstance(model.mode, ZeroDrift):
        zeta = 0.0
        rate = 0.0
    else:
        zeta = float(np.atleast_1d(model.premium(theta.x))[0])
        rate = model.mode.rate
    c0 = rate * theta.y + zeta * sX * qx - float(muX[0]) * qx - 0.5 * sX * sX * Axx
    c1 = zeta * qp - sX * Axp
    return c0, c1, App


def sup_J_closed_form(theta: OperatorPoint, model: MarketModel):
    """Exact sup over a in R of the concave quadratic J^a for dim-1 linear
    pricing (or zero drift).  Returns ``(value, a_star)``; the value is
    ``math.inf`` when the quadratic has non-negative leading growth
    (App < 0, or App == 0 with a non-zero linear slope)."""
    if model.dim != 1:
        raise UsageError("closed form is dim-1 only")
    if not isinstance(model.mode, (LinearPricing, ZeroDrift)):
        raise UsageError("closed form requires a drift linear in the hedge")
    if model.shift_lambda != 0.0:
        raise UsageError("closed form does not apply to shifted models")
    c0, c1, App = _quadratic_coeffs(theta, model)
    if App < 0.0 or (App == 0.0 and c1 != 0.0):
        return math.inf, math.copysign(math.inf, c1 if c1 != 0.0 else 1.0)
    if App == 0.0:
        return c0, 0.0
    a_star = c1 / App
    return c0 + 0.5 * c1 * c1 / App, a_star


def sup_H(theta: OperatorPoint, model: MarketModel, a_grid: ControlGrid,
          closed_form: bool = True) -> SupResult:
    """Supremum of the renormalized operator over lifted grid controls and
    the canonical equator points; for dim-1 linear pricing the lifted
    closed-form vertex of J^a is added as a candidate, and a +inf sentinel
    is returned when the quadratic grows (App <= 0 with non-zero slope)."""
    vals = a_grid.values
    if vals.size == 0:
        raise UsageError("empty control grid")
    d = theta.dim
    best = -math.inf
    best_eta = None
    App = float(theta.A[d, d])
    for eta in degenerate_controls(d):
        v = eval_H(eta, theta, model)
        if v > best:
            best, best_eta = v, eta
    if d == 1:
        candidates = [float(a) for a in vals]
    else:
        candidates = [np.full(d, float(a)) for a in vals]
    if closed_form and d == 1 and not model.shift_lambda \
            and isinstance(model.mode, (LinearPricing, ZeroDrift)):
        cf_val, a_star = sup_J_closed_form(theta, model)
        if math.isinf(cf_val):
            grow = lift(math.copysign(a_grid.a_max, a_star if math.isfinite(a_star) else 1.0))
            return SupResult(value=math.inf, argmax=grow)
        candidates.append(a_star)
    for a in candidates:
        eta = lift(a)
        v = eval_H(eta, theta, model)
        if v > best:
            best, best_eta = v, eta
    return SupResult(value=best, argmax=best_eta)


def script_H(theta: OperatorPoint, model: MarketModel, a_grid: ControlGrid,
             closed_form: bool = True) -> float:
    """Full operator: min of y and the supremum over sphere controls."""
    return min(theta.y, sup_H(theta, model, a_grid, closed_form=closed_form).value)
