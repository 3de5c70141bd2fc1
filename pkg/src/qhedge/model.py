"""Market dynamics, loss specifications, exercise schedules and their audits.

The market consists of a factor process with drift ``diag(x) mu(x)`` and
volatility ``diag(x) sigma(x)``, and a wealth account whose drift
``mu_Y(t, x, y, ups)`` depends on the pricing mode:

* ``LinearPricing`` -- ``rate*y + zeta(x)' sigma(x) ups`` with risk premium
  ``zeta``; the classical frictionless case (``rate = 0`` by default).
* ``TwoRate``      -- lending rate ``r`` and borrowing rate ``R >= r``:
  ``r*y + zeta' sigma ups - (R - r) * (y - ups'1)^-``.
* ``ZeroDrift``    -- ``mu_Y = 0``.
* ``CustomDrift``  -- user-supplied callable.

Coefficients for ``dim == 1`` are elementwise callables (they must accept
numpy arrays); for ``dim > 1`` they map a ``(d,)`` vector to a ``(d,)``
vector / ``(d, d)`` matrix.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, UsageError


def _as_callable(c):
    if callable(c):
        return c
    val = float(c)
    return lambda x, _v=val: np.full_like(np.asarray(x, dtype=float), _v)


# ----------------------------------------------------------------------
# pricing modes
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class LinearPricing:
    """Risk premium ``zeta`` (callable of x, or constant) and money rate."""

    zeta: Callable | float
    rate: float = 0.0

    def __post_init__(self):
        if self.rate < 0.0:
            raise UsageError("LinearPricing rate must be >= 0")


@dataclass(frozen=True)
class TwoRate:
    """Borrowing at ``R``, lending at ``r`` with ``R >= r >= 0``."""

    r: float
    R: float
    zeta: Callable | float

    def __post_init__(self):
        if not (self.R >= self.r >= 0.0):
            raise UsageError(f"TwoRate requires R >= r >= 0, got r={self.r}, R={self.R}")


@dataclass(frozen=True)
class ZeroDrift:
    pass


@dataclass(frozen=True)
class CustomDrift:
    """User drift ``fn(t, x, y, ups)``.

    ``premium`` declares the part of the drift that is linear in
    ``sigma(x) ups`` (used by the scheme to absorb it into transport);
    ``y_dependent = False`` lets the solver skip the monotonising shift.
    """

    fn: Callable
    y_dependent: bool = True
    premium: Callable | float = 0.0


Mode = LinearPricing | TwoRate | ZeroDrift | CustomDrift


# ----------------------------------------------------------------------
# market model
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class MarketModel:
    """Factor/wealth dynamics plus the constants the audits rely on.

    ``lipschitz_L`` bounds the difference quotients of ``mu_Y`` (in t, x,
    y and ups, with the ``(1 + |ups| + |ups'|)`` weight on the x
    increment); ``bound_Lambda`` bounds ``|mu|``, ``sigma`` and
    ``sigma_inv``.  ``shift_lambda > 0`` marks a drift-monotonised model
    produced by :func:`lambda_shift`.
    """

    dim: int
    mu: Callable
    sigma: Callable
    sigma_inv: Callable
    mode: Mode
    lipschitz_L: float
    bound_Lambda: float
    shift_lambda: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("dim must be >= 1")
        if self.lipschitz_L <= 0.0:
            raise UsageError("lipschitz_L must be > 0")
        if self.bound_Lambda <= 0.0:
            raise UsageError("bound_Lambda must be > 0")

    # -- premium / drift decomposition ---------------------------------

    def premium(self, x):
        """Risk-premium coefficient ``zeta(x)`` (zero when the mode has none)."""
        if isinstance(self.mode, (LinearPricing, TwoRate)):
            return _as_callable(self.mode.zeta)(x)
        if isinstance(self.mode, CustomDrift):
            return _as_callable(self.mode.premium)(x)
        return np.zeros_like(np.asarray(x, dtype=float))

    def _mu_Y_raw(self, t, x, y, ups):
        m = self.mode
        if isinstance(m, ZeroDrift):
            return np.zeros(np.broadcast(x, y, ups).shape)
        if self.dim == 1:
            zs = self.premium(x) * self.sigma(x)
            if isinstance(m, LinearPricing):
                return m.rate * y + zs * ups
            if isinstance(m, TwoRate):
                return m.r * y + zs * ups - (m.R - m.r) * np.maximum(ups - y, 0.0)
            return m.fn(t, x, y, ups)
        # vector case: x (d,), ups (d,)
        if isinstance(m, LinearPricing):
            return m.rate * y + float(np.asarray(m.zeta(x)) @ self.sigma(x) @ np.asarray(ups))
        if isinstance(m, TwoRate):
            zs = float(np.asarray(m.zeta(x)) @ self.sigma(x) @ np.asarray(ups))
            return m.r * y + zs - (m.R - m.r) * max(float(np.sum(ups)) - y, 0.0)
        return m.fn(t, x, y, ups)

    def mu_Y(self, t, x, y, ups):
        """Effective wealth drift (includes the monotonising shift if any)."""
        lam = self.shift_lambda
        if lam == 0.0:
            return self._mu_Y_raw(t, x, y, ups)
        e = np.exp(-lam * t)
        return lam * np.asarray(y, dtype=float) + np.exp(lam * t) * self._mu_Y_raw(t, x, e * np.asarray(y), e * np.asarray(ups))

    def residual_drift(self, t, x, y, ups):
        """``mu_Y`` minus its absorbed premium part ``zeta' sigma ups``.

        Computed symbolically per mode so that linear pricing yields an
        exact zero (no cancellation noise) at zero rate.
        """
        m = self.mode
        lam = self.shift_lambda

        def raw(t_, x_, y_, u_):
            if isinstance(m, ZeroDrift):
                return np.zeros(np.broadcast(x_, y_, u_).shape)
            if isinstance(m, LinearPricing):
                return m.rate * np.asarray(y_, dtype=float) + np.zeros(np.broadcast(x_, y_, u_).shape)
            if isinstance(m, TwoRate):
                return m.r * np.asarray(y_) - (m.R - m.r) * np.maximum(np.asarray(u_) - np.asarray(y_), 0.0)
            return m.fn(t_, x_, y_, u_) - self.premium(x_) * self.sigma(x_) * np.asarray(u_)

        if lam == 0.0:
            return raw(t, x, y, ups)
        e = np.exp(-lam * t)
        return lam * np.asarray(y, dtype=float) + np.exp(lam * t) * raw(t, x, e * np.asarray(y), e * np.asarray(ups))

    # -- slope bounds used by the stability audits ----------------------

    def y_slope_bound(self):
        """Upper bound on the y-slope of the effective drift."""
        m = self.mode
        if isinstance(m, LinearPricing):
            base = m.rate
        elif isinstance(m, TwoRate):
            base = m.R
        elif isinstance(m, ZeroDrift):
            base = 0.0
        else:
            base = self.lipschitz_L
        return base + self.shift_lambda

    def residual_ups_slope_bound(self):
        """Upper bound on the ups-slope of the residual drift."""
        m = self.mode
        if isinstance(m, TwoRate):
            return m.R - m.r
        if isinstance(m, (LinearPricing, ZeroDrift)):
            return 0.0
        return self.lipschitz_L

    def is_y_dependent(self):
        m = self.mode
        if isinstance(m, ZeroDrift):
            return False
        if isinstance(m, LinearPricing):
            return m.rate > 0.0
        if isinstance(m, TwoRate):
            return m.R > 0.0
        return m.y_dependent


def lambda_shift(model: MarketModel, lam: float) -> MarketModel:
    """Monotonise the wealth drift: the shifted drift is
    ``lam*y + e^{lam t} mu_Y(t, x, e^{-lam t} y, e^{-lam t} ups)`` and is
    strictly increasing in ``y`` with slope at least ``lam - L``.

    Requires ``lam > model.lipschitz_L``.
    """
    if model.shift_lambda != 0.0:
        raise UsageError("model is already shifted; compose shifts analytically instead")
    if not lam > model.lipschitz_L:
        raise UsageError(
            f"shift rate must exceed the Lipschitz constant: lam={lam} <= L={model.lipschitz_L}")
    return dataclasses.replace(model, shift_lambda=lam,
                               lipschitz_L=model.lipschitz_L + lam)


# ----------------------------------------------------------------------
# convenience constructors (scalar Black-Scholes style models)
# ----------------------------------------------------------------------

def black_scholes_model(mu: float, sigma: float, mode: Mode | None = None) -> MarketModel:
    """One-dimensional constant-coefficient model.

    Default mode is zero-rate linear pricing with premium
    ``zeta = mu / sigma``.
    """
    if sigma <= 0.0:
        raise UsageError("sigma must be > 0")
    if mode is None:
        mode = LinearPricing(zeta=mu / sigma, rate=0.0)
    if isinstance(mode, LinearPricing):
        L = max(mode.rate, abs(mu - mode.rate), abs(mu), sigma, 1e-8)
    elif isinstance(mode, TwoRate):
        zs = abs(mu - mode.r)
        L = max(mode.R, zs + (mode.R - mode.r), abs(mu), sigma, 1e-8)
    else:
        L = max(abs(mu), sigma, 1e-8)
    Lam = max(abs(mu), sigma, 1.0 / sigma)
    return MarketModel(
        dim=1,
        mu=lambda x, _m=mu: np.full_like(np.asarray(x, dtype=float), _m),
        sigma=lambda x, _s=sigma: np.full_like(np.asarray(x, dtype=float), _s),
        sigma_inv=lambda x, _s=sigma: np.full_like(np.asarray(x, dtype=float), 1.0 / _s),
        mode=mode,
        lipschitz_L=L,
        bound_Lambda=Lam,
    )


# ----------------------------------------------------------------------
# coefficient evaluation
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Coefficients:
    mu_X: np.ndarray
    sigma_X: np.ndarray
    mu_Y: float


def eval_coeffs(model: MarketModel, t: float, x, y: float, upsilon) -> Coefficients:
    """Evaluate ``mu_X = diag(x) mu(x)``, ``sigma_X = diag(x) sigma(x)``
    and the wealth drift at a point.  ``x`` must be strictly positive."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0.0):
        raise DomainError("x must be strictly positive componentwise")
    if model.dim == 1:
        mu_X = x * model.mu(x)
        sigma_X = x * model.sigma(x)
        mu_Y = model.mu_Y(t, x, y, np.asarray(upsilon, dtype=float))
        if np.ndim(mu_Y) > 0 and np.size(mu_Y) == 1:
            mu_Y = float(np.asarray(mu_Y).reshape(()))
        return Coefficients(mu_X=mu_X, sigma_X=sigma_X, mu_Y=mu_Y)
    mu_X = np.diag(x) @ np.asarray(model.mu(x), dtype=float)
    sigma_X = np.diag(x) @ np.asarray(model.sigma(x), dtype=float)
    mu_Y = float(model.mu_Y(t, x, y, np.asarray(upsilon, dtype=float)))
    return Coefficients(mu_X=mu_X, sigma_X=sigma_X, mu_Y=mu_Y)


# ----------------------------------------------------------------------
# loss specifications
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class IndicatorLoss:
    """Loss ``1_{y >= g(t, x)}``; the quantile-hedging case."""

    payoff: Callable  # g(t, x) >= 0, Lipschitz in x

    def loss(self, t, x, y):
        return np.where(np.asarray(y, dtype=float) >= self.payoff(t, x), 1.0, 0.0)


@dataclass(frozen=True)
class RampLoss:
    """Loss ``min(y / g(t, x), 1)`` (expected-shortfall style)."""

    payoff: Callable

    def loss(self, t, x, y):
        g = np.asarray(self.payoff(t, x), dtype=float)
        y = np.clip(np.asarray(y, dtype=float), 0.0, None)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(g > 0.0, np.minimum(y / np.where(g > 0.0, g, 1.0), 1.0), 1.0)
        return r


@dataclass(frozen=True)
class CustomLoss:
    """User loss ``fn(x, y)`` with values already rescaled into [0, 1],
    non-decreasing and right-continuous in y."""

    fn: Callable
    y_cap: float = 1e6

    def loss(self, t, x, y):
        return self.fn(x, y)


LossSpec = IndicatorLoss | RampLoss | CustomLoss


def terminal_value_from_loss(loss: LossSpec, x, p: float, t: float = 0.0):
    """Generalised inverse in y of the loss at level ``p``: the smallest
    ``y >= 0`` with ``loss(x, y) >= p``."""
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    x = np.asarray(x, dtype=float)
    if p == 0.0:
        return np.zeros_like(x) if x.ndim else 0.0
    if isinstance(loss, IndicatorLoss):
        return np.asarray(loss.payoff(t, x), dtype=float) + 0.0
    if isinstance(loss, RampLoss):
        return p * np.asarray(loss.payoff(t, x), dtype=float)
    # custom: bisection per point
    def invert_one(xv):
        lo, hi = 0.0, 1.0
        for _ in range(80):
            if loss.fn(xv, hi) >= p or hi > loss.y_cap:
                break
            hi *= 2.0
        if loss.fn(xv, hi) < p:
            raise DomainError(f"loss never reaches level p={p} below y={hi}")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if loss.fn(xv, mid) >= p:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-10:
                break
        return hi
    if x.ndim == 0:
        return invert_one(float(x))
    return np.array([invert_one(xv) for xv in np.ravel(x)]).reshape(x.shape)


# ----------------------------------------------------------------------
# exercise schedules and payoffs
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ExerciseSchedule:
    """Dates ``0 = t_0 < ... < t_n = T`` plus the exercise payoff."""

    dates: tuple
    payoff: Callable  # g(t, x)

    def __post_init__(self):
        d = tuple(float(v) for v in self.dates)
        object.__setattr__(self, "dates", d)
        if len(d) == 0:
            raise UsageError("schedule needs at least one date")
        if d[0] != 0.0:
            raise UsageError("schedule must start at t_0 = 0")
        if any(b <= a for a, b in zip(d, d[1:])):
            raise UsageError("dates must be strictly increasing")

    @classmethod
    def from_exercise_dates(cls, dates: Sequence[float], payoff: Callable):
        d = [float(v) for v in dates]
        if not d or d[0] != 0.0:
            d = [0.0] + d
        return cls(dates=tuple(d), payoff=payoff)

    @property
    def horizon(self):
        return self.dates[-1]

    @property
    def exercise_dates(self):
        """Dates at which the payoff constraint binds (excludes t_0 = 0)."""
        return self.dates[1:]


def digital_payoff(strike: float, tol: float = 1e-12) -> Callable:
    """Cash-or-nothing payoff ``1_{x > K}`` with value 1/2 exactly at the
    strike (the symmetric cell convention: second-order accurate when the
    strike falls on a grid node)."""

    def g(t, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > strike * (1.0 + tol), 1.0, 0.0)
        return np.where(np.abs(x - strike) <= strike * tol, 0.5, out)

    return g


def call_payoff(strike: float) -> Callable:
    def g(t, x):
        return np.maximum(np.asarray(x, dtype=float) - strike, 0.0)

    return g


def constant_payoff(level: float) -> Callable:
    def g(t, x):
        return np.full_like(np.asarray(x, dtype=float), level)

    return g


# ----------------------------------------------------------------------
# audits
# ----------------------------------------------------------------------

@dataclass
class AuditReport:
    name: str
    samples: int
    violations: int
    worst_margin: float

    @property
    def passed(self):
        return self.violations == 0


def audit_model(model: MarketModel, x_low: float, x_high: float,
                t_high: float = 1.0, samples: int = 1000, seed: int = 0,
                ups_scale: float = 5.0, y_scale: float = 5.0) -> list[AuditReport]:
    """Sample-based verification of the standing assumptions: inverse
    volatility, Lambda bounds and the Lipschitz quotients of mu_Y."""
    if model.dim != 1:
        raise UsageError("audit_model currently supports dim == 1 models")
    rng = np.random.default_rng(seed)
    xs = np.exp(rng.uniform(np.log(x_low), np.log(x_high), size=samples))
    reports = []

    inv_err = np.abs(model.sigma(xs) * model.sigma_inv(xs) - 1.0)
    reports.append(AuditReport("sigma_inverse", samples, int(np.sum(inv_err > 1e-10)),
                               float(np.max(inv_err))))

    Lam = model.bound_Lambda
    over = np.maximum.reduce([
        np.abs(model.mu(xs)) - Lam,
        np.abs(model.sigma(xs)) - Lam,
        np.abs(model.sigma_inv(xs)) - Lam,
    ])
    reports.append(AuditReport("lambda_bound", samples, int(np.sum(over > 0.0)),
                               float(np.max(over))))

    t0 = rng.uniform(0.0, t_high, samples)
    t1 = rng.uniform(0.0, t_high, samples)
    x0 = np.exp(rng.uniform(np.log(x_low), np.log(x_high), samples))
    x1 = np.exp(rng.uniform(np.log(x_low), np.log(x_high), samples))
    y0 = rng.uniform(0.0, y_scale, samples)
    y1 = rng.uniform(0.0, y_scale, samples)
    u0 = rng.uniform(-ups_scale, ups_scale, samples)
    u1 = rng.uniform(-ups_scale, ups_scale, samples)
    lhs = np.abs(model.mu_Y(t1, x1, y1, u1) - model.mu_Y(t0, x0, y0, u0))
    rhs = model.lipschitz_L * (np.abs(t1 - t0) + np.abs(x1 - x0) * (1.0 + np.abs(u0) + np.abs(u1))
                               + np.abs(u1 - u0) + np.abs(y1 - y0))
    margin = lhs - rhs
    reports.append(AuditReport("mu_y_lipschitz", samples, int(np.sum(margin > 1e-9)),
                               float(np.max(margin))))
    return reports


def audit_loss(loss: LossSpec, x_samples, y_high: float = 10.0,
               samples: int = 200, seed: int = 0) -> list[AuditReport]:
    """Check that the loss is non-decreasing and right-continuous in y on a
    sample, with image inside [0, 1]."""
    rng = np.random.default_rng(seed)
    xs = np.asarray(x_samples, dtype=float)
    reports = []
    mono_viol = 0
    range_viol = 0
    rc_viol = 0
    worst = 0.0
    for xv in xs:
        ys = np.sort(rng.uniform(0.0, y_high, samples))
        vals = np.asarray(loss.loss(0.0, xv, ys), dtype=float)
        d = np.diff(vals)
        mono_viol += int(np.sum(d < -1e-12))
        worst = max(worst, float(np.max(-d, initial=0.0)))
        range_viol += int(np.sum((vals < -1e-12) | (vals > 1.0 + 1e-12)))
        eps = 1e-9
        right = np.asarray(loss.loss(0.0, xv, ys + eps), dtype=float)
        rc_viol += int(np.sum(right < vals - 1e-6))
    reports.append(AuditReport("loss_monotone", len(xs) * samples, mono_viol, worst))
    reports.append(AuditReport("loss_range", len(xs) * samples, range_viol, 0.0))
    reports.append(AuditReport("loss_right_continuous", len(xs) * samples, rc_viol, 0.0))
    return reports
