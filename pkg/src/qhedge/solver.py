"""Backward induction for the Bermudan controlled-loss value function.

Interval by interval from the horizon: facelift at each exercise date,
explicit monotone steps inside the interval, Dirichlet rows on the
probability axis after every step, and the degenerate-branch convex
projection in p.  Models with a y-dependent wealth drift are solved in
exponentially shifted variables (drift monotonisation) and unshifted on
output."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boundary import BoundaryData, growth_fit, solve_vbar, time_mesh
from .errors import ConfigurationError, NumericalAbort, UsageError
from .facelift import FaceliftData, convexity_violation, facelift_surface
from .model import (ExerciseSchedule, IndicatorLoss, LossSpec, MarketModel,
                    audit_model, lambda_shift, terminal_value_from_loss)
from .scheme import (CflReport, DirectionFan, Grid2D, StepStats, ValueSurface,
                     convexify_in_p, require_stable, step)


@dataclass(frozen=True)
class SolverParams:
    """Tunables for one solve; defaults match the desk-scale validation
    configurations."""

    a_max: float = 20.0
    i_max: int = 6
    j_linear: int = 16
    warm_steps: int = 0          # steps from the horizon with the narrow fan
    warm_i_max: int = 1
    lambda_override: float | None = None
    output_times: tuple = ()
    retain_stride: int = 0       # keep every k-th layer for policy simulation
    convexity_tol: float = 1e-6
    growth_k: float = 2.0
    audit_samples: int = 256
    terminal_override: object = None   # callable g(x, p) -> values, or constant
    pin_p0: object = None        # constant or callable t, x -> row
    pin_p1: object = None

    def fan(self) -> DirectionFan:
        return DirectionFan(a_max=self.a_max, i_max=self.i_max, j_linear=self.j_linear)

    def warm_fan(self) -> DirectionFan:
        return DirectionFan(a_max=self.a_max, i_max=self.warm_i_max, j_linear=self.j_linear)


@dataclass
class PolicyLayer:
    time: float
    values: np.ndarray
    argmin_a: np.ndarray


@dataclass
class SolveReport:
    shift_lambda: float
    cfl: CflReport
    n_steps: int
    clip_total: int
    max_convexity_violation: float
    max_monotonicity_violation: float
    growth_beta: float
    growth_k: float
    audits: list


@dataclass
class Solution:
    grid: Grid2D
    surfaces: dict          # time -> ValueSurface (continuation layers)
    left_limits: dict       # exercise time -> ValueSurface (facelifted)
    facelifts: dict         # exercise time -> FaceliftData
    vbar: BoundaryData
    report: SolveReport
    policy_layers: dict     # time -> PolicyLayer

    def value(self, t: float, x: float, p: float) -> float:
        from .scheme import interpolate
        if t not in self.surfaces:
            raise UsageError(f"no stored layer at t = {t}")
        return float(interpolate(self.surfaces[t], x, p))


def _row(pin, t, x):
    if callable(pin):
        return np.asarray(pin(t, x), dtype=float)
    return np.full(x.size, float(pin))


def solve(model: MarketModel, loss: LossSpec, schedule: ExerciseSchedule,
          grid: Grid2D, params: SolverParams = SolverParams()) -> Solution:
    if model.dim != 1:
        raise UsageError("the grid solver supports dim == 1 models")
    if model.shift_lambda != 0.0:
        raise UsageError("pass the unshifted model; the solver shifts internally")

    x = grid.x_nodes
    p = grid.p_nodes
    audits = audit_model(model, float(x[0]), float(x[-1]),
                         t_high=schedule.horizon, samples=params.audit_samples)
    failed = [a for a in audits if not a.passed]
    if failed:
        raise ConfigurationError(
            "model audit failed: " + ", ".join(f"{a.name} ({a.violations} violations,"
                                               f" worst {a.worst_margin:.2e})" for a in failed))

    if params.lambda_override is not None:
        lam = float(params.lambda_override)
        if lam < 0.0:
            raise UsageError("lambda_override must be >= 0")
    else:
        lam = model.lipschitz_L + 1.0 if model.is_y_dependent() else 0.0
    work = lambda_shift(model, lam) if lam > 0.0 else model

    fan = params.fan()
    warm_fan = params.warm_fan()
    cfl = require_stable(work, grid, fan)

    pinned = params.pin_p0 is not None or params.pin_p1 is not None
    if pinned and (params.pin_p0 is None or params.pin_p1 is None):
        raise UsageError("pin both p-rows or neither")

    times, ex_idx = time_mesh(schedule, grid.dt)
    n_t = times.size
    ex_set = set(ex_idx)

    if pinned:
        vb_rows = np.stack([_row(params.pin_p1, t, x) for t in times])
        bdata = BoundaryData(times=times, vbar=vb_rows, continuation={})
    else:
        bdata = solve_vbar(work, schedule, grid)

    output_times = set()
    for t_req in params.output_times:
        k = int(np.argmin(np.abs(times - t_req)))
        output_times.add(float(times[k]))
    output_times.add(0.0)

    def boundary_rows(values, k):
        t_k = times[k]
        if pinned:
            values[:, 0] = math.exp(lam * t_k) * _row(params.pin_p0, t_k, x)
            values[:, -1] = math.exp(lam * t_k) * _row(params.pin_p1, t_k, x)
        else:
            values[:, 0] = 0.0
            values[:, -1] = math.exp(lam * t_k) * bdata.vbar[k]
        return values

    # --- terminal layer (shifted values throughout the loop) -----------
    T = schedule.horizon
    if params.terminal_override is not None:
        ov = params.terminal_override
        if callable(ov):
            term = np.asarray(ov(x[:, None], p[None, :]), dtype=float) * np.ones((x.size, p.size))
        else:
            term = np.full((x.size, p.size), float(ov))
        V = math.exp(lam * T) * term
        V = boundary_rows(V, n_t - 1)
        apply_terminal_facelift = False
    elif isinstance(loss, IndicatorLoss):
        V = np.zeros((x.size, p.size))  # continuation convention at T
        apply_terminal_facelift = True
    else:
        rows = np.stack([np.asarray(terminal_value_from_loss(loss, x, pv, t=T), dtype=float)
                         for pv in p], axis=1)
        V = math.exp(lam * T) * rows
        V = boundary_rows(V, n_t - 1)
        V = convexify_in_p(ValueSurface(grid=grid, values=V, time_label=T)).values
        apply_terminal_facelift = False

    surfaces = {}
    left_limits = {}
    facelifts = {}
    policy_layers = {}
    clip_total = 0
    max_cviol = 0.0
    max_mviol = 0.0
    n_steps_done = 0

    def unshifted(values, t):
        return ValueSurface(grid=grid, values=math.exp(-lam * t) * values, time_label=t)

    def record(k, values, stats=None):
        nonlocal max_mviol
        t_k = float(times[k])
        if t_k in output_times or k in ex_set:
            surf = unshifted(values, t_k)
            surfaces[t_k] = surf
            d = np.diff(surf.values, axis=1)
            max_mviol = max(max_mviol, float(np.max(-d, initial=0.0)))
        if params.retain_stride and (k % params.retain_stride == 0 or k == n_t - 1):
            a_arr = stats.argmin_a if stats is not None else np.zeros_like(values)
            policy_layers[t_k] = PolicyLayer(time=t_k,
                                             values=math.exp(-lam * t_k) * values,
                                             argmin_a=a_arr)

    # record the continuation layer at T, then facelift
    record(n_t - 1, V)
    g_schedule = schedule.payoff
    last_stats = None
    step_from_T = 0
    for k in range(n_t - 1, -1, -1):
        t_k = float(times[k])
        if k in ex_set and (apply_terminal_facelift or k != n_t - 1):
            step_from_T = 0  # facelifts refresh the payoff kinks
            slice_unshifted = math.exp(-lam * t_k) * V
            g_row = np.asarray(g_schedule(t_k, x), dtype=float)
            fl = facelift_surface(p, slice_unshifted, g_row, time=t_k, x_nodes=x,
                                  convexity_tol=params.convexity_tol)
            facelifts[t_k] = fl
            V = math.exp(lam * t_k) * fl.lifted
            V = boundary_rows(V, k)
            left_limits[t_k] = unshifted(V, t_k)
        if k == 0:
            record(0, V, last_stats)
            break
        dt_k = float(times[k] - times[k - 1])
        surf = ValueSurface(grid=grid, values=V, time_label=t_k)
        use_fan = warm_fan if step_from_T < params.warm_steps else fan
        new_surf, stats = step(surf, float(times[k - 1]), work, use_fan,
                               dt=dt_k, check_cfl=False)
        raw = boundary_rows(new_surf.values.copy(), k - 1)
        projected = convexify_in_p(ValueSurface(grid=grid, values=raw,
                                                time_label=float(times[k - 1])))
        viol = float(np.max(raw - projected.values))
        max_cviol = max(max_cviol, viol)
        V = projected.values
        if not np.all(np.isfinite(V)):
            raise NumericalAbort("solve produced NaN/inf", layer=k - 1)
        clip_total += stats.clip_count
        last_stats = stats
        n_steps_done += 1
        step_from_T += 1
        record(k - 1, V, stats)

    beta = growth_fit(bdata, x, params.growth_k) if not pinned else float("nan")
    report = SolveReport(shift_lambda=lam, cfl=cfl, n_steps=n_steps_done,
                         clip_total=clip_total,
                         max_convexity_violation=max_cviol,
                         max_monotonicity_violation=max_mviol,
                         growth_beta=beta, growth_k=params.growth_k,
                         audits=audits)
    return Solution(grid=grid, surfaces=surfaces, left_limits=left_limits,
                    facelifts=facelifts, vbar=bdata, report=report,
                    policy_layers=policy_layers)
