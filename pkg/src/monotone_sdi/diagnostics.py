"""Convergence diagnostics: ergodic averages, metric series, rate fits,
and one-sided verification of the theorem-level bounds.

Every bound check follows the same protocol: the right-hand side is built
from closed-form schedule integrals (never from sampled quadrature), the
left-hand side is a Monte Carlo mean, and a violation is declared only when
the mean exceeds the bound by more than ``slack`` standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad

from . import operators as ops
from .errors import (
    DegenerateWindow,
    IncompatibleMetric,
    MissingAuxiliary,
    NoPotential,
    NotStronglyConvex,
    NotStronglyMonotone,
    ScheduleOff,
)
from .integrator import BatchPaths, Grid, Path, simulate_deterministic_flow
from .schedules import NoiseModel, TikhonovSchedule
from .subspace import SubspaceInfo, domain_subspace


# ---------------------------------------------------------------------------
# Ergodic average.
# ---------------------------------------------------------------------------

def running_average(X, times):
    """Trapezoidal running integral average of X over [0, t_k].

    X: (..., N+1, d); the value at t_0 = 0 is defined as X_0.  Exact for
    trajectories affine in time.
    """
    X = np.asarray(X, dtype=float)
    dt = np.diff(times)
    seg = 0.5 * (X[..., 1:, :] + X[..., :-1, :]) * dt[:, None]
    integral = np.concatenate(
        [np.zeros(X.shape[:-2] + (1, X.shape[-1])), np.cumsum(seg, axis=-2)],
        axis=-2)
    avg = np.empty_like(X)
    avg[..., 0, :] = X[..., 0, :]
    avg[..., 1:, :] = integral[..., 1:, :] / times[1:, None]
    return avg


def ergodic_average(path: Path):
    """Running average trajectory of a single path; (N+1, d)."""
    return running_average(path.X, path.times)


# ---------------------------------------------------------------------------
# Metric specifications.
# ---------------------------------------------------------------------------

METRIC_KINDS = (
    "dist_sq_to_point",
    "dist_sq_to_zero_set",
    "value_gap",
    "ergodic_value_gap",
    "ergodic_gap_function",
    "operator_norm_sq",
    "tikhonov_discrepancy",
    "flow_discrepancy",
    "norm_of_average",
)


@dataclass(frozen=True)
class MetricSpec:
    """One diagnostic quantity evaluated along paths at selected times."""

    kind: str
    point: Optional[np.ndarray] = None
    region: Optional[ops.GapRegion] = None
    n_grid: int = 101
    eval_times: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise IncompatibleMetric(f"unknown metric kind {self.kind!r}")

    @property
    def name(self):
        return self.kind


@dataclass
class EvalContext:
    """Shared per-scenario data needed by metric evaluators."""

    op: ops.OperatorSpec
    info: SubspaceInfo
    noise: NoiseModel
    tik: TikhonovSchedule
    grid: Grid
    flow: Optional[np.ndarray] = None   # deterministic comparison flow
    curve: Optional[np.ndarray] = None  # t -> x_{eps(t)} on the grid
    xstar: Optional[np.ndarray] = None  # reference solution point


def build_context(op, noise, tik, grid, x0, need_flow=False, need_curve=False):
    """Assemble the evaluation context, simulating the comparison flow and
    the Tikhonov curve once per scenario."""
    info = domain_subspace(op)
    ctx = EvalContext(op=op, info=info, noise=noise, tik=tik, grid=grid)
    if not op.zero_set.is_empty:
        point, _ = ops.zero_set_project(op, np.asarray(x0, dtype=float))
        ctx.xstar = point
    if need_flow:
        ctx.flow = simulate_deterministic_flow(op, tik, x0, grid, info=info)
    if need_curve:
        if tik.is_off:
            raise ScheduleOff("tikhonov curve needs an active schedule")
        eps = np.asarray(tik.epsilon(grid.times))
        curve = np.empty((grid.n_steps + 1, op.dim))
        cache = {}
        for k, e in enumerate(eps):
            key = float(e)
            if key not in cache:
                cache[key] = ops.tikhonov_point(op, key)
            curve[k] = cache[key]
        ctx.curve = curve
    return ctx


def validate_metric(spec: MetricSpec, ctx: EvalContext):
    op = ctx.op
    if spec.kind in ("value_gap", "ergodic_value_gap") and op.potential is None:
        raise IncompatibleMetric(f"{spec.kind} requires a potential")
    if spec.kind == "operator_norm_sq" and op.lipschitz_constant is None:
        raise IncompatibleMetric(
            "operator_norm_sq requires a Lipschitz single-valued kind")
    if spec.kind == "dist_sq_to_zero_set" and op.zero_set.is_empty:
        raise IncompatibleMetric("dist_sq_to_zero_set requires zeros")
    if spec.kind == "dist_sq_to_point" and spec.point is None:
        raise IncompatibleMetric("dist_sq_to_point requires a point")
    if spec.kind == "ergodic_gap_function" and spec.region is None:
        raise IncompatibleMetric("ergodic_gap_function requires a region")
    if spec.kind == "tikhonov_discrepancy" and ctx.tik.is_off:
        raise IncompatibleMetric("tikhonov_discrepancy requires power_eps")


def metric_values(spec: MetricSpec, batch: BatchPaths, ctx: EvalContext,
                  idx, scratch=None):
    """Per-path metric matrix (n_paths, len(idx)) at grid indices idx."""
    scratch = scratch if scratch is not None else {}
    X = batch.X
    if spec.kind == "dist_sq_to_point":
        p = np.asarray(spec.point, dtype=float)
        return np.sum((X[:, idx] - p) ** 2, axis=2)
    if spec.kind == "dist_sq_to_zero_set":
        proj = ctx.op.zero_set.project(X[:, idx])
        return np.sum((X[:, idx] - proj) ** 2, axis=2)
    if spec.kind == "value_gap":
        vals = ctx.op.potential.evaluate(X[:, idx])
        return np.asarray(vals) - ctx.op.potential.min_value
    if spec.kind == "norm_of_average":
        xbar = _xbar(batch, ctx, scratch)
        return np.sum(xbar[:, idx] ** 2, axis=2)
    if spec.kind == "ergodic_value_gap":
        xbar = _xbar(batch, ctx, scratch)
        vals = ctx.op.potential.evaluate(xbar[:, idx])
        return np.asarray(vals) - ctx.op.potential.min_value
    if spec.kind == "ergodic_gap_function":
        xbar = _xbar(batch, ctx, scratch)
        out = np.empty((batch.n_paths, len(idx)))
        for i in range(batch.n_paths):
            for j, k in enumerate(idx):
                out[i, j] = ops.gap_function(ctx.op, xbar[i, k], spec.region,
                                             n_grid=spec.n_grid)
        return out
    if spec.kind == "operator_norm_sq":
        v = ctx.op.minimal_norm(X[:, idx])
        return np.sum(np.asarray(v) ** 2, axis=2)
    if spec.kind == "tikhonov_discrepancy":
        if ctx.curve is None:
            raise IncompatibleMetric("context lacks the tikhonov curve")
        return np.sum((X[:, idx] - ctx.curve[idx]) ** 2, axis=2)
    if spec.kind == "flow_discrepancy":
        if ctx.flow is None:
            raise IncompatibleMetric("context lacks the comparison flow")
        return np.sum((X[:, idx] - ctx.flow[idx]) ** 2, axis=2)
    raise IncompatibleMetric(f"unknown metric kind {spec.kind!r}")


def _xbar(batch, ctx, scratch):
    if "xbar" not in scratch:
        scratch["xbar"] = running_average(batch.X, ctx.grid.times)
    return scratch["xbar"]


# ---------------------------------------------------------------------------
# Rate fitting.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    model: str
    exponent: float          # power-law exponent, or decay rate for "exp"
    intercept: float
    r_squared: float
    n_used: int
    clipped: bool            # nonpositive values were dropped


def fit_rate(times, values, model="power", window=None) -> RateFit:
    """Least-squares slope of log y against log t ("power") or t ("exp")."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    lo, hi = window if window is not None else (t[0], t[-1])
    mask = (t >= lo) & (t <= hi)
    if model == "power":
        mask &= t > 0
    clipped = bool(np.any(y[mask] <= 1e-14))
    mask &= y > 1e-14
    if mask.sum() < 5:
        raise DegenerateWindow("fewer than 5 usable points in the window")
    tx = np.log(t[mask]) if model == "power" else t[mask]
    ly = np.log(y[mask])
    slope, intercept = np.polyfit(tx, ly, 1)
    resid = ly - (slope * tx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    exponent = float(slope) if model == "power" else -float(slope)
    return RateFit(model=model, exponent=exponent, intercept=float(intercept),
                   r_squared=r2, n_used=int(mask.sum()), clipped=clipped)


# ---------------------------------------------------------------------------
# Ensemble stats containers and the bound-check protocol.
# ---------------------------------------------------------------------------

@dataclass
class SeriesStats:
    """Monte Carlo mean/variance of one scalar quantity at several times."""

    name: str
    times: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    n: int

    @property
    def se(self):
        if self.n <= 1:
            return np.zeros_like(self.mean)
        return np.sqrt(np.maximum(self.var, 0.0) / self.n)

    def ci(self, z=1.96):
        half = z * self.se
        return self.mean - half, self.mean + half


@dataclass
class CheckRow:
    check: str
    quantity: str
    time: float
    observed: float
    bound: float
    passed: bool


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    rows: list = field(default_factory=list)
    notes: str = ""


def _one_sided(check, quantity, stats: SeriesStats, bound, slack) -> list:
    rows = []
    se = stats.se
    for j, t in enumerate(stats.times):
        # the rounding guard only settles exact float ties, never statistics
        guard = 1e-12 * (1.0 + abs(bound[j]))
        ok = stats.mean[j] <= bound[j] + slack * se[j] + guard
        rows.append(CheckRow(check=check, quantity=quantity, time=float(t),
                             observed=float(stats.mean[j]),
                             bound=float(bound[j]), passed=bool(ok)))
    return rows


# -- strong monotonicity rate ------------------------------------------------

def strong_rate_bound(op, noise, x0, xstar, times):
    """e^{-2 rho t} ||x0 - xstar||^2 + int_0^t e^{-2 rho (t-s)} sigma_inf(s)^2 ds."""
    rho = op.strong_monotonicity_modulus
    d0 = float(np.sum((np.asarray(x0, dtype=float) - xstar) ** 2))
    out = np.empty(len(times))
    for j, t in enumerate(times):
        if t == 0 or noise.is_zero:
            conv = 0.0
        else:
            conv, _ = quad(
                lambda s, tt=t: math.exp(-2 * rho * (tt - s)) * noise.sup_norm(s) ** 2,
                0.0, t, limit=200)
        out[j] = math.exp(-2 * rho * t) * d0 + conv
    return out


def strong_rate_check(stats: SeriesStats, op, noise, x0, xstar,
                      slack=3.0, rhs_scale=1.0) -> CheckOutcome:
    """One-sided check of the exponential contraction bound."""
    if op.strong_monotonicity_modulus <= 0:
        raise NotStronglyMonotone("operator has no positive modulus")
    rhs = rhs_scale * strong_rate_bound(op, noise, x0, xstar, stats.times)
    rows = _one_sided("strong_rate", "E||X_t - x*||^2", stats, rhs, slack)
    return CheckOutcome(name="strong_rate",
                        passed=all(r.passed for r in rows), rows=rows)


# -- ergodic value rate --------------------------------------------------------

def ergodic_value_bound(op, noise, x0, times):
    """(1/2t) d(x0; S)^2 + (1/2t) int_0^t sigma_inf^2."""
    _, dist = ops.zero_set_project(op, np.asarray(x0, dtype=float))
    out = np.empty(len(times))
    for j, t in enumerate(times):
        if t == 0:
            out[j] = math.inf
            continue
        out[j] = (dist ** 2 + noise.sup_sq_integral(0.0, t)) / (2.0 * t)
    return out


def strong_convexity_average_bound(op, noise, x0, xstar, times):
    """(1/(mu t)) (||x0 - x*|| + int_0^t sigma_inf^2)."""
    mu = op.potential.strong_convexity_modulus
    d0 = float(np.linalg.norm(np.asarray(x0, dtype=float) - xstar))
    out = np.empty(len(times))
    for j, t in enumerate(times):
        if t == 0:
            out[j] = math.inf
            continue
        out[j] = (d0 + noise.sup_sq_integral(0.0, t)) / (mu * t)
    return out


def ergodic_value_check(value_stats: SeriesStats, op, noise, x0,
                        avg_dist_stats: Optional[SeriesStats] = None,
                        xstar=None, slack=3.0, rhs_scale=1.0) -> CheckOutcome:
    """Check the ergodic value-gap bound, plus the strongly convex
    average-distance bound when a modulus is declared."""
    if op.potential is None:
        raise NoPotential("ergodic value check needs a potential")
    rhs = rhs_scale * ergodic_value_bound(op, noise, x0, value_stats.times)
    rows = _one_sided("ergodic_value", "E(phi(avg X) - min phi)",
                      value_stats, rhs, slack)
    if avg_dist_stats is not None:
        if op.potential.strong_convexity_modulus <= 0:
            raise NotStronglyConvex("average-distance bound needs mu > 0")
        rhs2 = rhs_scale * strong_convexity_average_bound(
            op, noise, x0, xstar, avg_dist_stats.times)
        rows += _one_sided("ergodic_value", "E||avg X - x*||^2",
                           avg_dist_stats, rhs2, slack)
    return CheckOutcome(name="ergodic_value",
                        passed=all(r.passed for r in rows), rows=rows)


# -- concentration -------------------------------------------------------------

@dataclass
class ConcentrationReport:
    times: np.ndarray
    q0: np.ndarray
    q1: np.ndarray
    delta_hat: np.ndarray
    eps_levels: np.ndarray
    empirical_tail: np.ndarray   # (n_times, n_eps)
    bound: np.ndarray            # (n_eps,)
    n_paths: int
    standard_errors: np.ndarray  # (n_times, n_eps)
    passed: bool = True

    def rows(self):
        out = []
        for i, t in enumerate(self.times):
            for j, e in enumerate(self.eps_levels):
                ok = self.empirical_tail[i, j] <= \
                    self.bound[j] + 3.0 * self.standard_errors[i, j]
                out.append(CheckRow(
                    check="concentration", quantity=f"P(tail) eps={e:g}",
                    time=float(t), observed=float(self.empirical_tail[i, j]),
                    bound=float(self.bound[j]), passed=bool(ok)))
        return out


def delta_integrand_values(batch: BatchPaths, noise, times, idx):
    """Per-path running integral sum sigma_inf(t_j)^2 ||W_j - X_j||^2 h."""
    if batch.W is None:
        raise MissingAuxiliary("paths lack the auxiliary process W")
    h = times[1] - times[0]
    sup2 = np.asarray(noise.sup_norm(times[:-1])) ** 2
    gap2 = np.sum((batch.W[:, :-1] - batch.X[:, :-1]) ** 2, axis=2)
    acc = np.concatenate(
        [np.zeros((batch.n_paths, 1)), np.cumsum(sup2 * gap2 * h, axis=1)],
        axis=1)
    return acc[:, idx]


def concentration_check(value_at_avg: np.ndarray, delta_stats: SeriesStats,
                        op, noise, x0, xstar, eps_levels, times, n_paths,
                        slack=3.0, bound_scale=1.0) -> ConcentrationReport:
    """Empirical tail of Delta phi(avg X_t) against Q0 + eps Q1 levels.

    value_at_avg has shape (n_paths, n_times); delta_stats carries the Monte
    Carlo estimate of delta(t).
    """
    times = np.asarray(times, dtype=float)
    eps_levels = np.asarray(eps_levels, dtype=float)
    e0 = 0.5 * float(np.sum((np.asarray(x0, dtype=float) - xstar) ** 2))
    q0 = np.array([(noise.sup_sq_integral(0.0, t) + 2.0 * e0) / t
                   for t in times])
    delta_hat = np.maximum(delta_stats.mean, 0.0)
    q1 = np.sqrt(delta_hat) / times
    bound = bound_scale * np.exp(-eps_levels ** 2 / 4.0)
    tails = np.empty((len(times), len(eps_levels)))
    ses = np.empty_like(tails)
    for i in range(len(times)):
        for j, e in enumerate(eps_levels):
            exceed = value_at_avg[:, i] >= q0[i] + e * q1[i]
            p = float(np.mean(exceed))
            tails[i, j] = p
            ses[i, j] = math.sqrt(max(p * (1 - p), 0.0) / n_paths)
    passed = bool(np.all(tails <= bound[None, :] + slack * ses))
    return ConcentrationReport(times=times, q0=q0, q1=q1,
                               delta_hat=delta_hat, eps_levels=eps_levels,
                               empirical_tail=tails, bound=bound,
                               n_paths=n_paths, standard_errors=ses,
                               passed=passed)


# -- tikhonov ------------------------------------------------------------------

def tail_sup_values(batch: BatchPaths, reference, r_indices):
    """Per-path sup_{k >= r} ||X_k - reference_k||^2 for each index r."""
    gap2 = np.sum((batch.X - reference[None, :, :]) ** 2, axis=2)
    rev_max = np.maximum.accumulate(gap2[:, ::-1], axis=1)[:, ::-1]
    return rev_max[:, r_indices]


def tikhonov_budget(tik: TikhonovSchedule, noise: NoiseModel, r):
    """z_r + int_r^inf sigma_inf^2, the discrepancy budget of the rate bound."""
    if tik.is_off:
        raise ScheduleOff("budget needs an active schedule")
    return float(tik.drift_ratio_tail(r)) + noise.sup_sq_integral(float(r), math.inf)


@dataclass
class TikhonovReport:
    r_values: np.ndarray
    flow_sup_mean: np.ndarray      # E sup_{s>=r} ||X_s - x(s)||^2
    flow_sup_se: np.ndarray
    curve_sup_mean: np.ndarray     # E sup_{s>=r} ||X_s - x_{eps(s)}||^2
    curve_sup_se: np.ndarray
    budgets: np.ndarray
    ratios: np.ndarray             # curve_sup_mean / budget
    final_dist_mean: float         # E ||X_T - proj_S(0)||^2
    final_budget: Optional[float]  # eps(T)^{1/p} + z_T^2 + noise tail
    passed: bool
    rows: list = field(default_factory=list)


def tikhonov_checks(flow_sup: SeriesStats, curve_sup: SeriesStats,
                    final_dist: SeriesStats, op, tik, noise,
                    flow_threshold=0.05, ratio_factor=3.0,
                    slack=3.0) -> TikhonovReport:
    """Tail-sup decrease of the flow discrepancy, boundedness/stability of
    the discrepancy-to-budget ratio, and the error-bound rate report."""
    if tik.is_off:
        raise ScheduleOff("tikhonov checks need an active schedule")
    r_values = flow_sup.times
    budgets = np.array([tikhonov_budget(tik, noise, r) for r in r_values])
    ratios = curve_sup.mean / budgets
    rows = []
    # (i) flow-discrepancy tail sup decreasing toward <= threshold
    dec_ok = True
    for j in range(1, len(r_values)):
        if flow_sup.mean[j] > flow_sup.mean[j - 1] \
                + slack * (flow_sup.se[j] + flow_sup.se[j - 1]):
            dec_ok = False
    final_ok = flow_sup.mean[-1] <= flow_threshold + slack * flow_sup.se[-1]
    rows.append(CheckRow(check="tikhonov", quantity="E sup||X - flow||^2 @ last r",
                         time=float(r_values[-1]),
                         observed=float(flow_sup.mean[-1]),
                         bound=flow_threshold, passed=bool(final_ok and dec_ok)))
    # (ii) ratio finite and stable across r
    finite = bool(np.all(np.isfinite(ratios)))
    pos = ratios[ratios > 0]
    stable = bool(len(pos) == 0 or pos.max() / max(pos.min(), 1e-300)
                  <= ratio_factor)
    rows.append(CheckRow(check="tikhonov", quantity="sup ratio / inf ratio",
                         time=float(r_values[-1]),
                         observed=float(pos.max() / max(pos.min(), 1e-300))
                         if len(pos) else 0.0,
                         bound=ratio_factor, passed=bool(finite and stable)))
    # (iii) final-state distance against the error-bound budget (reported;
    # a verdict only when the potential declares an error bound)
    final_budget = None
    eb = op.potential.error_bound if op.potential is not None else None
    if eb is not None:
        T = float(final_dist.times[-1])
        final_budget = float(tik.epsilon(T)) ** (1.0 / eb["p"]) \
            + float(tik.drift_ratio_tail(T)) ** 2 \
            + noise.sup_sq_integral(T, math.inf)
        rows.append(CheckRow(check="tikhonov",
                             quantity="E||X_T - proj_S(0)||^2 / budget",
                             time=T,
                             observed=float(final_dist.mean[-1]),
                             bound=final_budget,
                             passed=True))
    passed = bool(dec_ok and final_ok and finite and stable)
    return TikhonovReport(
        r_values=r_values, flow_sup_mean=flow_sup.mean, flow_sup_se=flow_sup.se,
        curve_sup_mean=curve_sup.mean, curve_sup_se=curve_sup.se,
        budgets=budgets, ratios=ratios,
        final_dist_mean=float(final_dist.mean[-1]), final_budget=final_budget,
        passed=passed, rows=rows)


# -- gap-function slope --------------------------------------------------------

def gap_slope_check(stats: SeriesStats, window, exponent_range=(-1.3, -0.7)) \
        -> CheckOutcome:
    """Fitted power-law exponent of the mean localized gap at the average."""
    fit = fit_rate(stats.times, stats.mean, model="power", window=window)
    lo, hi = exponent_range
    ok = lo <= fit.exponent <= hi
    row = CheckRow(check="gap_slope", quantity="power-law exponent",
                   time=float(window[1]), observed=fit.exponent,
                   bound=hi, passed=bool(ok))
    return CheckOutcome(name="gap_slope", passed=bool(ok), rows=[row],
                        notes=f"r^2={fit.r_squared:.4f} over t in "
                              f"[{window[0]:g}, {window[1]:g}]")


# -- strong-order study on the closed-form oracle -------------------------------

@dataclass
class OrderStudy:
    h_values: np.ndarray
    rms_errors: np.ndarray
    order: float                  # fitted log2 slope
    x2_max: float                 # max |X^2| across paths (feasibility)
    y2_max: float
    m2_residual: float            # max |M^2 + accumulated noise|


def oracle_order_study(op, noise, x0, t_final, h_levels, n_paths, master_seed,
                       path_offset=2 ** 32):
    """Strong-error order of the scheme against the exactly discretized
    closed-form solution of the reduced linear dynamics.

    Requires an operator whose reduction is one-dimensional linear with no
    constant term (the restricted-quadratic line operator qualifies), a
    deterministic state-independent noise, and no Tikhonov drift.  The same
    Brownian paths are shared across levels by refinement from the finest
    grid.
    """
    from .integrator import brownian_increments, simulate_batch
    from .subspace import reduce_operator

    info = domain_subspace(op)
    red = reduce_operator(op, info)
    if not isinstance(red, ops.Linear) or red.dim != 1 \
            or abs(float(red.b[0])) > 0:
        raise IncompatibleMetric("oracle needs a 1-D homogeneous reduction")
    if noise.coupling is not None:
        raise IncompatibleMetric("oracle needs state-independent noise")
    q = float(red.Q[0, 0])
    h_levels = np.asarray(sorted(h_levels, reverse=True), dtype=float)
    h_fine = h_levels[-1]
    n_fine = int(round(t_final / h_fine))
    dB_fine = brownian_increments(master_seed,
                                  [path_offset + i for i in range(n_paths)],
                                  n_fine, noise.wiener_dim, h_fine)
    tik = TikhonovSchedule("off")
    x0 = np.asarray(x0, dtype=float)
    z0 = float(info.to_reduced(x0)[0])
    errors = []
    extras = {"x2": 0.0, "y2": 0.0, "m2": 0.0}
    for h in h_levels:
        factor = int(round(h / h_fine))
        n_steps = n_fine // factor
        dB = dB_fine[:, :n_steps * factor].reshape(n_paths, n_steps, factor,
                                                   -1).sum(axis=2)
        grid = Grid(t_final=t_final, h=float(h))
        batch = simulate_batch(op, info, noise, tik, x0, grid, dB=dB)
        times = grid.times
        # exact reference driven by the same projected increments
        scale = np.asarray(noise.scale(times[:-1]))
        final_err = np.empty(n_paths)
        B = info.basis
        for i in range(n_paths):
            w = (dB[i] @ noise.base.T * scale[:, None]) @ B.T
            zref = _exact_scalar_ou(q, z0, w[:, 0], times)
            zsim = info.to_reduced(batch.X[i])[:, 0]
            final_err[i] = zsim[-1] - zref[-1]
        errors.append(float(np.sqrt(np.mean(final_err ** 2))))
        if op.dim > 1:
            off_axes = np.abs(batch.X @ (np.eye(op.dim) - info.projector))
            extras["x2"] = max(extras["x2"], float(off_axes.max()))
            extras["y2"] = max(extras["y2"], float(
                np.abs(batch.Y @ (np.eye(op.dim) - info.projector)).max()))
            noise_acc = np.concatenate(
                [np.zeros((n_paths, 1, op.dim)),
                 np.cumsum(batch.noise_inc, axis=1)], axis=1)
            resid = batch.M + noise_acc @ (np.eye(op.dim) - info.projector)
            extras["m2"] = max(extras["m2"], float(np.abs(resid).max()))
    errors = np.asarray(errors)
    slopes = np.polyfit(np.log2(h_levels), np.log2(errors), 1)
    return OrderStudy(h_values=h_levels, rms_errors=errors,
                      order=float(slopes[0]), x2_max=extras["x2"],
                      y2_max=extras["y2"], m2_residual=extras["m2"])


def _exact_scalar_ou(q, z0, w, times):
    growth = np.exp(q * times[:-1]) * w
    acc = np.concatenate([[0.0], np.cumsum(growth)])
    return np.exp(-q * times) * (z0 + acc)
