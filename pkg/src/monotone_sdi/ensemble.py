"""Ensemble execution: deterministic seeding, streaming statistics,
theorem-check orchestration, and report persistence.

Paths are simulated in fixed blocks of consecutive indices; each path draws
its Brownian increments from its own (master_seed, path_index) stream, and
block results are merged in ascending block order, so the output is
bit-identical for any worker count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from . import diagnostics as diag
from . import operators as ops
from .errors import GridMismatch, IoFailure, MissingManifest
from .integrator import Path, brownian_increments, simulate_batch
from .scenario import Scenario

BLOCK_SIZE = 256

ENSEMBLE_HEADER = "t,metric,mean,var,ci_lo,ci_hi,n_paths"
CONCENTRATION_HEADER = "t,eps,q0,q1_hat,empirical_tail,bound,se"
CHECKS_HEADER = "check,quantity,time,observed,bound,verdict"


def resolve_workers(env=None):
    """Worker cap from MONOTONE_SDI_THREADS (0 or unset = auto)."""
    env = os.environ if env is None else env
    raw = env.get("MONOTONE_SDI_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = min(os.cpu_count() or 1, 8)
    return max(n, 1)


class Welford:
    """Streaming mean/M2 merged block-by-block in a fixed order."""

    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def add_block(self, values):
        values = np.asarray(values, dtype=float)
        nb = values.shape[0]
        if nb == 0:
            return
        bmean = values.mean(axis=0)
        bm2 = np.sum((values - bmean) ** 2, axis=0)
        if self.n == 0:
            self.n, self.mean, self.m2 = nb, bmean, bm2
            return
        if bmean.shape != self.mean.shape:
            raise GridMismatch("series shapes disagree")
        delta = bmean - self.mean
        total = self.n + nb
        self.mean = self.mean + delta * (nb / total)
        self.m2 = self.m2 + bm2 + delta ** 2 * (self.n * nb / total)
        self.n = total

    def result(self):
        var = (self.m2 / (self.n - 1)) if self.n > 1 else np.zeros_like(self.m2)
        return self.mean, var, self.n


def reduce_stats(series_collection, times, name="series") -> diag.SeriesStats:
    """Welford reduction of per-path series sharing one time grid.

    series_collection is either a sequence of per-path arrays (reduced in
    the given order) or of (path_index, array) pairs, reduced in ascending
    path-index order regardless of arrival order.
    """
    times = np.asarray(times, dtype=float)
    items = list(series_collection)
    if items and isinstance(items[0], tuple):
        items = [s for _, s in sorted(items, key=lambda kv: kv[0])]
    acc = Welford()
    for series in items:
        series = np.atleast_2d(np.asarray(series, dtype=float))
        if series.shape[1] != times.shape[0]:
            raise GridMismatch("series length does not match the grid")
        acc.add_block(series)
    mean, var, n = acc.result()
    return diag.SeriesStats(name=name, times=times, mean=mean, var=var, n=n)


@dataclass
class QuantityPlan:
    key: str
    times: np.ndarray
    indices: np.ndarray
    evaluator: Callable
    collect_matrix: bool = False


@dataclass
class RunResult:
    scenario: Scenario
    stats: dict
    matrices: dict
    outcomes: list
    concentration: Optional[diag.ConcentrationReport] = None
    tikhonov: Optional[diag.TikhonovReport] = None
    oracle: Optional[diag.OrderStudy] = None
    retained: list = field(default_factory=list)

    @property
    def passed(self):
        return all(o.passed for o in self.outcomes)

    def all_rows(self):
        rows = []
        for o in self.outcomes:
            rows.extend(o.rows)
        return rows


def _default_indices(grid, n_points=257, positive=False):
    n = grid.n_steps
    idx = np.unique(np.round(np.linspace(0, n, min(n_points, n + 1))).astype(int))
    if positive:
        idx = idx[idx > 0]
    return idx


def _indices_for_times(grid, times):
    h = grid.h
    idx = np.unique(np.clip(np.round(np.asarray(times, dtype=float) / h), 0,
                            grid.n_steps).astype(int))
    return idx


def _metric_plan(i, spec, ctx, grid):
    if spec.eval_times is not None:
        idx = _indices_for_times(grid, spec.eval_times)
    elif spec.kind == "ergodic_gap_function":
        pos = grid.times[grid.times > 0]
        idx = _indices_for_times(
            grid, np.geomspace(max(pos[0], grid.h), grid.t_final, 33))
    else:
        idx = _default_indices(grid)
    times = grid.times[idx]

    def evaluator(batch, scratch, spec=spec, idx=idx):
        return diag.metric_values(spec, batch, ctx, idx, scratch)

    return QuantityPlan(key=spec.name if i is None else f"{spec.name}#{i}",
                        times=times, indices=idx, evaluator=evaluator)


def build_plans(scn: Scenario, ctx):
    """Quantity plans for configured metrics plus check inputs."""
    grid = scn.grid
    plans = []
    seen = {}
    for spec in scn.metrics:
        diag.validate_metric(spec, ctx)
        seen[spec.kind] = seen.get(spec.kind, 0) + 1
    counters = {}
    for spec in scn.metrics:
        if seen[spec.kind] > 1:
            counters[spec.kind] = counters.get(spec.kind, 0) + 1
            plans.append(_metric_plan(counters[spec.kind], spec, ctx, grid))
        else:
            plans.append(_metric_plan(None, spec, ctx, grid))

    for check in scn.checks:
        if check.kind == "strong_rate":
            idx = (_indices_for_times(grid, check.times)
                   if check.times is not None
                   else _default_indices(grid, positive=True))
            times = grid.times[idx]
            xstar = ctx.xstar

            def ev(batch, scratch, idx=idx, xstar=xstar):
                return np.sum((batch.X[:, idx] - xstar) ** 2, axis=2)

            plans.append(QuantityPlan("check:strong_rate_dist", times, idx, ev))
        elif check.kind == "ergodic_value":
            idx = (_indices_for_times(grid, check.times)
                   if check.times is not None
                   else _default_indices(grid, positive=True))
            times = grid.times[idx]
            spec = diag.MetricSpec(kind="ergodic_value_gap")

            def ev(batch, scratch, spec=spec, idx=idx):
                return diag.metric_values(spec, batch, ctx, idx, scratch)

            plans.append(QuantityPlan("check:ergodic_value_gap", times, idx, ev))
            if ctx.op.potential.strong_convexity_modulus > 0:
                xstar = ctx.xstar

                def ev2(batch, scratch, idx=idx, xstar=xstar):
                    xbar = diag._xbar(batch, ctx, scratch)
                    return np.sum((xbar[:, idx] - xstar) ** 2, axis=2)

                plans.append(QuantityPlan("check:avg_dist", times, idx, ev2))
        elif check.kind == "concentration":
            idx = _indices_for_times(grid, check.times)
            times = grid.times[idx]
            spec = diag.MetricSpec(kind="ergodic_value_gap")

            def ev3(batch, scratch, spec=spec, idx=idx):
                return diag.metric_values(spec, batch, ctx, idx, scratch)

            plans.append(QuantityPlan("check:conc_value", times, idx, ev3,
                                      collect_matrix=True))

            def ev4(batch, scratch, idx=idx):
                return diag.delta_integrand_values(batch, ctx.noise,
                                                   grid.times, idx)

            plans.append(QuantityPlan("check:conc_delta", times, idx, ev4))
        elif check.kind == "tikhonov":
            r_idx = _indices_for_times(grid, check.r_values)
            r_times = grid.times[r_idx]

            def ev5(batch, scratch, r_idx=r_idx):
                return diag.tail_sup_values(batch, ctx.flow, r_idx)

            plans.append(QuantityPlan("check:tik_flow_sup", r_times, r_idx, ev5))

            def ev6(batch, scratch, r_idx=r_idx):
                return diag.tail_sup_values(batch, ctx.curve, r_idx)

            plans.append(QuantityPlan("check:tik_curve_sup", r_times, r_idx, ev6))
            last = np.array([grid.n_steps])
            xstar0, _ = ops.zero_set_project(ctx.op, np.zeros(ctx.op.dim))

            def ev7(batch, scratch, last=last, xstar0=xstar0):
                return np.sum((batch.X[:, last] - xstar0) ** 2, axis=2)

            plans.append(QuantityPlan("check:tik_final", grid.times[last],
                                      last, ev7))
        elif check.kind == "gap_slope":
            lo, hi = check.window
            idx = _indices_for_times(grid, np.geomspace(max(lo, grid.h), hi, 17))
            times = grid.times[idx]
            spec = diag.MetricSpec(kind="ergodic_gap_function",
                                   region=check.region, n_grid=check.n_grid)

            def ev8(batch, scratch, spec=spec, idx=idx):
                return diag.metric_values(spec, batch, ctx, idx, scratch)

            plans.append(QuantityPlan("check:gap_series", times, idx, ev8))
        elif check.kind == "oracle":
            pass  # runs standalone after the ensemble
        else:
            raise ValueError(f"unknown check kind {check.kind!r}")
    return plans


def _simulate_block(scn: Scenario, ctx, indices):
    if scn.noise.is_zero:
        dB = np.zeros((len(indices), scn.grid.n_steps, scn.noise.wiener_dim))
    else:
        dB = brownian_increments(scn.master_seed, indices, scn.grid.n_steps,
                                 scn.noise.wiener_dim, scn.grid.h)
    return simulate_batch(scn.op, ctx.info, scn.noise, scn.tik, scn.x0,
                          scn.grid, dB=dB)


def run_ensemble(scn: Scenario, n_paths=None, master_seed=None) -> RunResult:
    """Simulate the ensemble and evaluate all configured metrics and checks."""
    if n_paths is not None or master_seed is not None:
        scn = scn.with_overrides(n_paths=n_paths, master_seed=master_seed)
    need_flow = any(m.kind == "flow_discrepancy" for m in scn.metrics) or \
        any(c.kind == "tikhonov" for c in scn.checks)
    need_curve = any(m.kind == "tikhonov_discrepancy" for m in scn.metrics) or \
        any(c.kind == "tikhonov" for c in scn.checks)
    ctx = diag.build_context(scn.op, scn.noise, scn.tik, scn.grid, scn.x0,
                             need_flow=need_flow, need_curve=need_curve)
    plans = build_plans(scn, ctx)

    n = scn.n_paths
    blocks = [list(range(a, min(a + BLOCK_SIZE, n)))
              for a in range(0, n, BLOCK_SIZE)]

    def work(block):
        batch = _simulate_block(scn, ctx, block)
        scratch = {}
        values = {p.key: p.evaluator(batch, scratch) for p in plans}
        kept = [(i, batch.path(j)) for j, i in enumerate(block)
                if i < scn.retain_paths]
        return values, kept

    workers = resolve_workers()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]

    accs = {p.key: Welford() for p in plans}
    mats = {p.key: [] for p in plans if p.collect_matrix}
    retained = []
    for values, kept in results:  # ascending block order
        for p in plans:
            accs[p.key].add_block(values[p.key])
            if p.collect_matrix:
                mats[p.key].append(values[p.key])
        retained.extend(kept)

    stats = {}
    for p in plans:
        mean, var, count = accs[p.key].result()
        stats[p.key] = diag.SeriesStats(name=p.key, times=p.times, mean=mean,
                                        var=var, n=count)
    matrices = {k: np.concatenate(v, axis=0) for k, v in mats.items()}

    result = RunResult(scenario=scn, stats=stats, matrices=matrices,
                       outcomes=[], retained=retained)
    _run_checks(result, ctx)
    return result


def _run_checks(result: RunResult, ctx):
    scn = result.scenario
    for check in scn.checks:
        if check.kind == "strong_rate":
            outcome = diag.strong_rate_check(
                result.stats["check:strong_rate_dist"], scn.op, scn.noise,
                scn.x0, ctx.xstar, slack=check.slack,
                rhs_scale=check.rhs_scale)
        elif check.kind == "ergodic_value":
            avg_stats = result.stats.get("check:avg_dist")
            outcome = diag.ergodic_value_check(
                result.stats["check:ergodic_value_gap"], scn.op, scn.noise,
                scn.x0, avg_dist_stats=avg_stats, xstar=ctx.xstar,
                slack=check.slack, rhs_scale=check.rhs_scale)
        elif check.kind == "concentration":
            report = diag.concentration_check(
                result.matrices["check:conc_value"],
                result.stats["check:conc_delta"], scn.op, scn.noise, scn.x0,
                ctx.xstar, check.eps_levels, result.stats["check:conc_value"].times,
                scn.n_paths, slack=check.slack, bound_scale=check.rhs_scale)
            result.concentration = report
            outcome = diag.CheckOutcome(name="concentration",
                                        passed=report.passed,
                                        rows=report.rows())
        elif check.kind == "tikhonov":
            report = diag.tikhonov_checks(
                result.stats["check:tik_flow_sup"],
                result.stats["check:tik_curve_sup"],
                result.stats["check:tik_final"], scn.op, scn.tik, scn.noise,
                flow_threshold=check.flow_threshold,
                ratio_factor=check.ratio_factor, slack=check.slack)
            result.tikhonov = report
            outcome = diag.CheckOutcome(name="tikhonov", passed=report.passed,
                                        rows=report.rows)
        elif check.kind == "gap_slope":
            outcome = diag.gap_slope_check(result.stats["check:gap_series"],
                                           check.window, check.exponent_range)
        elif check.kind == "oracle":
            study = diag.oracle_order_study(
                scn.op, scn.noise, scn.x0, check.oracle_t_final,
                check.h_levels, check.oracle_paths, scn.master_seed)
            result.oracle = study
            ok = study.order >= check.min_order
            row = diag.CheckRow(check="oracle", quantity="strong order (log2 slope)",
                                time=check.oracle_t_final, observed=study.order,
                                bound=check.min_order, passed=bool(ok))
            rms_row = diag.CheckRow(
                check="oracle", quantity=f"oracle RMS @ h={study.h_values[-1]:g}",
                time=check.oracle_t_final, observed=float(study.rms_errors[-1]),
                bound=math.inf, passed=True)
            outcome = diag.CheckOutcome(name="oracle", passed=bool(ok),
                                        rows=[row, rms_row])
        else:
            continue
        result.outcomes.append(outcome)


# ---------------------------------------------------------------------------
# CSV / report persistence.
# ---------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def export_ensemble_csv(stats: dict, target) -> int:
    """Long-format metric series CSV; returns bytes written."""
    lines = [ENSEMBLE_HEADER]
    for key, s in stats.items():
        lo, hi = s.ci()
        for j, t in enumerate(s.times):
            lines.append(",".join([_fmt(t), key, _fmt(s.mean[j]), _fmt(s.var[j]),
                                   _fmt(lo[j]), _fmt(hi[j]), str(s.n)]))
    return _write_lines(target, lines)


def export_concentration_csv(report, target) -> int:
    lines = [CONCENTRATION_HEADER]
    if report is not None:
        for i, t in enumerate(report.times):
            for j, e in enumerate(report.eps_levels):
                lines.append(",".join([
                    _fmt(t), _fmt(e), _fmt(report.q0[i]), _fmt(report.q1[i]),
                    _fmt(report.empirical_tail[i, j]), _fmt(report.bound[j]),
                    _fmt(report.standard_errors[i, j])]))
    return _write_lines(target, lines)


def export_path_csv(path: Path, target) -> int:
    """Per-path dump of retained grid points; 17 significant digits."""
    d = path.dim
    header = "t," + ",".join(
        f"{tag}_{i}" for tag in ("x", "y", "m", "w") for i in range(d))
    lines = [header]
    idx = path.grid.retained_indices()
    times = path.times
    for k in idx:
        row = [_fmt(times[k])]
        for arr in (path.X, path.Y, path.M, path.W):
            row.extend(_fmt(v) for v in arr[k])
        lines.append(",".join(row))
    return _write_lines(target, lines)


def export_checks_csv(rows, target) -> int:
    lines = [CHECKS_HEADER]
    for r in rows:
        lines.append(",".join([r.check, r.quantity.replace(",", ";"),
                               _fmt(r.time), _fmt(r.observed), _fmt(r.bound),
                               "pass" if r.passed else "FAIL"]))
    return _write_lines(target, lines)


def _write_lines(target, lines) -> int:
    data = "\n".join(lines) + "\n"
    try:
        with open(target, "w", newline="\n") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return len(data.encode())


def write_report_tree(result: RunResult, outdir) -> None:
    """report tree: ensemble.csv, concentration.csv, checks.csv,
    paths/path_<i>.csv, manifest."""
    os.makedirs(outdir, exist_ok=True)
    export_ensemble_csv(result.stats, os.path.join(outdir, "ensemble.csv"))
    export_concentration_csv(result.concentration,
                             os.path.join(outdir, "concentration.csv"))
    export_checks_csv(result.all_rows(), os.path.join(outdir, "checks.csv"))
    pdir = os.path.join(outdir, "paths")
    os.makedirs(pdir, exist_ok=True)
    for i, path in result.retained:
        export_path_csv(path, os.path.join(pdir, f"path_{i}.csv"))
    manifest = {
        "digest": result.scenario.digest,
        "master_seed": result.scenario.master_seed,
        "version": __version__,
    }
    with open(os.path.join(outdir, "manifest"), "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(indir) -> dict:
    target = os.path.join(indir, "manifest")
    if not os.path.exists(target):
        raise MissingManifest(f"no manifest under {indir}")
    with open(target) as fh:
        return json.load(fh)
