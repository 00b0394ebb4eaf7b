import math

import numpy as np
import pytest

from monotone_sdi import diagnostics as diag
from monotone_sdi import integrator as integ
from monotone_sdi import operators as ops
from monotone_sdi.errors import (
    DegenerateWindow,
    IncompatibleMetric,
    NotStronglyMonotone,
    ScheduleOff,
)
from monotone_sdi.schedules import NoiseModel, TikhonovSchedule, zero_noise
from monotone_sdi.subspace import domain_subspace

OFF = TikhonovSchedule("off")


class TestRunningAverage:
    def test_constant(self):
        times = np.linspace(0, 2, 33)
        X = np.full((1, 33, 2), 3.5)
        avg = diag.running_average(X, times)
        assert np.allclose(avg, 3.5, atol=1e-15)

    def test_linear_in_time_exact(self):
        times = np.linspace(0, 4, 65)
        X = times[:, None].copy()  # x(s) = s -> average t/2
        avg = diag.running_average(X, times)
        assert np.allclose(avg[1:, 0], times[1:] / 2, atol=1e-14)
        # general affine trajectory stays exact to machine precision
        X2 = 1.7 * times[:, None] - 0.3
        avg2 = diag.running_average(X2, times)
        assert np.allclose(avg2[1:, 0], 1.7 * times[1:] / 2 - 0.3, atol=1e-13)

    def test_skew_rotation_average_bound(self, skew_op):
        grid = integ.Grid(t_final=10.0, h=1e-3)
        flow = integ.simulate_deterministic_flow(skew_op, OFF, [1.0, 0.0], grid)
        avg = diag.running_average(flow, grid.times)
        times = grid.times
        mask = times >= 1.0
        norms = np.linalg.norm(avg[mask], axis=1)
        assert np.all(norms <= 2.0 / times[mask] + 1e-12)

    def test_jensen_consistency(self, identity_op):
        noise = NoiseModel([[1.0]], schedule="power_decay", sigma0=0.5, p=1.0)
        grid = integ.Grid(t_final=4.0, h=2.0 ** -7)
        path = integ.simulate_path(identity_op, noise, OFF, [2.0], grid, seed=8)
        avg = diag.ergodic_average(path)
        phi_avg = np.asarray(identity_op.potential.evaluate(avg))
        phi_path = np.asarray(identity_op.potential.evaluate(path.X))
        run_phi = diag.running_average(phi_path[:, None], grid.times)[:, 0]
        tol = 1e-8 * (1.0 + float(phi_path.max()))
        assert np.all(phi_avg <= run_phi + tol)


class TestFitRate:
    def test_power_law_planted(self):
        t = np.linspace(1, 100, 300)
        fit = diag.fit_rate(t, 1.0 / t, model="power")
        assert fit.exponent == pytest.approx(-1.0, abs=1e-6)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_exponential_planted(self):
        t = np.linspace(0, 5, 200)
        fit = diag.fit_rate(t, np.exp(-2 * t), model="exp")
        assert fit.exponent == pytest.approx(2.0, abs=1e-6)

    def test_window_and_clipping(self):
        t = np.linspace(0.5, 50, 500)
        y = 3.0 * t ** -0.5
        y[-3:] = 0.0  # clipped out with a flag
        fit = diag.fit_rate(t, y, model="power", window=(1.0, 50.0))
        assert fit.exponent == pytest.approx(-0.5, abs=1e-6)
        assert fit.clipped

    def test_degenerate_window(self):
        t = np.linspace(1, 10, 50)
        with pytest.raises(DegenerateWindow):
            diag.fit_rate(t, 1 / t, model="power", window=(9.8, 10.0))


def _make_ctx(op, noise, tik, grid, x0, **kw):
    return diag.build_context(op, noise, tik, grid, x0, **kw)


class TestMetrics:
    def test_dist_sq_on_constant_path(self, hinge_op):
        grid = integ.Grid(t_final=1.0, h=0.1)
        info = domain_subspace(hinge_op)
        batch = integ.simulate_batch(hinge_op, info, zero_noise(1), OFF,
                                     [0.5], grid,
                                     dB=np.zeros((1, grid.n_steps, 1)))
        ctx = _make_ctx(hinge_op, zero_noise(1), OFF, grid, np.array([0.5]))
        spec = diag.MetricSpec(kind="dist_sq_to_point",
                               point=np.array([0.5]))
        vals = diag.metric_values(spec, batch, ctx, np.arange(11))
        assert np.allclose(vals, 0.0, atol=1e-28)

    def test_value_gap_hits_zero_near_t_one(self, abs_op):
        grid = integ.Grid(t_final=2.0, h=2.0 ** -7)
        info = domain_subspace(abs_op)
        batch = integ.simulate_batch(abs_op, info, zero_noise(1), OFF, [1.0],
                                     grid, dB=np.zeros((1, grid.n_steps, 1)))
        ctx = _make_ctx(abs_op, zero_noise(1), OFF, grid, np.array([1.0]))
        idx = np.arange(grid.n_steps + 1)
        vals = diag.metric_values(diag.MetricSpec(kind="value_gap"), batch,
                                  ctx, idx)[0]
        first_zero = grid.times[np.argmax(vals <= 1e-12)]
        assert first_zero == pytest.approx(1.0, abs=2 * grid.h)

    def test_tikhonov_discrepancy_closed_form(self, shifted_identity):
        tik = TikhonovSchedule("power_eps", eps0=1.0, q=0.5)
        grid = integ.Grid(t_final=2.0, h=0.125)
        ctx = _make_ctx(shifted_identity, zero_noise(1), tik, grid,
                        np.array([1.0]), need_curve=True)
        # x_{eps(t)} = 1 / (1 + eps(t)) for A(x) = x - 1
        eps = tik.epsilon(grid.times)
        assert np.allclose(ctx.curve[:, 0], 1.0 / (1.0 + eps), atol=1e-12)
        info = domain_subspace(shifted_identity)
        batch = integ.simulate_batch(shifted_identity, info, zero_noise(1),
                                     tik, [1.0], grid,
                                     dB=np.zeros((1, grid.n_steps, 1)))
        idx = np.arange(grid.n_steps + 1)
        vals = diag.metric_values(diag.MetricSpec(kind="tikhonov_discrepancy"),
                                  batch, ctx, idx)[0]
        direct = np.sum((batch.X[0] - ctx.curve) ** 2, axis=1)
        assert np.allclose(vals, direct, atol=1e-14)

    def test_incompatible_metric_raises(self, skew_op):
        grid = integ.Grid(t_final=1.0, h=0.1)
        ctx = _make_ctx(skew_op, zero_noise(2), OFF, grid, np.zeros(2))
        with pytest.raises(IncompatibleMetric):
            diag.validate_metric(diag.MetricSpec(kind="value_gap"), ctx)
        with pytest.raises(ScheduleOff):
            diag.build_context(skew_op, zero_noise(2), OFF, grid, np.zeros(2),
                               need_curve=True)


def _series(times, mean, var, n, name="s"):
    return diag.SeriesStats(name=name, times=np.asarray(times, float),
                            mean=np.asarray(mean, float),
                            var=np.asarray(var, float), n=n)


class TestStrongRateCheck:
    def test_deterministic_contraction_rate(self, identity_op):
        # with zero noise the scheme contracts at rate log(1+h)/h, slightly
        # below the flow rate 1; the lhs therefore sits an O(h) factor above
        # the exact bound and passes once that factor is granted
        grid = integ.Grid(t_final=4.0, h=2.0 ** -7)
        flow = integ.simulate_deterministic_flow(identity_op, OFF, [2.0], grid)
        times = np.array([1.0, 2.0, 4.0])
        idx = (times / grid.h).astype(int)
        vals = np.sum(flow[idx] ** 2, axis=1)
        rho_hat = math.log1p(grid.h) / grid.h
        assert np.allclose(vals, np.exp(-2 * rho_hat * times) * 4.0,
                           rtol=1e-12)
        stats = _series(times, vals, np.zeros(3), 1)
        allowance = math.exp(2 * (1.0 - rho_hat) * grid.t_final)
        out = diag.strong_rate_check(stats, identity_op, zero_noise(1),
                                     np.array([2.0]), np.zeros(1),
                                     rhs_scale=allowance)
        assert out.passed

    def test_detector_on_halved_bound(self, identity_op):
        # contraction alone sits at the bound, so halving the rhs must trip
        grid = integ.Grid(t_final=4.0, h=2.0 ** -7)
        flow = integ.simulate_deterministic_flow(identity_op, OFF, [2.0], grid)
        times = np.array([1.0, 2.0, 4.0])
        idx = (times / grid.h).astype(int)
        vals = np.sum(flow[idx] ** 2, axis=1)
        stats = _series(times, vals, np.zeros(3), 1)
        out = diag.strong_rate_check(stats, identity_op, zero_noise(1),
                                     np.array([2.0]), np.zeros(1),
                                     rhs_scale=0.5)
        assert not out.passed

    def test_requires_modulus(self, skew_op):
        stats = _series([1.0], [0.1], [0.0], 4)
        with pytest.raises(NotStronglyMonotone):
            diag.strong_rate_check(stats, skew_op, zero_noise(2), np.zeros(2),
                                   np.zeros(2))


class TestErgodicValueCheck:
    def test_at_solution_lhs_zero(self, identity_op):
        times = np.array([1.0, 2.0])
        stats = _series(times, [0.0, 0.0], [0.0, 0.0], 8)
        out = diag.ergodic_value_check(stats, identity_op, zero_noise(1),
                                       np.zeros(1))
        assert out.passed

    def test_loosened_bound_still_dominates(self, identity_op):
        # doubling the rhs (removing the one-half factors) keeps it valid
        grid = integ.Grid(t_final=4.0, h=2.0 ** -7)
        noise = NoiseModel([[1.0]], schedule="power_decay", sigma0=0.5, p=1.0)
        info = domain_subspace(identity_op)
        dB = integ.brownian_increments(3, range(64), grid.n_steps, 1, grid.h)
        batch = integ.simulate_batch(identity_op, info, noise, OFF, [2.0],
                                     grid, dB=dB)
        ctx = _make_ctx(identity_op, noise, OFF, grid, np.array([2.0]))
        times = np.array([2.0, 4.0])
        idx = (times / grid.h).astype(int)
        vals = diag.metric_values(diag.MetricSpec(kind="ergodic_value_gap"),
                                  batch, ctx, idx)
        stats = _series(times, vals.mean(axis=0), vals.var(axis=0, ddof=1), 64)
        for scale in (1.0, 2.0):
            out = diag.ergodic_value_check(stats, identity_op, noise,
                                           np.array([2.0]), rhs_scale=scale)
            assert out.passed
        out = diag.ergodic_value_check(stats, identity_op, noise,
                                       np.array([2.0]), rhs_scale=0.02)
        assert not out.passed


class TestConcentration:
    def test_bound_values_exact(self):
        report = diag.concentration_check(
            value_at_avg=np.zeros((16, 1)),
            delta_stats=_series([5.0], [0.1], [0.0], 16),
            op=ops.Linear([[1.0]], as_subdifferential=True),
            noise=NoiseModel([[1.0]], schedule="power_decay", sigma0=0.5,
                             p=1.0),
            x0=np.array([2.0]), xstar=np.zeros(1),
            eps_levels=[1.0, 2.0, 3.0], times=[5.0], n_paths=16)
        assert report.bound[1] == pytest.approx(math.exp(-1.0))
        assert report.bound == pytest.approx(np.exp(-np.array([1, 4, 9]) / 4))
        assert report.passed
        assert np.all(report.empirical_tail == 0.0)

    def test_detector_synthetic_violation(self):
        # all mass far above Q0 + eps Q1 must trip every level
        report = diag.concentration_check(
            value_at_avg=np.full((64, 1), 100.0),
            delta_stats=_series([5.0], [0.01], [0.0], 64),
            op=ops.Linear([[1.0]], as_subdifferential=True),
            noise=zero_noise(1), x0=np.array([2.0]), xstar=np.zeros(1),
            eps_levels=[1.0], times=[5.0], n_paths=64)
        assert not report.passed
        assert report.empirical_tail[0, 0] == 1.0

    def test_q0_closed_form(self):
        noise = NoiseModel([[1.0]], schedule="power_decay", sigma0=0.5, p=1.0)
        report = diag.concentration_check(
            value_at_avg=np.zeros((4, 1)),
            delta_stats=_series([10.0], [0.0], [0.0], 4),
            op=ops.Linear([[1.0]], as_subdifferential=True), noise=noise,
            x0=np.array([2.0]), xstar=np.zeros(1), eps_levels=[2.0],
            times=[10.0], n_paths=4)
        expected = (noise.sup_sq_integral(0, 10.0) + 4.0) / 10.0
        assert report.q0[0] == pytest.approx(expected, rel=1e-12)


class TestTikhonovChecks:
    def test_budget_closed_form(self):
        tik = TikhonovSchedule("power_eps", eps0=1.0, q=0.5)
        noise = NoiseModel([[1.0]], schedule="power_decay", sigma0=0.5, p=1.0)
        for r in (2.0, 5.0, 10.0):
            expected = 0.5 * (1 + r) ** -0.5 + 0.25 / (1 + r)
            assert diag.tikhonov_budget(tik, noise, r) == \
                pytest.approx(expected, rel=1e-12)
        assert np.all(np.diff([diag.tikhonov_budget(tik, noise, r)
                               for r in (2.0, 5.0, 10.0)]) < 0)

    def test_tail_sup_values_bruteforce(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(3, 20, 2))
        ref = rng.normal(size=(20, 2))
        batch = integ.BatchPaths(grid=integ.Grid(t_final=19.0, h=1.0),
                                 X=X, Y=X * 0, M=X * 0, W=X * 0,
                                 noise_inc=np.zeros((3, 19, 2)),
                                 drift=np.zeros((3, 20, 2)))
        out = diag.tail_sup_values(batch, ref, np.array([0, 7, 15]))
        gap2 = np.sum((X - ref) ** 2, axis=2)
        for j, r in enumerate((0, 7, 15)):
            assert np.allclose(out[:, j], gap2[:, r:].max(axis=1))

    def test_schedule_off_raises(self):
        stats = _series([1.0], [0.1], [0.0], 4)
        op = ops.Linear([[1.0]])
        noise = zero_noise(1)
        with pytest.raises(ScheduleOff):
            diag.tikhonov_checks(stats, stats, stats, op, OFF, noise)


class TestGapSlope:
    def test_planted_slope_passes(self):
        t = np.geomspace(5, 20, 17)
        stats = _series(t, 2.0 / t, np.zeros(17), 128)
        out = diag.gap_slope_check(stats, window=(5.0, 20.0))
        assert out.passed
        assert out.rows[0].observed == pytest.approx(-1.0, abs=1e-9)

    def test_wrong_slope_fails(self):
        t = np.geomspace(5, 20, 17)
        stats = _series(t, 2.0 / t ** 0.2, np.zeros(17), 128)
        out = diag.gap_slope_check(stats, window=(5.0, 20.0))
        assert not out.passed
