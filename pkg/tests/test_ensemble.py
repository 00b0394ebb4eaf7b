import os

import numpy as np
import pytest
import yaml

from monotone_sdi import diagnostics as diag
from monotone_sdi import ensemble as ens
from monotone_sdi import integrator as integ
from monotone_sdi.errors import GridMismatch, MissingManifest
from monotone_sdi.scenario import build_scenario

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


def tiny_scenario(n_paths=2, seed=7, noise="zero", out="report", extra=None):
    doc = {
        "operator": {"kind": "linear", "q": [[1.0]], "potential": True},
        "noise": {"schedule": noise, "sigma0": 0.5, "p": 1.0},
        "x0": [1.0],
        "grid": {"t_final": 1.0, "h": 0.015625, "thin": 4},
        "ensemble": {"n_paths": n_paths, "master_seed": seed,
                     "retain_paths": 1},
        "metrics": [{"kind": "dist_sq_to_point", "point": [0.0]}],
        "output_dir": out,
    }
    if extra:
        doc.update(extra)
    return build_scenario(doc)


class TestReduceStats:
    def test_two_constant_series(self):
        stats = ens.reduce_stats([np.array([[1.0]]), np.array([[3.0]])],
                                 times=[0.0])
        assert stats.mean[0] == pytest.approx(2.0)
        assert stats.var[0] == pytest.approx(2.0)

    def test_single_series_degenerate(self):
        stats = ens.reduce_stats([np.array([[4.0, 5.0]])], times=[0.0, 1.0])
        assert stats.n == 1
        assert np.all(stats.var == 0.0)
        assert np.all(stats.se == 0.0)  # CI degenerates to the mean

    def test_permuted_input_identical(self):
        rng = np.random.default_rng(1)
        rows = [(i, rng.normal(size=(1, 4))) for i in range(10)]
        fwd = ens.reduce_stats(rows, times=np.arange(4.0))
        perm = [rows[i] for i in (3, 7, 0, 9, 4, 1, 8, 2, 6, 5)]
        bwd = ens.reduce_stats(perm, times=np.arange(4.0))
        assert np.array_equal(fwd.mean, bwd.mean)
        assert np.array_equal(fwd.var, bwd.var)

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            ens.reduce_stats([np.zeros((1, 3))], times=[0.0, 1.0])


class TestRunEnsemble:
    def test_zero_noise_variance_exactly_zero(self):
        scn = tiny_scenario(n_paths=8, noise="zero")
        result = ens.run_ensemble(scn)
        for stats in result.stats.values():
            assert np.all(stats.var == 0.0)

    def test_reproducible_reports(self, tmp_path):
        scn = tiny_scenario(n_paths=8, noise="power_decay")
        a, b = tmp_path / "a", tmp_path / "b"
        ens.write_report_tree(ens.run_ensemble(scn), a)
        ens.write_report_tree(ens.run_ensemble(scn), b)
        for name in ("ensemble.csv", "concentration.csv", "checks.csv",
                     "manifest", "paths/path_0.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_worker_counts_agree(self, tmp_path, monkeypatch):
        doc_runs = {}
        scn = tiny_scenario(n_paths=700, noise="power_decay")
        for w in ("1", "2", "8"):
            monkeypatch.setenv("MONOTONE_SDI_THREADS", w)
            out = tmp_path / f"w{w}"
            ens.write_report_tree(ens.run_ensemble(scn), out)
            doc_runs[w] = (out / "ensemble.csv").read_bytes()
        assert doc_runs["1"] == doc_runs["2"] == doc_runs["8"]

    def test_clt_ci_shrink(self):
        scn = tiny_scenario(n_paths=1024, seed=99, noise="power_decay")
        r1 = ens.run_ensemble(scn)
        r2 = ens.run_ensemble(scn, n_paths=4096)
        s1 = r1.stats["dist_sq_to_point"]
        s2 = r2.stats["dist_sq_to_point"]
        lo1, hi1 = s1.ci()
        lo2, hi2 = s2.ci()
        ratio = (hi2[-1] - lo2[-1]) / (hi1[-1] - lo1[-1])
        assert 0.45 <= ratio <= 0.55

    def test_override_changes_digest(self):
        scn = tiny_scenario()
        other = scn.with_overrides(n_paths=11)
        assert other.n_paths == 11
        assert other.digest != scn.digest
        assert scn.with_overrides(output_dir="elsewhere").digest == scn.digest


class TestExports:
    def test_empty_metrics_header_only(self, tmp_path):
        target = tmp_path / "ensemble.csv"
        ens.export_ensemble_csv({}, target)
        assert target.read_text() == ens.ENSEMBLE_HEADER + "\n"

    def test_golden_bytes(self, tmp_path):
        scn = tiny_scenario(n_paths=2, seed=7, noise="power_decay")
        result = ens.run_ensemble(scn)
        out = tmp_path / "rep"
        ens.write_report_tree(result, out)
        for name in ("ensemble.csv", "paths/path_0.csv", "manifest"):
            got = (out / name).read_bytes()
            frozen = open(os.path.join(GOLDEN_DIR, os.path.basename(name)),
                          "rb").read()
            assert got == frozen, f"{name} drifted from the golden fixture"

    def test_path_csv_roundtrip(self, tmp_path):
        scn = tiny_scenario(n_paths=1, noise="power_decay")
        result = ens.run_ensemble(scn)
        _, path = result.retained[0]
        target = tmp_path / "p.csv"
        ens.export_path_csv(path, target)
        rows = np.loadtxt(target, delimiter=",", skiprows=1)
        d = path.dim
        idx = path.grid.retained_indices()
        assert np.allclose(rows[:, 0], path.times[idx], atol=0)
        # 17 significant digits round-trip doubles exactly
        X = rows[:, 1:1 + d]
        Y = rows[:, 1 + d:1 + 2 * d]
        M = rows[:, 1 + 2 * d:1 + 3 * d]
        W = rows[:, 1 + 3 * d:1 + 4 * d]
        assert np.array_equal(X, path.X[idx])
        assert np.array_equal(Y, path.Y[idx])
        assert np.array_equal(M, path.M[idx])
        assert np.array_equal(W, path.W[idx])
        before = integ.decomposition_residual(path)
        path.X[idx] = X
        path.Y[idx] = Y
        path.M[idx] = M
        assert abs(integ.decomposition_residual(path) - before) <= 1e-12

    def test_read_manifest_missing(self, tmp_path):
        with pytest.raises(MissingManifest):
            ens.read_manifest(tmp_path / "nowhere")
