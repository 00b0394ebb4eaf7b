import os

import numpy as np
import pytest
import yaml
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from monotone_sdi import cli
from monotone_sdi.errors import MonotoneSDIError, ParseError, ValidationError
from monotone_sdi.fixtures import FIXTURE_NAMES, fixture_text
from monotone_sdi.scenario import build_scenario, parse_scenario

MINIMAL = """
operator:
  kind: linear
  q: [[1.0]]
noise:
  schedule: zero
"""


class TestParsing:
    def test_minimal_scenario_defaults(self):
        scn = parse_scenario(MINIMAL)
        assert scn.grid.t_final == 20.0
        assert scn.grid.h == 2.0 ** -7
        assert scn.tik.is_off
        assert scn.n_paths == 256
        assert scn.retain_paths == 8
        assert scn.output_dir == "report"
        assert np.allclose(scn.x0, [0.0])  # zero_set_point preset

    def test_all_fixtures_parse(self):
        for name in FIXTURE_NAMES:
            scn = parse_scenario(fixture_text(name))
            assert scn.digest

    def test_parse_error_carries_location(self):
        with pytest.raises(ParseError) as info:
            parse_scenario("operator: {kind: linear\n  q: [[1.0]]")
        assert info.value.line is not None

    def test_empty_document(self):
        with pytest.raises(ParseError):
            parse_scenario("")

    def test_non_mapping_document(self):
        with pytest.raises(ValidationError):
            parse_scenario("- 1\n- 2\n")


class TestValidationRules:
    def test_noise_p_too_small_with_check(self):
        doc = yaml.safe_load(fixture_text("identity"))
        doc["noise"]["p"] = 0.4
        with pytest.raises(ValidationError) as info:
            build_scenario(doc)
        assert info.value.field == "noise.p"
        assert "1/2" in info.value.rule

    def test_noise_p_small_without_checks_is_fine(self):
        doc = yaml.safe_load(MINIMAL)
        doc["noise"] = {"schedule": "power_decay", "sigma0": 0.5, "p": 0.4}
        assert build_scenario(doc).noise.p == 0.4

    def test_tikhonov_q_out_of_range(self):
        doc = yaml.safe_load(MINIMAL)
        doc["tikhonov"] = {"kind": "power_eps", "eps0": 1.0, "q": 1.2}
        with pytest.raises(ValidationError) as info:
            build_scenario(doc)
        assert info.value.field == "tikhonov.q"

    def test_x0_membership_enforced(self):
        doc = yaml.safe_load(fixture_text("section3_example"))
        doc["x0"] = [1.0, 0.5]
        with pytest.raises(ValidationError) as info:
            build_scenario(doc)
        assert info.value.field == "x0"

    def test_offset_preset(self):
        doc = yaml.safe_load(MINIMAL)
        doc["x0"] = "offset:0.25"
        scn = build_scenario(doc)
        assert np.allclose(scn.x0, [0.25])

    def test_unknown_top_level_field(self):
        doc = yaml.safe_load(MINIMAL)
        doc["simulate_harder"] = True
        with pytest.raises(ValidationError):
            build_scenario(doc)

    def test_strong_rate_needs_modulus(self):
        doc = yaml.safe_load(MINIMAL)
        doc["operator"] = {"kind": "linear", "q": [[0.0, -1.0], [1.0, 0.0]]}
        doc["checks"] = [{"kind": "strong_rate"}]
        with pytest.raises(ValidationError):
            build_scenario(doc)

    def test_oracle_requires_reducible_operator(self):
        doc = yaml.safe_load(MINIMAL)
        doc["operator"] = {"kind": "linear", "q": [[0.0, -1.0], [1.0, 0.0]]}
        doc["checks"] = [{"kind": "oracle"}]
        with pytest.raises(ValidationError):
            build_scenario(doc)  # two-dimensional reduction
        doc["operator"] = yaml.safe_load(
            fixture_text("section3_example"))["operator"]
        doc["noise"] = {"schedule": "power_decay", "sigma0": 1.0, "p": 1.0}
        scn = build_scenario(doc)
        assert scn.checks[0].kind == "oracle"

    def test_grid_rules(self):
        doc = yaml.safe_load(MINIMAL)
        doc["grid"] = {"t_final": 0.05, "h": 0.01}
        with pytest.raises(ValidationError):
            build_scenario(doc)
        doc["grid"] = {"t_final": 1.0, "h": -0.01}
        with pytest.raises(ValidationError):
            build_scenario(doc)


DOC_MUTATIONS = [
    ("operator", None),
    ("operator", {"kind": "mystery"}),
    ("operator", {"kind": "linear"}),
    ("operator", {"kind": "linear", "q": "hello"}),
    ("operator", {"kind": "linear", "q": [[1.0, 0.0]]}),
    ("operator", {"kind": "linear", "q": [[-1.0]]}),
    ("operator", {"kind": "separable_plq", "coordinates": []}),
    ("operator", {"kind": "separable_plq",
                  "coordinates": [{"coeffs": [[-1, 0, 0]]}]}),
    ("operator", {"kind": "affine_normal_cone", "c": [[0.0, 0.0]],
                  "d": [1.0]}),
    ("noise", {"schedule": "loud"}),
    ("noise", {"schedule": "power_decay", "sigma0": -2.0}),
    ("noise", {"schedule": "power_decay", "base": [[1.0], [2.0]]}),
    ("tikhonov", {"kind": "power_eps", "q": 0.0}),
    ("tikhonov", {"kind": "power_eps", "eps0": 0.0}),
    ("x0", "offset:abc"),
    ("x0", "somewhere"),
    ("x0", [1.0, 2.0]),
    ("x0", {"lat": 1}),
    ("grid", {"t_final": "ten"}),
    ("grid", {"thin": 0}),
    ("ensemble", {"n_paths": 0}),
    ("ensemble", {"master_seed": -1}),
    ("ensemble", {"master_seed": 2 ** 70}),
    ("metrics", {"kind": "value_gap"}),
    ("metrics", [{"kind": "dist_sq_to_point"}]),
    ("metrics", [{"kind": "flow_discrepancy", "eval_times": [99.0]}]),
    ("metrics", [{"kind": "operator_norm_sq"}]),
    ("checks", [{"kind": "prove_everything"}]),
    ("checks", [{"kind": "concentration", "eps_levels": [-1.0]}]),
    ("checks", [{"kind": "tikhonov"}]),
    ("checks", [{"kind": "gap_slope"}]),
    ("output_dir", ""),
]


class TestFuzz:
    @pytest.mark.parametrize("key,value", DOC_MUTATIONS)
    def test_structured_mutations_never_crash(self, key, value):
        doc = {"operator": {"kind": "linear", "q": [[1.0]]},
               "noise": {"schedule": "zero"}}
        base = yaml.safe_load(fixture_text("abs_value"))
        base[key] = value
        with pytest.raises((ParseError, ValidationError)):
            build_scenario(base)

    @settings(max_examples=150, deadline=None,
              suppress_health_check=[HealthCheck.too_slow])
    @given(st.text(max_size=400))
    def test_random_text_never_crashes(self, text):
        try:
            parse_scenario(text)
        except (ParseError, ValidationError):
            pass

    @settings(max_examples=100, deadline=None)
    @given(st.recursive(
        st.one_of(st.none(), st.booleans(), st.integers(-5, 5),
                  st.floats(allow_nan=False, allow_infinity=False,
                            min_value=-10, max_value=10),
                  st.text(max_size=8)),
        lambda children: st.one_of(
            st.lists(children, max_size=4),
            st.dictionaries(st.sampled_from(
                ["operator", "noise", "tikhonov", "x0", "grid", "ensemble",
                 "metrics", "checks", "output_dir", "kind", "q", "b", "p",
                 "sigma0", "schedule"]), children, max_size=6)),
        max_leaves=20))
    def test_random_documents_never_crash(self, doc):
        try:
            build_scenario(doc if isinstance(doc, dict) else {"doc": doc})
        except (ParseError, ValidationError):
            pass


class TestPrecedence:
    def test_cli_beats_file_beats_default(self, tmp_path):
        # default n_paths 256; file sets 32; CLI sets 8
        text = MINIMAL + (
            "\nensemble: {n_paths: 32}\n"
            "metrics:\n  - {kind: dist_sq_to_point, point: [0.0]}\n")
        f = tmp_path / "s.yaml"
        f.write_text(text)
        scn = parse_scenario(text)
        assert scn.n_paths == 32  # file beats default
        out = tmp_path / "rep"
        code = cli.main(["run", "--scenario", str(f), "--paths", "8",
                         "--out", str(out)])
        assert code == 0
        report = (out / "ensemble.csv").read_text()
        assert report.splitlines()[1].endswith(",8")  # CLI beats file

    def test_default_when_absent(self):
        scn = parse_scenario(MINIMAL)
        assert scn.n_paths == 256


class TestCLI:
    def test_validate_ok(self, tmp_path, capsys):
        f = tmp_path / "s.yaml"
        f.write_text(fixture_text("abs_value"))
        assert cli.main(["validate", "--scenario", str(f)]) == 0
        assert "scenario OK" in capsys.readouterr().out

    def test_corrupted_file_exit_1(self, tmp_path, capsys):
        f = tmp_path / "bad.yaml"
        f.write_text("operator: {kind: linear\n  q: [[1.0]]")
        assert cli.main(["validate", "--scenario", str(f)]) == 1
        assert "parse error" in capsys.readouterr().err

    def test_validation_error_exit_1(self, tmp_path, capsys):
        doc = yaml.safe_load(fixture_text("identity"))
        doc["noise"]["p"] = 0.4
        f = tmp_path / "bad.yaml"
        f.write_text(yaml.safe_dump(doc))
        assert cli.main(["validate", "--scenario", str(f)]) == 1
        assert "noise.p" in capsys.readouterr().err

    def test_run_report_roundtrip(self, tmp_path, capsys):
        doc = yaml.safe_load(fixture_text("abs_value"))
        doc["ensemble"]["n_paths"] = 16
        doc["grid"] = {"t_final": 4.0, "h": 0.03125, "thin": 4}
        doc["checks"] = [{"kind": "ergodic_value", "times": [2.0, 4.0]}]
        f = tmp_path / "s.yaml"
        f.write_text(yaml.safe_dump(doc))
        out = tmp_path / "rep"
        assert cli.main(["run", "--scenario", str(f), "--out", str(out)]) == 0
        run_out = capsys.readouterr().out
        assert "ergodic_value" in run_out
        assert cli.main(["report", "--in", str(out)]) == 0
        rep_out = capsys.readouterr().out
        for line in run_out.splitlines():
            if line.startswith("ergodic_value"):
                quantity = line.split("  ")[1]
                assert quantity.strip() in rep_out

    def test_tightened_bound_exit_2(self, tmp_path):
        doc = yaml.safe_load(fixture_text("identity"))
        doc["ensemble"]["n_paths"] = 64
        doc["grid"] = {"t_final": 4.0, "h": 0.03125, "thin": 4}
        doc["checks"] = [{"kind": "strong_rate", "times": [2.0, 4.0],
                          "slack": 0.0, "rhs_scale": 0.5}]
        f = tmp_path / "s.yaml"
        f.write_text(yaml.safe_dump(doc))
        out = tmp_path / "rep"
        assert cli.main(["run", "--scenario", str(f), "--out", str(out)]) == 2
        # report over the violated run also signals the violation
        assert cli.main(["report", "--in", str(out)]) == 2

    def test_report_missing_dir_exit_1(self, tmp_path, capsys):
        assert cli.main(["report", "--in", str(tmp_path / "void")]) == 1
        assert "manifest" in capsys.readouterr().err.lower()

    def test_plot_data(self, tmp_path):
        doc = yaml.safe_load(MINIMAL)
        doc["metrics"] = [{"kind": "dist_sq_to_point", "point": [0.0]}]
        doc["grid"] = {"t_final": 1.0, "h": 0.0625, "thin": 2}
        doc["ensemble"] = {"n_paths": 4, "master_seed": 5, "retain_paths": 0}
        f = tmp_path / "s.yaml"
        f.write_text(yaml.safe_dump(doc))
        out = tmp_path / "rep"
        assert cli.main(["run", "--scenario", str(f), "--out", str(out)]) == 0
        assert cli.main(["report", "--in", str(out), "--plot-data"]) == 0
        plot = out / "plot" / "dist_sq_to_point.csv"
        rows = plot.read_text().splitlines()
        assert rows[0] == "t,value"
        ts = [float(r.split(",")[0]) for r in rows[1:]]
        assert ts == sorted(ts)
