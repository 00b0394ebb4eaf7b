"""Declarative scenario files: parsing, validation, and canonical hashing.

Scenarios are YAML documents with nested records, arrays, and decimal
numbers.  Parsing is total: every field has a rule, every violation is
reported as a ValidationError naming the config path and the broken rule,
and malformed text raises ParseError with the offending line/column.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import yaml

from . import operators as ops
from .diagnostics import MetricSpec
from .errors import ParseError, ValidationError
from .integrator import Grid, X0_TOL
from .schedules import NoiseModel, StateCoupling, TikhonovSchedule

_REQUIRED = object()

DEFAULT_GRID = {"t_final": 20.0, "h": 2.0 ** -7, "thin": 1}
DEFAULT_NOISE = {"schedule": "power_decay", "sigma0": 0.5, "p": 1.0}
DEFAULT_POWER_EPS = {"eps0": 1.0, "q": 0.5}
DEFAULT_ENSEMBLE = {"n_paths": 256, "master_seed": 0, "retain_paths": 8}

CHECK_KINDS = ("strong_rate", "ergodic_value", "concentration", "tikhonov",
               "gap_slope", "oracle")


# ---------------------------------------------------------------------------
# Typed accessors (each failure is a named diagnostic, never a traceback).
# ---------------------------------------------------------------------------

def _mapping(value, path):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ValidationError(path, "must be a mapping")
    return value


def _get(rec, key, path, default=_REQUIRED):
    if key in rec:
        return rec[key]
    if default is _REQUIRED:
        raise ValidationError(f"{path}.{key}", "is required")
    return default


def _number(value, path, lo=None, hi=None, strict_lo=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, "must be a number")
    v = float(value)
    if not math.isfinite(v):
        raise ValidationError(path, "must be finite")
    if lo is not None and (v <= lo if strict_lo else v < lo):
        raise ValidationError(path, f"must be {'>' if strict_lo else '>='} {lo}")
    if hi is not None and v > hi:
        raise ValidationError(path, f"must be <= {hi}")
    return v


def _integer(value, path, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(path, "must be an integer")
    if lo is not None and value < lo:
        raise ValidationError(path, f"must be >= {lo}")
    return int(value)


def _boolean(value, path):
    if not isinstance(value, bool):
        raise ValidationError(path, "must be a boolean")
    return value


def _vector(value, path, dim=None):
    if not isinstance(value, (list, tuple)) or not value:
        raise ValidationError(path, "must be a nonempty array of numbers")
    out = [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]
    if dim is not None and len(out) != dim:
        raise ValidationError(path, f"must have length {dim}")
    return np.asarray(out, dtype=float)


def _matrix(value, path, rows=None, cols=None):
    if not isinstance(value, (list, tuple)) or not value:
        raise ValidationError(path, "must be a nonempty array of rows")
    mat = []
    width = None
    for i, row in enumerate(value):
        r = _vector(row, f"{path}[{i}]")
        if width is None:
            width = len(r)
        elif len(r) != width:
            raise ValidationError(path, "rows must have equal length")
        mat.append(r)
    out = np.asarray(mat, dtype=float)
    if rows is not None and out.shape[0] != rows:
        raise ValidationError(path, f"must have {rows} rows")
    if cols is not None and out.shape[1] != cols:
        raise ValidationError(path, f"must have {cols} columns")
    return out


def _choice(value, path, choices):
    if value not in choices:
        raise ValidationError(path, f"must be one of {', '.join(choices)}")
    return value


# ---------------------------------------------------------------------------
# Operator records.
# ---------------------------------------------------------------------------

def _build_error_bound(rec, path):
    if rec is None:
        return None
    rec = _mapping(rec, path)
    return {"p": _number(_get(rec, "p", path), f"{path}.p", lo=1.0),
            "gamma": _number(_get(rec, "gamma", path), f"{path}.gamma",
                             lo=0.0, strict_lo=True),
            "level": _number(_get(rec, "level", path), f"{path}.level")}


def _build_plq_coordinate(rec, path):
    rec = _mapping(rec, path)
    preset = rec.get("preset")
    if preset is not None:
        _choice(preset, f"{path}.preset", ("abs", "hinge", "quadratic"))
        if preset == "abs":
            return ops.abs_coordinate()
        if preset == "hinge":
            margin = _number(rec.get("margin", 1.0), f"{path}.margin",
                             lo=0.0, strict_lo=True)
            return ops.hinge_coordinate(margin)
        curv = _number(rec.get("curvature", 1.0), f"{path}.curvature",
                       lo=0.0, strict_lo=True)
        return ops.quadratic_coordinate(curv)
    breakpoints = rec.get("breakpoints", [])
    if breakpoints and not isinstance(breakpoints, (list, tuple)):
        raise ValidationError(f"{path}.breakpoints", "must be an array")
    bps = [_number(v, f"{path}.breakpoints[{i}]")
           for i, v in enumerate(breakpoints or [])]
    coeffs = _matrix(_get(rec, "coeffs", path), f"{path}.coeffs", cols=3)
    lo = _number(rec.get("lo", -math.inf), f"{path}.lo") \
        if "lo" in rec else -math.inf
    hi = _number(rec.get("hi", math.inf), f"{path}.hi") \
        if "hi" in rec else math.inf
    try:
        return ops.PLQCoordinate(bps, coeffs, lo=lo, hi=hi)
    except ValueError as exc:
        raise ValidationError(path, str(exc))


def build_operator(rec, path="operator"):
    rec = _mapping(rec, path)
    kind = _choice(_get(rec, "kind", path), f"{path}.kind",
                   ("linear", "separable_plq", "affine_normal_cone",
                    "restricted_quadratic", "shifted", "scaled", "sum"))
    try:
        if kind == "linear":
            Q = _matrix(_get(rec, "q", path), f"{path}.q")
            if Q.shape[0] != Q.shape[1]:
                raise ValidationError(f"{path}.q", "must be square")
            b = _vector(rec["b"], f"{path}.b", dim=Q.shape[0]) \
                if "b" in rec else None
            pot = _boolean(rec.get("potential", False), f"{path}.potential")
            eb = _build_error_bound(rec.get("error_bound"), f"{path}.error_bound")
            return ops.Linear(Q, b, as_subdifferential=pot, error_bound=eb)
        if kind == "separable_plq":
            coords_rec = _get(rec, "coordinates", path)
            if not isinstance(coords_rec, (list, tuple)) or not coords_rec:
                raise ValidationError(f"{path}.coordinates",
                                      "must be a nonempty array")
            coords = [_build_plq_coordinate(c, f"{path}.coordinates[{i}]")
                      for i, c in enumerate(coords_rec)]
            eb = _build_error_bound(rec.get("error_bound"), f"{path}.error_bound")
            return ops.SeparablePLQ(coords, error_bound=eb)
        if kind == "affine_normal_cone":
            C = _matrix(_get(rec, "c", path), f"{path}.c")
            d = _vector(_get(rec, "d", path), f"{path}.d", dim=C.shape[0])
            return ops.AffineNormalCone(C, d)
        if kind == "restricted_quadratic":
            C = _matrix(_get(rec, "c", path), f"{path}.c")
            d = _vector(_get(rec, "d", path), f"{path}.d", dim=C.shape[0])
            H = _matrix(_get(rec, "h", path), f"{path}.h",
                        rows=C.shape[1], cols=C.shape[1])
            g = _vector(rec["g"], f"{path}.g", dim=C.shape[1]) \
                if "g" in rec else None
            eb = _build_error_bound(rec.get("error_bound"), f"{path}.error_bound")
            return ops.RestrictedQuadratic(C, d, H, g, error_bound=eb)
        if kind == "shifted":
            inner = build_operator(_get(rec, "inner", path), f"{path}.inner")
            u0 = _vector(_get(rec, "translation", path), f"{path}.translation",
                         dim=inner.dim)
            return ops.Shifted(inner, u0)
        if kind == "scaled":
            inner = build_operator(_get(rec, "inner", path), f"{path}.inner")
            factor = _number(_get(rec, "factor", path), f"{path}.factor",
                             lo=0.0, strict_lo=True)
            return ops.Scaled(inner, factor)
        # sum
        lin_rec = _mapping(_get(rec, "linear", path), f"{path}.linear")
        Q = _matrix(_get(lin_rec, "q", f"{path}.linear"), f"{path}.linear.q")
        b = _vector(lin_rec["b"], f"{path}.linear.b", dim=Q.shape[0]) \
            if "b" in lin_rec else None
        cone_rec = _mapping(_get(rec, "cone", path), f"{path}.cone")
        C = _matrix(_get(cone_rec, "c", f"{path}.cone"), f"{path}.cone.c")
        d = _vector(_get(cone_rec, "d", f"{path}.cone"), f"{path}.cone.d",
                    dim=C.shape[0])
        return ops.Sum(ops.Linear(Q, b), ops.AffineNormalCone(C, d))
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(path, str(exc))


# ---------------------------------------------------------------------------
# Noise / tikhonov records.
# ---------------------------------------------------------------------------

def build_noise(rec, dim, path="noise"):
    rec = dict(DEFAULT_NOISE, **_mapping(rec, path))
    schedule = _choice(rec["schedule"], f"{path}.schedule",
                       ("power_decay", "constant", "zero"))
    sigma0 = _number(rec["sigma0"], f"{path}.sigma0", lo=0.0)
    p = _number(rec["p"], f"{path}.p")
    base = _matrix(rec["base"], f"{path}.base", rows=dim) \
        if "base" in rec else np.eye(dim)
    coupling = None
    if rec.get("coupling") is not None:
        crec = _mapping(rec["coupling"], f"{path}.coupling")
        amp = _matrix(_get(crec, "amplitude", f"{path}.coupling"),
                      f"{path}.coupling.amplitude", rows=base.shape[0],
                      cols=base.shape[1])
        freq = _vector(_get(crec, "freq", f"{path}.coupling"),
                       f"{path}.coupling.freq", dim=dim)
        coupling = StateCoupling(amp, freq)
    return NoiseModel(base, schedule=schedule, sigma0=sigma0, p=p,
                      coupling=coupling)


def build_tikhonov(rec, path="tikhonov"):
    rec = _mapping(rec, path)
    kind = rec.get("kind", "off")
    if kind is False:  # YAML 1.1 reads a bare `off` as boolean false
        kind = "off"
    kind = _choice(kind, f"{path}.kind", ("off", "power_eps"))
    if kind == "off":
        return TikhonovSchedule("off")
    eps0 = _number(rec.get("eps0", DEFAULT_POWER_EPS["eps0"]), f"{path}.eps0",
                   lo=0.0, strict_lo=True)
    q = _number(rec.get("q", DEFAULT_POWER_EPS["q"]), f"{path}.q")
    if not 0.0 < q < 1.0:
        raise ValidationError(f"{path}.q",
                              "requires 0 < q < 1 (so |eps'|/eps^2 -> 0)")
    return TikhonovSchedule("power_eps", eps0=eps0, q=q)


# ---------------------------------------------------------------------------
# Metric and check records.
# ---------------------------------------------------------------------------

def _build_region(rec, dim, path):
    rec = _mapping(rec, path)
    kind = _choice(_get(rec, "kind", path), f"{path}.kind", ("box", "ball"))
    v_lows = _vector(rec["v_lows"], f"{path}.v_lows", dim=dim) \
        if "v_lows" in rec else None
    v_highs = _vector(rec["v_highs"], f"{path}.v_highs", dim=dim) \
        if "v_highs" in rec else None
    if kind == "box":
        lows = _vector(_get(rec, "lows", path), f"{path}.lows", dim=dim)
        highs = _vector(_get(rec, "highs", path), f"{path}.highs", dim=dim)
        if np.any(lows > highs):
            raise ValidationError(path, "lows must not exceed highs")
        return ops.box_region(lows, highs, v_lows, v_highs)
    center = _vector(_get(rec, "center", path), f"{path}.center", dim=dim)
    radius = _number(_get(rec, "radius", path), f"{path}.radius",
                     lo=0.0, strict_lo=True)
    return ops.ball_region(center, radius, v_lows, v_highs)


def build_metric(rec, op, tik, grid, path):
    rec = _mapping(rec, path)
    kind = _choice(_get(rec, "kind", path), f"{path}.kind",
                   tuple(k for k in
                         ("dist_sq_to_point", "dist_sq_to_zero_set",
                          "value_gap", "ergodic_value_gap",
                          "ergodic_gap_function", "operator_norm_sq",
                          "tikhonov_discrepancy", "flow_discrepancy",
                          "norm_of_average")))
    point = None
    region = None
    if kind == "dist_sq_to_point":
        point = _vector(_get(rec, "point", path), f"{path}.point", dim=op.dim)
    if kind == "ergodic_gap_function":
        region = _build_region(_get(rec, "region", path), op.dim,
                               f"{path}.region")
    if kind in ("value_gap", "ergodic_value_gap") and op.potential is None:
        raise ValidationError(f"{path}.kind", "requires a potential operator")
    if kind == "operator_norm_sq" and op.lipschitz_constant is None:
        raise ValidationError(f"{path}.kind",
                              "requires a Lipschitz single-valued kind")
    if kind == "dist_sq_to_zero_set" and op.zero_set.is_empty:
        raise ValidationError(f"{path}.kind", "requires a nonempty zero set")
    if kind == "tikhonov_discrepancy" and tik.is_off:
        raise ValidationError(f"{path}.kind", "requires tikhonov.kind = power_eps")
    n_grid = _integer(rec.get("n_grid", 101), f"{path}.n_grid", lo=2)
    eval_times = None
    if "eval_times" in rec:
        eval_times = _vector(rec["eval_times"], f"{path}.eval_times")
        if np.any(eval_times < 0) or np.any(eval_times > grid.t_final):
            raise ValidationError(f"{path}.eval_times",
                                  "must lie inside [0, t_final]")
    return MetricSpec(kind=kind, point=point, region=region, n_grid=n_grid,
                      eval_times=eval_times)


@dataclass(frozen=True)
class CheckSpec:
    """One named theorem check tied to a single bound."""

    kind: str
    times: Optional[np.ndarray] = None
    eps_levels: Optional[np.ndarray] = None
    r_values: Optional[np.ndarray] = None
    region: Optional[ops.GapRegion] = None
    n_grid: int = 101
    window: Optional[tuple] = None
    exponent_range: tuple = (-1.3, -0.7)
    slack: float = 3.0
    rhs_scale: float = 1.0
    flow_threshold: float = 0.05
    ratio_factor: float = 3.0
    h_levels: Optional[np.ndarray] = None
    oracle_paths: int = 256
    oracle_t_final: float = 1.0
    min_order: float = 0.8


def _positive_times(rec, key, grid, path, default):
    if key in rec:
        vals = _vector(rec[key], f"{path}.{key}")
    else:
        vals = np.asarray(default, dtype=float)
    if np.any(vals <= 0) or np.any(vals > grid.t_final):
        raise ValidationError(f"{path}.{key}", "must lie inside (0, t_final]")
    return vals


def build_check(rec, op, noise, tik, grid, path):
    rec = _mapping(rec, path)
    kind = _choice(_get(rec, "kind", path), f"{path}.kind", CHECK_KINDS)
    slack = _number(rec.get("slack", 3.0), f"{path}.slack", lo=0.0)
    rhs_scale = _number(rec.get("rhs_scale", 1.0), f"{path}.rhs_scale",
                        lo=0.0, strict_lo=True)
    needs_finite_noise = kind in ("strong_rate", "ergodic_value",
                                  "concentration", "tikhonov", "gap_slope")
    if needs_finite_noise and not noise.square_integrable:
        raise ValidationError(
            "noise.p" if noise.schedule == "power_decay" else "noise.schedule",
            "requires p > 1/2 for square-integrable sigma_inf")
    if kind == "strong_rate":
        if op.strong_monotonicity_modulus <= 0:
            raise ValidationError(f"{path}.kind",
                                  "requires a strongly monotone operator")
        if op.zero_set.kind != "point":
            raise ValidationError(f"{path}.kind", "requires a unique zero")
        times = _positive_times(rec, "times", grid, path,
                                np.linspace(grid.t_final / 8, grid.t_final, 8))
        return CheckSpec(kind=kind, times=times, slack=slack,
                         rhs_scale=rhs_scale)
    if kind == "ergodic_value":
        if op.potential is None:
            raise ValidationError(f"{path}.kind", "requires a potential")
        if op.zero_set.is_empty:
            raise ValidationError(f"{path}.kind", "requires a nonempty zero set")
        times = _positive_times(rec, "times", grid, path,
                                np.linspace(grid.t_final / 8, grid.t_final, 8))
        return CheckSpec(kind=kind, times=times, slack=slack,
                         rhs_scale=rhs_scale)
    if kind == "concentration":
        if op.potential is None:
            raise ValidationError(f"{path}.kind", "requires a potential")
        if op.zero_set.is_empty:
            raise ValidationError(f"{path}.kind", "requires a nonempty zero set")
        times = _positive_times(
            rec, "times", grid, path,
            [grid.t_final / 4, grid.t_final / 2, grid.t_final])
        if "eps_levels" in rec:
            eps = _vector(rec["eps_levels"], f"{path}.eps_levels")
        else:
            eps = np.array([1.0, 2.0, 3.0])
        if np.any(eps <= 0):
            raise ValidationError(f"{path}.eps_levels", "must be positive")
        return CheckSpec(kind=kind, times=times, eps_levels=eps, slack=slack,
                         rhs_scale=rhs_scale)
    if kind == "tikhonov":
        if tik.is_off:
            raise ValidationError(f"{path}.kind",
                                  "requires tikhonov.kind = power_eps")
        if op.zero_set.is_empty:
            raise ValidationError(f"{path}.kind", "requires a nonempty zero set")
        if "r_values" in rec:
            r_values = _vector(rec["r_values"], f"{path}.r_values")
        else:
            r_values = np.array([grid.t_final / 8, grid.t_final / 4,
                                 grid.t_final / 2])
        if np.any(r_values < 0) or np.any(r_values >= grid.t_final):
            raise ValidationError(f"{path}.r_values",
                                  "must lie inside [0, t_final)")
        if np.any(np.diff(r_values) <= 0):
            raise ValidationError(f"{path}.r_values", "must be increasing")
        flow_threshold = _number(rec.get("flow_threshold", 0.05),
                                 f"{path}.flow_threshold", lo=0.0,
                                 strict_lo=True)
        ratio_factor = _number(rec.get("ratio_factor", 3.0),
                               f"{path}.ratio_factor", lo=1.0)
        return CheckSpec(kind=kind, r_values=r_values, slack=slack,
                         rhs_scale=rhs_scale, flow_threshold=flow_threshold,
                         ratio_factor=ratio_factor)
    if kind == "gap_slope":
        region = _build_region(_get(rec, "region", path), op.dim,
                               f"{path}.region")
        if "window" in rec:
            w = _vector(rec["window"], f"{path}.window", dim=2)
        else:
            w = np.array([grid.t_final / 4, grid.t_final])
        if not 0 < w[0] < w[1] <= grid.t_final:
            raise ValidationError(f"{path}.window",
                                  "must satisfy 0 < lo < hi <= t_final")
        if "exponent_range" in rec:
            er = _vector(rec["exponent_range"], f"{path}.exponent_range", dim=2)
        else:
            er = np.array([-1.3, -0.7])
        n_grid = _integer(rec.get("n_grid", 101), f"{path}.n_grid", lo=2)
        return CheckSpec(kind=kind, region=region, n_grid=n_grid,
                         window=(float(w[0]), float(w[1])),
                         exponent_range=(float(er[0]), float(er[1])),
                         slack=slack, rhs_scale=rhs_scale)
    # oracle
    if not tik.is_off:
        raise ValidationError(f"{path}.kind", "oracle requires tikhonov off")
    if noise.coupling is not None:
        raise ValidationError(f"{path}.kind",
                              "oracle requires state-independent noise")
    from .subspace import domain_subspace, reduce_operator
    try:
        red = reduce_operator(op, domain_subspace(op))
    except Exception:
        raise ValidationError(f"{path}.kind", "operator does not reduce")
    if not isinstance(red, ops.Linear) or red.dim != 1 or abs(red.b[0]) > 0:
        raise ValidationError(f"{path}.kind",
                              "oracle needs a 1-D homogeneous linear reduction")
    if "h_levels" in rec:
        h_levels = _vector(rec["h_levels"], f"{path}.h_levels")
        if np.any(h_levels <= 0):
            raise ValidationError(f"{path}.h_levels", "must be positive")
    else:
        h_levels = 2.0 ** -np.arange(6, 11)
    oracle_paths = _integer(rec.get("n_paths", 256), f"{path}.n_paths", lo=2)
    t_final = _number(rec.get("t_final", 1.0), f"{path}.t_final", lo=0.0,
                      strict_lo=True)
    min_order = _number(rec.get("min_order", 0.8), f"{path}.min_order")
    return CheckSpec(kind=kind, h_levels=h_levels, oracle_paths=oracle_paths,
                     oracle_t_final=t_final, min_order=min_order, slack=slack,
                     rhs_scale=rhs_scale)


# ---------------------------------------------------------------------------
# Scenario assembly.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    raw: dict
    op: ops.OperatorSpec
    noise: NoiseModel
    tik: TikhonovSchedule
    grid: Grid
    x0: np.ndarray
    metrics: list
    checks: list
    n_paths: int
    master_seed: int
    retain_paths: int
    output_dir: str
    digest: str

    def with_overrides(self, n_paths=None, master_seed=None, output_dir=None):
        raw = json.loads(json.dumps(self.raw))
        if n_paths is not None:
            raw["ensemble"]["n_paths"] = int(n_paths)
        if master_seed is not None:
            raw["ensemble"]["master_seed"] = int(master_seed)
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        return build_scenario(raw)


def _resolve_x0(value, op, path="x0"):
    if isinstance(value, str):
        if value == "zero_set_point":
            if op.zero_set.is_empty:
                raise ValidationError(path, "zero_set_point needs zeros")
            point, _ = ops.zero_set_project(op, np.zeros(op.dim))
            return point
        if value.startswith("offset:"):
            if op.zero_set.is_empty:
                raise ValidationError(path, "offset preset needs zeros")
            body = value[len("offset:"):]
            try:
                vec = np.asarray([float(v) for v in body.split(",")],
                                 dtype=float)
            except ValueError:
                raise ValidationError(path, "offset vector must be decimals")
            if vec.shape[0] != op.dim:
                raise ValidationError(path, f"offset must have length {op.dim}")
            point, _ = ops.zero_set_project(op, np.zeros(op.dim))
            return point + vec
        raise ValidationError(path, "unknown preset (use zero_set_point or "
                                    "offset:<v1,...>)")
    return _vector(value, path, dim=op.dim)


def _canonical(obj):
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, float) and obj == int(obj) and abs(obj) < 1e15:
        return obj
    return obj


def scenario_digest(raw: dict) -> str:
    """Content hash of the experiment-defining fields.

    output_dir is excluded: it names where results land, not what the
    experiment is, and reruns into different directories must verify as
    the same experiment.
    """
    content = {k: v for k, v in raw.items() if k != "output_dir"}
    text = json.dumps(_canonical(content), sort_keys=True,
                      separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()


def build_scenario(doc: dict) -> Scenario:
    """Validated Scenario from a parsed YAML document; defaults filled."""
    if not isinstance(doc, dict):
        raise ValidationError("scenario", "document must be a mapping")
    known = {"operator", "noise", "tikhonov", "x0", "grid", "ensemble",
             "metrics", "checks", "output_dir"}
    for key in doc:
        if key not in known:
            raise ValidationError(str(key), "unknown top-level field")
    op = build_operator(_get(doc, "operator", "scenario"))
    noise = build_noise(doc.get("noise"), op.dim)
    if noise.dim != op.dim:
        raise ValidationError("noise.base",
                              f"must have {op.dim} rows to match the operator")
    tik = build_tikhonov(doc.get("tikhonov"))
    grec = dict(DEFAULT_GRID, **_mapping(doc.get("grid"), "grid"))
    h = _number(grec["h"], "grid.h", lo=0.0, strict_lo=True)
    t_final = _number(grec["t_final"], "grid.t_final", lo=0.0, strict_lo=True)
    if t_final < 10 * h:
        raise ValidationError("grid.t_final", "must be at least 10 h")
    thin = _integer(grec["thin"], "grid.thin", lo=1)
    grid = Grid(t_final=t_final, h=h, thin=thin)

    erec = dict(DEFAULT_ENSEMBLE, **_mapping(doc.get("ensemble"), "ensemble"))
    n_paths = _integer(erec["n_paths"], "ensemble.n_paths", lo=1)
    master_seed = _integer(erec["master_seed"], "ensemble.master_seed", lo=0)
    if master_seed >= 2 ** 64:
        raise ValidationError("ensemble.master_seed", "must fit in 64 bits")
    retain = _integer(erec["retain_paths"], "ensemble.retain_paths", lo=0)

    x0 = _resolve_x0(doc.get("x0", "zero_set_point"), op)
    member = np.asarray(op.domain_membership(x0, tol=X0_TOL))
    if not bool(np.all(member)):
        raise ValidationError("x0", "outside cl dom A beyond tolerance")
    x0 = np.asarray(op.domain_project(x0), dtype=float)

    metrics_rec = doc.get("metrics", []) or []
    if not isinstance(metrics_rec, (list, tuple)):
        raise ValidationError("metrics", "must be an array of records")
    metrics = [build_metric(m, op, tik, grid, f"metrics[{i}]")
               for i, m in enumerate(metrics_rec)]

    checks_rec = doc.get("checks", []) or []
    if not isinstance(checks_rec, (list, tuple)):
        raise ValidationError("checks", "must be an array of records")
    checks = [build_check(c, op, noise, tik, grid, f"checks[{i}]")
              for i, c in enumerate(checks_rec)]

    output_dir = doc.get("output_dir", "report")
    if not isinstance(output_dir, str) or not output_dir:
        raise ValidationError("output_dir", "must be a nonempty string")

    raw = _normalized_raw(doc, grid, n_paths, master_seed, retain, output_dir)
    return Scenario(raw=raw, op=op, noise=noise, tik=tik, grid=grid, x0=x0,
                    metrics=metrics, checks=checks, n_paths=n_paths,
                    master_seed=master_seed, retain_paths=retain,
                    output_dir=output_dir, digest=scenario_digest(raw))


def _normalized_raw(doc, grid, n_paths, master_seed, retain, output_dir):
    raw = json.loads(json.dumps(doc, default=_jsonable))
    raw.setdefault("noise", dict(DEFAULT_NOISE))
    raw.setdefault("tikhonov", {"kind": "off"})
    raw["grid"] = {"t_final": grid.t_final, "h": grid.h, "thin": grid.thin}
    raw["ensemble"] = {"n_paths": n_paths, "master_seed": master_seed,
                       "retain_paths": retain}
    raw.setdefault("x0", "zero_set_point")
    raw.setdefault("metrics", [])
    raw.setdefault("checks", [])
    raw["output_dir"] = output_dir
    return raw


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ParseError(f"scenario parse error: {exc}", line=line, col=col)
    if doc is None:
        raise ParseError("scenario file is empty", line=1, col=1)
    try:
        return build_scenario(doc)
    except (ParseError, ValidationError):
        raise
    except Exception as exc:  # validation is total: no stray tracebacks
        raise ValidationError("scenario", f"invalid structure: {exc}")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())
