"""Run configuration: strict JSON schema with canonical serialisation.

A configuration is a flat JSON object with a ``kind`` naming the run and the
fields allowed for that kind.  Unknown keys, wrong types and out-of-range
values are all reported together in one :class:`ConfigError`.  Missing fields
take their defaults, and :func:`emit_config` writes every field, so a parsed
and re-emitted file is a complete record of the run.
"""
import json
import math
from dataclasses import dataclass

from .seeding import SEED_SCHEME


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Field:
    kind: str                 # int, float, str, bool, ints, floats, vectors, metric
    default: object
    check: object = None      # callable(value) -> error message or None
    choices: tuple = ()


def _positive(v):
    return None if v > 0 else "must be positive"


def _nonneg(v):
    return None if v >= 0 else "must be non-negative"


def _at_least(m):
    def chk(v):
        vals = v if isinstance(v, list) else [v]
        return None if all(x >= m for x in vals) else f"must be >= {m}"
    return chk


def _all_nonneg(v):
    return None if all(x >= 0 for x in v) else "entries must be non-negative"


def _band(v):
    return None if len(v) == 2 and v[0] <= v[1] else "must be [low, high] with low <= high"


def _probability(v):
    return None if 0 < v < 1 else "must lie in (0, 1)"


METRIC_FIELDS = {
    "mode": Field("str", "exact", choices=("exact", "bracket")),
    "J": Field("int", 8, _at_least(0)),
    "L": Field("int", 8, _at_least(2)),
    "subsample": Field("int", 100, _at_least(2)),
    "lp_cap": Field("int", 2000, _at_least(2)),
}

COMMON_FIELDS = {
    "kind": Field("str", None),
    "d": Field("int", 3, _at_least(2)),
    "seed": Field("int", 0, _nonneg),
    "seed_scheme": Field("str", SEED_SCHEME, choices=(SEED_SCHEME,)),
    "output_dir": Field("str", "kaclab_out"),
}

_ENGINE = Field("str", "gillespie", choices=("gillespie", "thinning"))
_REF_ENGINE = Field("str", "thinning", choices=("gillespie", "thinning"))

KIND_FIELDS = {
    "simulate": {
        "N": Field("int", 512, _at_least(2)),
        "t_fin": Field("float", 1.0, _nonneg),
        "t_grid": Field("floats", [], _all_nonneg),
        "init": Field("str", "maxwellian", choices=("maxwellian", "heavy_tailed", "nonchaotic",
                                                    "equilibrium")),
        "tail_index": Field("float", 3.0, _positive),
        "engine": _ENGINE,
        "record_events": Field("bool", True),
    },
    "branch": {
        "N_env": Field("int", 2048, _at_least(2)),
        "t_start": Field("float", 0.0, _nonneg),
        "t_end": Field("float", 0.5, _positive),
        "env_step": Field("float", 0.05, _positive),
        "env_points": Field("int", 100000, _at_least(1)),
        "v0": Field("vectors", [[0.0, 0.0, 0.0]]),
        "f": Field("str", "weight", choices=("weight", "tanh", "energy", "one")),
        "n_trees": Field("int", 10000, _at_least(2)),
        "population_cap": Field("int", 100000, _at_least(3)),
        "engine": _ENGINE,
    },
    "convergence": {
        "N": Field("ints", [128, 256, 512, 1024, 2048], _at_least(2)),
        "t_grid": Field("floats", [1.0], _all_nonneg),
        "fit_time": Field("float", 1.0, _nonneg),
        "replicas": Field("int", 200, _at_least(2)),
        "N_ref": Field("int", 16384, _at_least(2)),
        "ref_runs": Field("int", 8, _at_least(1)),
        "reference_factor": Field("float", 1.0, _positive),
        "engine": _ENGINE,
        "reference_engine": _REF_ENGINE,
        "metric": Field("metric", None),
        "slope_band": Field("floats", [-0.45, -0.20], _band),
    },
    "uniform_time": {
        "N": Field("ints", [512], _at_least(2)),
        "t_grid": Field("floats", [1.0, 2.0, 5.0, 10.0, 20.0], _all_nonneg),
        "t_base": Field("float", 1.0, _nonneg),
        "replicas": Field("int", 200, _at_least(2)),
        "N_ref": Field("int", 16384, _at_least(2)),
        "ref_runs": Field("int", 8, _at_least(1)),
        "reference_factor": Field("float", 1.0, _positive),
        "engine": _ENGINE,
        "reference_engine": _REF_ENGINE,
        "metric": Field("metric", None),
        "ratio_max": Field("float", 1.5, _positive),
    },
    "iid_baseline": {
        "N": Field("ints", [128, 256, 512, 1024, 2048, 4096], _at_least(2)),
        "replicas": Field("int", 20, _at_least(2)),
        "reference_factor": Field("float", 1.0, _positive),
        "slope_band": Field("floats", [-1.0 / 3.0 - 0.1, -1.0 / 3.0 + 0.1], _band),
    },
    "moment": {
        "N": Field("int", 512, _at_least(2)),
        "t_grid": Field("floats", [0.0, 0.05, 0.1, 0.25, 0.5, 1.0], _all_nonneg),
        "t_check": Field("float", 0.1, _nonneg),
        "replicas": Field("int", 20, _at_least(2)),
        "tail_index": Field("float", 3.0, _positive),
        "orders": Field("floats", [2.0, 2.5, 3.0, 4.0], _all_nonneg),
        "lemma_orders": Field("floats", [2.0, 3.0, 4.0, 6.0], _all_nonneg),
        "finite_max": Field("float", 1000.0, _positive),
        "engine": _ENGINE,
    },
    "recurrence": {
        "N": Field("int", 4, _at_least(2)),
        "n_events": Field("int", 10_000_000, _at_least(2)),
        "calibration_samples": Field("int", 1_000_000, _at_least(10)),
        "p": Field("float", 0.01, _probability),
        "chunk": Field("int", 1_000_000, _at_least(1)),
    },
    "relaxation": {
        "N": Field("int", 512, _at_least(8)),
        "t_grid": Field("floats", [0.0, 0.25, 0.5, 1.0, 2.0, 4.0], _all_nonneg),
        "replicas": Field("int", 100, _at_least(2)),
        "equilibrium_samples": Field("int", 2000, _at_least(2)),
        "engine": _ENGINE,
    },
    "chaos": {
        "N": Field("ints", [16, 64, 256], _at_least(2)),
        "t": Field("float", 1.0, _nonneg),
        "replicas": Field("int", 1000, _at_least(4)),
        "init": Field("str", "maxwellian", choices=("maxwellian", "nonchaotic")),
        "engine": _ENGINE,
    },
    "nonchaotic": {
        "N": Field("ints", [8, 16, 32, 64, 128, 256, 512], _at_least(8)),
        "sphere_points": Field("int", 2000, _at_least(10)),
        "calibration_draws": Field("int", 128, _at_least(1)),
        "ratio": Field("float", 0.9, _positive),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; fields are readable as attributes."""

    values: dict

    def __getattr__(self, name):
        if name.startswith("__") or name == "values":
            raise AttributeError(name)
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def replace(self, **changes):
        return parse_config({**self.values, **changes})

    def to_dict(self):
        return json.loads(json.dumps(self.values))


def _coerce(name, fld, value, errors):
    def bad(msg):
        errors.append(f"{name}: {msg}")
        return None

    k = fld.kind
    if k == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            else:
                return bad(f"expected an integer, got {value!r}")
    elif k == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return bad(f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            return bad("must be finite")
    elif k == "str":
        if not isinstance(value, str):
            return bad(f"expected a string, got {value!r}")
        if fld.choices and value not in fld.choices:
            return bad(f"must be one of {list(fld.choices)}, got {value!r}")
    elif k == "bool":
        if not isinstance(value, bool):
            return bad(f"expected true/false, got {value!r}")
    elif k in ("ints", "floats"):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list):
            return bad("expected a list")
        out = []
        for x in value:
            sub = _coerce(name, Field(k[:-1] if k == "ints" else "float", None), x, errors)
            if sub is None:
                return None
            out.append(sub)
        value = out
    elif k == "vectors":
        if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
            return bad("expected a list of vectors")
        value = [[float(x) for x in r] for r in value]
    elif k == "metric":
        return _parse_section(name, METRIC_FIELDS, {} if value is None else value, errors)
    if fld.check is not None and value is not None:
        msg = fld.check(value)
        if msg:
            return bad(msg)
    return value


def _parse_section(prefix, fields, raw, errors):
    if not isinstance(raw, dict):
        errors.append(f"{prefix}: expected an object")
        return None
    out = {}
    for key in sorted(set(raw) - set(fields)):
        errors.append(f"{prefix}.{key}: unknown key" if prefix else f"{key}: unknown key")
    for key, fld in fields.items():
        name = f"{prefix}.{key}" if prefix else key
        if key in raw:
            out[key] = _coerce(name, fld, raw[key], errors)
        elif fld.kind == "metric":
            out[key] = _coerce(name, fld, None, errors)
        elif fld.default is None:
            errors.append(f"{name}: required")
        else:
            out[key] = json.loads(json.dumps(fld.default))
    return out


def parse_config(source):
    """Parse JSON text (or a dict) into a :class:`RunConfig`; raise :class:`ConfigError`."""
    if isinstance(source, (str, bytes)):
        try:
            raw = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"invalid JSON: {exc}"]) from None
    else:
        raw = dict(source)
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be an object"])
    kind = raw.get("kind")
    if kind not in KIND_FIELDS:
        raise ConfigError([f"kind: must be one of {sorted(KIND_FIELDS)}, got {kind!r}"])
    errors = []
    values = _parse_section("", {**COMMON_FIELDS, **KIND_FIELDS[kind]}, raw, errors)
    if not errors:
        _cross_checks(values, errors)
    if errors:
        raise ConfigError(errors)
    return RunConfig(values)


def _cross_checks(v, errors):
    if "N_ref" in v and "N" in v and v["N_ref"] < max(v["N"]):
        errors.append(f"N_ref: must be >= max(N) = {max(v['N'])}")
    if v["kind"] == "simulate" and any(t > v["t_fin"] for t in v["t_grid"]):
        errors.append("t_grid: times must not exceed t_fin")
    if v["kind"] == "branch":
        if v["t_start"] >= v["t_end"]:
            errors.append("t_start: must be below t_end")
        if any(len(r) != v["d"] for r in v["v0"]):
            errors.append(f"v0: every vector must have length d = {v['d']}")
    if v["kind"] == "convergence" and v["fit_time"] not in v["t_grid"]:
        errors.append("fit_time: must be one of t_grid")
    if v["kind"] == "uniform_time" and v["t_base"] not in v["t_grid"]:
        errors.append("t_base: must be one of t_grid")
    if v["kind"] in ("nonchaotic", "relaxation") or (v["kind"] == "chaos" and v["init"] == "nonchaotic"):
        m = 2 ** v["d"]
        Ns = v["N"] if isinstance(v["N"], list) else [v["N"]]
        if any(n % m for n in Ns):
            errors.append(f"N: must be multiples of 2^d = {m} for reflection initial data")


def emit_config(cfg):
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    values = cfg.values if isinstance(cfg, RunConfig) else parse_config(cfg).values
    return json.dumps(values, sort_keys=True, indent=2) + "\n"


def default_config(kind, **overrides):
    """A valid configuration of ``kind`` with every default filled in."""
    return parse_config({"kind": kind, **overrides})
