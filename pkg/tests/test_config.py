import json

import pytest
from hypothesis import given, strategies as st

from kaclab.config import KIND_FIELDS, ConfigError, default_config, emit_config, parse_config


@pytest.mark.parametrize("kind", sorted(KIND_FIELDS))
def test_minimal_config_fills_defaults(kind):
    cfg = parse_config({"kind": kind})
    assert cfg.kind == kind and cfg.d == 3 and cfg.seed == 0
    assert set(cfg.values) >= set(KIND_FIELDS[kind])


@pytest.mark.parametrize("kind", sorted(KIND_FIELDS))
def test_round_trip_is_byte_identical(kind):
    text = emit_config(default_config(kind))
    assert emit_config(parse_config(text)) == text
    assert text.endswith("\n") and json.loads(text)["kind"] == kind


def test_n_one_names_the_field():
    with pytest.raises(ConfigError) as err:
        parse_config({"kind": "simulate", "N": 1})
    assert any(v.startswith("N:") for v in err.value.violations)


def test_all_violations_reported_together():
    with pytest.raises(ConfigError) as err:
        parse_config({"kind": "convergence", "N": [1, 64], "replicas": "many", "bogus": 1,
                      "metric": {"L": 1, "mode": "guess"}})
    msgs = " | ".join(err.value.violations)
    for field in ("N:", "replicas:", "bogus: unknown key", "metric.L:", "metric.mode:"):
        assert field in msgs


@pytest.mark.parametrize("raw, field", [
    ({"kind": "simulate", "t_fin": -1.0}, "t_fin"),
    ({"kind": "convergence", "N": [64], "N_ref": 32}, "N_ref"),
    ({"kind": "convergence", "fit_time": 2.0}, "fit_time"),
    ({"kind": "nonchaotic", "N": [12]}, "N"),
    ({"kind": "simulate", "init": "uniform"}, "init"),
    ({"kind": "branch", "v0": [[0.0, 0.0]]}, "v0"),
    ({"kind": "recurrence", "p": 1.5}, "p"),
    ({"kind": "simulate", "seed_scheme": "other"}, "seed_scheme"),
    ({"kind": "simulate", "record_events": 1}, "record_events"),
])
def test_invalid_fields(raw, field):
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert any(v.startswith(field) for v in err.value.violations)


def test_unknown_kind_and_bad_json():
    with pytest.raises(ConfigError):
        parse_config({"kind": "nope"})
    with pytest.raises(ConfigError):
        parse_config("{not json")
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


def test_replace_revalidates():
    cfg = default_config("simulate")
    assert cfg.replace(N=64).N == 64
    with pytest.raises(ConfigError):
        cfg.replace(N=0)


@given(st.lists(st.integers(2, 10 ** 4), min_size=1, max_size=6),
       st.integers(0, 2 ** 63), st.integers(2, 6))
def test_round_trip_property(Ns, seed, d):
    cfg = default_config("iid_baseline", N=Ns, seed=seed, d=d)
    text = emit_config(cfg)
    again = parse_config(text)
    assert again.values == cfg.values and emit_config(again) == text


def test_integral_floats_accepted_for_ints():
    assert parse_config({"kind": "simulate", "N": 64.0}).N == 64
    with pytest.raises(ConfigError):
        parse_config({"kind": "simulate", "N": 64.5})
