import numpy as np
import pytest

from kaclab.branching import Environment
from kaclab.cloud import WeightedPointCloud
from kaclab.experiments import maxwellian_init
from kaclab.io import (dumps_canonical, read_environment, read_events_csv, read_measure_csv,
                       read_snapshot_csv, write_environment, write_events_csv, write_measure_csv,
                       write_snapshot_csv)
from kaclab.kinetic import ParticleState
from kaclab.process import KacProcess
from kaclab.seeding import stream


def test_event_log_round_trip_replays(tmp_path):
    V0 = maxwellian_init(20, 3, stream(0, 0, "init"))
    state = ParticleState(V0)
    _, batch = KacProcess(state, stream(0, 0, "dynamics")).advance(2.0, record=True)
    write_events_csv(tmp_path / "ev.csv", batch)
    back = read_events_csv(tmp_path / "ev.csv")
    for f in ("time", "i", "j", "sigma"):
        assert np.array_equal(getattr(back, f), getattr(batch, f))
    from kaclab.process import Trajectory
    assert np.array_equal(Trajectory(V0, back, 2.0).replay(), state.velocities)
    header = (tmp_path / "ev.csv").read_text().splitlines()[0]
    assert header == "event_index,time,i,j,sigma_1,sigma_2,sigma_3"


def test_snapshot_round_trip(tmp_path):
    V = np.random.default_rng(0).standard_normal((7, 3))
    write_snapshot_csv(tmp_path / "s.csv", V, 1.25, 42)
    back, head = read_snapshot_csv(tmp_path / "s.csv")
    assert np.array_equal(back, V)
    assert head == {"N": 7, "d": 3, "time": 1.25, "seed": 42}
    assert (tmp_path / "s.csv").read_text().startswith("# N=7, d=3, time=1.25, seed=42\nv1,v2,v3\n")


def test_snapshot_header_mismatch(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# N=3, d=2, time=0, seed=0\nv1,v2\n1,2\n")
    with pytest.raises(ValueError):
        read_snapshot_csv(p)


def test_measure_round_trip(tmp_path):
    mu = WeightedPointCloud(np.random.default_rng(1).standard_normal((9, 2)), np.linspace(-1, 1, 9))
    write_measure_csv(tmp_path / "m.csv", mu)
    back = read_measure_csv(tmp_path / "m.csv")
    assert np.array_equal(back.points, mu.points) and np.array_equal(back.weights, mu.weights)
    (tmp_path / "bad.csv").write_text("x1,x2\n0,0\n")
    with pytest.raises(ValueError):
        read_measure_csv(tmp_path / "bad.csv")


def test_environment_round_trip(tmp_path):
    clouds = [WeightedPointCloud.empirical(maxwellian_init(32, 3, stream(k, 0, "environment")))
              for k in range(3)]
    env = Environment([0.0, 0.1, 0.2, 0.4], clouds)
    head = write_environment(tmp_path / "env", env)
    back = read_environment(head)
    assert np.array_equal(back.times, env.times)
    assert np.array_equal(back.points, env.points) and np.array_equal(back.cumw, env.cumw)


def test_canonical_json():
    text = dumps_canonical({"b": np.float64(1.5), "a": [np.int64(2), float("nan")], "c": np.bool_(True)})
    assert text == '{\n  "a": [\n    2,\n    null\n  ],\n  "b": 1.5,\n  "c": true\n}\n'


def test_writes_are_atomic(tmp_path, monkeypatch):
    p = tmp_path / "m.csv"
    write_measure_csv(p, WeightedPointCloud.dirac([0.0]))
    before = p.read_text()
    import kaclab.io as io

    def boom(*a, **k):
        raise OSError("disk full")
    monkeypatch.setattr(io.os, "replace", boom)
    with pytest.raises(OSError):
        write_measure_csv(p, WeightedPointCloud.dirac([1.0]))
    assert p.read_text() == before
    assert [q.name for q in tmp_path.iterdir()] == ["m.csv"]
