import json
import math

import numpy as np
import pytest

from kaclab.experiments import StudyReport, loglog_slope, mean_se, pmap
from kaclab.experiments.report import resolve_threads


def test_loglog_slope_exact_power_law():
    N = np.array([128, 256, 512, 1024])
    fit = loglog_slope(N, 3.0 * N ** (-1 / 3), 0.01 * N ** (-1 / 3))
    assert math.isclose(fit["slope"], -1 / 3, rel_tol=1e-12)
    assert math.isclose(math.exp(fit["intercept"]), 3.0, rel_tol=1e-12)
    assert fit["ci_low"] < -1 / 3 < fit["ci_high"]


def test_mean_se():
    m, se = mean_se([1.0, 2.0, 3.0])
    assert m == 2.0 and math.isclose(se, 1 / math.sqrt(3))


def test_report_serialisation():
    rep = StudyReport("demo", {"kind": "demo"}, [{"N": 2, "mean": 0.5}, {"N": 4, "se": math.nan}])
    rep.verdict("ok", 1.0, True, [0, 2])
    rep.verdict("bad", 3.0, False)
    assert not rep.passed
    d = json.loads(rep.to_json())
    assert d["cells"][1]["se"] is None
    assert rep.to_csv() == "N,mean,se\n2,0.5,\n4,,nan\n"
    assert rep.summary_lines() == ["FAIL demo.bad: value=3.0", "PASS demo.ok: value=1.0 band=[0, 2]"]


def _square(x):
    return x * x


def test_pmap_order_and_threads(monkeypatch):
    assert pmap(_square, range(10), 1) == [x * x for x in range(10)]
    assert pmap(_square, range(10), 2) == [x * x for x in range(10)]
    monkeypatch.setenv("KACLAB_THREADS", "3")
    assert resolve_threads() == 3
    assert resolve_threads(1) == 1
