"""Study reports and small statistics helpers."""
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..io import dumps_canonical


@dataclass
class StudyReport:
    """Outcome of a study: per-cell statistics, fitted quantities and verdicts.

    ``to_json`` is deterministic (sorted keys, no wall-clock data), so two runs
    of the same configuration produce byte-identical files.
    """

    study: str
    config: dict
    cells: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def verdict(self, name, value, passed, band=None):
        self.verdicts[name] = {"value": value, "band": band, "pass": bool(passed)}

    @property
    def passed(self):
        return all(v["pass"] for v in self.verdicts.values())

    def to_dict(self):
        return {"study": self.study, "config": self.config, "cells": self.cells,
                "fits": self.fits, "verdicts": self.verdicts, "notes": self.notes}

    def to_json(self):
        return dumps_canonical(self.to_dict())

    def to_csv(self):
        """One row per cell, columns in sorted order."""
        if not self.cells:
            return ""
        cols = sorted({k for c in self.cells for k in c})
        lines = [",".join(cols)]
        for c in self.cells:
            lines.append(",".join("" if c.get(k) is None else _fmt(c[k]) for k in cols))
        return "\n".join(lines) + "\n"

    def summary_lines(self):
        out = []
        for name, v in sorted(self.verdicts.items()):
            out.append(f"{'PASS' if v['pass'] else 'FAIL'} {self.study}.{name}: value={v['value']}"
                       + (f" band={v['band']}" if v["band"] is not None else ""))
        return out


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def mean_se(x):
    """Sample mean and standard error (``ddof=1``)."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        return float(x.mean()) if len(x) else math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def loglog_slope(N, means, ses=None):
    """Weighted least-squares slope of ``log mean`` against ``log N``.

    Weights are inverse variances of ``log mean`` (delta method, ``se/mean``);
    without ``ses`` the fit is unweighted.  Returns a dict with the slope, its
    standard error, a 95% interval and the intercept.
    """
    x = np.log(np.asarray(N, dtype=np.float64))
    y = np.log(np.asarray(means, dtype=np.float64))
    if ses is None:
        w = np.ones_like(x)
    else:
        rel = np.asarray(ses, dtype=np.float64) / np.asarray(means, dtype=np.float64)
        w = 1.0 / np.maximum(rel, 1e-12) ** 2
    W = w.sum()
    xb = (w * x).sum() / W
    yb = (w * y).sum() / W
    sxx = (w * (x - xb) ** 2).sum()
    slope = (w * (x - xb) * (y - yb)).sum() / sxx
    intercept = yb - slope * xb
    if ses is None:
        resid = y - intercept - slope * x
        dof = max(len(x) - 2, 1)
        se = math.sqrt((resid ** 2).sum() / dof / sxx)
    else:
        se = math.sqrt(1.0 / sxx)
    return {"slope": float(slope), "slope_se": float(se), "intercept": float(intercept),
            "ci_low": float(slope - 1.96 * se), "ci_high": float(slope + 1.96 * se)}


def resolve_threads(threads=None):
    """Explicit value, else ``KACLAB_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get("KACLAB_THREADS", "1") or 1)
    return max(1, int(threads))


_SHARED = {}


def _init_worker(shared):
    _SHARED.clear()
    _SHARED.update(shared)


def shared():
    """Read-only data installed by :func:`pmap` for the current worker."""
    return _SHARED


def pmap(fn, tasks, threads=1, shared_data=None):
    """Ordered map over ``tasks``, in-process or on a process pool.

    Results never depend on ``threads``: every task carries its own seed.
    ``shared_data`` is made available to ``fn`` via :func:`shared`.
    """
    tasks = list(tasks)
    threads = resolve_threads(threads)
    if threads == 1 or len(tasks) <= 1:
        _init_worker(shared_data or {})
        try:
            return [fn(t) for t in tasks]
        finally:
            _SHARED.clear()
    with ProcessPoolExecutor(threads, initializer=_init_worker,
                             initargs=(shared_data or {},)) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
