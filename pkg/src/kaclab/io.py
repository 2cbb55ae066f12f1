"""File formats: event logs, snapshots, measures, environments and JSON reports.

All writers are atomic (temporary file in the target directory, then rename)
and print floats with 17 significant digits, which round-trips float64.
"""
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .cloud import WeightedPointCloud

FLOAT_FMT = "%.17g"


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_canonical(obj):
    """Deterministic JSON: sorted keys, two-space indent, non-finite floats as null."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write(path, dumps_canonical(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_events_csv(path, batch, first_index=0):
    """Event log: ``event_index,time,i,j,sigma_1..sigma_d``."""
    d = batch.sigma.shape[1] if len(batch) else 0
    header = ["event_index", "time", "i", "j"] + [f"sigma_{c + 1}" for c in range(d)]
    buf = [",".join(header)]
    for e in range(len(batch)):
        vals = [str(first_index + e), FLOAT_FMT % batch.time[e], str(int(batch.i[e])),
                str(int(batch.j[e]))] + [FLOAT_FMT % s for s in batch.sigma[e]]
        buf.append(",".join(vals))
    atomic_write(path, "\n".join(buf) + "\n")


def read_events_csv(path):
    """Inverse of :func:`write_events_csv`; returns an ``EventBatch``."""
    from .process import EventBatch
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:4] != ["event_index", "time", "i", "j"]:
        raise ValueError(f"{path}: not an event log")
    d = len(header) - 4
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2).reshape(-1, 4 + d)
    return EventBatch(data[:, 1].copy(), data[:, 2].astype(np.int64), data[:, 3].astype(np.int64),
                      np.ascontiguousarray(data[:, 4:]))


def write_snapshot_csv(path, velocities, time, seed):
    """Snapshot: comment header ``# N=.., d=.., time=.., seed=..`` then ``v1..vd`` rows."""
    V = np.atleast_2d(velocities)
    N, d = V.shape
    head = f"# N={N}, d={d}, time={FLOAT_FMT % time}, seed={seed}\n"
    cols = ",".join(f"v{c + 1}" for c in range(d)) + "\n"
    body = "\n".join(",".join(FLOAT_FMT % x for x in row) for row in V)
    atomic_write(path, head + cols + body + "\n")


def read_snapshot_csv(path):
    """Returns ``(velocities, header)`` with ``header`` a dict of N, d, time, seed."""
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise ValueError(f"{path}: missing snapshot header")
    header = {}
    for part in first[1:].split(","):
        k, v = part.strip().split("=")
        header[k] = float(v) if k == "time" else int(v)
    V = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    if V.shape != (header["N"], header["d"]):
        raise ValueError(f"{path}: header says {header['N']}x{header['d']}, body is {V.shape}")
    return V, header


def write_measure_csv(path, cloud):
    """Measure exchange: columns ``x1..xd,weight``."""
    d = cloud.dim
    header = ",".join([f"x{c + 1}" for c in range(d)] + ["weight"]) + "\n"
    data = np.column_stack([cloud.points, cloud.weights])
    body = "\n".join(",".join(FLOAT_FMT % x for x in row) for row in data)
    atomic_write(path, header + body + ("\n" if len(data) else ""))


def read_measure_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[-1] != "weight":
        raise ValueError(f"{path}: last column must be 'weight'")
    d = len(header) - 1
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2).reshape(-1, d + 1)
    return WeightedPointCloud(data[:, :d], data[:, d])


def write_environment(directory, env):
    """Environment: ``environment.json`` header plus one measure CSV per piece."""
    directory = Path(directory)
    names = []
    for k, cl in enumerate(env.clouds):
        name = f"piece_{k:04d}.csv"
        write_measure_csv(directory / name, cl)
        names.append(name)
    write_json(directory / "environment.json",
               {"d": env.d, "times": env.times, "clouds": names})
    return directory / "environment.json"


def read_environment(path, check=True):
    from .branching import Environment
    path = Path(path)
    head = read_json(path)
    clouds = [read_measure_csv(path.parent / name) for name in head["clouds"]]
    return Environment(head["times"], clouds, check=check)
