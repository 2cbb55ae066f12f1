"""Optimal-transport distances backed by POT's network simplex."""
import os

for _name in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_name}", "1")

import numpy as np  # noqa: E402
import ot  # noqa: E402
from scipy.spatial.distance import cdist  # noqa: E402

from ..cloud import WeightedPointCloud, weight_function  # noqa: E402

EMD_MAX_ITER = 10 ** 9


def emd(a, b, M, log=False):
    """Exact discrete transport between histograms ``a`` and ``b`` (equal totals)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    b = b * (a.sum() / b.sum())
    res = ot.emd(a, b, np.ascontiguousarray(M, dtype=np.float64),
                 numItermax=EMD_MAX_ITER, log=True)
    plan, info = res
    if info.get("result_code", 1) != 1:
        raise RuntimeError(f"network simplex failed: {info.get('warning')}")
    cost = float(np.sum(plan * M))
    return (cost, plan, info) if log else cost


def w1_ot(mu, nu):
    """Euclidean ``W_1`` between two probability clouds (exact network simplex)."""
    _check_pair(mu, nu)
    M = cdist(mu.points, nu.points)
    return emd(mu.weights, nu.weights, M)


def reweight(mu):
    """The measure ``mu / (1 + |v|^2)``."""
    return WeightedPointCloud(mu.points, mu.weights / weight_function(mu.points), merge=False)


def _check_pair(mu, nu, tol=1e-9):
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if np.any(mu.weights < -tol) or np.any(nu.weights < -tol):
        raise ValueError("transport distances need non-negative weights")
    if abs(mu.total_mass - nu.total_mass) > tol * max(1.0, mu.total_mass):
        raise ValueError(f"unequal total masses {mu.total_mass} and {nu.total_mass}")
