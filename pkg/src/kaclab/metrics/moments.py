"""Polynomial moments ``Lambda_k(mu) = <(1 + |v|^2)^{k/2}, mu>``."""
import numpy as np

from ..cloud import WeightedPointCloud, weight_function


def lambda_k(mu, k):
    """``Lambda_k`` of a cloud (weights used as given) or of an ``(N, d)`` velocity array.

    >>> import numpy as np
    >>> lambda_k(np.zeros((4, 3)), 4)
    1.0
    """
    if isinstance(mu, WeightedPointCloud):
        return float(np.dot(mu.weights, weight_function(mu.points) ** (k / 2.0)))
    V = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    return float(np.mean(weight_function(V) ** (k / 2.0)))


def correlation_check(mu, k1, k2, rtol=1e-12):
    """Check ``Lambda_{k1} Lambda_{k2} <= Lambda_{k1+k2}`` for a probability measure.

    Returns ``(holds, lhs, rhs)``; ``holds`` allows a relative slack ``rtol``
    for rounding.
    """
    lhs = lambda_k(mu, k1) * lambda_k(mu, k2)
    rhs = lambda_k(mu, k1 + k2)
    return bool(lhs <= rhs * (1.0 + rtol)), lhs, rhs


def collision_moment_bound(pre, post, k):
    """Ratio ``Lambda_k(after) / Lambda_k(before)`` for a single collision.

    ``pre`` and ``post`` hold the full velocity arrays before and after.
    The collision lemma bounds this ratio by ``2^{k/2 + 1}``.
    """
    return lambda_k(post, k) / lambda_k(pre, k)
