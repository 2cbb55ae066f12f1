"""Dyadic-partition upper bound for the weighted Wasserstein distance.

Space is cut into the cube ``A_0 = (-1, 1]^d`` and the shells
``A_j = (-2^j, 2^j]^d minus (-2^{j-1}, 2^{j-1}]^d``.  At refinement level ``l``
the shell ``A_j`` is tiled by half-open cubes of side ``2^{j-l+1}`` aligned to
the origin.  Writing a test function as a telescoping sum of cell averages
bounds ``<f, mu - nu>`` by cell masses of ``(1 + |v|^2)(mu - nu)`` plus a
remainder controlled by fourth moments.
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..cloud import union_support, weight_function
from .moments import lambda_k


def shell_index(points):
    """Smallest ``j >= 0`` with each coordinate in ``(-2^j, 2^j]``."""
    p = np.atleast_2d(points)
    # x <= 2^j for x > 0 and x > -2^j for x <= 0; frexp gives exact exponents
    pos_m, pos_e = np.frexp(np.where(p > 0, p, 0.0))
    j_pos = np.where(p > 0, np.where(pos_m == 0.5, pos_e - 1, pos_e), 0)
    neg_m, neg_e = np.frexp(np.where(p < 0, -p, 0.0))
    j_neg = np.where(p < 0, neg_e, 0)   # -x < 2^j  <=>  j >= floor(log2(-x)) + 1
    return np.maximum(np.max(np.maximum(j_pos, j_neg), axis=1), 0).astype(np.int64)


def cell_keys(points, j, l):
    """Integer cell coordinates of ``points`` in the level-``l`` grid of shell ``j``."""
    h = math.ldexp(1.0, j - l + 1)
    return (np.ceil(np.atleast_2d(points) / h) - 1.0).astype(np.int64)


@dataclass(frozen=True)
class DyadicPartition:
    """The family of dyadic cells ``P_{j,l}`` for ``j <= J`` and ``2 <= l <= L``."""

    J: int
    L: int
    d: int = 3

    def __post_init__(self):
        if self.J < 0 or self.L < 2 or self.d < 1:
            raise ValueError("need J >= 0, L >= 2, d >= 1")

    def side(self, j, l):
        return math.ldexp(1.0, j - l + 1)

    def n_cells(self, j, l):
        """Number of cells of ``P_{j,l}`` (shells exclude the inner cube)."""
        return 2 ** (l * self.d) - (2 ** ((l - 1) * self.d) if j >= 1 else 0)

    def cells(self, j, l):
        """Integer keys of every cell of ``P_{j,l}`` (enumerated; small ``l`` only)."""
        half = 2 ** (l - 1)
        inner = 2 ** (l - 2)
        keys = []
        for k in itertools.product(range(-half, half), repeat=self.d):
            if j >= 1 and all(-inner <= kc < inner for kc in k):
                continue
            keys.append(k)
        return np.array(keys, dtype=np.int64).reshape(-1, self.d)

    def locate(self, points, l):
        """Shell index and level-``l`` cell keys for each point (shell ``> J`` is outside)."""
        j = shell_index(points)
        keys = np.empty((len(j), self.d), dtype=np.int64)
        for jj in np.unique(j):
            sel = j == jj
            keys[sel] = cell_keys(np.atleast_2d(points)[sel], int(jj), l)
        return j, keys

    def remainder_constant(self):
        """Constant multiplying ``(2^{-2J} + 2^{-L})(Lambda_4(mu) + Lambda_4(nu))``."""
        return max(4.0, 2.0 * math.sqrt(self.d))

    def coefficient(self, j, l):
        """Bound on the telescoping coefficient of a level-``l`` cell in shell ``j``."""
        return 1.0 if l == 2 else 2.0 * math.sqrt(self.d) * math.ldexp(1.0, j - l)


def dyadic_upper_bound(mu, nu, J, L):
    """Certified upper bound on ``W(mu, nu)``; returns ``(upper, remainder)``.

    >>> from kaclab.cloud import WeightedPointCloud as P
    >>> u, r = dyadic_upper_bound(P.dirac([0.1, 0.1, 0.1]), P.dirac([0.1, 0.1, 0.1]), 4, 4)
    >>> u == r
    True
    """
    x, a, b = union_support(mu, nu)
    part = DyadicPartition(J, L, x.shape[1])
    m = weight_function(x) * (a - b)
    j = shell_index(x)
    total = 0.0
    for jj in range(J + 1):
        sel = j == jj
        if not np.any(sel):
            continue
        pts, mass = x[sel], m[sel]
        for l in range(2, L + 1):
            _, inv = np.unique(cell_keys(pts, jj, l), axis=0, return_inverse=True)
            cell_mass = np.bincount(inv.reshape(-1), weights=mass)
            total += part.coefficient(jj, l) * float(np.sum(np.abs(cell_mass)))
    remainder = part.remainder_constant() * (math.ldexp(1.0, -2 * J) + math.ldexp(1.0, -L)) * (
        lambda_k(mu.abs(), 4) + lambda_k(nu.abs(), 4))
    return total + remainder, remainder
