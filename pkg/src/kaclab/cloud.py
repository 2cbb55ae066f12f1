"""Finitely supported signed measures on R^d."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class WeightedPointCloud:
    """A finite signed measure ``sum_k w_k delta_{x_k}``.

    Coincident support points are merged on construction (weights added), so
    the support is always a set.  Points come out sorted lexicographically.
    """

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None, *, merge=True):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[-1] if pts.ndim == 2 else 0)
        if weights is None:
            w = np.full(len(pts), 1.0 / max(len(pts), 1))
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if len(w) != len(pts):
            raise ValueError(f"{len(pts)} points but {len(w)} weights")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise ValueError("points and weights must be finite")
        if merge and len(pts) > 1:
            pts, inv = np.unique(pts, axis=0, return_inverse=True)
            w = np.bincount(inv.reshape(-1), weights=w, minlength=len(pts))
        object.__setattr__(self, "points", np.ascontiguousarray(pts))
        object.__setattr__(self, "weights", np.ascontiguousarray(w))

    @classmethod
    def empirical(cls, velocities):
        """Empirical measure with mass ``1/N`` at each row of ``velocities``."""
        v = np.atleast_2d(np.asarray(velocities, dtype=np.float64))
        return cls(v, np.full(len(v), 1.0 / len(v)))

    @classmethod
    def dirac(cls, x):
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        return cls(x, [1.0])

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def size(self):
        return len(self.weights)

    def __len__(self):
        return self.size

    @property
    def total_mass(self):
        return float(self.weights.sum())

    def is_probability(self, tol=1e-9):
        return bool(np.all(self.weights >= -tol) and abs(self.total_mass - 1.0) <= tol)

    def integrate(self, f):
        """``<f, mu>`` for a vectorised ``f`` mapping ``(m, d)`` arrays to ``(m,)``."""
        if self.size == 0:
            return 0.0
        return float(np.dot(self.weights, f(self.points)))

    def abs(self):
        """The total-variation measure ``|mu|``."""
        return WeightedPointCloud(self.points, np.abs(self.weights), merge=False)

    def scaled(self, c):
        return WeightedPointCloud(self.points, c * self.weights, merge=False)

    def __add__(self, other):
        return WeightedPointCloud(np.vstack([self.points, other.points]),
                                  np.concatenate([self.weights, other.weights]))

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def __repr__(self):
        return f"WeightedPointCloud(size={self.size}, dim={self.dim}, mass={self.total_mass:.6g})"


def union_support(mu, nu):
    """Common support of ``mu`` and ``nu`` with both weight vectors aligned to it."""
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    pts = np.vstack([mu.points, nu.points])
    x, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    a = np.bincount(inv[:mu.size], weights=mu.weights, minlength=len(x))
    b = np.bincount(inv[mu.size:], weights=nu.weights, minlength=len(x))
    return x, a, b


def sq_norm(points):
    """``|x|^2`` row-wise."""
    return np.einsum("ij,ij->i", points, points)


def weight_function(points):
    """``1 + |x|^2`` row-wise."""
    return 1.0 + sq_norm(points)
