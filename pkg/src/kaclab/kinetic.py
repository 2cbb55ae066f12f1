"""Kinematics of binary hard-sphere collisions and the Maxwellian equilibrium.

Velocities are float64 arrays with the dimension on the last axis.  The
collision map here performs the same floating-point operations, in the same
order, as the compiled jump-chain kernel, so replaying a recorded event log
through :func:`collide` reproduces a simulated trajectory bit for bit.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .cloud import WeightedPointCloud, sq_norm


def pair_distance(v, w):
    """``|v - w|`` along the last axis, accumulated coordinate by coordinate."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    diff = v[..., 0] - w[..., 0]
    acc = diff * diff
    for c in range(1, v.shape[-1]):
        diff = v[..., c] - w[..., c]
        acc = acc + diff * diff
    return np.sqrt(acc)


def collide(v, v_star, sigma):
    """Post-collisional velocities for the sigma-representation.

    ``v' = (v + v* + sigma |v - v*|) / 2`` and ``v*' = (v + v* - sigma |v - v*|) / 2``.
    Broadcasts over leading axes.

    >>> import numpy as np
    >>> vp, wp = collide([1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0])
    >>> vp.tolist(), wp.tolist()
    ([0.0, 1.0, 0.0], [0.0, -1.0, 0.0])
    """
    v = np.asarray(v, dtype=np.float64)
    v_star = np.asarray(v_star, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    g = pair_distance(v, v_star)[..., None]
    sc = v + v_star
    return (sc + sigma * g) * 0.5, (sc - sigma * g) * 0.5


def sample_sigma(d, rng, size=None):
    """Uniform draws on the unit sphere ``S^{d-1}`` (normalised Gaussians)."""
    shape = (d,) if size is None else (*np.atleast_1d(size), d)
    while True:
        z = rng.standard_normal(shape)
        n = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.all(n > 0):
            return z / n


def maxwellian_density(v, d=None):
    """Density of the centred Gaussian with ``E|v|^2 = 1``: ``(d/2pi)^{d/2} exp(-d|v|^2/2)``."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    d = v.shape[-1] if d is None else d
    return (d / (2.0 * math.pi)) ** (d / 2.0) * np.exp(-0.5 * d * sq_norm(v))


def maxwellian_sample(N, d, rng):
    """``N`` i.i.d. draws from the unit-energy Maxwellian in ``R^d``."""
    return rng.standard_normal((N, d)) / math.sqrt(d)


@dataclass(frozen=True)
class MaxwellianSpec:
    """The unit-energy Maxwellian in dimension ``d``."""

    d: int = 3

    def density(self, v):
        return maxwellian_density(v, self.d)

    def sample(self, N, rng):
        return maxwellian_sample(N, self.d, rng)

    def lambda_k(self, k):
        """``E[(1 + |v|^2)^{k/2}]``: ``d|v|^2`` is chi-squared with ``d`` degrees of freedom."""
        d = self.d

        def integrand(y):
            return (1.0 + y / d) ** (k / 2.0) * math.exp(
                (d / 2.0 - 1.0) * math.log(y) - y / 2.0 - (d / 2.0) * math.log(2.0) - special.gammaln(d / 2.0))

        val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val


class ParticleState:
    """Velocities of ``N`` particles in ``R^d`` (an ``(N, d)`` C-contiguous array).

    ``on_sphere`` records whether the state was placed on the Boltzmann sphere
    (zero momentum, unit energy per particle); the dynamics preserve it.
    """

    def __init__(self, velocities, on_sphere=False, copy=True):
        v = np.array(velocities, dtype=np.float64, copy=copy, order="C")
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 1:
            raise ValueError(f"need an (N, d) array with N >= 2, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("velocities must be finite")
        self.velocities = v
        self.on_sphere = bool(on_sphere)

    @property
    def N(self):
        return self.velocities.shape[0]

    @property
    def d(self):
        return self.velocities.shape[1]

    @property
    def momentum(self):
        """Mean velocity ``(1/N) sum v_i``."""
        return self.velocities.mean(axis=0)

    @property
    def energy(self):
        """Mean kinetic energy ``(1/N) sum |v_i|^2``."""
        return float(sq_norm(self.velocities).mean())

    def empirical(self):
        return WeightedPointCloud.empirical(self.velocities)

    def copy(self):
        return ParticleState(self.velocities, self.on_sphere)

    def __repr__(self):
        return f"ParticleState(N={self.N}, d={self.d}, on_sphere={self.on_sphere})"


def project_to_boltzmann_sphere(velocities):
    """Centre and rescale so that ``sum v_i = 0`` and ``sum |v_i|^2 = N``.

    >>> import numpy as np
    >>> project_to_boltzmann_sphere(np.array([[2.0, 0.0], [0.0, 0.0]])).tolist()
    [[1.0, 0.0], [-1.0, 0.0]]
    """
    u = np.asarray(velocities, dtype=np.float64)
    c = u - u.mean(axis=0)
    c = c - c.mean(axis=0)
    s = sq_norm(c).mean()
    if not s > 0.0:
        raise ValueError("cannot project a configuration with all velocities equal")
    return c / math.sqrt(s)


def _pair_table(mu):
    x, w = mu.points, mu.weights
    a, b = np.triu_indices(len(w), k=1)
    g = pair_distance(x[a], x[b])
    keep = g > 0
    return x[a[keep]], x[b[keep]], 2.0 * w[a[keep]] * w[b[keep]] * g[keep]


def collision_operator_apply(mu, n_sigma, rng, antithetic=True):
    """Monte Carlo approximation of ``Q(mu)`` as a signed point cloud.

    The loss part is exact.  The gain part uses ``n_sigma`` directions per pair,
    drawn as ``n_sigma/2`` antithetic pairs ``(sigma, -sigma)`` when requested.
    """
    xa, xb, coef = _pair_table(mu)
    d = mu.dim
    loss = np.zeros(mu.size)
    x, w = mu.points, mu.weights
    for k in range(mu.size):
        loss[k] = 2.0 * w[k] * float(np.dot(w, pair_distance(x, x[k])))
    if len(coef) == 0:
        return WeightedPointCloud(x, np.zeros(mu.size))
    sig = _sigma_block(d, len(coef), n_sigma, rng, antithetic)
    vp, wp = collide(xa[None], xb[None], sig)
    gw = np.broadcast_to(coef[None] / sig.shape[0], vp.shape[:2]).reshape(-1)
    pts = np.vstack([vp.reshape(-1, d), wp.reshape(-1, d), x])
    wts = np.concatenate([gw, gw, -loss])
    return WeightedPointCloud(pts, wts)


def _sigma_block(d, n_pairs, n_sigma, rng, antithetic):
    if antithetic:
        half = sample_sigma(d, rng, size=((n_sigma + 1) // 2, n_pairs))
        return np.concatenate([half, -half])[:max(n_sigma, 2)]
    return sample_sigma(d, rng, size=(n_sigma, n_pairs))


def collision_operator_integrate(mu, f, n_sigma, rng, antithetic=True, chunk=64):
    """Estimate ``<f, Q(mu)>`` with its Monte Carlo standard error.

    Each sigma-sample draws one direction per pair, so the per-sample values
    are i.i.d. and the standard error is their standard deviation over
    ``sqrt(n_sigma)``.  With ``antithetic`` the sample for ``-sigma`` is averaged
    into that of ``sigma``.
    """
    xa, xb, coef = _pair_table(mu)
    d = mu.dim
    if len(coef) == 0:
        return 0.0, 0.0
    loss = float(np.dot(coef, f(xa) + f(xb)))
    n_draw = (n_sigma + 1) // 2 if antithetic else n_sigma
    samples = []
    done = 0
    while done < n_draw:
        m = min(chunk, n_draw - done)
        sig = sample_sigma(d, rng, size=(m, len(coef)))
        vp, wp = collide(xa[None], xb[None], sig)
        gain = (f(vp.reshape(-1, d)) + f(wp.reshape(-1, d))).reshape(m, -1) @ coef
        if antithetic:
            vp, wp = collide(xa[None], xb[None], -sig)
            gain = 0.5 * (gain + (f(vp.reshape(-1, d)) + f(wp.reshape(-1, d))).reshape(m, -1) @ coef)
        samples.append(gain - loss)
        done += m
    y = np.concatenate(samples)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(len(y))) if len(y) > 1 else 0.0
