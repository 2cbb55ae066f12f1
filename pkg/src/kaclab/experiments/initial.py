"""Initial configurations on the Boltzmann sphere."""
import math

import numpy as np

from ..kinetic import maxwellian_sample, project_to_boltzmann_sphere, sample_sigma


def chaotic_init(sampler, N, rng):
    """Draw ``N`` i.i.d. velocities from ``sampler(N, rng)`` and project to the sphere.

    The projection subtracts the empirical mean and rescales to unit energy
    per particle.

    >>> import numpy as np
    >>> V = chaotic_init(lambda n, r: np.array([[1.0, 0.0], [3.0, 0.0]]), 2, None)
    >>> V.tolist()
    [[-1.0, 0.0], [1.0, 0.0]]
    """
    raw = np.asarray(sampler(N, rng), dtype=np.float64)
    if raw.shape[0] != N:
        raise ValueError(f"sampler returned {raw.shape[0]} rows, expected {N}")
    return project_to_boltzmann_sphere(raw)


def maxwellian_init(N, d, rng):
    """Chaotic initial data drawn from the unit-energy Maxwellian."""
    return chaotic_init(lambda n, r: maxwellian_sample(n, d, r), N, rng)


def heavy_tailed_sample(N, d, tail_index, rng):
    """Isotropic draws with Pareto radii ``P(|v| > r) = r^{-tail_index}`` for ``r >= 1``.

    Moments ``E|v|^q`` are finite exactly for ``q < tail_index``.
    """
    radius = (1.0 - rng.random(N)) ** (-1.0 / tail_index)
    return sample_sigma(d, rng, size=N) * radius[:, None]


def heavy_tailed_init(N, d, tail_index, rng):
    return chaotic_init(lambda n, r: heavy_tailed_sample(n, d, tail_index, r), N, rng)


def reflections(sigma):
    """The ``2^d`` images of ``sigma`` under coordinate sign flips, in binary order."""
    sigma = np.asarray(sigma, dtype=np.float64)
    d = len(sigma)
    signs = 1.0 - 2.0 * ((np.arange(2 ** d)[:, None] >> np.arange(d)[None, :]) & 1)
    return signs * sigma[None, :]


def nonchaotic_init(N, d, rng, sigma=None):
    """Configuration placing ``N / 2^d`` particles at each reflection of a random unit vector.

    The empirical measure does not depend on ``N`` (beyond the choice of
    ``sigma``), has zero momentum and unit energy, and particle labels are
    randomly permuted.
    """
    m = 2 ** d
    if N % m:
        raise ValueError(f"N must be a multiple of {m}")
    if sigma is None:
        sigma = sample_sigma(d, rng)
    atoms = reflections(np.asarray(sigma, dtype=np.float64) / np.linalg.norm(sigma))
    V = np.repeat(atoms, N // m, axis=0)
    return np.ascontiguousarray(V[rng.permutation(N)])


def equilibrium_sample(N, d, rng, size=None):
    """Uniform draw(s) on the Boltzmann sphere: Gaussians centred and rescaled.

    With ``size`` returns an array of shape ``(size, N, d)``.
    """
    if size is None:
        return project_to_boltzmann_sphere(rng.standard_normal((N, d)))
    Z = rng.standard_normal((size, N, d))
    Z -= Z.mean(axis=1, keepdims=True)
    s = np.einsum("mnd,mnd->m", Z, Z) / N
    return Z / np.sqrt(s)[:, None, None]


def fibonacci_sphere(n, d=3):
    """``n`` nearly uniform points on the unit sphere of ``R^3`` (Fibonacci lattice)."""
    if d != 3:
        raise ValueError("the Fibonacci lattice is implemented for d = 3")
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
