"""Shared test helpers: finite-difference oracles and random model builders.

The FD oracles use 4th-order central stencils so their truncation error sits
far below the tolerances being checked; the step is the spec'd 1e-4 unless a
test overrides it.
"""

import numpy as np

from geonet.data import GaussianMixture2D, MeshSpec, MixtureRanges, sample_mixture, discretize
from geonet.nets import FIRST_KEYS, SECOND_KEYS, THIRD_KEYS


def central_diff(fn, x, i, h=1e-4):
    """d/dx_i of fn at x, 4th-order central stencil."""
    x = np.asarray(x, dtype=np.float64)
    e = np.zeros_like(x)
    e[i] = h
    return (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)


def rel_err(got, want, floor=1e-6):
    return abs(got - want) / max(abs(want), floor)


def random_spd_2x2(rng, var_low=0.4, var_high=1.0, cov_bound=0.4):
    while True:
        v0 = rng.uniform(var_low, var_high)
        v1 = rng.uniform(var_low, var_high)
        c = rng.uniform(-cov_bound, cov_bound)
        if c * c < v0 * v1:
            return np.array([[v0, c], [c, v1]])


def random_gaussian_mixture(rng, k=1):
    ranges = MixtureRanges(k0=k, k1=k)
    return sample_mixture(k, ranges, rng)


def gaussian_pair_dataset(n, mesh, seed, identity=False):
    """(analytic mixtures, sensor grids) for n random single-Gaussian pairs."""
    rng = np.random.default_rng(seed)
    analytic, grids = [], []
    for _ in range(n):
        m0 = random_gaussian_mixture(rng)
        m1 = m0 if identity else random_gaussian_mixture(rng)
        analytic.append((m0, m1))
        grids.append((discretize(m0, mesh), discretize(m1, mesh)))
    return analytic, grids


ALL_JET_KEYS = FIRST_KEYS + SECOND_KEYS + THIRD_KEYS
