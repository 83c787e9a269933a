"""Analytic differentiable field pairs.

These plug into the residual evaluators in place of the operator networks.
The translating-Gaussian pair solves the coupled optimality system exactly
(density advected at constant velocity, potential linear in space), so every
residual must vanish on it; that is the sharpest oracle the test suite has.
"""

from __future__ import annotations

import numpy as np

from .data import GaussianMixture2D
from .errors import StructuralError
from .nets import FIRST_KEYS, SECOND_KEYS, THIRD_KEYS


def gaussian_spatial_partials(mean, cov, y) -> dict:
    """Value and spatial partials (orders 1-3) of one Gaussian pdf at y.

    Keys are sorted tuples over spatial axes (0, 1) only.
    """
    cov = np.asarray(cov, dtype=np.float64)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
    diff = np.asarray(y, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    s = inv @ diff
    g = np.exp(-0.5 * diff @ s) / (2.0 * np.pi * np.sqrt(det))
    out = {(): g}
    for i in range(2):
        out[(i,)] = -s[i] * g
    for i in range(2):
        for j in range(i, 2):
            out[(i, j)] = (s[i] * s[j] - inv[i, j]) * g
    for i in range(2):
        for j in range(i, 2):
            for k in range(j, 2):
                out[(i, j, k)] = (
                    inv[k, i] * s[j] + inv[k, j] * s[i] + inv[i, j] * s[k] - s[i] * s[j] * s[k]
                ) * g
    return out


def _mixture_spatial_partials(mixture: GaussianMixture2D, y) -> dict:
    total: dict = {}
    for w, mean, cov in zip(mixture.weights, mixture.means, mixture.covs):
        part = gaussian_spatial_partials(mean, cov, y)
        for key, val in part.items():
            total[key] = total.get(key, 0.0) + w * val
    return total


def _time_shifted_jet(spatial: dict, velocity: np.ndarray) -> dict:
    """Full (x1, x2, t) jet of f(x - t a) from spatial partials of f.

    Each time derivative is the directional derivative along -a, so every
    mixed partial reduces to a combination of spatial partials.
    """
    a = velocity

    def spat(*idx):
        return spatial[tuple(sorted(idx))]

    jet = {(): spatial[()]}
    for key in FIRST_KEYS:
        if key == (2,):
            jet[key] = -(a[0] * spat(0) + a[1] * spat(1))
        else:
            jet[key] = spat(*key)
    for key in SECOND_KEYS + THIRD_KEYS:
        spatial_part = [i for i in key if i != 2]
        n_time = len(key) - len(spatial_part)
        if n_time == 0:
            jet[key] = spat(*key)
            continue
        # Expand (-a . grad)^n_time applied to the spatial partial.
        acc = 0.0
        if n_time == 1:
            for l in (0, 1):
                acc += -a[l] * spat(*spatial_part, l)
        else:  # n_time == 2; order three never carries three time indices here
            for l in (0, 1):
                for r in (0, 1):
                    acc += a[l] * a[r] * spat(*spatial_part, l, r)
        jet[key] = acc
    return jet


class GaussianTranslationField:
    """Exact solution pair: density mu0(x - t a), potential a.x - t |a|^2 / 2."""

    def __init__(self, mixture: GaussianMixture2D, velocity):
        self.mixture = mixture
        self.velocity = np.asarray(velocity, dtype=np.float64).ravel()
        if self.velocity.size != 2:
            raise StructuralError("velocity must be a 2-vector")

    def jets(self, x, t, order: int):
        x = np.asarray(x, dtype=np.float64)
        spatial = _mixture_spatial_partials(self.mixture, x - t * self.velocity)
        mu = _time_shifted_jet(spatial, self.velocity)
        a = self.velocity
        u = {key: 0.0 for key in ((),) + FIRST_KEYS + SECOND_KEYS + THIRD_KEYS}
        u[()] = a @ x - 0.5 * t * (a @ a)
        u[(0,)] = a[0]
        u[(1,)] = a[1]
        u[(2,)] = -0.5 * (a @ a)
        return mu, u

    def density(self, points, t: float) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return self.mixture.density(pts - t * self.velocity)


class CallableFieldPair:
    """Adapter for hand-written jets(x, t, order) functions in tests."""

    def __init__(self, jets_fn):
        self._jets_fn = jets_fn

    def jets(self, x, t, order: int):
        return self._jets_fn(x, t, order)
