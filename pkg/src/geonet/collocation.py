"""Collocation batches: random space-time points with cached pair data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError


@dataclass
class CollocationBatch:
    """Sampled interior points plus everything the loss needs per entry.

    ``mu0_sensors``/``mu1_sensors`` hold the branch input vectors for the
    whole pair set (shape (n_pairs, m)); entries reference them through
    ``pair_idx``.  ``mu0_at_x``/``mu1_at_x`` are the endpoint densities at
    each entry's spatial location, used by the boundary residuals.
    """

    points: np.ndarray
    pair_idx: np.ndarray
    mu0_at_x: np.ndarray
    mu1_at_x: np.ndarray
    mu0_sensors: np.ndarray
    mu1_sensors: np.ndarray

    def __post_init__(self):
        n = len(self.points)
        if not (len(self.pair_idx) == len(self.mu0_at_x) == len(self.mu1_at_x) == n):
            raise StructuralError("collocation arrays disagree on length")
        if self.mu0_sensors.shape != self.mu1_sensors.shape:
            raise StructuralError("sensor caches disagree on shape")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_pairs(self) -> int:
        return self.mu0_sensors.shape[0]

    def subset(self, idx: np.ndarray) -> "CollocationBatch":
        return CollocationBatch(
            points=self.points[idx],
            pair_idx=self.pair_idx[idx],
            mu0_at_x=self.mu0_at_x[idx],
            mu1_at_x=self.mu1_at_x[idx],
            mu0_sensors=self.mu0_sensors,
            mu1_sensors=self.mu1_sensors,
        )

    def minibatches(self, batch_size: int, order: np.ndarray | None = None, n_batches: int | None = None):
        """Split into chunks of batch_size entries, optionally reordered."""
        n = len(self)
        idx = np.arange(n) if order is None else np.asarray(order)
        chunks = [idx[i : i + batch_size] for i in range(0, n, batch_size)]
        if n_batches is not None:
            chunks = chunks[:n_batches]
        for chunk in chunks:
            yield self.subset(chunk)


# Stream tags for the documented seed split: every consumer of randomness
# seeds a fresh PCG64 with SeedSequence([master_seed, tag, epoch]).
INIT_STREAM = 0
POINTS_STREAM = 1
SHUFFLE_STREAM = 2


def stream_rng(master_seed: int, tag: int, epoch: int) -> np.random.Generator:
    """Deterministic per-(stream, epoch) generator derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(tag), int(epoch)]))


def sample_collocations(
    domain: tuple[float, float, float, float],
    collocations_per_pair: int,
    dataset,
    epoch: int,
    master_seed: int,
    sensor_cache: tuple[np.ndarray, np.ndarray] | None = None,
) -> CollocationBatch:
    """Draw per-pair i.i.d. uniform points on the space-time cylinder.

    ``dataset`` is a sequence of (DensityGrid, DensityGrid) pairs; boundary
    values at the sampled locations come from bilinear interpolation on the
    pair's own grids.  The draw is deterministic in (master_seed, epoch).
    """
    n_pairs = len(dataset)
    if n_pairs == 0:
        raise StructuralError("empty dataset")
    x_min, x_max, y_min, y_max = domain
    rng = stream_rng(master_seed, POINTS_STREAM, epoch)
    n = n_pairs * collocations_per_pair
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(x_min, x_max, size=n)
    pts[:, 1] = rng.uniform(y_min, y_max, size=n)
    pts[:, 2] = rng.uniform(0.0, 1.0, size=n)
    pair_idx = np.repeat(np.arange(n_pairs, dtype=np.intp), collocations_per_pair)
    if sensor_cache is None:
        mu0_sensors = np.stack([g0.values for g0, _ in dataset])
        mu1_sensors = np.stack([g1.values for _, g1 in dataset])
    else:
        mu0_sensors, mu1_sensors = sensor_cache
    mu0_at_x = np.empty(n)
    mu1_at_x = np.empty(n)
    for i, (g0, g1) in enumerate(dataset):
        rows = slice(i * collocations_per_pair, (i + 1) * collocations_per_pair)
        mu0_at_x[rows] = g0.interpolate(pts[rows, :2])
        mu1_at_x[rows] = g1.interpolate(pts[rows, :2])
    return CollocationBatch(
        points=pts,
        pair_idx=pair_idx,
        mu0_at_x=mu0_at_x,
        mu1_at_x=mu1_at_x,
        mu0_sensors=mu0_sensors,
        mu1_sensors=mu1_sensors,
    )
