"""Densities on regular meshes: Gaussian mixtures, discretization, images.

Grids store values at cell centers, row-major with x varying fastest.  Two
mass conventions exist: "density" (sum * dx * dy == 1, values approximate a
pdf) and "histogram" (sum == 1).  Branch inputs use the density convention
so network inputs live on the same scale as the analytic mixtures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, StructuralError

DENSITY = "density"
HISTOGRAM = "histogram"


@dataclass(frozen=True)
class MeshSpec:
    """Regular rectangular mesh of cell centers over a bounding box."""

    nx: int
    ny: int
    x_min: float = 0.0
    x_max: float = 5.0
    y_min: float = 0.0
    y_max: float = 5.0

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise StructuralError(f"mesh needs positive resolution, got {self.nx}x{self.ny}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise StructuralError("mesh bounds are not a proper rectangle")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def n_points(self) -> int:
        return self.nx * self.ny

    def xs(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    def ys(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.dy

    def points(self) -> np.ndarray:
        """All cell centers, (nx*ny, 2), row-major with x fastest."""
        gx, gy = np.meshgrid(self.xs(), self.ys())
        return np.column_stack([gx.ravel(), gy.ravel()])

    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)


@dataclass
class DensityGrid:
    """Discretized density on a MeshSpec, values row-major (x fastest)."""

    mesh: MeshSpec
    values: np.ndarray
    convention: str = DENSITY

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size != self.mesh.n_points:
            raise StructuralError(
                f"grid has {self.values.size} values for a {self.mesh.nx}x{self.mesh.ny} mesh"
            )
        if self.convention not in (DENSITY, HISTOGRAM):
            raise StructuralError(f"unknown mass convention {self.convention!r}")

    @property
    def nx(self) -> int:
        return self.mesh.nx

    @property
    def ny(self) -> int:
        return self.mesh.ny

    def values2d(self) -> np.ndarray:
        """(ny, nx) view; row iy holds y = ys()[iy]."""
        return self.values.reshape(self.mesh.ny, self.mesh.nx)

    def mass(self) -> float:
        s = float(self.values.sum())
        return s * self.mesh.cell_area if self.convention == DENSITY else s

    def normalized(self) -> "DensityGrid":
        m = self.mass()
        if m <= 0:
            raise StructuralError("cannot normalize a grid with non-positive mass")
        return DensityGrid(self.mesh, self.values / m, self.convention)

    def clamped(self) -> "DensityGrid":
        return DensityGrid(self.mesh, np.maximum(self.values, 0.0), self.convention)

    def as_convention(self, convention: str) -> "DensityGrid":
        if convention == self.convention:
            return self
        a = self.mesh.cell_area
        factor = a if convention == HISTOGRAM else 1.0 / a
        return DensityGrid(self.mesh, self.values * factor, convention)

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Bilinear interpolation between cell centers, clamped at the rim."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        mesh = self.mesh
        fx = np.clip((pts[:, 0] - mesh.x_min) / mesh.dx - 0.5, 0.0, mesh.nx - 1.0)
        fy = np.clip((pts[:, 1] - mesh.y_min) / mesh.dy - 0.5, 0.0, mesh.ny - 1.0)
        ix = np.minimum(fx.astype(np.intp), mesh.nx - 2) if mesh.nx > 1 else np.zeros(len(fx), np.intp)
        iy = np.minimum(fy.astype(np.intp), mesh.ny - 2) if mesh.ny > 1 else np.zeros(len(fy), np.intp)
        tx = fx - ix if mesh.nx > 1 else np.zeros_like(fx)
        ty = fy - iy if mesh.ny > 1 else np.zeros_like(fy)
        v = self.values2d()
        ix1 = np.minimum(ix + 1, mesh.nx - 1)
        iy1 = np.minimum(iy + 1, mesh.ny - 1)
        return (
            v[iy, ix] * (1 - tx) * (1 - ty)
            + v[iy, ix1] * tx * (1 - ty)
            + v[iy1, ix] * (1 - tx) * ty
            + v[iy1, ix1] * tx * ty
        )


class GaussianMixture2D:
    """Finite mixture of 2D Gaussians with full covariances."""

    def __init__(self, weights, means, covs):
        self.weights = np.asarray(weights, dtype=np.float64).ravel()
        self.means = np.asarray(means, dtype=np.float64).reshape(-1, 2)
        self.covs = np.asarray(covs, dtype=np.float64).reshape(-1, 2, 2)
        k = self.weights.size
        if self.means.shape[0] != k or self.covs.shape[0] != k or k == 0:
            raise StructuralError("weights/means/covs must agree on component count")
        if abs(self.weights.sum() - 1.0) > 1e-12 or (self.weights <= 0).any():
            raise StructuralError("mixture weights must be positive and sum to 1")
        for c in self.covs:
            if abs(c[0, 1] - c[1, 0]) > 1e-12 or np.linalg.eigvalsh(c).min() <= 0:
                raise StructuralError("covariances must be symmetric positive-definite")

    @property
    def k(self) -> int:
        return self.weights.size

    def density(self, x) -> np.ndarray:
        """Mixture pdf at points x of shape (n, 2) (or a single point)."""
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros(pts.shape[0])
        for w, u, c in zip(self.weights, self.means, self.covs):
            det = c[0, 0] * c[1, 1] - c[0, 1] * c[1, 0]
            inv = np.array([[c[1, 1], -c[0, 1]], [-c[1, 0], c[0, 0]]]) / det
            diff = pts - u
            q = (
                inv[0, 0] * diff[:, 0] ** 2
                + 2.0 * inv[0, 1] * diff[:, 0] * diff[:, 1]
                + inv[1, 1] * diff[:, 1] ** 2
            )
            out += w / (2.0 * np.pi * np.sqrt(det)) * np.exp(-0.5 * q)
        return out


def mixture_density(mixture: GaussianMixture2D, x) -> np.ndarray:
    """Mixture pdf over the rows of x; always returns a 1d array."""
    return mixture.density(x)


@dataclass
class MixtureRanges:
    """Sampling ranges for random mixture pairs."""

    k0: int = 5
    k1: int = 2
    mean_low: float = 1.3
    mean_high: float = 3.7
    var_low: float = 0.4
    var_high: float = 1.0
    cov_low: float = -0.4
    cov_high: float = 0.4
    weight_scheme: str = "random-simplex"

    def __post_init__(self):
        if self.k0 <= 0 or self.k1 <= 0:
            raise StructuralError("component counts must be positive")
        if self.weight_scheme not in ("uniform", "random-simplex"):
            raise StructuralError(f"unknown weight scheme {self.weight_scheme!r}")
        if self.var_low <= 0:
            raise StructuralError("variance range must be positive")


def _sample_weights(k: int, scheme: str, rng: np.random.Generator) -> np.ndarray:
    if scheme == "uniform" or k == 1:
        return np.full(k, 1.0 / k)
    e = rng.exponential(1.0, size=k)
    return e / e.sum()


def sample_mixture(k: int, ranges: MixtureRanges, rng: np.random.Generator) -> GaussianMixture2D:
    weights = _sample_weights(k, ranges.weight_scheme, rng)
    means = rng.uniform(ranges.mean_low, ranges.mean_high, size=(k, 2))
    covs = np.empty((k, 2, 2))
    for i in range(k):
        while True:
            v0 = rng.uniform(ranges.var_low, ranges.var_high)
            v1 = rng.uniform(ranges.var_low, ranges.var_high)
            c01 = rng.uniform(ranges.cov_low, ranges.cov_high)
            if c01 * c01 < v0 * v1:  # reject non-SPD draws
                break
        covs[i] = [[v0, c01], [c01, v1]]
    return GaussianMixture2D(weights, means, covs)


def sample_mixture_pair(
    ranges: MixtureRanges, rng: np.random.Generator
) -> tuple[GaussianMixture2D, GaussianMixture2D]:
    return sample_mixture(ranges.k0, ranges, rng), sample_mixture(ranges.k1, ranges, rng)


def discretize(density, mesh: MeshSpec, convention: str = DENSITY) -> DensityGrid:
    """Sample a density at cell centers and renormalize to the convention.

    ``density`` is a GaussianMixture2D or any callable mapping (n, 2) points
    to values.
    """
    fn = density.density if isinstance(density, GaussianMixture2D) else density
    values = np.asarray(fn(mesh.points()), dtype=np.float64).ravel()
    if values.size != mesh.n_points:
        raise StructuralError("density callable returned the wrong number of values")
    grid = DensityGrid(mesh, values, DENSITY).normalized()
    return grid.as_convention(convention)


# ---------------------------------------------------------------------------
# Image ingestion (portable pixmaps). Pixels are mapped onto the domain with
# the image's top row at the top of the square (max y).


def _read_pnm(path: str):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 2 or raw[0:1] != b"P" or chr(raw[1]) not in "2356":
        raise FormatError(f"{path}: not a P2/P3/P5/P6 portable pixmap")
    magic = raw[:2].decode()
    # Header tokens may be separated by whitespace and '#' comments.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    width, height, maxval = (int(t) for t in tokens)
    if width <= 0 or height <= 0 or maxval <= 0:
        raise FormatError(f"{path}: invalid dimensions/maxval")
    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels
    if magic in ("P2", "P3"):
        vals = np.array(raw[pos:].split(), dtype=np.float64)
        if vals.size != count:
            raise FormatError(f"{path}: expected {count} samples, found {vals.size}")
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        body = raw[pos : pos + count * dtype.itemsize]
        if len(body) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated pixel data")
        vals = np.frombuffer(body, dtype=dtype).astype(np.float64)
    return vals.reshape(height, width, channels), maxval


def load_image_density(path: str, channel: int = 0, mesh_bounds=(0.0, 5.0, 0.0, 5.0)) -> DensityGrid:
    """One image channel as a unit-mass density on the domain.

    Every pixel gets a +1 intensity offset before normalization so the
    resulting marginal is strictly positive (the entropic reference solvers
    need that).
    """
    from .gridio import read_geogrid  # local import; gridio depends on data

    try:
        with open(path, "rb") as f:
            head = f.read(8)
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if head.startswith(b"GEOGRID"):
        grid = read_geogrid(path)
        if (grid.values < 0).any():
            raise FormatError(f"{path}: negative density values")
        if grid.values.sum() <= 0:
            raise FormatError(f"{path}: zero total intensity")
        return grid.normalized().as_convention(DENSITY)
    pixels, _ = _read_pnm(path)
    if not 0 <= channel < pixels.shape[2]:
        raise FormatError(f"{path}: channel {channel} not present")
    plane = pixels[:, :, channel] + 1.0
    # Image row 0 is the top of the picture; grid row 0 is y_min.
    plane = plane[::-1, :]
    mesh = MeshSpec(plane.shape[1], plane.shape[0], *mesh_bounds)
    return DensityGrid(mesh, plane.ravel(), DENSITY).normalized()
