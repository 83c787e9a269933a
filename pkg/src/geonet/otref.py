"""Independent optimal-transport solvers used as ground-truth proxies.

Nothing here touches the operator networks: entropic transport runs in the
log domain, tiny instances get an exact linear program, Gaussian endpoints
get the closed-form geodesic, and interpolated couplings are splatted onto
meshes.  The training stack is validated against these, never the reverse.

Quadratic ground cost throughout (squared Euclidean distances).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .data import DENSITY, DensityGrid, MeshSpec
from .errors import StructuralError

LP_SUPPORT_LIMIT = 64


@dataclass
class DiscreteMeasure:
    """Finitely supported probability measure on the plane."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.masses = np.asarray(self.masses, dtype=np.float64).ravel()
        if len(self.points) != len(self.masses) or len(self.masses) == 0:
            raise StructuralError("support points and masses disagree")
        if (self.masses <= 0).any():
            raise StructuralError("masses must be strictly positive")
        if abs(self.masses.sum() - 1.0) > 1e-12:
            raise StructuralError("masses must sum to 1")

    @classmethod
    def from_grid(cls, grid: DensityGrid, mass_floor: float = 0.0) -> "DiscreteMeasure":
        """Grid cells as atoms at cell centers; drops cells at/below the floor."""
        hist = grid.as_convention("histogram")
        keep = hist.values > mass_floor
        pts = grid.mesh.points()[keep]
        masses = hist.values[keep]
        return cls(pts, masses / masses.sum())

    def __len__(self) -> int:
        return len(self.masses)


@dataclass
class Coupling:
    """Transport plan between two discrete measures."""

    source_points: np.ndarray
    target_points: np.ndarray
    matrix: np.ndarray
    row_marginal_err: float
    col_marginal_err: float


@dataclass
class SinkhornResult:
    coupling: Coupling
    potential_source: np.ndarray
    potential_target: np.ndarray
    cost: float  # linear transport cost <P, C>
    converged: bool
    marginal_violation: float
    iterations: int


def _sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _lse(mat: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted log-sum-exp; cheaper than scipy's on small hot loops.

    Requires at least one finite entry along the reduced axis, which holds
    for strictly positive measures.
    """
    m = mat.max(axis=axis)
    return np.log(np.exp(mat - np.expand_dims(m, axis)).sum(axis=axis)) + m


def sinkhorn(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    epsilon_reg: float,
    max_iters: int = 100_000,
    tol: float = 1e-9,
    check_every: int = 10,
) -> SinkhornResult:
    """Log-domain alternating scaling until the marginals match within tol.

    Returns the coupling, the dual potentials and the linear transport cost
    <P, C> (the entropy term excluded, so the value is comparable with the
    exact LP cost).  Non-convergence is flagged, not raised.
    """
    if epsilon_reg <= 0:
        raise StructuralError("entropic regularization must be positive")
    cost_matrix = _sqdist(mu.points, nu.points)
    loga = np.log(mu.masses)
    logb = np.log(nu.masses)
    f = np.zeros(len(mu))
    g = np.zeros(len(nu))
    eps = float(epsilon_reg)
    converged = False
    violation = np.inf
    it = 0
    scaled_cost = cost_matrix / eps
    for it in range(1, max_iters + 1):
        f = loga - _lse(g[None, :] - scaled_cost, axis=1)
        g = logb - _lse(f[:, None] - scaled_cost, axis=0)
        if it % check_every == 0 or it == max_iters:
            plan = np.exp(f[:, None] + g[None, :] - scaled_cost)
            violation = float(np.abs(plan.sum(axis=1) - mu.masses).max())
            if violation < tol:
                converged = True
                break
    f = f * eps
    g = g * eps
    plan = np.exp((f[:, None] + g[None, :] - cost_matrix) / eps)
    row_err = float(np.abs(plan.sum(axis=1) - mu.masses).max())
    col_err = float(np.abs(plan.sum(axis=0) - nu.masses).max())
    coupling = Coupling(mu.points, nu.points, plan, row_err, col_err)
    return SinkhornResult(
        coupling=coupling,
        potential_source=f,
        potential_target=g,
        cost=float((plan * cost_matrix).sum()),
        converged=converged,
        marginal_violation=max(row_err, col_err),
        iterations=it,
    )


def lp_transport(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[Coupling, float]:
    """Exact optimal coupling on small supports via LP (HiGHS dual simplex)."""
    k0, k1 = len(mu), len(nu)
    if k0 > LP_SUPPORT_LIMIT or k1 > LP_SUPPORT_LIMIT:
        raise StructuralError(
            f"lp_transport is an oracle for supports up to {LP_SUPPORT_LIMIT} points per side"
        )
    cost_matrix = _sqdist(mu.points, nu.points)
    # Equality constraints: row sums then column sums (one is redundant;
    # HiGHS copes with the rank deficiency).
    n = k0 * k1
    a_eq = np.zeros((k0 + k1, n))
    for i in range(k0):
        a_eq[i, i * k1 : (i + 1) * k1] = 1.0
    for j in range(k1):
        a_eq[k0 + j, j::k1] = 1.0
    b_eq = np.concatenate([mu.masses, nu.masses])
    res = linprog(cost_matrix.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise StructuralError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(k0, k1)
    row_err = float(np.abs(plan.sum(axis=1) - mu.masses).max())
    col_err = float(np.abs(plan.sum(axis=0) - nu.masses).max())
    return Coupling(mu.points, nu.points, plan, row_err, col_err), float(res.fun)


def splat_atoms(
    positions: np.ndarray, masses: np.ndarray, mesh: MeshSpec, splat_sigma: float
) -> DensityGrid:
    """Gaussian-kernel deposition of weighted atoms onto a mesh (unit mass)."""
    if splat_sigma <= 0:
        raise StructuralError("splat width must be positive")
    xs, ys = mesh.xs(), mesh.ys()
    inv = -0.5 / (splat_sigma * splat_sigma)
    wx = np.exp(inv * (positions[:, 0:1] - xs[None, :]) ** 2)
    wy = np.exp(inv * (positions[:, 1:2] - ys[None, :]) ** 2)
    values2d = (wy * masses[:, None]).T @ wx  # (ny, nx)
    grid = DensityGrid(mesh, values2d.ravel(), DENSITY)
    return grid.normalized()


def displacement_interpolate(
    coupling: Coupling,
    t: float,
    target_mesh: MeshSpec,
    splat_sigma: float,
    mass_floor_ratio: float = 1e-15,
) -> DensityGrid:
    """Pushforward of the coupling through linear point interpolation.

    Every coupling atom moves to (1-t) x + t y and is splatted with an
    isotropic Gaussian; the grid is renormalized to unit mass.
    """
    if not 0.0 <= t <= 1.0:
        raise StructuralError(f"interpolation time {t} outside [0, 1]")
    plan = coupling.matrix
    mask = plan > plan.max() * mass_floor_ratio
    ii, jj = np.nonzero(mask)
    masses = plan[ii, jj]
    positions = (1.0 - t) * coupling.source_points[ii] + t * coupling.target_points[jj]
    return splat_atoms(positions, masses, target_mesh, splat_sigma)


# ---------------------------------------------------------------------------
# Closed-form Gaussian geodesics (the bias-free oracle).


@dataclass
class Gaussian2D:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(2, 2)
        if self.mean.size != 2:
            raise StructuralError("mean must be a 2-vector")
        if abs(self.cov[0, 1] - self.cov[1, 0]) > 1e-12:
            raise StructuralError("covariance must be symmetric")
        if np.linalg.eigvalsh(self.cov).min() <= 0:
            raise StructuralError("covariance must be positive-definite")

    def density(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        det = self.cov[0, 0] * self.cov[1, 1] - self.cov[0, 1] ** 2
        inv = np.array([[self.cov[1, 1], -self.cov[0, 1]], [-self.cov[0, 1], self.cov[0, 0]]]) / det
        diff = pts - self.mean
        q = (
            inv[0, 0] * diff[:, 0] ** 2
            + 2 * inv[0, 1] * diff[:, 0] * diff[:, 1]
            + inv[1, 1] * diff[:, 1] ** 2
        )
        return np.exp(-0.5 * q) / (2.0 * np.pi * np.sqrt(det))


def _spd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _check_not_singular(g: Gaussian2D) -> None:
    if np.linalg.eigvalsh(g.cov).min() < 1e-10:
        raise StructuralError("covariance is numerically singular (min eigenvalue < 1e-10)")


def bures_geodesic(g0: Gaussian2D, g1: Gaussian2D, t: float) -> Gaussian2D:
    """Closed-form constant-speed geodesic between Gaussian measures."""
    _check_not_singular(g0)
    _check_not_singular(g1)
    root0 = _spd_sqrt(g0.cov)
    inv_root0 = np.linalg.inv(root0)
    middle = _spd_sqrt(root0 @ g1.cov @ root0)
    transport = inv_root0 @ middle @ inv_root0
    blend = (1.0 - t) * np.eye(2) + t * transport
    cov_t = blend @ g0.cov @ blend
    cov_t = 0.5 * (cov_t + cov_t.T)  # scrub asymmetric rounding noise
    mean_t = (1.0 - t) * g0.mean + t * g1.mean
    return Gaussian2D(mean_t, cov_t)


def w2_gaussian(g0: Gaussian2D, g1: Gaussian2D) -> float:
    """Squared 2-Wasserstein distance between Gaussian measures."""
    _check_not_singular(g0)
    _check_not_singular(g1)
    root0 = _spd_sqrt(g0.cov)
    cross = _spd_sqrt(root0 @ g1.cov @ root0)
    dm = g0.mean - g1.mean
    return float(dm @ dm + np.trace(g0.cov) + np.trace(g1.cov) - 2.0 * np.trace(cross))


# ---------------------------------------------------------------------------
# Separable log-domain Sinkhorn for full-grid measures.  The cost is a sum of
# per-axis squared distances, so every logsumexp over the 2d support
# factorizes into two 1d stages; nothing of size (nx*ny)^2 is materialized.


class _GridKernel:
    def __init__(self, mesh: MeshSpec, eps: float):
        xs, ys = mesh.xs(), mesh.ys()
        self.dx2 = (xs[:, None] - xs[None, :]) ** 2 / eps  # (nx, nx)
        self.dy2 = (ys[:, None] - ys[None, :]) ** 2 / eps  # (ny, ny)
        self.xs = xs
        self.ys = ys

    def inner(self, h: np.ndarray, log_weight_y: np.ndarray | None = None) -> np.ndarray:
        """LSE_{bx,by}( h[bx,by] - dx2[ax,bx] - dy2[ay,by] ) as (nx, ny).

        ``h`` is a scaled potential (nx, ny); an optional additive log weight
        over the y coordinate rides along (used by the barycentric map).
        """
        hh = h if log_weight_y is None else h + log_weight_y[None, :]
        # stage 1 over by: m1[bx, ay]
        m1 = logsumexp(hh[:, None, :] - self.dy2[None, :, :], axis=2)
        # stage 2 over bx: (ax, ay)
        return logsumexp(m1[None, :, :] - self.dx2[:, :, None], axis=1)

    def inner_xweighted(self, h: np.ndarray, log_weight_x: np.ndarray) -> np.ndarray:
        return self.inner(h + log_weight_x[:, None])


@dataclass
class GridSinkhornResult:
    potential_source: np.ndarray  # (nx, ny), scaled by 1/eps nowhere (raw f)
    potential_target: np.ndarray
    cost: float
    converged: bool
    marginal_violation: float
    iterations: int


def _grid_masses(grid: DensityGrid) -> np.ndarray:
    hist = grid.as_convention("histogram")
    return hist.values2d().T.copy()  # (nx, ny), indexed [ix, iy]


def sinkhorn_grid(
    grid0: DensityGrid,
    grid1: DensityGrid,
    epsilon_reg: float,
    max_iters: int = 2000,
    tol: float = 1e-9,
    check_every: int = 10,
) -> GridSinkhornResult:
    """Entropic transport between two full-grid measures on a shared mesh."""
    if grid0.mesh != grid1.mesh:
        raise StructuralError("grid measures must share the mesh")
    if epsilon_reg <= 0:
        raise StructuralError("entropic regularization must be positive")
    eps = float(epsilon_reg)
    a = _grid_masses(grid0)
    b = _grid_masses(grid1)
    with np.errstate(divide="ignore"):
        loga = np.log(a)
        logb = np.log(b)
    kern = _GridKernel(grid0.mesh, eps)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    converged = False
    violation = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        f = eps * (loga - kern.inner(g / eps))
        g = eps * (logb - kern.inner(f / eps))
        if it % check_every == 0 or it == max_iters:
            source_marginal = np.exp(f / eps + kern.inner(g / eps))
            violation = float(np.abs(source_marginal - a).max())
            if violation < tol:
                converged = True
                break

    # Linear cost <P, C> split per axis; each Q-matrix is the pair marginal
    # of the plan over one axis and factorizes the same way as the updates.
    fs, gs = f / eps, g / eps
    m1 = logsumexp(gs[:, None, :] - kern.dy2[None, :, :], axis=2)  # (bx, ay)
    log_qx = logsumexp(fs[:, None, :] + m1[None, :, :], axis=2) - kern.dx2  # (ax, bx)
    cost_x = float((np.exp(log_qx) * kern.dx2).sum() * eps)
    k1 = logsumexp(fs[:, None, :] - kern.dx2[:, :, None], axis=0)  # (bx, ay)
    log_qy = logsumexp(k1[:, :, None] + gs[:, None, :], axis=0) - kern.dy2  # (ay, by)
    cost_y = float((np.exp(log_qy) * kern.dy2).sum() * eps)
    return GridSinkhornResult(
        potential_source=f,
        potential_target=g,
        cost=cost_x + cost_y,
        converged=converged,
        marginal_violation=violation,
        iterations=it,
    )


def w2_grid_estimate(
    grid0: DensityGrid,
    grid1: DensityGrid,
    epsilon_reg: float,
    max_iters: int = 5000,
    tol: float = 1e-9,
) -> float:
    """Entropic estimate of the squared Wasserstein distance between grids.

    The value is the linear transport cost of the entropic plan and is
    biased upward by an O(eps) term; callers pick eps accordingly.
    """
    return sinkhorn_grid(grid0, grid1, epsilon_reg, max_iters=max_iters, tol=tol).cost


def barycentric_map(
    grid0: DensityGrid, grid1: DensityGrid, result: GridSinkhornResult, epsilon_reg: float
) -> np.ndarray:
    """Entropic barycentric projection T(x_i) = E_P[y | x_i], shape (n, 2).

    Rows follow the source grid's row-major (x fastest) cell order.
    """
    eps = float(epsilon_reg)
    mesh = grid0.mesh
    kern = _GridKernel(mesh, eps)
    fs = result.potential_source / eps
    gs = result.potential_target / eps
    with np.errstate(divide="ignore"):
        log_r = fs + kern.inner(gs)  # log source marginal
        log_num_x = fs + kern.inner_xweighted(gs, np.log(kern.xs))
        log_num_y = fs + kern.inner(gs, np.log(kern.ys))
    tx = np.exp(log_num_x - log_r)
    ty = np.exp(log_num_y - log_r)
    # (nx, ny) indexed [ix, iy] -> row-major x fastest
    return np.column_stack([tx.T.ravel(), ty.T.ravel()])


def reference_geodesic(
    grid0: DensityGrid,
    grid1: DensityGrid,
    t: float,
    out_mesh: MeshSpec,
    epsilon_reg: float = 0.003,
    splat_sigma: float | None = None,
    max_iters: int = 2000,
    tol: float = 1e-9,
    method: str = "dense",
) -> DensityGrid:
    """Displacement interpolation of an entropic coupling, splatted on a mesh.

    method "dense" materializes the coupling between the grids' atoms and
    pushes every pair forward (the evaluation-table reference).  Method
    "separable" never forms the coupling; it moves each source atom to its
    barycentric target (the large-mesh fast path used for benchmarking).
    """
    if splat_sigma is None:
        splat_sigma = out_mesh.dx
    if method == "dense":
        mu = DiscreteMeasure.from_grid(grid0)
        nu = DiscreteMeasure.from_grid(grid1)
        res = sinkhorn(mu, nu, epsilon_reg, max_iters=max_iters, tol=tol)
        return displacement_interpolate(res.coupling, t, out_mesh, splat_sigma)
    if method == "separable":
        res = sinkhorn_grid(grid0, grid1, epsilon_reg, max_iters=max_iters, tol=tol)
        tbar = barycentric_map(grid0, grid1, res, epsilon_reg)
        src = grid0.mesh.points()
        masses = grid0.as_convention("histogram").values
        positions = (1.0 - t) * src + t * tbar
        return splat_atoms(positions, masses, out_mesh, splat_sigma)
    raise StructuralError(f"unknown reference method {method!r}")
