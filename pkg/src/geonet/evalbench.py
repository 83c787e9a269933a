"""Evaluation protocol: MSE tables, super-resolution export, runtime scaling.

The error metric is the Riemann-sum squared-L2 distance between the raw
operator output and a reference geodesic frame.  Two references exist: the
closed-form Gaussian geodesic (bias-free, single-Gaussian pairs only) and
displacement interpolation of an entropic coupling (general pairs; its
regularization and splat width are stamped into every report so the proxy's
bias stays visible).
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DensityGrid, MeshSpec, discretize
from .errors import StructuralError
from .gridio import write_geogrid, write_pgm
from .operator import OperatorParams, eval_geodesic_grid
from .otref import Gaussian2D, bures_geodesic, reference_geodesic

EVAL_TIMES = (0.0, 0.25, 0.5, 0.75, 1.0)
REFERENCE_EPSILON = 0.003

EVAL_CSV_COLUMNS = ("time", "mean_mse", "std_mse", "n_pairs", "reference", "mesh")
BENCH_CSV_COLUMNS = ("points", "method", "median_seconds", "reps")


def mse(pred: DensityGrid, ref: DensityGrid) -> float:
    """Riemann-sum integral of the squared pointwise difference."""
    if pred.mesh != ref.mesh:
        raise StructuralError("MSE needs both grids on the same mesh")
    if pred.convention != ref.convention:
        raise StructuralError("MSE needs a shared mass convention")
    diff = pred.values - ref.values
    return float(pred.mesh.cell_area * (diff @ diff))


@dataclass
class EvalReport:
    """Mean/std MSE per interpolation time plus the evaluation context."""

    times: tuple
    mean_mse: list
    std_mse: list
    n_pairs: int
    reference: str
    mesh: MeshSpec
    metadata: dict = field(default_factory=dict)

    def row(self, t: float) -> tuple[float, float]:
        i = self.times.index(t)
        return self.mean_mse[i], self.std_mse[i]


def _prediction(params: OperatorParams, mu0: DensityGrid, mu1: DensityGrid, mesh, t):
    raw, _ = eval_geodesic_grid(params, mu0.values, mu1.values, mesh, t)
    return raw


def _bures_frames(pair, times, mesh):
    g0, g1 = pair
    if not isinstance(g0, Gaussian2D) or not isinstance(g1, Gaussian2D):
        raise StructuralError("the closed-form reference needs single-Gaussian pairs")
    return [discretize(bures_geodesic(g0, g1, t).density, mesh) for t in times]


def _sinkhorn_frames(pair, times, mesh, epsilon_reg, max_iters):
    mu0, mu1 = pair
    return [
        reference_geodesic(mu0, mu1, t, mesh, epsilon_reg=epsilon_reg, max_iters=max_iters)
        for t in times
    ]


def eval_table(
    params: OperatorParams,
    test_pairs,
    reference: str,
    eval_mesh: MeshSpec | None = None,
    times=EVAL_TIMES,
    epsilon_reg: float = REFERENCE_EPSILON,
    reference_max_iters: int = 1000,
) -> EvalReport:
    """MSE statistics over test pairs at each interpolation time.

    reference "bures" takes (Gaussian2D, Gaussian2D) pairs and compares with
    the exactly discretized closed-form geodesic; "sinkhorn" takes
    (DensityGrid, DensityGrid) pairs at the sensor resolution and compares
    with the splatted displacement interpolation of the entropic coupling.
    """
    if len(test_pairs) < 2:
        raise StructuralError("MSE statistics need at least 2 test pairs")
    if eval_mesh is None:
        eval_mesh = MeshSpec(50, 50, *params.domain)
    times = tuple(float(t) for t in times)
    errors = np.empty((len(test_pairs), len(times)))
    for i, pair in enumerate(test_pairs):
        if reference == "bures":
            g0, g1 = pair
            mu0 = discretize(g0.density, params.sensor_mesh)
            mu1 = discretize(g1.density, params.sensor_mesh)
            frames = _bures_frames(pair, times, eval_mesh)
        elif reference == "sinkhorn":
            mu0, mu1 = pair
            frames = _sinkhorn_frames(pair, times, eval_mesh, epsilon_reg, reference_max_iters)
        else:
            raise StructuralError(f"unknown reference {reference!r}")
        for j, t in enumerate(times):
            errors[i, j] = mse(_prediction(params, mu0, mu1, eval_mesh, t), frames[j])
    metadata = {"reference": reference}
    if reference == "sinkhorn":
        metadata.update(
            epsilon_reg=epsilon_reg,
            splat_sigma=eval_mesh.dx,
            reference_max_iters=reference_max_iters,
        )
    return EvalReport(
        times=times,
        mean_mse=[float(v) for v in errors.mean(axis=0)],
        std_mse=[float(v) for v in errors.std(axis=0, ddof=1)],
        n_pairs=len(test_pairs),
        reference=reference,
        mesh=eval_mesh,
        metadata=metadata,
    )


def write_eval_csv(report: EvalReport, path: str) -> None:
    with open(path, "w", newline="") as f:
        for key, val in sorted(report.metadata.items()):
            f.write(f"# {key} = {val}\n")
        writer = csv.writer(f)
        writer.writerow(EVAL_CSV_COLUMNS)
        mesh_tag = f"{report.mesh.nx}x{report.mesh.ny}"
        for t, mean, std in zip(report.times, report.mean_mse, report.std_mse):
            writer.writerow(
                [format(t, "g"), format(mean, ".10e"), format(std, ".10e"),
                 report.n_pairs, report.reference, mesh_tag]
            )


@dataclass
class BenchRecord:
    points: int
    method: str  # operator-inference | reference-solver
    median_seconds: float
    reps: int


def bench_runtime(
    params: OperatorParams,
    mesh_sides,
    pair,
    reps: int = 3,
    t: float = 0.5,
    epsilon_reg: float = REFERENCE_EPSILON,
    reference_max_iters: int = 100,
) -> list[BenchRecord]:
    """Median wall time of one geodesic frame per method and mesh size.

    ``pair`` is a (DensityGrid, DensityGrid) at the operator's sensor
    resolution.  The operator is timed on a full-grid forward pass; the
    reference solver is timed on the separable entropic pipeline at the same
    mesh (iteration-capped, cap recorded by the caller).  Timings cover the
    compute call only.
    """
    if reps < 3:
        raise StructuralError("medians need at least 3 repetitions")
    mu0, mu1 = pair
    records = []
    for side in mesh_sides:
        mesh = MeshSpec(int(side), int(side), *params.domain)
        op_times, ref_times = [], []
        grid0 = discretize(lambda pts, g=mu0: g.interpolate(pts), mesh)
        grid1 = discretize(lambda pts, g=mu1: g.interpolate(pts), mesh)
        for _ in range(reps):
            t0 = time.perf_counter()
            eval_geodesic_grid(params, mu0.values, mu1.values, mesh, t)
            op_times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            reference_geodesic(
                grid0, grid1, t, mesh,
                epsilon_reg=epsilon_reg, max_iters=reference_max_iters, method="separable",
            )
            ref_times.append(time.perf_counter() - t0)
        records.append(BenchRecord(mesh.n_points, "operator-inference", float(np.median(op_times)), reps))
        records.append(BenchRecord(mesh.n_points, "reference-solver", float(np.median(ref_times)), reps))
    return records


def write_bench_csv(records, path: str, metadata=()) -> None:
    with open(path, "w", newline="") as f:
        for key, val in metadata:
            f.write(f"# {key} = {val}\n")
        writer = csv.writer(f)
        writer.writerow(BENCH_CSV_COLUMNS)
        for r in records:
            writer.writerow([r.points, r.method, format(r.median_seconds, ".6e"), r.reps])


def export_superres(
    params: OperatorParams,
    mu0: DensityGrid,
    mu1: DensityGrid,
    t_list,
    out_mesh: MeshSpec,
    out_dir: str,
    basename: str = "geodesic",
    render: bool = True,
) -> list[str]:
    """Write one GEOGRID (and optional PGM render) per requested time.

    The output mesh may be finer than the sensor mesh; branch inputs are the
    low-resolution grids unchanged.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for t in t_list:
        raw, clamped = eval_geodesic_grid(params, mu0.values, mu1.values, out_mesh, float(t))
        tag = format(float(t), "g").replace(".", "p")
        grid_path = os.path.join(out_dir, f"{basename}_t{tag}.geogrid")
        write_geogrid(grid_path, raw)
        paths.append(grid_path)
        if render:
            write_pgm(os.path.join(out_dir, f"{basename}_t{tag}.pgm"), clamped)
    return paths
