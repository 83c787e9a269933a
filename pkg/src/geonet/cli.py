"""Command-line surface: data generation, training, inference, eval, bench.

Config files are `key = value` lines with '#' comments and dotted section
keys (train.lr, arch.p, weights.alpha1, ...).  Unknown keys are rejected and
every run logs the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DENSITY,
    DensityGrid,
    GaussianMixture2D,
    MeshSpec,
    MixtureRanges,
    discretize,
    sample_mixture_pair,
)
from .errors import ConfigError, GeonetError
from .evalbench import (
    bench_runtime,
    eval_table,
    export_superres,
    write_bench_csv,
    write_eval_csv,
)
from .gridio import read_geogrid, write_geogrid, write_pgm
from .losses import LossWeights
from .operator import eval_geodesic_grid
from .otref import Gaussian2D
from .trainer import TrainConfig, resume, train

CONFIG_KEYS = {
    "train.n_pairs": int,
    "train.collocations_per_pair": int,
    "train.batch_size": int,
    "train.n_batches": int,
    "train.epochs_max": int,
    "train.lr": float,
    "train.seed": int,
    "train.convergence_window": int,
    "train.convergence_min_rel_improvement": float,
    "train.checkpoint_every": int,
    "weights.alpha1": float,
    "weights.alpha2": float,
    "weights.beta0": float,
    "weights.beta1": float,
    "weights.gamma1": float,
    "weights.gamma2": float,
    "weights.omega1": float,
    "weights.omega2": float,
    "weights.epsilon": float,
    "arch.branch_width": int,
    "arch.branch_depth": int,
    "arch.trunk_width": int,
    "arch.trunk_depth": int,
    "arch.p": int,
    "arch.activation": str,
    "domain.x_min": float,
    "domain.x_max": float,
    "domain.y_min": float,
    "domain.y_max": float,
    "sensors.nx": int,
    "sensors.ny": int,
}


def parse_config_file(path: str) -> dict:
    """Read key = value lines; '#' starts a comment; unknown keys rejected."""
    values = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def build_train_config(values: dict) -> TrainConfig:
    def get(key, default):
        return values.get(key, default)

    weights = LossWeights(
        alpha1=get("weights.alpha1", 30.0),
        alpha2=get("weights.alpha2", 30.0),
        beta0=get("weights.beta0", 1.0),
        beta1=get("weights.beta1", 1.0),
        gamma=(get("weights.gamma1", 0.0), get("weights.gamma2", 0.0)),
        omega=(get("weights.omega1", 0.0), get("weights.omega2", 0.0)),
        epsilon=get("weights.epsilon", 0.0),
    )
    return TrainConfig(
        n_pairs=get("train.n_pairs", 1500),
        collocations_per_pair=get("train.collocations_per_pair", 900),
        batch_size=get("train.batch_size", 9000),
        n_batches=values.get("train.n_batches"),
        epochs_max=get("train.epochs_max", 2500),
        lr=get("train.lr", 5e-5),
        seed=get("train.seed", 0),
        weights=weights,
        branch_width=get("arch.branch_width", 180),
        branch_depth=get("arch.branch_depth", 5),
        trunk_width=get("arch.trunk_width", 120),
        trunk_depth=get("arch.trunk_depth", 7),
        p=get("arch.p", 120),
        activation=get("arch.activation", "tanh"),
        domain=(
            get("domain.x_min", 0.0),
            get("domain.x_max", 5.0),
            get("domain.y_min", 0.0),
            get("domain.y_max", 5.0),
        ),
        sensor_nx=get("sensors.nx", 30),
        sensor_ny=get("sensors.ny", 30),
        convergence_window=get("train.convergence_window", 100),
        convergence_min_rel_improvement=get("train.convergence_min_rel_improvement", 1e-4),
        checkpoint_every=get("train.checkpoint_every", 200),
    )


def _pair_paths(out_dir: str, index: int) -> tuple[str, str]:
    return (
        os.path.join(out_dir, f"pair{index:04d}_mu0.geogrid"),
        os.path.join(out_dir, f"pair{index:04d}_mu1.geogrid"),
    )


def _mixture_payload(mix: GaussianMixture2D) -> dict:
    return {
        "weights": mix.weights.tolist(),
        "means": mix.means.tolist(),
        "covs": mix.covs.tolist(),
    }


def _quantized_image_grid(mix: GaussianMixture2D, mesh: MeshSpec) -> DensityGrid:
    """Render a mixture as an 8-bit image, then ingest it like a picture."""
    raw = discretize(mix, mesh)
    peak = raw.values.max()
    intensities = np.round(raw.values / peak * 255.0)
    return DensityGrid(mesh, intensities + 1.0, DENSITY).normalized()


def cmd_gen_data(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    mesh = MeshSpec(args.grid, args.grid)
    ranges = MixtureRanges(k0=args.k0, k1=args.k1)
    rng = np.random.default_rng(args.seed)
    manifest = {
        "family": args.family,
        "n": args.n,
        "grid": args.grid,
        "seed": args.seed,
        "ranges": {
            "k0": ranges.k0,
            "k1": ranges.k1,
            "mean": [ranges.mean_low, ranges.mean_high],
            "variance": [ranges.var_low, ranges.var_high],
            "covariance": [ranges.cov_low, ranges.cov_high],
            "weight_scheme": ranges.weight_scheme,
        },
        "pairs": [],
    }
    for i in range(args.n):
        m0, m1 = sample_mixture_pair(ranges, rng)
        if args.family == "gauss":
            g0, g1 = discretize(m0, mesh), discretize(m1, mesh)
            manifest["pairs"].append({"mu0": _mixture_payload(m0), "mu1": _mixture_payload(m1)})
        else:  # image: quantized renders, analytic parameters deliberately dropped
            g0, g1 = _quantized_image_grid(m0, mesh), _quantized_image_grid(m1, mesh)
            manifest["pairs"].append({})
        p0, p1 = _pair_paths(args.out, i)
        write_geogrid(p0, g0)
        write_geogrid(p1, g1)
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    print(f"wrote {args.n} pairs at {args.grid}x{args.grid} to {args.out}")
    return 0


def _load_dataset(data_dir: str) -> tuple[list, dict]:
    manifest_path = os.path.join(data_dir, "manifest.json")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except OSError as exc:
        raise ConfigError(f"{manifest_path}: {exc}") from exc
    dataset = []
    for i in range(manifest["n"]):
        p0, p1 = _pair_paths(data_dir, i)
        dataset.append((read_geogrid(p0), read_geogrid(p1)))
    return dataset, manifest


def cmd_train(args) -> int:
    values = parse_config_file(args.config) if args.config else {}
    config = build_train_config(values)
    dataset, _ = _load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "training_log.csv")
    ckpt_path = os.path.join(args.out, "checkpoint.ckpt")
    for key, val in config.resolved_items():
        print(f"{key} = {val}")
    progress = print if not args.quiet else None
    if args.resume:
        result = resume(args.resume, config, dataset, log_path, ckpt_path, progress)
    else:
        result = train(config, dataset, log_path, ckpt_path, progress)
    print(f"training {result.status} after {result.epochs_run} epochs")
    return 0 if result.status in ("converged", "epoch-cap") else 3


def cmd_infer(args) -> int:
    params, _, _ = load_checkpoint(args.model)
    mu0 = read_geogrid(args.mu0)
    mu1 = read_geogrid(args.mu1)
    for name, grid in (("mu0", mu0), ("mu1", mu1)):
        if grid.mesh.n_points != params.m:
            raise ConfigError(
                f"{name} grid has {grid.mesh.n_points} samples; the model expects m={params.m}"
            )
        if (grid.mesh.nx, grid.mesh.ny) != (params.sensor_mesh.nx, params.sensor_mesh.ny):
            raise ConfigError(f"{name} grid resolution differs from the model's sensor mesh")
    times = [float(v) for v in args.t.split(",") if v != ""]
    if not times:
        raise ConfigError("no interpolation times given")
    nx, ny = args.res
    domain = params.domain
    if (nx, ny) != (params.sensor_mesh.nx, params.sensor_mesh.ny):
        print(f"note: evaluating on a {nx}x{ny} mesh from {params.sensor_mesh.nx}x"
              f"{params.sensor_mesh.ny} sensor inputs (super-resolution path)")
    mesh = MeshSpec(nx, ny, *domain)
    os.makedirs(args.out, exist_ok=True)
    for t in times:
        if not 0.0 <= t <= 1.0:
            print(f"warning: time {t} outside [0, 1]; the operator extrapolates", file=sys.stderr)
        raw, clamped = eval_geodesic_grid(params, mu0.values, mu1.values, mesh, t)
        tag = format(t, "g").replace(".", "p")
        write_geogrid(os.path.join(args.out, f"geodesic_t{tag}.geogrid"), raw)
        if args.render:
            write_pgm(os.path.join(args.out, f"geodesic_t{tag}.pgm"), clamped)
    print(f"wrote {len(times)} frame(s) to {args.out}")
    return 0


def _gaussian_pairs_from_manifest(manifest: dict) -> list:
    pairs = []
    for entry in manifest["pairs"]:
        if not entry or len(entry["mu0"]["weights"]) != 1 or len(entry["mu1"]["weights"]) != 1:
            raise ConfigError(
                "the bures reference needs a gauss-family testset with k0 = k1 = 1"
            )
        pairs.append(
            (
                Gaussian2D(entry["mu0"]["means"][0], entry["mu0"]["covs"][0]),
                Gaussian2D(entry["mu1"]["means"][0], entry["mu1"]["covs"][0]),
            )
        )
    return pairs


def cmd_eval(args) -> int:
    params, _, _ = load_checkpoint(args.model)
    dataset, manifest = _load_dataset(args.testset)
    mesh = MeshSpec(args.mesh, args.mesh, *params.domain)
    if args.reference == "bures":
        pairs = _gaussian_pairs_from_manifest(manifest)
    else:
        pairs = dataset
    report = eval_table(params, pairs, args.reference, eval_mesh=mesh)
    write_eval_csv(report, args.out)
    for t, mean, std in zip(report.times, report.mean_mse, report.std_mse):
        print(f"t={t:-4g}  mse {mean:.6e} +/- {std:.6e}")
    print(f"report written to {args.out}")
    return 0


def cmd_bench(args) -> int:
    params, _, _ = load_checkpoint(args.model)
    rng = np.random.default_rng(args.seed)
    ranges = MixtureRanges(k0=1, k1=1)
    m0, m1 = sample_mixture_pair(ranges, rng)
    mu0 = discretize(m0, params.sensor_mesh)
    mu1 = discretize(m1, params.sensor_mesh)
    meshes = [int(v) for v in args.meshes.split(",") if v != ""]
    records = bench_runtime(params, meshes, (mu0, mu1), reps=args.reps)
    write_bench_csv(
        records,
        args.out,
        metadata=[("epsilon_reg", 0.003), ("reference_max_iters", 100), ("t", 0.5), ("seed", args.seed)],
    )
    for r in records:
        print(f"{r.points:7d} points  {r.method:19s} {r.median_seconds:.4e} s (median of {r.reps})")
    print(f"bench written to {args.out}")
    return 0


def cmd_superres(args) -> int:
    params, _, _ = load_checkpoint(args.model)
    mu0 = read_geogrid(args.mu0)
    mu1 = read_geogrid(args.mu1)
    times = [float(v) for v in args.t.split(",") if v != ""]
    mesh = MeshSpec(args.res[0], args.res[1], *params.domain)
    paths = export_superres(params, mu0, mu1, times, mesh, args.out, render=args.render)
    print(f"wrote {len(paths)} grid(s) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geonet",
        description="Learn the optimal-transport geodesic operator between density pairs "
        "and validate it against independent transport solvers.",
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="run single-threaded deterministic reductions (always on in this build)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate GEOGRID training/testing pairs")
    p.add_argument("--family", choices=("gauss", "image"), default="gauss")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--grid", type=int, default=30)
    p.add_argument("--k0", type=int, default=5)
    p.add_argument("--k1", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the operator on a generated dataset")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="predict geodesic frames for one input pair")
    p.add_argument("--model", required=True)
    p.add_argument("--mu0", required=True)
    p.add_argument("--mu1", required=True)
    p.add_argument("--t", default="0,0.25,0.5,0.75,1")
    p.add_argument("--res", type=int, nargs=2, metavar=("NX", "NY"), required=True)
    p.add_argument("--render", action="store_true", help="also write PGM renders")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="MSE table against a reference geodesic")
    p.add_argument("--model", required=True)
    p.add_argument("--testset", required=True)
    p.add_argument("--reference", choices=("bures", "sinkhorn"), required=True)
    p.add_argument("--mesh", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="runtime scaling of operator vs reference solver")
    p.add_argument("--model", required=True)
    p.add_argument("--meshes", default="32,64,128")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("superres", help="export super-resolved geodesic frames")
    p.add_argument("--model", required=True)
    p.add_argument("--mu0", required=True)
    p.add_argument("--mu1", required=True)
    p.add_argument("--t", default="0,0.25,0.5,0.75,1")
    p.add_argument("--res", type=int, nargs=2, metavar=("NX", "NY"), required=True)
    p.add_argument("--render", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_superres)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except GeonetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
