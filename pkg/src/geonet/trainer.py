"""End-to-end training loop: resample, evaluate residual losses, update.

Every epoch draws a fresh set of collocation points (one independent uniform
draw per pair), shuffles them, and runs one Adam update per mini-batch; the
default covers the epoch's points exactly once.  All randomness is derived
from (master seed, stream tag, epoch index), so an interrupted run resumed
from a checkpoint retraces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .collocation import (
    INIT_STREAM,
    SHUFFLE_STREAM,
    CollocationBatch,
    sample_collocations,
    stream_rng,
)
from .data import DensityGrid, MeshSpec
from .errors import ConfigError, NonFiniteError, StructuralError
from .losses import LossWeights, total_loss
from .operator import OperatorParams
from .optim import Adam, backprop

LOG_COLUMNS = ("epoch", "l_cty", "l_hj", "l_bc", "l_ge", "l_total", "wall_time_s")


@dataclass
class TrainConfig:
    """All knobs of a training run; defaults follow the reference recipe."""

    n_pairs: int = 1500
    collocations_per_pair: int = 900
    batch_size: int = 9000
    n_batches: int | None = None  # None: one full pass over the epoch's points
    epochs_max: int = 2500
    lr: float = 5e-5
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    branch_width: int = 180
    branch_depth: int = 5
    trunk_width: int = 120
    trunk_depth: int = 7
    p: int = 120
    activation: str = "tanh"
    domain: tuple = (0.0, 5.0, 0.0, 5.0)
    sensor_nx: int = 30
    sensor_ny: int = 30
    convergence_window: int = 100
    convergence_min_rel_improvement: float = 1e-4
    checkpoint_every: int = 200

    def __post_init__(self):
        counts = (
            self.n_pairs,
            self.collocations_per_pair,
            self.batch_size,
            self.epochs_max,
            self.branch_width,
            self.branch_depth,
            self.trunk_width,
            self.trunk_depth,
            self.p,
            self.sensor_nx,
            self.sensor_ny,
            self.convergence_window,
            self.checkpoint_every,
        )
        if any(int(c) <= 0 for c in counts):
            raise ConfigError("all counts in the training config must be positive")
        if self.n_batches is not None and self.n_batches <= 0:
            raise ConfigError("n_batches must be positive when given")
        if self.lr < 0 or not np.isfinite(self.lr):
            raise ConfigError("lr must be a finite nonnegative number")
        if self.activation not in ("tanh", "gelu"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def m(self) -> int:
        return self.sensor_nx * self.sensor_ny

    @property
    def n_collocations(self) -> int:
        return self.n_pairs * self.collocations_per_pair

    def resolved_items(self) -> list[tuple[str, str]]:
        w = self.weights
        return [
            ("train.n_pairs", str(self.n_pairs)),
            ("train.collocations_per_pair", str(self.collocations_per_pair)),
            ("train.batch_size", str(self.batch_size)),
            ("train.n_batches", "full-pass" if self.n_batches is None else str(self.n_batches)),
            ("train.epochs_max", str(self.epochs_max)),
            ("train.lr", format(self.lr, ".17g")),
            ("train.seed", str(self.seed)),
            ("train.convergence_window", str(self.convergence_window)),
            ("train.convergence_min_rel_improvement", format(self.convergence_min_rel_improvement, ".17g")),
            ("train.checkpoint_every", str(self.checkpoint_every)),
            ("weights.alpha1", format(w.alpha1, ".17g")),
            ("weights.alpha2", format(w.alpha2, ".17g")),
            ("weights.beta0", format(w.beta0, ".17g")),
            ("weights.beta1", format(w.beta1, ".17g")),
            ("weights.gamma1", format(w.gamma[0], ".17g")),
            ("weights.gamma2", format(w.gamma[1], ".17g")),
            ("weights.omega1", format(w.omega[0], ".17g")),
            ("weights.omega2", format(w.omega[1], ".17g")),
            ("weights.epsilon", format(w.epsilon, ".17g")),
            ("arch.branch_width", str(self.branch_width)),
            ("arch.branch_depth", str(self.branch_depth)),
            ("arch.trunk_width", str(self.trunk_width)),
            ("arch.trunk_depth", str(self.trunk_depth)),
            ("arch.p", str(self.p)),
            ("arch.m", str(self.m)),
            ("arch.activation", self.activation),
            ("domain.bounds", " ".join(format(v, "g") for v in self.domain)),
            ("sensors.nx", str(self.sensor_nx)),
            ("sensors.ny", str(self.sensor_ny)),
        ]


@dataclass
class TrainResult:
    params: OperatorParams
    opt: Adam | None
    epochs_run: int
    status: str  # converged | epoch-cap | halted
    log_rows: list
    checkpoint_path: str | None


def _validate_dataset(config: TrainConfig, dataset) -> None:
    if len(dataset) != config.n_pairs:
        raise StructuralError(
            f"dataset holds {len(dataset)} pairs, config expects {config.n_pairs}"
        )
    for i, (g0, g1) in enumerate(dataset):
        for g in (g0, g1):
            if not isinstance(g, DensityGrid):
                raise StructuralError(f"pair {i}: dataset entries must be DensityGrids")
            if g.mesh.n_points != config.m:
                raise StructuralError(
                    f"pair {i}: grid has {g.mesh.n_points} samples, config m={config.m}"
                )
            if (g.mesh.nx, g.mesh.ny) != (config.sensor_nx, config.sensor_ny):
                raise StructuralError(f"pair {i}: grid resolution differs from sensor mesh")


def init_operator(config: TrainConfig) -> OperatorParams:
    mesh = MeshSpec(config.sensor_nx, config.sensor_ny, *config.domain)
    return OperatorParams.init(
        sensor_mesh=mesh,
        p=config.p,
        branch_width=config.branch_width,
        branch_depth=config.branch_depth,
        trunk_width=config.trunk_width,
        trunk_depth=config.trunk_depth,
        activation=config.activation,
        seed=stream_rng(config.seed, INIT_STREAM, 0),
    )


class _LogWriter:
    def __init__(self, path: str | None, config: TrainConfig, extra_header=()):
        self.path = path
        self.rows = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            for key, val in list(extra_header) + config.resolved_items():
                self._fh.write(f"# {key} = {val}\n")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(LOG_COLUMNS)
            self._fh.flush()

    def row(self, values) -> None:
        self.rows.append(values)
        if self._fh is not None:
            self._writer.writerow(
                [values[0]]
                + [format(v, ".10e") for v in values[1:-1]]
                + [format(values[-1], ".3f")]
            )
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _run_loop(
    config: TrainConfig,
    dataset,
    params: OperatorParams,
    opt: Adam | None,
    start_epoch: int,
    log: _LogWriter,
    checkpoint_path: str | None,
    progress=None,
) -> TrainResult:
    nets = params.network_list()
    cache = (
        np.stack([g0.values for g0, _ in dataset]),
        np.stack([g1.values for _, g1 in dataset]),
    )
    # The convergence window looks at this run's epochs only; a resumed run
    # restarts the moving average (window state is not checkpointed).
    history: list[float] = []
    status = "epoch-cap"
    w = config.convergence_window
    epoch = start_epoch

    def save(ep):
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, params, ep, opt)

    for epoch in range(start_epoch, config.epochs_max):
        t0 = time.perf_counter()
        batch = sample_collocations(
            domain=config.domain,
            collocations_per_pair=config.collocations_per_pair,
            dataset=dataset,
            epoch=epoch,
            master_seed=config.seed,
            sensor_cache=cache,
        )
        order = stream_rng(config.seed, SHUFFLE_STREAM, epoch).permutation(len(batch))
        sums = np.zeros(4)
        n_seen = 0
        halted = False
        for mb in batch.minibatches(config.batch_size, order, config.n_batches):
            loss, report = total_loss(params, mb, config.weights)
            if not np.isfinite(loss.data):
                halted = True
                break
            grads = backprop(loss, nets)
            if opt is not None:
                flat = []
                for gb in grads:
                    flat.extend(gb.arrays())
                try:
                    opt.step(flat)
                except NonFiniteError:
                    halted = True
                    break
            sums += len(mb) * np.array([report.l_cty, report.l_hj, report.l_bc, report.l_ge])
            n_seen += len(mb)
        if halted:
            # Leave the last periodic checkpoint as the good state.
            status = "halted"
            break
        comps = sums / max(n_seen, 1)
        l_total = float(comps.sum())
        wall = time.perf_counter() - t0
        log.row((epoch, comps[0], comps[1], comps[2], comps[3], l_total, wall))
        history.append(l_total)
        if progress is not None:
            progress(
                f"epoch {epoch:5d}  l_total {l_total:.6e}  "
                f"cty {comps[0]:.3e} hj {comps[1]:.3e} bc {comps[2]:.3e}  {wall:.2f}s"
            )
        if (epoch + 1) % config.checkpoint_every == 0:
            save(epoch + 1)
        if len(history) >= 2 * w:
            ma_now = float(np.mean(history[-w:]))
            ma_prev = float(np.mean(history[-2 * w : -w]))
            if ma_prev > 0 and (ma_prev - ma_now) / ma_prev < config.convergence_min_rel_improvement:
                status = "converged"
                epoch += 1
                break
    else:
        epoch = config.epochs_max
    if status != "halted":
        save(epoch)
    log.close()
    return TrainResult(
        params=params,
        opt=opt,
        epochs_run=epoch,
        status=status,
        log_rows=log.rows,
        checkpoint_path=checkpoint_path,
    )


def train(
    config: TrainConfig,
    dataset,
    log_path: str | None = None,
    checkpoint_path: str | None = None,
    progress=None,
) -> TrainResult:
    """Train a fresh operator on (mu0, mu1) grid pairs."""
    _validate_dataset(config, dataset)
    params = init_operator(config)
    opt = Adam(params.parameters(), config.lr) if config.lr > 0 else None
    log = _LogWriter(log_path, config)
    return _run_loop(config, dataset, params, opt, 0, log, checkpoint_path, progress)


def resume(
    checkpoint_in: str,
    config: TrainConfig,
    dataset,
    log_path: str | None = None,
    checkpoint_path: str | None = None,
    progress=None,
) -> TrainResult:
    """Continue a checkpointed run; bit-identical to the uninterrupted run.

    Optimizer state and epoch counter are restored; the config must be
    architecture-compatible.  Overridden settings (e.g. a new lr) show up in
    the new log's resolved-config header next to the resume provenance.
    """
    _validate_dataset(config, dataset)
    params, state, epoch = load_checkpoint(checkpoint_in)
    if params.trunk_cty.activation != config.activation or params.p != config.p or params.m != config.m:
        raise StructuralError("checkpoint architecture does not match the config")
    if (params.sensor_mesh.nx, params.sensor_mesh.ny) != (config.sensor_nx, config.sensor_ny):
        raise StructuralError("checkpoint sensor mesh does not match the config")
    opt = None
    if config.lr > 0:
        opt = Adam(params.parameters(), config.lr)
        if state is not None:
            opt.state = state
    log = _LogWriter(
        log_path,
        config,
        extra_header=[("resumed_from", checkpoint_in), ("resumed_at_epoch", str(epoch))],
    )
    return _run_loop(config, dataset, params, opt, epoch, log, checkpoint_path, progress)
