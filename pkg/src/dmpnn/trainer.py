"""Unsupervised training of the message-passing operators.

The objective is the sqrt(t)-weighted utility summed over the unrolled
iterations, averaged over a mini-batch of random (channel, N, social graph)
samples, and maximised with Adam.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channel import ChannelRealization, sample_channels
from .dmp import DmpConfig, GraphBatch, Trajectory, run_inference, sample_utility
from .graphs import MultiplexNetwork, sample_training_topology
from .neural import (AdamState, ModelDims, ParameterSet, adam_update, init_params, rebind,
                     save_checkpoint)
from .seeding import derive_seed, stream

log = logging.getLogger(__name__)

OBJECTIVES = ("sum-rate", "min-rate")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    objective: str = "sum-rate"
    n_min: int = 3
    n_max: int = 5
    n_pool: int | None = None      # N_max of the decimated complete graph
    p_train: float = 0.7
    p_physical: float = 1.0
    iterations: int = 10           # T
    batch_size: int = 256
    epochs: int = 200
    batches_per_epoch: int = 20
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_samples: int = 1000
    val_p: float | None = None     # social edge probability of the validation set
    dims: ModelDims = field(default_factory=ModelDims)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.batch_size < 1 or self.epochs < 0 or self.batches_per_epoch < 1:
            raise ValueError("batch_size and batches_per_epoch must be >= 1, epochs >= 0")
        if not 0.0 <= self.p_train <= 1.0 or not 0.0 <= self.p_physical <= 1.0:
            raise ValueError("edge probabilities must lie in [0, 1]")
        if not 1 <= self.n_min <= self.n_max <= self.pool:
            raise ValueError(f"need 1 <= n_min <= n_max <= n_pool, got {self.n_min}, {self.n_max}, {self.pool}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @property
    def pool(self) -> int:
        return self.n_pool if self.n_pool is not None else self.n_max

    @property
    def validation_p(self) -> float:
        return self.p_train if self.val_p is None else self.val_p


@dataclass
class TrainReport:
    train_objective: list[float] = field(default_factory=list)
    val_utility: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    checkpoint: str | None = None

    def smoothed(self, window: int = 10) -> np.ndarray:
        v = np.asarray(self.train_objective)
        return np.array([v[max(0, k - window + 1):k + 1].mean() for k in range(v.size)])


# ---------------------------------------------------------------- objective

def weighted_objective(trajectory: Trajectory, batch: GraphBatch, objective: str) -> Tensor:
    """Per-sample sum over t of sqrt(t) * f(a, x^[t]), shape (n_samples, 1)."""
    total = None
    for t, x in enumerate(trajectory.decisions, start=1):
        term = ad.scale(sample_utility(x, batch, objective), math.sqrt(t))
        total = term if total is None else ad.add(total, term)
    return total


def batch_mean(per_sample: Tensor) -> Tensor:
    return ad.scale(ad.sum(per_sample), 1.0 / per_sample.shape[0])


# ---------------------------------------------------------------- sampling

def sample_one(rng, n_min: int, n_max: int, p: float, n_pool: int | None = None,
               p_physical: float = 1.0) -> tuple[MultiplexNetwork, ChannelRealization]:
    n = int(rng.integers(n_min, n_max + 1))
    net = sample_training_topology(n_pool or n_max, n, p, rng, p_physical=p_physical)
    return net, sample_channels(n, rng)


def sample_minibatch(config: TrainConfig, seed=None, size: int | None = None,
                     p: float | None = None) -> list[tuple[MultiplexNetwork, ChannelRealization]]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    size = config.batch_size if size is None else size
    p = config.p_train if p is None else p
    return [sample_one(rng, config.n_min, config.n_max, p, config.pool, config.p_physical)
            for _ in range(size)]


# ---------------------------------------------------------------- evaluation

def frozen(params: ParameterSet) -> ParameterSet:
    """Constant copy of ``params``; forward passes then build no backward graph."""
    return rebind(params, {k: Tensor(t.data) for k, t in params.tensors().items()})


def evaluate_trajectory(params: ParameterSet, samples: Sequence, iterations: int, objective: str,
                        state_rng, chunk: int = 512) -> np.ndarray:
    """Utility of every sample at every iteration, shape (T, n_samples)."""
    fixed = frozen(params)
    cfg = DmpConfig(iterations)
    out = []
    for lo in range(0, len(samples), chunk):
        batch = GraphBatch(samples[lo:lo + chunk])
        traj = run_inference(batch, fixed, cfg, seed=state_rng)
        out.append(np.stack([sample_utility(x, batch, objective).data[:, 0]
                             for x in traj.decisions]))
    return np.concatenate(out, axis=1)


# ---------------------------------------------------------------- training

def _check_finite(values: np.ndarray, epoch: int, batch: int, batch_seed: int) -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise TrainingDiverged(
            f"non-finite objective at epoch {epoch}, batch {batch}, sample {int(bad[0])} "
            f"(batch seed {batch_seed})")


def batch_objective(params: ParameterSet, samples, config: TrainConfig,
                    state_rng) -> tuple[Tensor, np.ndarray]:
    """Differentiable batch-mean objective and the per-sample values."""
    batch = GraphBatch(samples)
    traj = run_inference(batch, params, DmpConfig(config.iterations), seed=state_rng)
    per_sample = weighted_objective(traj, batch, config.objective)
    return batch_mean(per_sample), per_sample.data[:, 0]


def train(config: TrainConfig, params: ParameterSet | None = None, log_path=None,
          checkpoint_path=None, progress: Callable[[int, float, float], None] | None = None,
          log_comment: str | None = None, checkpoint_meta: dict | None = None
          ) -> tuple[TrainReport, ParameterSet]:
    params = init_params(config.dims, stream(config.seed, "init")) if params is None else params
    adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    validation = sample_minibatch(config, stream(config.seed, "validation"),
                                  size=config.val_samples, p=config.validation_p)

    report = TrainReport()
    log_file = None
    if log_path is not None:
        log_file = open(log_path, "w")
        log_file.write((log_comment or f"# seed={config.seed} objective={config.objective}") + "\n")
        log_file.write("epoch,train_objective,val_utility,seconds\n")
    start = time.perf_counter()
    try:
        for epoch in range(1, config.epochs + 1):
            values = []
            for b in range(config.batches_per_epoch):
                batch_seed = derive_seed(config.seed, "batches", epoch, b)
                rng = np.random.default_rng(batch_seed)
                samples = sample_minibatch(config, rng)
                params.zero_grad()
                objective, per_sample = batch_objective(params, samples, config, rng)
                _check_finite(per_sample, epoch, b, batch_seed)
                objective.backward()
                grads = params.grads()
                for name, g in grads.items():
                    if not np.all(np.isfinite(g)):
                        raise TrainingDiverged(
                            f"non-finite gradient for {name} at epoch {epoch}, batch {b} "
                            f"(batch seed {batch_seed})")
                adam_update(adam, params, grads)
                params.zero_grad()
                values.append(float(objective.data))
            val = float(evaluate_trajectory(params, validation, config.iterations, config.objective,
                                      stream(config.seed, "validation-states"))[-1].mean())
            elapsed = time.perf_counter() - start
            report.train_objective.append(float(np.mean(values)))
            report.val_utility.append(val)
            report.seconds.append(elapsed)
            if log_file is not None:
                log_file.write(f"{epoch},{report.train_objective[-1]!r},{val!r},{elapsed:.3f}\n")
                log_file.flush()
            log.info("epoch %d objective %.4f validation %.4f (%.0fs)",
                     epoch, report.train_objective[-1], val, elapsed)
            if progress is not None:
                progress(epoch, report.train_objective[-1], float(val))
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_path is not None:
        meta = {"seed": config.seed, "objective": config.objective,
                "iterations": config.iterations, **(checkpoint_meta or {})}
        save_checkpoint(params, checkpoint_path, meta=meta)
        report.checkpoint = str(Path(checkpoint_path))
    return report, params
