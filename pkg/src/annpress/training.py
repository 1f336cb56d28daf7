"""Training loop: decoupled-weight-decay Adam plus a polynomial LR schedule.

The compressor is trained on the database itself; each epoch shuffles the
rows with a seeded generator, walks full batches (an incomplete trailing
batch is dropped so batch norm and the 1/B^2 loss normalization see a
uniform batch size), and applies one optimizer step per batch. Everything
is deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError, Tape
from .loss import (
    WEIGHT_CEILING,
    WEIGHT_FLOOR,
    estimate_boundary,
    inrp_loss,
    pairwise_distances,
    relationship_weights,
)
from .model import CompressorNet, forward, save_checkpoint, wrap_params


class TrainingError(RuntimeError):
    """Training aborted (numeric failure, bad data)."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; defaults follow common Adam practice."""

    epochs: int = 2400
    batch_size: int = 1024
    lr0: float = 1e-4
    poly_power: float = 0.9
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    eval_rows: int = 2048

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")


@dataclass(frozen=True)
class LossConfig:
    """Pair-weighting parameters of the training objective."""

    ceiling: float = WEIGHT_CEILING
    floor: float = WEIGHT_FLOOR
    squared_gap: bool = False

    def __post_init__(self):
        if not 0 < self.floor < self.ceiling:
            raise ValueError(f"need 0 < floor < ceiling, got floor={self.floor}, ceiling={self.ceiling}")


class OptimizerState:
    """Adam first/second moments per parameter plus the step counter."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def poly_lr(epoch: int, config: TrainConfig) -> float:
    """lr0 * (1 - epoch/epochs)^power; strictly decreasing over the run."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.lr0 * (1.0 - epoch / config.epochs) ** config.poly_power


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    config: TrainConfig,
) -> None:
    """One in-place Adam update with decoupled weight decay.

    Weight decay multiplies parameters by (1 - lr*wd) independent of the
    gradient-driven Adam term.
    """
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        if config.weight_decay:
            p -= lr * config.weight_decay * p
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + config.adam_eps)


@dataclass
class TrainReport:
    """Per-epoch learning curve plus the frozen boundary and a final 64-bit eval loss."""

    epochs: list[int] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    mean_losses: list[float] = field(default_factory=list)
    boundary: float = 0.0
    final_eval_loss: float = 0.0

    def to_lines(self) -> list[str]:
        return [
            f"epoch={e} lr={lr:.10g} mean_loss={ml:.10g}"
            for e, lr, ml in zip(self.epochs, self.lrs, self.mean_losses)
        ]

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")
            fh.write(f"boundary={self.boundary:.10g}\n")
            fh.write(f"final_eval_loss={self.final_eval_loss:.10g}\n")


def evaluate_loss(
    model: CompressorNet,
    x: np.ndarray,
    boundary: float,
    loss_config: LossConfig = LossConfig(),
) -> float:
    """Recompute the training objective in float64 on infer-mode compressions."""
    compressed = model.compress(np.asarray(x, dtype=np.float32)).astype(np.float64)
    tape = Tape(np.float64)
    value = inrp_loss(
        tape.tensor(compressed),
        np.asarray(x, dtype=np.float64),
        boundary,
        ceiling=loss_config.ceiling,
        floor=loss_config.floor,
        squared_gap=loss_config.squared_gap,
    )
    return float(value.data)


def close_pair_distortion(
    compressed: np.ndarray,
    original: np.ndarray,
    boundary: float,
    loss_config: LossConfig = LossConfig(),
) -> float:
    """Mean weighted |distance gap| over close pairs (original distance < boundary/e).

    Close pairs are where the weight curve exceeds 1, i.e. the neighborhoods
    the objective is designed to preserve. Returns NaN if no pair qualifies.
    """
    dist_c = pairwise_distances(np.asarray(compressed, dtype=np.float64))
    dist_x = pairwise_distances(np.asarray(original, dtype=np.float64))
    w = relationship_weights(dist_x, boundary, ceiling=loss_config.ceiling, floor=loss_config.floor)
    mask = np.triu(dist_x < boundary / np.e, k=1) & (dist_x > 0)
    if not mask.any():
        return float("nan")
    return float((w[mask] * np.abs(dist_c - dist_x)[mask]).mean())


def train(
    model: CompressorNet,
    dataset: np.ndarray,
    loss_config: LossConfig = LossConfig(),
    train_config: TrainConfig = TrainConfig(),
    *,
    boundary: float | None = None,
    checkpoint_dir: str | None = None,
    log_every: int = 0,
) -> TrainReport:
    """Optimize `model` in place on `dataset`; returns the learning curve.

    The pair-weight boundary is estimated once from the dataset and frozen.
    The final eval loss is recomputed in float64 over a seeded fixed subset
    of rows (at most `train_config.eval_rows`), so it can be reproduced
    exactly from the trained checkpoint.
    """
    x = np.asarray(dataset, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != model.config.d_in:
        raise ValueError(f"expected (count, {model.config.d_in}) dataset, got shape {x.shape}")
    if x.shape[0] < train_config.batch_size:
        raise ValueError(
            f"dataset has {x.shape[0]} rows, need at least batch_size={train_config.batch_size}"
        )
    if boundary is None:
        boundary = estimate_boundary(x, seed=train_config.seed)

    rng = np.random.default_rng(train_config.seed)
    eval_idx = np.sort(rng.permutation(x.shape[0])[: train_config.eval_rows])
    state = OptimizerState(model.params)
    report = TrainReport(boundary=boundary)
    batches = x.shape[0] // train_config.batch_size

    for epoch in range(train_config.epochs):
        lr = poly_lr(epoch, train_config)
        order = rng.permutation(x.shape[0])
        epoch_loss = 0.0
        for b in range(batches):
            batch = x[order[b * train_config.batch_size : (b + 1) * train_config.batch_size]]
            try:
                tape = Tape(np.float32)
                wrapped = wrap_params(tape, model.params)
                out = forward(tape, model.config, wrapped, model.stats, batch, mode="train")
                loss = inrp_loss(
                    out,
                    batch,
                    boundary,
                    ceiling=loss_config.ceiling,
                    floor=loss_config.floor,
                    squared_gap=loss_config.squared_gap,
                )
                tape.backward(loss)
            except NumericError as err:
                raise TrainingError(f"numeric failure at epoch {epoch}, batch {b}: {err}") from err
            grads = {name: wrapped[name].grad for name in model.params}
            adamw_step(model.params, grads, state, lr, train_config)
            epoch_loss += float(loss.data)
        mean_loss = epoch_loss / batches
        report.epochs.append(epoch)
        report.lrs.append(lr)
        report.mean_losses.append(mean_loss)
        if log_every and (epoch % log_every == 0 or epoch == train_config.epochs - 1):
            print(f"epoch={epoch} lr={lr:.3e} mean_loss={mean_loss:.6f}", flush=True)
        if (
            checkpoint_dir is not None
            and train_config.checkpoint_every
            and (epoch + 1) % train_config.checkpoint_every == 0
        ):
            save_checkpoint(model, f"{checkpoint_dir}/epoch{epoch + 1}.ckpt")

    report.final_eval_loss = evaluate_loss(model, x[eval_idx], boundary, loss_config)
    return report
