"""Mixed-code minibatch sampling and the training / fine-tuning loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import deque
from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from uecct import tensor as T
from uecct.channel import LlrVector, bpsk, hard_decision, preprocess, sigma_from_ebn0, standardize, transmit
from uecct.config import ModelConfig, TrainConfig
from uecct.errors import DataError, NumericalError
from uecct.gf2core import CodeSpec
from uecct.model import UecctModel
from uecct.optim import Adam, clip_grad_norm, cosine_lr
from uecct.registry import CodeRegistry

logger = logging.getLogger(__name__)

LOSS_CSV = "loss.csv"
CHECKPOINT = "model.npz"
INIT_STREAM = 7919  # seed-sequence entry that keeps parameter init apart from batch streams


# =============================================================================
# Batches
# =============================================================================


@dataclass(frozen=True, eq=False)
class TrainSample:
    code: CodeSpec
    features: np.ndarray  # (N,)
    target: np.ndarray  # (n,) bits, 1 where the channel flipped the sign
    y: LlrVector


@dataclass(frozen=True, eq=False)
class TrainBatch:
    """One minibatch; rows of every array line up with ``codes``."""

    codes: list[CodeSpec]
    features: np.ndarray  # (B, N) standardized
    targets: np.ndarray  # (B, n_max), zero past each code's n
    active: np.ndarray  # (B, n_max) bool
    received: list[np.ndarray]  # per-sample y, length n of its code
    ebn0_db: float

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def active_bits(self) -> int:
        return int(self.active.sum())

    def sample(self, i: int) -> TrainSample:
        code = self.codes[i]
        return TrainSample(
            code=code,
            features=self.features[i],
            target=self.targets[i, : code.n],
            y=LlrVector(self.received[i], code),
        )


def sample_batch(registry: CodeRegistry, config: TrainConfig, rng: np.random.Generator) -> TrainBatch:
    """All-zero codewords of uniformly chosen codes at one Eb/N0 drawn for the batch."""
    lo, hi = config.snr_range_db
    ebn0 = float(rng.uniform(lo, hi))
    picks = rng.integers(len(registry), size=config.batch_size)
    B = config.batch_size

    features = np.zeros((B, registry.seq_len))
    targets = np.zeros((B, registry.n_max))
    active = np.zeros((B, registry.n_max), dtype=bool)
    received: list[np.ndarray | None] = [None] * B
    codes: list[CodeSpec] = [registry.codes[i] for i in picks]

    for idx, code in enumerate(registry.codes):
        rows = np.flatnonzero(picks == idx)
        if rows.size == 0:
            continue
        sigma = sigma_from_ebn0(ebn0, code.rate)
        x_s = bpsk(np.zeros((rows.size, code.n), dtype=np.uint8))
        y = transmit(x_s, sigma, rng, code).values
        # x_s is all +1, so the multiplicative noise is y itself
        targets[rows, : code.n] = hard_decision(y)
        active[rows, : code.n] = True
        features[rows] = standardize(registry, code, preprocess(code, y)).features
        for r, word in zip(rows, y):
            received[r] = word
    return TrainBatch(codes, features, targets, active, received, ebn0)


def batch_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, batch]))


def iter_batches(
    registry: CodeRegistry, config: TrainConfig, epoch: int
) -> Iterator[tuple[int, TrainBatch]]:
    """Yield (index, batch) in order; with prefetch workers, batches are built ahead."""

    def build(b: int) -> TrainBatch:
        return sample_batch(registry, config, batch_rng(config.seed, epoch, b))

    if config.prefetch_workers <= 0:
        for b in range(config.batches_per_epoch):
            yield b, build(b)
        return

    window = 2 * config.prefetch_workers
    with ThreadPoolExecutor(max_workers=config.prefetch_workers) as pool:
        pending: deque = deque()
        next_b = 0
        for b in range(config.batches_per_epoch):
            while next_b < config.batches_per_epoch and len(pending) < window:
                pending.append(pool.submit(build, next_b))
                next_b += 1
            yield b, pending.popleft().result()


# =============================================================================
# Loss
# =============================================================================


def batch_loss(model: UecctModel, batch: TrainBatch) -> T.Tensor:
    """Mean BCE per active noise bit; padded outputs contribute nothing."""
    pred = model.forward(batch.features, batch.codes)
    total = T.bce_loss(pred, batch.targets, batch.active)
    return T.scale(total, 1.0 / batch.active_bits)


def baseline_loss() -> float:
    """Per-bit loss of the constant 0.5 predictor."""
    return math.log(2.0)


# =============================================================================
# Training loop
# =============================================================================


@dataclass
class TrainResult:
    model: UecctModel
    epoch_losses: list[float] = field(default_factory=list)
    loss_csv: Path | None = None
    checkpoint: Path | None = None

    @property
    def initial_loss(self) -> float:
        return self.epoch_losses[0]

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


class DivergenceDetector:
    """Trips after ``patience`` consecutive epochs above ``factor`` x the first epoch's loss."""

    def __init__(self, factor: float, patience: int):
        self.factor = factor
        self.patience = patience
        self.initial: float | None = None
        self.strikes = 0

    def update(self, epoch_loss: float) -> None:
        if not math.isfinite(epoch_loss):
            raise NumericalError(f"Training loss became non-finite ({epoch_loss})")
        if self.initial is None:
            self.initial = epoch_loss
            return
        if epoch_loss > self.factor * self.initial:
            self.strikes += 1
        else:
            self.strikes = 0
        if self.strikes >= self.patience:
            raise NumericalError(
                f"Training diverged: loss {epoch_loss:.4g} above {self.factor:g}x the initial "
                f"{self.initial:.4g} for {self.strikes} consecutive epochs"
            )


def run_training(
    model: UecctModel,
    registry: CodeRegistry,
    config: TrainConfig,
    output_dir: str | Path,
    extra_meta: dict | None = None,
) -> TrainResult:
    """Optimize ``model`` in place; writes the loss CSV and a checkpoint after every epoch."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = model.trainable(config.freeze)
    if not params:
        raise DataError("Every parameter is frozen; nothing to train")
    optimizer = Adam(params)
    detector = DivergenceDetector(config.divergence_factor, config.divergence_patience)
    total_steps = config.epochs * config.batches_per_epoch
    result = TrainResult(model=model, loss_csv=out / LOSS_CSV, checkpoint=out / CHECKPOINT)

    logger.info(
        "Training %s model on %s: %d epochs x %d batches x %d samples, %d trainable parameters",
        model.config.variant, ", ".join(registry.names), config.epochs,
        config.batches_per_epoch, config.batch_size, sum(p.data.size for p in params.values()),
    )
    step = 0
    with result.loss_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "batch", "loss", "lr"])
        for epoch in range(config.epochs):
            started = time.monotonic()
            losses = []
            for b, batch in iter_batches(registry, config, epoch):
                lr = cosine_lr(step, total_steps, config.lr_init, config.lr_final)
                optimizer.zero_grad()
                loss = batch_loss(model, batch)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(f"Non-finite loss at epoch {epoch}, batch {b}")
                T.backward(loss)
                clip_grad_norm(params, config.grad_clip)
                optimizer.step(lr)
                writer.writerow([epoch, b, repr(value), repr(lr)])
                losses.append(value)
                step += 1
            fh.flush()

            epoch_loss = float(np.mean(losses))
            result.epoch_losses.append(epoch_loss)
            model.save(result.checkpoint, {"epoch": epoch, **(extra_meta or {})})
            logger.info(
                "epoch %d/%d loss=%.5f lr=%.3e (%.1fs)",
                epoch + 1, config.epochs, epoch_loss, lr, time.monotonic() - started,
            )
            detector.update(epoch_loss)
    return result


def train(
    model_config: ModelConfig,
    config: TrainConfig,
    registry: CodeRegistry,
    output_dir: str | Path,
) -> TrainResult:
    """Train a freshly initialized model on ``registry``."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, INIT_STREAM]))
    model = UecctModel(model_config, registry.n_max, registry.s_max, rng, code_names=registry.names)
    return run_training(model, registry, config, output_dir)


def fine_tune(
    checkpoint: str | Path,
    new_codes: list[CodeSpec],
    config: TrainConfig,
    output_dir: str | Path,
) -> TrainResult:
    """Continue training a checkpoint on ``new_codes``; ``config.freeze`` selects frozen parameters."""
    model, meta = UecctModel.load(checkpoint)
    registry = CodeRegistry(new_codes, n_max=model.n_max, s_max=model.s_max)
    logger.info(
        "Fine-tuning %s on %s (frozen: %s)",
        checkpoint, ", ".join(registry.names), ", ".join(config.freeze) or "none",
    )
    model.code_names = sorted(set(model.code_names) | set(registry.names))
    return run_training(model, registry, config, output_dir, {"fine_tuned_from": str(checkpoint)})
