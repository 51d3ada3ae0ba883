"""Source-domain training: loss, grouped-learning-rate SGD and the epoch loop."""

from __future__ import annotations

import dataclasses
import typing as t

import numpy as np

from mdaqa import exceptions
from mdaqa import mask as mask_module
from mdaqa.context import Context
from mdaqa.mask import MaskSnapshot, ParamGrads
from mdaqa.numkernel import RealMatrix, RealVector, SeededRng, softmax_positions
from mdaqa.util import write_csv

if t.TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from mdaqa.model import QAModel
    from mdaqa.qa_task import QASample, SpanLabel

TRAINING_LOG_HEADER = ("epoch", "ce", "sparsity", "total", "active_fraction")


@dataclasses.dataclass(frozen=True)
class LossBreakdown:
    ce: float
    sparsity: float
    total: float

    @classmethod
    def of(cls: type[LossBreakdown], ce: float, sparsity: float) -> LossBreakdown:
        return cls(ce=ce, sparsity=sparsity, total=ce + sparsity)

    @classmethod
    def mean(cls: type[LossBreakdown], items: Sequence[LossBreakdown]) -> LossBreakdown:
        if not items:
            return cls(0.0, 0.0, 0.0)
        return cls(
            ce=float(np.mean([i.ce for i in items])),
            sparsity=float(np.mean([i.sparsity for i in items])),
            total=float(np.mean([i.total for i in items])),
        )


@dataclasses.dataclass(frozen=True)
class OptimizerConfig:
    lr_mask: float = 0.1
    lr_encoder: float = 0.05
    lam: float = 0.75
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0

    def __post_init__(self: t.Self) -> None:
        if self.lr_mask <= 0 or self.lr_encoder <= 0:
            msg = f"learning rates must be positive, got mask={self.lr_mask} encoder={self.lr_encoder}"
            raise exceptions.InvalidConfigurationError(msg)
        if self.lam < 0:
            msg = f"sparsity weight must be non-negative, got {self.lam}"
            raise exceptions.InvalidConfigurationError(msg)
        if self.batch_size < 1 or self.epochs < 0:
            msg = f"batch_size must be >= 1 and epochs >= 0, got {self.batch_size} and {self.epochs}"
            raise exceptions.InvalidConfigurationError(msg)

    def learning_rate(self: t.Self, key: str) -> float:
        return self.lr_mask if key.startswith(f"{mask_module.MaskModule.group}.") else self.lr_encoder


@dataclasses.dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    active_fraction: float

    def row(self: t.Self) -> tuple[t.Any, ...]:
        return (self.epoch, self.loss.ce, self.loss.sparsity, self.loss.total, self.active_fraction)


@dataclasses.dataclass
class TrainingLog:
    epochs: list[EpochRecord] = dataclasses.field(default_factory=list)

    def to_csv(self: t.Self, path: Path) -> Path:
        return write_csv(path, TRAINING_LOG_HEADER, (e.row() for e in self.epochs))


def _log_softmax_at(logits: RealVector, valid: range, index: int) -> float:
    window = logits[valid.start : valid.stop]
    top = window.max()
    return float(logits[index] - top - np.log(np.exp(window - top).sum()))


def qa_loss(
    logits: RealMatrix,
    gold: SpanLabel,
    mask: RealVector,
    lam: float,
    context: range | None = None,
) -> tuple[LossBreakdown, RealMatrix]:
    """Cross entropy averaged over start/end plus ``lam * sum(M) / b``.

    The returned gradient covers the cross-entropy part only; the sparsity
    gradient belongs to ``N`` and is added by the caller.
    """
    valid = context if context is not None else range(logits.shape[0])
    if gold.start not in valid or gold.end not in valid or gold.end < gold.start:
        msg = f"gold span ({gold.start}, {gold.end}) outside context positions {valid.start}..{valid.stop - 1}"
        raise exceptions.LabelError(msg)

    ce = -0.5 * (
        _log_softmax_at(logits[:, 0], valid, gold.start) + _log_softmax_at(logits[:, 1], valid, gold.end)
    )
    grad = np.zeros_like(logits)
    grad[:, 0] = softmax_positions(logits[:, 0], valid)
    grad[:, 1] = softmax_positions(logits[:, 1], valid)
    grad[gold.start, 0] -= 1.0
    grad[gold.end, 1] -= 1.0
    grad *= 0.5

    sparsity = lam * float(mask.sum()) / mask.shape[0]
    return LossBreakdown.of(ce, sparsity), grad


def batch_gradients(
    model: QAModel,
    batch: Sequence[tuple[QASample, SpanLabel]],
    lam: float,
) -> tuple[ParamGrads, LossBreakdown]:
    """Mean gradient of cross entropy plus sparsity over a mini-batch."""
    mask = mask_module.mask_values(model.mask)
    total = ParamGrads()
    losses = []
    for sample, label in batch:
        fwd = model.forward(sample)
        loss, grad_logits = qa_loss(fwd.logits, label, mask, lam)
        total.add_(model.backward(fwd, grad_logits))
        losses.append(loss)

    grads = total.scaled(1.0 / len(batch))
    if lam > 0:
        grads.tensors["mask.N"] = grads["mask.N"] + mask_module.sparsity_grad(model.mask, lam)
    return grads, LossBreakdown.mean(losses)


def apply_updates(
    model: QAModel,
    grads: ParamGrads,
    cfg: OptimizerConfig,
    gate: MaskSnapshot | None = None,
) -> QAModel:
    """In-place SGD step ``W <- W - lr_group * g``, gated by ``1 - M_s`` when given."""
    applied = mask_module.gate_grads(grads, gate) if gate is not None else grads
    params = model.parameters()
    for key, g in applied.items():
        if params[key].shape != g.shape:
            msg = f"gradient for {key} has shape {g.shape}, parameter has {params[key].shape}"
            raise exceptions.ShapeError(msg)
        params[key] -= cfg.learning_rate(key) * g
    model.mask.touch()
    return model


def effective_lam(model: QAModel, lam: float) -> float:
    """The ablation without a mask carries no sparsity term."""
    return lam if model.mask.use_mask else 0.0


def minibatches(n: int, batch_size: int, rng: SeededRng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def require_labels(samples: Sequence[QASample]) -> None:
    for sample in samples:
        if sample.answer is None:
            msg = f"sample {sample.id!r} has no answer label"
            raise exceptions.DataError(msg)


def train_source(
    model: QAModel,
    source_data: Sequence[QASample],
    cfg: OptimizerConfig,
    *,
    context: Context | None = None,
) -> tuple[QAModel, MaskSnapshot | None, TrainingLog]:
    """Train on labelled source samples, then capture the mask snapshot.

    The snapshot is ``None`` for a model built without a mask.
    """
    context = context or Context()
    require_labels(source_data)
    if cfg.epochs and not source_data:
        msg = "no source samples to train on"
        raise exceptions.DataError(msg)

    rng = SeededRng(cfg.seed).stream("shuffle")
    lam = effective_lam(model, cfg.lam)
    log = TrainingLog()
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in minibatches(len(source_data), cfg.batch_size, rng):
            batch = [(source_data[i], t.cast("SpanLabel", source_data[i].answer)) for i in idx]
            grads, loss = batch_gradients(model, batch, lam)
            apply_updates(model, grads, cfg)
            losses.append(loss)

        record = EpochRecord(epoch, LossBreakdown.mean(losses), mask_module.active_fraction(model.mask))
        log.epochs.append(record)
        context.info(
            "epoch %d: ce=%.4f sparsity=%.4f total=%.4f active=%.3f",
            epoch,
            record.loss.ce,
            record.loss.sparsity,
            record.loss.total,
            record.active_fraction,
        )

    snapshot = mask_module.snapshot_mask(model.mask) if model.mask.use_mask else None
    return model, snapshot, log
