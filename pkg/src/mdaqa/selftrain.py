"""Target-domain adaptation by confidence-thresholded self-training.

Every round regenerates the pseudo-labelled set with the current model and
the same threshold, then runs one gated SGD pass over it.
"""

from __future__ import annotations

import dataclasses
import typing as t

import numpy as np

from mdaqa import exceptions
from mdaqa import mask as mask_module
from mdaqa.context import Context
from mdaqa.numkernel import RealVector, SeededRng
from mdaqa.qa_task import QASample, SpanLabel
from mdaqa.training import (
    LossBreakdown,
    OptimizerConfig,
    apply_updates,
    batch_gradients,
    effective_lam,
    minibatches,
)
from mdaqa.util import parallel_map, write_csv

if t.TYPE_CHECKING:
    from collections.abc import Callable, Sequence
    from pathlib import Path

    from mdaqa.mask import MaskSnapshot, ParamGrads
    from mdaqa.model import QAModel

    StepHook = Callable[[ParamGrads, ParamGrads, OptimizerConfig], None]

DEFAULT_MAX_ANSWER_LEN = 8
ROUND_LOG_HEADER = ("round", "n_pseudo", "qualified_fraction", "mean_score", "ce", "sparsity", "total")


@dataclasses.dataclass(frozen=True)
class ScoredPrediction:
    span: SpanLabel
    score: float


@dataclasses.dataclass(frozen=True)
class PseudoLabeledSet:
    entries: tuple[tuple[QASample, SpanLabel], ...]
    round: int
    alpha: float
    n_candidates: int
    scores: tuple[float, ...] = ()

    def __len__(self: t.Self) -> int:
        return len(self.entries)

    @property
    def qualified_fraction(self: t.Self) -> float:
        return len(self.entries) / self.n_candidates if self.n_candidates else 0.0

    @property
    def mean_score(self: t.Self) -> float:
        return float(np.mean(self.scores)) if self.scores else 0.0


@dataclasses.dataclass(frozen=True)
class AdaptConfig:
    alpha: float = 0.6
    rounds: int = 5
    lr_mask: float = 0.5
    lr_encoder: float = 0.25
    lam: float = 0.75
    batch_size: int = 16
    seed: int = 0
    max_answer_len: int = DEFAULT_MAX_ANSWER_LEN
    threads: int = 1

    def __post_init__(self: t.Self) -> None:
        if not 0.0 < self.alpha < 1.0:
            msg = f"alpha must lie strictly between 0 and 1, got {self.alpha}"
            raise exceptions.InvalidConfigurationError(msg)
        if self.rounds < 1:
            msg = f"adaptation needs at least one round, got {self.rounds}"
            raise exceptions.InvalidConfigurationError(msg)
        if self.max_answer_len < 1:
            msg = f"max_answer_len must be positive, got {self.max_answer_len}"
            raise exceptions.InvalidConfigurationError(msg)

    def optimizer(self: t.Self) -> OptimizerConfig:
        return OptimizerConfig(
            lr_mask=self.lr_mask,
            lr_encoder=self.lr_encoder,
            lam=self.lam,
            batch_size=self.batch_size,
            epochs=self.rounds,
            seed=self.seed,
        )


@dataclasses.dataclass(frozen=True)
class RoundRecord:
    round: int
    n_pseudo: int
    qualified_fraction: float
    mean_score: float
    loss: LossBreakdown
    skipped: bool = False

    def row(self: t.Self) -> tuple[t.Any, ...]:
        return (
            self.round,
            self.n_pseudo,
            self.qualified_fraction,
            self.mean_score,
            self.loss.ce,
            self.loss.sparsity,
            self.loss.total,
        )


@dataclasses.dataclass
class AdaptLog:
    rounds: list[RoundRecord] = dataclasses.field(default_factory=list)
    pseudo_sets: list[PseudoLabeledSet] = dataclasses.field(default_factory=list, repr=False)

    def to_csv(self: t.Self, path: Path) -> Path:
        return write_csv(path, ROUND_LOG_HEADER, (r.row() for r in self.rounds))

    @property
    def pseudo_counts(self: t.Self) -> list[int]:
        return [r.n_pseudo for r in self.rounds]


def decode_span(
    p_start: RealVector,
    p_end: RealVector,
    max_answer_len: int = DEFAULT_MAX_ANSWER_LEN,
) -> ScoredPrediction:
    """Best ``(s, e)`` with ``s <= e < s + max_answer_len`` by ``p_start[s] * p_end[e]``.

    Ties go to the smaller start, then the smaller end.
    """
    n = p_start.shape[0]
    starts, ends = np.indices((n, n))
    valid = (ends >= starts) & (ends - starts < max_answer_len)
    scores = np.where(valid, np.outer(p_start, p_end), -1.0)
    start, end = divmod(int(np.argmax(scores)), n)
    return ScoredPrediction(SpanLabel(start, end), float(scores[start, end]))


def predict_span(model: QAModel, sample: QASample, max_answer_len: int = DEFAULT_MAX_ANSWER_LEN) -> ScoredPrediction:
    p_start, p_end = model.forward(sample).probabilities()
    return decode_span(p_start, p_end, max_answer_len)


def predict_all(
    model: QAModel,
    samples: Sequence[QASample],
    max_answer_len: int = DEFAULT_MAX_ANSWER_LEN,
    threads: int = 1,
) -> list[ScoredPrediction]:
    return parallel_map(lambda s: predict_span(model, s, max_answer_len), samples, threads)


def generate_pseudo_labels(
    model: QAModel,
    targets: Sequence[QASample],
    alpha: float,
    *,
    round_: int = 0,
    max_answer_len: int = DEFAULT_MAX_ANSWER_LEN,
    threads: int = 1,
) -> PseudoLabeledSet:
    """Keep predictions whose score is strictly above ``alpha``, in input order."""
    if not 0.0 < alpha < 1.0:
        msg = f"alpha must lie strictly between 0 and 1, got {alpha}"
        raise exceptions.DomainError(msg)

    predictions = predict_all(model, targets, max_answer_len, threads)
    kept = [(sample, pred) for sample, pred in zip(targets, predictions) if pred.score > alpha]
    return PseudoLabeledSet(
        entries=tuple((sample.with_label(pred.span), pred.span) for sample, pred in kept),
        round=round_,
        alpha=alpha,
        n_candidates=len(targets),
        scores=tuple(pred.score for _, pred in kept),
    )


def suggest_alpha(
    model: QAModel,
    targets: Sequence[QASample],
    qualified_fraction: float = 0.4,
    *,
    max_answer_len: int = DEFAULT_MAX_ANSWER_LEN,
    threads: int = 1,
) -> float:
    """Threshold that lets roughly ``qualified_fraction`` of first-round predictions through."""
    if not 0.0 < qualified_fraction < 1.0:
        msg = f"qualified_fraction must lie strictly between 0 and 1, got {qualified_fraction}"
        raise exceptions.DomainError(msg)
    if not targets:
        msg = "no target samples to calibrate against"
        raise exceptions.DataError(msg)

    scores = np.array([p.score for p in predict_all(model, targets, max_answer_len, threads)])
    alpha = float(np.quantile(scores, 1.0 - qualified_fraction))
    return min(max(alpha, 1e-6), 1.0 - 1e-6)


def adapt(
    model: QAModel,
    snapshot: MaskSnapshot | None,
    targets: Sequence[QASample],
    cfg: AdaptConfig,
    *,
    gated: bool = True,
    context: Context | None = None,
    on_step: StepHook | None = None,
) -> tuple[QAModel, AdaptLog]:
    """Self-train on unlabelled targets.

    Updates are gated by ``snapshot`` unless ``gated`` is false or the model
    has no mask; ``on_step`` receives the raw and the applied gradients of
    every mini-batch.
    """
    context = context or Context()
    gate = snapshot if gated and model.mask.use_mask else None
    if gated and model.mask.use_mask and snapshot is None:
        msg = "adaptation needs the mask snapshot captured after source training"
        raise exceptions.PreconditionError(msg)
    for sample in targets:
        if sample.answer is not None:
            msg = f"target sample {sample.id!r} carries a label, adaptation uses unlabelled data only"
            raise exceptions.DataError(msg)

    opt = cfg.optimizer()
    lam = effective_lam(model, cfg.lam)
    rng = SeededRng(cfg.seed).stream("adapt-shuffle")
    log = AdaptLog()

    for round_ in range(1, cfg.rounds + 1):
        pseudo = generate_pseudo_labels(
            model,
            targets,
            cfg.alpha,
            round_=round_,
            max_answer_len=cfg.max_answer_len,
            threads=cfg.threads,
        )
        log.pseudo_sets.append(pseudo)
        if not pseudo.entries:
            context.warning("round %d: no prediction scored above alpha=%s, skipping", round_, cfg.alpha)
            log.rounds.append(RoundRecord(round_, 0, 0.0, 0.0, LossBreakdown(0.0, 0.0, 0.0), skipped=True))
            continue

        losses = []
        for idx in minibatches(len(pseudo.entries), cfg.batch_size, rng):
            grads, loss = batch_gradients(model, [pseudo.entries[i] for i in idx], lam)
            if on_step is not None:
                on_step(grads, mask_module.gate_grads(grads, gate) if gate is not None else grads, opt)
            apply_updates(model, grads, opt, gate)
            losses.append(loss)

        record = RoundRecord(
            round_,
            len(pseudo),
            pseudo.qualified_fraction,
            pseudo.mean_score,
            LossBreakdown.mean(losses),
        )
        log.rounds.append(record)
        context.info(
            "round %d: pseudo=%d qualified=%.3f mean_score=%.4f total=%.4f",
            round_,
            record.n_pseudo,
            record.qualified_fraction,
            record.mean_score,
            record.loss.total,
        )

    return model, log
