"""Oracles used by the test-suite: finite differences and exhaustive span search."""

from __future__ import annotations

import typing as t

import numpy as np

from mdaqa import mask as mask_module
from mdaqa.qa_task import SpanLabel
from mdaqa.selftrain import DEFAULT_MAX_ANSWER_LEN, ScoredPrediction
from mdaqa.training import batch_gradients, qa_loss

if t.TYPE_CHECKING:
    from collections.abc import Callable

    from mdaqa.model import QAModel
    from mdaqa.numkernel import RealVector
    from mdaqa.qa_task import QASample


def numerical_gradient(loss: Callable[[], float], param: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss`` with respect to every entry of ``param``, perturbed in place."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = param[idx]
        param[idx] = original + eps
        plus = loss()
        param[idx] = original - eps
        minus = loss()
        param[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def sample_loss(model: QAModel, sample: QASample, lam: float) -> float:
    fwd = model.forward(sample)
    loss, _ = qa_loss(fwd.logits, t.cast("SpanLabel", sample.answer), mask_module.mask_values(model.mask), lam)
    return loss.total


def check_gradients(
    model: QAModel,
    sample: QASample,
    lam: float,
    *,
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
) -> dict[str, float]:
    """Worst ``|analytic - numeric| - (atol + rtol |numeric|)`` per tensor that breaks tolerance."""
    analytic, _ = batch_gradients(model, [(sample, t.cast("SpanLabel", sample.answer))], lam)
    failures = {}
    for key, param in model.parameters().items():
        numeric = numerical_gradient(lambda: sample_loss(model, sample, lam), param, eps)
        excess = np.abs(analytic[key] - numeric) - (atol + rtol * np.abs(numeric))
        if excess.max() > 0:
            failures[key] = float(excess.max())
    return failures


def brute_force_span(
    p_start: RealVector,
    p_end: RealVector,
    max_answer_len: int = DEFAULT_MAX_ANSWER_LEN,
) -> ScoredPrediction:
    best: ScoredPrediction | None = None
    for s in range(len(p_start)):
        for e in range(s, min(len(p_end), s + max_answer_len)):
            score = float(p_start[s] * p_end[e])
            if best is None or score > best.score:
                best = ScoredPrediction(SpanLabel(s, e), score)
    return t.cast("ScoredPrediction", best)
