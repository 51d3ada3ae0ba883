"""Exact match and token F1 over span positions."""

from __future__ import annotations

import dataclasses
import json
import typing as t
from pathlib import Path

import numpy as np

from mdaqa import exceptions
from mdaqa.selftrain import DEFAULT_MAX_ANSWER_LEN, predict_all
from mdaqa.training import require_labels
from mdaqa.util import write_csv

if t.TYPE_CHECKING:
    from collections.abc import Sequence

    from mdaqa.model import QAModel
    from mdaqa.qa_task import QASample, SpanLabel

RECORD_HEADER = ("id", "em", "f1", "pred_start", "pred_end", "gold_start", "gold_end", "score")


def exact_match(pred: SpanLabel, gold: SpanLabel) -> int:
    return int(pred.start == gold.start and pred.end == gold.end)


def token_f1(pred: SpanLabel, gold: SpanLabel) -> float:
    overlap = max(0, min(pred.end, gold.end) - max(pred.start, gold.start) + 1)
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return (2 * precision * recall) / (precision + recall)


@dataclasses.dataclass(frozen=True)
class SampleRecord:
    id: str
    em: int
    f1: float
    pred: SpanLabel
    gold: SpanLabel
    score: float

    def row(self: t.Self) -> tuple[t.Any, ...]:
        return (self.id, self.em, self.f1, self.pred.start, self.pred.end, self.gold.start, self.gold.end, self.score)


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    em: float
    f1: float
    n: int
    records: tuple[SampleRecord, ...] = ()

    @classmethod
    def from_records(cls: type[MetricsReport], records: Sequence[SampleRecord]) -> MetricsReport:
        if not records:
            msg = "cannot summarise an empty evaluation"
            raise exceptions.DataError(msg)
        return cls(
            em=100.0 * float(np.mean([r.em for r in records])),
            f1=100.0 * float(np.mean([r.f1 for r in records])),
            n=len(records),
            records=tuple(records),
        )

    def summary(self: t.Self) -> dict[str, float | int]:
        return {"em": self.em, "f1": self.f1, "n": self.n}

    def to_csv(self: t.Self, path: Path) -> Path:
        return write_csv(path, RECORD_HEADER, (r.row() for r in self.records))

    def to_json(self: t.Self, path: Path) -> Path:
        payload = {
            **self.summary(),
            "records": [dict(zip(RECORD_HEADER, r.row())) for r in self.records],
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
        return path


def evaluate(
    model: QAModel,
    data: Sequence[QASample],
    *,
    threads: int = 1,
    max_answer_len: int = DEFAULT_MAX_ANSWER_LEN,
) -> MetricsReport:
    if not data:
        msg = "no samples to evaluate"
        raise exceptions.DataError(msg)
    require_labels(data)

    predictions = predict_all(model, data, max_answer_len, threads)
    records = []
    for sample, pred in zip(data, predictions):
        gold = t.cast("SpanLabel", sample.answer)
        records.append(
            SampleRecord(
                id=sample.id,
                em=exact_match(pred.span, gold),
                f1=token_f1(pred.span, gold),
                pred=pred.span,
                gold=gold,
                score=pred.score,
            ),
        )
    return MetricsReport.from_records(records)
