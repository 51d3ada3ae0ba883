"""Extractive QA samples, JSONL IO and the synthetic corpus generator."""

from __future__ import annotations

import dataclasses
import json
import typing as t
from collections import Counter
from functools import cached_property
from pathlib import Path

import numpy as np

from mdaqa import exceptions
from mdaqa.numkernel import SeededRng

if t.TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

BOS = 0
EOS = 1
PAD = 2
UNK = 3
N_SPECIAL = 4

MAX_ANSWER_TOKENS = 4
HEADS_PER_TEMPLATE = 3
TAILS_PER_TEMPLATE = 3
SOLOS_PER_TEMPLATE = 2
N_MIDDLES = 8
N_QUESTION_WORDS = 6
MIN_FILLERS = 8

# Order in which surface ids are remapped into the reserve half; independent
# of the corpus seed so every corpus with the same shift shares one domain.
# Phrasing ids (templates, question words, fillers) go first, answer ids last.
REMAP_ORDER_SEED = 20230

DEFAULT_TEMPLATES: tuple[tuple[int, ...], ...] = ((4, 5), (6, 7), (8, 9, 10), (11, 12, 13))

TokenId = int


@dataclasses.dataclass(frozen=True)
class SpanLabel:
    start: int
    end: int

    def __len__(self: t.Self) -> int:
        return self.end - self.start + 1


@dataclasses.dataclass(frozen=True)
class QASample:
    id: str
    context: tuple[TokenId, ...]
    question: tuple[TokenId, ...]
    answer: SpanLabel | None = None

    @property
    def labelled(self: t.Self) -> bool:
        return self.answer is not None

    def validate(self: t.Self, vocab_size: int | None = None) -> QASample:
        if not self.context:
            msg = "context is empty"
            raise exceptions.SampleValidationError(msg, self.id)
        if not self.question:
            msg = "question is empty"
            raise exceptions.SampleValidationError(msg, self.id)
        if self.answer is not None:
            a = self.answer
            if not 0 <= a.start <= a.end < len(self.context):
                msg = f"answer ({a.start}, {a.end}) invalid for context of length {len(self.context)}"
                raise exceptions.SampleValidationError(msg, self.id)
        tokens = self.context + self.question
        if min(tokens) < 0 or (vocab_size is not None and max(tokens) >= vocab_size):
            msg = "token id out of range"
            raise exceptions.SampleValidationError(msg, self.id)
        return self

    def unlabelled(self: t.Self) -> QASample:
        return dataclasses.replace(self, answer=None)

    def with_label(self: t.Self, label: SpanLabel) -> QASample:
        return dataclasses.replace(self, answer=label)


@dataclasses.dataclass(frozen=True)
class ModelInput:
    """Packed ``<s> question </s></s> context </s>`` sequence."""

    tokens: tuple[TokenId, ...]
    question: range
    context: range

    @property
    def question_ids(self: t.Self) -> tuple[TokenId, ...]:
        return self.tokens[self.question.start : self.question.stop]

    @property
    def context_ids(self: t.Self) -> tuple[TokenId, ...]:
        return self.tokens[self.context.start : self.context.stop]

    def to_context(self: t.Self, span: SpanLabel) -> SpanLabel:
        offset = self.context.start
        return SpanLabel(span.start - offset, span.end - offset)

    def to_packed(self: t.Self, span: SpanLabel) -> SpanLabel:
        offset = self.context.start
        return SpanLabel(span.start + offset, span.end + offset)


def build_input(sample: QASample, max_len: int) -> ModelInput:
    budget = max_len - len(sample.question) - 4
    if budget < 1:
        msg = f"question of {len(sample.question)} tokens leaves no room for context within max_len {max_len}"
        raise exceptions.InputError(msg)

    context = sample.context[:budget]
    q_len = len(sample.question)
    tokens = (BOS, *sample.question, EOS, EOS, *context, EOS)
    return ModelInput(
        tokens=tokens,
        question=range(1, 1 + q_len),
        context=range(3 + q_len, 3 + q_len + len(context)),
    )


@dataclasses.dataclass(frozen=True)
class CorpusLayout:
    """Role of every vocabulary id, before and after the domain permutation."""

    templates: tuple[tuple[int, ...], ...]
    heads: tuple[tuple[int, ...], ...]
    tails: tuple[tuple[int, ...], ...]
    solos: tuple[tuple[int, ...], ...]
    middles: tuple[int, ...]
    question_words: tuple[int, ...]
    fillers: tuple[int, ...]
    surface: range
    reserve: range
    permutation: tuple[int, ...]

    @property
    def answer_ids(self: t.Self) -> frozenset[int]:
        return frozenset(tok for group in (*self.heads, *self.tails, *self.solos, self.middles) for tok in group)

    @property
    def phrasing_ids(self: t.Self) -> frozenset[int]:
        return frozenset(self.surface) - self.answer_ids

    def remap(self: t.Self, tokens: Iterable[int]) -> tuple[int, ...]:
        return tuple(self.permutation[tok] for tok in tokens)


@dataclasses.dataclass(frozen=True)
class DomainSpec:
    vocab_size: int = 200
    shift: float = 0.0
    trigger_templates: tuple[tuple[int, ...], ...] = DEFAULT_TEMPLATES
    context_len_range: tuple[int, int] = (12, 40)
    question_len_range: tuple[int, int] = (3, 6)
    seed: int = 0
    max_len: int = 64

    def __post_init__(self: t.Self) -> None:
        object.__setattr__(self, "trigger_templates", tuple(tuple(tpl) for tpl in self.trigger_templates))
        object.__setattr__(self, "context_len_range", tuple(self.context_len_range))
        object.__setattr__(self, "question_len_range", tuple(self.question_len_range))

        if not 0.0 <= self.shift <= 1.0:
            msg = f"shift must lie in [0, 1], got {self.shift}"
            raise exceptions.InvalidConfigurationError(msg)
        for name in ("context_len_range", "question_len_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                msg = f"{name} must satisfy 1 <= min <= max, got ({lo}, {hi})"
                raise exceptions.InvalidConfigurationError(msg)
        if not self.trigger_templates or not all(self.trigger_templates):
            msg = "at least one non-empty trigger template is required"
            raise exceptions.InvalidConfigurationError(msg)

        longest = max(len(tpl) for tpl in self.trigger_templates)
        if longest + MAX_ANSWER_TOKENS > self.context_len_range[0]:
            msg = (
                f"template of {longest} tokens plus a {MAX_ANSWER_TOKENS}-token answer does not fit "
                f"the minimum context length {self.context_len_range[0]}"
            )
            raise exceptions.InvalidConfigurationError(msg)
        if self.question_len_range[1] + 4 + longest + MAX_ANSWER_TOKENS > self.max_len:
            msg = f"max_len {self.max_len} too small for questions of up to {self.question_len_range[1]} tokens"
            raise exceptions.InvalidConfigurationError(msg)

    @cached_property
    def layout(self: t.Self) -> CorpusLayout:
        return corpus_layout(self)


def corpus_layout(spec: DomainSpec) -> CorpusLayout:
    surface = range(N_SPECIAL, N_SPECIAL + (spec.vocab_size - N_SPECIAL) // 2)
    reserve = range(surface.stop, spec.vocab_size)

    template_tokens = [tok for tpl in spec.trigger_templates for tok in tpl]
    if len(set(template_tokens)) != len(template_tokens):
        msg = "trigger templates must not share tokens"
        raise exceptions.InvalidConfigurationError(msg)
    if any(tok not in surface for tok in template_tokens):
        msg = f"trigger template tokens must lie in the surface vocabulary {surface.start}..{surface.stop - 1}"
        raise exceptions.InvalidConfigurationError(msg)

    free = [tok for tok in surface if tok not in set(template_tokens)]
    n_templates = len(spec.trigger_templates)
    per_template = HEADS_PER_TEMPLATE + TAILS_PER_TEMPLATE + SOLOS_PER_TEMPLATE
    needed = n_templates * per_template + N_MIDDLES + N_QUESTION_WORDS + MIN_FILLERS
    if len(free) < needed:
        msg = f"vocab_size {spec.vocab_size} too small for {n_templates} templates, need {needed} free surface ids"
        raise exceptions.InvalidConfigurationError(msg)

    heads, tails, solos = [], [], []
    pos = 0
    for _ in range(n_templates):
        heads.append(tuple(free[pos : pos + HEADS_PER_TEMPLATE]))
        pos += HEADS_PER_TEMPLATE
        tails.append(tuple(free[pos : pos + TAILS_PER_TEMPLATE]))
        pos += TAILS_PER_TEMPLATE
        solos.append(tuple(free[pos : pos + SOLOS_PER_TEMPLATE]))
        pos += SOLOS_PER_TEMPLATE
    middles = tuple(free[pos : pos + N_MIDDLES])
    pos += N_MIDDLES
    question_words = tuple(free[pos : pos + N_QUESTION_WORDS])
    pos += N_QUESTION_WORDS
    fillers = tuple(free[pos:])

    answer_ids = {tok for group in (*heads, *tails, *solos, middles) for tok in group}
    gen = np.random.Generator(np.random.PCG64(REMAP_ORDER_SEED))
    phrasing = [tok for tok in surface if tok not in answer_ids]
    answers = [tok for tok in surface if tok in answer_ids]
    order = [phrasing[int(i)] for i in gen.permutation(len(phrasing))]
    order += [answers[int(i)] for i in gen.permutation(len(answers))]

    n_remapped = round(spec.shift * len(surface))
    permutation = list(range(spec.vocab_size))
    for src, dst in zip(order[:n_remapped], reserve):
        permutation[src], permutation[dst] = dst, src

    return CorpusLayout(
        templates=spec.trigger_templates,
        heads=tuple(heads),
        tails=tuple(tails),
        solos=tuple(solos),
        middles=middles,
        question_words=question_words,
        fillers=fillers,
        surface=surface,
        reserve=reserve,
        permutation=tuple(permutation),
    )


def _linear_weights(n: int, shift: float) -> np.ndarray:
    w = (1.0 - shift) + shift * np.arange(1, n + 1, dtype=np.float64)
    return w / w.sum()


def _draw_sample(spec: DomainSpec, layout: CorpusLayout, rng: SeededRng, sample_id: str) -> QASample:
    gen = rng.generator
    n_templates = len(layout.templates)

    j = rng.choice(n_templates, p=_linear_weights(n_templates, spec.shift))
    template = layout.templates[j]
    length = 1 + rng.choice(MAX_ANSWER_TOKENS, p=_linear_weights(MAX_ANSWER_TOKENS, spec.shift))
    if length == 1:
        answer = [int(gen.choice(layout.solos[j]))]
    else:
        answer = [
            int(gen.choice(layout.heads[j])),
            *(int(tok) for tok in gen.choice(layout.middles, size=length - 2)),
            int(gen.choice(layout.tails[j])),
        ]

    lo, hi = spec.context_len_range
    u = float(gen.random())
    context_len = min(hi, lo + int((hi - lo + 1) * u ** (1.0 / (1.0 + spec.shift))))

    fillers = [int(tok) for tok in gen.choice(layout.fillers, size=context_len - len(template) - length)]
    others = [k for k in range(n_templates) if k != j]
    if others and fillers:
        pool = [tok for k in others for tok in (*layout.heads[k], *layout.tails[k], *layout.solos[k])]
        n_distractors = min(len(fillers), rng.integers(0, 3))
        for slot in gen.choice(len(fillers), size=n_distractors, replace=False):
            fillers[int(slot)] = int(gen.choice(pool))

    insert_at = rng.integers(0, len(fillers) + 1)
    context = [*fillers[:insert_at], *template, *answer, *fillers[insert_at:]]
    start = insert_at + len(template)

    q_lo, q_hi = spec.question_len_range
    n_words = max(0, rng.integers(q_lo, q_hi + 1) - len(template))
    question = [*template, *(int(tok) for tok in gen.choice(layout.question_words, size=n_words))]

    return QASample(
        id=sample_id,
        context=layout.remap(context),
        question=layout.remap(question),
        answer=SpanLabel(start, start + length - 1),
    )


def generate_corpus(spec: DomainSpec, n: int) -> list[QASample]:
    """Labelled samples; a pure function of ``(spec, n)``."""
    if n < 1:
        msg = f"corpus size must be at least 1, got {n}"
        raise exceptions.DomainError(msg)

    layout = spec.layout
    rng = SeededRng(spec.seed).stream("data")
    samples = []
    for i in range(n):
        while True:
            sample = _draw_sample(spec, layout, rng, f"{spec.seed}-{i:06d}")
            packed = build_input(sample, spec.max_len)
            if sample.answer is not None and sample.answer.end < len(packed.context):
                break
        samples.append(sample)
    return samples


def oracle_span(sample: QASample, spec: DomainSpec) -> SpanLabel | None:
    """Recover the gold span from the question's template alone."""
    layout = spec.layout
    for j, template in enumerate(layout.templates):
        pattern = layout.remap(template)
        if sample.question[: len(pattern)] != pattern:
            continue
        enders = set(layout.remap((*layout.tails[j], *layout.solos[j])))
        for pos in range(len(sample.context) - len(pattern) + 1):
            if sample.context[pos : pos + len(pattern)] != pattern:
                continue
            start = pos + len(pattern)
            for end in range(start, min(start + MAX_ANSWER_TOKENS, len(sample.context))):
                if sample.context[end] in enders:
                    return SpanLabel(start, end)
    return None


def unigram_tv_distance(a: Sequence[QASample], b: Sequence[QASample]) -> float:
    """Total-variation distance between non-special context+question unigrams."""

    def distribution(samples: Sequence[QASample]) -> Counter[int]:
        return Counter(tok for s in samples for tok in (*s.context, *s.question) if tok >= N_SPECIAL)

    pa, pb = distribution(a), distribution(b)
    na, nb = sum(pa.values()), sum(pb.values())
    return 0.5 * sum(abs(pa[tok] / na - pb[tok] / nb) for tok in set(pa) | set(pb))


def strip_labels(samples: Iterable[QASample]) -> list[QASample]:
    return [s.unlabelled() for s in samples]


def _to_json(sample: QASample) -> str:
    answer = None if sample.answer is None else {"start": sample.answer.start, "end": sample.answer.end}
    obj = {"id": sample.id, "context": list(sample.context), "question": list(sample.question), "answer": answer}
    return json.dumps(obj, separators=(",", ":"))


def write_jsonl(samples: Iterable[QASample], path: Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as f:
        for sample in samples:
            f.write(_to_json(sample))
            f.write("\n")


def _is_int(value: object) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _int_list(value: object, field: str, line: int) -> tuple[int, ...]:
    if not isinstance(value, list) or not all(_is_int(v) for v in value):
        msg = f"field {field!r} must be an array of integers"
        raise exceptions.JsonlParseError(msg, line)
    return tuple(value)


def _parse_line(text: str, line: int) -> QASample:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        msg = f"malformed JSON ({e.msg})"
        raise exceptions.JsonlParseError(msg, line) from e
    if not isinstance(obj, dict):
        msg = "expected a JSON object"
        raise exceptions.JsonlParseError(msg, line)

    missing = {"id", "context", "question", "answer"} - obj.keys()
    if missing:
        msg = f"missing fields {sorted(missing)}"
        raise exceptions.JsonlParseError(msg, line)
    if not isinstance(obj["id"], str):
        msg = "field 'id' must be a string"
        raise exceptions.JsonlParseError(msg, line)

    answer = obj["answer"]
    label = None
    if answer is not None:
        if not isinstance(answer, dict) or not all(_is_int(answer.get(k)) for k in ("start", "end")):
            msg = "field 'answer' must be null or {'start': int, 'end': int}"
            raise exceptions.JsonlParseError(msg, line)
        label = SpanLabel(answer["start"], answer["end"])

    sample = QASample(
        id=obj["id"],
        context=_int_list(obj["context"], "context", line),
        question=_int_list(obj["question"], "question", line),
        answer=label,
    )
    return sample.validate()


def read_jsonl(path: Path) -> list[QASample]:
    samples = []
    with Path(path).open(encoding="utf-8") as f:
        for lineno, text in enumerate(f, start=1):
            if not text.strip():
                continue
            samples.append(_parse_line(text, lineno))
    return samples
