"""Seeded sweeps over the adaptation threshold or the target sample count."""

from __future__ import annotations

import dataclasses
import json
import enum
import typing as t
from collections import defaultdict
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

from mdaqa import exceptions
from mdaqa.context import Context
from mdaqa.metrics import evaluate
from mdaqa.model import QAModel
from mdaqa.numkernel import SeededRng
from mdaqa.qa_task import QASample, generate_corpus, strip_labels
from mdaqa.selftrain import adapt
from mdaqa.training import train_source
from mdaqa.util import parse_values, write_csv

if t.TYPE_CHECKING:
    from collections.abc import Sequence

    from mdaqa.config import RunConfig
    from mdaqa.mask import MaskSnapshot

SWEEP_HEADER = ("param_value", "seed", "method", "em", "f1", "pseudo_counts", "status")


class SweepParam(str, enum.Enum):
    alpha = "alpha"
    nsamples = "nsamples"


class Method(str, enum.Enum):
    mdaqa = "mdaqa"
    no_mask = "no-mask"
    none = "none"


@dataclasses.dataclass(frozen=True)
class SweepRow:
    param_value: float
    seed: int
    method: Method
    em: float | None = None
    f1: float | None = None
    pseudo_counts: tuple[int, ...] = ()
    status: str = "ok"

    @property
    def ok(self: t.Self) -> bool:
        return self.status == "ok"

    def row(self: t.Self) -> tuple[t.Any, ...]:
        return (
            self.param_value,
            self.seed,
            self.method.value,
            "" if self.em is None else self.em,
            "" if self.f1 is None else self.f1,
            ";".join(str(c) for c in self.pseudo_counts),
            self.status,
        )


@dataclasses.dataclass
class SweepResult:
    param: SweepParam
    rows: list[SweepRow] = dataclasses.field(default_factory=list)

    @property
    def failures(self: t.Self) -> list[SweepRow]:
        return [r for r in self.rows if not r.ok]

    def means(self: t.Self) -> dict[Method, list[tuple[float, float, float]]]:
        """``(value, mean em, mean f1)`` per method over successful runs, sorted by value."""
        grouped: dict[Method, dict[float, list[SweepRow]]] = defaultdict(lambda: defaultdict(list))
        for r in self.rows:
            if r.ok:
                grouped[r.method][r.param_value].append(r)
        return {
            method: [
                (value, float(np.mean([r.em for r in rows])), float(np.mean([r.f1 for r in rows])))
                for value, rows in sorted(by_value.items())
            ]
            for method, by_value in grouped.items()
        }

    def to_csv(self: t.Self, path: Path) -> Path:
        return write_csv(path, SWEEP_HEADER, (r.row() for r in self.rows))

    def plot(self: t.Self, path: Path) -> Path:
        """Mean EM and F1 against the swept value, one line per method."""
        fig = Figure(figsize=(6.4, 4.0))
        ax = fig.add_subplot(1, 1, 1)
        for method, points in self.means().items():
            xs = [p[0] for p in points]
            ax.plot(xs, [p[1] for p in points], marker="o", label=f"{method.value} EM")
            ax.plot(xs, [p[2] for p in points], marker="s", linestyle="--", label=f"{method.value} F1")
        if self.param is SweepParam.nsamples:
            ax.set_xscale("log")
        ax.set_xlabel(self.param.value)
        ax.set_ylabel("score")
        ax.grid(visible=True, alpha=0.3)
        if ax.lines:
            ax.legend(fontsize="small")
        fig.tight_layout()

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with mpl.rc_context({"svg.hashsalt": "mdaqa"}):
            fig.savefig(path, format="svg", metadata={"Date": None})
        return path


@dataclasses.dataclass(frozen=True)
class SeedData:
    source: list[QASample]
    targets: list[QASample]
    target_test: list[QASample]


def seeds_for(cfg: RunConfig, repeats: int) -> list[int]:
    rng = SeededRng(cfg.seed).stream("sweep")
    return [rng.derive_seed(f"repeat-{r}") for r in range(repeats)]


def build_seed_data(cfg: RunConfig, seed: int, n_targets: int) -> SeedData:
    rng = SeededRng(seed).stream("corpora")
    source = generate_corpus(cfg.source_spec(seed=rng.derive_seed("source")), cfg.n_source)
    targets = generate_corpus(cfg.domain_spec(seed=rng.derive_seed("target")), n_targets)
    test = generate_corpus(cfg.domain_spec(seed=rng.derive_seed("target-test")), cfg.n_target_test)
    return SeedData(source=source, targets=strip_labels(targets), target_test=test)


class SourceCache:
    """Source models per ``(seed, use_mask)``; adaptation always works on a clone."""

    def __init__(self: t.Self, cfg: RunConfig, context: Context) -> None:
        self.cfg = cfg
        self.context = context
        self._models: dict[tuple[int, bool], tuple[QAModel, MaskSnapshot | None]] = {}

    def get(self: t.Self, seed: int, data: SeedData, *, use_mask: bool) -> tuple[QAModel, MaskSnapshot | None]:
        key = (seed, use_mask)
        if key not in self._models:
            cfg = dataclasses.replace(self.cfg, seed=seed, use_mask=use_mask)
            model = QAModel.initialise(cfg.model_shape(), seed)
            with self.context.section("source training seed=%d use_mask=%s", seed, use_mask):
                model, snapshot, _ = train_source(model, data.source, cfg.optimizer_config(), context=self.context)
            self._models[key] = (model, snapshot)
        model, snapshot = self._models[key]
        return model.clone(), snapshot


def _run_one(
    cfg: RunConfig,
    param: SweepParam,
    value: float,
    seed: int,
    method: Method,
    data: SeedData,
    cache: SourceCache,
    context: Context,
) -> SweepRow:
    run_cfg = dataclasses.replace(cfg, seed=seed)
    targets = data.targets
    if param is SweepParam.alpha:
        run_cfg = dataclasses.replace(run_cfg, alpha=value)
    else:
        targets = targets[: int(value)]

    model, snapshot = cache.get(seed, data, use_mask=method is not Method.no_mask)
    counts: tuple[int, ...] = ()
    if method is not Method.none:
        model, log = adapt(model, snapshot, targets, run_cfg.adapt_config(), context=context)
        counts = tuple(log.pseudo_counts)
    report = evaluate(model, data.target_test, threads=cfg.threads, max_answer_len=cfg.max_answer_len)
    return SweepRow(value, seed, method, report.em, report.f1, counts)


def validate_values(param: SweepParam, values: Sequence[float]) -> None:
    if not values:
        msg = "sweep needs at least one value"
        raise exceptions.DomainError(msg)
    for value in values:
        if param is SweepParam.alpha and not 0.0 < value < 1.0:
            msg = f"alpha values must lie strictly between 0 and 1, got {value}"
            raise exceptions.DomainError(msg)
        if param is SweepParam.nsamples and (value < 1 or value != int(value)):
            msg = f"nsamples values must be positive integers, got {value}"
            raise exceptions.DomainError(msg)


@dataclasses.dataclass(frozen=True)
class SweepPlan:
    param: SweepParam
    values: list[float]
    repeats: int
    methods: list[Method]

    @classmethod
    def from_config(cls: type[SweepPlan], cfg: RunConfig) -> SweepPlan:
        """Parse the ``sweep_*`` settings of a run configuration."""
        try:
            param = SweepParam(cfg.sweep_param)
        except ValueError as e:
            msg = f"sweep_param must be one of {', '.join(p.value for p in SweepParam)}, got {cfg.sweep_param!r}"
            raise exceptions.InvalidConfigurationError(msg) from e
        try:
            values = parse_values(cfg.sweep_values, float)
        except ValueError as e:
            msg = f"sweep_values must be comma separated numbers, got {cfg.sweep_values!r}"
            raise exceptions.InvalidConfigurationError(msg) from e
        try:
            methods = parse_values(cfg.sweep_methods, Method)
        except ValueError as e:
            msg = f"sweep_methods contains an unknown method, got {cfg.sweep_methods!r}"
            raise exceptions.InvalidConfigurationError(msg) from e
        if not methods:
            msg = "sweep_methods names no method"
            raise exceptions.InvalidConfigurationError(msg)
        return cls(param, values, cfg.sweep_repeats, methods)


def run_sweep(
    cfg: RunConfig,
    param: SweepParam,
    values: Sequence[float],
    *,
    repeats: int = 3,
    methods: Sequence[Method] = (Method.mdaqa,),
    context: Context | None = None,
) -> SweepResult:
    """Every value x repeat x method; a failed run is recorded and the sweep continues."""
    context = context or Context()
    validate_values(param, values)
    if repeats < 1:
        msg = f"repeats must be at least 1, got {repeats}"
        raise exceptions.DomainError(msg)

    n_targets = int(max(values)) if param is SweepParam.nsamples else cfg.n_target
    cache = SourceCache(cfg, context)
    result = SweepResult(param)
    for seed in seeds_for(cfg, repeats):
        data = build_seed_data(cfg, seed, n_targets)
        for value in values:
            for method in methods:
                with context.section("%s=%s seed=%d method=%s", param.value, value, seed, method.value):
                    try:
                        row = _run_one(cfg, param, value, seed, method, data, cache, context)
                    except Exception as e:  # noqa: BLE001
                        context.stacktrace()
                        context.error(
                            "run %s=%s seed=%d method=%s failed: %s", param.value, value, seed, method.value, e
                        )
                        row = SweepRow(value, seed, method, status=f"failed: {e!s}")
                    else:
                        context.info("em=%.2f f1=%.2f pseudo=%s", row.em, row.f1, list(row.pseudo_counts))
                result.rows.append(row)
    return result


@dataclasses.dataclass(frozen=True)
class SeedReference:
    seed: int
    source_em: float
    adapted_em: float
    no_mask_em: float

    @property
    def gain(self: t.Self) -> float:
        return self.adapted_em - self.source_em

    @property
    def margin(self: t.Self) -> float:
        """Adapted EM over the ablation adapted the same way."""
        return self.adapted_em - self.no_mask_em


@dataclasses.dataclass(frozen=True)
class ReferenceRuns:
    """Seeded target EM before and after adaptation, committed as a test fixture."""

    source_dev_em: float
    seeds: tuple[SeedReference, ...]

    def to_json(self: t.Self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as f:
            json.dump(dataclasses.asdict(self), f, indent=2)
            f.write("\n")
        return path

    @classmethod
    def from_json(cls: type[ReferenceRuns], path: Path) -> ReferenceRuns:
        with Path(path).open(encoding="utf-8") as f:
            data = json.load(f)
        return cls(data["source_dev_em"], tuple(SeedReference(**s) for s in data["seeds"]))


def source_dev_em(cfg: RunConfig, *, context: Context | None = None) -> float:
    """Source model trained at ``cfg.seed``, scored on a dev corpus drawn at ``cfg.seed + 1``."""
    data = generate_corpus(cfg.source_spec(), cfg.n_source)
    dev = generate_corpus(cfg.source_spec(seed=cfg.seed + 1), cfg.n_source_dev)
    model = QAModel.initialise(cfg.model_shape(), cfg.seed)
    model, _, _ = train_source(model, data, cfg.optimizer_config(), context=context)
    return evaluate(model, dev, threads=cfg.threads, max_answer_len=cfg.max_answer_len).em


def reference_runs(cfg: RunConfig, repeats: int = 5, *, context: Context | None = None) -> ReferenceRuns:
    context = context or Context()
    with context.section("source dev"):
        dev_em = source_dev_em(cfg, context=context)

    cache = SourceCache(cfg, context)
    seeds = []
    for seed in seeds_for(cfg, repeats):
        data = build_seed_data(cfg, seed, cfg.n_target)
        ems: dict[Method, float] = {}
        for method in Method:
            row = _run_one(cfg, SweepParam.alpha, cfg.alpha, seed, method, data, cache, context)
            ems[method] = t.cast(float, row.em)
        ref = SeedReference(seed, ems[Method.none], ems[Method.mdaqa], ems[Method.no_mask])
        context.info("seed=%d before=%.2f after=%.2f no-mask=%.2f", seed, ref.source_em, ref.adapted_em, ref.no_mask_em)
        seeds.append(ref)
    return ReferenceRuns(dev_em, tuple(seeds))
