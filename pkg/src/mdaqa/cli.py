from __future__ import annotations

import dataclasses
import enum
import functools
import importlib.metadata
import sys
import typing as t
from pathlib import Path

import dotenv
import typer

from mdaqa import exceptions, experiment
from mdaqa.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from mdaqa.config import RunConfig, load_config
from mdaqa.context import Context
from mdaqa.metrics import evaluate
from mdaqa.model import QAModel
from mdaqa.qa_task import generate_corpus, read_jsonl, strip_labels, write_jsonl
from mdaqa.selftrain import adapt as adapt_model
from mdaqa.selftrain import suggest_alpha as suggest_alpha_
from mdaqa.training import train_source as train_source_
from mdaqa.util import parse_values, sidecar

if sys.version_info < (3, 10):
    from typing_extensions import ParamSpec
else:  # pragma: no cover
    from typing import ParamSpec

if t.TYPE_CHECKING:
    from collections.abc import Sequence

    from mdaqa.qa_task import QASample


def load_dotenv() -> None:
    dotenv.load_dotenv(
        dotenv.find_dotenv(usecwd=True),
        override=True,
    )


def _version_callback(*, value: bool) -> None:
    """Get current cli version."""
    if value:  # pragma: no cover
        version = importlib.metadata.version("mdaqa")
        typer.echo(f"mdaqa {version}")
        raise typer.Exit


def _callback(  # pragma: no cover
    _version: t.Optional[bool] = typer.Option(
        None,
        "-v",
        "--version",
        callback=_version_callback,
        help="Print version and exit.",
    ),
) -> None: ...


app: typer.Typer = typer.Typer(name="mdaqa", callback=_callback)


P = ParamSpec("P")
R = t.TypeVar("R")


def handle_exceptions(context: Context) -> t.Callable[[t.Callable[P, R]], t.Callable[P, R]]:
    def inner(f: t.Callable[P, R]) -> t.Callable[P, R]:
        """Report any failure and exit 1."""

        @functools.wraps(f)
        def wrapped(*args: P.args, **kwargs: P.kwargs) -> R:
            try:
                return f(*args, **kwargs)
            except typer.Exit:
                raise
            except Exception as e:
                context.stacktrace()
                context.error(str(e))
                raise typer.Exit(code=1) from e

        return wrapped

    return inner


def _open_unit(value: t.Optional[float]) -> t.Optional[float]:
    if value is not None and not 0.0 < value < 1.0:
        msg = f"{value} is not strictly between 0 and 1."
        raise typer.BadParameter(msg)
    return value


def _values(value: t.Optional[str]) -> t.Optional[str]:
    try:
        if value is not None:
            parse_values(value, float)
    except ValueError as e:
        msg = f"{value!r} is not a comma separated list of numbers."
        raise typer.BadParameter(msg) from e
    return value


def _methods(value: t.Optional[str]) -> t.Optional[str]:
    try:
        if value is not None:
            parse_values(value, experiment.Method)
    except ValueError as e:
        choices = ", ".join(m.value for m in experiment.Method)
        msg = f"{value!r} contains an unknown method, choose from {choices}."
        raise typer.BadParameter(msg) from e
    return value


def _resolve(config: t.Optional[Path], *, dotenv: bool, **flags: t.Any) -> RunConfig:  # noqa: ANN401
    if dotenv:  # pragma: no cover
        load_dotenv()
    return load_config(config).with_overrides(**flags)


def _read_data(path: Path, cfg: RunConfig) -> list[QASample]:
    return [sample.validate(cfg.vocab_size) for sample in read_jsonl(path)]


def _report(context: Context, name: str, samples: Sequence[QASample], model: QAModel, cfg: RunConfig) -> None:
    report = evaluate(model, samples, threads=cfg.threads, max_answer_len=cfg.max_answer_len)
    context.table([(name, report.n, report.em, report.f1)], headers=("DATA", "N", "EM", "F1"))


verbose_option = typer.Option(
    0,
    "-v",
    "--verbose",
    help="Verbose output. Use multiple times to increase level of verbosity.",
    count=True,
    max=3,
)
config_option = typer.Option(None, "-c", "--config", help="JSON file overriding [tool.mdaqa] settings.")
dotenv_option = typer.Option(False, help="Load environment from .env.")  # noqa: FBT003


class Domain(str, enum.Enum):
    source = "source"
    target = "target"


def _domain(cfg: RunConfig) -> Domain:
    try:
        return Domain(cfg.domain)
    except ValueError as e:
        msg = f"domain must be source or target, got {cfg.domain!r}"
        raise exceptions.InvalidConfigurationError(msg) from e


@app.command("gen-data")
def gen_data(
    out: Path = typer.Option(..., "-o", "--out", help="JSONL file to write."),
    domain: t.Optional[Domain] = typer.Option(
        None,
        "--domain",
        help="Source corpora carry labels, target corpora do not.  [default: source]",
    ),
    shift: t.Optional[float] = typer.Option(None, "--shift", min=0.0, max=1.0, help="Domain shift of the corpus."),
    n: t.Optional[int] = typer.Option(None, "-n", "--n", min=1, help="Number of samples."),
    seed: t.Optional[int] = typer.Option(None, "--seed", min=0, help="Corpus seed."),
    config: t.Optional[Path] = config_option,
    *,
    dotenv: bool = dotenv_option,
    verbose: int = verbose_option,
) -> None:
    """Generate a synthetic corpus.

    Target corpora are written without answers, next to a labelled
    ``.gold.jsonl`` twin used only for evaluation.
    """
    context = Context(verbose)

    @handle_exceptions(context)
    def gen_data_() -> None:
        cfg = _resolve(config, dotenv=dotenv, seed=seed, domain=None if domain is None else domain.value)
        corpus = _domain(cfg)
        if corpus is Domain.target:
            cfg = cfg.with_overrides(shift=shift, n_target=n)
            spec, count = cfg.domain_spec(), cfg.n_target
        else:
            cfg = cfg.with_overrides(source_shift=shift, n_source=n)
            spec, count = cfg.source_spec(), cfg.n_source
        samples = generate_corpus(spec, count)

        out.parent.mkdir(parents=True, exist_ok=True)
        if corpus is Domain.target:
            gold = out.with_suffix(".gold.jsonl")
            write_jsonl(strip_labels(samples), out)
            write_jsonl(samples, gold)
            context.info("Wrote gold labels to %s", gold)
        else:
            write_jsonl(samples, out)
        cfg.write_resolved(sidecar(out, ".config.json"))
        context.error("Wrote %d %s samples to %s", count, corpus.value, out)

    gen_data_()


@app.command("train-source")
def train_source(
    train: Path = typer.Option(..., "-t", "--train", help="Labelled source JSONL."),
    out: Path = typer.Option(..., "-o", "--out", help="Checkpoint to write."),
    dev: t.Optional[Path] = typer.Option(None, "--dev", help="Labelled source dev JSONL to report on."),
    epochs: t.Optional[int] = typer.Option(None, "--epochs", min=0),
    lam: t.Optional[float] = typer.Option(None, "--lam", min=0.0, help="Sparsity weight."),
    seed: t.Optional[int] = typer.Option(None, "--seed", min=0),
    config: t.Optional[Path] = config_option,
    *,
    no_mask: bool = typer.Option(False, "--no-mask", help="Train the ablation without a mask module."),  # noqa: FBT003
    dotenv: bool = dotenv_option,
    verbose: int = verbose_option,
) -> None:
    """Train on labelled source data and capture the mask snapshot."""
    context = Context(verbose)

    @handle_exceptions(context)
    def train_source__() -> None:
        cfg = _resolve(config, dotenv=dotenv, epochs=epochs, lam=lam, seed=seed, use_mask=False if no_mask else None)
        data = _read_data(train, cfg)

        model = QAModel.initialise(cfg.model_shape(), cfg.seed)
        opt = cfg.optimizer_config()
        with context.section("Training on %d samples", len(data)):
            model, snapshot, log = train_source_(model, data, opt, context=context)

        save_checkpoint(out, Checkpoint.from_model(model, snapshot, opt, {"seed": cfg.seed}))
        log.to_csv(sidecar(out, ".log.csv"))
        cfg.write_resolved(sidecar(out, ".config.json"))
        context.error("Wrote checkpoint to %s", out)

        if dev is not None:
            _report(context, dev.name, _read_data(dev, cfg), model, cfg)
        else:
            _report(context, train.name, data, model, cfg)

    train_source__()


@app.command("adapt")
def adapt(
    model: Path = typer.Option(..., "-m", "--model", help="Source checkpoint."),
    target: Path = typer.Option(..., "-t", "--target", help="Unlabelled target JSONL."),
    out: Path = typer.Option(..., "-o", "--out", help="Adapted checkpoint to write."),
    alpha: t.Optional[float] = typer.Option(None, "--alpha", callback=_open_unit, help="Confidence threshold."),
    rounds: t.Optional[int] = typer.Option(None, "--rounds", min=1, help="Self-training rounds."),
    seed: t.Optional[int] = typer.Option(None, "--seed", min=0),
    config: t.Optional[Path] = config_option,
    *,
    no_mask: bool = typer.Option(False, "--no-mask", help="Plain self-training without gating."),  # noqa: FBT003
    dotenv: bool = dotenv_option,
    verbose: int = verbose_option,
) -> None:
    """Self-train a source checkpoint on unlabelled target data."""
    context = Context(verbose)

    @handle_exceptions(context)
    def adapt_() -> None:
        cfg = _resolve(config, dotenv=dotenv, alpha=alpha, rounds=rounds, seed=seed)
        ckpt = load_checkpoint(model)
        cfg = cfg.with_overrides(**dataclasses.asdict(ckpt.shape))
        targets = _read_data(target, cfg)

        adapt_cfg = cfg.adapt_config()
        with context.section("Adapting on %d samples, alpha=%s", len(targets), adapt_cfg.alpha):
            adapted, log = adapt_model(
                ckpt.to_model(),
                ckpt.snapshot,
                targets,
                adapt_cfg,
                gated=not no_mask,
                context=context,
            )

        save_checkpoint(out, Checkpoint.from_model(adapted, ckpt.snapshot, adapt_cfg, {"seed": cfg.seed}))
        log.to_csv(sidecar(out, ".rounds.csv"))
        cfg.write_resolved(sidecar(out, ".config.json"))
        context.table(
            [(r.round, r.n_pseudo, r.qualified_fraction, r.mean_score, r.loss.total) for r in log.rounds],
            headers=("ROUND", "PSEUDO", "QUALIFIED", "MEAN SCORE", "LOSS"),
            floatfmt=".4f",
        )
        context.error("Wrote checkpoint to %s", out)

    adapt_()


@app.command("eval")
def eval_(
    model: Path = typer.Option(..., "-m", "--model", help="Checkpoint to evaluate."),
    data: Path = typer.Option(..., "-d", "--data", help="Labelled JSONL, the .gold.jsonl twin for targets."),
    out: Path = typer.Option(..., "-o", "--out", help="Per-sample CSV; a JSON summary is written alongside."),
    config: t.Optional[Path] = config_option,
    *,
    dotenv: bool = dotenv_option,
    verbose: int = verbose_option,
) -> None:
    """Exact match and F1 of a checkpoint."""
    context = Context(verbose)

    @handle_exceptions(context)
    def eval__() -> None:
        cfg = _resolve(config, dotenv=dotenv)
        ckpt = load_checkpoint(model)
        cfg = cfg.with_overrides(**dataclasses.asdict(ckpt.shape))
        samples = _read_data(data, cfg)

        report = evaluate(ckpt.to_model(), samples, threads=cfg.threads, max_answer_len=cfg.max_answer_len)
        report.to_csv(out)
        report.to_json(out.with_suffix(".json"))
        cfg.write_resolved(sidecar(out, ".config.json"))
        context.table([(data.name, report.n, report.em, report.f1)], headers=("DATA", "N", "EM", "F1"))

    eval__()


@app.command("sweep")
def sweep(
    out: Path = typer.Option(..., "-o", "--out", help="Long-form CSV; an SVG plot is written alongside."),
    param: t.Optional[experiment.SweepParam] = typer.Option(
        None,
        "-p",
        "--param",
        help="Swept parameter.  [default: alpha]",
    ),
    values: t.Optional[str] = typer.Option(
        None,
        "--values",
        callback=_values,
        help="Comma separated values, e.g. 0.1,0.3,0.5.",
    ),
    repeats: t.Optional[int] = typer.Option(None, "-r", "--repeats", min=1, help="Seeds per value.  [default: 3]"),
    methods: t.Optional[str] = typer.Option(
        None,
        "--methods",
        callback=_methods,
        help="Comma separated: mdaqa, no-mask, none.  [default: mdaqa]",
    ),
    shift: t.Optional[float] = typer.Option(None, "--shift", min=0.0, max=1.0),
    epochs: t.Optional[int] = typer.Option(None, "--epochs", min=0),
    rounds: t.Optional[int] = typer.Option(None, "--rounds", min=1),
    seed: t.Optional[int] = typer.Option(None, "--seed", min=0),
    config: t.Optional[Path] = config_option,
    *,
    dotenv: bool = dotenv_option,
    verbose: int = verbose_option,
) -> None:
    """Run the full pipeline for every value and seed.

    Failed runs are recorded with their error and the sweep carries on; the
    command exits 1 when any run failed.
    """
    context = Context(verbose)

    @handle_exceptions(context)
    def sweep_() -> None:
        cfg = _resolve(
            config,
            dotenv=dotenv,
            shift=shift,
            epochs=epochs,
            rounds=rounds,
            seed=seed,
            sweep_param=None if param is None else param.value,
            sweep_values=values,
            sweep_repeats=repeats,
            sweep_methods=methods,
        )
        plan = experiment.SweepPlan.from_config(cfg)
        result = experiment.run_sweep(
            cfg,
            plan.param,
            plan.values,
            repeats=plan.repeats,
            methods=plan.methods,
            context=context,
        )
        result.to_csv(out)
        result.plot(out.with_suffix(".svg"))
        cfg.write_resolved(sidecar(out, ".config.json"))

        context.table(
            [(m.value, v, em, f1) for m, points in result.means().items() for v, em, f1 in points],
            headers=("METHOD", plan.param.value.upper(), "EM", "F1"),
        )
        if result.failures:
            msg = f"{len(result.failures)} of {len(result.rows)} runs failed"
            raise exceptions.DataError(msg)

    sweep_()


@app.command("suggest-alpha")
def suggest_alpha(
    model: Path = typer.Option(..., "-m", "--model", help="Source checkpoint."),
    target: Path = typer.Option(..., "-t", "--target", help="Unlabelled target JSONL."),
    fraction: float = typer.Option(0.4, "--fraction", callback=_open_unit, help="Share of predictions to qualify."),
    config: t.Optional[Path] = config_option,
    *,
    dotenv: bool = dotenv_option,
    verbose: int = verbose_option,
) -> None:
    """Threshold that lets a given share of first-round predictions qualify."""
    context = Context(verbose)

    @handle_exceptions(context)
    def suggest_alpha__() -> None:
        cfg = _resolve(config, dotenv=dotenv)
        ckpt = load_checkpoint(model)
        cfg = cfg.with_overrides(**dataclasses.asdict(ckpt.shape))
        targets = _read_data(target, cfg)
        alpha = suggest_alpha_(
            ckpt.to_model(),
            targets,
            fraction,
            max_answer_len=cfg.max_answer_len,
            threads=cfg.threads,
        )
        context.error("%.6f", alpha)

    suggest_alpha__()
