from __future__ import annotations

import dataclasses
import json
import os
import typing as t
from pathlib import Path

import rtoml

from mdaqa import exceptions
from mdaqa.model import ModelShape
from mdaqa.qa_task import DomainSpec
from mdaqa.selftrain import AdaptConfig
from mdaqa.training import OptimizerConfig

CONFIG_FILENAME = "pyproject.toml"
THREADS_ENV = "MDAQA_THREADS"


@dataclasses.dataclass(frozen=True)
class RunConfig:
    # data
    vocab_size: int = 200
    max_len: int = 64
    domain: str = "source"
    shift: float = 0.6
    source_shift: float = 0.0
    n_source: int = 2000
    n_source_dev: int = 500
    n_target: int = 1000
    n_target_test: int = 500
    # model
    embed_dim: int = 32
    feature_dim: int = 32
    bottleneck: int = 64
    k: float = 100.0
    use_mask: bool = True
    # source training
    lr_mask: float = 0.1
    lr_encoder: float = 0.05
    lam: float = 0.75
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    # adaptation
    alpha: float = 0.6
    rounds: int = 5
    adapt_lr_mask: float = 0.5
    adapt_lr_encoder: float = 0.25
    max_answer_len: int = 8
    threads: int = 1
    # sweeps
    sweep_param: str = "alpha"
    sweep_values: str = "0.1,0.3,0.5,0.7,0.9"
    sweep_repeats: int = 3
    sweep_methods: str = "mdaqa"

    @classmethod
    def from_dict(cls: type[RunConfig], data: dict[str, t.Any], *, source: str = "configuration") -> RunConfig:
        return cls().merged(data, source=source)

    def merged(self: t.Self, data: dict[str, t.Any], *, source: str = "configuration") -> RunConfig:
        known = {f.name: type(getattr(self, f.name)) for f in dataclasses.fields(self)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            msg = f"{source}: unknown key(s) {', '.join(unknown)}"
            raise exceptions.InvalidConfigurationError(msg)

        values = {}
        for key, value in data.items():
            values[key] = _coerce(key, value, known[key], source)
        return dataclasses.replace(self, **values)

    def with_overrides(self: t.Self, **flags: t.Any) -> RunConfig:  # noqa: ANN401
        """Apply command line flags; ``None`` means not given."""
        return self.merged({key: value for key, value in flags.items() if value is not None}, source="flags")

    def to_dict(self: t.Self) -> dict[str, t.Any]:
        return dataclasses.asdict(self)

    def write_resolved(self: t.Self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    def domain_spec(self: t.Self, *, shift: float | None = None, seed: int | None = None) -> DomainSpec:
        return DomainSpec(
            vocab_size=self.vocab_size,
            shift=self.shift if shift is None else shift,
            seed=self.seed if seed is None else seed,
            max_len=self.max_len,
        )

    def source_spec(self: t.Self, *, seed: int | None = None) -> DomainSpec:
        return self.domain_spec(shift=self.source_shift, seed=seed)

    def model_shape(self: t.Self) -> ModelShape:
        return ModelShape(
            vocab_size=self.vocab_size,
            embed_dim=self.embed_dim,
            feature_dim=self.feature_dim,
            bottleneck=self.bottleneck,
            k=self.k,
            max_len=self.max_len,
            use_mask=self.use_mask,
        )

    def optimizer_config(self: t.Self) -> OptimizerConfig:
        return OptimizerConfig(
            lr_mask=self.lr_mask,
            lr_encoder=self.lr_encoder,
            lam=self.lam,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )

    def adapt_config(self: t.Self) -> AdaptConfig:
        return AdaptConfig(
            alpha=self.alpha,
            rounds=self.rounds,
            lr_mask=self.adapt_lr_mask,
            lr_encoder=self.adapt_lr_encoder,
            lam=self.lam,
            batch_size=self.batch_size,
            seed=self.seed,
            max_answer_len=self.max_answer_len,
            threads=self.threads,
        )


def _coerce(key: str, value: t.Any, kind: type, source: str) -> t.Any:  # noqa: ANN401
    ok = isinstance(value, bool) if kind is bool else not isinstance(value, bool)
    if kind is int:
        ok = ok and isinstance(value, int)
    elif kind is float:
        ok = ok and isinstance(value, (int, float))
    elif kind is str:
        ok = isinstance(value, str)
    if not ok:
        msg = f"{source}: {key} must be {kind.__name__}, got {value!r}"
        raise exceptions.InvalidConfigurationError(msg)
    return kind(value)


def find_config() -> Path | None:
    """Find the closest config file in the cwd or a parent directory"""
    d = Path.cwd()
    while d != d.parent:
        path = d / CONFIG_FILENAME
        if path.is_file():
            return path
        d = d.parent
    return None


def _pyproject_table() -> tuple[dict[str, t.Any], str]:
    config = find_config()
    if config is None:
        return {}, CONFIG_FILENAME

    with config.open() as f:
        try:
            data = rtoml.load(f)
        except rtoml.TomlParsingError as e:
            msg = f"{config}: invalid toml ({e!s})"
            raise exceptions.InvalidConfigurationError(msg) from e
    return data.get("tool", {}).get("mdaqa", {}), f"{config} [tool.mdaqa]"


def _json_file(path: Path) -> dict[str, t.Any]:
    try:
        with Path(path).open(encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        msg = f"config file {path} not found"
        raise exceptions.InvalidConfigurationError(msg) from e
    except json.JSONDecodeError as e:
        msg = f"{path}: invalid JSON ({e.msg})"
        raise exceptions.InvalidConfigurationError(msg) from e
    if not isinstance(data, dict):
        msg = f"{path}: expected a JSON object"
        raise exceptions.InvalidConfigurationError(msg)
    return data


def _env_threads() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        threads = int(raw)
    except ValueError as e:
        msg = f"{THREADS_ENV} must be a positive integer, got {raw!r}"
        raise exceptions.InvalidConfigurationError(msg) from e
    if threads < 1:
        msg = f"{THREADS_ENV} must be a positive integer, got {raw!r}"
        raise exceptions.InvalidConfigurationError(msg)
    return threads


def load_config(path: Path | None = None) -> RunConfig:
    """Defaults, then ``[tool.mdaqa]``, then the JSON file at ``path``.

    ``MDAQA_THREADS`` fills ``threads`` when neither source sets it.
    """
    table, source = _pyproject_table()
    config = RunConfig().merged(table, source=source)
    explicit = "threads" in table
    if path is not None:
        data = _json_file(path)
        config = config.merged(data, source=str(path))
        explicit = explicit or "threads" in data

    threads = None if explicit else _env_threads()
    if threads is not None:
        config = dataclasses.replace(config, threads=threads)
    if config.threads < 1:
        msg = f"threads must be at least 1, got {config.threads}"
        raise exceptions.InvalidConfigurationError(msg)
    return config
