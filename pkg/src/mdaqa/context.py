from __future__ import annotations

import contextlib
import logging
import traceback
import typing as t
from dataclasses import dataclass, field
from enum import IntEnum

import click
import tabulate

if t.TYPE_CHECKING:
    from collections.abc import Iterable, Iterator, Sequence

QUIET_LOGGERS = ("matplotlib", "PIL")


class Verbosity(IntEnum):
    """Number of ``-v`` flags, named after the most detailed level shown."""

    error = 0
    warning = 1
    info = 2
    debug = 3

    @classmethod
    def clamp(cls: type[Verbosity], count: int) -> Verbosity:
        return cls(min(max(count, cls.error), cls.debug))

    @property
    def log_level(self: t.Self) -> int:
        return logging.getLevelName(self.name.upper())


def setup_logging(verbose: int = 0) -> None:
    """Root logger follows the ``-v`` count; plotting libraries stay silent."""
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(Verbosity.clamp(verbose).log_level)
    for name in QUIET_LOGGERS:
        logging.getLogger(name).disabled = True


@dataclass
class Context:
    """Console reporting shared by commands, training loops and sweeps."""

    verbose: int = field(default=0)
    _indent: int = field(default=0)

    def __post_init__(self: t.Self) -> None:
        setup_logging(self.verbose)

    def _echo(self: t.Self, message: str, *args: t.Any) -> None:  # noqa: ANN401
        message = message % args if args else message
        click.echo(f"{'  ' * self._indent}{message}")

    def _shown(self: t.Self, level: Verbosity) -> bool:
        return self.verbose >= level

    def error(self: t.Self, message: str, *args: t.Any) -> None:  # noqa: ANN401
        """Always shown."""
        self._echo(message, *args)

    def warning(self: t.Self, message: str, *args: t.Any) -> None:  # noqa: ANN401
        if self._shown(Verbosity.warning):
            self._echo(message, *args)

    def info(self: t.Self, message: str, *args: t.Any) -> None:  # noqa: ANN401
        if self._shown(Verbosity.info):
            self._echo(message, *args)

    def debug(self: t.Self, message: str, *args: t.Any) -> None:  # noqa: ANN401
        if self._shown(Verbosity.debug):
            self._echo(message, *args)

    def table(self: t.Self, rows: Iterable[Sequence[t.Any]], headers: Sequence[str], *, floatfmt: str = ".2f") -> None:
        """Always shown, like ``error``."""
        for line in tabulate.tabulate(rows, headers=headers, floatfmt=floatfmt).splitlines():
            self._echo(line)

    @contextlib.contextmanager
    def section(self: t.Self, title: str, *args: t.Any) -> Iterator[None]:  # noqa: ANN401
        """Indent nested output under an info level heading."""
        self.info(title, *args)
        self._indent += 1
        try:
            yield
        finally:
            self._indent -= 1

    def stacktrace(self: t.Self) -> None:
        """The exception being handled, for -vvv."""
        if self._shown(Verbosity.debug):
            # caret-only lines of newer tracebacks are dropped
            lines = traceback.format_exc().splitlines(keepends=True)
            self._echo("".join(line for line in lines if line.strip(" ^~\n")))
