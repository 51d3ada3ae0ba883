from __future__ import annotations

import csv
import typing as t
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

if t.TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Sequence

T = t.TypeVar("T")
R = t.TypeVar("R")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[t.Any]]) -> Path:
    """Header row, comma separated, LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with Path(path).open(encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def sidecar(path: Path, suffix: str) -> Path:
    """``out/model.ckpt`` -> ``out/model.ckpt<suffix>``."""
    path = Path(path)
    return path.with_name(f"{path.name}{suffix}")


def parse_values(text: str, cast: Callable[[str], T]) -> list[T]:
    """Comma separated list, e.g. ``0.1,0.3,0.5``."""
    return [cast(part.strip()) for part in text.split(",") if part.strip()]


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Order preserving map, fanned out over at most ``threads`` workers."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
