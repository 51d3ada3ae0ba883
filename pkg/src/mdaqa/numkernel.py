"""Dense numeric kernels shared by every other module.

Matrices and vectors are plain float64 numpy arrays; the helpers here add the
shape and domain checks the rest of the package relies on.
"""

from __future__ import annotations

import typing as t
import zlib

import numpy as np
import numpy.typing as npt

from mdaqa import exceptions

RealMatrix = npt.NDArray[np.float64]
RealVector = npt.NDArray[np.float64]

# PCG64 seeded through SeedSequence; named streams get a crc32 spawn key so
# the "data", "init" and "shuffle" consumers never share state.
RNG_ALGORITHM = "PCG64"


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class SeededRng:
    """Single-owner pseudorandom generator with named child streams."""

    def __init__(self: t.Self, seed: int, *, path: tuple[str, ...] = ()) -> None:
        if seed < 0:
            msg = f"seed must be non-negative, got {seed}"
            raise exceptions.DomainError(msg)
        self.seed = int(seed)
        self.path = path
        sequence = np.random.SeedSequence(self.seed, spawn_key=tuple(_stream_key(p) for p in path))
        self._sequence = sequence
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self: t.Self) -> str:
        return f"SeededRng(seed={self.seed}, stream={'/'.join(self.path) or '-'})"

    def stream(self: t.Self, name: str) -> SeededRng:
        """Independent generator for a named consumer; same name, same sequence."""
        return SeededRng(self.seed, path=(*self.path, name))

    def derive_seed(self: t.Self, name: str) -> int:
        """Stable 63-bit seed for a named sub-experiment."""
        state = np.random.SeedSequence(
            self.seed,
            spawn_key=tuple(_stream_key(p) for p in (*self.path, name)),
        ).generate_state(1, dtype=np.uint64)
        return int(state[0] >> np.uint64(1))

    def integers(self: t.Self, low: int, high: int) -> int:
        return int(self.generator.integers(low, high))

    def choice(self: t.Self, n: int, p: npt.ArrayLike | None = None) -> int:
        return int(self.generator.choice(n, p=p))

    def permutation(self: t.Self, n: int) -> npt.NDArray[np.int64]:
        return self.generator.permutation(n)


def as_matrix(data: npt.ArrayLike) -> RealMatrix:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:  # noqa: PLR2004
        msg = f"expected a 2-d matrix, got shape {arr.shape}"
        raise exceptions.ShapeError(msg)
    return arr


def as_vector(data: npt.ArrayLike) -> RealVector:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 1:
        msg = f"expected a 1-d vector, got shape {arr.shape}"
        raise exceptions.ShapeError(msg)
    return arr


def matmul(a: RealMatrix, b: RealMatrix) -> RealMatrix:
    a_, b_ = as_matrix(a), as_matrix(b)
    if a_.shape[1] != b_.shape[0]:
        msg = f"cannot multiply {a_.shape[0]}x{a_.shape[1]} by {b_.shape[0]}x{b_.shape[1]}"
        raise exceptions.ShapeError(msg)
    return a_ @ b_


def sigmoid_vec(v: npt.ArrayLike) -> RealVector:
    """Logistic function, evaluated without overflow for either sign."""
    x = np.asarray(v, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_positions(logits: npt.ArrayLike, valid: range) -> RealVector:
    """Distribution over sequence positions, zero outside ``valid``."""
    x = as_vector(logits)
    if len(valid) == 0:
        msg = "softmax over an empty position range"
        raise exceptions.DomainError(msg)
    if valid.step != 1 or valid.start < 0 or valid.stop > x.shape[0]:
        msg = f"position range {valid} outside logits of length {x.shape[0]}"
        raise exceptions.DomainError(msg)

    out = np.zeros_like(x)
    window = x[valid.start : valid.stop]
    e = np.exp(window - window.max())
    out[valid.start : valid.stop] = e / e.sum()
    return out


def sample_uniform(rng: SeededRng, lo: float, hi: float, n: int) -> RealVector:
    if not lo < hi:
        msg = f"uniform interval requires lo < hi, got [{lo}, {hi})"
        raise exceptions.DomainError(msg)
    return rng.generator.uniform(lo, hi, size=n)


def uniform_matrix(rng: SeededRng, lo: float, hi: float, rows: int, cols: int) -> RealMatrix:
    return sample_uniform(rng, lo, hi, rows * cols).reshape(rows, cols)
