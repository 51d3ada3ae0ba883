"""Feature extractor interface and the reference toy encoder.

The toy encoder conditions every context token on the mean question
embedding::

    u_t = tanh(W_e . [E[p_t] ; mean_i E[q_i]] + b_e)
"""

from __future__ import annotations

import dataclasses
import typing as t

import numpy as np

from mdaqa import exceptions
from mdaqa.mask import ParamGrads
from mdaqa.numkernel import RealMatrix, RealVector, SeededRng, sample_uniform, uniform_matrix

if t.TYPE_CHECKING:
    from mdaqa.qa_task import ModelInput

INIT_SCALE = 0.1


@t.runtime_checkable
class FeatureExtractor(t.Protocol):
    """The ``g`` stage: packed input to one feature row per context token."""

    group: t.ClassVar[str]

    @property
    def output_dim(self: t.Self) -> int: ...

    def encode(self: t.Self, inp: ModelInput) -> RealMatrix: ...

    def backward(self: t.Self, inp: ModelInput, grad_features: RealMatrix) -> ParamGrads: ...

    def parameters(self: t.Self) -> dict[str, np.ndarray]: ...

    def hyperparameters(self: t.Self) -> dict[str, int]: ...


@dataclasses.dataclass(eq=False)
class ToyEncoder:
    E: RealMatrix
    W_e: RealMatrix
    b_e: RealVector

    group: t.ClassVar[str] = "encoder"

    def __post_init__(self: t.Self) -> None:
        d = self.E.shape[1]
        if self.W_e.shape != (self.b_e.shape[0], 2 * d):
            msg = f"W_e must be {self.b_e.shape[0]}x{2 * d}, got {self.W_e.shape[0]}x{self.W_e.shape[1]}"
            raise exceptions.ShapeError(msg)

    @classmethod
    def initialise(
        cls: type[ToyEncoder],
        vocab_size: int,
        embed_dim: int,
        output_dim: int,
        rng: SeededRng,
    ) -> ToyEncoder:
        return cls(
            E=uniform_matrix(rng, -INIT_SCALE, INIT_SCALE, vocab_size, embed_dim),
            W_e=uniform_matrix(rng, -INIT_SCALE, INIT_SCALE, output_dim, 2 * embed_dim),
            b_e=sample_uniform(rng, -INIT_SCALE, INIT_SCALE, output_dim),
        )

    @property
    def vocab_size(self: t.Self) -> int:
        return self.E.shape[0]

    @property
    def embed_dim(self: t.Self) -> int:
        return self.E.shape[1]

    @property
    def output_dim(self: t.Self) -> int:
        return self.W_e.shape[0]

    def parameters(self: t.Self) -> dict[str, np.ndarray]:
        return {"E": self.E, "W_e": self.W_e, "b_e": self.b_e}

    def hyperparameters(self: t.Self) -> dict[str, int]:
        return {"vocab_size": self.vocab_size, "embed_dim": self.embed_dim, "output_dim": self.output_dim}

    def _token_ids(self: t.Self, inp: ModelInput) -> tuple[np.ndarray, np.ndarray]:
        ctx = np.asarray(inp.context_ids, dtype=np.int64)
        question = np.asarray(inp.question_ids, dtype=np.int64)
        for ids in (ctx, question):
            if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
                msg = f"token id outside vocabulary of size {self.vocab_size}"
                raise exceptions.InputError(msg)
        return ctx, question

    def _stacked(self: t.Self, ctx: np.ndarray, question: np.ndarray) -> RealMatrix:
        q_bar = self.E[question].mean(axis=0)
        return np.hstack([self.E[ctx], np.broadcast_to(q_bar, (ctx.shape[0], self.embed_dim))])

    def encode(self: t.Self, inp: ModelInput) -> RealMatrix:
        ctx, question = self._token_ids(inp)
        x = self._stacked(ctx, question)
        return np.tanh(x @ self.W_e.T + self.b_e)

    def backward(self: t.Self, inp: ModelInput, grad_features: RealMatrix) -> ParamGrads:
        ctx, question = self._token_ids(inp)
        if grad_features.shape != (ctx.shape[0], self.output_dim):
            msg = f"feature gradient must be {ctx.shape[0]}x{self.output_dim}, got {grad_features.shape}"
            raise exceptions.ShapeError(msg)

        x = self._stacked(ctx, question)
        u = np.tanh(x @ self.W_e.T + self.b_e)
        d_h = grad_features * (1.0 - u**2)
        d_x = d_h @ self.W_e

        d_e = np.zeros_like(self.E)
        np.add.at(d_e, ctx, d_x[:, : self.embed_dim])
        d_q = d_x[:, self.embed_dim :].sum(axis=0) / question.shape[0]
        np.add.at(d_e, question, np.broadcast_to(d_q, (question.shape[0], self.embed_dim)))

        return ParamGrads.for_group(self.group, {"E": d_e, "W_e": d_h.T @ x, "b_e": d_h.sum(axis=0)})


def encode(enc: FeatureExtractor, inp: ModelInput) -> RealMatrix:
    return enc.encode(inp)


def encoder_backward(enc: FeatureExtractor, inp: ModelInput, grad_features: RealMatrix) -> ParamGrads:
    return enc.backward(inp, grad_features)
