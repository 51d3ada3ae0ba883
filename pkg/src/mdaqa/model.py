from __future__ import annotations

import copy
import dataclasses
import typing as t

import numpy as np

from mdaqa import mask as mask_module
from mdaqa.encoder import ToyEncoder
from mdaqa.numkernel import RealMatrix, RealVector, SeededRng, softmax_positions
from mdaqa.qa_task import ModelInput, QASample, build_input

if t.TYPE_CHECKING:
    from mdaqa.encoder import FeatureExtractor
    from mdaqa.mask import MaskCache, MaskModule, ParamGrads


@dataclasses.dataclass(frozen=True)
class ModelShape:
    vocab_size: int = 200
    embed_dim: int = 32
    feature_dim: int = 32
    bottleneck: int = 64
    k: float = mask_module.DEFAULT_K
    max_len: int = 64
    use_mask: bool = True


@dataclasses.dataclass(frozen=True)
class ForwardPass:
    inp: ModelInput
    logits: RealMatrix
    cache: MaskCache

    @property
    def positions(self: t.Self) -> range:
        return range(self.logits.shape[0])

    def probabilities(self: t.Self) -> tuple[RealVector, RealVector]:
        """Start and end distributions over context positions."""
        return (
            softmax_positions(self.logits[:, 0], self.positions),
            softmax_positions(self.logits[:, 1], self.positions),
        )


@dataclasses.dataclass(eq=False)
class QAModel:
    """Feature extractor ``g`` followed by the mask module ``h(M * f(.))``."""

    encoder: FeatureExtractor
    mask: MaskModule
    max_len: int = 64

    @classmethod
    def initialise(cls: type[QAModel], shape: ModelShape, seed: int) -> QAModel:
        rng = SeededRng(seed).stream("init")
        encoder = ToyEncoder.initialise(shape.vocab_size, shape.embed_dim, shape.feature_dim, rng.stream("encoder"))
        module = mask_module.MaskModule.initialise(
            shape.feature_dim,
            shape.bottleneck,
            rng.stream("mask"),
            k=shape.k,
            use_mask=shape.use_mask,
        )
        return cls(encoder=encoder, mask=module, max_len=shape.max_len)

    @property
    def shape(self: t.Self) -> ModelShape:
        enc = self.encoder.hyperparameters()
        return ModelShape(
            vocab_size=enc["vocab_size"],
            embed_dim=enc["embed_dim"],
            feature_dim=enc["output_dim"],
            bottleneck=self.mask.bottleneck,
            k=self.mask.k,
            max_len=self.max_len,
            use_mask=self.mask.use_mask,
        )

    def parameters(self: t.Self) -> dict[str, np.ndarray]:
        """Every trainable tensor keyed ``"<group>.<name>"``; arrays are live views."""
        params = {f"{self.encoder.group}.{name}": value for name, value in self.encoder.parameters().items()}
        params.update({f"{self.mask.group}.{name}": value for name, value in self.mask.parameters().items()})
        return params

    def forward(self: t.Self, sample: QASample) -> ForwardPass:
        inp = build_input(sample, self.max_len)
        features = self.encoder.encode(inp)
        logits, cache = mask_module.forward(self.mask, features)
        return ForwardPass(inp=inp, logits=logits, cache=cache)

    def backward(self: t.Self, fwd: ForwardPass, grad_logits: RealMatrix) -> ParamGrads:
        grads, grad_features = mask_module.backward(self.mask, grad_logits, fwd.cache)
        return grads.merged(self.encoder.backward(fwd.inp, grad_features))

    def clone(self: t.Self) -> QAModel:
        other = copy.deepcopy(self)
        other.mask.touch()
        return other
