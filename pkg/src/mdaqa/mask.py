"""Mask module: bottleneck ``f``, near-binary mask ``M = sigmoid(k N)`` and head ``h``.

Forward per context token ``t``::

    z_t = W_f u_t + b_f
    g_t = M * z_t
    logits_t = W_h g_t + b_h

During adaptation the gradients of ``W_f`` rows, ``b_f`` entries and ``W_h``
columns are scaled by ``1 - M_s`` so kernels active at the end of source
training stay put.
"""

from __future__ import annotations

import dataclasses
import itertools
import typing as t

import numpy as np

from mdaqa import exceptions
from mdaqa.numkernel import RealMatrix, RealVector, SeededRng, sample_uniform, sigmoid_vec, uniform_matrix

DEFAULT_K = 100.0
DEFAULT_ACTIVE_TOLERANCE = 0.01
MASK_INIT_RANGE = (-0.5, 0.5)

_versions = itertools.count()


@dataclasses.dataclass
class ParamGrads:
    """Gradient tensors keyed ``"<group>.<name>"``."""

    tensors: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)

    @classmethod
    def for_group(cls: type[ParamGrads], group: str, tensors: dict[str, np.ndarray]) -> ParamGrads:
        return cls({f"{group}.{name}": value for name, value in tensors.items()})

    def __getitem__(self: t.Self, key: str) -> np.ndarray:
        return self.tensors[key]

    def __contains__(self: t.Self, key: str) -> bool:
        return key in self.tensors

    def __iter__(self: t.Self) -> t.Iterator[str]:
        return iter(self.tensors)

    def items(self: t.Self) -> t.ItemsView[str, np.ndarray]:
        return self.tensors.items()

    def merged(self: t.Self, other: ParamGrads) -> ParamGrads:
        return ParamGrads({**self.tensors, **other.tensors})

    def add_(self: t.Self, other: ParamGrads) -> ParamGrads:
        """Accumulate ``other`` in place."""
        for key, value in other.items():
            if key in self.tensors:
                self.tensors[key] = self.tensors[key] + value
            else:
                self.tensors[key] = value.copy()
        return self

    def scaled(self: t.Self, factor: float) -> ParamGrads:
        return ParamGrads({key: value * factor for key, value in self.items()})

    def copy(self: t.Self) -> ParamGrads:
        return ParamGrads({key: value.copy() for key, value in self.items()})


@dataclasses.dataclass(frozen=True)
class MaskSnapshot:
    """Mask values captured at the end of source training."""

    values: RealVector
    taken_at: str = "end-of-source-training"
    active_tolerance: float = DEFAULT_ACTIVE_TOLERANCE

    def __post_init__(self: t.Self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
            msg = "mask snapshot must be a vector of values in [0, 1]"
            raise exceptions.DomainError(msg)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def complement(self: t.Self) -> RealVector:
        return 1.0 - self.values

    def __eq__(self: t.Self, other: object) -> bool:
        if not isinstance(other, MaskSnapshot):
            return NotImplemented
        return (
            self.taken_at == other.taken_at
            and self.active_tolerance == other.active_tolerance
            and np.array_equal(self.values, other.values)
        )


@dataclasses.dataclass(frozen=True)
class MaskCache:
    features: RealMatrix
    z: RealMatrix
    mask: RealVector
    version: int


@dataclasses.dataclass(eq=False)
class MaskModule:
    N: RealVector
    W_f: RealMatrix
    b_f: RealVector
    W_h: RealMatrix
    b_h: RealVector
    k: float = DEFAULT_K
    use_mask: bool = True
    version: int = dataclasses.field(default_factory=lambda: next(_versions))

    group: t.ClassVar[str] = "mask"

    def __post_init__(self: t.Self) -> None:
        b = self.N.shape[0]
        if self.k <= 0:
            msg = f"mask sharpness k must be positive, got {self.k}"
            raise exceptions.DomainError(msg)
        shapes = {"W_f": (b, self.W_f.shape[1]), "b_f": (b,), "W_h": (2, b), "b_h": (2,)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                msg = f"{name} must have shape {shape}, got {getattr(self, name).shape}"
                raise exceptions.ShapeError(msg)

    @classmethod
    def initialise(
        cls: type[MaskModule],
        input_dim: int,
        bottleneck: int,
        rng: SeededRng,
        *,
        k: float = DEFAULT_K,
        use_mask: bool = True,
    ) -> MaskModule:
        lim_f = 1.0 / np.sqrt(input_dim)
        lim_h = 1.0 / np.sqrt(bottleneck)
        return cls(
            N=sample_uniform(rng, *MASK_INIT_RANGE, bottleneck),
            W_f=uniform_matrix(rng, -lim_f, lim_f, bottleneck, input_dim),
            b_f=np.zeros(bottleneck),
            W_h=uniform_matrix(rng, -lim_h, lim_h, 2, bottleneck),
            b_h=np.zeros(2),
            k=k,
            use_mask=use_mask,
        )

    @property
    def bottleneck(self: t.Self) -> int:
        return self.N.shape[0]

    @property
    def input_dim(self: t.Self) -> int:
        return self.W_f.shape[1]

    def parameters(self: t.Self) -> dict[str, np.ndarray]:
        return {"N": self.N, "W_f": self.W_f, "b_f": self.b_f, "W_h": self.W_h, "b_h": self.b_h}

    def hyperparameters(self: t.Self) -> dict[str, t.Any]:
        return {"input_dim": self.input_dim, "bottleneck": self.bottleneck, "k": self.k, "use_mask": self.use_mask}

    def touch(self: t.Self) -> None:
        """Invalidate caches from earlier forward passes."""
        self.version = next(_versions)


def mask_values(m: MaskModule) -> RealVector:
    if not m.use_mask:
        return np.ones(m.bottleneck)
    return sigmoid_vec(m.k * m.N)


def mask_derivative(m: MaskModule) -> RealVector:
    """dM/dN = k sigmoid(kN) (1 - sigmoid(kN)); zero when the mask is disabled."""
    if not m.use_mask:
        return np.zeros(m.bottleneck)
    s = sigmoid_vec(m.k * m.N)
    return m.k * s * (1.0 - s)


def forward(m: MaskModule, features: RealMatrix) -> tuple[RealMatrix, MaskCache]:
    if features.ndim != 2 or features.shape[1] != m.input_dim:  # noqa: PLR2004
        msg = f"features of shape {features.shape} do not match mask module input width {m.input_dim}"
        raise exceptions.ShapeError(msg)
    mask = mask_values(m)
    z = features @ m.W_f.T + m.b_f
    logits = (z * mask) @ m.W_h.T + m.b_h
    return logits, MaskCache(features=features, z=z, mask=mask, version=m.version)


def backward(m: MaskModule, grad_logits: RealMatrix, cache: MaskCache | None) -> tuple[ParamGrads, RealMatrix]:
    """Data-path gradients; the sparsity term on ``N`` is added by the caller."""
    if cache is None:
        msg = "backward called without a forward cache"
        raise exceptions.UsageError(msg)
    if cache.version != m.version:
        msg = "forward cache is stale, parameters changed since it was computed"
        raise exceptions.UsageError(msg)
    if grad_logits.shape != (cache.z.shape[0], 2):
        msg = f"logit gradient must be {cache.z.shape[0]}x2, got {grad_logits.shape}"
        raise exceptions.ShapeError(msg)

    g = cache.z * cache.mask
    d_g = grad_logits @ m.W_h
    d_z = d_g * cache.mask
    d_mask = (d_g * cache.z).sum(axis=0)

    grads = ParamGrads.for_group(
        m.group,
        {
            "N": d_mask * mask_derivative(m),
            "W_f": d_z.T @ cache.features,
            "b_f": d_z.sum(axis=0),
            "W_h": grad_logits.T @ g,
            "b_h": grad_logits.sum(axis=0),
        },
    )
    return grads, d_z @ m.W_f


def sparsity_grad(m: MaskModule, lam: float) -> RealVector:
    """Gradient of ``lam * sum(M) / b`` with respect to ``N``."""
    return (lam / m.bottleneck) * mask_derivative(m)


def gate_grads(grads: ParamGrads, snap: MaskSnapshot) -> ParamGrads:
    keep = snap.complement
    gated = dict(grads.tensors)
    if "mask.W_f" in grads:
        gated["mask.W_f"] = grads["mask.W_f"] * keep[:, None]
    if "mask.b_f" in grads:
        gated["mask.b_f"] = grads["mask.b_f"] * keep
    if "mask.W_h" in grads:
        gated["mask.W_h"] = grads["mask.W_h"] * keep[None, :]
    return ParamGrads(gated)


def snapshot_mask(m: MaskModule, *, active_tolerance: float = DEFAULT_ACTIVE_TOLERANCE) -> MaskSnapshot:
    return MaskSnapshot(values=mask_values(m).copy(), active_tolerance=active_tolerance)


def active_kernels(snap: MaskSnapshot) -> frozenset[int]:
    return frozenset(int(i) for i in np.flatnonzero(snap.values > 1.0 - snap.active_tolerance))


def active_fraction(m: MaskModule, tolerance: float = DEFAULT_ACTIVE_TOLERANCE) -> float:
    return float(np.mean(mask_values(m) > 1.0 - tolerance))
