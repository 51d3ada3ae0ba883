"""JSON checkpoint envelope.

Tensors are stored as ``{"shape": [...], "data_b64": ...}`` where the payload
is base64 of little-endian float64 values, so a save/load round trip is bit
exact.
"""

from __future__ import annotations

import base64
import binascii
import dataclasses
import json
import typing as t
from pathlib import Path

import numpy as np

from mdaqa import exceptions
from mdaqa.encoder import ToyEncoder
from mdaqa.mask import MaskModule, MaskSnapshot
from mdaqa.model import ModelShape, QAModel

FORMAT_VERSION = 1
_DTYPE = "<f8"


@dataclasses.dataclass(eq=False)
class Checkpoint:
    tensors: dict[str, np.ndarray]
    shape: ModelShape
    snapshot: MaskSnapshot | None = None
    optimizer: dict[str, t.Any] | None = None
    rng: dict[str, int] = dataclasses.field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_model(
        cls: type[Checkpoint],
        model: QAModel,
        snapshot: MaskSnapshot | None = None,
        optimizer: t.Any = None,  # noqa: ANN401
        rng: dict[str, int] | None = None,
    ) -> Checkpoint:
        if dataclasses.is_dataclass(optimizer) and not isinstance(optimizer, type):
            optimizer = dataclasses.asdict(optimizer)
        return cls(
            tensors={key: value.copy() for key, value in model.parameters().items()},
            shape=model.shape,
            snapshot=snapshot,
            optimizer=optimizer,
            rng=dict(rng or {}),
        )

    def to_model(self: t.Self) -> QAModel:
        tensors = {key: value.copy() for key, value in self.tensors.items()}
        try:
            encoder = ToyEncoder(E=tensors["encoder.E"], W_e=tensors["encoder.W_e"], b_e=tensors["encoder.b_e"])
            module = MaskModule(
                N=tensors["mask.N"],
                W_f=tensors["mask.W_f"],
                b_f=tensors["mask.b_f"],
                W_h=tensors["mask.W_h"],
                b_h=tensors["mask.b_h"],
                k=self.shape.k,
                use_mask=self.shape.use_mask,
            )
        except KeyError as e:
            msg = f"checkpoint is missing tensor {e!s}"
            raise exceptions.CheckpointParseError(msg) from e
        return QAModel(encoder=encoder, mask=module, max_len=self.shape.max_len)


def _encode_tensor(value: np.ndarray) -> dict[str, t.Any]:
    data = np.ascontiguousarray(value, dtype=_DTYPE).tobytes()
    return {"shape": list(value.shape), "data_b64": base64.b64encode(data).decode("ascii")}


def _decode_tensor(name: str, obj: t.Any) -> np.ndarray:  # noqa: ANN401
    try:
        shape = tuple(int(d) for d in obj["shape"])
        raw = base64.b64decode(obj["data_b64"], validate=True)
    except (KeyError, TypeError, ValueError, binascii.Error) as e:
        msg = f"tensor {name!r} is corrupt: {e!s}"
        raise exceptions.CheckpointParseError(msg) from e

    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) != count * 8:
        msg = f"tensor {name!r} holds {len(raw)} bytes, expected {count * 8} for shape {shape}"
        raise exceptions.CheckpointParseError(msg)
    return np.frombuffer(raw, dtype=_DTYPE).astype(np.float64).reshape(shape)


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    snapshot = None
    if ckpt.snapshot is not None:
        snapshot = {
            "values": _encode_tensor(ckpt.snapshot.values),
            "taken_at": ckpt.snapshot.taken_at,
            "active_tolerance": ckpt.snapshot.active_tolerance,
        }
    envelope = {
        "format_version": ckpt.format_version,
        "model": dataclasses.asdict(ckpt.shape),
        "tensors": {key: _encode_tensor(value) for key, value in sorted(ckpt.tensors.items())},
        "snapshot": snapshot,
        "optimizer": ckpt.optimizer,
        "rng": ckpt.rng,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        json.dump(envelope, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    try:
        with Path(path).open(encoding="utf-8") as f:
            envelope = json.load(f)
    except json.JSONDecodeError as e:
        msg = f"{Path(path).name}: not a checkpoint ({e.msg})"
        raise exceptions.CheckpointParseError(msg) from e

    if not isinstance(envelope, dict):
        msg = f"{Path(path).name}: not a checkpoint envelope"
        raise exceptions.CheckpointParseError(msg)
    version = envelope.get("format_version")
    if version != FORMAT_VERSION:
        msg = f"{Path(path).name}: checkpoint format version {version!r} is incompatible with {FORMAT_VERSION}"
        raise exceptions.CheckpointVersionError(msg)

    try:
        shape = ModelShape(**envelope["model"])
        tensors = {name: _decode_tensor(name, obj) for name, obj in envelope["tensors"].items()}
        snapshot = None
        if envelope.get("snapshot") is not None:
            raw = envelope["snapshot"]
            snapshot = MaskSnapshot(
                values=_decode_tensor("snapshot", raw["values"]),
                taken_at=raw["taken_at"],
                active_tolerance=raw["active_tolerance"],
            )
    except (KeyError, TypeError) as e:
        msg = f"{Path(path).name}: malformed checkpoint ({e!s})"
        raise exceptions.CheckpointParseError(msg) from e

    return Checkpoint(
        tensors=tensors,
        shape=shape,
        snapshot=snapshot,
        optimizer=envelope.get("optimizer"),
        rng=envelope.get("rng") or {},
        format_version=version,
    )
