from __future__ import annotations


class MdaqaError(Exception): ...


class ShapeError(MdaqaError, ValueError): ...


class DomainError(MdaqaError, ValueError): ...


class InvalidConfigurationError(MdaqaError): ...


class InputError(MdaqaError, ValueError): ...


class LabelError(MdaqaError, ValueError): ...


class DataError(MdaqaError): ...


class UsageError(MdaqaError, RuntimeError): ...


class PreconditionError(MdaqaError): ...


class JsonlParseError(MdaqaError):
    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class SampleValidationError(MdaqaError):
    def __init__(self, message: str, sample_id: str) -> None:
        super().__init__(f"sample {sample_id!r}: {message}")
        self.sample_id = sample_id


class CheckpointVersionError(MdaqaError): ...


class CheckpointParseError(MdaqaError): ...
