"""Exception hierarchy shared by every togkit module."""

from __future__ import annotations


class TogkitError(Exception):
    """Base class for domain errors (mapped to exit code 1 by the CLI)."""


# geometry
class DegenerateBox(TogkitError, ValueError):
    pass


class NonSquareCrop(TogkitError, ValueError):
    pass


class SideMismatch(TogkitError, ValueError):
    pass


# masks
class ShapeMismatch(TogkitError, ValueError):
    pass


class EmptyFirstOperand(TogkitError, ValueError):
    pass


class EmptyMask(TogkitError, ValueError):
    pass


class MalformedPolygon(TogkitError, ValueError):
    pass


class MaskDecodeError(TogkitError, ValueError):
    pass


# dataset
class SchemaError(TogkitError, ValueError):
    pass


class DanglingReference(TogkitError, ValueError):
    pass


class InvariantViolation(TogkitError, ValueError):
    pass


class UnknownTask(TogkitError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class EmptySceneMask(TogkitError, ValueError):
    pass


class AlignmentFailure(TogkitError):
    pass


# pipeline
class UnknownObject(TogkitError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class UnknownCategory(TogkitError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class EmptyCandidates(TogkitError):
    pass


class MissingAffordance(TogkitError):
    pass


class EmptyRegion(TogkitError):
    pass


class NoGraspInRegion(TogkitError):
    pass


class StageError(TogkitError):
    """Wraps an error raised inside one pipeline stage.

    ``stage`` is one of ``segmentation``, ``recognition``, ``affordance``,
    ``grasp``; ``cause`` is the original exception.
    """

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


# backends
class BackendFailure(TogkitError):
    pass


class UnmappableCrop(BackendFailure):
    pass


class BackendTimeout(BackendFailure):
    pass


class ProtocolError(BackendFailure):
    pass


class ProcessExit(BackendFailure):
    pass


class ConfigError(TogkitError, ValueError):
    pass


# evaluation
class NoGroundTruth(TogkitError, ValueError):
    pass


class EmptyTrials(TogkitError, ValueError):
    pass


class EmptySplit(TogkitError, ValueError):
    pass


class UnknownFormat(TogkitError, ValueError):
    pass
