"""Exception types shared by services, the CLI and the HTTP layer.

Input problems subclass `ValueError` so routers can map them to 400 and the CLI
to exit code 2. Solver non-convergence is never an exception; results carry a
``converged`` flag instead.
"""
from __future__ import annotations

from typing import Optional


class DetectionParseError(ValueError):
    """A detection or track line does not match its declared format."""

    def __init__(self, line: int, message: str) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}")


class FeatureDimensionError(ValueError):
    """A feature vector's length differs from earlier vectors of the same feature id."""

    def __init__(self, feature_id: int, expected: int, got: int, line: Optional[int] = None) -> None:
        self.feature_id = feature_id
        self.expected = expected
        self.got = got
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}feature {feature_id} has dimension {got}, expected {expected}")


class ConfigError(ValueError):
    """Invalid or unknown configuration keys."""


class FrameOrderError(ValueError):
    """Online input went backwards in time."""


class GraphSizeError(ValueError):
    """Graphs (or weights) that must share a node count do not."""


class LossRegistrationError(ValueError):
    """A loss failed the convexity, coincidence or symmetry checks."""


class PipelineStageError(RuntimeError):
    """Failure inside a pipeline run, labelled with the stage it happened in."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")
