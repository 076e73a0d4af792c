"""Error hierarchy shared by the library, the CLI and the tool server."""
from __future__ import annotations

from typing import Any, Dict, Optional


class RadialPoseError(Exception):
    """Base class for every error raised by radialpose."""

    code = "radialpose_error"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form used on stderr and in tool replies"""
        payload: Dict[str, Any] = {"error": self.code, "message": self.message}
        payload.update(self.details)
        return payload


class ArgumentError(RadialPoseError, ValueError):
    code = "argument_error"


class DegenerateInputError(RadialPoseError, ValueError):
    code = "degenerate_input"


class EmptyCloudError(RadialPoseError, ValueError):
    code = "empty_cloud"


class ResourceError(RadialPoseError):
    code = "resource_limit"


class EmptyAccumulatorError(RadialPoseError):
    code = "empty_accumulator"


class DivergenceError(RadialPoseError, ArithmeticError):
    """Raised when gradient descent produces a non-finite loss."""

    code = "divergence"

    def __init__(self, message: str, step: int):
        super().__init__(message, step=step)
        self.step = step


class PipelineError(RadialPoseError):
    code = "pipeline_error"


class DegenerateSceneError(RadialPoseError):
    code = "degenerate_scene"


class PlyParseError(RadialPoseError):
    code = "ply_parse_error"

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}", line=line)
        self.line = line


class ConfigError(RadialPoseError, ValueError):
    code = "config_error"
