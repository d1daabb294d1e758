"""Exception hierarchy for the deautoconvolution library.

Every error carries the process exit code the CLI reports for it, much like an
HTTP error carries its status code.
"""
from typing import Any, Dict, Optional


class DeautoconvError(Exception):
    """Base class for all library errors."""

    exit_code: int = 2

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        if not self.details:
            return self.message
        extra = ", ".join(f"{k}={v}" for k, v in self.details.items())
        return f"{self.message} ({extra})"


class StructuralError(DeautoconvError):
    """Grid specs do not match or a grid lives on the wrong domain."""


class DomainError(DeautoconvError):
    """An argument lies outside the domain of a function."""


class ParameterError(DeautoconvError):
    """Invalid parameter or parameter combination."""


class ArtifactError(DeautoconvError):
    """An input or output file could not be read or written."""


class NumericalError(DeautoconvError):
    """A non-finite value showed up during a computation."""

    exit_code = 3


class SolverError(DeautoconvError):
    """Every solve of a regularization-parameter sweep failed."""

    exit_code = 3


class CheckFailure(DeautoconvError):
    """A property check did not hold."""

    exit_code = 1
