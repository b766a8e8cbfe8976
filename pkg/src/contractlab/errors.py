"""Exception hierarchy for contractlab.

Every error raised on purpose by the package derives from ``ContractLabError``
so callers (and the CLI) can map failures onto exit codes by type.
"""

from typing import Any, Optional


class ContractLabError(Exception):
    """Base class for all contractlab errors."""


class DomainError(ContractLabError, ValueError):
    """An argument lies outside the documented domain of an operation."""


class UnsupportedModelError(ContractLabError):
    """The model has no computable index or coupling for the requested operation."""


class QuadratureError(ContractLabError):
    """A quadrature rule failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved tolerance {achieved:.3g})")
        self.achieved = achieved


class SimulationError(ContractLabError):
    """A simulated path produced a non-finite state or failed to couple."""

    def __init__(
        self,
        message: str,
        path_index: Optional[int] = None,
        time: Optional[float] = None,
        diagnostic: Optional[dict] = None,
    ):
        where = []
        if path_index is not None:
            where.append(f"path {path_index}")
        if time is not None:
            where.append(f"t={time:.6g}")
        suffix = f" [{', '.join(where)}]" if where else ""
        super().__init__(f"{message}{suffix}")
        self.path_index = path_index
        self.time = time
        self.diagnostic = diagnostic or {}


class HypothesisError(ContractLabError):
    """A check refused to run because the model violates the profile bound."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class ConfigError(ContractLabError):
    """A configuration value is missing or out of range."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
