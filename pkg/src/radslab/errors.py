"""Exception types shared across the solvers and the harness."""

from __future__ import annotations


class RadslabError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RadslabError):
    """Invalid configuration file, option value, or inadmissible parameter combination."""


class ConvergenceError(RadslabError):
    """An iterative solver failed to reach its tolerance.

    Carries the residual history so callers can report the failure instead of
    masking it.
    """

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class RangeConditionError(RadslabError):
    """Right-hand side is not in the range of the singular operator (nonzero mean)."""


class ConditioningError(RadslabError):
    """Linear operator is too close to singular (spectral gap below threshold)."""


class KernelNormalizationError(RadslabError):
    """Scattering kernel does not integrate to one over the sphere."""


class ConnectivityError(RadslabError):
    """No strictly positive kernel chain between two quadrature nodes."""


class TruncationError(RadslabError):
    """Domain-truncation acceptance test failed (half-line or series)."""

    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class ExtractionError(RadslabError):
    """Far-field extraction rejected: tail of the layer profile is not flat."""


class DispatchError(RadslabError):
    """Requested (regime, light mode, layer) combination is not admissible."""


class IntegrationError(RadslabError):
    """Time integration failed (step control or implicit stage did not converge)."""
