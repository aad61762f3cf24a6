"""Exception hierarchy shared by every module."""

from __future__ import annotations


class OclabError(Exception):
    """Base class for all laboratory errors."""


class DimensionMismatchError(OclabError, ValueError):
    """Arrays, alphabets or index tables disagree in shape."""


class InvalidDistributionError(OclabError, ValueError):
    """A probability vector is negative, unnormalized or otherwise malformed."""


class InvalidQuantizerError(OclabError, ValueError):
    """A quantizer table violates its index range or level budget."""


class CapExceededError(OclabError):
    """An enumeration or allocation would exceed its configured cap."""


class ConvergenceError(OclabError):
    """An iterative solver hit its iteration limit."""


class InfeasibleError(OclabError):
    """A model has no feasible point."""


class ConfigError(OclabError):
    """An experiment configuration failed validation."""


__all__ = [
    "OclabError",
    "DimensionMismatchError",
    "InvalidDistributionError",
    "InvalidQuantizerError",
    "CapExceededError",
    "ConvergenceError",
    "InfeasibleError",
    "ConfigError",
]
