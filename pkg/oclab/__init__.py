"""Output-constrained randomized quantization laboratory."""

from . import config

__all__ = ["config"]
