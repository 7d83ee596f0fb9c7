"""Leak detection and explanation on water distribution networks.

Thin package over the compiled ``_core`` extension; see ``leakgnn --help``
for the equivalent command-line interface.
"""

from ._core import (
    ConfigError,
    Error,
    FormatError,
    __version__,
    evaluate,
    explain,
    fuzzy_memberships,
    synth,
    train,
    window_stats,
)

__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "__version__",
    "evaluate",
    "explain",
    "fuzzy_memberships",
    "synth",
    "train",
    "window_stats",
]
