"""Exception hierarchy shared by every sdflow module.

Interface layers (``cli.py``) translate these into exit codes; core modules
only raise them.
"""

from __future__ import annotations


class SDFlowError(Exception):
    """Base class for all sdflow errors."""


class UsageError(SDFlowError, ValueError):
    """An operation was called with arguments outside its contract."""


class DegenerateInputError(UsageError):
    """Input for which a statistic is undefined (e.g. all points identical)."""


class ConfigError(SDFlowError):
    """An experiment configuration is invalid or internally inconsistent."""


class EvaluationError(SDFlowError):
    """A user-supplied function (score, sampler) failed or misbehaved."""


__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "EvaluationError",
    "SDFlowError",
    "UsageError",
]
