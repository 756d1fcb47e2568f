"""Semantic exceptions shared across the library.

Callers should be able to branch on failure *kind* without parsing messages,
so each contract violation gets its own class.
"""

from __future__ import annotations


class CbolabError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(CbolabError, ValueError):
    """A scalar/model parameter is outside its documented domain."""


class InvalidInputError(CbolabError, ValueError):
    """Malformed data input (empty ensemble, zero weights, shape mismatch)."""


class ThresholdNotMetError(CbolabError):
    """A drift strength fails a required threshold inequality.

    Carries ``deficit`` = threshold − lambda, i.e. how much drift is missing.
    """

    def __init__(self, message: str, deficit: float):
        super().__init__(message)
        self.deficit = float(deficit)


class UnsupportedObjectiveError(CbolabError):
    """The objective lacks a capability (gradient, Hessian) the call needs."""


class DivergedRunError(CbolabError):
    """A trajectory produced non-finite coordinates.

    Experiments catch this, count the trial as diverged, and continue.
    """

    def __init__(self, message: str, trial: int, step: int):
        super().__init__(message)
        self.trial = int(trial)
        self.step = int(step)


class ConfigError(CbolabError):
    """Configuration file is malformed or violates a strict-mode gate."""
