"""Exception types raised by misdyn."""

import numpy as np


class MisdynError(Exception):
    """Base class for all package errors."""


class IntegrationError(MisdynError, ArithmeticError):
    """The integrated state became non-finite."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class IllConditionedError(MisdynError, np.linalg.LinAlgError):
    """A Cholesky factorization failed even after jitter escalation."""

    def __init__(self, message, jitter=None):
        super().__init__(message)
        self.jitter = jitter


class ModeError(MisdynError, ValueError):
    """An operation was called in a mode the inputs do not support."""


class DesignSizeError(MisdynError, ValueError):
    """Exhaustive enumeration would exceed the configured guard."""


class UnsupportedKernelError(MisdynError, ValueError):
    """The kernel family is not supported by the requested operation."""
