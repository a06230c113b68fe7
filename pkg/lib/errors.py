#!/usr/bin/env python3
"""
Exceptions and warning categories for delaymp
"""


class DelayMPError(Exception):
    pass


class ConfigError(DelayMPError, ValueError):
    """Bad or missing configuration value; ``key`` names the offender"""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class GridError(DelayMPError, ValueError):
    pass


class NonPositiveDelay(GridError):
    pass


class NonDivisibleHorizon(GridError):
    pass


class EnsembleMismatch(DelayMPError, ValueError):
    pass


class GridMismatch(DelayMPError, ValueError):
    pass


class NonFiniteState(DelayMPError, ArithmeticError):
    def __init__(self, path, step):
        super().__init__(f"non-finite state on path {path} at step {step}")
        self.path = path
        self.step = step


class IllConditionedRegression(DelayMPError, ArithmeticError):
    pass


class InadmissibleControl(DelayMPError, ValueError):
    pass


class SpikeOutOfRange(DelayMPError, ValueError):
    pass


class InsufficientEpsilons(DelayMPError, ValueError):
    pass


class EmptyGrid(DelayMPError, ValueError):
    pass


class InadmissibleAlternative(InadmissibleControl):
    pass


class KHypothesisNotVerified(UserWarning):
    """K does not vanish (or was not checked); the maximum condition is advisory"""
