"""Exception hierarchy."""


class HJHomogError(Exception):
    """Base class for all errors raised by this package."""


# environments
class NonPositiveDiffusion(HJHomogError, ValueError):
    pass


class NonFinite(HJHomogError, ValueError):
    pass


class NotCoercive(HJHomogError, ValueError):
    pass


class BelowGround(HJHomogError, ValueError):
    """The level lies below ``gl(0)``; no stationary solution can exist there."""


# auxiliary ODE
class StepUnderflow(HJHomogError, RuntimeError):
    pass


class NotOrdered(HJHomogError, ValueError):
    pass


class WrongSigns(HJHomogError, ValueError):
    pass


# effective Hamiltonian
class SweepTooCoarse(HJHomogError, RuntimeError):
    pass


class OutOfRange(HJHomogError, ValueError):
    pass


# bridges
class NoGap(HJHomogError, ValueError):
    pass


class NoFiniteExit(HJHomogError, RuntimeError):
    pass


class WrongSideExit(HJHomogError, RuntimeError):
    pass


class InequalityViolation(HJHomogError, AssertionError):
    """A bridge profile failed its piecewise inequality or joint check."""


# PDE
class CflViolation(HJHomogError, ValueError):
    pass


class GradientBlowup(HJHomogError, RuntimeError):
    pass


# random media
class NoTrapping(HJHomogError, ValueError):
    pass


class NonCoalescent(HJHomogError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# driver
class ConfigError(HJHomogError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MismatchedTask(HJHomogError, ValueError):
    pass
