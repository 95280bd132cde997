"""Exception hierarchy shared by every module of the package."""


class SysIdError(Exception):
    """Base class for all package errors."""


class ParseError(SysIdError):
    """A model or scenario document could not be parsed."""


class TopologyError(SysIdError):
    """The kinematic tree is malformed (cycle, several roots, bad ordering)."""


class DimensionError(SysIdError, ValueError):
    """An array argument has the wrong size for the model."""


class ShapeError(DimensionError):
    """Two tensors that must agree in shape do not."""


class NonPhysicalError(SysIdError, ValueError):
    """Parameters produce a non-physical model, e.g. a non-positive mass."""


class DivergenceError(SysIdError, FloatingPointError):
    """The integrator blew up.

    ``step`` is the control step (1-based) at which the state left the
    finite region; ``iteration`` is set by optimizers that propagate it.
    """

    def __init__(self, message, step=None, iteration=None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration


class NonFiniteGradientError(SysIdError, FloatingPointError):
    """A gradient evaluation produced NaN or inf."""


class TooShortError(SysIdError, ValueError):
    """A source trajectory cannot hold a fragment of the requested horizon."""


class SingularJacobianError(SysIdError, ArithmeticError):
    """The foot-height constraint does not depend on the active joints."""


class NonConvergedError(SysIdError, ArithmeticError):
    """An iterative solve exhausted its iteration budget."""


class FormatError(SysIdError, ValueError):
    """A trajectory file is structurally invalid."""


class ConfigError(SysIdError, ValueError):
    """A scenario configuration is invalid or references missing files."""
