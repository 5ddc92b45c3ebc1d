"""Exception types raised across the package."""


class SerdError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SerdError, ValueError):
    """An argument has the wrong shape, range or type."""


class ConvergenceError(SerdError, RuntimeError):
    """A fixed-point solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class DemoDataError(SerdError, ValueError):
    """A demonstration is inconsistent with the MDP or the dynamics model."""

    def __init__(self, message, trajectory=None, step=None):
        where = ""
        if trajectory is not None:
            where = f" [trajectory {trajectory}" + (f", step {step}]" if step is not None else "]")
        super().__init__(message + where)
        self.trajectory = trajectory
        self.step = step


class TrainingError(SerdError, RuntimeError):
    """An inner solve failed during gradient ascent."""

    def __init__(self, message, step, residual):
        super().__init__(f"{message} at optimizer step {step} (solver residual={residual:.3e})")
        self.step = step
        self.residual = residual


class ParseError(SerdError, ValueError):
    """An input file could not be parsed."""
