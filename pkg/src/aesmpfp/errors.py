"""Exception types shared across the package."""


class AesMpfpError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(AesMpfpError, ValueError):
    pass


class NonFiniteValue(AesMpfpError, FloatingPointError):
    """Raised when a forward value, gradient or parameter block stops being finite.

    ``where`` names the operation or parameter block that produced it so a
    training abort can point at the culprit.
    """

    def __init__(self, where, detail=""):
        self.where = where
        msg = f"non-finite value in {where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SpawnInfeasible(AesMpfpError, RuntimeError):
    pass


class SteppedAfterDone(AesMpfpError, RuntimeError):
    pass


class ZeroVector(AesMpfpError, ValueError):
    pass


class DegenerateDensity(AesMpfpError, ArithmeticError):
    pass


class EmptyTree(AesMpfpError, LookupError):
    pass


class ConfigError(AesMpfpError, ValueError):
    pass


class CheckpointError(AesMpfpError, ValueError):
    pass
