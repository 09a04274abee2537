"""Exception types shared across the engine.

Every error carries a machine-readable ``to_dict`` so that the command line
front-end can emit it verbatim as JSON.
"""


class TscError(Exception):
    """Base class for all engine errors."""

    kind = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        out = {"error": self.kind, "message": self.message}
        for key, val in self.details.items():
            out[key] = val
        return out


class ValidationError(TscError):
    kind = "validation"


class ForbiddenRegionError(TscError):
    """Raised where E - V <= 0 (classically forbidden region)."""

    kind = "forbidden_region"


class ObstacleError(TscError):
    kind = "obstacle"


class ConvergenceError(TscError):
    kind = "convergence"


class ClassJumpError(TscError):
    """A re-solved path landed in a different extremal class."""

    kind = "class_jump"


class FocalPointError(TscError):
    kind = "focal_point"


class GeometryError(TscError):
    """Loss of positive-definiteness or a singular matrix function."""

    kind = "geometry"


class RecordError(TscError):
    kind = "record"


class BudgetError(TscError):
    kind = "budget"
