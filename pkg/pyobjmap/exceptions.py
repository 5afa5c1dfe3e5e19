import typing


class ObjMapBaseException(Exception):
    """The base exception for all exceptions"""


class SceneParseException(ObjMapBaseException):
    """Malformed scene file"""


class SceneValidationException(ObjMapBaseException):
    """A scene violates a geometric invariant. Names the offending object."""

    def __init__(self, message: str, object_id: typing.Optional[int] = None) -> None:
        if object_id is not None:
            message = f"object {object_id}: {message}"
        super().__init__(message)
        self.object_id = object_id


class PlacementException(ObjMapBaseException):
    """Objects could not be placed on the desk within the retry limit"""


class DomainException(ObjMapBaseException, ValueError):
    """An argument lies outside the domain of a function"""


class PlaneFitException(ObjMapBaseException):
    """Degenerate input for plane fitting"""


class PoseInitException(ObjMapBaseException):
    """Too few points to initialize a cuboid"""


class SolverException(ObjMapBaseException):
    """The pose solver produced a non-finite cost"""


class ConfigException(ObjMapBaseException):
    """Invalid benchmark configuration"""


class ExplorationException(ObjMapBaseException):
    """An exploration run failed. Carries the step it failed in."""

    def __init__(self, message: str, step: int) -> None:
        super().__init__(f"step {step}: {message}")
        self.step = step
