"""
Core value types shared by all modules: the 9-DoF cuboid pose, the pinhole
camera and the desk plane. All of them are immutable.
"""
import math
import typing

import attr
import numpy as np

from pyobjmap.constants import MIN_HALF_EXTENT
from pyobjmap.exceptions import DomainException
from pyobjmap.util import cuboid_corners, euler_to_matrix, wrap_angle


def as_vec3(value: typing.Any) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(3)
    arr.setflags(write=False)
    return arr


def as_angles(value: typing.Any) -> np.ndarray:
    arr = np.array([wrap_angle(float(v)) for v in np.asarray(value, dtype=float).reshape(3)])
    arr.setflags(write=False)
    return arr


def _check_finite(instance: typing.Any, attribute: typing.Any, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise DomainException(f"{attribute.name} must be finite, got {value}")


def _check_extent(instance: typing.Any, attribute: typing.Any, value: np.ndarray) -> None:
    _check_finite(instance, attribute, value)
    if np.any(value < MIN_HALF_EXTENT - 1e-12):
        raise DomainException(f"half-extents must be >= {MIN_HALF_EXTENT} m, got {value}")


@attr.s(slots=True, frozen=True, eq=False)
class ObjectPose:
    """
    9-DoF cuboid state O = {t, theta, s}.
    t:      translation of the cuboid center (meters)
    theta:  (roll, pitch, yaw) in radians, normalized to (-pi, pi]
    s:      half-extents along the cuboid axes (meters)
    """
    t: np.ndarray = attr.ib(converter=as_vec3, validator=_check_finite)
    theta: np.ndarray = attr.ib(converter=as_angles, validator=_check_finite)
    s: np.ndarray = attr.ib(converter=as_vec3, validator=_check_extent)

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "ObjectPose":
        """Build a pose from the 9-vector [t, theta, s], flooring s at 1 mm."""
        x = np.asarray(x, dtype=float)
        return cls(t=x[0:3], theta=x[3:6], s=np.maximum(x[6:9], MIN_HALF_EXTENT))

    @classmethod
    def upright(cls, t: typing.Sequence[float], yaw: float, s: typing.Sequence[float]) -> "ObjectPose":
        return cls(t=t, theta=(0.0, 0.0, yaw), s=s)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.theta, self.s])

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_matrix(self.theta)

    @property
    def yaw(self) -> float:
        return float(self.theta[2])

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.s))

    def to_object(self, points: np.ndarray) -> np.ndarray:
        """World to object frame: T_o^-1 p."""
        return (np.asarray(points, dtype=float) - self.t) @ self.rotation  # type: ignore

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.t  # type: ignore

    def corners(self) -> np.ndarray:
        return cuboid_corners(self.t, self.rotation, self.s)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        q = self.to_object(points)
        return np.all(np.abs(q) <= self.s + tol, axis=-1)  # type: ignore

    def evolve(self, **changes: typing.Any) -> "ObjectPose":
        return attr.evolve(self, **changes)

    def __repr__(self) -> str:
        return (f"ObjectPose(t={np.round(self.t, 4).tolist()}, "
                f"theta={np.round(self.theta, 4).tolist()}, s={np.round(self.s, 4).tolist()})")


def _check_rotation(instance: typing.Any, attribute: typing.Any, value: np.ndarray) -> None:
    if value.shape != (3, 3) or not np.all(np.isfinite(value)):
        raise DomainException("rotation must be a finite 3x3 matrix")
    if abs(np.linalg.det(value) - 1.0) > 1e-9 or not np.allclose(value.T @ value, np.eye(3), atol=1e-9):
        raise DomainException("rotation must be orthonormal with determinant +1")


def as_matrix3(value: typing.Any) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(3, 3)
    arr.setflags(write=False)
    return arr


@attr.s(slots=True, frozen=True, eq=False)
class CameraPose:
    """World-from-camera transform T_c: p_world = rotation @ p_cam + translation."""
    rotation: np.ndarray = attr.ib(converter=as_matrix3, validator=_check_rotation)
    translation: np.ndarray = attr.ib(converter=as_vec3, validator=_check_finite)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """T_c^-1 p for world points of shape (3,) or (N, 3)."""
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation  # type: ignore

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation  # type: ignore

    def __repr__(self) -> str:
        return f"CameraPose(translation={np.round(self.translation, 4).tolist()})"


def _positive(instance: typing.Any, attribute: typing.Any, value: float) -> None:
    if not value > 0:
        raise DomainException(f"{attribute.name} must be positive, got {value}")


@attr.s(slots=True, frozen=True)
class CameraIntrinsics:
    fx: float = attr.ib(default=500.0, converter=float, validator=_positive)
    fy: float = attr.ib(default=500.0, converter=float, validator=_positive)
    cx: float = attr.ib(default=320.0, converter=float, validator=_positive)
    cy: float = attr.ib(default=240.0, converter=float, validator=_positive)
    width: int = attr.ib(default=640, converter=int, validator=_positive)
    height: int = attr.ib(default=480, converter=int, validator=_positive)

    def __attrs_post_init__(self) -> None:
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise DomainException("principal point must lie inside the image")

    def footprint(self, distance: float) -> typing.Tuple[float, float]:
        """Width and height (meters) covered by the image at a given depth."""
        return distance * self.width / self.fx, distance * self.height / self.fy


def _unit_normal(instance: typing.Any, attribute: typing.Any, value: np.ndarray) -> None:
    if abs(float(np.linalg.norm(value)) - 1.0) > 1e-9:
        raise DomainException("plane normal must have unit length")


@attr.s(slots=True, frozen=True, eq=False)
class PlaneModel:
    """Plane n . p = d with unit normal n pointing away from gravity."""
    n: np.ndarray = attr.ib(converter=as_vec3, validator=_unit_normal)
    d: float = attr.ib(converter=float)
    inliers: int = attr.ib(default=3, converter=int)

    def __attrs_post_init__(self) -> None:
        if self.inliers < 3:
            raise DomainException("a plane needs at least 3 inliers")

    @property
    def theta_n(self) -> float:
        """Elevation of the normal above the horizontal (pi/2 for a level desk)."""
        return math.atan2(float(self.n[2]), float(np.hypot(self.n[0], self.n[1])))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.n - self.d  # type: ignore

    def project(self, points: np.ndarray) -> np.ndarray:
        """Orthogonal projection of points onto the plane."""
        points = np.asarray(points, dtype=float)
        return points - np.multiply.outer(self.signed_distance(points), self.n)  # type: ignore

    @classmethod
    def horizontal(cls, height: float) -> "PlaneModel":
        return cls(n=(0.0, 0.0, 1.0), d=height, inliers=3)
