import math
import typing

import numpy as np
from scipy.spatial.transform import Rotation

HALF_PI = math.pi / 2.0
QUARTER_PI = math.pi / 4.0

Vector = typing.Union[np.ndarray, typing.Sequence[float]]


def wrap_angle(angle: float) -> float:
    """
    Normalize an angle to (-pi, pi].

    >>> wrap_angle(3 * math.pi / 2)
    -1.5707963267948966
    """
    if -math.pi < angle <= math.pi:
        return float(angle)
    wrapped = (angle + math.pi) % (2.0 * math.pi) - math.pi
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return float(wrapped)


def fold_quarter(angle: typing.Union[float, np.ndarray]) -> typing.Any:
    """
    Fold an angle into [-pi/4, pi/4), treating directions that differ by a
    multiple of 90 degrees as equal. Works on scalars and arrays.
    """
    return (np.asarray(angle) + QUARTER_PI) % HALF_PI - QUARTER_PI


def euler_to_matrix(theta: Vector) -> np.ndarray:
    """Rotation matrix R = Rz(yaw) Ry(pitch) Rx(roll) for theta = (roll, pitch, yaw)."""
    return Rotation.from_euler('xyz', np.asarray(theta, dtype=float)).as_matrix()  # type: ignore


def matrix_to_euler(rotation: np.ndarray) -> np.ndarray:
    """Inverse of euler_to_matrix. Returns (roll, pitch, yaw)."""
    return Rotation.from_matrix(rotation).as_euler('xyz')  # type: ignore


def euler_derivatives(theta: Vector) -> typing.Tuple[np.ndarray, typing.List[np.ndarray]]:
    """
    Rotation matrix and its partial derivatives w.r.t. (roll, pitch, yaw).
    :return: (R, [dR/droll, dR/dpitch, dR/dyaw])
    """
    r, p, y = (float(v) for v in theta)
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)

    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sr, -cr], [0.0, cr, -sr]])
    dry = np.array([[-sp, 0.0, cp], [0.0, 0.0, 0.0], [-cp, 0.0, -sp]])
    drz = np.array([[-sy, -cy, 0.0], [cy, -sy, 0.0], [0.0, 0.0, 0.0]])

    rot = rz @ ry @ rx
    return rot, [rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx]


def yaw_rotation(yaw: float) -> np.ndarray:
    """Rotation about the world z-axis."""
    return Rotation.from_euler('z', yaw).as_matrix()  # type: ignore


def rotation_between(a: Vector, b: Vector) -> np.ndarray:
    """Smallest rotation taking unit vector a onto unit vector b."""
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    axis = np.cross(a, b)
    sin_angle = float(np.linalg.norm(axis))
    cos_angle = float(np.dot(a, b))
    if sin_angle < 1e-12:
        if cos_angle > 0:
            return np.eye(3)
        # Antiparallel: rotate by pi about any axis orthogonal to a
        ortho = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(ortho) < 1e-6:
            ortho = np.cross(a, [0.0, 1.0, 0.0])
        return Rotation.from_rotvec(math.pi * ortho / np.linalg.norm(ortho)).as_matrix()  # type: ignore
    angle = math.atan2(sin_angle, cos_angle)
    return Rotation.from_rotvec(axis / sin_angle * angle).as_matrix()  # type: ignore


def look_at_rotation(eye: Vector, target: Vector) -> np.ndarray:
    """
    World-from-camera rotation for a pinhole camera at `eye` looking at `target`.
    Camera axes: x right, y down (image rows), z forward.
    Straight-down views keep image x aligned with world +x.
    """
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    forward = target - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, [0.0, 0.0, 1.0])
    if np.linalg.norm(right) < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


def rectangle_corners(center: Vector, half_extents: Vector, yaw: float) -> np.ndarray:
    """The four corners (counter-clockwise) of a yaw-rotated rectangle in the xy-plane."""
    cx, cy = float(center[0]), float(center[1])
    hx, hy = float(half_extents[0]), float(half_extents[1])
    local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def box_iou_2d(a: typing.Sequence[float], b: typing.Sequence[float]) -> float:
    """IoU of two axis-aligned pixel rectangles (u_min, v_min, u_max, v_max)."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def cuboid_corners(t: Vector, rotation: np.ndarray, s: Vector) -> np.ndarray:
    """The 8 corners of a cuboid in world coordinates."""
    signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    return (signs * np.asarray(s, dtype=float)) @ rotation.T + np.asarray(t, dtype=float)


def ray_box_hits(origins: np.ndarray, directions: np.ndarray, t: Vector, rotation: np.ndarray,
                 s: Vector, max_dist: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """
    Slab test: does each ray hit the oriented box strictly before `max_dist`?
    :param origins:    (N, 3) or (3,) ray origins in world coordinates
    :param directions: (N, 3) unit directions
    :param max_dist:   (N,) distance along each ray beyond which hits are ignored
    :return: boolean (N,) array
    """
    rt = rotation.T
    o = (np.atleast_2d(origins) - np.asarray(t, dtype=float)) @ rt.T
    d = directions @ rt.T
    s = np.asarray(s, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        inv = 1.0 / d
        t1 = (-s - o) * inv
        t2 = (s - o) * inv
    t_near = np.nanmax(np.minimum(t1, t2), axis=1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=1)
    return (t_near <= t_far) & (t_far > eps) & (t_near < max_dist - eps)  # type: ignore


def ray_cylinder_hits(origins: np.ndarray, directions: np.ndarray, center: Vector, radius: float,
                      half_height: float, max_dist: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Does each ray hit an upright (z-aligned) capped cylinder strictly before `max_dist`?"""
    c = np.asarray(center, dtype=float)
    o = np.atleast_2d(origins) - c
    d = directions
    n = d.shape[0]
    o = np.broadcast_to(o, (n, 3))

    # Side surface: (ox + t dx)^2 + (oy + t dy)^2 = r^2
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
    cc = o[:, 0] ** 2 + o[:, 1] ** 2 - radius ** 2
    disc = b * b - 4.0 * a * cc
    hit = np.zeros(n, dtype=bool)
    ok = (disc >= 0) & (a > 1e-15)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    safe_a = np.where(a > 1e-15, a, 1.0)
    for sign in (-1.0, 1.0):
        tt = (-b + sign * sq) / (2.0 * safe_a)
        z = o[:, 2] + tt * d[:, 2]
        hit |= ok & (tt > eps) & (tt < max_dist - eps) & (np.abs(z) <= half_height)

    # Caps
    with np.errstate(divide='ignore', invalid='ignore'):
        for zc in (-half_height, half_height):
            tt = (zc - o[:, 2]) / d[:, 2]
            x = o[:, 0] + tt * d[:, 0]
            y = o[:, 1] + tt * d[:, 1]
            hit |= np.isfinite(tt) & (tt > eps) & (tt < max_dist - eps) & (x * x + y * y <= radius ** 2)
    return hit
