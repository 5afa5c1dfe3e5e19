"""
9-DoF cuboid pose estimation.

The object pose O = {t, theta, s} is found by minimizing weighted error
terms jointly with Levenberg-Marquardt:

    pos      projection of t into each frame vs. the 2D bounding box center,
             in focal-length units
    scale    distance of points outside the cube (zero for points inside)
    surface  distance of points inside the cube to its nearest face
    yaw      yaw vs. detected line directions, modulo 90 degrees
    rp       cube z-axis vs. the desk plane normal
    contact  height of the cube's bottom face above the desk plane

scale and surface together pull the faces onto the observed surface; contact
keeps the unobserved bottom face on the desk.
"""
import logging
import math
import typing

import attr
import numpy as np

from pyobjmap.constants import MIN_HALF_EXTENT
from pyobjmap.exceptions import PlaneFitException, PoseInitException, SolverException
from pyobjmap.obj_types import CameraIntrinsics, CameraPose, ObjectPose, PlaneModel
from pyobjmap.sensor import Detection, LineFeature, pixel_ray, project_points
from pyobjmap.util import euler_derivatives, fold_quarter, matrix_to_euler, rotation_between, wrap_angle, \
    yaw_rotation

logger = logging.getLogger(__name__)

MIN_INIT_POINTS = 10
YAW_BIN = math.radians(5.0)
TOP_PERCENTILE = 98.0

__all__ = [
    'ObservationSlice',
    'ResidualBundle',
    'SolverOptions',
    'SolveResult',
    'CuboidProblem',
    'fit_desk_plane',
    'init_pose',
    'lift_line_yaw',
    'residuals',
    'optimize_pose',
]


@attr.s(slots=True, frozen=True, eq=False)
class ObservationSlice:
    """
    Everything one frame contributes to the pose of one object.
    line_yaws are the detected image lines lifted onto the desk plane (radians).
    """
    camera: CameraPose = attr.ib()
    intrinsics: CameraIntrinsics = attr.ib()
    center: np.ndarray = attr.ib(converter=lambda v: np.asarray(v, dtype=float).reshape(2))
    points: np.ndarray = attr.ib(converter=lambda v: np.asarray(v, dtype=float).reshape(-1, 3))
    line_yaws: typing.Tuple[float, ...] = attr.ib(converter=lambda v: tuple(float(x) for x in v), factory=tuple)

    @classmethod
    def from_detection(cls, det: Detection, camera: CameraPose, intrinsics: CameraIntrinsics,
                       plane: PlaneModel) -> "ObservationSlice":
        yaws: typing.List[float] = []
        if det.lines and len(det.points_world):
            top = float(np.percentile(plane.signed_distance(det.points_world), TOP_PERCENTILE))
            for line in det.lines:
                yaw = lift_line_yaw(line, camera, intrinsics, plane, top)
                if yaw is not None:
                    yaws.append(yaw)
        return cls(camera=camera, intrinsics=intrinsics, center=det.center, points=det.points_world, line_yaws=yaws)


def _finite(instance: typing.Any, attribute: typing.Any, value: typing.Any) -> None:
    if not np.all(np.isfinite(np.asarray(value, dtype=float))):
        raise SolverException(f"residual term {attribute.name} is not finite")


@attr.s(slots=True, frozen=True, eq=False)
class ResidualBundle:
    """
    Unweighted residuals of one pose against a set of frames.
    `cost` is the objective optimize_pose minimizes: half the squared norm of the weighted residual vector.
    """
    r_pos: np.ndarray = attr.ib(validator=_finite)
    r_scale: np.ndarray = attr.ib(validator=_finite)
    r_yaw: np.ndarray = attr.ib(validator=_finite)
    r_rp: np.ndarray = attr.ib(validator=_finite)
    weights: typing.Tuple[float, float, float, float] = attr.ib()
    cost: float = attr.ib(validator=_finite)
    r_surface: np.ndarray = attr.ib(validator=_finite, factory=lambda: np.zeros(0))
    r_contact: float = attr.ib(default=0.0, validator=_finite)
    skipped_frames: int = attr.ib(default=0)

    @property
    def scale_total(self) -> float:
        return float(np.sum(self.r_scale))


def _positive(instance: typing.Any, attribute: typing.Any, value: typing.Any) -> None:
    if not value > 0:
        raise SolverException(f"{attribute.name} must be positive, got {value}")


def _nonnegative(instance: typing.Any, attribute: typing.Any, value: typing.Any) -> None:
    if not value >= 0:
        raise SolverException(f"{attribute.name} must not be negative, got {value}")


def _weights(instance: typing.Any, attribute: typing.Any, value: typing.Tuple[float, ...]) -> None:
    if len(value) != 4 or any(w < 0 for w in value):
        raise SolverException("weights must be four nonnegative numbers (pos, scale, yaw, rp)")


@attr.s(slots=True, frozen=True)
class SolverOptions:
    max_iters: int = attr.ib(default=50, validator=_positive)
    damping: float = attr.ib(default=1e-3, validator=_positive)
    step_tol: float = attr.ib(default=1e-8, validator=_positive)
    cost_tol: float = attr.ib(default=1e-10, validator=_positive)
    weights: typing.Tuple[float, float, float, float] = attr.ib(
        default=(1.0, 100.0, 10.0, 10.0), converter=lambda v: tuple(float(x) for x in v), validator=_weights)
    surface_weight: float = attr.ib(default=100.0, converter=float, validator=_nonnegative)
    contact_weight: float = attr.ib(default=1000.0, converter=float, validator=_nonnegative)
    analytic_jacobian: bool = attr.ib(default=False)
    jacobian_step: float = attr.ib(default=1e-6, validator=_positive)
    # The scale term is evaluated on at most this many points (evenly strided)
    max_points: int = attr.ib(default=2000, validator=_positive)


@attr.s(slots=True, frozen=True, eq=False)
class SolveResult:
    pose: ObjectPose = attr.ib()
    cost: float = attr.ib()
    iterations: int = attr.ib()
    converged: bool = attr.ib()
    skipped_frames: int = attr.ib(default=0)
    # (iteration, cost, damping) after every accepted step, starting with the initial cost
    trace: typing.Tuple[typing.Tuple[int, float, float], ...] = attr.ib(converter=tuple, factory=tuple)


def fit_desk_plane(points: np.ndarray, seed: int = 0, iters: int = 200, inlier_tol: float = 0.005,
                   viewpoint: typing.Optional[np.ndarray] = None) -> PlaneModel:
    """
    RANSAC plane fit followed by a least-squares refinement on the inliers.
    The normal points towards `viewpoint` when given, otherwise towards +z.

    :raises PlaneFitException: fewer than 3 points or all points collinear
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 3:
        raise PlaneFitException(f"need at least 3 points, got {len(points)}")
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] < 1e-12 or sv[1] < 1e-9 * sv[0]:
        raise PlaneFitException("points are collinear")

    rng = np.random.default_rng(seed)
    best_mask: typing.Optional[np.ndarray] = None
    best_count = -1
    for _ in range(iters):
        sample = points[rng.choice(len(points), size=3, replace=False)]
        normal = np.cross(sample[1] - sample[0], sample[2] - sample[0])
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        mask = np.abs((points - sample[0]) @ normal) < inlier_tol
        count = int(mask.sum())
        if count > best_count:
            best_mask, best_count = mask, count
    if best_mask is None or best_count < 3:
        raise PlaneFitException("no plane hypothesis reached 3 inliers")

    inliers = points[best_mask]
    centroid = inliers.mean(axis=0)
    _, _, vt = np.linalg.svd(inliers - centroid)
    normal = vt[2] / np.linalg.norm(vt[2])
    toward = np.array([0.0, 0.0, 1.0]) if viewpoint is None else np.asarray(viewpoint, dtype=float) - centroid
    if float(normal @ toward) < 0:
        normal = -normal
    logger.debug("desk plane fit: %d/%d inliers", best_count, len(points))
    return PlaneModel(n=normal, d=float(normal @ centroid), inliers=best_count)


def _plane_frame(plane: PlaneModel) -> np.ndarray:
    """Rotation whose z-axis is the plane normal and whose x-axis is as close to world x as possible."""
    return rotation_between([0.0, 0.0, 1.0], plane.n)


def lift_line_yaw(line: LineFeature, camera: CameraPose, intrinsics: CameraIntrinsics, plane: PlaneModel,
                  height: float) -> typing.Optional[float]:
    """
    Yaw of an image line segment lifted onto the plane `height` above the desk.
    Returns None if either endpoint ray misses that plane.
    """
    offset = plane.d + height
    ends = []
    for pixel in (line.start, line.end):
        ray = pixel_ray(intrinsics, camera, pixel)
        denom = float(ray @ plane.n)
        if abs(denom) < 1e-12:
            return None
        depth = (offset - float(camera.translation @ plane.n)) / denom
        if depth <= 0:
            return None
        ends.append(camera.translation + depth * ray)
    direction = _plane_frame(plane).T @ (ends[1] - ends[0])
    if math.hypot(direction[0], direction[1]) < 1e-12:
        return None
    return math.atan2(float(direction[1]), float(direction[0]))


def dominant_yaw(line_yaws: typing.Sequence[float]) -> float:
    """
    Mode of the line yaws folded into [-45, 45) degrees, using 5 degree bins.
    The mode is refined by the circular mean (period 90 degrees) of its bin and neighbours.
    """
    if not line_yaws:
        return 0.0
    folded = fold_quarter(np.asarray(line_yaws, dtype=float))
    n_bins = int(round((math.pi / 2.0) / YAW_BIN))
    bins = np.floor((folded + math.pi / 4.0) / YAW_BIN).astype(int) % n_bins
    counts = np.bincount(bins, minlength=n_bins)
    mode = int(np.argmax(counts))
    near = np.isin(bins, [(mode - 1) % n_bins, mode, (mode + 1) % n_bins])
    phase = np.exp(4j * folded[near])
    return float(fold_quarter(np.angle(phase.mean()) / 4.0))


def init_pose(points: np.ndarray, plane: PlaneModel, line_yaws: typing.Sequence[float] = ()) -> ObjectPose:
    """
    Fit a tight cube to a point cloud resting on the plane.
    The cube's z-axis is the plane normal, its yaw the dominant line direction
    (0 without lines), and its extents those of the yaw-aligned bounding box.
    The center is placed so that the bottom face touches the plane.

    :raises PoseInitException: fewer than 10 points
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < MIN_INIT_POINTS:
        raise PoseInitException(f"need at least {MIN_INIT_POINTS} points to initialize a pose, got {len(points)}")
    yaw = dominant_yaw(line_yaws)
    rot = _plane_frame(plane) @ yaw_rotation(yaw)
    origin = plane.project(points.mean(axis=0))
    q = (points - origin) @ rot
    lo, hi = q.min(axis=0), q.max(axis=0)
    s = np.maximum((hi - lo) / 2.0, MIN_HALF_EXTENT)
    center_q = np.array([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, s[2]])
    t = origin + rot @ center_q
    return ObjectPose(t=t, theta=matrix_to_euler(rot), s=s)


def _stack_points(obs_set: typing.Sequence[ObservationSlice], limit: int) -> np.ndarray:
    if not obs_set:
        return np.zeros((0, 3))
    points = np.vstack([sl.points for sl in obs_set])
    if len(points) > limit:
        points = points[np.linspace(0, len(points) - 1, limit).astype(int)]
    return points  # type: ignore


class CuboidProblem:
    """
    Stacked weighted residual vector of the joint pose problem and its Jacobian.
    The parameter vector is x = [t, theta, s]; the rows are, in order,
    pos (2 per frame), scale (3 per point), surface (1 per point), yaw (1 per line), rp (2), contact (1).
    Frames where the object center is behind the camera at construction time are left out.
    """

    def __init__(self, init: ObjectPose, obs_set: typing.Sequence[ObservationSlice], plane: PlaneModel,
                 opts: SolverOptions = SolverOptions(), points: typing.Optional[np.ndarray] = None) -> None:
        self.plane = plane
        self.weights = opts.weights
        self.surface_weight = opts.surface_weight
        self.contact_weight = opts.contact_weight
        self.frames: typing.List[ObservationSlice] = []
        self.skipped_frames = 0
        for sl in obs_set:
            if sl.camera.to_camera(init.t)[2] > 0:
                self.frames.append(sl)
            else:
                self.skipped_frames += 1
        if self.skipped_frames:
            logger.debug("%d frame(s) see the object center behind the camera", self.skipped_frames)
        if points is None:
            self.points = _stack_points(obs_set, opts.max_points)
        else:
            points = np.asarray(points, dtype=float).reshape(-1, 3)
            if len(points) > opts.max_points:
                points = points[np.linspace(0, len(points) - 1, opts.max_points).astype(int)]
            self.points = points
        self.line_yaws = np.array([y for sl in obs_set for y in sl.line_yaws], dtype=float)

    @property
    def size(self) -> int:
        return 2 * len(self.frames) + 4 * len(self.points) + len(self.line_yaws) + 3

    def _pos(self, t: np.ndarray) -> np.ndarray:
        # Frames where t has moved behind the camera contribute zeros
        out = np.zeros(2 * len(self.frames))
        for i, sl in enumerate(self.frames):
            uv, valid = project_points(sl.intrinsics, sl.camera, t[None, :])
            if valid[0]:
                focal = np.array([sl.intrinsics.fx, sl.intrinsics.fy])
                out[2 * i:2 * i + 2] = (uv[0] - sl.center) / focal
        return out

    def _normal_in_object(self, rot: np.ndarray) -> np.ndarray:
        return rot.T @ self.plane.n  # type: ignore

    def contact(self, t: np.ndarray, rot: np.ndarray, s: np.ndarray) -> float:
        """Signed height of the bottom face center above the plane."""
        n = self.plane.n
        return float(n @ t - self.plane.d - s[2] * (n @ rot[:, 2]))

    @staticmethod
    def inside_depth(q: np.ndarray, s: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Per point (object frame), the distance to the nearest face if the point lies inside the cube, else 0.
        Also returns the axis of that face and the inside mask.
        """
        gap = s - np.abs(q)
        axis = np.argmin(gap, axis=1)
        depth = gap[np.arange(len(q)), axis]
        inside = depth > 0
        return np.where(inside, depth, 0.0), axis, inside

    def residual_vector(self, x: np.ndarray) -> np.ndarray:
        t, theta, s = x[0:3], x[3:6], x[6:9]
        rot, _ = euler_derivatives(theta)
        w_pos, w_scale, w_yaw, w_rp = self.weights
        q = (self.points - t) @ rot
        scale = np.maximum(np.abs(q) - s, 0.0).ravel()
        surface, _, _ = self.inside_depth(q, s)
        yaw = fold_quarter(theta[2] - self.line_yaws) if len(self.line_yaws) else np.zeros(0)
        m = self._normal_in_object(rot)
        rp = np.array([math.atan2(m[1], m[2]), math.asin(float(np.clip(m[0], -1.0, 1.0)))])
        return np.concatenate([w_pos * self._pos(t), w_scale * scale, self.surface_weight * surface,
                               w_yaw * yaw, w_rp * rp, [self.contact_weight * self.contact(t, rot, s)]])

    def cost(self, x: np.ndarray) -> float:
        r = self.residual_vector(x)
        return 0.5 * float(r @ r)

    def numeric_jacobian(self, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
        jac = np.zeros((self.size, 9))
        for k in range(9):
            dx = np.zeros(9)
            dx[k] = step
            jac[:, k] = (self.residual_vector(x + dx) - self.residual_vector(x - dx)) / (2.0 * step)
        return jac

    def analytic_jacobian(self, x: np.ndarray) -> np.ndarray:
        t, theta, s = x[0:3], x[3:6], x[6:9]
        rot, d_rot = euler_derivatives(theta)
        w_pos, w_scale, w_yaw, w_rp = self.weights
        jac = np.zeros((self.size, 9))
        row = 0

        for sl in self.frames:
            intr = sl.intrinsics
            pc = sl.camera.to_camera(t)
            z = pc[2]
            if z > 0:
                d_uv = np.array([[1.0 / z, 0.0, -pc[0] / z ** 2],
                                 [0.0, 1.0 / z, -pc[1] / z ** 2]])
                jac[row:row + 2, 0:3] = w_pos * d_uv @ sl.camera.rotation.T
            row += 2

        n_pts = len(self.points)
        if n_pts:
            rel = self.points - t
            q = rel @ rot
            outside = (np.abs(q) - s) > 0
            sign = np.sign(q) * outside
            # d q_k / d t = -R[:, k];  d q_k / d theta_j = dR_j[:, k] . rel
            block = np.zeros((n_pts, 3, 9))
            for k in range(3):
                block[:, k, 0:3] = -sign[:, k, None] * rot[:, k][None, :]
                for j in range(3):
                    block[:, k, 3 + j] = sign[:, k] * (rel @ d_rot[j][:, k])
                block[:, k, 6 + k] = -outside[:, k].astype(float)
            jac[row:row + 3 * n_pts] = w_scale * block.reshape(3 * n_pts, 9)
            row += 3 * n_pts

            # depth = s_a - |q_a| along the nearest face axis a
            _, axis, inside = self.inside_depth(q, s)
            idx = np.arange(n_pts)
            face_sign = np.sign(q[idx, axis]) * inside
            surf = np.zeros((n_pts, 9))
            surf[:, 0:3] = face_sign[:, None] * rot[:, axis].T
            for j in range(3):
                surf[:, 3 + j] = -face_sign * np.einsum('ij,ji->i', rel, d_rot[j][:, axis])
            surf[idx, 6 + axis] = inside.astype(float)
            jac[row:row + n_pts] = self.surface_weight * surf
            row += n_pts

        n_lines = len(self.line_yaws)
        jac[row:row + n_lines, 5] = w_yaw
        row += n_lines

        m = self._normal_in_object(rot)
        dm = [dr.T @ self.plane.n for dr in d_rot]
        denom = m[1] ** 2 + m[2] ** 2
        root = math.sqrt(max(1.0 - float(m[0]) ** 2, 1e-24))
        for j in range(3):
            if denom > 1e-24:
                jac[row, 3 + j] = w_rp * (m[2] * dm[j][1] - m[1] * dm[j][2]) / denom
            jac[row + 1, 3 + j] = w_rp * dm[j][0] / root
        row += 2

        n = self.plane.n
        jac[row, 0:3] = self.contact_weight * n
        for j in range(3):
            jac[row, 3 + j] = -self.contact_weight * s[2] * float(n @ d_rot[j][:, 2])
        jac[row, 8] = -self.contact_weight * float(n @ rot[:, 2])
        return jac

    def jacobian(self, x: np.ndarray, analytic: bool = False, step: float = 1e-6) -> np.ndarray:
        return self.analytic_jacobian(x) if analytic else self.numeric_jacobian(x, step)


def residuals(pose: ObjectPose, obs_set: typing.Sequence[ObservationSlice], plane: PlaneModel,
              opts: SolverOptions = SolverOptions()) -> ResidualBundle:
    """
    Unweighted residual terms of a pose, evaluated on every point of the slices.

    r_pos      pixel distance between the projected center and the box center, per frame
    r_scale    per point, the summed distance outside the cube over the three axes (meters)
    r_surface  per point inside the cube, the distance to the nearest face (meters)
    r_yaw      per line, the yaw difference folded into [-45, 45) degrees (radians)
    r_rp       (angle between cube z-axis and n, angle between cube x-axis and n minus 90 degrees)
    r_contact  height of the bottom face center above the plane (meters)
    """
    rot = pose.rotation
    r_pos: typing.List[float] = []
    skipped = 0
    for sl in obs_set:
        uv, valid = project_points(sl.intrinsics, sl.camera, pose.t[None, :])
        if not valid[0]:
            skipped += 1
            continue
        r_pos.append(float(np.linalg.norm(uv[0] - sl.center)))
    total = max(1, sum(len(sl.points) for sl in obs_set))
    problem = CuboidProblem(pose, obs_set, plane, attr.evolve(opts, max_points=total))
    q = pose.to_object(problem.points)
    r_scale = np.maximum(np.abs(q) - pose.s, 0.0).sum(axis=1)
    r_surface, _, _ = CuboidProblem.inside_depth(q, pose.s)
    yaws = problem.line_yaws
    r_yaw = fold_quarter(pose.yaw - yaws) if len(yaws) else np.zeros(0)
    n = plane.n
    z_angle = math.acos(float(np.clip(rot[:, 2] @ n, -1.0, 1.0)))
    x_angle = math.acos(float(np.clip(rot[:, 0] @ n, -1.0, 1.0))) - math.pi / 2.0
    return ResidualBundle(r_pos=np.array(r_pos), r_scale=r_scale, r_yaw=np.asarray(r_yaw, dtype=float),
                          r_rp=np.array([z_angle, x_angle]), weights=opts.weights,
                          cost=problem.cost(pose.as_vector()), r_surface=r_surface,
                          r_contact=problem.contact(pose.t, rot, pose.s), skipped_frames=skipped)


def _normalize(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    x[3:6] = [wrap_angle(float(a)) for a in x[3:6]]
    x[6:9] = np.maximum(x[6:9], MIN_HALF_EXTENT)
    return x


def optimize_pose(init: ObjectPose, obs_set: typing.Sequence[ObservationSlice], plane: PlaneModel,
                  opts: SolverOptions = SolverOptions(), points: typing.Optional[np.ndarray] = None) -> SolveResult:
    """
    Levenberg-Marquardt over the nine pose parameters.
    Damping shrinks by 10 after an accepted step and grows by 10 after a rejected one.
    Never raises on non-convergence: the best pose found so far is returned with converged=False.

    :param points: point cloud for the scale term (defaults to the points of all slices)
    :raises SolverException: no observation slices, or the cost became NaN
    """
    if not obs_set:
        raise SolverException("at least one observation slice is required")
    problem = CuboidProblem(init, obs_set, plane, opts, points)
    x = _normalize(init.as_vector())
    r = problem.residual_vector(x)
    cost = 0.5 * float(r @ r)
    if math.isnan(cost):
        raise SolverException("initial cost is NaN")
    jac = problem.jacobian(x, opts.analytic_jacobian, opts.jacobian_step)
    damping = opts.damping
    trace = [(0, cost, damping)]
    accepted = 0
    converged = False

    for _ in range(opts.max_iters):
        grad = jac.T @ r
        if float(np.max(np.abs(grad))) < 1e-12:
            converged = True
            break
        hess = jac.T @ jac
        lhs = hess + damping * np.diag(np.diag(hess) + 1e-9)
        try:
            step = np.linalg.solve(lhs, -grad)
        except np.linalg.LinAlgError:
            damping *= 10.0
            continue
        if np.linalg.norm(step) <= opts.step_tol * (np.linalg.norm(x) + opts.step_tol):
            converged = True
            break

        x_new = _normalize(x + step)
        r_new = problem.residual_vector(x_new)
        cost_new = 0.5 * float(r_new @ r_new)
        if math.isnan(cost_new):
            raise SolverException(f"cost became NaN after {accepted} accepted steps")

        if cost_new < cost:
            rel_change = (cost - cost_new) / max(cost, 1e-300)
            x, r, cost = x_new, r_new, cost_new
            accepted += 1
            damping = max(damping / 10.0, 1e-12)
            trace.append((accepted, cost, damping))
            if rel_change < opts.cost_tol or cost < 1e-24:
                converged = True
                break
            jac = problem.jacobian(x, opts.analytic_jacobian, opts.jacobian_step)
        else:
            damping *= 10.0
            if damping > 1e10:
                converged = True
                break

    logger.debug("pose solve: %d accepted steps, cost %.6g, converged=%s", accepted, cost, converged)
    return SolveResult(pose=ObjectPose.from_vector(x), cost=cost, iterations=accepted, converged=converged,
                       skipped_frames=problem.skipped_frames, trace=trace)
