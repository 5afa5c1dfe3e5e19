"""
Virtual RGB-D camera.
The renderer samples the visible surfaces of every primitive on a regular
lattice (one sample per 0.5 cm^2), removes samples hidden behind other
primitives by casting a ray from each sample towards the camera, and reports
per-object detections (points, 2D box, top-edge line segments) plus desk points.
"""
import logging
import math
import typing

import attr
import numpy as np
from scipy.spatial.transform import Rotation

from pyobjmap.constants import DESK_SAMPLE_SPACING, SAMPLE_AREA, Face, NoiseLevel, Shape
from pyobjmap.exceptions import DomainException
from pyobjmap.grid import SurfaceGridSet
from pyobjmap.obj_types import CameraIntrinsics, CameraPose, ObjectPose
from pyobjmap.scene import DeskScene, ScenePrimitive
from pyobjmap.util import box_iou_2d, ray_box_hits, ray_cylinder_hits

logger = logging.getLogger(__name__)

MIN_DETECTION_SAMPLES = 10
MIN_LINE_PIXELS = 5.0
CONTAMINATION_RADIUS = 0.03


def _probability(instance: typing.Any, attribute: typing.Any, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise DomainException(f"{attribute.name} must lie in [0, 1], got {value}")


def _nonnegative(instance: typing.Any, attribute: typing.Any, value: float) -> None:
    if not value >= 0.0:
        raise DomainException(f"{attribute.name} must be nonnegative, got {value}")


@attr.s(slots=True, frozen=True)
class NoiseModel:
    depth_sigma: float = attr.ib(default=0.0, converter=float, validator=_nonnegative)
    bbox_jitter_sigma: float = attr.ib(default=0.0, converter=float, validator=_nonnegative)
    line_sigma: float = attr.ib(default=0.0, converter=float, validator=_nonnegative)
    dropout_prob: float = attr.ib(default=0.0, converter=float, validator=_probability)
    desk_contamination: float = attr.ib(default=0.0, converter=float, validator=_probability)
    camera_trans_sigma: float = attr.ib(default=0.0, converter=float, validator=_nonnegative)
    camera_rot_sigma: float = attr.ib(default=0.0, converter=float, validator=_nonnegative)

    @classmethod
    def preset(cls, level: typing.Union[NoiseLevel, str]) -> "NoiseModel":
        return NOISE_PRESETS[NoiseLevel(level)]

    @property
    def is_off(self) -> bool:
        return all(getattr(self, f.name) == 0.0 for f in attr.fields(NoiseModel))


NOISE_PRESETS: typing.Dict[NoiseLevel, NoiseModel] = {
    NoiseLevel.OFF: NoiseModel(),
    NoiseLevel.LOW: NoiseModel(depth_sigma=0.002, bbox_jitter_sigma=1.0, line_sigma=math.radians(1.0),
                               dropout_prob=0.0, desk_contamination=0.05),
    NoiseLevel.MED: NoiseModel(depth_sigma=0.004, bbox_jitter_sigma=2.0, line_sigma=math.radians(2.0),
                               dropout_prob=0.05, desk_contamination=0.10,
                               camera_trans_sigma=0.002, camera_rot_sigma=math.radians(0.2)),
}


@attr.s(slots=True, frozen=True, eq=False)
class LineFeature:
    """An image line segment. theta is its image direction atan2(dv, du) in radians."""
    start: np.ndarray = attr.ib(converter=lambda v: np.asarray(v, dtype=float))
    end: np.ndarray = attr.ib(converter=lambda v: np.asarray(v, dtype=float))

    @property
    def theta(self) -> float:
        d = self.end - self.start
        return math.atan2(float(d[1]), float(d[0]))


@attr.s(slots=True, frozen=True, eq=False)
class Detection:
    label: str = attr.ib()
    bbox: typing.Tuple[float, float, float, float] = attr.ib(converter=lambda b: tuple(float(v) for v in b))
    points_world: np.ndarray = attr.ib(converter=lambda v: np.asarray(v, dtype=float).reshape(-1, 3))
    lines: typing.Tuple[LineFeature, ...] = attr.ib(converter=tuple, factory=tuple)
    # Only populated when ids are revealed to the estimator (oracle association)
    object_id: typing.Optional[int] = attr.ib(default=None)

    @property
    def center(self) -> np.ndarray:
        """The bounding box center o in pixels."""
        u0, v0, u1, v1 = self.bbox
        return np.array([(u0 + u1) / 2.0, (v0 + v1) / 2.0])

    @property
    def centroid(self) -> np.ndarray:
        return self.points_world.mean(axis=0)  # type: ignore


@attr.s(slots=True, frozen=True, eq=False)
class Observation:
    camera: CameraPose = attr.ib()
    intrinsics: CameraIntrinsics = attr.ib()
    detections: typing.Tuple[Detection, ...] = attr.ib(converter=tuple, factory=tuple)
    desk_points: np.ndarray = attr.ib(converter=lambda v: np.asarray(v, dtype=float).reshape(-1, 3),
                                      factory=lambda: np.zeros((0, 3)))

    @property
    def is_empty(self) -> bool:
        return not self.detections and len(self.desk_points) == 0


def project(intr: CameraIntrinsics, cam: CameraPose, p_world: typing.Any) -> typing.Optional[np.ndarray]:
    """
    Pinhole projection of a single world point.
    :return: pixel (u, v), or None when the point lies on or behind the camera plane
    """
    uv, valid = project_points(intr, cam, np.asarray(p_world, dtype=float).reshape(1, 3))
    if not valid[0]:
        return None
    return uv[0]  # type: ignore


def project_points(intr: CameraIntrinsics, cam: CameraPose,
                   points: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Vectorized projection. Returns pixels (N, 2) and a mask of points in front of the camera."""
    pc = cam.to_camera(np.asarray(points, dtype=float).reshape(-1, 3))
    z = pc[:, 2]
    valid = z > 0
    safe_z = np.where(valid, z, 1.0)
    u = intr.fx * pc[:, 0] / safe_z + intr.cx
    v = intr.fy * pc[:, 1] / safe_z + intr.cy
    return np.column_stack([u, v]), valid


def unproject(intr: CameraIntrinsics, cam: CameraPose, pixel: typing.Sequence[float], depth: float) -> np.ndarray:
    """World point at the given depth (camera z) behind a pixel."""
    x = (pixel[0] - intr.cx) / intr.fx * depth
    y = (pixel[1] - intr.cy) / intr.fy * depth
    return cam.to_world(np.array([x, y, depth]))


def pixel_ray(intr: CameraIntrinsics, cam: CameraPose, pixel: typing.Sequence[float]) -> np.ndarray:
    """World-frame unit direction of the ray through a pixel."""
    d = cam.rotation @ np.array([(pixel[0] - intr.cx) / intr.fx, (pixel[1] - intr.cy) / intr.fy, 1.0])
    return d / np.linalg.norm(d)  # type: ignore


def in_image(intr: CameraIntrinsics, uv: np.ndarray) -> np.ndarray:
    return (uv[:, 0] >= 0) & (uv[:, 0] < intr.width) & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height)  # type: ignore


def _lattice(extent_a: float, extent_b: float) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Cell-centered lattice over [-a, a] x [-b, b] with one sample per SAMPLE_AREA."""
    step = math.sqrt(SAMPLE_AREA)
    na = max(1, int(round(2.0 * extent_a / step)))
    nb = max(1, int(round(2.0 * extent_b / step)))
    ga = -extent_a + (np.arange(na) + 0.5) * (2.0 * extent_a / na)
    gb = -extent_b + (np.arange(nb) + 0.5) * (2.0 * extent_b / nb)
    mesh_a, mesh_b = np.meshgrid(ga, gb, indexing='ij')
    return mesh_a.ravel(), mesh_b.ravel()


def surface_samples(prim: ScenePrimitive) -> typing.Tuple[np.ndarray, np.ndarray]:
    """World-frame surface samples and outward normals of a primitive, bottom face excluded."""
    pose = prim.pose_gt
    s = pose.s
    pts: typing.List[np.ndarray] = []
    normals: typing.List[np.ndarray] = []
    if prim.shape == Shape.CYLINDER:
        radius, half_h = float(s[0]), float(s[2])
        circumference = 2.0 * math.pi * radius
        ang, z = _lattice(circumference / 2.0, half_h)
        phi = (ang + circumference / 2.0) / radius
        pts.append(np.column_stack([radius * np.cos(phi), radius * np.sin(phi), z]))
        normals.append(np.column_stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)]))
        x, y = _lattice(radius, radius)
        inside = x * x + y * y <= radius * radius
        cap = np.column_stack([x[inside], y[inside], np.full(int(inside.sum()), half_h)])
        pts.append(cap)
        normals.append(np.tile([0.0, 0.0, 1.0], (len(cap), 1)))
    else:
        for face in Face:
            a, b = face.plane_axes
            ga, gb = _lattice(float(s[a]), float(s[b]))
            face_pts = np.zeros((len(ga), 3))
            face_pts[:, a] = ga
            face_pts[:, b] = gb
            face_pts[:, face.axis] = face.sign * s[face.axis]
            pts.append(face_pts)
            normals.append(np.tile(SurfaceGridSet.normal(face), (len(ga), 1)))
    local = np.vstack(pts)
    rot = pose.rotation
    return local @ rot.T + pose.t, np.vstack(normals) @ rot.T


def occluded_by(prims: typing.Sequence[ScenePrimitive], points: np.ndarray, eye: np.ndarray,
                skip: typing.Optional[int] = None) -> np.ndarray:
    """Mask of points whose line of sight to `eye` is blocked by one of the primitives."""
    blocked = np.zeros(len(points), dtype=bool)
    if len(points) == 0:
        return blocked
    to_eye = eye - points
    dist = np.linalg.norm(to_eye, axis=1)
    dirs = to_eye / dist[:, None]
    for prim in prims:
        if prim.id == skip:
            continue
        pose = prim.pose_gt
        if prim.shape == Shape.CYLINDER:
            blocked |= ray_cylinder_hits(points, dirs, pose.t, float(pose.s[0]), float(pose.s[2]), dist)
        else:
            blocked |= ray_box_hits(points, dirs, pose.t, pose.rotation, pose.s, dist)
    return blocked


def _perturb_camera(cam: CameraPose, noise: NoiseModel, rng: np.random.Generator) -> CameraPose:
    if noise.camera_trans_sigma == 0.0 and noise.camera_rot_sigma == 0.0:
        return cam
    dt = rng.normal(0.0, noise.camera_trans_sigma, size=3) if noise.camera_trans_sigma > 0 else np.zeros(3)
    rotvec = rng.normal(0.0, noise.camera_rot_sigma, size=3) if noise.camera_rot_sigma > 0 else np.zeros(3)
    rot = Rotation.from_rotvec(rotvec).as_matrix() @ cam.rotation
    # Re-orthonormalize so the validator's determinant check holds exactly enough
    u, _, vt = np.linalg.svd(rot)
    return CameraPose(rotation=u @ vt, translation=cam.translation + dt)


def _top_edge_lines(prim: ScenePrimitive, cam: CameraPose, intr: CameraIntrinsics,
                    scene: DeskScene, noise: NoiseModel, rng: np.random.Generator) -> typing.List[LineFeature]:
    pose = prim.pose_gt
    eye = cam.translation
    top = pose.t + pose.rotation[:, 2] * pose.s[2]
    if float(np.dot(pose.rotation[:, 2], eye - top)) <= 0:
        return []
    corners = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=float) * pose.s[:2]
    corners = np.column_stack([corners, np.full(4, pose.s[2])])
    corners_w = pose.to_world(corners)
    lines: typing.List[LineFeature] = []
    for i in range(4):
        a, b = corners_w[i], corners_w[(i + 1) % 4]
        mid = (a + b) / 2.0
        if occluded_by(scene.primitives, mid[None, :], eye, skip=prim.id)[0]:
            continue
        uv, valid = project_points(intr, cam, np.vstack([a, b]))
        if not valid.all() or not in_image(intr, uv).all():
            continue
        if np.linalg.norm(uv[1] - uv[0]) < MIN_LINE_PIXELS:
            continue
        start, end = uv[0], uv[1]
        if noise.line_sigma > 0:
            delta = rng.normal(0.0, noise.line_sigma)
            c, s = math.cos(delta), math.sin(delta)
            center = (start + end) / 2.0
            rot = np.array([[c, -s], [s, c]])
            start = center + rot @ (start - center)
            end = center + rot @ (end - center)
        lines.append(LineFeature(start=start, end=end))
    return lines


def _desk_lattice(scene: DeskScene) -> np.ndarray:
    x0, y0, x1, y1 = scene.desk_bounds
    xs = np.arange(x0 + DESK_SAMPLE_SPACING / 2.0, x1, DESK_SAMPLE_SPACING)
    ys = np.arange(y0 + DESK_SAMPLE_SPACING / 2.0, y1, DESK_SAMPLE_SPACING)
    gx, gy = np.meshgrid(xs, ys, indexing='ij')
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, scene.desk_height)])


def footprint_distance(prim: ScenePrimitive, points: np.ndarray) -> np.ndarray:
    """Horizontal distance of points to the primitive's footprint (0 inside)."""
    pose = prim.pose_gt
    q = pose.to_object(points)
    if prim.shape == Shape.CYLINDER:
        return np.maximum(np.hypot(q[:, 0], q[:, 1]) - pose.s[0], 0.0)  # type: ignore
    return np.linalg.norm(np.maximum(np.abs(q[:, :2]) - pose.s[:2], 0.0), axis=1)  # type: ignore


def _with_depth_noise(points: np.ndarray, eye: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma <= 0 or len(points) == 0:
        return points
    rays = points - eye
    rays /= np.linalg.norm(rays, axis=1)[:, None]
    return points + rays * rng.normal(0.0, sigma, size=len(points))[:, None]  # type: ignore


def render(scene: DeskScene, cam: CameraPose, intr: CameraIntrinsics, noise: NoiseModel = NoiseModel(),
           seed: int = 0, reveal_ids: bool = False) -> Observation:
    """
    Render one frame.
    Only surfaces facing the camera, inside the image and not hidden behind
    another primitive produce samples. An empty detection list is a valid result.

    :param reveal_ids: attach ground-truth object ids to the detections (oracle association)
    """
    eye = cam.translation
    if float(np.dot(eye, [0.0, 0.0, 1.0])) <= scene.desk_height:
        raise DomainException("camera must be above the desk plane")
    rng = np.random.default_rng(seed)
    reported = _perturb_camera(cam, noise, rng)
    # Points are measured in the camera frame and mapped to the world with the reported pose
    to_reported = reported.rotation @ cam.rotation.T

    def measured(points: np.ndarray) -> np.ndarray:
        if reported is cam:
            return points
        return (points - cam.translation) @ to_reported.T + reported.translation  # type: ignore

    detections: typing.List[Detection] = []
    for prim in scene.primitives:
        pts, normals = surface_samples(prim)
        facing = np.einsum('ij,ij->i', normals, eye - pts) > 0
        pts = pts[facing]
        uv, valid = project_points(intr, cam, pts)
        keep = valid & in_image(intr, uv)
        pts, uv = pts[keep], uv[keep]
        hidden = occluded_by(scene.primitives, pts, eye, skip=prim.id)
        pts, uv = pts[~hidden], uv[~hidden]
        if len(pts) < MIN_DETECTION_SAMPLES:
            continue

        u0, v0 = uv.min(axis=0)
        u1, v1 = uv.max(axis=0)
        if noise.bbox_jitter_sigma > 0:
            u0, v0, u1, v1 = np.array([u0, v0, u1, v1]) + rng.normal(0.0, noise.bbox_jitter_sigma, size=4)
        bbox = (max(0.0, min(u0, u1)), max(0.0, min(v0, v1)),
                min(float(intr.width), max(u0, u1)), min(float(intr.height), max(v0, v1)))

        lines = _top_edge_lines(prim, cam, intr, scene, noise, rng) if prim.shape == Shape.CUBOID else []
        noisy = _with_depth_noise(pts, eye, noise.depth_sigma, rng)
        dropped = noise.dropout_prob > 0 and rng.random() < noise.dropout_prob
        if dropped:
            logger.debug("detection of object %d dropped", prim.id)
            continue
        detections.append(Detection(
            label=prim.label,
            bbox=bbox,
            points_world=measured(noisy),
            lines=lines,
            object_id=prim.id if reveal_ids else None,
        ))

    desk = _desk_lattice(scene)
    uv, valid = project_points(intr, cam, desk)
    desk = desk[valid & in_image(intr, uv)]
    under = np.zeros(len(desk), dtype=bool)
    for prim in scene.primitives:
        under |= footprint_distance(prim, desk) <= 0.0
    desk = desk[~under]
    desk = desk[~occluded_by(scene.primitives, desk, eye)]
    desk_noisy = _with_depth_noise(desk, eye, noise.depth_sigma, rng)

    if noise.desk_contamination > 0 and detections:
        taken = np.zeros(len(desk_noisy), dtype=bool)
        contaminated: typing.List[Detection] = []
        for det in detections:
            prim = _source_primitive(scene, det)
            near = np.zeros(len(desk), dtype=bool) if prim is None else \
                (footprint_distance(prim, desk) < CONTAMINATION_RADIUS) & ~taken
            idx = np.flatnonzero(near)
            n_take = int(round(noise.desk_contamination * len(idx)))
            if n_take == 0:
                contaminated.append(det)
                continue
            chosen = rng.choice(idx, size=n_take, replace=False)
            taken[chosen] = True
            extra = measured(desk_noisy[chosen])
            contaminated.append(attr.evolve(det, points_world=np.vstack([det.points_world, extra])))
        detections = contaminated
        desk_noisy = desk_noisy[~taken]

    return Observation(camera=reported, intrinsics=intr, detections=detections, desk_points=measured(desk_noisy))


def _source_primitive(scene: DeskScene, det: Detection) -> typing.Optional[ScenePrimitive]:
    """The primitive a detection was rendered from, found by label and nearest center."""
    best: typing.Optional[ScenePrimitive] = None
    best_d = math.inf
    c = det.centroid
    for prim in scene.primitives:
        if prim.label != det.label:
            continue
        d = float(np.linalg.norm(prim.pose_gt.t - c))
        if d < best_d:
            best, best_d = prim, d
    return best


class Estimate(typing.Protocol):
    """Anything carrying an id, a cuboid pose and surface grids (an ObjectEstimate)."""
    id: int
    pose: ObjectPose
    grids: SurfaceGridSet


@attr.s(slots=True, frozen=True, eq=False)
class VisibleObject:
    object_id: int = attr.ib()
    cells: typing.Dict[Face, np.ndarray] = attr.ib()
    bbox: typing.Tuple[float, float, float, float] = attr.ib()
    r_iou: float = attr.ib(default=0.0)

    @property
    def n_cells(self) -> int:
        return int(sum(int(m.sum()) for m in self.cells.values()))


VisibleSet = typing.Dict[int, VisibleObject]


def _candidate_cells(est: Estimate, cam: CameraPose,
                     intr: CameraIntrinsics) -> typing.List[typing.Tuple[Face, int, np.ndarray, np.ndarray]]:
    """Per face: cell count, indices and world centres of cells facing the camera and inside the image."""
    eye = cam.translation
    rot = est.pose.rotation
    out: typing.List[typing.Tuple[Face, int, np.ndarray, np.ndarray]] = []
    for face in Face:
        centers = est.grids.cell_centers(face)
        normal_w = rot @ SurfaceGridSet.normal(face)
        centers_w = centers @ rot.T + est.pose.t
        idx = np.flatnonzero((eye - centers_w) @ normal_w > 0)
        if len(idx):
            uv, valid = project_points(intr, cam, centers_w[idx])
            idx = idx[valid & in_image(intr, uv)]
        out.append((face, len(centers), idx, centers_w[idx]))
    return out


def _unoccluded_cells(estimates: typing.Sequence[Estimate], cam: CameraPose, intr: CameraIntrinsics,
                      occluders: typing.Sequence[Estimate]) -> typing.Dict[int, typing.Dict[Face, np.ndarray]]:
    """Visible cell masks of several estimates, testing all their cells against each occluder at once."""
    eye = cam.translation
    found = [_candidate_cells(est, cam, intr) for est in estimates]
    owners = [np.full(len(idx), est.id) for est, faces in zip(estimates, found) for _, _, idx, _ in faces]
    points = [pts for faces in found for _, _, _, pts in faces]
    owner = np.concatenate(owners) if owners else np.zeros(0, dtype=int)
    points_w = np.concatenate(points) if points else np.zeros((0, 3))

    hidden = np.zeros(len(points_w), dtype=bool)
    if len(points_w):
        to_eye = eye - points_w
        dist = np.linalg.norm(to_eye, axis=1)
        dirs = to_eye / dist[:, None]
        for occ in occluders:
            mine = owner != occ.id
            if mine.any():
                hidden[mine] |= ray_box_hits(points_w[mine], dirs[mine], occ.pose.t, occ.pose.rotation,
                                             occ.pose.s, dist[mine])

    result: typing.Dict[int, typing.Dict[Face, np.ndarray]] = {}
    offset = 0
    for est, faces in zip(estimates, found):
        cells: typing.Dict[Face, np.ndarray] = {}
        for face, n_cells, idx, _ in faces:
            mask = np.zeros(n_cells, dtype=bool)
            mask[idx[~hidden[offset:offset + len(idx)]]] = True
            offset += len(idx)
            cells[face] = mask
        result[est.id] = cells
    return result


def visible_cells(est: Estimate, cam: CameraPose, intr: CameraIntrinsics,
                  occluders: typing.Sequence[Estimate] = ()) -> typing.Dict[Face, np.ndarray]:
    """Per face, a flat mask of cells facing the camera, inside the image and unoccluded."""
    return _unoccluded_cells([est], cam, intr, occluders)[est.id]


def projected_bbox(pose: ObjectPose, cam: CameraPose,
                   intr: CameraIntrinsics) -> typing.Optional[typing.Tuple[float, float, float, float]]:
    """Pixel box of the projected cuboid corners, clipped to the image."""
    uv, valid = project_points(intr, cam, pose.corners())
    if not valid.any():
        return None
    uv = uv[valid]
    u0 = float(np.clip(uv[:, 0].min(), 0, intr.width))
    u1 = float(np.clip(uv[:, 0].max(), 0, intr.width))
    v0 = float(np.clip(uv[:, 1].min(), 0, intr.height))
    v1 = float(np.clip(uv[:, 1].max(), 0, intr.height))
    if u1 <= u0 or v1 <= v0:
        return None
    return u0, v0, u1, v1


def predicted_visibility(estimates: typing.Any, cam: CameraPose, intr: CameraIntrinsics) -> VisibleSet:
    """
    Predict what a camera would see of the *estimated* map.
    :param estimates: a GlobalObjectMap or a sequence of estimates
    :return: per visible object, its visible cells and R_IoU, the mean 2D box IoU
             with the other visible objects
    """
    estimates = list(getattr(estimates, 'estimates', estimates))
    found: typing.Dict[int, typing.Tuple[typing.Dict[Face, np.ndarray], typing.Tuple[float, float, float, float]]] = {}
    masks = _unoccluded_cells(estimates, cam, intr, estimates)
    for est in estimates:
        cells = masks[est.id]
        if not any(m.any() for m in cells.values()):
            continue
        bbox = projected_bbox(est.pose, cam, intr)
        if bbox is None:
            continue
        found[est.id] = (cells, bbox)

    result: VisibleSet = {}
    for oid, (cells, bbox) in found.items():
        others = [box_iou_2d(bbox, other[1]) for j, other in found.items() if j != oid]
        r_iou = float(np.mean(others)) if others else 0.0
        result[oid] = VisibleObject(object_id=oid, cells=cells, bbox=bbox, r_iou=r_iou)
    return result
