"""Global object map.
The GlobalObjectMap keeps one ObjectEstimate per physical object. Estimates
accumulate the points of every detection associated with them and carry
five surface occupancy grids that record which parts of the object were
already observed. Each estimate is identified by an integer id.
"""
import dataclasses
import logging
import math
import typing
from enum import Enum

import attr
import numpy as np

from pyobjmap.constants import ASSOCIATION_MIN_GATE, GRID_RESOLUTION, Face
from pyobjmap.exceptions import PlaneFitException
from pyobjmap.grid import Completeness, SurfaceGridSet, binary_entropy, completeness
from pyobjmap.obj_types import CameraIntrinsics, CameraPose, ObjectPose, PlaneModel
from pyobjmap.pose import MIN_INIT_POINTS, ObservationSlice, SolveResult, fit_desk_plane, init_pose
from pyobjmap.sensor import Observation, visible_cells

logger = logging.getLogger(__name__)

FAR_POINT_FACTOR = 3.0
SLICE_RATIO = 3.0
SLICE_MAX_REMOVAL = 0.5
SLICE_MIN_POINTS = 30

__all__ = [
    'MapEvent',
    'MapUpdateBroker',
    'ObjectEstimate',
    'GlobalObjectMap',
    'Verdict',
    'GridUpdate',
    'SliceFilterResult',
    'associate',
    'integrate',
    'update_surface_grids',
    'rebuild_grids',
    'slice_filter',
    'edge_slices_to_drop',
    'binary_entropy',
    'completeness',
]


class MapEvent(Enum):
    CREATED = 'created'
    UPDATED = 'updated'
    REBUILT = 'rebuilt'


class MapUpdateBroker:
    """Propagates map changes to subscribers via callbacks."""

    def __init__(self) -> None:
        self._callbacks: typing.List[typing.Tuple[MapEvent, typing.Any]] = []

    def attach(self, event: MapEvent, callback: typing.Any) -> None:
        if (event, callback) not in self._callbacks:
            self._callbacks.append((event, callback))

    def detach(self, event: MapEvent, callback: typing.Any) -> None:
        try:
            self._callbacks.remove((event, callback))
        except ValueError:
            pass

    def propagate(self, est: 'ObjectEstimate', event: MapEvent) -> None:
        for destination, callback in self._callbacks:
            if event == destination:
                callback(est)


@dataclasses.dataclass(eq=True, order=True)
class ObjectEstimate:
    """Everything known about one object. Estimates compare and sort by id."""
    id: int = dataclasses.field(compare=True)
    label: str = dataclasses.field(compare=False)
    pose: ObjectPose = dataclasses.field(compare=False)
    grids: SurfaceGridSet = dataclasses.field(compare=False)
    points: np.ndarray = dataclasses.field(compare=False, default_factory=lambda: np.zeros((0, 3)))
    volume_history: typing.List[float] = dataclasses.field(compare=False, default_factory=list)
    fully_explored: bool = dataclasses.field(compare=False, default=False)
    slices: typing.List[ObservationSlice] = dataclasses.field(compare=False, default_factory=list)
    # Pose the grids are currently laid out for
    grid_pose: typing.Optional[ObjectPose] = dataclasses.field(compare=False, default=None)
    ignored_points: int = dataclasses.field(compare=False, default=0)
    last_solve: typing.Optional[SolveResult] = dataclasses.field(compare=False, default=None)

    def __post_init__(self) -> None:
        if self.grid_pose is None:
            self.grid_pose = self.pose

    @classmethod
    def create(cls, id: int, label: str, pose: ObjectPose, resolution: float = GRID_RESOLUTION) -> "ObjectEstimate":
        return cls(id=id, label=label, pose=pose, grids=SurfaceGridSet(pose.s, resolution))

    @property
    def cameras(self) -> typing.List[typing.Tuple[CameraPose, CameraIntrinsics]]:
        return [(sl.camera, sl.intrinsics) for sl in self.slices]

    @property
    def normalized_volumes(self) -> typing.List[float]:
        """Volume history divided by the first recorded volume."""
        if not self.volume_history:
            return []
        first = self.volume_history[0]
        return [v / first for v in self.volume_history]

    def record_volume(self) -> None:
        self.volume_history.append(self.pose.volume)

    def completeness(self) -> Completeness:
        return completeness(self.grids)


@attr.s(slots=True, frozen=True)
class Verdict:
    """Association result for one detection. object_id is None for a new object outside oracle mode."""
    detection_index: int = attr.ib()
    object_id: typing.Optional[int] = attr.ib()
    is_new: bool = attr.ib()
    distance: float = attr.ib(default=math.inf)


@attr.s(slots=True, frozen=True)
class GridUpdate:
    occupied: int = attr.ib(default=0)
    freed: int = attr.ib(default=0)
    ignored: int = attr.ib(default=0)


class GlobalObjectMap:
    """
    All object estimates plus the desk plane.
    Desk points are accumulated over every integrated observation and the
    plane is refitted from them each time new ones arrive.
    """

    def __init__(self, resolution: float = GRID_RESOLUTION, seed: int = 0) -> None:
        self._estimates: typing.Dict[int, ObjectEstimate] = {}
        self.desk_plane: typing.Optional[PlaneModel] = None
        self.desk_points = np.zeros((0, 3))
        self.resolution = resolution
        self.seed = seed
        self._broker = MapUpdateBroker()

    def __len__(self) -> int:
        return len(self._estimates)

    def __iter__(self) -> typing.Iterator[ObjectEstimate]:
        return iter(self.estimates)

    def __contains__(self, object_id: int) -> bool:
        return object_id in self._estimates

    @property
    def estimates(self) -> typing.List[ObjectEstimate]:
        """All estimates ordered by id."""
        return sorted(self._estimates.values())

    def get(self, object_id: int) -> typing.Optional[ObjectEstimate]:
        return self._estimates.get(object_id)

    def next_id(self) -> int:
        return max(self._estimates, default=0) + 1

    def register_callback(self, event: MapEvent, callback: typing.Callable[[ObjectEstimate], typing.Any]) -> None:
        """Register a callback that is called with the affected estimate every time `event` happens."""
        self._broker.attach(event, callback)

    def remove_callback(self, event: MapEvent, callback: typing.Callable[[ObjectEstimate], typing.Any]) -> None:
        self._broker.detach(event, callback)

    def notify(self, est: ObjectEstimate, event: MapEvent) -> None:
        self._broker.propagate(est, event)

    def insert(self, est: ObjectEstimate) -> None:
        if est.id in self._estimates:
            raise ValueError(f"object {est.id} already exists")
        self._estimates[est.id] = est
        logger.debug("created object %d (%s)", est.id, est.label)
        self.notify(est, MapEvent.CREATED)

    def others(self, est: ObjectEstimate) -> typing.List[ObjectEstimate]:
        return [o for o in self.estimates if o.id != est.id]

    def add_desk_points(self, points: np.ndarray, viewpoint: typing.Optional[np.ndarray] = None) -> None:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            return
        self.desk_points = np.vstack([self.desk_points, points])
        try:
            self.desk_plane = fit_desk_plane(self.desk_points, seed=self.seed, viewpoint=viewpoint)
        except PlaneFitException as err:
            logger.debug("desk plane not refitted: %s", err)

    def plane_for(self, points: np.ndarray) -> PlaneModel:
        """The desk plane, or a horizontal stand-in under the lowest point while no desk was seen."""
        if self.desk_plane is not None:
            return self.desk_plane
        logger.warning("no desk plane fitted yet, assuming a horizontal desk")
        return PlaneModel.horizontal(float(np.min(points[:, 2])))

    def set_pose(self, est: ObjectEstimate, pose: ObjectPose) -> bool:
        """
        Replace the pose of an estimate. The grids are rebuilt when any cube corner
        moved by more than one grid cell since they were laid out.
        :return: True if the grids were rebuilt
        """
        est.pose = pose
        assert est.grid_pose is not None
        moved = float(np.max(np.linalg.norm(pose.corners() - est.grid_pose.corners(), axis=1)))
        if moved <= self.resolution:
            return False
        rebuild_grids(est, self.others(est), self.resolution)
        self.notify(est, MapEvent.REBUILT)
        return True


def associate(obj_map: GlobalObjectMap, obs: Observation, oracle: bool = False) -> typing.List[Verdict]:
    """
    Match every detection against the map.
    A detection matches an estimate iff the labels are equal and its point
    centroid lies closer to the estimate's center than max(|s|, 0.10 m).
    The nearest such estimate wins, ties go to the lower id. Several
    detections may match the same estimate.
    In oracle mode the ground-truth ids attached to the detections are used instead.
    """
    verdicts: typing.List[Verdict] = []
    for index, det in enumerate(obs.detections):
        if oracle:
            if det.object_id is None:
                raise ValueError("oracle association needs detections with revealed ids")
            verdicts.append(Verdict(index, det.object_id, det.object_id not in obj_map))
            continue
        centroid = det.centroid
        best: typing.Optional[ObjectEstimate] = None
        best_d = math.inf
        for est in obj_map.estimates:
            if est.label != det.label:
                continue
            d = float(np.linalg.norm(centroid - est.pose.t))
            if d < max(float(np.linalg.norm(est.pose.s)), ASSOCIATION_MIN_GATE) and d < best_d:
                best, best_d = est, d
        if best is None:
            verdicts.append(Verdict(index, None, True))
        else:
            verdicts.append(Verdict(index, best.id, False, best_d))
    return verdicts


def _assign_faces(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """
    Face index into list(Face) for each object-frame point, -1 for the bottom face.
    The face is the one with the largest |coordinate| / extent ratio; ties go to +z.
    """
    ratio = np.abs(q) / s
    top_wins = ratio[:, 2] >= np.max(ratio[:, :2], axis=1)
    axis = np.where(top_wins, 2, np.argmax(ratio[:, :2], axis=1))
    positive = q[np.arange(len(q)), axis] >= 0
    faces = list(Face)
    out = np.full(len(q), -1, dtype=int)
    for i, face in enumerate(faces):
        want_positive = face.sign > 0
        out[(axis == face.axis) & (positive == want_positive)] = i
    return out


def _mark_points(grids: SurfaceGridSet, pose: ObjectPose, points: np.ndarray) -> typing.Tuple[int, int]:
    """Mark the cells hit by points occupied. Returns (cells changed, points ignored as too far)."""
    if len(points) == 0:
        return 0, 0
    q = pose.to_object(points)
    far = np.linalg.norm(q, axis=1) > FAR_POINT_FACTOR * float(np.linalg.norm(pose.s))
    q = q[~far]
    assigned = _assign_faces(q, pose.s)
    changed = 0
    for i, face in enumerate(Face):
        sel = q[assigned == i]
        if len(sel):
            rows, cols = grids.cell_index(face, sel)
            changed += grids.mark_occupied(face, rows, cols)
    return changed, int(far.sum())


def update_surface_grids(est: ObjectEstimate, points: np.ndarray, cam: CameraPose, intr: CameraIntrinsics,
                         occluders: typing.Sequence[ObjectEstimate] = ()) -> GridUpdate:
    """
    Project points onto the five faces of the estimated cube and mark their cells
    occupied. Cells the camera is predicted to see that stay empty become free.
    Points farther than 3 |s| from the center are ignored and counted.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    occupied, ignored = _mark_points(est.grids, est.pose, points)
    if ignored:
        logger.debug("object %d: %d far point(s) ignored", est.id, ignored)
    est.ignored_points += ignored
    freed = 0
    for face, mask in visible_cells(est, cam, intr, occluders).items():
        freed += est.grids.mark_free(face, mask)
    return GridUpdate(occupied=occupied, freed=freed, ignored=ignored)


def rebuild_grids(est: ObjectEstimate, occluders: typing.Sequence[ObjectEstimate] = (),
                  resolution: float = GRID_RESOLUTION) -> None:
    """
    Lay out fresh grids for the current pose. Occupied cells are re-projected from the
    accumulated points, free cells from replaying every stored camera. Free cells that no
    stored view explains any more fall back to unknown.
    """
    est.grids = SurfaceGridSet(est.pose.s, resolution)
    est.grid_pose = est.pose
    _mark_points(est.grids, est.pose, est.points)
    for cam, intr in est.cameras:
        for face, mask in visible_cells(est, cam, intr, occluders).items():
            est.grids.mark_free(face, mask)


def integrate(obj_map: GlobalObjectMap, obs: Observation, verdicts: typing.Sequence[Verdict]) -> GlobalObjectMap:
    """
    Fold one observation into the map: refit the desk plane, create estimates for new
    objects (at least 10 points), append points and frames, update the surface grids.
    Pose optimization is left to the caller.
    """
    if obs.is_empty:
        return obj_map
    obj_map.add_desk_points(obs.desk_points, viewpoint=obs.camera.translation)

    for verdict in verdicts:
        det = obs.detections[verdict.detection_index]
        est = obj_map.get(verdict.object_id) if verdict.object_id is not None else None
        plane = obj_map.plane_for(det.points_world)
        sl = ObservationSlice.from_detection(det, obs.camera, obs.intrinsics, plane)
        if est is None:
            if len(det.points_world) < MIN_INIT_POINTS:
                logger.debug("detection %d (%s) too small to start an object", verdict.detection_index, det.label)
                continue
            object_id = verdict.object_id if verdict.object_id is not None else obj_map.next_id()
            est = ObjectEstimate.create(object_id, det.label, init_pose(det.points_world, plane, sl.line_yaws),
                                        obj_map.resolution)
            obj_map.insert(est)
        est.points = np.vstack([est.points, det.points_world])
        est.slices.append(sl)
        update_surface_grids(est, det.points_world, obs.camera, obs.intrinsics, obj_map.others(est))
        obj_map.notify(est, MapEvent.UPDATED)
    return obj_map


@attr.s(slots=True, frozen=True, eq=False)
class SliceFilterResult:
    """Filtered points, indices of the kept input points, dropped slices per axis, aborted axes."""
    points: np.ndarray = attr.ib()
    kept: np.ndarray = attr.ib()
    total: int = attr.ib()
    dropped: typing.Dict[int, typing.Tuple[int, ...]] = attr.ib(factory=dict)
    aborted: typing.Tuple[int, ...] = attr.ib(default=())

    @property
    def removed(self) -> int:
        return self.total - len(self.kept)


def edge_slices_to_drop(counts: typing.Sequence[int], ratio: float = SLICE_RATIO) -> typing.Tuple[int, ...]:
    """
    Edge slices whose occupied-cell count is below 1/ratio of the next non-empty
    slice further inside. Walks inwards from both ends, never past the middle.
    """
    counts = list(counts)
    k = len(counts)
    dropped: typing.List[int] = []

    def next_nonempty(start: int, step: int, stop: int) -> typing.Optional[int]:
        i = start
        while (i < stop) if step > 0 else (i > stop):
            if counts[i] > 0:
                return counts[i]
            i += step
        return None

    left = 0
    while left < k // 2:
        inner = next_nonempty(left + 1, 1, k)
        if inner is None or not counts[left] < inner / ratio:
            break
        dropped.append(left)
        left += 1

    right = k - 1
    while right >= k - k // 2 and right > left:
        inner = next_nonempty(right - 1, -1, -1)
        if inner is None or not counts[right] < inner / ratio:
            break
        dropped.append(right)
        right -= 1
    return tuple(sorted(dropped))


def slice_filter(points: np.ndarray, pose: ObjectPose, resolution: float = GRID_RESOLUTION) -> SliceFilterResult:
    """
    Remove sparse edge slices along each cube axis in turn.
    Points are given in the object frame. An axis whose filtering would remove
    more than half of the remaining points is skipped and reported as aborted.
    Clouds with fewer than 30 points are returned unchanged.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    kept = np.arange(len(points))
    if len(points) < SLICE_MIN_POINTS:
        return SliceFilterResult(points=points, kept=kept, total=len(points))

    s = pose.s
    dropped: typing.Dict[int, typing.Tuple[int, ...]] = {}
    aborted: typing.List[int] = []
    for axis in range(3):
        q = points[kept]
        k = max(1, int(math.ceil(2.0 * s[axis] / resolution - 1e-9)))
        slice_idx = np.clip(np.floor((q[:, axis] + s[axis]) / resolution).astype(int), 0, k - 1)
        a, b = [i for i in range(3) if i != axis]
        cell_a = np.floor(q[:, a] / resolution).astype(np.int64)
        cell_b = np.floor(q[:, b] / resolution).astype(np.int64)
        counts = []
        for i in range(k):
            sel = slice_idx == i
            counts.append(len(set(zip(cell_a[sel].tolist(), cell_b[sel].tolist()))))
        drop = edge_slices_to_drop(counts)
        if not drop:
            continue
        remove = np.isin(slice_idx, drop)
        if remove.sum() > SLICE_MAX_REMOVAL * len(q):
            logger.warning("slice filter aborted on axis %d: would remove %d of %d points",
                           axis, int(remove.sum()), len(q))
            aborted.append(axis)
            continue
        dropped[axis] = drop
        kept = kept[~remove]
    return SliceFilterResult(points=points[kept], kept=kept, dropped=dropped, aborted=tuple(aborted),
                             total=len(points))
