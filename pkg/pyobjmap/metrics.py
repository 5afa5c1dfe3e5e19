"""
Pose accuracy metrics: center distance error (CDE, cm), yaw angle error
(YAE, degrees, folded by the 90 degree symmetry of a cuboid), top-view 2D IoU
and 3D IoU of upright boxes.
"""
import math
import typing

import attr
import numpy as np
from scipy.optimize import linear_sum_assignment
from shapely.geometry import Point, Polygon

from pyobjmap.constants import MATCH_GATE, Shape
from pyobjmap.obj_types import ObjectPose
from pyobjmap.scene import DeskScene, ScenePrimitive
from pyobjmap.util import fold_quarter, rectangle_corners

CIRCLE_SEGMENTS = 64


@attr.s(slots=True, frozen=True)
class PoseMetrics:
    cde: float = attr.ib()
    yae: typing.Optional[float] = attr.ib()
    iou2d: float = attr.ib()
    iou3d: float = attr.ib()


def footprint(pose: ObjectPose, shape: Shape = Shape.CUBOID) -> Polygon:
    if shape == Shape.CYLINDER:
        return Point(float(pose.t[0]), float(pose.t[1])).buffer(float(pose.s[0]), quad_segs=CIRCLE_SEGMENTS)
    return Polygon(rectangle_corners(pose.t, pose.s, pose.yaw))


def _vertical_range(pose: ObjectPose) -> typing.Tuple[float, float]:
    return float(pose.t[2] - pose.s[2]), float(pose.t[2] + pose.s[2])


def iou2d(a: ObjectPose, b: ObjectPose, a_shape: Shape = Shape.CUBOID, b_shape: Shape = Shape.CUBOID) -> float:
    """IoU of the top-view footprints."""
    fa, fb = footprint(a, a_shape), footprint(b, b_shape)
    inter = fa.intersection(fb).area
    union = fa.area + fb.area - inter
    return float(inter / union) if union > 0 else 0.0


def iou3d(a: ObjectPose, b: ObjectPose, a_shape: Shape = Shape.CUBOID, b_shape: Shape = Shape.CUBOID) -> float:
    """Exact IoU of two upright solids: footprint intersection times vertical overlap."""
    fa, fb = footprint(a, a_shape), footprint(b, b_shape)
    a0, a1 = _vertical_range(a)
    b0, b1 = _vertical_range(b)
    overlap = max(0.0, min(a1, b1) - max(a0, b0))
    inter = fa.intersection(fb).area * overlap
    union = fa.area * (a1 - a0) + fb.area * (b1 - b0) - inter
    return float(inter / union) if union > 0 else 0.0


def monte_carlo_iou3d(a: ObjectPose, b: ObjectPose, samples: int = 1_000_000, seed: int = 0) -> float:
    """Sampling estimate of the 3D IoU of two cuboids, for cross-checking iou3d."""
    corners = np.vstack([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(samples, 3))
    in_a = a.contains(pts, tol=0.0)
    in_b = b.contains(pts, tol=0.0)
    union = int(np.count_nonzero(in_a | in_b))
    return float(np.count_nonzero(in_a & in_b) / union) if union else 0.0


def yaw_error(est_yaw: float, gt_yaw: float) -> float:
    """Absolute yaw difference in degrees, folded into [0, 45]."""
    return abs(math.degrees(float(fold_quarter(est_yaw - gt_yaw))))


def evaluate(est: ObjectPose, gt: ObjectPose, gt_shape: Shape = Shape.CUBOID) -> PoseMetrics:
    """
    Compare an estimated pose with the ground truth.
    YAE is None for cylinders, whose yaw is unobservable.
    """
    return PoseMetrics(
        cde=float(np.linalg.norm(est.t - gt.t)) * 100.0,
        yae=None if gt_shape == Shape.CYLINDER else yaw_error(est.yaw, gt.yaw),
        iou2d=iou2d(est, gt, b_shape=gt_shape),
        iou3d=iou3d(est, gt, b_shape=gt_shape),
    )


class HasPose(typing.Protocol):
    id: int
    pose: ObjectPose


def match_estimates(estimates: typing.Sequence[HasPose], scene: DeskScene, oracle: bool = False,
                    gate: float = MATCH_GATE) -> typing.Dict[int, typing.Optional[HasPose]]:
    """
    Pair ground-truth objects with estimates.
    Oracle mode pairs equal ids. Otherwise the assignment minimizing the total
    center distance is used and pairs farther apart than `gate` are discarded.
    :return: {ground-truth id: matched estimate or None}
    """
    matched: typing.Dict[int, typing.Optional[HasPose]] = {p.id: None for p in scene.primitives}
    if oracle:
        by_id = {e.id: e for e in estimates}
        for prim in scene.primitives:
            matched[prim.id] = by_id.get(prim.id)
        return matched
    if not estimates or not scene.primitives:
        return matched
    cost = np.array([[float(np.linalg.norm(e.pose.t - p.pose_gt.t)) for e in estimates] for p in scene.primitives])
    rows, cols = linear_sum_assignment(cost)
    for r, c in zip(rows, cols):
        if cost[r, c] <= gate:
            matched[scene.primitives[r].id] = estimates[c]
    return matched


def _mean(values: typing.Iterable[typing.Optional[float]]) -> typing.Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@attr.s(slots=True, frozen=True)
class MapMetrics:
    """
    Means over the ground-truth objects. Missed objects count as IoU 0 and are
    left out of the CDE and YAE means.
    """
    per_object: typing.Dict[int, typing.Optional[PoseMetrics]] = attr.ib()
    iou2d: float = attr.ib()
    iou3d: float = attr.ib()
    cde: typing.Optional[float] = attr.ib()
    yae: typing.Optional[float] = attr.ib()
    missed: int = attr.ib(default=0)

    def as_dict(self) -> typing.Dict[str, typing.Optional[float]]:
        return {'iou3d': self.iou3d, 'iou2d': self.iou2d, 'cde': self.cde, 'yae': self.yae}


def evaluate_map(estimates: typing.Any, scene: DeskScene, oracle: bool = False) -> MapMetrics:
    """
    Evaluate every ground-truth object of the scene.
    :param estimates: a GlobalObjectMap or a sequence of estimates
    """
    estimates = list(getattr(estimates, 'estimates', estimates))
    matched = match_estimates(estimates, scene, oracle)
    per_object: typing.Dict[int, typing.Optional[PoseMetrics]] = {}
    prims: typing.Dict[int, ScenePrimitive] = {p.id: p for p in scene.primitives}
    for gt_id, est in matched.items():
        prim = prims[gt_id]
        per_object[gt_id] = None if est is None else evaluate(est.pose, prim.pose_gt, prim.shape)
    found = [m for m in per_object.values() if m is not None]
    n = len(per_object)
    return MapMetrics(
        per_object=per_object,
        iou2d=float(sum(m.iou2d for m in found) / n) if n else 0.0,
        iou3d=float(sum(m.iou3d for m in found) / n) if n else 0.0,
        cde=_mean(m.cde for m in found),
        yae=_mean(m.yae for m in found),
        missed=n - len(found),
    )
