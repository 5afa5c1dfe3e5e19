"""
Ground-truth tabletop worlds: a finite desk plus upright primitives resting on it.
Scenes are immutable. They are either loaded from a JSON scene file
(`format: 1`) or generated reproducibly from a seed.
"""
import itertools
import json
import logging
import math
import pathlib
import typing

import attr
import numpy as np
from shapely.geometry import Point, Polygon, box
from shapely.geometry.base import BaseGeometry

from pyobjmap.constants import (
    DESK_HEIGHT, DESK_SIZE_X, DESK_SIZE_Y, MAX_OBJECT_COUNT, MAX_OBJECT_SIZE, MIN_OBJECT_SIZE, Shape, Spacing
)
from pyobjmap.exceptions import DomainException, PlacementException, SceneParseException, SceneValidationException
from pyobjmap.obj_types import ObjectPose
from pyobjmap.util import rectangle_corners

logger = logging.getLogger(__name__)

SCENE_FORMAT = 1
PLACEMENT_RETRIES = 200
MIN_GAP = 0.002
DESK_MARGIN = 0.02
CYLINDER_SHARE = 0.2
CONTACT_TOL = 1e-6

CUBOID_LABELS = ('box', 'book', 'carton', 'block')
CYLINDER_LABELS = ('cup', 'can', 'bottle')

Bounds = typing.Tuple[float, float, float, float]


@attr.s(slots=True, frozen=True, eq=False)
class ScenePrimitive:
    id: int = attr.ib(converter=int)
    label: str = attr.ib(converter=str)
    shape: Shape = attr.ib(converter=Shape)
    pose_gt: ObjectPose = attr.ib()

    @property
    def bottom(self) -> float:
        return float(self.pose_gt.t[2] - self.pose_gt.s[2])

    def footprint(self) -> BaseGeometry:
        """Top-view outline of the primitive."""
        pose = self.pose_gt
        if self.shape == Shape.CYLINDER:
            return Point(pose.t[0], pose.t[1]).buffer(float(pose.s[0]), quad_segs=32)
        return Polygon(rectangle_corners(pose.t, pose.s, pose.yaw))


@attr.s(slots=True, frozen=True, eq=False)
class DeskScene:
    desk_height: float = attr.ib(converter=float)
    desk_bounds: Bounds = attr.ib(converter=lambda b: tuple(float(v) for v in b))
    primitives: typing.Tuple[ScenePrimitive, ...] = attr.ib(converter=tuple)
    seed: int = attr.ib(default=0, converter=int)

    @property
    def desk_center(self) -> np.ndarray:
        x0, y0, x1, y1 = self.desk_bounds
        return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0, self.desk_height])

    @property
    def desk_corners(self) -> np.ndarray:
        """Desk corners in sequence (x0,y0), (x1,y0), (x1,y1), (x0,y1)."""
        x0, y0, x1, y1 = self.desk_bounds
        h = self.desk_height
        return np.array([[x0, y0, h], [x1, y0, h], [x1, y1, h], [x0, y1, h]])

    def get(self, object_id: int) -> typing.Optional[ScenePrimitive]:
        for prim in self.primitives:
            if prim.id == object_id:
                return prim
        return None

    def __len__(self) -> int:
        return len(self.primitives)


def validate_scene(scene: DeskScene) -> DeskScene:
    """
    Check every scene invariant. Raises SceneValidationException naming the offending object.
    """
    x0, y0, x1, y1 = scene.desk_bounds
    if not (x1 > x0 and y1 > y0):
        raise SceneValidationException("desk bounds must describe a non-empty rectangle")
    desk = box(x0, y0, x1, y1)

    seen: typing.Set[int] = set()
    for prim in scene.primitives:
        if prim.id in seen:
            raise SceneValidationException("duplicate id", prim.id)
        seen.add(prim.id)
        pose = prim.pose_gt
        if np.any(pose.s <= 0):
            raise SceneValidationException("half-extents must be strictly positive", prim.id)
        if abs(pose.theta[0]) > 1e-9 or abs(pose.theta[1]) > 1e-9:
            raise SceneValidationException("object is not placed flat on the desk", prim.id)
        if prim.shape == Shape.CYLINDER:
            if abs(pose.yaw) > 1e-12:
                raise SceneValidationException("cylinders carry yaw 0", prim.id)
            if abs(pose.s[0] - pose.s[1]) > 1e-12:
                raise SceneValidationException("cylinders need equal x/y half-extents", prim.id)
        if abs(prim.bottom - scene.desk_height) > CONTACT_TOL:
            raise SceneValidationException(
                f"bottom at {prim.bottom:.4f} m does not rest on the desk at {scene.desk_height:.4f} m", prim.id
            )
        if not desk.buffer(1e-9).contains(prim.footprint()):
            raise SceneValidationException("object lies outside the desk bounds", prim.id)

    # All primitives stand on the same plane, so overlapping footprints interpenetrate.
    for a, b in itertools.combinations(scene.primitives, 2):
        if a.footprint().intersection(b.footprint()).area > 1e-9:
            raise SceneValidationException(f"interpenetrates object {a.id}", b.id)
    return scene


def scene_to_dict(scene: DeskScene) -> typing.Dict[str, typing.Any]:
    return {
        'format': SCENE_FORMAT,
        'seed': scene.seed,
        'desk': {'height': scene.desk_height, 'bounds': list(scene.desk_bounds)},
        'objects': [
            {
                'id': p.id,
                'label': p.label,
                'shape': p.shape.value,
                't': [float(v) for v in p.pose_gt.t],
                'theta': [float(v) for v in p.pose_gt.theta],
                's': [float(v) for v in p.pose_gt.s],
            }
            for p in scene.primitives
        ],
    }


def scene_from_dict(data: typing.Dict[str, typing.Any]) -> DeskScene:
    """Build and validate a scene from its decoded JSON representation."""
    if not isinstance(data, dict):
        raise SceneParseException("scene file must contain a JSON object")
    if data.get('format') != SCENE_FORMAT:
        raise SceneParseException(f"unsupported scene format {data.get('format')!r}, expected {SCENE_FORMAT}")
    try:
        desk = data['desk']
        objects = data['objects']
        primitives = []
        for obj in objects:
            try:
                pose = ObjectPose(t=obj['t'], theta=obj.get('theta', (0.0, 0.0, 0.0)), s=obj['s'])
            except DomainException as err:
                raise SceneValidationException(str(err), obj.get('id')) from err
            except (ValueError, TypeError) as err:
                raise SceneParseException(f"object {obj.get('id')}: {err}") from err
            primitives.append(ScenePrimitive(id=obj['id'], label=obj['label'], shape=obj['shape'], pose_gt=pose))
        scene = DeskScene(
            desk_height=desk['height'],
            desk_bounds=desk['bounds'],
            primitives=primitives,
            seed=data.get('seed', 0),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as err:
        raise SceneParseException(f"malformed scene: {err!r}") from err
    return validate_scene(scene)


def load_scene(path: typing.Union[str, pathlib.Path]) -> DeskScene:
    """
    Load and validate a scene file.
    :raises SceneParseException:        the file is not a valid scene document
    :raises SceneValidationException:   a primitive violates a scene invariant
    """
    path = pathlib.Path(path)
    try:
        with path.open('r', encoding='utf-8') as fd:
            data = json.load(fd)
    except (OSError, json.JSONDecodeError) as err:
        raise SceneParseException(f"{path}: {err}") from err
    return scene_from_dict(data)


def save_scene(scene: DeskScene, path: typing.Union[str, pathlib.Path]) -> None:
    with pathlib.Path(path).open('w', encoding='utf-8') as fd:
        json.dump(scene_to_dict(scene), fd, indent=2)
        fd.write('\n')


class _Placer:
    """Rejection sampler keeping track of the footprints placed so far."""

    def __init__(self, rng: np.random.Generator, bounds: Bounds, desk_height: float,
                 size_range: typing.Tuple[float, float]) -> None:
        self.rng = rng
        self.bounds = bounds
        self.desk_height = desk_height
        self.size_range = size_range
        self.desk = box(*bounds)
        self.placed: typing.List[ScenePrimitive] = []

    def random_body(self) -> typing.Tuple[Shape, str, np.ndarray]:
        lo, hi = self.size_range
        if self.rng.random() < CYLINDER_SHARE:
            radius = self.rng.uniform(lo, hi) / 2.0
            half_height = self.rng.uniform(lo, hi) / 2.0
            label = CYLINDER_LABELS[int(self.rng.integers(len(CYLINDER_LABELS)))]
            return Shape.CYLINDER, label, np.array([radius, radius, half_height])
        label = CUBOID_LABELS[int(self.rng.integers(len(CUBOID_LABELS)))]
        return Shape.CUBOID, label, self.rng.uniform(lo, hi, size=3) / 2.0

    def fits(self, prim: ScenePrimitive) -> bool:
        fp = prim.footprint()
        if not self.desk.buffer(-DESK_MARGIN).contains(fp):
            return False
        return all(fp.distance(other.footprint()) >= MIN_GAP for other in self.placed)

    def make(self, object_id: int, shape: Shape, label: str, s: np.ndarray, x: float, y: float,
             yaw: float) -> ScenePrimitive:
        if shape == Shape.CYLINDER:
            yaw = 0.0
        pose = ObjectPose.upright((x, y, self.desk_height + s[2]), yaw, s)
        return ScenePrimitive(id=object_id, label=label, shape=shape, pose_gt=pose)

    def place_free(self, object_id: int, region: Bounds) -> ScenePrimitive:
        shape, label, s = self.random_body()
        for _ in range(PLACEMENT_RETRIES):
            x = self.rng.uniform(region[0], region[2])
            y = self.rng.uniform(region[1], region[3])
            yaw = self.rng.uniform(-math.pi / 2, math.pi / 2)
            prim = self.make(object_id, shape, label, s, x, y, yaw)
            if self.fits(prim):
                return prim
        raise PlacementException(
            f"could not place object {object_id} after {PLACEMENT_RETRIES} attempts; desk too crowded"
        )

    def place_partner(self, object_id: int, anchor: ScenePrimitive) -> typing.Optional[ScenePrimitive]:
        """
        Place a cuboid diagonally off a corner of an axis-aligned anchor, turned by 45 degrees,
        with a gap below one half-extent. The top-view bounding boxes of the pair overlap
        while the bodies stay apart.
        """
        if anchor.shape != Shape.CUBOID or abs(anchor.pose_gt.yaw) > 1e-12:
            return None
        lo, hi = self.size_range
        a = anchor.pose_gt
        for _ in range(PLACEMENT_RETRIES // 4):
            s = self.rng.uniform(lo, hi, size=3) / 2.0
            sx, sy = (float(v) for v in self.rng.choice([-1.0, 1.0], size=2))
            gap = self.rng.uniform(0.1, 0.5) * float(min(s[1], a.s[0], a.s[1]))
            corner = np.array([a.t[0] + sx * a.s[0], a.t[1] + sy * a.s[1]])
            direction = np.array([sx, sy]) / math.sqrt(2.0)
            center = corner + (s[0] + gap) * direction
            yaw = math.atan2(sy, sx)
            label = CUBOID_LABELS[int(self.rng.integers(len(CUBOID_LABELS)))]
            prim = self.make(object_id, Shape.CUBOID, label, s, float(center[0]), float(center[1]), yaw)
            if self.fits(prim):
                return prim
        return None


def generate_scene(seed: int, object_count: typing.Tuple[int, int] = (5, 8),
                   spacing: typing.Union[Spacing, str] = Spacing.SPARSE,
                   desk_size: typing.Tuple[float, float] = (DESK_SIZE_X, DESK_SIZE_Y),
                   desk_height: float = DESK_HEIGHT,
                   size_range: typing.Tuple[float, float] = (MIN_OBJECT_SIZE, MAX_OBJECT_SIZE)) -> DeskScene:
    """
    Generate a random but reproducible scene. The result is a pure function of the arguments.

    :param seed:            random seed
    :param object_count:    inclusive (min, max) range of objects, within [1, 16]
    :param spacing:         sparse: anywhere on the desk;
                            clustered: every second object placed next to the previous one;
                            uneven: all objects in one half of the desk
    :raises PlacementException: the desk cannot hold the requested objects
    """
    lo, hi = object_count
    if not 1 <= lo <= hi <= MAX_OBJECT_COUNT:
        raise DomainException(f"object count range must lie within [1, {MAX_OBJECT_COUNT}], got {object_count}")
    spacing = Spacing(spacing)
    rng = np.random.default_rng(seed)
    count = int(rng.integers(lo, hi + 1))

    dx, dy = desk_size
    bounds: Bounds = (-dx / 2.0, -dy / 2.0, dx / 2.0, dy / 2.0)
    placer = _Placer(rng, bounds, desk_height, size_range)

    region = bounds
    if spacing == Spacing.UNEVEN:
        if rng.random() < 0.5:
            region = (bounds[0], bounds[1], bounds[2], 0.0)
        else:
            region = (bounds[0], 0.0, bounds[2], bounds[3])

    for object_id in range(1, count + 1):
        prim: typing.Optional[ScenePrimitive] = None
        if spacing == Spacing.CLUSTERED and object_id % 2 == 0 and placer.placed:
            prim = placer.place_partner(object_id, placer.placed[-1])
        if prim is None:
            if spacing == Spacing.CLUSTERED and object_id % 2 == 1:
                prim = _place_anchor(placer, object_id, region)
            else:
                prim = placer.place_free(object_id, region)
        placer.placed.append(prim)

    scene = DeskScene(desk_height=desk_height, desk_bounds=bounds, primitives=placer.placed, seed=seed)
    logger.debug("generated scene seed=%d with %d objects (%s)", seed, count, spacing)
    return validate_scene(scene)


def _place_anchor(placer: _Placer, object_id: int, region: Bounds) -> ScenePrimitive:
    """An axis-aligned cuboid that a partner can be placed against."""
    lo, hi = placer.size_range
    for _ in range(PLACEMENT_RETRIES):
        s = placer.rng.uniform(lo, hi, size=3) / 2.0
        x = placer.rng.uniform(region[0], region[2])
        y = placer.rng.uniform(region[1], region[3])
        label = CUBOID_LABELS[int(placer.rng.integers(len(CUBOID_LABELS)))]
        prim = placer.make(object_id, Shape.CUBOID, label, s, x, y, 0.0)
        if placer.fits(prim):
            return prim
    raise PlacementException(
        f"could not place object {object_id} after {PLACEMENT_RETRIES} attempts; desk too crowded"
    )
