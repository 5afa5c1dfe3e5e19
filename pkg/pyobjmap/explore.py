"""
Object-driven exploration.

Every object is described by a feature vector built from its surface grid
entropy, its occupied ratio, how much it overlaps neighbours in a candidate
view, and how stable its estimated volume has been. The utility of a view
sums the remaining uncertainty of the objects it would see; objects whose
active flag dropped to 0 no longer contribute. Exploration ends when no
object is active any more or the view budget is used up.

Baselines: randomized views, a top-down lawnmower (Boustrophedon) coverage
path, and the four-corner initialization alone.
"""
import dataclasses
import logging
import math
import typing

import attr
import numpy as np
from scipy.stats import norm

from pyobjmap.constants import (
    CORNER_INSET, DEFAULT_BUDGET, DEFAULT_CANDIDATES, DEFAULT_LAMBDA, ENTROPY_THRESHOLD, GRID_RESOLUTION,
    INIT_VIEW_COUNT, OCCUPIED_RATIO_THRESHOLD, SHELL_ELEVATION_DEG, SHELL_RADIUS, TOP_VIEW_HEIGHT,
    VOLUME_PROBABILITY_THRESHOLD,
    CellStatus, Gain, Strategy, ViewKind
)
from pyobjmap.exceptions import DomainException, ExplorationException, ObjMapBaseException
from pyobjmap.filter import FilterChain, default_chain
from pyobjmap.grid import completeness
from pyobjmap.metrics import MapMetrics, evaluate_map
from pyobjmap.obj_types import CameraIntrinsics, CameraPose
from pyobjmap.objmap import GlobalObjectMap, MapEvent, ObjectEstimate, associate, integrate
from pyobjmap.pose import MIN_INIT_POINTS, SolverOptions, optimize_pose
from pyobjmap.scene import Bounds, DeskScene
from pyobjmap.sensor import NoiseModel, VisibleSet, predicted_visibility, render
from pyobjmap.util import look_at_rotation

logger = logging.getLogger(__name__)

PEAK_DENSITY = float(norm.pdf(0.0))
MIN_VOLUME_STD = 1e-6

# Salts keeping the random streams of one step independent
_RENDER_STREAM = 1
_CANDIDATE_STREAM = 2
_RANDOM_STREAM = 3


def _unit_interval(instance: typing.Any, attribute: typing.Any, value: float) -> None:
    if not -1e-12 <= value <= 1.0 + 1e-12:
        raise DomainException(f"{attribute.name} must lie in [0, 1], got {value}")


@attr.s(slots=True, frozen=True)
class FeatureVector:
    h_obj: float = attr.ib()
    h_bar: float = attr.ib(validator=_unit_interval)
    r_o: float = attr.ib(validator=_unit_interval)
    r_iou: float = attr.ib(validator=_unit_interval)
    v_bar: float = attr.ib()
    s_flag: int = attr.ib(default=1)


@attr.s(slots=True, frozen=True)
class UncertaintyTerms:
    h_iou: float = attr.ib()
    h_v: float = attr.ib()
    p_v: float = attr.ib()


@attr.s(slots=True, frozen=True, eq=False)
class CandidateView:
    pose: CameraPose = attr.ib()
    kind: ViewKind = attr.ib(converter=ViewKind)

    @property
    def eye(self) -> np.ndarray:
        return self.pose.translation

    @classmethod
    def looking_at(cls, eye: typing.Sequence[float], target: typing.Sequence[float],
                   kind: ViewKind) -> "CandidateView":
        return cls(pose=CameraPose(rotation=look_at_rotation(eye, target), translation=eye), kind=kind)


@attr.s(slots=True, frozen=True)
class ExplorationOptions:
    n_candidates: int = attr.ib(default=DEFAULT_CANDIDATES)
    per_target: int = attr.ib(default=4)
    lam: float = attr.ib(default=DEFAULT_LAMBDA)
    gain: Gain = attr.ib(default=Gain.OBJECT_DRIVEN, converter=Gain)
    oracle_association: bool = attr.ib(default=False)
    intrinsics: CameraIntrinsics = attr.ib(factory=CameraIntrinsics)
    solver: SolverOptions = attr.ib(factory=lambda: SolverOptions(analytic_jacobian=True))
    resolution: float = attr.ib(default=GRID_RESOLUTION)
    # Evaluate the map against ground truth after every view
    track_metrics: bool = attr.ib(default=True)

    @n_candidates.validator
    def _check_candidates(self, attribute: typing.Any, value: int) -> None:
        if value < 1:
            raise DomainException("at least one candidate view is required")


@dataclasses.dataclass
class ExplorationState:
    """Progress of one run. `step` counts executed views, initialization included."""
    strategy: Strategy
    budget: int = DEFAULT_BUDGET
    step: int = 0
    trajectory: typing.List[CandidateView] = dataclasses.field(default_factory=list)

    @property
    def max_steps(self) -> int:
        return self.budget + INIT_VIEW_COUNT

    @property
    def initializing(self) -> bool:
        return self.step < INIT_VIEW_COUNT


@dataclasses.dataclass
class ObjectStatus:
    h_bar: float
    r_o: float
    p_v: float
    s_flag: int


@dataclasses.dataclass
class StepRecord:
    step: int
    strategy: Strategy
    kind: ViewKind
    camera: CameraPose
    utility: typing.Optional[float]
    detections: int
    objects: typing.Dict[int, ObjectStatus] = dataclasses.field(default_factory=dict)
    metrics: typing.Optional[MapMetrics] = None


@attr.s(slots=True, frozen=True, eq=False)
class ExplorationResult:
    map: GlobalObjectMap = attr.ib()
    trajectory: typing.Tuple[CandidateView, ...] = attr.ib(converter=tuple)
    steps: typing.Tuple[StepRecord, ...] = attr.ib(converter=tuple)
    # 'complete' (no active object left), 'budget' or 'init_only'
    terminated: str = attr.ib()

    @property
    def metrics(self) -> typing.List[typing.Optional[MapMetrics]]:
        return [s.metrics for s in self.steps]


def derive_seed(seed: int, step: int, stream: int) -> int:
    """An independent, reproducible seed for one random stream of one step."""
    return int(np.random.SeedSequence([seed, step, stream]).generate_state(1)[0])


def _desk_center(bounds: Bounds, desk_height: float) -> np.ndarray:
    return np.array([(bounds[0] + bounds[2]) / 2.0, (bounds[1] + bounds[3]) / 2.0, desk_height])


def _shell_eye(rng: np.random.Generator, center: np.ndarray) -> np.ndarray:
    radius = rng.uniform(*SHELL_RADIUS)
    elevation = math.radians(rng.uniform(*SHELL_ELEVATION_DEG))
    azimuth = rng.uniform(0.0, 2.0 * math.pi)
    offset = radius * np.array([math.cos(elevation) * math.cos(azimuth),
                                math.cos(elevation) * math.sin(azimuth),
                                math.sin(elevation)])
    return center + offset  # type: ignore


def candidate_views(bounds: Bounds, desk_height: float, n: int, seed: int,
                    targets: typing.Sequence[np.ndarray] = (), per_target: int = 4) -> typing.List[CandidateView]:
    """
    n views on the upper hemisphere shell around the desk center, each looking at it,
    followed by `per_target` views on a shell around every target point, looking at that point.
    """
    if n < 1:
        raise DomainException("n must be at least 1")
    rng = np.random.default_rng(seed)
    center = _desk_center(bounds, desk_height)
    views = [CandidateView.looking_at(_shell_eye(rng, center), center, ViewKind.HEMISPHERE) for _ in range(n)]
    for target in targets:
        target = np.asarray(target, dtype=float)
        for _ in range(per_target):
            views.append(CandidateView.looking_at(_shell_eye(rng, target), target, ViewKind.HEMISPHERE))
    return views


def corner_views(bounds: Bounds, desk_height: float, height: float = TOP_VIEW_HEIGHT,
                 inset: float = CORNER_INSET) -> typing.List[CandidateView]:
    """
    Four top views, one above each (inset) desk corner, in the order
    (x0, y0), (x1, y0), (x1, y1), (x0, y1). Each looks half way towards the desk center.
    """
    x0, y0, x1, y1 = bounds
    center = _desk_center(bounds, desk_height)
    corners = [(x0 + inset, y0 + inset), (x1 - inset, y0 + inset), (x1 - inset, y1 - inset), (x0 + inset, y1 - inset)]
    views = []
    for cx, cy in corners:
        ground = np.array([cx, cy, desk_height])
        views.append(CandidateView.looking_at(ground + [0.0, 0.0, height], (ground + center) / 2.0,
                                              ViewKind.CORNER_INIT))
    return views


def coverage_cells(bounds: Bounds, intr: CameraIntrinsics, height: float = TOP_VIEW_HEIGHT) -> typing.List[
        typing.Tuple[float, float]]:
    """
    Footprint-grid cell centers in Boustrophedon order. The desk is split into
    columns one image footprint wide; rows alternate direction.
    """
    x0, y0, x1, y1 = bounds
    width, depth = intr.footprint(height)
    nx = max(1, math.ceil((x1 - x0) / width - 1e-9))
    ny = max(1, math.ceil((y1 - y0) / depth - 1e-9))
    xs = [x0 + (i + 0.5) * (x1 - x0) / nx for i in range(nx)]
    ys = [y0 + (j + 0.5) * (y1 - y0) / ny for j in range(ny)]
    cells = []
    for j, y in enumerate(ys):
        row = xs if j % 2 == 0 else list(reversed(xs))
        cells.extend((x, y) for x in row)
    return cells


def coverage_path(bounds: Bounds, desk_height: float, intr: CameraIntrinsics,
                  height: float = TOP_VIEW_HEIGHT) -> typing.List[CandidateView]:
    """Straight-down views over every coverage cell."""
    return [
        CandidateView.looking_at((x, y, desk_height + height), (x, y, desk_height), ViewKind.COVERAGE)
        for x, y in coverage_cells(bounds, intr, height)
    ]


def volume_probability(history: typing.Sequence[float]) -> float:
    """
    Peak-normalized standard normal density of the latest volume's z-score within the history.
    A constant history gives 1.
    :raises DomainException: empty history
    """
    if len(history) == 0:
        raise DomainException("volume history is empty")
    values = np.asarray(history, dtype=float)
    std = max(float(np.std(values)), MIN_VOLUME_STD)
    z = (values[-1] - float(np.mean(values))) / std
    return float(norm.pdf(z) / PEAK_DENSITY)


def _plogp(p: float) -> float:
    return 0.0 if p <= 0.0 else -p * math.log2(p)


def uncertainty_terms(x: FeatureVector, history: typing.Sequence[float]) -> UncertaintyTerms:
    """
    H_IoU = -p log2 p with p = R_IoU / 2, and H_V = -p_V log2 p_V with p_V from volume_probability.
    :raises DomainException: empty history
    """
    p_v = volume_probability(history)
    return UncertaintyTerms(h_iou=_plogp(x.r_iou / 2.0), h_v=_plogp(p_v), p_v=p_v)


def active_flag(x: FeatureVector, p_v: float) -> int:
    """0 once the object is explored: (H_bar < 0.5 or R_o > 0.5) and p_V > 0.8, else 1."""
    explored = (x.h_bar < ENTROPY_THRESHOLD or x.r_o > OCCUPIED_RATIO_THRESHOLD) and p_v > VOLUME_PROBABILITY_THRESHOLD
    return 0 if explored else 1


# Per object id: the view-independent part of its feature vector and its volume history
FeatureCache = typing.Dict[int, typing.Tuple[FeatureVector, typing.List[float]]]


def feature_vector(est: ObjectEstimate, r_iou: float = 0.0,
                   cache: typing.Optional[FeatureCache] = None) -> typing.Tuple[FeatureVector, UncertaintyTerms]:
    """
    Feature vector of an estimate as seen in a view with the given R_IoU.
    Only R_IoU depends on the view; pass a cache to score many views of an unchanged map.
    """
    if cache is not None and est.id in cache:
        base, history = cache[est.id]
    else:
        comp = completeness(est.grids)
        history = est.normalized_volumes or [1.0]
        base = FeatureVector(h_obj=comp.h_obj, h_bar=comp.h_bar, r_o=comp.r_o, r_iou=0.0, v_bar=history[-1])
        if cache is not None:
            cache[est.id] = (base, history)
    x = attr.evolve(base, r_iou=r_iou)
    terms = uncertainty_terms(x, history)
    return attr.evolve(x, s_flag=active_flag(x, terms.p_v)), terms


def _object_gain(x: FeatureVector, terms: UncertaintyTerms, lam: float) -> float:
    return ((1.0 - x.r_o) * x.h_obj + lam * (terms.h_iou + terms.h_v)) * x.s_flag


def utility(obj_map: GlobalObjectMap, view: CandidateView, intr: CameraIntrinsics = CameraIntrinsics(),
            lam: float = DEFAULT_LAMBDA, gain: Gain = Gain.OBJECT_DRIVEN,
            visible: typing.Optional[VisibleSet] = None, cache: typing.Optional[FeatureCache] = None) -> float:
    """
    Information gain of a view, summed over the objects it is predicted to see.
    OBJECT_DRIVEN: ((1 - R_o) H_obj + lam (H_IoU + H_V)) s(x) per object.
    UNKNOWN_CELLS: the number of visible cells whose status is still unknown.
    """
    if visible is None:
        visible = predicted_visibility(obj_map, view.pose, intr)
    total = 0.0
    for object_id, seen in visible.items():
        est = obj_map.get(object_id)
        if est is None:
            continue
        if gain == Gain.UNKNOWN_CELLS:
            for face, mask in seen.cells.items():
                unknown = est.grids[face].status.ravel() == CellStatus.UNKNOWN.value
                total += float(np.count_nonzero(mask & unknown))
            continue
        x, terms = feature_vector(est, min(1.0, seen.r_iou), cache)
        total += _object_gain(x, terms, lam)
    return total


def score_candidates(obj_map: GlobalObjectMap, candidates: typing.Sequence[CandidateView],
                     intr: CameraIntrinsics = CameraIntrinsics(), lam: float = DEFAULT_LAMBDA,
                     gain: Gain = Gain.OBJECT_DRIVEN) -> typing.List[float]:
    cache: FeatureCache = {}
    return [utility(obj_map, view, intr, lam, gain, cache=cache) for view in candidates]


def select_nbv(obj_map: GlobalObjectMap, candidates: typing.Sequence[CandidateView],
               intr: CameraIntrinsics = CameraIntrinsics(), lam: float = DEFAULT_LAMBDA,
               gain: Gain = Gain.OBJECT_DRIVEN) -> typing.Tuple[CandidateView, float]:
    """
    The candidate with the highest utility and that utility. Ties go to the lowest index.
    :raises DomainException: no candidates
    """
    if not candidates:
        raise DomainException("select_nbv needs at least one candidate")
    scores = score_candidates(obj_map, candidates, intr, lam, gain)
    best = 0
    for i, score in enumerate(scores):
        if score > scores[best]:
            best = i
    return candidates[best], scores[best]


def _targets(obj_map: GlobalObjectMap) -> typing.List[np.ndarray]:
    return [est.pose.t for est in obj_map.estimates if not est.fully_explored]


def strategy_step(state: ExplorationState, obj_map: GlobalObjectMap, bounds: Bounds, desk_height: float,
                  seed: int, options: ExplorationOptions = ExplorationOptions()) -> typing.Tuple[
        typing.Optional[CandidateView], typing.Optional[float]]:
    """
    The next view of a strategy and its utility (None for strategies without one).
    Returns (None, None) when the strategy is done or the budget is spent.
    """
    if state.initializing:
        return corner_views(bounds, desk_height)[state.step], None
    if state.strategy == Strategy.INIT_ONLY or state.step >= state.max_steps:
        return None, None

    if state.strategy == Strategy.COVERAGE:
        path = coverage_path(bounds, desk_height, options.intrinsics)
        return path[(state.step - INIT_VIEW_COUNT) % len(path)], None

    candidate_seed = derive_seed(seed, state.step, _CANDIDATE_STREAM)
    if state.strategy == Strategy.RANDOMIZED:
        views = candidate_views(bounds, desk_height, options.n_candidates, candidate_seed)
        rng = np.random.default_rng(derive_seed(seed, state.step, _RANDOM_STREAM))
        view = views[int(rng.integers(len(views)))]
        return attr.evolve(view, kind=ViewKind.RANDOM), None

    views = candidate_views(bounds, desk_height, options.n_candidates, candidate_seed,
                            _targets(obj_map), options.per_target)
    gain = Gain.UNKNOWN_CELLS if state.strategy == Strategy.UNKNOWN_GAIN else options.gain
    return select_nbv(obj_map, views, options.intrinsics, options.lam, gain)


def _refine(obj_map: GlobalObjectMap, est: ObjectEstimate, chain: FilterChain, solver: SolverOptions) -> None:
    points = chain.filter(est.points, est.pose)
    if len(points) < MIN_INIT_POINTS:
        points = est.points
    result = optimize_pose(est.pose, est.slices, obj_map.plane_for(est.points), solver, points=points)
    est.last_solve = result
    obj_map.set_pose(est, result.pose)
    est.record_volume()


def _update_flags(obj_map: GlobalObjectMap) -> typing.Dict[int, ObjectStatus]:
    status = {}
    for est in obj_map.estimates:
        x, terms = feature_vector(est)
        est.fully_explored = x.s_flag == 0
        status[est.id] = ObjectStatus(h_bar=x.h_bar, r_o=x.r_o, p_v=terms.p_v, s_flag=x.s_flag)
    return status


def run_exploration(scene: DeskScene, strategy: typing.Union[Strategy, str], budget: int = DEFAULT_BUDGET,
                    noise: NoiseModel = NoiseModel(), seed: int = 0,
                    options: ExplorationOptions = ExplorationOptions()) -> ExplorationResult:
    """
    Run one exploration: four corner views, then views chosen by the strategy until
    no object is active any more or `budget` further views were executed.
    Each view is rendered, associated, integrated, filtered and optimized.

    :raises ExplorationException: a step failed; the exception names the step
    """
    strategy = Strategy(strategy)
    state = ExplorationState(strategy=strategy, budget=budget)
    obj_map = GlobalObjectMap(resolution=options.resolution, seed=seed)
    chain = default_chain(obj_map.resolution)
    touched: typing.Set[int] = set()
    obj_map.register_callback(MapEvent.UPDATED, lambda est: touched.add(est.id))
    steps: typing.List[StepRecord] = []
    terminated = 'budget'

    while True:
        try:
            view, score = strategy_step(state, obj_map, scene.desk_bounds, scene.desk_height, seed, options)
            if view is None:
                terminated = 'init_only' if strategy == Strategy.INIT_ONLY else 'budget'
                break
            obs = render(scene, view.pose, options.intrinsics, noise, derive_seed(seed, state.step, _RENDER_STREAM),
                         reveal_ids=options.oracle_association)
            verdicts = associate(obj_map, obs, options.oracle_association)
            touched.clear()
            integrate(obj_map, obs, verdicts)
            for object_id in sorted(touched):
                est = obj_map.get(object_id)
                assert est is not None
                _refine(obj_map, est, chain, options.solver)
            status = _update_flags(obj_map)
            metrics = evaluate_map(obj_map, scene, options.oracle_association) if options.track_metrics else None
        except ObjMapBaseException as err:
            if isinstance(err, ExplorationException):
                raise
            raise ExplorationException(str(err), state.step) from err
        except (ValueError, np.linalg.LinAlgError) as err:
            raise ExplorationException(str(err), state.step) from err

        state.trajectory.append(view)
        steps.append(StepRecord(step=state.step + 1, strategy=strategy, kind=view.kind, camera=view.pose,
                                utility=score, detections=len(obs.detections), objects=status, metrics=metrics))
        state.step += 1
        logger.info("%s step %d: %d detection(s), %d object(s), %d active", strategy, state.step,
                    len(obs.detections), len(obj_map), sum(s.s_flag for s in status.values()))

        if strategy != Strategy.INIT_ONLY and not state.initializing and all(
                s.s_flag == 0 for s in status.values()):
            terminated = 'complete'
            break

    return ExplorationResult(map=obj_map, trajectory=state.trajectory, steps=steps, terminated=terminated)
