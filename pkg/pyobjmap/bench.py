"""
Benchmark harness.

run_benchmark explores every configured scene once per strategy (and
repetition) on identical seeds and evaluates the final maps against ground
truth. The report has one row per scene plus a Mean row; its columns are the
four accuracy metrics, each split by strategy.
"""
import csv
import io
import logging
import pathlib
import typing

import attr

from pyobjmap.config import BenchmarkConfig, SceneSource, load_config
from pyobjmap.constants import Strategy
from pyobjmap.exceptions import ObjMapBaseException
from pyobjmap.explore import ExplorationOptions, ExplorationResult, run_exploration
from pyobjmap.export import write_run
from pyobjmap.metrics import MapMetrics, evaluate_map
from pyobjmap.scene import DeskScene
from pyobjmap.sensor import NoiseModel

logger = logging.getLogger(__name__)

# Report metrics in column order, with their heading, number format and whether larger is better
METRICS: typing.Tuple[typing.Tuple[str, str, str, bool], ...] = (
    ('iou3d', '3D IoU', '.4f', True),
    ('iou2d', '2D IoU', '.4f', True),
    ('cde', 'CDE', '.4f', False),
    ('yae', 'YAE', '.1f', False),
)
MEAN_ROW = 'Mean'
MISSING = 'n/a'


@attr.s(slots=True, frozen=True)
class CellResult:
    """Outcome of one (scene, strategy, repetition) run."""
    scene: str = attr.ib()
    strategy: Strategy = attr.ib()
    repetition: int = attr.ib()
    seed: int = attr.ib()
    metrics: typing.Optional[MapMetrics] = attr.ib(default=None)
    error: typing.Optional[str] = attr.ib(default=None)
    steps: int = attr.ib(default=0)
    terminated: typing.Optional[str] = attr.ib(default=None)

    @property
    def failed(self) -> bool:
        return self.metrics is None


def _mean(values: typing.Iterable[typing.Optional[float]]) -> typing.Optional[float]:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


@attr.s(slots=True)
class BenchmarkReport:
    config: BenchmarkConfig = attr.ib()
    scenes: typing.List[str] = attr.ib(factory=list)
    cells: typing.List[CellResult] = attr.ib(factory=list)

    @property
    def strategies(self) -> typing.Tuple[Strategy, ...]:
        return self.config.strategies

    @property
    def failures(self) -> typing.List[CellResult]:
        return [c for c in self.cells if c.failed]

    def value(self, scene: str, strategy: Strategy, metric: str) -> typing.Optional[float]:
        """Mean of a metric over the successful repetitions of one cell, None if there are none."""
        return _mean(
            c.metrics.as_dict()[metric] for c in self.cells
            if c.scene == scene and c.strategy == strategy and c.metrics is not None
        )

    def mean(self, strategy: Strategy, metric: str) -> typing.Optional[float]:
        """Arithmetic mean of the scene rows, skipping gaps."""
        return _mean(self.value(scene, strategy, metric) for scene in self.scenes)

    def rows(self) -> typing.Iterator[typing.Tuple[str, typing.Dict[typing.Tuple[str, Strategy], typing.Optional[float]]]]:
        for scene in self.scenes:
            yield scene, {(m, s): self.value(scene, s, m) for m, _, _, _ in METRICS for s in self.strategies}
        yield MEAN_ROW, {(m, s): self.mean(s, m) for m, _, _, _ in METRICS for s in self.strategies}

    def metadata(self) -> typing.Dict[str, typing.Any]:
        return {
            'seed': self.config.seed,
            'repetitions': self.config.repetitions,
            'noise': str(self.config.noise),
            'budget': self.config.budget,
            'candidates': self.config.n_candidates,
            'lambda': self.config.lam,
            'oracle_association': self.config.oracle_association,
        }


def _columns(strategies: typing.Sequence[Strategy]) -> typing.List[str]:
    return [f"{heading} {s.column}" for _, heading, _, _ in METRICS for s in strategies]


def _format(value: typing.Optional[float], fmt: str) -> str:
    return MISSING if value is None else format(value, fmt)


def to_csv(report: BenchmarkReport) -> str:
    """The report table as CSV. Holds nothing that differs between identical runs."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(['scene'] + _columns(report.strategies))
    for name, values in report.rows():
        writer.writerow([name] + [_format(values[(m, s)], fmt)
                                  for m, _, fmt, _ in METRICS for s in report.strategies])
    return buf.getvalue()


def _best(values: typing.Dict[Strategy, typing.Optional[float]], higher: bool) -> typing.Optional[float]:
    present = [v for v in values.values() if v is not None]
    if len(present) < 2:
        return None
    return max(present) if higher else min(present)


def format_table(report: BenchmarkReport) -> str:
    """
    Fixed-width terminal table. The best value of each metric and row is marked with '*'.
    """
    strategies = report.strategies
    header = [''] + [s.column for _ in METRICS for s in strategies]
    groups = [''] + [heading if i == 0 else '' for _, heading, _, _ in METRICS for i in range(len(strategies))]
    table = [groups, header]
    for name, values in report.rows():
        line = [name]
        for metric, _, fmt, higher in METRICS:
            best = _best({s: values[(metric, s)] for s in strategies}, higher)
            for s in strategies:
                v = values[(metric, s)]
                mark = '*' if best is not None and v is not None and format(v, fmt) == format(best, fmt) else ''
                line.append(_format(v, fmt) + mark)
        table.append(line)

    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    out = io.StringIO()
    for i, row in enumerate(table):
        out.write('  '.join(cell.ljust(w) if j == 0 else cell.rjust(w) for j, (cell, w) in enumerate(zip(row, widths))))
        out.write('\n')
        if i == 1:
            out.write('-' * (sum(widths) + 2 * (len(widths) - 1)) + '\n')
    meta = report.metadata()
    out.write('\n' + ', '.join(f"{k}={v}" for k, v in meta.items()) + '\n')
    for cell in report.failures:
        out.write(f"failed: {cell.scene} {cell.strategy} rep {cell.repetition}: {cell.error}\n")
    return out.getvalue()


def _options(config: BenchmarkConfig) -> ExplorationOptions:
    return ExplorationOptions(n_candidates=config.n_candidates, lam=config.lam,
                              oracle_association=config.oracle_association, track_metrics=True)


def _load(source: SceneSource) -> typing.Tuple[typing.Optional[DeskScene], typing.Optional[str]]:
    try:
        return source.load(), None
    except ObjMapBaseException as err:
        logger.warning("scene %s could not be loaded: %s", source.name, err)
        return None, str(err)


def _unique_names(sources: typing.Sequence[SceneSource]) -> typing.List[str]:
    names: typing.List[str] = []
    for source in sources:
        name, n = source.name, 2
        while name in names:
            name, n = f"{source.name}-{n}", n + 1
        names.append(name)
    return names


def run_benchmark(config: typing.Union[BenchmarkConfig, str, pathlib.Path],
                  out_dir: typing.Optional[typing.Union[str, pathlib.Path]] = None) -> BenchmarkReport:
    """
    Run every (scene, strategy, repetition) cell. Repetition r uses seed + r for all
    strategies. A failing cell is logged and left as a gap; the others still run.
    When `out_dir` is given, per-run artifacts are written there as the cells finish.
    """
    if not isinstance(config, BenchmarkConfig):
        config = load_config(config)
    noise = NoiseModel.preset(config.noise)
    options = _options(config)
    report = BenchmarkReport(config=config, scenes=_unique_names(config.scenes))

    for name, source in zip(report.scenes, config.scenes):
        scene, load_error = _load(source)
        for rep in range(config.repetitions):
            seed = config.seed + rep
            for strategy in config.strategies:
                if scene is None:
                    report.cells.append(CellResult(name, strategy, rep, seed, error=load_error))
                    continue
                report.cells.append(_run_cell(name, scene, strategy, rep, seed, config, noise, options, out_dir))
    return report


def _run_cell(name: str, scene: DeskScene, strategy: Strategy, rep: int, seed: int, config: BenchmarkConfig,
              noise: NoiseModel, options: ExplorationOptions,
              out_dir: typing.Optional[typing.Union[str, pathlib.Path]]) -> CellResult:
    logger.info("running %s with %s (repetition %d, seed %d)", name, strategy, rep, seed)
    try:
        result: ExplorationResult = run_exploration(scene, strategy, config.budget, noise, seed, options)
        metrics = evaluate_map(result.map, scene, config.oracle_association)
    except ObjMapBaseException as err:
        logger.warning("%s with %s failed: %s", name, strategy, err)
        return CellResult(name, strategy, rep, seed, error=str(err))

    if out_dir is not None:
        write_run(result, pathlib.Path(out_dir) / 'runs', f"{name}.{strategy}.r{rep}", ply=config.write_ply)
    return CellResult(name, strategy, rep, seed, metrics=metrics, steps=len(result.steps),
                      terminated=result.terminated)


def write_outputs(report: BenchmarkReport, out_dir: typing.Union[str, pathlib.Path]) -> typing.Tuple[
        pathlib.Path, pathlib.Path]:
    """Write report.csv and report.txt and return their paths."""
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out_dir / 'report.csv', out_dir / 'report.txt'
    csv_path.write_text(to_csv(report), encoding='utf-8')
    txt_path.write_text(format_table(report), encoding='utf-8')
    return csv_path, txt_path
