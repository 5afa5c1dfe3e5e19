import csv
import io
import pathlib
import tempfile
import unittest

from pyobjmap.bench import (
    MEAN_ROW, MISSING, BenchmarkReport, CellResult, format_table, run_benchmark, to_csv, write_outputs
)
from pyobjmap.config import BenchmarkConfig, SceneSource, load_config
from pyobjmap.constants import Strategy
from pyobjmap.metrics import MapMetrics

FIXTURES = pathlib.Path(__file__).parent / 'fixtures'
STRATEGIES = (Strategy.OBJECT_DRIVEN, Strategy.COVERAGE)


def metrics(iou, cde, yae=1.0):
    return MapMetrics(per_object={}, iou2d=iou, iou3d=iou * 0.9, cde=cde, yae=yae)


def synthetic_report():
    config = BenchmarkConfig(scenes=[SceneSource(seed=1), SceneSource(seed=2)], strategies=STRATEGIES)
    cells = [
        CellResult('a', Strategy.OBJECT_DRIVEN, 0, 0, metrics(0.8, 1.0)),
        CellResult('a', Strategy.COVERAGE, 0, 0, metrics(0.6, 2.0)),
        CellResult('b', Strategy.OBJECT_DRIVEN, 0, 0, metrics(0.6, 3.0)),
        CellResult('b', Strategy.COVERAGE, 0, 0, error='solver diverged'),
    ]
    return BenchmarkReport(config=config, scenes=['a', 'b'], cells=cells)


def read_csv(text):
    return list(csv.reader(io.StringIO(text)))


class TestReport(unittest.TestCase):

    def test_values_and_means(self):
        report = synthetic_report()
        self.assertAlmostEqual(report.value('a', Strategy.OBJECT_DRIVEN, 'iou2d'), 0.8)
        self.assertIsNone(report.value('b', Strategy.COVERAGE, 'iou2d'))
        self.assertAlmostEqual(report.mean(Strategy.OBJECT_DRIVEN, 'cde'), 2.0)
        # gaps are skipped
        self.assertAlmostEqual(report.mean(Strategy.COVERAGE, 'cde'), 2.0)
        self.assertEqual(len(report.failures), 1)

    def test_repetitions_are_averaged(self):
        report = synthetic_report()
        report.cells.append(CellResult('a', Strategy.OBJECT_DRIVEN, 1, 1, metrics(0.6, 3.0)))
        self.assertAlmostEqual(report.value('a', Strategy.OBJECT_DRIVEN, 'iou2d'), 0.7)
        self.assertAlmostEqual(report.value('a', Strategy.OBJECT_DRIVEN, 'cde'), 2.0)

    def test_csv_layout(self):
        rows = read_csv(to_csv(synthetic_report()))
        self.assertEqual(rows[0], ['scene', '3D IoU Ours', '3D IoU Cover.', '2D IoU Ours', '2D IoU Cover.',
                                   'CDE Ours', 'CDE Cover.', 'YAE Ours', 'YAE Cover.'])
        self.assertEqual([r[0] for r in rows[1:]], ['a', 'b', MEAN_ROW])
        self.assertEqual(rows[1][3:5], ['0.8000', '0.6000'])
        self.assertEqual(rows[2][4], MISSING)
        self.assertEqual(rows[3][5], '2.0000')
        self.assertEqual(rows[3][7], '1.0')

    def test_table_marks_best(self):
        text = format_table(synthetic_report())
        lines = text.splitlines()
        self.assertIn('3D IoU', lines[0])
        self.assertTrue(set(lines[2]) == {'-'})
        row_a = lines[3].split()
        self.assertEqual(row_a[0], 'a')
        self.assertIn('0.8000*', row_a)
        self.assertIn('1.0000*', row_a)
        self.assertNotIn('0.6000*', row_a)
        # a single value in a row is not marked
        self.assertNotIn('*', lines[4].split()[3])
        self.assertIn('failed: b coverage rep 0: solver diverged', text)
        self.assertIn('seed=0', text)


class TestRunBenchmark(unittest.TestCase):

    def test_init_only(self):
        report = run_benchmark(FIXTURES / 'init_only.json')
        self.assertEqual(report.scenes, ['single_cube'])
        self.assertEqual(len(report.cells), 1)
        cell = report.cells[0]
        self.assertFalse(cell.failed)
        self.assertEqual((cell.steps, cell.terminated), (4, 'init_only'))

        rows = read_csv(to_csv(report))
        self.assertEqual(len(rows), 3)
        self.assertEqual(rows[1][1:], rows[2][1:])

    def test_identical_runs_give_identical_csv(self):
        config = load_config(FIXTURES / 'init_only.json').with_overrides(noise='low', seed=2)
        first = to_csv(run_benchmark(config))
        second = to_csv(run_benchmark(config))
        self.assertEqual(first, second)

    def test_missing_scene_is_a_gap(self):
        with tempfile.TemporaryDirectory() as tmp:
            report = run_benchmark(FIXTURES / 'two_strategies.json', tmp)
            csv_path, txt_path = write_outputs(report, tmp)
            self.assertTrue(csv_path.exists())
            self.assertTrue(txt_path.exists())
            runs = sorted(p.name for p in (pathlib.Path(tmp) / 'runs').iterdir())
            self.assertIn('single_cube.coverage.r0.trajectory.csv', runs)
            self.assertIn('single_cube.init_only.r0.map.json', runs)
            self.assertFalse(any(name.startswith('missing_scene') for name in runs))
            rows = read_csv(csv_path.read_text())

        self.assertEqual(report.scenes, ['single_cube', 'missing_scene'])
        self.assertEqual(len(report.failures), 2)
        missing = rows[2]
        self.assertEqual(missing[0], 'missing_scene')
        self.assertEqual(set(missing[1:]), {MISSING})
        self.assertEqual(rows[3][1:], rows[1][1:])

    def test_unique_scene_names(self):
        config = BenchmarkConfig(scenes=[SceneSource(path=FIXTURES / 'single_cube.json')] * 2,
                                 strategies=[Strategy.INIT_ONLY])
        report = run_benchmark(config)
        self.assertEqual(report.scenes, ['single_cube', 'single_cube-2'])


class TestStrategyOrdering(unittest.TestCase):
    """Generated scenes with medium noise, the same seeds for every strategy."""

    @classmethod
    def setUpClass(cls):
        config = BenchmarkConfig(scenes=[SceneSource(seed=seed) for seed in range(5)], noise='med', budget=10)
        cls.report = run_benchmark(config)

    def test_no_failures(self):
        self.assertEqual(self.report.failures, [])

    def test_object_driven_has_best_iou(self):
        ours = self.report.mean(Strategy.OBJECT_DRIVEN, 'iou3d')
        for strategy in (Strategy.RANDOMIZED, Strategy.COVERAGE):
            self.assertGreaterEqual(ours, self.report.mean(strategy, 'iou3d') + 0.03, strategy)

    def test_object_driven_has_lowest_cde(self):
        ours = self.report.mean(Strategy.OBJECT_DRIVEN, 'cde')
        for strategy in (Strategy.RANDOMIZED, Strategy.COVERAGE):
            self.assertLess(ours, self.report.mean(strategy, 'cde'), strategy)

    def test_yaw_error_is_small_for_every_strategy(self):
        for strategy in self.report.strategies:
            self.assertLessEqual(self.report.mean(strategy, 'yae'), 6.0, strategy)
