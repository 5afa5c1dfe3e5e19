import csv
import io
import json
import pathlib
import tempfile
import unittest

import numpy as np

from pyobjmap.constants import INIT_VIEW_COUNT
from pyobjmap.explore import ExplorationOptions, run_exploration
from pyobjmap.export import (
    MAP_FORMAT, TRAJECTORY_FIELDS, cost_trace_csv, grids_to_ascii, map_to_dict, metric_curve_csv, trajectory_csv,
    write_ply, write_run
)
from pyobjmap.objmap import GlobalObjectMap
from pyobjmap.scene import load_scene

FIXTURES = pathlib.Path(__file__).parent / 'fixtures'


class TestExport(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        scene = load_scene(FIXTURES / 'single_cube.json')
        cls.result = run_exploration(scene, 'init_only', options=ExplorationOptions(n_candidates=4))

    def test_map_dict(self):
        data = map_to_dict(self.result.map)
        self.assertEqual(data['format'], MAP_FORMAT)
        self.assertEqual(len(data['objects']), 1)
        obj = data['objects'][0]
        self.assertEqual(obj['label'], 'box')
        self.assertEqual(len(obj['t']), 3)
        self.assertTrue(0.0 <= obj['h_bar'] <= 1.0)
        self.assertAlmostEqual(data['desk_plane']['d'], 0.7, places=3)
        # must survive a JSON round trip unchanged
        self.assertEqual(json.loads(json.dumps(data)), data)

    def test_empty_map(self):
        self.assertEqual(map_to_dict(GlobalObjectMap()), {'format': MAP_FORMAT, 'desk_plane': None, 'objects': []})
        self.assertEqual(grids_to_ascii(GlobalObjectMap()), '')

    def test_trajectory(self):
        rows = list(csv.DictReader(io.StringIO(trajectory_csv(self.result))))
        self.assertEqual(len(rows), INIT_VIEW_COUNT)
        self.assertEqual(list(rows[0]), TRAJECTORY_FIELDS)
        self.assertEqual([r['step'] for r in rows], ['1', '2', '3', '4'])
        self.assertEqual({r['kind'] for r in rows}, {'corner-init'})
        self.assertEqual(rows[0]['utility'], '')
        object_id, h_bar, r_o, flag = rows[-1]['objects'].split(':')
        self.assertEqual(object_id, '1')
        self.assertIn(flag, ('0', '1'))

    def test_metric_curve(self):
        rows = list(csv.DictReader(io.StringIO(metric_curve_csv(self.result))))
        self.assertEqual(len(rows), INIT_VIEW_COUNT)
        self.assertTrue(all(0.0 <= float(r['iou3d']) <= 1.0 for r in rows))

    def test_cost_trace(self):
        solve = self.result.map.estimates[0].last_solve
        self.assertIsNotNone(solve)
        rows = list(csv.DictReader(io.StringIO(cost_trace_csv(solve))))
        self.assertEqual(len(rows), len(solve.trace))

    def test_grids_ascii(self):
        text = grids_to_ascii(self.result.map)
        self.assertTrue(text.startswith('# object 1 (box)'))

    def test_write_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = pathlib.Path(tmp) / 'nested'
            write_run(self.result, out, 'cube', ply=True)
            names = sorted(p.name for p in out.iterdir())
            self.assertEqual(names, ['cube.grids.txt', 'cube.map.json', 'cube.metrics.csv', 'cube.object1.cost.csv',
                                     'cube.object1.ply', 'cube.trajectory.csv'])
            ply = (out / 'cube.object1.ply').read_text().splitlines()
            trace = list(csv.DictReader(io.StringIO((out / 'cube.object1.cost.csv').read_text())))
        self.assertEqual(len(trace), len(self.result.map.estimates[0].last_solve.trace))
        n_points = len(self.result.map.estimates[0].points)
        self.assertEqual(ply[2], f'element vertex {n_points}')
        self.assertEqual(len(ply), 7 + n_points)

    def test_ply_empty_cloud(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / 'empty.ply'
            write_ply(np.zeros((0, 3)), path)
            self.assertIn('element vertex 0', path.read_text())
