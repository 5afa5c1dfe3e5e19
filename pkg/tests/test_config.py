import json
import pathlib
import tempfile
import unittest

from pyobjmap.config import DEFAULT_STRATEGIES, BenchmarkConfig, SceneSource, config_from_dict, load_config
from pyobjmap.constants import NoiseLevel, Spacing, Strategy
from pyobjmap.exceptions import ConfigException

FIXTURES = pathlib.Path(__file__).parent / 'fixtures'


class TestLoadConfig(unittest.TestCase):

    def test_fixture(self):
        config = load_config(FIXTURES / 'two_strategies.json')
        self.assertEqual(config.strategies, (Strategy.INIT_ONLY, Strategy.COVERAGE))
        self.assertEqual(config.noise, NoiseLevel.LOW)
        self.assertEqual((config.seed, config.budget, config.n_candidates, config.repetitions), (5, 2, 8, 1))
        self.assertEqual(config.scenes[0].path, FIXTURES / 'single_cube.json')
        self.assertEqual([s.name for s in config.scenes], ['single_cube', 'missing_scene'])

    def test_defaults(self):
        config = config_from_dict({'format': 1, 'scenes': [{'generate': {'seed': 3}}]})
        self.assertEqual(config.strategies, DEFAULT_STRATEGIES)
        self.assertEqual(config.noise, NoiseLevel.OFF)
        self.assertFalse(config.oracle_association)
        self.assertAlmostEqual(config.lam, 0.2)
        source = config.scenes[0]
        self.assertEqual((source.seed, source.count, source.spacing), (3, (5, 8), Spacing.SPARSE))
        self.assertEqual(source.name, 'gen-3-sparse')

    def test_generated_scene_source(self):
        config = config_from_dict({'format': 1, 'scenes': [
            {'generate': {'seed': 2, 'count': 6, 'spacing': 'clustered'}}]})
        scene = config.scenes[0].load()
        self.assertEqual(len(scene), 6)

    def test_unreadable(self):
        with self.assertRaises(ConfigException):
            load_config(FIXTURES / 'nope.json')
        with tempfile.TemporaryDirectory() as tmp:
            bad = pathlib.Path(tmp) / 'bad.json'
            bad.write_text('{"format": 1, ')
            with self.assertRaises(ConfigException):
                load_config(bad)

    def test_invalid_content(self):
        cases = [
            [],
            {'format': 2, 'scenes': [{'generate': {'seed': 1}}]},
            {'format': 1, 'scenes': []},
            {'format': 1, 'scenes': ['desk.json']},
            {'format': 1, 'scenes': [{'path': 'desk.json'}]},
            {'format': 1, 'scenes': [{'generate': {}}]},
            {'format': 1, 'scenes': [{'generate': {'seed': 1}}], 'strategies': ['greedy']},
            {'format': 1, 'scenes': [{'generate': {'seed': 1}}], 'strategies': []},
            {'format': 1, 'scenes': [{'generate': {'seed': 1}}], 'noise': 'high'},
            {'format': 1, 'scenes': [{'generate': {'seed': 1}}], 'budget': 0},
            {'format': 1, 'scenes': [{'generate': {'seed': 1, 'spacing': 'dense'}}]},
        ]
        for data in cases:
            with self.assertRaises(ConfigException, msg=json.dumps(data)):
                config_from_dict(data)

    def test_scene_source_needs_one_origin(self):
        with self.assertRaises(ConfigException):
            SceneSource()
        with self.assertRaises(ConfigException):
            SceneSource(path=pathlib.Path('a.json'), seed=1)


class TestOverrides(unittest.TestCase):

    def setUp(self):
        self.config = BenchmarkConfig(scenes=[SceneSource(seed=1)], noise='low', seed=3)

    def test_none_keeps_values(self):
        same = self.config.with_overrides()
        self.assertEqual(same, self.config)

    def test_values_replace(self):
        changed = self.config.with_overrides(seed=9, noise='med', oracle_association=True)
        self.assertEqual((changed.seed, changed.noise, changed.oracle_association), (9, NoiseLevel.MED, True))
        self.assertEqual(self.config.seed, 3)

    def test_invalid_override(self):
        with self.assertRaises(ConfigException):
            self.config.with_overrides(noise='loud')
