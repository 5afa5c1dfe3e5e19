import argparse
import json
import pathlib
import tempfile
import unittest
from unittest import mock

from pyobjmap.main import (
    CONFIG_ERROR, RUN_ERROR, arg_parser, bench_run, explore_single, main, scene_generate
)

FIXTURES = pathlib.Path(__file__).parent / 'fixtures'


class TestMainApp(unittest.TestCase):

    def test_parser(self):
        parser = arg_parser()

        # Without a sub command there is nothing to do
        ns = parser.parse_args([])
        assert ns.func is None

        ns = parser.parse_args(["run", "--config", "bench.json", "--out", "results"])
        assert ns.func == bench_run
        assert ns.config == pathlib.Path("bench.json")
        assert ns.out == pathlib.Path("results")
        # Overrides default to None so that the config file wins
        assert ns.oracle_association is None
        assert ns.seed is None
        assert ns.noise is None

        ns = parser.parse_args(["run", "--config", "b.json", "--out", "r", "--oracle-association", "--seed", "4",
                                "--noise", "med"])
        assert ns.oracle_association is True
        assert ns.seed == 4
        assert ns.noise == "med"

        # Both --config and --out are required
        with self.assertRaises(SystemExit):
            parser.parse_args(["run", "--config", "b.json"])

        # Unknown noise levels are rejected
        with self.assertRaises(SystemExit):
            parser.parse_args(["run", "--config", "b.json", "--out", "r", "--noise", "high"])

        ns = parser.parse_args(["scene", "--seed", "3", "--count", "4", "6", "--out", "s.json"])
        assert ns.func == scene_generate
        assert ns.count == [4, 6]

        ns = parser.parse_args(["explore", "desk.json", "--strategy", "coverage"])
        assert ns.func == explore_single
        assert ns.strategy == "coverage"

    def test_verbosity(self):
        ns = arg_parser().parse_args(["-vv", "run", "--config", "b.json", "--out", "r"])
        assert ns.verbose == 2

    def test_no_command(self):
        with mock.patch('sys.stdout'):
            assert main([]) == CONFIG_ERROR

    def test_bench_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            with mock.patch('builtins.print') as printed:
                code = main(["run", "--config", str(FIXTURES / "init_only.json"), "--out", tmp])
            assert code == 0
            assert (pathlib.Path(tmp) / "report.csv").exists()
            assert (pathlib.Path(tmp) / "report.txt").exists()
            assert printed.called

    def test_bench_run_invalid_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            with mock.patch('builtins.print'):
                code = main(["run", "--config", str(FIXTURES / "single_cube.json"), "--out", tmp])
            assert code == CONFIG_ERROR
            assert not (pathlib.Path(tmp) / "report.csv").exists()

    def test_scene_generate(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = pathlib.Path(tmp) / "scene.json"
            with mock.patch('builtins.print'):
                code = scene_generate(argparse.Namespace(seed=2, count=[5, 5], spacing="sparse", out=out))
            assert code == 0
            with out.open() as fd:
                assert len(json.load(fd)["objects"]) == 5

    def test_scene_generate_infeasible(self):
        with mock.patch('builtins.print'):
            code = scene_generate(argparse.Namespace(seed=2, count=[0, 3], spacing="sparse", out=None))
        assert code == RUN_ERROR

    def test_explore_single(self):
        with tempfile.TemporaryDirectory() as tmp:
            with mock.patch('builtins.print'):
                code = main(["explore", str(FIXTURES / "single_cube.json"), "--strategy", "init_only",
                             "--out", tmp])
            assert code == 0
            assert (pathlib.Path(tmp) / "single_cube.map.json").exists()

    def test_explore_missing_scene(self):
        with mock.patch('builtins.print'):
            assert main(["explore", str(FIXTURES / "nope.json")]) == RUN_ERROR
