import argparse
import logging
import pathlib
import sys
from typing import Any, List, Optional

from pyobjmap.bench import format_table, run_benchmark, write_outputs
from pyobjmap.config import load_config
from pyobjmap.constants import DEFAULT_BUDGET, NoiseLevel, Spacing, Strategy
from pyobjmap.exceptions import ConfigException, ObjMapBaseException
from pyobjmap.explore import ExplorationOptions, run_exploration
from pyobjmap.export import write_run
from pyobjmap.metrics import evaluate_map
from pyobjmap.scene import generate_scene, load_scene, save_scene
from pyobjmap.sensor import NoiseModel

NOISE_OPTIONS = tuple(level.value for level in NoiseLevel)
STRATEGY_OPTIONS = tuple(s.value for s in Strategy)
LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

# Error Codes
CONFIG_ERROR = 2
RUN_ERROR = 3


def arg_parser() -> argparse.ArgumentParser:
    """Create a new ArgumentParser instance that serves as the entry point to the benchmark application.
    All possible commandline options and parameters must be defined here.
        Usage: bench run --config FILE --out DIR [--oracle-association] [--seed N] [--noise LEVEL]
    """
    main_parser: argparse.ArgumentParser = argparse.ArgumentParser(
        prog="bench",
        description="Active object mapping on simulated desks: exploration strategies and pose accuracy reports.",
    )
    main_parser.add_argument('-v', '--verbose', action='count', default=0,
                             help="-v for progress, -vv for solver detail")
    main_parser.add_argument('--log-file', type=pathlib.Path, default=None)
    main_parser.set_defaults(func=None)
    sub_parsers = main_parser.add_subparsers()

    run_parser = sub_parsers.add_parser('run', help="run a benchmark config")
    run_parser.add_argument('--config', type=pathlib.Path, required=True)
    run_parser.add_argument('--out', type=pathlib.Path, required=True)
    # Overrides. None keeps the value from the config file
    run_parser.add_argument('--oracle-association', action='store_true', default=None)
    run_parser.add_argument('--seed', type=int, default=None)
    run_parser.add_argument('--noise', choices=NOISE_OPTIONS, default=None)
    run_parser.set_defaults(func=bench_run)

    scene_parser = sub_parsers.add_parser('scene', help="generate a random scene file")
    scene_parser.add_argument('--seed', type=int, default=0)
    scene_parser.add_argument('--count', type=int, nargs=2, default=(5, 8), metavar=('MIN', 'MAX'))
    scene_parser.add_argument('--spacing', choices=tuple(s.value for s in Spacing), default=Spacing.SPARSE.value)
    scene_parser.add_argument('--out', type=pathlib.Path, required=True)
    scene_parser.set_defaults(func=scene_generate)

    explore_parser = sub_parsers.add_parser('explore', help="explore a single scene with one strategy")
    explore_parser.add_argument('scene', type=pathlib.Path)
    explore_parser.add_argument('--strategy', choices=STRATEGY_OPTIONS, default=Strategy.OBJECT_DRIVEN.value)
    explore_parser.add_argument('--budget', type=int, default=DEFAULT_BUDGET)
    explore_parser.add_argument('--seed', type=int, default=0)
    explore_parser.add_argument('--noise', choices=NOISE_OPTIONS, default=NoiseLevel.OFF.value)
    explore_parser.add_argument('--oracle-association', action='store_true')
    explore_parser.add_argument('--out', type=pathlib.Path, default=None)
    explore_parser.set_defaults(func=explore_single)

    return main_parser


def print_error(*args: Any, **kwargs: Any) -> None:
    """Wrapper around the default print function that writes to STDERR."""
    print(*args, **kwargs, file=sys.stderr)


def setup_logging(verbose: int, log_file: Optional[pathlib.Path] = None) -> None:
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


def bench_run(args: argparse.Namespace) -> int:
    """Run a benchmark and write report.csv, report.txt and per-run files."""
    try:
        config = load_config(args.config).with_overrides(
            seed=args.seed, noise=args.noise, oracle_association=args.oracle_association)
    except ConfigException as err:
        print_error(f"invalid config: {err}")
        return CONFIG_ERROR

    report = run_benchmark(config, args.out)
    write_outputs(report, args.out)
    print(format_table(report), end='')
    if report.failures:
        print_error(f"WARNING: {len(report.failures)} run(s) failed")
    return 0


def scene_generate(args: argparse.Namespace) -> int:
    try:
        scene = generate_scene(args.seed, tuple(args.count), args.spacing)
    except ObjMapBaseException as err:
        print_error(f"scene generation failed: {err}")
        return RUN_ERROR
    save_scene(scene, args.out)
    print(f"{len(scene)} object(s) written to {args.out}")
    return 0


def explore_single(args: argparse.Namespace) -> int:
    """Explore one scene and print the final accuracy."""
    try:
        scene = load_scene(args.scene)
        result = run_exploration(scene, args.strategy, args.budget, NoiseModel.preset(args.noise), args.seed,
                                 ExplorationOptions(oracle_association=args.oracle_association))
    except ObjMapBaseException as err:
        print_error(f"exploration failed: {err}")
        return RUN_ERROR

    metrics = evaluate_map(result.map, scene, args.oracle_association)
    print(f"{len(result.steps)} view(s), terminated: {result.terminated}")
    for key, value in metrics.as_dict().items():
        print(f"{key}: {'n/a' if value is None else f'{value:.4f}'}")
    if args.out is not None:
        write_run(result, args.out, args.scene.stem)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    main_parser = arg_parser()
    namespace: argparse.Namespace = main_parser.parse_args(argv)
    if namespace.func is None:
        main_parser.print_help()
        return CONFIG_ERROR
    setup_logging(namespace.verbose, namespace.log_file)
    exit_code: int = namespace.func(namespace)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
