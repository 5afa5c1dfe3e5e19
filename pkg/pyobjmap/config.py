"""
Benchmark configuration.

A config is a JSON document with a `format: 1` header, for example::

    {
      "format": 1,
      "scenes": [
        {"file": "scenes/desk11.json"},
        {"generate": {"seed": 3, "count": [5, 8], "spacing": "clustered"}}
      ],
      "strategies": ["object_driven", "randomized", "coverage", "init_only"],
      "noise": "med",
      "seed": 0,
      "repetitions": 1,
      "budget": 10
    }

Relative scene paths are resolved against the directory of the config file.
"""
import json
import pathlib
import typing

import attr

from pyobjmap.constants import DEFAULT_BUDGET, DEFAULT_CANDIDATES, DEFAULT_LAMBDA, NoiseLevel, Spacing, Strategy
from pyobjmap.exceptions import ConfigException, ObjMapBaseException
from pyobjmap.scene import DeskScene, generate_scene, load_scene

CONFIG_FORMAT = 1
DEFAULT_STRATEGIES = (Strategy.OBJECT_DRIVEN, Strategy.RANDOMIZED, Strategy.COVERAGE, Strategy.INIT_ONLY)


@attr.s(slots=True, frozen=True)
class SceneSource:
    """Either a scene file or the arguments of generate_scene."""
    path: typing.Optional[pathlib.Path] = attr.ib(default=None)
    seed: typing.Optional[int] = attr.ib(default=None)
    count: typing.Tuple[int, int] = attr.ib(default=(5, 8), converter=lambda v: (int(v[0]), int(v[1])))
    spacing: Spacing = attr.ib(default=Spacing.SPARSE, converter=Spacing)

    def __attrs_post_init__(self) -> None:
        if (self.path is None) == (self.seed is None):
            raise ConfigException("a scene source needs exactly one of a file or a generator seed")

    @property
    def name(self) -> str:
        if self.path is not None:
            return self.path.stem
        return f"gen-{self.seed}-{self.spacing}"

    def load(self) -> DeskScene:
        if self.path is not None:
            return load_scene(self.path)
        assert self.seed is not None
        return generate_scene(self.seed, self.count, self.spacing)


def _positive(instance: typing.Any, attribute: typing.Any, value: int) -> None:
    if value < 1:
        raise ConfigException(f"{attribute.name} must be at least 1, got {value}")


def _strategies(value: typing.Iterable[typing.Any]) -> typing.Tuple[Strategy, ...]:
    try:
        return tuple(Strategy(v) for v in value)
    except ValueError as err:
        raise ConfigException(str(err)) from err


def _noise(value: typing.Any) -> NoiseLevel:
    try:
        return NoiseLevel(value)
    except ValueError as err:
        raise ConfigException(str(err)) from err


@attr.s(slots=True, frozen=True)
class BenchmarkConfig:
    scenes: typing.Tuple[SceneSource, ...] = attr.ib(converter=tuple)
    strategies: typing.Tuple[Strategy, ...] = attr.ib(default=DEFAULT_STRATEGIES, converter=_strategies)
    noise: NoiseLevel = attr.ib(default=NoiseLevel.OFF, converter=_noise)
    seed: int = attr.ib(default=0, converter=int)
    repetitions: int = attr.ib(default=1, converter=int, validator=_positive)
    budget: int = attr.ib(default=DEFAULT_BUDGET, converter=int, validator=_positive)
    n_candidates: int = attr.ib(default=DEFAULT_CANDIDATES, converter=int, validator=_positive)
    lam: float = attr.ib(default=DEFAULT_LAMBDA, converter=float)
    oracle_association: bool = attr.ib(default=False, converter=bool)
    write_ply: bool = attr.ib(default=False, converter=bool)

    def __attrs_post_init__(self) -> None:
        if not self.scenes:
            raise ConfigException("the config names no scenes")
        if not self.strategies:
            raise ConfigException("the config names no strategies")

    def with_overrides(self, seed: typing.Optional[int] = None, noise: typing.Optional[str] = None,
                       oracle_association: typing.Optional[bool] = None) -> "BenchmarkConfig":
        """Apply command line overrides. None leaves a value untouched."""
        changes: typing.Dict[str, typing.Any] = {}
        if seed is not None:
            changes['seed'] = seed
        if noise is not None:
            changes['noise'] = noise
        if oracle_association is not None:
            changes['oracle_association'] = oracle_association
        return attr.evolve(self, **changes)


def _scene_source(entry: typing.Any, base_dir: pathlib.Path) -> SceneSource:
    if not isinstance(entry, dict):
        raise ConfigException(f"scene entry must be an object, got {entry!r}")
    if 'file' in entry:
        path = pathlib.Path(entry['file'])
        return SceneSource(path=path if path.is_absolute() else base_dir / path)
    if 'generate' in entry:
        gen = entry['generate']
        count = gen.get('count', (5, 8))
        if isinstance(count, int):
            count = (count, count)
        return SceneSource(seed=int(gen['seed']), count=count, spacing=gen.get('spacing', 'sparse'))
    raise ConfigException(f"scene entry needs 'file' or 'generate': {entry!r}")


def config_from_dict(data: typing.Any, base_dir: typing.Union[str, pathlib.Path] = '.') -> BenchmarkConfig:
    if not isinstance(data, dict):
        raise ConfigException("config must be a JSON object")
    if data.get('format') != CONFIG_FORMAT:
        raise ConfigException(f"unsupported config format {data.get('format')!r}, expected {CONFIG_FORMAT}")
    base_dir = pathlib.Path(base_dir)
    try:
        return BenchmarkConfig(
            scenes=[_scene_source(e, base_dir) for e in data.get('scenes', [])],
            strategies=data.get('strategies', DEFAULT_STRATEGIES),
            noise=data.get('noise', NoiseLevel.OFF),
            seed=data.get('seed', 0),
            repetitions=data.get('repetitions', 1),
            budget=data.get('budget', DEFAULT_BUDGET),
            n_candidates=data.get('candidates', DEFAULT_CANDIDATES),
            lam=data.get('lambda', DEFAULT_LAMBDA),
            oracle_association=data.get('oracle_association', False),
            write_ply=data.get('write_ply', False),
        )
    except ObjMapBaseException as err:
        if isinstance(err, ConfigException):
            raise
        raise ConfigException(str(err)) from err
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigException(f"malformed config: {err!r}") from err


def load_config(path: typing.Union[str, pathlib.Path]) -> BenchmarkConfig:
    """
    Read a benchmark config file.
    :raises ConfigException: unreadable or invalid config
    """
    path = pathlib.Path(path)
    try:
        with path.open('r', encoding='utf-8') as fd:
            data = json.load(fd)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigException(f"{path}: {err}") from err
    return config_from_dict(data, path.parent)
