import typing
from enum import Enum

# Desk defaults (meters)
DESK_HEIGHT = 0.7
DESK_SIZE_X = 1.0
DESK_SIZE_Y = 1.4

# Object size range per axis (full edge length, meters)
MIN_OBJECT_SIZE = 0.04
MAX_OBJECT_SIZE = 0.25
MAX_OBJECT_COUNT = 16

# Surface grids
GRID_RESOLUTION = 0.01
P_UNKNOWN = 0.5
P_OCCUPIED = 0.95
P_FREE = 0.05
MIN_HALF_EXTENT = 0.001

# Rendering: one sample per 0.5 cm^2 of surface
SAMPLE_AREA = 0.5e-4
DESK_SAMPLE_SPACING = 0.02

# Association gate
ASSOCIATION_MIN_GATE = 0.10

# Exploration
DEFAULT_BUDGET = 10
DEFAULT_CANDIDATES = 64
DEFAULT_LAMBDA = 0.2
ENTROPY_THRESHOLD = 0.5
OCCUPIED_RATIO_THRESHOLD = 0.5
VOLUME_PROBABILITY_THRESHOLD = 0.8
INIT_VIEW_COUNT = 4

# Hemisphere shell for candidate views
SHELL_RADIUS = (0.5, 0.9)
SHELL_ELEVATION_DEG = (20.0, 85.0)
TOP_VIEW_HEIGHT = 0.6
CORNER_INSET = 0.1

# Matching estimates to ground truth when ids are not shared
MATCH_GATE = 0.10


class ReprEnum(Enum):

    def __str__(self) -> str:
        return str(self.value)


class Shape(str, ReprEnum):
    CUBOID = 'cuboid'
    CYLINDER = 'cylinder'


class Spacing(str, ReprEnum):
    SPARSE = 'sparse'
    CLUSTERED = 'clustered'
    UNEVEN = 'uneven'


class CellStatus(int, ReprEnum):
    UNKNOWN = 0
    OCCUPIED = 1
    FREE = 2


class Face(str, ReprEnum):
    """The five observable faces of a cuboid. The bottom face rests on the desk."""
    POS_X = '+x'
    NEG_X = '-x'
    POS_Y = '+y'
    NEG_Y = '-y'
    POS_Z = '+z'

    @property
    def axis(self) -> int:
        return FACE_AXIS[self]

    @property
    def sign(self) -> float:
        return -1.0 if self.value.startswith('-') else 1.0

    @property
    def plane_axes(self) -> typing.Tuple[int, int]:
        """The two object-frame axes spanning the face, as (row axis, column axis)."""
        return FACE_PLANE_AXES[FACE_AXIS[self]]


FACE_AXIS: typing.Dict[Face, int] = {
    Face.POS_X: 0, Face.NEG_X: 0,
    Face.POS_Y: 1, Face.NEG_Y: 1,
    Face.POS_Z: 2,
}

FACE_PLANE_AXES: typing.Dict[int, typing.Tuple[int, int]] = {
    0: (1, 2),
    1: (0, 2),
    2: (0, 1),
}


class Strategy(str, ReprEnum):
    OBJECT_DRIVEN = 'object_driven'
    RANDOMIZED = 'randomized'
    COVERAGE = 'coverage'
    INIT_ONLY = 'init_only'
    UNKNOWN_GAIN = 'unknown_gain'

    @property
    def column(self) -> str:
        """Short column heading used in report tables."""
        return STRATEGY_COLUMNS[self]


STRATEGY_COLUMNS: typing.Dict[Strategy, str] = {
    Strategy.OBJECT_DRIVEN: 'Ours',
    Strategy.RANDOMIZED: 'Random.',
    Strategy.COVERAGE: 'Cover.',
    Strategy.INIT_ONLY: 'Init.',
    Strategy.UNKNOWN_GAIN: 'Unknown.',
}


class ViewKind(str, ReprEnum):
    HEMISPHERE = 'hemisphere-sample'
    CORNER_INIT = 'corner-init'
    COVERAGE = 'coverage-waypoint'
    RANDOM = 'random'


class Gain(str, ReprEnum):
    OBJECT_DRIVEN = 'object_driven'
    UNKNOWN_CELLS = 'unknown_cells'


class NoiseLevel(str, ReprEnum):
    OFF = 'off'
    LOW = 'low'
    MED = 'med'
