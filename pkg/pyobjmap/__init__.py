from pyobjmap.scene import DeskScene, ScenePrimitive, generate_scene, load_scene, save_scene
from pyobjmap.obj_types import CameraIntrinsics, CameraPose, ObjectPose
from pyobjmap.sensor import NoiseModel, Observation, render
from pyobjmap.objmap import GlobalObjectMap, ObjectEstimate, associate, integrate
from pyobjmap.pose import optimize_pose, SolverOptions
from pyobjmap.explore import ExplorationOptions, run_exploration, select_nbv
from pyobjmap.metrics import evaluate, evaluate_map
from pyobjmap.bench import BenchmarkReport, run_benchmark

__license__ = 'MIT'
__version__ = '0.3.0'

__all__ = (
    'DeskScene',
    'ScenePrimitive',
    'generate_scene',
    'load_scene',
    'save_scene',
    'CameraIntrinsics',
    'CameraPose',
    'ObjectPose',
    'NoiseModel',
    'Observation',
    'render',
    'GlobalObjectMap',
    'ObjectEstimate',
    'associate',
    'integrate',
    'optimize_pose',
    'SolverOptions',
    'ExplorationOptions',
    'run_exploration',
    'select_nbv',
    'evaluate',
    'evaluate_map',
    'BenchmarkReport',
    'run_benchmark',
)
