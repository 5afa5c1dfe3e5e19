"""
Output files: the final object map as JSON, surface grid dumps, trajectory and
metric curves as CSV, solver cost traces, and ascii PLY point clouds.
"""
import csv
import io
import json
import pathlib
import typing

import numpy as np

from pyobjmap.explore import ExplorationResult
from pyobjmap.objmap import GlobalObjectMap
from pyobjmap.pose import SolveResult
from pyobjmap.util import matrix_to_euler

MAP_FORMAT = 1
PathLike = typing.Union[str, pathlib.Path]


def _round(values: typing.Iterable[float], digits: int = 6) -> typing.List[float]:
    return [round(float(v), digits) for v in values]


def map_to_dict(obj_map: GlobalObjectMap) -> typing.Dict[str, typing.Any]:
    plane = obj_map.desk_plane
    objects = []
    for est in obj_map.estimates:
        comp = est.completeness()
        objects.append({
            'id': est.id,
            'label': est.label,
            't': _round(est.pose.t),
            'theta': _round(est.pose.theta),
            's': _round(est.pose.s),
            'h_bar': round(comp.h_bar, 6),
            'r_o': round(comp.r_o, 6),
            'fully_explored': est.fully_explored,
        })
    return {
        'format': MAP_FORMAT,
        'desk_plane': None if plane is None else {'n': _round(plane.n), 'd': round(plane.d, 6),
                                                  'inliers': plane.inliers},
        'objects': objects,
    }


def save_map(obj_map: GlobalObjectMap, path: PathLike) -> None:
    with pathlib.Path(path).open('w', encoding='utf-8') as fd:
        json.dump(map_to_dict(obj_map), fd, indent=2)
        fd.write('\n')


def grids_to_ascii(obj_map: GlobalObjectMap) -> str:
    """Per object and face, the cell statuses as rows of characters."""
    out = []
    for est in obj_map.estimates:
        out.append(f"# object {est.id} ({est.label})\n")
        out.append(est.grids.to_ascii())
    return ''.join(out)


def _csv(fieldnames: typing.List[str], rows: typing.Iterable[typing.Dict[str, typing.Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator='\n')
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _fmt(value: typing.Optional[float], digits: int = 6) -> str:
    return '' if value is None else f"{value:.{digits}f}"


TRAJECTORY_FIELDS = ['step', 'strategy', 'kind', 'x', 'y', 'z', 'roll', 'pitch', 'yaw', 'utility', 'objects']


def trajectory_csv(result: ExplorationResult) -> str:
    """One row per executed view. `objects` lists id:h_bar:r_o:s_flag per object, separated by ';'."""
    rows = []
    for rec in result.steps:
        euler = matrix_to_euler(rec.camera.rotation)
        rows.append({
            'step': rec.step,
            'strategy': rec.strategy.value,
            'kind': rec.kind.value,
            'x': _fmt(rec.camera.translation[0]),
            'y': _fmt(rec.camera.translation[1]),
            'z': _fmt(rec.camera.translation[2]),
            'roll': _fmt(euler[0]),
            'pitch': _fmt(euler[1]),
            'yaw': _fmt(euler[2]),
            'utility': _fmt(rec.utility),
            'objects': ';'.join(f"{oid}:{st.h_bar:.4f}:{st.r_o:.4f}:{st.s_flag}"
                                for oid, st in sorted(rec.objects.items())),
        })
    return _csv(TRAJECTORY_FIELDS, rows)


def metric_curve_csv(result: ExplorationResult) -> str:
    rows = []
    for rec in result.steps:
        m = rec.metrics
        rows.append({
            'step': rec.step,
            'iou3d': _fmt(None if m is None else m.iou3d),
            'iou2d': _fmt(None if m is None else m.iou2d),
            'cde': _fmt(None if m is None else m.cde),
            'yae': _fmt(None if m is None else m.yae),
            'missed': '' if m is None else m.missed,
        })
    return _csv(['step', 'iou3d', 'iou2d', 'cde', 'yae', 'missed'], rows)


def cost_trace_csv(result: SolveResult) -> str:
    rows = [{'iteration': i, 'cost': f"{cost:.12g}", 'damping': f"{damping:.3g}"} for i, cost, damping in result.trace]
    return _csv(['iteration', 'cost', 'damping'], rows)


def write_ply(points: np.ndarray, path: PathLike) -> None:
    """Write an ascii PLY point cloud."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with pathlib.Path(path).open('w', encoding='utf-8') as fd:
        fd.write('ply\nformat ascii 1.0\n')
        fd.write(f'element vertex {len(points)}\n')
        fd.write('property float x\nproperty float y\nproperty float z\nend_header\n')
        for x, y, z in points:
            fd.write(f'{x:.6f} {y:.6f} {z:.6f}\n')


def write_run(result: ExplorationResult, out_dir: PathLike, name: str, ply: bool = False) -> None:
    """All per-run artifacts of one exploration, prefixed with `name`."""
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f'{name}.trajectory.csv').write_text(trajectory_csv(result), encoding='utf-8')
    (out_dir / f'{name}.metrics.csv').write_text(metric_curve_csv(result), encoding='utf-8')
    save_map(result.map, out_dir / f'{name}.map.json')
    (out_dir / f'{name}.grids.txt').write_text(grids_to_ascii(result.map), encoding='utf-8')
    for est in result.map.estimates:
        if est.last_solve is not None:
            (out_dir / f'{name}.object{est.id}.cost.csv').write_text(cost_trace_csv(est.last_solve), encoding='utf-8')
    if ply:
        for est in result.map.estimates:
            write_ply(est.points, out_dir / f'{name}.object{est.id}.ply')
