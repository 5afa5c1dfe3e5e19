"""
Surface occupancy grids.
Each estimated cuboid carries one 2D grid per observable face (the bottom face
rests on the desk and is never considered). A cell is unknown until the camera
sees it, occupied once a point lands in it, and free when it was visible but
stayed empty.
"""
import math
import typing

import attr
import numpy as np

from pyobjmap.constants import GRID_RESOLUTION, P_FREE, P_OCCUPIED, P_UNKNOWN, CellStatus, Face
from pyobjmap.exceptions import DomainException


def binary_entropy(p: float) -> float:
    """
    Binary entropy in bits, with 0 * log(0) := 0.

    >>> binary_entropy(0.5)
    1.0
    """
    p = float(p)
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise DomainException(f"probability must lie in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def binary_entropy_array(p: np.ndarray) -> np.ndarray:
    """Vectorized binary_entropy."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)) or np.any(np.isnan(p)):
        raise DomainException("probabilities must lie in [0, 1]")
    with np.errstate(divide='ignore', invalid='ignore'):
        h = -p * np.log2(p) - (1.0 - p) * np.log2(1.0 - p)
    return np.where((p == 0.0) | (p == 1.0), 0.0, h)  # type: ignore


def cells_along(extent: float, resolution: float) -> int:
    """Number of cells covering an edge of length `extent`."""
    return max(1, int(math.ceil(extent / resolution - 1e-9)))


@attr.s(slots=True, eq=False)
class FaceGrid:
    """One face: status and occupancy probability per cell, indexed [row, col]."""
    face: Face = attr.ib()
    status: np.ndarray = attr.ib()
    p: np.ndarray = attr.ib()

    @classmethod
    def empty(cls, face: Face, rows: int, cols: int) -> "FaceGrid":
        return cls(
            face=face,
            status=np.full((rows, cols), CellStatus.UNKNOWN.value, dtype=np.int8),
            p=np.full((rows, cols), P_UNKNOWN, dtype=float),
        )

    @property
    def shape(self) -> typing.Tuple[int, int]:
        return self.status.shape  # type: ignore

    def count(self, status: CellStatus) -> int:
        return int(np.count_nonzero(self.status == status.value))


@attr.s(slots=True, eq=False)
class SurfaceGridSet:
    """
    The five face grids of one cuboid, laid out for the half-extents `s`
    they were built for. Cell (row, col) of a face spans the face's
    (row axis, column axis) from -s to +s in equal steps of at most `resolution`.
    """
    s: np.ndarray = attr.ib(converter=lambda v: np.array(v, dtype=float).reshape(3))
    resolution: float = attr.ib(default=GRID_RESOLUTION)
    faces: typing.Dict[Face, FaceGrid] = attr.ib(factory=dict)

    def __attrs_post_init__(self) -> None:
        if not self.faces:
            for face in Face:
                a, b = face.plane_axes
                rows = cells_along(2.0 * self.s[a], self.resolution)
                cols = cells_along(2.0 * self.s[b], self.resolution)
                self.faces[face] = FaceGrid.empty(face, rows, cols)

    def __iter__(self) -> typing.Iterator[FaceGrid]:
        return iter(self.faces.values())

    def __getitem__(self, face: Face) -> FaceGrid:
        return self.faces[face]

    @property
    def cell_count(self) -> int:
        return sum(g.status.size for g in self)

    def count(self, status: CellStatus) -> int:
        return sum(g.count(status) for g in self)

    def cell_index(self, face: Face, q: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray]:
        """Row/column indices of object-frame points q (N, 3) on a face, clamped to the grid."""
        a, b = face.plane_axes
        rows, cols = self.faces[face].shape
        r = np.floor((q[:, a] + self.s[a]) / (2.0 * self.s[a]) * rows).astype(int)
        c = np.floor((q[:, b] + self.s[b]) / (2.0 * self.s[b]) * cols).astype(int)
        return np.clip(r, 0, rows - 1), np.clip(c, 0, cols - 1)

    def cell_centers(self, face: Face) -> np.ndarray:
        """Object-frame centers of all cells of a face, row-major, shape (rows * cols, 3)."""
        a, b = face.plane_axes
        rows, cols = self.faces[face].shape
        ra = -self.s[a] + (np.arange(rows) + 0.5) * (2.0 * self.s[a] / rows)
        cb = -self.s[b] + (np.arange(cols) + 0.5) * (2.0 * self.s[b] / cols)
        grid_a, grid_b = np.meshgrid(ra, cb, indexing='ij')
        centers = np.zeros((rows * cols, 3))
        centers[:, a] = grid_a.ravel()
        centers[:, b] = grid_b.ravel()
        centers[:, face.axis] = face.sign * self.s[face.axis]
        return centers

    @staticmethod
    def normal(face: Face) -> np.ndarray:
        n = np.zeros(3)
        n[face.axis] = face.sign
        return n

    def mark_occupied(self, face: Face, rows: np.ndarray, cols: np.ndarray) -> int:
        """Mark cells occupied. Returns how many cells changed status."""
        grid = self.faces[face]
        before = grid.status[rows, cols] != CellStatus.OCCUPIED.value
        grid.status[rows, cols] = CellStatus.OCCUPIED.value
        grid.p[rows, cols] = P_OCCUPIED
        return int(np.count_nonzero(before))

    def mark_free(self, face: Face, mask: np.ndarray) -> int:
        """Mark visible but empty cells free. Only unknown cells change. Returns the count changed."""
        grid = self.faces[face]
        change = mask.reshape(grid.shape) & (grid.status == CellStatus.UNKNOWN.value)
        grid.status[change] = CellStatus.FREE.value
        grid.p[change] = P_FREE
        return int(np.count_nonzero(change))

    def probabilities(self) -> np.ndarray:
        return np.concatenate([g.p.ravel() for g in self])

    def to_ascii(self) -> str:
        """Per-face matrices: '.' unknown, '#' occupied, 'o' free."""
        symbols = {CellStatus.UNKNOWN.value: '.', CellStatus.OCCUPIED.value: '#', CellStatus.FREE.value: 'o'}
        out = []
        for grid in self:
            out.append(f"face {grid.face} {grid.shape[0]}x{grid.shape[1]}")
            for row in grid.status:
                out.append(''.join(symbols[int(v)] for v in row))
        return '\n'.join(out) + '\n'


@attr.s(slots=True, frozen=True)
class Completeness:
    h_obj: float = attr.ib()
    h_bar: float = attr.ib()
    r_o: float = attr.ib()
    n_occupied: int = attr.ib()
    n_free: int = attr.ib()
    n_unknown: int = attr.ib()


def completeness(est: typing.Any) -> Completeness:
    """
    Completeness of an ObjectEstimate (or of a bare SurfaceGridSet).
    Total entropy over occupied, free and unknown cells, the entropy per cell,
    and the occupied ratio.
    :raises DomainException: the grid set has no cells
    """
    grids: SurfaceGridSet = getattr(est, "grids", est)
    n_o = grids.count(CellStatus.OCCUPIED)
    n_f = grids.count(CellStatus.FREE)
    n_u = grids.count(CellStatus.UNKNOWN)
    total = n_o + n_f + n_u
    if total == 0:
        raise DomainException("cannot normalize entropy over zero cells")
    h_obj = float(np.sum(binary_entropy_array(grids.probabilities())))
    return Completeness(h_obj=h_obj, h_bar=h_obj / total, r_o=n_o / total,
                        n_occupied=n_o, n_free=n_f, n_unknown=n_u)
