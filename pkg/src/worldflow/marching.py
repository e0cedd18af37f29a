"""Iso-surface extraction from occupancy grids.

The field is sampled at voxel centers; each cell spans 8 neighboring
centers. Surface vertices lie on cell edges at the iso crossing (edge
midpoints for binary fields at iso 0.5) and are welded through a global
lattice-edge key, so shared vertices are exact and the output is watertight
wherever the occupied region stays off the grid boundary.
"""

from __future__ import annotations

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, MC_LOOPS
from .errors import InvalidArgumentError
from .geometry import OccupancyGrid, TriMesh

# per edge: lattice offset of its lower corner and the axis it runs along
_EDGE_BASE = np.minimum(CORNER_OFFSETS[EDGE_CORNERS[:, 0]],
                        CORNER_OFFSETS[EDGE_CORNERS[:, 1]])
_EDGE_AXIS = np.argmax(CORNER_OFFSETS[EDGE_CORNERS[:, 0]]
                       != CORNER_OFFSETS[EDGE_CORNERS[:, 1]], axis=1)


def marching_cubes(grid: OccupancyGrid, iso: float = 0.5) -> TriMesh:
    if not 0.0 < iso < 1.0:
        raise InvalidArgumentError(f"iso must lie in (0, 1), got {iso}")
    occ = grid.data
    if not occ.any() or occ.all():
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    X, Y, Z = occ.shape
    if X < 2 or Y < 2 or Z < 2:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    # case index per cell from the 8 corner occupancies
    case = np.zeros((X - 1, Y - 1, Z - 1), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        case |= occ[dx:X - 1 + dx, dy:Y - 1 + dy, dz:Z - 1 + dz].astype(np.uint16) << bit
    cells = np.argwhere((case != 0) & (case != 255))

    f = occ.astype(np.float64)
    e = grid.voxel_edge
    vert_index: dict[tuple[int, int, int, int], int] = {}
    vertices: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []

    def edge_vertex(cell: np.ndarray, edge: int) -> int:
        base = cell + _EDGE_BASE[edge]
        key = (int(base[0]), int(base[1]), int(base[2]), int(_EDGE_AXIS[edge]))
        vi = vert_index.get(key)
        if vi is None:
            ca = cell + CORNER_OFFSETS[EDGE_CORNERS[edge, 0]]
            cb = cell + CORNER_OFFSETS[EDGE_CORNERS[edge, 1]]
            f0 = f[ca[0], ca[1], ca[2]]
            f1 = f[cb[0], cb[1], cb[2]]
            t = (iso - f0) / (f1 - f0)
            vi = len(vertices)
            vertices.append(((1.0 - t) * (ca + 0.5) + t * (cb + 0.5)) * e)
            vert_index[key] = vi
        return vi

    for cx, cy, cz in cells:
        loops = MC_LOOPS[case[cx, cy, cz]]
        cell = np.array([cx, cy, cz])
        for loop in loops:
            ids = [edge_vertex(cell, edge) for edge in loop]
            if len(ids) == 3:
                faces.append((ids[0], ids[1], ids[2]))
                continue
            # centroid vertex per loop, never welded across cells
            ci = len(vertices)
            vertices.append(np.mean([vertices[i] for i in ids], axis=0))
            for i in range(len(ids)):
                faces.append((ci, ids[i], ids[(i + 1) % len(ids)]))

    return TriMesh(np.array(vertices, dtype=np.float32),
                   np.array(faces, dtype=np.int64))


def boundary_edge_count(mesh: TriMesh) -> int:
    """Number of undirected edges not shared by exactly two faces."""
    if mesh.is_empty:
        return 0
    edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                            mesh.faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return int(np.sum(counts != 2))


def euler_characteristic(mesh: TriMesh) -> int:
    if mesh.is_empty:
        return 0
    used = np.unique(mesh.faces)
    edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                            mesh.faces[:, [2, 0]]])
    n_edges = len(np.unique(np.sort(edges, axis=1), axis=0))
    return int(len(used) - n_edges + len(mesh.faces))
