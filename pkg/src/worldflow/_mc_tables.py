"""Marching-cubes case table, generated at import time.

Each of the 256 corner-occupancy cases is built by placing one chord per
unambiguous cube face (faces with two sign-change edges) and two chords per
ambiguous face (four sign-change edges), always choosing the pairing that
isolates the occupied corners. Because the chord choice depends only on the
face's own corner pattern, two cells sharing a face cut it with identical
chords, so the assembled surface is crack-free on any binary field. This is
the reason for generating the table instead of using the classic published
one, whose complement symmetry breaks face agreement at ambiguous cases.

Chords are oriented "occupied side on the left, viewed from outside the
cell", which links them into directed loops wound so triangle normals point
away from the occupied region. The table stores the loops themselves:
triangle loops become one triangle, longer loops are centroid-fanned at
extraction time. A plain fan from a loop vertex can produce a triangle
lying exactly in a cell face plane, which the neighboring cell then emits
again with opposite winding (a zero-thickness fin); centroid vertices are
interior and never shared between cells, so every chord edge ends up with
exactly two incident triangles.
"""

from __future__ import annotations

import numpy as np

# Unit-cube corner offsets (x, y, z) and the 12 edges between them.
CORNER_OFFSETS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
], dtype=np.int64)

EDGE_CORNERS = np.array([
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
], dtype=np.int64)

# Faces as (corner cycle, outward normal); cycle order is arbitrary but
# consecutive corners share a cube edge.
_FACES = [
    ((0, 1, 2, 3), (0, 0, -1)),
    ((4, 5, 6, 7), (0, 0, 1)),
    ((0, 1, 5, 4), (0, -1, 0)),
    ((3, 2, 6, 7), (0, 1, 0)),
    ((0, 3, 7, 4), (-1, 0, 0)),
    ((1, 2, 6, 5), (1, 0, 0)),
]

_EDGE_ID = {tuple(sorted(e)): i for i, e in enumerate(EDGE_CORNERS.tolist())}

_EDGE_MIDPOINTS = CORNER_OFFSETS[EDGE_CORNERS].mean(axis=1)


def _face_frames():
    """Per face: corner ids, edge ids around the cycle, and a 2D frame
    (origin, u, w) with u x w = outward normal."""
    frames = []
    for corners, normal in _FACES:
        n = np.asarray(normal, dtype=np.float64)
        edge_ids = []
        for i in range(4):
            a, b = corners[i], corners[(i + 1) % 4]
            edge_ids.append(_EDGE_ID[tuple(sorted((a, b)))])
        origin = CORNER_OFFSETS[corners[0]].astype(np.float64)
        u = CORNER_OFFSETS[corners[1]].astype(np.float64) - origin
        w = np.cross(n, u)
        frames.append((list(corners), edge_ids, origin, u, w))
    return frames


_FACE_FRAMES = _face_frames()


def _to2d(p: np.ndarray, origin, u, w) -> np.ndarray:
    d = p - origin
    return np.array([d @ u, d @ w])


def _face_chords(occ: np.ndarray) -> list[tuple[int, int]]:
    """Directed chords (edge_id -> edge_id) over all faces for one case."""
    chords = []
    for corners, edge_ids, origin, u, w in _FACE_FRAMES:
        crossed = [e for e in edge_ids
                   if occ[EDGE_CORNERS[e, 0]] != occ[EDGE_CORNERS[e, 1]]]
        if not crossed:
            continue
        occupied_corners = [c for c in corners if occ[c]]
        if len(crossed) == 2:
            pairs = [(crossed[0], crossed[1], occupied_corners[0])]
        else:
            # ambiguous face: both diagonals crossed; cut off each occupied
            # corner with the chord joining its two incident face edges
            pairs = []
            for c in occupied_corners:
                inc = [e for e in crossed if c in EDGE_CORNERS[e]]
                pairs.append((inc[0], inc[1], c))
        for ea, eb, ref_corner in pairs:
            a2 = _to2d(_EDGE_MIDPOINTS[ea], origin, u, w)
            b2 = _to2d(_EDGE_MIDPOINTS[eb], origin, u, w)
            r2 = _to2d(CORNER_OFFSETS[ref_corner].astype(np.float64), origin, u, w)
            ab = b2 - a2
            ar = r2 - a2
            if ab[0] * ar[1] - ab[1] * ar[0] < 0:
                ea, eb = eb, ea
            chords.append((ea, eb))
    return chords


def _loops_from_chords(chords: list[tuple[int, int]]) -> list[list[int]]:
    nxt = {}
    for a, b in chords:
        if a in nxt:
            raise RuntimeError("chord graph is not 1-regular")
        nxt[a] = b
    loops = []
    remaining = set(nxt)
    while remaining:
        start = min(remaining)
        loop = [start]
        remaining.discard(start)
        cur = nxt[start]
        while cur != start:
            loop.append(cur)
            remaining.discard(cur)
            cur = nxt[cur]
        loops.append(loop)
    return loops


def _build_case(index: int) -> list[list[int]]:
    occ = np.array([(index >> i) & 1 for i in range(8)], dtype=bool)
    if occ.all() or not occ.any():
        return []
    return _loops_from_chords(_face_chords(occ))


def _build_table() -> list[list[list[int]]]:
    table = [_build_case(i) for i in range(256)]
    # fix the global winding so normals point away from the occupied side:
    # case 1 (only corner 0 occupied) yields one triangle loop whose normal
    # must have positive dot with the direction from corner 0 to its centroid
    tri = table[1][0]
    p = _EDGE_MIDPOINTS[tri]
    n = np.cross(p[1] - p[0], p[2] - p[0])
    centroid = p.mean(axis=0)
    if n @ (centroid - CORNER_OFFSETS[0]) < 0:
        table = [[loop[::-1] for loop in loops] for loops in table]
    return table


MC_LOOPS: list[list[list[int]]] = _build_table()
