"""Voxel, point-cloud and mesh data model plus chunk partitioning and
sampling utilities.

World-scale convention: a chunk footprint of s voxels spans 2 world units,
so voxel_edge = 2/s. Voxel (i, j, k) occupies the axis-aligned box
[i, i+1) x [j, j+1) x [k, k+1) in voxel units; its center sits at
(i+0.5, j+0.5, k+0.5) * voxel_edge in world units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, EmptyInputError, InvalidArgumentError
from .seeding import rng_from


@dataclass
class OccupancyGrid:
    data: np.ndarray          # bool, shape (X, Y, Z)
    voxel_edge: float

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise InvalidArgumentError(f"occupancy grid must be 3D, got {self.data.ndim}D")
        if self.data.dtype != np.bool_:
            self.data = self.data.astype(bool)
        if not self.voxel_edge > 0:
            raise InvalidArgumentError("voxel_edge must be positive")
        self.voxel_edge = float(self.voxel_edge)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def world_extent(self) -> np.ndarray:
        return np.array(self.dims, dtype=np.float64) * self.voxel_edge

    def occupancy_rate(self) -> float:
        return float(self.data.mean())

    def occupancy_at(self, points: np.ndarray) -> np.ndarray:
        """Occupancy label of the voxel containing each world point.

        Points outside the grid volume are empty by definition.
        """
        p = np.asarray(points, dtype=np.float64)
        idx = np.floor(p / self.voxel_edge).astype(np.int64)
        dims = np.array(self.dims)
        inside = np.all((idx >= 0) & (idx < dims), axis=-1)
        idx_c = np.clip(idx, 0, dims - 1)
        lab = self.data[idx_c[..., 0], idx_c[..., 1], idx_c[..., 2]]
        return lab & inside


@dataclass
class ColoredPointCloud:
    points: np.ndarray                    # (N, 3) world coords
    colors: np.ndarray | None = None      # (N, 3) rgb in [0, 1]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise InvalidArgumentError("point coordinates must be finite")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float32).reshape(-1, 3)
            if self.colors.shape[0] != self.points.shape[0]:
                raise InvalidArgumentError("colors row count must match points")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_colors(self) -> bool:
        return self.colors is not None


@dataclass
class TriMesh:
    vertices: np.ndarray                  # (M, 3)
    faces: np.ndarray                     # (F, 3) int indices
    vertex_colors: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float32).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size:
            if self.faces.max() >= len(self.vertices) or self.faces.min() < 0:
                raise InvalidArgumentError("face index out of range")
            a, b, c = self.faces.T
            if np.any((a == b) | (b == c) | (a == c)):
                raise InvalidArgumentError("degenerate face with repeated vertex")
        if self.vertex_colors is not None:
            self.vertex_colors = np.asarray(self.vertex_colors, dtype=np.float32).reshape(-1, 3)
            if self.vertex_colors.shape[0] != self.vertices.shape[0]:
                raise InvalidArgumentError("vertex_colors row count must match vertices")

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(
            np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def signed_volume(self) -> float:
        """Divergence-theorem volume; positive for outward-oriented closed
        surfaces."""
        v = self.vertices[self.faces].astype(np.float64)
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


@dataclass
class SceneChunkSample:
    grid_coords: tuple[int, int]           # (u, v) chunk indices along x, z
    occupancy: OccupancyGrid               # s x Y x s
    surface: ColoredPointCloud             # chunk-local coordinates


def partition_scene(grid: OccupancyGrid, surface: ColoredPointCloud,
                    s: int) -> list[SceneChunkSample]:
    """Tile a scene into s x Y x s chunks along x and z.

    Scenes whose X or Z is not a multiple of s are padded with empty voxels
    on the max side first, so the partition is lossless. Surface points are
    assigned to the chunk whose half-open footprint contains them (points on
    the far scene boundary go to the last chunk) and re-centered to the
    chunk origin.
    """
    if s < 4:
        raise InvalidArgumentError(f"chunk size {s} < 4")
    X, Y, Z = grid.dims
    if s > X or s > Z:
        raise InvalidArgumentError(f"chunk size {s} exceeds scene dims {(X, Z)}")
    pad_x = (-X) % s
    pad_z = (-Z) % s
    data = grid.data
    if pad_x or pad_z:
        data = np.pad(data, ((0, pad_x), (0, 0), (0, pad_z)))
    nu, nv = data.shape[0] // s, data.shape[2] // s
    e = grid.voxel_edge
    span = s * e

    pts = surface.points
    ui = np.minimum(np.floor(pts[:, 0] / span).astype(np.int64), nu - 1)
    vi = np.minimum(np.floor(pts[:, 2] / span).astype(np.int64), nv - 1)

    chunks = []
    for u in range(nu):
        for v in range(nv):
            occ = OccupancyGrid(data[u * s:(u + 1) * s, :, v * s:(v + 1) * s].copy(), e)
            sel = (ui == u) & (vi == v)
            local = pts[sel] - np.array([u * span, 0.0, v * span], dtype=np.float32)
            colors = surface.colors[sel] if surface.has_colors else None
            chunks.append(SceneChunkSample((u, v), occ, ColoredPointCloud(local, colors)))
    return chunks


def assemble_chunks(chunks: list[SceneChunkSample], nu: int, nv: int) -> OccupancyGrid:
    """Inverse of partition_scene for the occupancy part."""
    if not chunks:
        raise EmptyInputError("no chunks to assemble")
    s, Y, _ = chunks[0].occupancy.dims
    e = chunks[0].occupancy.voxel_edge
    out = np.zeros((nu * s, Y, nv * s), dtype=bool)
    for ch in chunks:
        u, v = ch.grid_coords
        out[u * s:(u + 1) * s, :, v * s:(v + 1) * s] = ch.occupancy.data
    return OccupancyGrid(out, e)


def sample_surface_points(mesh: TriMesh, n: int, seed: int) -> ColoredPointCloud:
    """Area-uniform barycentric sampling of n points on the mesh surface."""
    if mesh.is_empty:
        raise EmptyInputError("cannot sample an empty mesh")
    if n < 1:
        raise InvalidArgumentError("need n >= 1 sample points")
    areas = mesh.face_areas().astype(np.float64)
    total = areas.sum()
    if total <= 0:
        raise DegenerateInputError("mesh has zero surface area")
    rng = rng_from(seed)
    fidx = rng.choice(len(mesh.faces), size=n, p=areas / total)
    uv = rng.random((n, 2))
    flip = uv.sum(axis=1) > 1.0
    uv[flip] = 1.0 - uv[flip]
    u, v = uv[:, 0:1], uv[:, 1:2]
    tri = mesh.vertices[mesh.faces[fidx]].astype(np.float64)
    pts = tri[:, 0] + u * (tri[:, 1] - tri[:, 0]) + v * (tri[:, 2] - tri[:, 0])
    colors = None
    if mesh.vertex_colors is not None:
        col = mesh.vertex_colors[mesh.faces[fidx]].astype(np.float64)
        colors = (1.0 - u - v) * col[:, 0] + u * col[:, 1] + v * col[:, 2]
    return ColoredPointCloud(pts, colors)


def nearest_color_transfer(mesh: TriMesh, colored: ColoredPointCloud) -> TriMesh:
    """Color each mesh vertex from its nearest point in `colored`.

    Exact nearest neighbor, ties broken by lowest point index (argmin over
    squared distances scans in index order). Blocked so memory stays
    bounded for large meshes.
    """
    if len(colored) == 0:
        raise EmptyInputError("colored point cloud is empty")
    if not colored.has_colors:
        raise InvalidArgumentError("nearest_color_transfer needs colors")
    verts = mesh.vertices.astype(np.float64)
    pts = colored.points.astype(np.float64)
    out = np.empty((len(verts), 3), dtype=np.float32)
    block = max(1, int(4_000_000 // max(1, len(pts))))
    for i in range(0, len(verts), block):
        d2 = np.sum((verts[i:i + block, None, :] - pts[None, :, :]) ** 2, axis=2)
        out[i:i + block] = colored.colors[np.argmin(d2, axis=1)]
    return TriMesh(mesh.vertices, mesh.faces, out)


def sample_occupancy_queries(grid: OccupancyGrid, n_uniform: int, n_near: int,
                             sigma: float, seed: int
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Draw labeled query points: a balanced occupied/empty uniform set plus
    Gaussian-perturbed surface samples.

    The uniform part has exactly floor(n_uniform/2) occupied points (points
    drawn inside occupied voxels) and the rest empty. Near-surface points are
    labeled by the voxel that contains them; points pushed outside the grid
    are empty.
    """
    from .marching import marching_cubes

    occ_idx = np.argwhere(grid.data)
    emp_idx = np.argwhere(~grid.data)
    if len(occ_idx) == 0 or len(emp_idx) == 0:
        raise DegenerateInputError("balanced sampling needs occupied and empty voxels")
    rng = rng_from(seed)
    n_occ = n_uniform // 2
    n_emp = n_uniform - n_occ
    e = grid.voxel_edge

    def draw(pool: np.ndarray, k: int) -> np.ndarray:
        rows = pool[rng.integers(0, len(pool), size=k)]
        return (rows + rng.random((k, 3))) * e

    pts_occ = draw(occ_idx, n_occ)
    pts_emp = draw(emp_idx, n_emp)
    coords = [pts_occ, pts_emp]
    labels = [np.ones(n_occ, dtype=bool), np.zeros(n_emp, dtype=bool)]

    if n_near > 0:
        mesh = marching_cubes(grid)
        if mesh.is_empty:
            raise DegenerateInputError("no surface to sample near")
        near = sample_surface_points(mesh, n_near, seed=int(rng.integers(2 ** 62))).points
        near = near.astype(np.float64) + sigma * rng.standard_normal((n_near, 3))
        coords.append(near)
        labels.append(grid.occupancy_at(near))

    return np.concatenate(coords).astype(np.float32), np.concatenate(labels)
