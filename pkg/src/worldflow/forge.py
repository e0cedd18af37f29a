"""Deterministic procedural scene generator and the training layout sampler.

Scenes are built on a chunk lattice: a 2-voxel ground slab, a value-noise
terrain heightfield (amplitude up to 4 voxels), and discrete elements
(towers, trees, walls, roads) snapped to chunk-aligned positions so that
adjacent chunks share coherent structures. Roads repaint the surface
material without changing geometry, giving color-only edges. A material-id
volume drives vertex colors on the extracted mesh; the returned point cloud
is sampled from that colored surface.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, PersistenceError
from .formats import canonical_json, save_chunk, write_sidecar
from .geometry import (ColoredPointCloud, OccupancyGrid, TriMesh,
                       partition_scene, sample_surface_points)
from .marching import marching_cubes
from .seeding import derive_seed, rng_from

GROUND_THICKNESS = 2      # voxels; fixed scene-unification constant
TERRAIN_AMPLITUDE = 4     # max voxels of heightfield relief

# material ids into the palette
_M_GROUND, _M_TERRAIN, _M_TOWER, _M_TOWER_TOP = 0, 1, 2, 3
_M_TRUNK, _M_LEAF, _M_WALL, _M_ROAD = 4, 5, 6, 7

_ELEMENTS = ("terrain", "tower", "tree", "wall", "road")


@dataclass
class ForgeConfig:
    chunk_size: int = 16
    height_y: int = 16
    palette: list = field(default_factory=lambda: [[0.5, 0.5, 0.5]])
    densities: dict = field(default_factory=lambda: {k: 0.5 for k in _ELEMENTS})
    theme: str = "custom"
    points_per_chunk: int = 4096

    def __post_init__(self):
        if self.chunk_size < 8:
            raise InvalidArgumentError("forged content needs chunk_size >= 8")
        if not self.palette:
            raise InvalidArgumentError("palette must be non-empty")
        for k in _ELEMENTS:
            d = self.densities.get(k, 0.0)
            if not 0.0 <= d <= 1.0:
                raise InvalidArgumentError(f"density {k}={d} outside [0, 1]")

    def color(self, material: int) -> np.ndarray:
        return np.asarray(self.palette[material % len(self.palette)], dtype=np.float32)


@dataclass(frozen=True)
class LayoutSpec:
    rows: int
    cols: int

    @property
    def area(self) -> int:
        return self.rows * self.cols


def load_theme(name: str, **overrides) -> ForgeConfig:
    text = resources.files("worldflow").joinpath("data/themes.json").read_text()
    themes = json.loads(text)
    if name not in themes:
        raise InvalidArgumentError(f"unknown theme {name!r}; have {sorted(themes)}")
    t = themes[name]
    kwargs = dict(palette=t["palette"], densities=dict(t["densities"]), theme=name)
    kwargs.update(overrides)
    return ForgeConfig(**kwargs)


def _value_noise(rng: np.random.Generator, nx: int, nz: int, cell: int) -> np.ndarray:
    """Bilinear value noise in [0, 1] with smoothstep fade."""
    gx, gz = nx // cell + 2, nz // cell + 2
    lattice = rng.random((gx, gz))
    xs = np.arange(nx) / cell
    zs = np.arange(nz) / cell
    ix, iz = xs.astype(int), zs.astype(int)
    fx, fz = xs - ix, zs - iz
    fx = fx * fx * (3 - 2 * fx)
    fz = fz * fz * (3 - 2 * fz)
    a = lattice[np.ix_(ix, iz)]
    b = lattice[np.ix_(ix + 1, iz)]
    c = lattice[np.ix_(ix, iz + 1)]
    d = lattice[np.ix_(ix + 1, iz + 1)]
    return ((a * (1 - fx[:, None]) + b * fx[:, None]) * (1 - fz[None, :])
            + (c * (1 - fx[:, None]) + d * fx[:, None]) * fz[None, :])


def forge_scene(config: ForgeConfig, rows: int, cols: int,
                seed: int) -> tuple[OccupancyGrid, TriMesh, ColoredPointCloud]:
    if rows < 1 or cols < 1:
        raise InvalidArgumentError("need at least a 1x1 chunk layout")
    s, Y = config.chunk_size, config.height_y
    if Y < GROUND_THICKNESS + 1:
        raise InvalidArgumentError(
            f"height {Y} cannot hold the {GROUND_THICKNESS}-voxel ground layer plus air")
    X, Z = rows * s, cols * s
    occ = np.zeros((X, Y, Z), dtype=bool)
    mat = np.zeros((X, Y, Z), dtype=np.uint8)
    occ[:, :GROUND_THICKNESS, :] = True
    top_cap = Y - 1  # keep the top voxel layer empty

    d = config.densities

    # terrain heightfield
    height = np.full((X, Z), GROUND_THICKNESS, dtype=np.int64)
    if d.get("terrain", 0.0) > 0:
        rng = rng_from(seed, 1)
        noise = 0.7 * _value_noise(rng, X, Z, 8) + 0.3 * _value_noise(rng, X, Z, 4)
        relief = np.rint(TERRAIN_AMPLITUDE * d["terrain"] * noise).astype(np.int64)
        height = np.minimum(GROUND_THICKNESS + relief, top_cap)
        ys = np.arange(Y)[None, :, None]
        added = (ys >= GROUND_THICKNESS) & (ys < height[:, None, :])
        occ |= added
        mat[added] = _M_TERRAIN

    def column(x0, x1, y0, y1, z0, z1, material):
        y1 = min(y1, top_cap)
        if y1 <= y0:
            return
        occ[x0:x1, y0:y1, z0:z1] = True
        mat[x0:x1, y0:y1, z0:z1] = material

    # towers: at most one per chunk, snapped to quarter-chunk lattice points
    if d.get("tower", 0.0) > 0:
        rng = rng_from(seed, 2)
        snaps = [max(2, s // 4), s // 2, min(s - 3, 3 * s // 4)]
        for u in range(rows):
            for v in range(cols):
                hit = rng.random() < d["tower"]
                cx = u * s + snaps[rng.integers(0, 3)]
                cz = v * s + snaps[rng.integers(0, 3)]
                h = int(rng.integers(int(0.55 * Y), max(int(0.55 * Y) + 1, int(0.9 * Y))))
                if not hit:
                    continue
                base = int(height[cx, cz])
                column(cx - 1, cx + 2, base, base + h, cz - 1, cz + 2, _M_TOWER)
                column(cx - 1, cx + 2, base + h - 1, base + h, cz - 1, cz + 2, _M_TOWER_TOP)

    # trees: up to 3 per chunk on a 4-voxel snap grid
    if d.get("tree", 0.0) > 0:
        rng = rng_from(seed, 3)
        n_spots = max(1, (s - 3) // 4)
        for u in range(rows):
            for v in range(cols):
                k = int(rng.binomial(3, d["tree"]))
                spots = rng.integers(0, n_spots, size=(3, 2)) * 4
                for i in range(k):
                    tx = u * s + int(np.clip(spots[i, 0], 2, s - 3))
                    tz = v * s + int(np.clip(spots[i, 1], 2, s - 3))
                    base = int(height[tx, tz])
                    column(tx, tx + 1, base, base + 3, tz, tz + 1, _M_TRUNK)
                    column(tx - 1, tx + 2, base + 3, base + 5, tz - 1, tz + 2, _M_LEAF)

    # walls along internal chunk boundaries
    if d.get("wall", 0.0) > 0:
        rng = rng_from(seed, 4)
        wall_h = max(3, Y // 4)
        for u in range(rows - 1):            # boundaries normal to x
            for v in range(cols):
                if rng.random() < d["wall"]:
                    x = (u + 1) * s - 1
                    z0, z1 = v * s, (v + 1) * s
                    base = int(height[x, z0:z1].max())
                    column(x, x + 1, GROUND_THICKNESS, base + wall_h, z0, z1, _M_WALL)
        for v in range(cols - 1):            # boundaries normal to z
            for u in range(rows):
                if rng.random() < d["wall"]:
                    z = (v + 1) * s - 1
                    x0, x1 = u * s, (u + 1) * s
                    base = int(height[x0:x1, z].max())
                    column(x0, x1, GROUND_THICKNESS, base + wall_h, z, z + 1, _M_WALL)

    # roads: repaint a strip through each chunk column center (no geometry)
    if d.get("road", 0.0) > 0:
        rng = rng_from(seed, 5)
        for v in range(cols):
            if rng.random() < d["road"]:
                z0 = v * s + s // 2 - 1
                strip = mat[:, :, z0:z0 + 2]
                strip[occ[:, :, z0:z0 + 2] & np.isin(strip, (_M_GROUND, _M_TERRAIN))] = _M_ROAD

    grid = OccupancyGrid(occ, 2.0 / s)
    mesh = marching_cubes(grid)
    mesh.vertex_colors = _color_vertices(mesh.vertices, occ, mat, config, grid.voxel_edge)
    n_points = config.points_per_chunk * rows * cols
    cloud = sample_surface_points(mesh, n_points, seed=derive_seed(seed, 6))
    return grid, mesh, cloud


def _color_vertices(verts: np.ndarray, occ: np.ndarray, mat: np.ndarray,
                    config: ForgeConfig, e: float) -> np.ndarray:
    """Assign each mesh vertex the palette color of the nearest occupied
    voxel among the corners of the lattice cell containing it."""
    if len(verts) == 0:
        return np.zeros((0, 3), dtype=np.float32)
    q = verts.astype(np.float64) / e - 0.5       # lattice coords (voxel centers)
    base = np.floor(q - 1e-9).astype(np.int64)
    dims = np.array(occ.shape)
    best_d = np.full(len(verts), np.inf)
    material = np.zeros(len(verts), dtype=np.uint8)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                idx = base + (dx, dy, dz)
                idx = np.clip(idx, 0, dims - 1)
                occ_here = occ[idx[:, 0], idx[:, 1], idx[:, 2]]
                dist = np.sum((q - idx) ** 2, axis=1)
                better = occ_here & (dist < best_d)
                best_d[better] = dist[better]
                material[better] = mat[idx[better, 0], idx[better, 1], idx[better, 2]]
    palette = np.array([config.color(m) for m in range(256)], dtype=np.float32)
    return palette[material]


def sample_layout_detailed(area_min: int, area_max: int, p_square: float,
                           ratio_range: tuple[float, float], seed: int,
                           min_side: int = 15) -> tuple[LayoutSpec, dict]:
    """Draw a scene layout: area log-uniform, square with probability
    p_square, otherwise a log-uniform aspect ratio.

    Returns the layout plus the pre-rounding draws {area, ratio, square} so
    the sampling law itself stays observable after integer rounding. The
    non-square branch never returns rows == cols (cols is bumped by one when
    rounding collapses the rectangle), so the square fraction of many draws
    equals p_square exactly. min_side below 15 is for explicit
    user-specified small scenes only.
    """
    if min_side < 1:
        raise InvalidArgumentError("min_side must be >= 1")
    if area_min < min_side * min_side:
        raise InvalidArgumentError(
            f"area_min {area_min} cannot satisfy side >= {min_side}")
    if area_max < area_min:
        raise InvalidArgumentError("area_max < area_min")
    lo, hi = ratio_range
    if not (1.0 <= lo <= hi <= 3.0):
        raise InvalidArgumentError(f"ratio_range {ratio_range} outside [1, 3]")
    rng = rng_from(seed)
    a = math.exp(rng.uniform(math.log(area_min), math.log(area_max)))
    if rng.random() < p_square:
        side = max(min_side, round(math.sqrt(a)))
        return LayoutSpec(side, side), {"area": a, "ratio": 1.0, "square": True}
    r = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    rows = max(min_side, round(math.sqrt(a / r)))
    cols = max(rows, round(a / rows))
    if cols == rows:
        cols = rows + 1
    return LayoutSpec(rows, cols), {"area": a, "ratio": r, "square": False}


def sample_layout(area_min: int, area_max: int, p_square: float,
                  ratio_range: tuple[float, float], seed: int,
                  min_side: int = 15) -> LayoutSpec:
    return sample_layout_detailed(area_min, area_max, p_square, ratio_range,
                                  seed, min_side)[0]


def build_bootstrap_dataset(config: ForgeConfig, m: int, seed: int, out_dir,
                            layout: tuple[int, int] = (2, 4),
                            config_hash: str = "unhashed") -> list[Path]:
    """Forge m scenes (per-scene seeds seed+i), partition each into chunks,
    and persist them. Returns the scene manifest paths."""
    if m < 1:
        raise InvalidArgumentError("need m >= 1 scenes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, cols = layout
    manifests = []
    for i in range(m):
        scene_seed = seed + i
        grid, _, cloud = forge_scene(config, rows, cols, scene_seed)
        chunks = partition_scene(grid, cloud, config.chunk_size)
        scene_dir = out / f"scene_{i:04d}"
        scene_dir.mkdir(exist_ok=True)
        files = []
        try:
            for ch in chunks:
                u, v = ch.grid_coords
                p = scene_dir / f"chunk_{u:02d}_{v:02d}.nwchunk"
                save_chunk(p, ch)
                write_sidecar(p, config_hash, scene_seed)
                files.append(p.name)
        except OSError as exc:
            raise PersistenceError(f"failed writing chunk files: {exc}") from exc
        manifest = {
            "scene_index": i,
            "seed": scene_seed,
            "layout": [rows, cols],
            "chunk_size": config.chunk_size,
            "height_y": config.height_y,
            "theme": config.theme,
            "chunks": files,
            "config_hash": config_hash,
        }
        mp = scene_dir / "scene.json"
        mp.write_text(canonical_json(manifest) + "\n")
        manifests.append(mp)
    return manifests
