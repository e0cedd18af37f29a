"""Forge determinism and content checks; layout sampler statistics."""

import json
import math

import numpy as np
import pytest

from worldflow.errors import InvalidArgumentError
from worldflow.forge import (
    GROUND_THICKNESS,
    ForgeConfig,
    LayoutSpec,
    build_bootstrap_dataset,
    forge_scene,
    load_theme,
    sample_layout,
)
from worldflow.formats import load_chunk


def _flat_config(**kw):
    kw.setdefault("densities", {k: 0.0 for k in ("terrain", "tower", "tree", "wall", "road")})
    kw.setdefault("palette", [[0.2, 0.6, 0.2]])
    return ForgeConfig(**kw)


def test_zero_densities_ground_slab_only():
    cfg = _flat_config(chunk_size=16, height_y=16)
    grid, _, cloud = forge_scene(cfg, 1, 2, seed=0)
    assert grid.dims == (16, 16, 32)
    assert grid.occupancy_rate() == GROUND_THICKNESS / 16
    assert len(cloud) == 2 * cfg.points_per_chunk


def test_forge_deterministic():
    cfg = load_theme("castle", chunk_size=16, height_y=16, points_per_chunk=512)
    g1, _, c1 = forge_scene(cfg, 2, 2, seed=42)
    g2, _, c2 = forge_scene(cfg, 2, 2, seed=42)
    assert np.array_equal(g1.data, g2.data)
    assert np.array_equal(c1.points, c2.points)
    assert np.array_equal(c1.colors, c2.colors)
    g3, _, _ = forge_scene(cfg, 2, 2, seed=43)
    assert not np.array_equal(g1.data, g3.data)


def test_tower_density_one_gives_tower_per_chunk():
    cfg = load_theme("castle", chunk_size=16, height_y=16, points_per_chunk=256)
    cfg.densities["tower"] = 1.0
    grid, _, _ = forge_scene(cfg, 2, 2, seed=7)
    s = cfg.chunk_size
    terrain_cap = GROUND_THICKNESS + 4  # max terrain relief
    col_heights = grid.data.sum(axis=1)  # occupied count per (x, z) column
    for u in range(2):
        for v in range(2):
            block = col_heights[u * s:(u + 1) * s, v * s:(v + 1) * s]
            assert block.max() > terrain_cap, f"no tower in chunk {(u, v)}"


def test_forge_rejects_small_height():
    with pytest.raises(InvalidArgumentError):
        forge_scene(_flat_config(chunk_size=16, height_y=2), 1, 1, seed=0)


def test_forge_config_validation():
    with pytest.raises(InvalidArgumentError):
        ForgeConfig(chunk_size=4)
    with pytest.raises(InvalidArgumentError):
        ForgeConfig(palette=[])
    with pytest.raises(InvalidArgumentError):
        ForgeConfig(densities={"tower": 1.5})


def test_roads_color_without_geometry():
    cfg = _flat_config(chunk_size=16, height_y=16,
                       palette=[[0.2, 0.6, 0.2]] * 7 + [[0.1, 0.1, 0.1]])
    cfg.densities["road"] = 1.0
    grid, _, cloud = forge_scene(cfg, 1, 1, seed=3)
    flat, _, _ = forge_scene(_flat_config(chunk_size=16, height_y=16), 1, 1, seed=3)
    assert np.array_equal(grid.data, flat.data)      # geometry unchanged
    assert len(np.unique(cloud.colors.round(3), axis=0)) >= 2  # two surface colors


def test_every_chunk_contains_ground():
    cfg = load_theme("neon", chunk_size=16, height_y=16, points_per_chunk=128)
    grid, _, cloud = forge_scene(cfg, 2, 3, seed=11)
    from worldflow.geometry import partition_scene
    for ch in partition_scene(grid, cloud, 16):
        assert ch.occupancy.data[:, :GROUND_THICKNESS, :].all()


def test_load_theme_unknown():
    with pytest.raises(InvalidArgumentError):
        load_theme("nope")


# -- layout sampler ----------------------------------------------------


def test_sample_layout_square_branch():
    # p_square = 1 forces the square branch
    spec = sample_layout(225, 225, 1.0, (1.0, 3.0), seed=5)
    assert (spec.rows, spec.cols) == (15, 15)


def test_sample_layout_formula_case():
    # A=450, r=2 -> rows = round(sqrt(225)) = 15, cols = round(450/15) = 30
    rows = max(15, round(math.sqrt(450 / 2.0)))
    cols = max(rows, round(450 / rows))
    assert (rows, cols) == (15, 30)


def test_sample_layout_validation():
    with pytest.raises(InvalidArgumentError):
        sample_layout(100, 625, 0.3, (1.0, 3.0), seed=0)
    with pytest.raises(InvalidArgumentError):
        sample_layout(225, 100, 0.3, (1.0, 3.0), seed=0)
    with pytest.raises(InvalidArgumentError):
        sample_layout(225, 625, 0.3, (0.5, 3.0), seed=0)
    # explicit small layouts allowed with min_side override
    spec = sample_layout(16, 64, 0.3, (1.0, 2.0), seed=0, min_side=4)
    assert spec.cols >= spec.rows >= 4


def test_sample_layout_statistics():
    from worldflow.forge import sample_layout_detailed

    n = 100_000
    a0, a1 = 225, 625
    squares = 0
    log_areas = np.empty(n)
    for i in range(n):
        spec, info = sample_layout_detailed(a0, a1, 0.3, (1.0, 3.0), seed=i)
        assert spec.cols >= spec.rows >= 15
        squares += spec.rows == spec.cols
        log_areas[i] = math.log(info["area"])
    frac = squares / n
    assert 0.29 <= frac <= 0.31, f"square fraction {frac}"
    u = (np.sort(log_areas) - math.log(a0)) / (math.log(a1) - math.log(a0))
    steps = np.arange(1, n + 1) / n
    ks = max(np.max(np.abs(u - steps)), np.max(np.abs(u - (steps - 1 / n))))
    assert ks < 0.02, f"KS statistic {ks}"
    # rounded integer sides track the drawn area closely
    products = np.array([sample_layout(a0, a1, 0.3, (1.0, 3.0), seed=i).area
                         for i in range(0, n, 100)])
    assert products.min() >= a0 * 0.9 and products.max() <= a1 * 1.1


# -- bootstrap dataset ---------------------------------------------------


def test_build_bootstrap_dataset_round_trip(tmp_path):
    cfg = load_theme("castle", chunk_size=8, height_y=8, points_per_chunk=64)
    manifests = build_bootstrap_dataset(cfg, 2, seed=100, out_dir=tmp_path,
                                        layout=(1, 2))
    assert len(manifests) == 2
    man = json.loads(manifests[0].read_text())
    assert man["layout"] == [1, 2] and len(man["chunks"]) == 2
    ch = load_chunk(manifests[0].parent / man["chunks"][0])
    assert ch.occupancy.dims == (8, 8, 8)
    assert len(ch.surface) > 0 and ch.surface.has_colors


def test_build_bootstrap_dataset_deterministic_bytes(tmp_path):
    cfg = load_theme("dunes", chunk_size=8, height_y=8, points_per_chunk=64)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    m1 = build_bootstrap_dataset(cfg, 1, seed=5, out_dir=d1, layout=(1, 1))
    m2 = build_bootstrap_dataset(cfg, 1, seed=5, out_dir=d2, layout=(1, 1))
    f1 = m1[0].parent / "chunk_00_00.nwchunk"
    f2 = m2[0].parent / "chunk_00_00.nwchunk"
    assert f1.read_bytes() == f2.read_bytes()
