"""Renderer, edge operators, and the frozen patch encoder."""

import hashlib
from importlib import resources

import numpy as np
import pytest

from worldflow.errors import InvalidArgumentError
from worldflow.forge import forge_scene, load_theme
from worldflow.geometry import TriMesh
from worldflow.sketch import (SKETCH_ENCODER_TOY_SHA256, SketchConfig,
                              canny_edges, encode_sketch,
                              frozen_encoder_params, load_sketch_png,
                              luminance, reference_blob_bytes, render_scene,
                              save_sketch_png, sketch_variants, soft_edges,
                              _position_table)

CFG = SketchConfig.toy()


def _scene_mesh(rows, cols, seed=0, theme="castle", **density_overrides):
    cfg = load_theme(theme, points_per_chunk=512)
    if density_overrides:
        cfg.densities.update(density_overrides)
    _, mesh, _ = forge_scene(cfg, rows, cols, seed=seed)
    return mesh


def _content_bbox(img):
    """Bounding box of non-background pixels as (width, height)."""
    ys, xs = np.nonzero(img < 0.999)
    return xs.max() - xs.min() + 1, ys.max() - ys.min() + 1


class TestRenderer:
    def test_empty_mesh_white_image(self):
        empty = TriMesh(np.zeros((0, 3), dtype=np.float32), np.zeros((0, 3), dtype=np.int64))
        img = render_scene(empty, colored=False, config=CFG)
        assert img.shape == (128, 128)
        np.testing.assert_array_equal(img, 1.0)
        img3 = render_scene(empty, colored=True, config=CFG)
        assert img3.shape == (128, 128, 3)

    def test_deterministic(self):
        mesh = _scene_mesh(1, 2)
        a = render_scene(mesh, colored=True, config=CFG)
        b = render_scene(mesh, colored=True, config=CFG)
        np.testing.assert_array_equal(a, b)

    def test_values_in_unit_range(self):
        mesh = _scene_mesh(1, 2)
        for colored in (False, True):
            img = render_scene(mesh, colored=colored, config=CFG)
            assert img.min() >= 0.0 and img.max() <= 1.0
            assert (img < 0.999).any(), "scene content missing"

    def test_elongated_scene_renders_wide(self):
        mesh = _scene_mesh(2, 4)
        img = render_scene(mesh, colored=False, config=CFG)
        w, h = _content_bbox(img)
        assert w > h

    def test_wide_never_shorter_than_tall_layouts(self):
        for rows, cols in [(1, 2), (2, 3)]:
            img = render_scene(_scene_mesh(rows, cols), colored=False, config=CFG)
            w, h = _content_bbox(img)
            assert w >= h

    def test_colored_render_needs_colors(self):
        mesh = _scene_mesh(1, 1)
        bare = TriMesh(mesh.vertices, mesh.faces)
        with pytest.raises(InvalidArgumentError):
            render_scene(bare, colored=True, config=CFG)

    def test_margin_respected(self):
        img = render_scene(_scene_mesh(1, 2), colored=False, config=CFG)
        ys, xs = np.nonzero(img < 0.999)
        pad = int(CFG.margin * CFG.resolution) - 2
        assert xs.min() >= pad and xs.max() < CFG.resolution - pad
        assert ys.min() >= pad and ys.max() < CFG.resolution - pad


class TestEdges:
    def test_constant_image_no_edges(self):
        np.testing.assert_array_equal(canny_edges(np.full((64, 64), 0.5)), 0.0)

    def test_binary_output(self):
        img = np.zeros((64, 64), dtype=np.float32)
        img[:, 32:] = 1.0
        edges = canny_edges(img)
        assert set(np.unique(edges)) <= {0.0, 1.0}

    def test_vertical_step_one_pixel_line(self):
        img = np.zeros((64, 64), dtype=np.float32)
        img[:, 32:] = 1.0
        edges = canny_edges(img)
        per_col = edges.sum(axis=0)
        assert edges.sum() > 0
        assert per_col.max() / edges.sum() >= 0.9

    def test_translation_covariance(self):
        rng = np.random.default_rng(0)
        img = np.zeros((96, 96), dtype=np.float32)
        img[30:50, 28:60] = 0.9
        img += 0.02 * rng.random((96, 96)).astype(np.float32)
        base = canny_edges(img)
        shifted = canny_edges(np.roll(img, 7, axis=1))
        np.testing.assert_array_equal(np.roll(base, 7, axis=1)[10:-10, 10:-10],
                                      shifted[10:-10, 10:-10])

    def test_bad_thresholds(self):
        img = np.zeros((16, 16))
        with pytest.raises(InvalidArgumentError):
            canny_edges(img, low=0.3, high=0.2)
        with pytest.raises(InvalidArgumentError):
            canny_edges(img, low=0.0, high=0.2)

    def test_soft_edges_continuous_unit_range(self):
        img = render_scene(_scene_mesh(1, 2), colored=False, config=CFG)
        soft = soft_edges(img)
        assert soft.min() >= 0.0 and soft.max() <= 1.0
        interior = (soft > 0.01) & (soft < 0.99)
        assert interior.any(), "soft edges should be graded, not binary"


class TestVariants:
    def test_four_variants_shapes_and_ranges(self):
        mesh = _scene_mesh(1, 2)
        variants = sketch_variants(mesh, CFG)
        assert len(variants) == 4
        for v in variants:
            assert v.shape == (CFG.resolution, CFG.resolution)
            assert v.min() >= 0.0 and v.max() <= 1.0
        assert set(np.unique(variants[0])) <= {0.0, 1.0}
        assert set(np.unique(variants[2])) <= {0.0, 1.0}

    def test_color_only_boundaries_show_in_colored_canny(self):
        # flat ground with color-only road strips: geometry has no interior
        # edges, so road boundaries can only appear in the colored variant
        mesh = _scene_mesh(1, 2, theme="dunes", terrain=0.0, tower=0.0,
                           tree=0.0, wall=0.0, road=1.0)
        variants = sketch_variants(mesh, CFG)
        colored_canny, colorless_canny = variants[0], variants[2]
        pad = np.pad(colorless_canny.astype(bool), 1)
        near_colorless = np.zeros_like(colorless_canny, dtype=bool)
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                near_colorless |= pad[dy:dy + 128, dx:dx + 128]
        colored_only = (colored_canny > 0) & ~near_colorless
        assert colored_only.sum() > 10


class TestEncoder:
    def test_token_count_and_shapes(self):
        enc = encode_sketch(np.zeros((128, 128), dtype=np.float32), CFG)
        assert enc.tokens.shape == (256, 64)
        assert enc.cls.shape == (64,)
        big = SketchConfig(resolution=512, patch=16, d_sk=128)
        assert big.n_tokens == 1024

    def test_zero_sketch_tokens_equal_positions(self):
        enc = encode_sketch(np.zeros((128, 128), dtype=np.float32), CFG)
        np.testing.assert_array_equal(enc.tokens, _position_table(16, 64))

    def test_distinct_sketches_distinct_cls(self):
        a = encode_sketch(np.zeros((128, 128), dtype=np.float32), CFG)
        img = np.zeros((128, 128), dtype=np.float32)
        img[40:80, 20:100] = 1.0
        b = encode_sketch(img, CFG)
        assert np.linalg.norm(a.cls - b.cls) > 0

    def test_resolution_mismatch_raises(self):
        with pytest.raises(InvalidArgumentError):
            encode_sketch(np.zeros((64, 64), dtype=np.float32), CFG)
        with pytest.raises(InvalidArgumentError):
            encode_sketch(np.zeros((128, 64), dtype=np.float32), CFG)

    def test_frozen_params_stable_across_restart_and_reload(self, tmp_path):
        from worldflow.nn.params import load_checkpoint, save_checkpoint

        p1 = frozen_encoder_params(CFG)
        p2 = frozen_encoder_params(CFG)
        np.testing.assert_array_equal(p1["patch_proj"], p2["patch_proj"])
        save_checkpoint(tmp_path / "enc.bin", p1)
        loaded, _ = load_checkpoint(tmp_path / "enc.bin")
        img = np.zeros((128, 128), dtype=np.float32)
        img[10:50, 30:90] = 0.7
        e1 = encode_sketch(img, CFG, p1)
        e2 = encode_sketch(img, CFG, loaded)
        np.testing.assert_array_equal(e1.tokens, e2.tokens)
        np.testing.assert_array_equal(e1.cls, e2.cls)

    def test_shipped_blob_hash_pinned(self):
        blob = (resources.files("worldflow") / "data" / "sketch_encoder_toy.bin").read_bytes()
        assert hashlib.sha256(blob).hexdigest() == SKETCH_ENCODER_TOY_SHA256
        assert blob == reference_blob_bytes(CFG)

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            SketchConfig(resolution=100, patch=16)
        with pytest.raises(InvalidArgumentError):
            SketchConfig(d_sk=30)
        with pytest.raises(InvalidArgumentError):
            SketchConfig(canny_low=0.5, canny_high=0.2)


class TestPngIO:
    def test_round_trip_exact_on_quantized(self, tmp_path):
        rng = np.random.default_rng(5)
        img = np.rint(rng.random((128, 128)) * 255).astype(np.float32) / 255.0
        p = tmp_path / "sk.png"
        save_sketch_png(p, img)
        back = load_sketch_png(p)
        np.testing.assert_allclose(back, img, atol=1e-7)

    def test_round_trip_within_quantization(self, tmp_path):
        img = np.random.default_rng(6).random((64, 64)).astype(np.float32)
        p = tmp_path / "sk.png"
        save_sketch_png(p, img)
        assert np.abs(load_sketch_png(p) - img).max() <= 0.5 / 255.0 + 1e-7

    def test_luminance_shapes(self):
        assert luminance(np.zeros((8, 8))).shape == (8, 8)
        assert luminance(np.zeros((8, 8, 3))).shape == (8, 8)
        with pytest.raises(InvalidArgumentError):
            luminance(np.zeros((8, 8, 4)))
