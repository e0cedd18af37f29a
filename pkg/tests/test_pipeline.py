"""Integration tests for the staged pipeline, its provenance tracking, and
the command-line interface. Uses a miniature config so the full chain runs
in seconds; quality-bar training runs live in the acceptance suite."""

import dataclasses
import json

import numpy as np
import pytest

from worldflow.cli import main as cli_main
from worldflow.errors import (DependencyError, InvalidArgumentError,
                              StaleArtifactError)
from worldflow.forge import LayoutSpec
from worldflow.formats import load_latent_grid, read_sidecar
from worldflow.metrics import MetricReport
from worldflow.pipeline import (Pipeline, PipelineConfig, config_hash,
                                export_mesh_ply, load_pipeline_config,
                                merge_meshes, save_pipeline_config)
from worldflow.geometry import TriMesh

MINI = PipelineConfig(
    theme="castle", seed=11,
    chunk_size=8, height_y=8, v=2, c=8,
    vae_d_model=32, vae_heads=2, vae_depth=2,
    vae_n_pc=128, vae_n_occ=64, vae_n_col=32, vae_pos_dim=8,
    vae_steps=40, vae_lr=2e-3, vae_batch=4,
    quad_d_model=32, quad_heads=2, quad_depth=2,
    quad_steps=30, quad_batch=8, quad_sample_steps=4,
    sketch_resolution=64, sketch_patch=8, d_sk=32,
    world_width=32, world_depth=1, world_heads=2,
    world_steps=30, world_lr=1e-3, gen_steps=2, gen_guidance=1.5,
    size_hidden=16, size_steps=60, size_lr=5e-3,
    area_min=4, area_max=9, min_side=2,
    m_bootstrap=1, bootstrap_rows=2, bootstrap_cols=2,
    q_synth=3, train_count=2,
    eval_points=128, eval_chunk_points=32,
)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini_run")
    pipe = Pipeline(MINI, out)
    report = pipe.run_all()
    return pipe, report


def test_config_save_load_round_trip(tmp_path):
    p = tmp_path / "cfg.json"
    save_pipeline_config(p, MINI)
    assert load_pipeline_config(p) == MINI
    raw = json.loads(p.read_text())
    raw["not_a_field"] = 1
    p.write_text(json.dumps(raw))
    with pytest.raises(InvalidArgumentError):
        load_pipeline_config(p)


def test_config_hash_tracks_every_field():
    base = config_hash(MINI)
    assert base == config_hash(PipelineConfig(**dataclasses.asdict(MINI)))
    assert config_hash(dataclasses.replace(MINI, seed=12)) != base
    assert config_hash(dataclasses.replace(MINI, gen_guidance=2.0)) != base


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        dataclasses.replace(MINI, train_count=3)      # empty validation split
    with pytest.raises(InvalidArgumentError):
        dataclasses.replace(MINI, bootstrap_rows=1)   # no quad windows
    assert MINI.val_count == 1


def test_full_run_produces_metric_report(run):
    pipe, report = run
    assert isinstance(report, MetricReport)
    assert pipe.eval_path.exists()
    on_disk = MetricReport.from_json(pipe.eval_path.read_text())
    assert on_disk.to_json() == report.to_json()
    for key in ("latent_rmse", "chamfer"):
        assert key in report.values
        assert np.isfinite(report.values[key])
    assert report.counts["val_scenes"] == 1


def test_artifacts_carry_provenance(run):
    pipe, _ = run
    for path in (pipe.vae_path, pipe.quad_path, pipe.world_path,
                 pipe.size_path, pipe._synth_path(0), pipe._gen_path(2)):
        side = read_sidecar(path)
        assert side["config_hash"] == pipe.hash
        assert "producer_version" in side and "payload_sha256" in side


def test_stage_rerun_is_byte_identical(run):
    pipe, _ = run
    target = pipe._synth_path(1)
    before = target.read_bytes()
    side_before = read_sidecar(target)
    pipe.stage_synth()
    assert target.read_bytes() == before
    assert read_sidecar(target) == side_before


def test_generated_scene_uses_ground_truth_layout(run):
    pipe, _ = run
    gen, meta = load_latent_grid(pipe._gen_path(2))
    _, gt_meta = load_latent_grid(pipe._synth_path(2))
    assert meta["layout"] == gt_meta["layout"]
    rows, cols = meta["layout"]
    assert gen.shape == (rows, cols, MINI.v, MINI.c)
    assert meta["provenance"] == "world-model-generated"
    assert gt_meta["provenance"] == "chunk-synthesized"


def test_missing_upstream_raises_dependency_error(tmp_path):
    pipe = Pipeline(MINI, tmp_path / "fresh")
    with pytest.raises(DependencyError, match="forge"):
        pipe.stage_train_vae()
    with pytest.raises(DependencyError, match="train_quad"):
        pipe.stage_synth()
    with pytest.raises(DependencyError, match="train_world"):
        pipe.stage_generate()


def test_stale_config_raises(tmp_path):
    out = tmp_path / "stale"
    Pipeline(MINI, out).stage_forge()
    other = Pipeline(dataclasses.replace(MINI, seed=99), out)
    with pytest.raises(StaleArtifactError):
        other.stage_train_vae()


def test_eval_refuses_mixed_provenance(run):
    pipe, _ = run
    with pytest.raises(StaleArtifactError, match="provenance"):
        pipe._load_latent_set([pipe._synth_path(2), pipe._gen_path(2)], "synth")


def test_generate_job_explicit_and_predicted_layout(run, tmp_path):
    pipe, _ = run
    sketch_png = pipe.sketch_dir / "scene_0000_v0.png"
    assert sketch_png.exists()

    job = {"sketch": str(sketch_png), "layout": [2, 3], "steps": 2,
           "guidance": 1.0, "seed": 5}
    out = pipe.generate_job(job, tmp_path / "explicit.nwlat")
    grid, meta = load_latent_grid(out)
    assert grid.shape == (2, 3, MINI.v, MINI.c)
    assert meta["layout"] == [2, 3]

    job["layout"] = "predict"
    out2 = pipe.generate_job(job, tmp_path / "predicted.nwlat")
    grid2, meta2 = load_latent_grid(out2)
    rows, cols = meta2["layout"]
    assert cols >= rows >= 2
    assert grid2.shape == (rows, cols, MINI.v, MINI.c)

    with pytest.raises(InvalidArgumentError):
        pipe.generate_job({"sketch": str(sketch_png)}, tmp_path / "bad.nwlat")


def test_export_scene_writes_deterministic_ply(run, tmp_path):
    pipe, _ = run
    a = tmp_path / "scene_a.ply"
    b = tmp_path / "scene_b.ply"
    pipe.export_scene(pipe._synth_path(0), a)
    pipe.export_scene(pipe._synth_path(0), b)
    assert a.read_bytes() == b.read_bytes()
    head = a.read_text().splitlines()
    assert head[0] == "ply" and head[1] == "format ascii 1.0"
    assert any(line.startswith("element vertex") for line in head[:4])


def test_export_ply_counts_match_mesh(tmp_path):
    mesh = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float32),
                   np.array([[0, 1, 2]]),
                   np.array([[1.0, 0.0, 0.0]] * 3, dtype=np.float32))
    p = tmp_path / "tri.ply"
    export_mesh_ply(p, mesh)
    text = p.read_text().splitlines()
    assert "element vertex 3" in text and "element face 1" in text
    assert text[-1] == "3 0 1 2"


def test_merge_meshes_offsets_and_empties():
    tri = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 0, 1]], dtype=np.float32),
                  np.array([[0, 1, 2]]))
    empty = TriMesh(np.zeros((0, 3), dtype=np.float32),
                    np.zeros((0, 3), dtype=np.int64))
    merged = merge_meshes([tri, empty, tri],
                          [np.zeros(3), np.zeros(3), np.array([2.0, 0, 0])])
    assert len(merged.vertices) == 6 and len(merged.faces) == 2
    assert merged.faces[1].tolist() == [3, 4, 5]
    assert merged.vertices[3, 0] == 2.0
    assert merge_meshes([empty], [np.zeros(3)]).is_empty


def test_profile_reports_token_scaling(run):
    pipe, _ = run
    layouts = [LayoutSpec(2, 2), LayoutSpec(2, 4), LayoutSpec(3, 5)]
    rows = pipe.profile(layouts, steps=1)
    tokens = [r["tokens"] for r in rows]
    assert tokens == [4, 8, 15]
    assert all(r["tokens"] == l.area for r, l in zip(rows, layouts))
    assert [r["quad_calls"] for r in rows] == [1, 3, 8]
    assert len({r["diffusion_steps"] for r in rows}) == 1
    assert all(r["attention_score_elements"] ==
               MINI.world_heads * r["tokens"] ** 2 for r in rows)


def test_unknown_stage_rejected(run):
    pipe, _ = run
    with pytest.raises(InvalidArgumentError):
        pipe.run("polish")


def test_cli_show_config(capsys):
    assert cli_main(["show-config"]) == 0
    out = capsys.readouterr().out
    assert "hash:" in out


def test_cli_stage_and_profile(run, tmp_path, capsys):
    pipe, _ = run
    cfg_path = tmp_path / "mini.json"
    save_pipeline_config(cfg_path, MINI)

    rc = cli_main(["profile", "--config", str(cfg_path),
                   "--out", str(pipe.out), "--layouts", "2x2,2x6", "--steps", "1"])
    assert rc == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["tokens"] for r in rows] == [4, 12]

    rc = cli_main(["eval", "--config", str(cfg_path), "--out", str(pipe.out)])
    assert rc == 0
    assert "latent_rmse" in capsys.readouterr().out


def test_cli_forge_fresh_dir(tmp_path, capsys):
    cfg_path = tmp_path / "mini.json"
    save_pipeline_config(cfg_path, MINI)
    rc = cli_main(["forge", "--config", str(cfg_path),
                   "--out", str(tmp_path / "run")])
    assert rc == 0
    assert (tmp_path / "run" / "forge" / "scene_0000" / "scene.json").exists()


def test_cli_layout_parse_error(tmp_path):
    cfg_path = tmp_path / "mini.json"
    save_pipeline_config(cfg_path, MINI)
    with pytest.raises(InvalidArgumentError):
        cli_main(["profile", "--config", str(cfg_path),
                  "--out", str(tmp_path), "--layouts", "banana"])
