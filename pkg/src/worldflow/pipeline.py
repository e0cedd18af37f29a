"""End-to-end pipeline: forge -> chunk VAE -> quad flow -> scene synthesis
-> sketches -> world model -> size predictor -> generation -> evaluation.

Every stage writes its artifacts plus JSON sidecar manifests carrying the
config hash, the seed, and the producer version. Stages check their inputs
before running: a missing upstream artifact raises DependencyError naming
the stage that should have produced it, and an artifact written under a
different config hash raises StaleArtifactError. All randomness derives
from the single config seed, so re-running any stage overwrites its outputs
with byte-identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chunk_vae import (ChunkVae, VaeConfig, decode_chunk_mesh, encode_chunk,
                        load_vae, make_training_item, predict_height,
                        sample_latent, save_vae, train_vae)
from .errors import (DependencyError, InvalidArgumentError, PersistenceError,
                     StaleArtifactError)
from .forge import (LayoutSpec, build_bootstrap_dataset, load_theme,
                    sample_layout)
from .formats import (canonical_json, load_chunk, load_latent_grid,
                      read_sidecar, save_latent_grid, write_sidecar)
from .geometry import ColoredPointCloud, TriMesh
from .metrics import (MetricReport, chamfer_distance, feature_distance,
                      latent_rmse)
from .nn import load_checkpoint, save_checkpoint
from .quad_flow import (QuadFlowConfig, QuadFlowModel, load_quad,
                        raster_scan_generate, save_quad, train_quad)
from .seeding import derive_seed, rng_from
from .sketch import (SketchConfig, SketchEncoding, encode_sketch,
                     load_sketch_png, save_sketch_png, sketch_variants)
from .world_model import (SizePredictor, WorldConfig, WorldModel,
                          generate_world, load_size_predictor, load_world,
                          save_size_predictor, save_world,
                          train_size_predictor, train_world)

STAGES = ("forge", "train_vae", "encode", "train_quad", "synth", "sketch",
          "train_world", "train_size", "generate", "eval")

PROVENANCE_SYNTH = "chunk-synthesized"
PROVENANCE_WORLD = "world-model-generated"


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the end-to-end run; defaults are the desk-scale setup."""

    theme: str = "castle"
    seed: int = 0

    # chunk geometry and vector set
    chunk_size: int = 16
    height_y: int = 16
    v: int = 4
    c: int = 16

    # chunk VAE
    vae_d_model: int = 64
    vae_heads: int = 4
    vae_depth: int = 6
    vae_upsample_factor: int = 1
    vae_upsample_layers: int = 0
    vae_n_pc: int = 1024
    vae_n_occ: int = 1024
    vae_n_col: int = 512
    vae_pos_dim: int = 16
    vae_steps: int = 1500
    vae_lr: float = 1e-3
    vae_batch: int = 8

    # quad-chunk flow model
    quad_d_model: int = 64
    quad_heads: int = 4
    quad_depth: int = 4
    quad_steps: int = 600
    quad_lr: float = 1e-3
    quad_batch: int = 16
    quad_sample_steps: int = 16

    # sketches
    sketch_resolution: int = 128
    sketch_patch: int = 8
    d_sk: int = 64

    # world model
    world_width: int = 64
    world_depth: int = 4
    world_heads: int = 4
    world_steps: int = 800
    world_lr: float = 1e-3
    gen_steps: int = 25
    gen_guidance: float = 3.0

    # size predictor
    size_hidden: int = 64
    size_steps: int = 800
    size_lr: float = 5e-3

    # layout sampler for synthesized scenes
    area_min: int = 16
    area_max: int = 36
    p_square: float = 0.3
    ratio_min: float = 1.0
    ratio_max: float = 3.0
    min_side: int = 4

    # dataset sizes
    m_bootstrap: int = 4
    bootstrap_rows: int = 2
    bootstrap_cols: int = 4
    q_synth: int = 32
    train_count: int = 28

    # evaluation sampling
    eval_points: int = 2048
    eval_chunk_points: int = 256

    def __post_init__(self):
        if not 1 <= self.train_count < self.q_synth:
            raise InvalidArgumentError(
                "train_count must leave a non-empty validation split")
        if self.m_bootstrap < 1 or self.q_synth < 2:
            raise InvalidArgumentError("need m_bootstrap >= 1 and q_synth >= 2")
        if self.bootstrap_rows < 2 or self.bootstrap_cols < 2:
            raise InvalidArgumentError(
                "bootstrap scenes must be at least 2x2 chunks for quad windows")
        if self.min_side < 2:
            raise InvalidArgumentError("synthesized layouts need min_side >= 2")

    @property
    def val_count(self) -> int:
        return self.q_synth - self.train_count

    def vae_config(self) -> VaeConfig:
        return VaeConfig(
            v=self.v, c=self.c, d_model=self.vae_d_model, n_heads=self.vae_heads,
            decoder_depth=self.vae_depth, upsample_factor=self.vae_upsample_factor,
            upsample_layers=self.vae_upsample_layers, n_pc=self.vae_n_pc,
            n_occ=self.vae_n_occ, n_col=self.vae_n_col, chunk_size=self.chunk_size,
            height_y=self.height_y, pos_dim=self.vae_pos_dim)

    def quad_config(self) -> QuadFlowConfig:
        return QuadFlowConfig(v=self.v, c=self.c, d_model=self.quad_d_model,
                              n_heads=self.quad_heads, depth=self.quad_depth)

    def world_config(self, width: int | None = None) -> WorldConfig:
        return WorldConfig(v=self.v, c=self.c,
                           width=self.world_width if width is None else width,
                           depth=self.world_depth, n_heads=self.world_heads,
                           d_sk=self.d_sk)

    def sketch_config(self) -> SketchConfig:
        return SketchConfig(resolution=self.sketch_resolution,
                            patch=self.sketch_patch, d_sk=self.d_sk)


def config_hash(config: PipelineConfig) -> str:
    text = canonical_json(dataclasses.asdict(config))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def save_pipeline_config(path, config: PipelineConfig) -> None:
    Path(path).write_text(canonical_json(dataclasses.asdict(config)) + "\n")


def load_pipeline_config(path) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PersistenceError(f"cannot read config {path}: {exc}") from exc
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InvalidArgumentError(f"unknown config keys: {unknown}")
    return PipelineConfig(**raw)


def _exact_count_cloud(surface: ColoredPointCloud, n: int,
                       seed: int) -> ColoredPointCloud:
    """Resample a cloud to exactly n points (with replacement if short)."""
    if len(surface) == 0:
        raise InvalidArgumentError("cannot resample an empty cloud")
    rng = rng_from(seed, 81)
    if len(surface) < n:
        idx = rng.integers(0, len(surface), size=n)
    else:
        idx = rng.permutation(len(surface))[:n]
    colors = surface.colors[idx] if surface.has_colors else None
    return ColoredPointCloud(surface.points[idx], colors)


def merge_meshes(meshes: list[TriMesh], offsets: list[np.ndarray]) -> TriMesh:
    """Concatenate translated meshes into one; empty inputs are skipped."""
    verts, faces, colors = [], [], []
    base = 0
    for mesh, off in zip(meshes, offsets):
        if mesh.is_empty:
            continue
        verts.append(mesh.vertices + np.asarray(off, dtype=mesh.vertices.dtype))
        faces.append(mesh.faces + base)
        colors.append(mesh.vertex_colors if mesh.vertex_colors is not None
                      else np.full((len(mesh.vertices), 3), 0.75, dtype=np.float32))
        base += len(mesh.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3), dtype=np.float32),
                       np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(verts), np.concatenate(faces),
                   np.concatenate(colors))


def decode_scene_mesh(vae: ChunkVae, latents: np.ndarray, seed: int) -> TriMesh:
    """Decode every chunk latent with its predicted height and place the
    chunk meshes on the scene lattice (each chunk spans 2 world units)."""
    lat = np.asarray(latents)
    if lat.ndim != 4:
        raise InvalidArgumentError(f"latent grid must be (R,C,V,c), got {lat.shape}")
    R, C = lat.shape[:2]
    span = vae.config.chunk_size * vae.config.voxel_edge
    meshes, offsets = [], []
    for r in range(R):
        for c in range(C):
            z = lat[r, c]
            h = predict_height(vae, z)
            meshes.append(decode_chunk_mesh(vae, z, height=h,
                                            seed=derive_seed(seed, 82, r, c)))
            offsets.append(np.array([r * span, 0.0, c * span]))
    return merge_meshes(meshes, offsets)


def export_mesh_ply(path, mesh: TriMesh) -> None:
    """ASCII PLY with 8-bit vertex colors; deterministic byte output."""
    colors = mesh.vertex_colors
    if colors is None:
        colors = np.full((len(mesh.vertices), 3), 0.75, dtype=np.float32)
    rgb = np.clip(np.rint(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices", "end_header",
    ]
    for v, c in zip(np.asarray(mesh.vertices, dtype=np.float64), rgb):
        lines.append(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f} {c[0]} {c[1]} {c[2]}")
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


class Pipeline:
    """Stage runner bound to one config and one output directory."""

    def __init__(self, config: PipelineConfig, out_dir):
        self.config = config
        self.out = Path(out_dir)
        self.hash = config_hash(config)

    # ---- artifact locations -------------------------------------------------

    @property
    def forge_dir(self) -> Path:
        return self.out / "forge"

    @property
    def vae_path(self) -> Path:
        return self.out / "vae" / "vae.ckpt"

    @property
    def latents_dir(self) -> Path:
        return self.out / "latents"

    @property
    def quad_path(self) -> Path:
        return self.out / "quad" / "quad.ckpt"

    @property
    def synth_dir(self) -> Path:
        return self.out / "synth"

    @property
    def sketch_dir(self) -> Path:
        return self.out / "sketch"

    @property
    def world_path(self) -> Path:
        return self.out / "world" / "world.ckpt"

    @property
    def size_path(self) -> Path:
        return self.out / "size" / "size.ckpt"

    @property
    def gen_dir(self) -> Path:
        return self.out / "generate"

    @property
    def eval_path(self) -> Path:
        return self.out / "eval" / "metrics.json"

    def _synth_path(self, i: int) -> Path:
        return self.synth_dir / f"scene_{i:04d}.nwlat"

    def _sketch_enc_path(self, i: int) -> Path:
        return self.sketch_dir / f"scene_{i:04d}.bin"

    def _gen_path(self, i: int) -> Path:
        return self.gen_dir / f"scene_{i:04d}.nwlat"

    # ---- provenance ---------------------------------------------------------

    def _require(self, path: Path, stage: str) -> dict:
        if not path.exists():
            raise DependencyError(
                f"missing artifact from stage '{stage}': {path}")
        side = read_sidecar(path)
        if side["config_hash"] != self.hash:
            raise StaleArtifactError(
                f"{path} was produced under config {side['config_hash']}, "
                f"current config is {self.hash} (re-run stage '{stage}')")
        return side

    def _finish(self, path: Path, seed: int, extra: dict | None = None) -> None:
        write_sidecar(path, self.hash, seed, extra=extra)

    # ---- stages -------------------------------------------------------------

    def stage_forge(self) -> list[Path]:
        """Forge the bootstrap scenes and persist their chunks."""
        cfg = self.config
        theme = load_theme(cfg.theme, chunk_size=cfg.chunk_size,
                           height_y=cfg.height_y)
        return build_bootstrap_dataset(
            theme, cfg.m_bootstrap, seed=derive_seed(cfg.seed, 1),
            out_dir=self.forge_dir,
            layout=(cfg.bootstrap_rows, cfg.bootstrap_cols),
            config_hash=self.hash)

    def _load_bootstrap_chunks(self) -> list[list]:
        cfg = self.config
        scenes = []
        for i in range(cfg.m_bootstrap):
            manifest_path = self.forge_dir / f"scene_{i:04d}" / "scene.json"
            if not manifest_path.exists():
                raise DependencyError(
                    f"missing artifact from stage 'forge': {manifest_path}")
            manifest = json.loads(manifest_path.read_text())
            if manifest["config_hash"] != self.hash:
                raise StaleArtifactError(
                    f"{manifest_path} carries config {manifest['config_hash']}, "
                    f"current is {self.hash} (re-run stage 'forge')")
            chunks = []
            for name in manifest["chunks"]:
                p = manifest_path.parent / name
                self._require(p, "forge")
                chunks.append(load_chunk(p))
            scenes.append(chunks)
        return scenes

    def stage_train_vae(self) -> Path:
        cfg = self.config
        scenes = self._load_bootstrap_chunks()
        vc = cfg.vae_config()
        items = []
        for si, chunks in enumerate(scenes):
            for ci, ch in enumerate(chunks):
                items.append(make_training_item(
                    ch.occupancy, ch.surface, vc,
                    seed=derive_seed(cfg.seed, 2, si, ci)))
        vae = ChunkVae(vc, seed=derive_seed(cfg.seed, 3))
        history = train_vae(vae, items, steps=cfg.vae_steps,
                            seed=derive_seed(cfg.seed, 4), lr=cfg.vae_lr,
                            batch_size=cfg.vae_batch)
        self.vae_path.parent.mkdir(parents=True, exist_ok=True)
        save_vae(self.vae_path, vae,
                 extra_meta={"final_loss": float(history["total"][-1])})
        self._finish(self.vae_path, cfg.seed, extra={"stage": "train_vae"})
        return self.vae_path

    def _load_vae(self) -> ChunkVae:
        self._require(self.vae_path, "train_vae")
        vae, _ = load_vae(self.vae_path)
        return vae

    def stage_encode(self) -> list[Path]:
        """Encode each bootstrap scene into an (R, C, V, c) latent grid."""
        cfg = self.config
        scenes = self._load_bootstrap_chunks()
        vae = self._load_vae()
        vc = vae.config
        self.latents_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for si, chunks in enumerate(scenes):
            rows = 1 + max(ch.grid_coords[0] for ch in chunks)
            cols = 1 + max(ch.grid_coords[1] for ch in chunks)
            grid = np.zeros((rows, cols, vc.v, vc.c), dtype=np.float32)
            for ci, ch in enumerate(chunks):
                cloud = _exact_count_cloud(ch.surface, vc.n_pc,
                                           seed=derive_seed(cfg.seed, 5, si, ci))
                mean, logvar = encode_chunk(vae, cloud)
                u, v = ch.grid_coords
                grid[u, v] = sample_latent(mean, logvar, seed=None)
            p = self.latents_dir / f"scene_{si:04d}.nwlat"
            save_latent_grid(p, grid, meta={"scene_index": si,
                                            "provenance": "bootstrap-encoded"})
            self._finish(p, cfg.seed, extra={"stage": "encode"})
            paths.append(p)
        return paths

    def _load_bootstrap_latents(self) -> list[np.ndarray]:
        grids = []
        for i in range(self.config.m_bootstrap):
            p = self.latents_dir / f"scene_{i:04d}.nwlat"
            self._require(p, "encode")
            grids.append(load_latent_grid(p)[0])
        return grids

    def stage_train_quad(self) -> Path:
        cfg = self.config
        grids = self._load_bootstrap_latents()
        quads = []
        for grid in grids:
            R, C = grid.shape[:2]
            for i in range(R - 1):
                for j in range(C - 1):
                    quads.append(grid[i:i + 2, j:j + 2])
        model = QuadFlowModel(cfg.quad_config(), seed=derive_seed(cfg.seed, 6))
        history = train_quad(model, np.stack(quads), steps=cfg.quad_steps,
                             seed=derive_seed(cfg.seed, 7), lr=cfg.quad_lr,
                             batch_size=cfg.quad_batch)
        self.quad_path.parent.mkdir(parents=True, exist_ok=True)
        save_quad(self.quad_path, model,
                  extra_meta={"final_loss": float(history["loss"][-1]),
                              "n_quads": len(quads)})
        self._finish(self.quad_path, cfg.seed, extra={"stage": "train_quad"})
        return self.quad_path

    def stage_synth(self) -> list[Path]:
        """Raster-generate Q scene latent grids over sampled layouts."""
        cfg = self.config
        self._require(self.quad_path, "train_quad")
        model, _ = load_quad(self.quad_path)
        self.synth_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i in range(cfg.q_synth):
            layout = sample_layout(cfg.area_min, cfg.area_max, cfg.p_square,
                                   (cfg.ratio_min, cfg.ratio_max),
                                   seed=derive_seed(cfg.seed, 8, i),
                                   min_side=cfg.min_side)
            grid = raster_scan_generate(model, layout.rows, layout.cols,
                                        steps=cfg.quad_sample_steps,
                                        seed=derive_seed(cfg.seed, 9, i))
            p = self._synth_path(i)
            save_latent_grid(p, grid, meta={
                "scene_index": i, "layout": [layout.rows, layout.cols],
                "provenance": PROVENANCE_SYNTH})
            self._finish(p, cfg.seed, extra={"stage": "synth"})
            paths.append(p)
        return paths

    def _load_synth(self, i: int) -> tuple[np.ndarray, LayoutSpec]:
        p = self._synth_path(i)
        self._require(p, "synth")
        grid, meta = load_latent_grid(p)
        rows, cols = meta["layout"]
        return grid, LayoutSpec(rows, cols)

    def stage_sketch(self) -> list[Path]:
        """Decode each synthesized scene, render its four sketch variants,
        store them as PNGs, and encode the PNG-quantized images."""
        cfg = self.config
        vae = self._load_vae()
        sk = cfg.sketch_config()
        self.sketch_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i in range(cfg.q_synth):
            grid, _ = self._load_synth(i)
            mesh = decode_scene_mesh(vae, grid, seed=derive_seed(cfg.seed, 10, i))
            variants = sketch_variants(mesh, sk)
            arrays = {}
            for j, img in enumerate(variants):
                png = self.sketch_dir / f"scene_{i:04d}_v{j}.png"
                save_sketch_png(png, img)
                enc = encode_sketch(load_sketch_png(png), sk)
                arrays[f"v{j}_tokens"] = enc.tokens
                arrays[f"v{j}_cls"] = enc.cls
            p = self._sketch_enc_path(i)
            save_checkpoint(p, arrays, meta={"scene_index": i, "variants": 4})
            self._finish(p, cfg.seed, extra={"stage": "sketch"})
            paths.append(p)
        return paths

    def _load_sketch_encodings(self, i: int) -> list[SketchEncoding]:
        p = self._sketch_enc_path(i)
        self._require(p, "sketch")
        arrays, meta = load_checkpoint(p)
        return [SketchEncoding(tokens=arrays[f"v{j}_tokens"],
                               cls=arrays[f"v{j}_cls"])
                for j in range(meta["variants"])]

    def _scene_split(self) -> tuple[list[int], list[int]]:
        cfg = self.config
        ids = list(range(cfg.q_synth))
        return ids[:cfg.train_count], ids[cfg.train_count:]

    def stage_train_world(self, width: int | None = None,
                          out_path: Path | None = None) -> Path:
        cfg = self.config
        train_ids, _ = self._scene_split()
        scenes = []
        for i in train_ids:
            grid, _ = self._load_synth(i)
            scenes.append((grid, self._load_sketch_encodings(i)))
        model = WorldModel(cfg.world_config(width),
                           seed=derive_seed(cfg.seed, 11))
        history = train_world(model, scenes, steps=cfg.world_steps,
                              seed=derive_seed(cfg.seed, 12), lr=cfg.world_lr)
        path = self.world_path if out_path is None else Path(out_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_world(path, model,
                   extra_meta={"final_loss": float(history["loss"][-1]),
                               "train_scenes": len(scenes)})
        self._finish(path, cfg.seed, extra={"stage": "train_world"})
        return path

    def stage_train_size(self) -> Path:
        cfg = self.config
        train_ids, _ = self._scene_split()
        data = []
        for i in train_ids:
            _, layout = self._load_synth(i)
            encs = self._load_sketch_encodings(i)
            data.append((encs[0].cls, layout))
        predictor = SizePredictor(cfg.d_sk, cfg.size_hidden,
                                  seed=derive_seed(cfg.seed, 13))
        history = train_size_predictor(predictor, data, steps=cfg.size_steps,
                                       seed=derive_seed(cfg.seed, 14),
                                       lr=cfg.size_lr)
        self.size_path.parent.mkdir(parents=True, exist_ok=True)
        save_size_predictor(self.size_path, predictor)
        self._finish(self.size_path, cfg.seed,
                     extra={"stage": "train_size",
                            "final_loss": float(history["loss"][-1])})
        return self.size_path

    def stage_generate(self) -> list[Path]:
        """Generate latents for every validation scene from its first sketch
        variant, using the ground-truth layout."""
        cfg = self.config
        self._require(self.world_path, "train_world")
        model, _ = load_world(self.world_path)
        _, val_ids = self._scene_split()
        self.gen_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i in val_ids:
            _, layout = self._load_synth(i)
            enc = self._load_sketch_encodings(i)[0]
            grid = generate_world(model, enc, layout, steps=cfg.gen_steps,
                                  guidance=cfg.gen_guidance,
                                  seed=derive_seed(cfg.seed, 15, i))
            p = self._gen_path(i)
            save_latent_grid(p, grid, meta={
                "scene_index": i, "layout": [layout.rows, layout.cols],
                "provenance": PROVENANCE_WORLD})
            self._finish(p, cfg.seed, extra={"stage": "generate"})
            paths.append(p)
        return paths

    def generate_job(self, job: dict, out_path) -> Path:
        """One-off generation from a JSON job descriptor:
        {"sketch": png path, "layout": [R, C] | "predict",
         "steps": int, "guidance": float, "seed": int}."""
        cfg = self.config
        for key in ("sketch", "layout"):
            if key not in job:
                raise InvalidArgumentError(f"job descriptor missing {key!r}")
        self._require(self.world_path, "train_world")
        model, _ = load_world(self.world_path)
        enc = encode_sketch(load_sketch_png(job["sketch"]), cfg.sketch_config())
        predictor = None
        if job["layout"] == "predict":
            layout = None
            self._require(self.size_path, "train_size")
            predictor = load_size_predictor(self.size_path)
        else:
            rows, cols = job["layout"]
            layout = LayoutSpec(int(rows), int(cols))
        grid = generate_world(model, enc, layout,
                              steps=int(job.get("steps", cfg.gen_steps)),
                              guidance=float(job.get("guidance", cfg.gen_guidance)),
                              seed=int(job.get("seed", cfg.seed)),
                              size_predictor=predictor)
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_latent_grid(out_path, grid, meta={
            "layout": list(grid.shape[:2]), "provenance": PROVENANCE_WORLD})
        self._finish(out_path, int(job.get("seed", cfg.seed)),
                     extra={"stage": "generate"})
        return out_path

    def _load_latent_set(self, paths: list[Path], stage: str
                         ) -> list[tuple[np.ndarray, dict]]:
        """Load latent grids enforcing homogeneous provenance and config."""
        out = []
        provs = set()
        for p in paths:
            self._require(p, stage)
            grid, meta = load_latent_grid(p)
            provs.add(meta.get("provenance", "unknown"))
            out.append((grid, meta))
        if len(provs) > 1:
            raise StaleArtifactError(
                f"refusing mixed-provenance latent set: {sorted(provs)}")
        return out

    def stage_eval(self) -> MetricReport:
        """Compare generated validation scenes against their synthesized
        references: latent RMSE, scene chamfer distance, and feature-space
        Frechet/kernel distances over per-chunk point clouds."""
        cfg = self.config
        vae = self._load_vae()
        _, val_ids = self._scene_split()
        gt = self._load_latent_set([self._synth_path(i) for i in val_ids], "synth")
        gen = self._load_latent_set([self._gen_path(i) for i in val_ids], "generate")

        rmses, chamfers = [], []
        clouds_gt, clouds_gen = [], []
        for (g_lat, g_meta), (p_lat, p_meta) in zip(gt, gen):
            if g_meta["scene_index"] != p_meta["scene_index"]:
                raise StaleArtifactError("validation scene indices disagree")
            i = g_meta["scene_index"]
            rmses.append(latent_rmse(p_lat, g_lat))
            mesh_gt = decode_scene_mesh(vae, g_lat, seed=derive_seed(cfg.seed, 10, i))
            mesh_gen = decode_scene_mesh(vae, p_lat, seed=derive_seed(cfg.seed, 16, i))
            pts_gt = _scene_points(mesh_gt, cfg.eval_points, derive_seed(cfg.seed, 17, i))
            pts_gen = _scene_points(mesh_gen, cfg.eval_points, derive_seed(cfg.seed, 18, i))
            chamfers.append(chamfer_distance(pts_gen, pts_gt))
            clouds_gt.extend(_chunk_clouds(vae, g_lat, cfg.eval_chunk_points,
                                           derive_seed(cfg.seed, 19, i)))
            clouds_gen.extend(_chunk_clouds(vae, p_lat, cfg.eval_chunk_points,
                                            derive_seed(cfg.seed, 20, i)))

        values = {"latent_rmse": float(np.mean(rmses)),
                  "chamfer": float(np.mean(chamfers))}
        if len(clouds_gt) >= 2 and len(clouds_gen) >= 2:
            ga = np.stack(clouds_gt)
            gb = np.stack(clouds_gen)
            values["frechet_feature"] = feature_distance(ga, gb, mode="frechet")
            values["kernel_feature"] = feature_distance(ga, gb, mode="kernel")
        report = MetricReport(
            values=values,
            counts={"val_scenes": len(val_ids),
                    "chunk_clouds": len(clouds_gt),
                    "points_per_scene": cfg.eval_points},
            thresholds={},
            seeds={"pipeline": cfg.seed})
        self.eval_path.parent.mkdir(parents=True, exist_ok=True)
        self.eval_path.write_text(report.to_json() + "\n")
        self._finish(self.eval_path, cfg.seed, extra={"stage": "eval"})
        return report

    def export_scene(self, latent_path, ply_path) -> Path:
        """Decode a persisted latent grid and write an ASCII PLY mesh."""
        vae = self._load_vae()
        p = Path(latent_path)
        if not p.exists():
            raise DependencyError(f"missing latent grid: {p}")
        grid, meta = load_latent_grid(p)
        mesh = decode_scene_mesh(vae, grid,
                                 seed=derive_seed(self.config.seed, 21))
        export_mesh_ply(ply_path, mesh)
        return Path(ply_path)

    def profile(self, layouts: list[LayoutSpec], steps: int = 2) -> list[dict]:
        """Token counts, attention activation sizes, and wall times per layout."""
        cfg = self.config
        self._require(self.world_path, "train_world")
        model, _ = load_world(self.world_path)
        enc = self._probe_encoding()
        rows = []
        for layout in layouts:
            t0 = time.perf_counter()
            generate_world(model, enc, layout, steps=steps, guidance=1.0,
                           seed=derive_seed(cfg.seed, 22))
            embed_s = time.perf_counter() - t0
            tokens = model.last_token_count
            assert tokens == layout.area
            vae = self._load_vae()
            z = np.zeros((cfg.v, cfg.c), dtype=np.float32)
            t0 = time.perf_counter()
            decode_chunk_mesh(vae, z, seed=0)
            decode_s = time.perf_counter() - t0
            rows.append({
                "layout": [layout.rows, layout.cols],
                "tokens": tokens,
                "attention_score_elements": cfg.world_heads * tokens * tokens,
                "quad_calls": (layout.rows - 1) * (layout.cols - 1),
                "diffusion_steps": steps,
                "embed_seconds": embed_s,
                "per_chunk_decode_seconds": decode_s,
            })
        return rows

    def _probe_encoding(self) -> SketchEncoding:
        sk = self.config.sketch_config()
        blank = np.zeros((sk.resolution, sk.resolution), dtype=np.float32)
        return encode_sketch(blank, sk)

    # ---- orchestration ------------------------------------------------------

    def run(self, stage: str):
        runners = {
            "forge": self.stage_forge,
            "train_vae": self.stage_train_vae,
            "encode": self.stage_encode,
            "train_quad": self.stage_train_quad,
            "synth": self.stage_synth,
            "sketch": self.stage_sketch,
            "train_world": self.stage_train_world,
            "train_size": self.stage_train_size,
            "generate": self.stage_generate,
            "eval": self.stage_eval,
        }
        if stage not in runners:
            raise InvalidArgumentError(
                f"unknown stage {stage!r}; stages are {list(STAGES)}")
        return runners[stage]()

    def run_all(self, upto: str | None = None):
        last = None
        for stage in STAGES:
            last = self.run(stage)
            if stage == upto:
                break
        return last


def _scene_points(mesh: TriMesh, n: int, seed: int) -> np.ndarray:
    from .geometry import sample_surface_points

    if mesh.is_empty:
        return np.zeros((n, 3), dtype=np.float64)
    return sample_surface_points(mesh, n, seed=seed).points.astype(np.float64)


def _chunk_clouds(vae: ChunkVae, latents: np.ndarray, n_points: int,
                  seed: int) -> list[np.ndarray]:
    """Per-chunk surface clouds for feature-space metrics; empty decodes
    contribute an all-zero cloud so both sides stay aligned."""
    R, C = latents.shape[:2]
    clouds = []
    for r in range(R):
        for c in range(C):
            mesh = decode_chunk_mesh(vae, latents[r, c],
                                     seed=derive_seed(seed, r, c))
            if mesh.is_empty:
                clouds.append(np.zeros((n_points, 3), dtype=np.float64))
            else:
                pts = _scene_points(mesh, n_points, derive_seed(seed, r, c, 1))
                clouds.append(pts)
    return clouds
