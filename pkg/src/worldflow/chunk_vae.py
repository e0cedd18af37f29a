"""Chunk autoencoder: colored surface points in, a small vector set out.

The encoder cross-attends a handful of learned query vectors over the
positionally embedded input cloud and emits a diagonal Gaussian posterior
per latent vector. The decoder self-attends over the latent tokens
(optionally widening the token count through a shuffle + projection on the
final layers), then answers occupancy, color, and height queries through
cross-attention heads. Chunks decode back to meshes via a dense occupancy
query, surface extraction, and color lookup.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import (ColoredPointCloud, OccupancyGrid, TriMesh,
                       nearest_color_transfer, sample_occupancy_queries,
                       sample_surface_points)
from .marching import marching_cubes
from .nn import (CrossAttention, LayerNorm, Linear, ParameterStore, Tensor,
                 TransformerBlock, bce_with_logits, load_checkpoint, no_grad,
                 pixel_shuffle_tokens, save_checkpoint, sinusoidal_embed)
from .seeding import derive_seed, rng_from


@dataclass(frozen=True)
class VaeConfig:
    """Vector-set size, decoder shape, and training query counts."""

    v: int = 16                 # latent vectors per chunk
    c: int = 64                 # channels per latent vector
    d_model: int = 512
    n_heads: int = 8
    decoder_depth: int = 24
    upsample_factor: int = 1    # token multiplier on the final decoder layers
    upsample_layers: int = 0    # how many final layers run on widened tokens
    n_pc: int = 4096            # input surface points per chunk
    n_occ: int = 4096           # occupancy queries per chunk per step
    n_col: int = 2048           # color queries per chunk per step
    chunk_size: int = 60        # voxels along x and z
    height_y: int = 60          # voxels along y
    pos_dim: int = 32           # sinusoid dims per coordinate axis
    coord_scale: float = 64.0   # radians per world unit at the top frequency
    kl_weight: float = 1e-6
    color_weight: float = 1.0
    height_weight: float = 0.01

    def __post_init__(self):
        if self.v < 1 or self.c < 1:
            raise InvalidArgumentError("need v >= 1 and c >= 1")
        if self.decoder_depth < 1:
            raise InvalidArgumentError("decoder depth must be >= 1")
        if not 0 <= self.upsample_layers < self.decoder_depth:
            raise InvalidArgumentError("upsample layers must leave a base stack")
        if self.upsample_factor < 1:
            raise InvalidArgumentError("upsample factor must be >= 1")
        if self.upsample_factor > 1 and self.d_model % self.upsample_factor != 0:
            raise InvalidArgumentError("d_model must divide by the upsample factor")
        if self.d_model % self.n_heads != 0:
            raise InvalidArgumentError("d_model must divide by n_heads")
        if self.pos_dim % 2 != 0:
            raise InvalidArgumentError("pos_dim must be even")

    @property
    def latent_dim(self) -> int:
        """Flattened vector-set length; world-model token channel size."""
        return self.v * self.c

    @property
    def voxel_edge(self) -> float:
        return 2.0 / self.chunk_size

    @classmethod
    def toy(cls, v: int = 4, **overrides) -> "VaeConfig":
        base = dict(v=v, c=16, d_model=64, n_heads=4, decoder_depth=6,
                    n_pc=1024, n_occ=1024, n_col=512,
                    chunk_size=16, height_y=16, pos_dim=16)
        if v == 2:
            base.update(upsample_factor=2, upsample_layers=2)
        base.update(overrides)
        return cls(**base)


def _embed_coords(coords: np.ndarray, config: VaeConfig, dtype) -> np.ndarray:
    """Per-axis sinusoid embedding, concatenated: (..., 3) -> (..., 3*pos_dim)."""
    scaled = np.asarray(coords, dtype=np.float64) * config.coord_scale
    parts = [sinusoidal_embed(scaled[..., i], config.pos_dim, dtype=dtype)
             for i in range(3)]
    return np.concatenate(parts, axis=-1)


class ChunkVae:
    """Parameter container and forward passes for one (V, c) configuration."""

    def __init__(self, config: VaeConfig, seed: int, dtype=np.float32):
        self.config = config
        self.store = ParameterStore(dtype=dtype)
        rng = rng_from(seed, 11)
        d, heads = config.d_model, config.n_heads
        pe = 3 * config.pos_dim

        self.enc_in = Linear(self.store, "enc.in", pe + 3, d, rng)
        self.enc_queries = self.store.add(
            "enc.queries", rng.normal(0.0, d ** -0.5, size=(config.v, d)))
        self.enc_block = TransformerBlock(self.store, "enc.block", d, heads, rng,
                                          kv_dim=d)
        self.enc_ln = LayerNorm(self.store, "enc.ln", d)
        self.enc_mean = Linear(self.store, "enc.mean", d, config.c, rng)
        self.enc_logvar = Linear(self.store, "enc.logvar", d, config.c, rng)

        self.dec_in = Linear(self.store, "dec.in", config.c, d, rng)
        n_base = config.decoder_depth - config.upsample_layers
        self.dec_base = [TransformerBlock(self.store, f"dec.block{i}", d, heads, rng)
                         for i in range(n_base)]
        self.dec_tail = []
        if config.upsample_layers > 0:
            self.dec_up = Linear(self.store, "dec.up",
                                 d // config.upsample_factor, d, rng)
            self.dec_tail = [
                TransformerBlock(self.store, f"dec.block{n_base + i}", d, heads, rng)
                for i in range(config.upsample_layers)]
        self.dec_ln = LayerNorm(self.store, "dec.ln", d)

        self.occ_q = Linear(self.store, "occ.q", pe, d, rng)
        self.occ_ln = LayerNorm(self.store, "occ.ln", d)
        self.occ_ca = CrossAttention(self.store, "occ.ca", d, d, heads, rng)
        self.occ_ln2 = LayerNorm(self.store, "occ.ln2", d)
        self.occ_out = Linear(self.store, "occ.out", d, 1, rng)

        self.col_q = Linear(self.store, "col.q", pe, d, rng)
        self.col_ln = LayerNorm(self.store, "col.ln", d)
        self.col_ca = CrossAttention(self.store, "col.ca", d, d, heads, rng)
        self.col_ln2 = LayerNorm(self.store, "col.ln2", d)
        self.col_out = Linear(self.store, "col.out", d, 3, rng)

        self.hgt_l1 = Linear(self.store, "hgt.l1", d, d, rng)
        self.hgt_l2 = Linear(self.store, "hgt.l2", d, 1, rng)

    @property
    def dtype(self):
        return self.store.dtype

    # -- forward passes (Tensor in, Tensor out; differentiable) --

    def encode(self, points: np.ndarray, colors: np.ndarray) -> tuple[Tensor, Tensor]:
        """(B, n_pc, 3) points + colors -> posterior mean/logvar (B, V, c)."""
        pts = np.asarray(points)
        if pts.ndim != 3 or pts.shape[1] != self.config.n_pc or pts.shape[2] != 3:
            raise InvalidArgumentError(
                f"expected (B, {self.config.n_pc}, 3) points, got {pts.shape}")
        if colors is None:
            raise InvalidArgumentError("encoder input must carry colors")
        feats = np.concatenate([_embed_coords(pts, self.config, self.dtype),
                                np.asarray(colors, dtype=self.dtype)], axis=-1)
        kv = self.enc_in(Tensor(feats))
        B = pts.shape[0]
        ones = Tensor(np.ones((B, 1, 1), dtype=self.dtype))
        x = self.enc_queries.reshape(1, *self.enc_queries.shape) * ones
        x = self.enc_ln(self.enc_block(x, kv=kv))
        mean = self.enc_mean(x)
        logvar = self.enc_logvar(x).clip(-30.0, 20.0)
        return mean, logvar

    def decode_tokens(self, z: Tensor) -> Tensor:
        """(B, V, c) latent -> (B, V*factor or V, d_model) context tokens."""
        x = self.dec_in(z)
        for block in self.dec_base:
            x = block(x)
        if self.dec_tail:
            x = self.dec_up(pixel_shuffle_tokens(x, self.config.upsample_factor))
            for block in self.dec_tail:
                x = block(x)
        return self.dec_ln(x)

    def occupancy_logits(self, tokens: Tensor, coords: np.ndarray) -> Tensor:
        """Context tokens + (B, Q, 3) coords -> (B, Q) logits."""
        q = self.occ_q(Tensor(_embed_coords(coords, self.config, self.dtype)))
        h = q + self.occ_ca(self.occ_ln(q), tokens)
        out = self.occ_out(self.occ_ln2(h))
        return out.reshape(out.shape[0], out.shape[1])

    def color_values(self, tokens: Tensor, coords: np.ndarray) -> Tensor:
        """Context tokens + (B, Q, 3) coords -> (B, Q, 3) colors in [0,1]."""
        q = self.col_q(Tensor(_embed_coords(coords, self.config, self.dtype)))
        h = q + self.col_ca(self.col_ln(q), tokens)
        return self.col_out(self.col_ln2(h)).sigmoid()

    def height_fraction(self, tokens: Tensor) -> Tensor:
        """Context tokens -> (B,) occupied-height fraction in (0, 1)."""
        pooled = tokens.mean(axis=1)
        raw = self.hgt_l2(self.hgt_l1(pooled).gelu())
        return raw.sigmoid().reshape(raw.shape[0])


# ---------------------------------------------------------------------------
# Public single-chunk operations (numpy in, numpy out)


def _as_latent(vae: ChunkVae, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=vae.dtype)
    expect = (vae.config.v, vae.config.c)
    if z.shape != expect:
        raise InvalidArgumentError(f"latent shape {z.shape} != {expect}")
    return z


def encode_chunk(vae: ChunkVae, surface: ColoredPointCloud) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mean, logvar), each (V, c), for one chunk's surface cloud."""
    if len(surface) != vae.config.n_pc:
        raise InvalidArgumentError(
            f"encoder needs exactly {vae.config.n_pc} points, got {len(surface)}")
    if not surface.has_colors:
        raise InvalidArgumentError("encoder input must carry colors")
    with no_grad():
        mean, logvar = vae.encode(surface.points[None], surface.colors[None])
    return mean.data[0].copy(), logvar.data[0].copy()


def sample_latent(mean: np.ndarray, logvar: np.ndarray,
                  seed: int | None = None) -> np.ndarray:
    """Reparameterized posterior draw; seed None returns the mean exactly."""
    if seed is None:
        return np.asarray(mean).copy()
    eps = rng_from(seed).standard_normal(np.shape(mean))
    return (np.asarray(mean, dtype=np.float64)
            + np.exp(0.5 * np.asarray(logvar, dtype=np.float64)) * eps).astype(
                np.asarray(mean).dtype)


def decode_query_occupancy(vae: ChunkVae, z: np.ndarray,
                           coords: np.ndarray) -> np.ndarray:
    """Occupancy logits (Q,) at world coordinates inside the chunk."""
    z = _as_latent(vae, z)
    coords = np.asarray(coords, dtype=vae.dtype)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise InvalidArgumentError(f"coords must be (Q, 3), got {coords.shape}")
    with no_grad():
        tokens = vae.decode_tokens(Tensor(z[None]))
        out = np.empty(len(coords), dtype=vae.dtype)
        for i in range(0, len(coords), 8192):
            block = coords[i:i + 8192]
            out[i:i + 8192] = vae.occupancy_logits(tokens, block[None]).data[0]
    return out


def decode_query_color(vae: ChunkVae, z: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Colors (Q, 3) in [0,1] at world coordinates inside the chunk."""
    z = _as_latent(vae, z)
    coords = np.asarray(coords, dtype=vae.dtype)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise InvalidArgumentError(f"coords must be (Q, 3), got {coords.shape}")
    with no_grad():
        tokens = vae.decode_tokens(Tensor(z[None]))
        out = np.empty((len(coords), 3), dtype=vae.dtype)
        for i in range(0, len(coords), 8192):
            block = coords[i:i + 8192]
            out[i:i + 8192] = vae.color_values(tokens, block[None]).data[0]
    return out


def predict_height(vae: ChunkVae, z: np.ndarray) -> int:
    """Estimated occupied height in voxels, rounded and clamped to [1, Y]."""
    z = _as_latent(vae, z)
    with no_grad():
        tokens = vae.decode_tokens(Tensor(z[None]))
        frac = float(vae.height_fraction(tokens).data[0])
    y = vae.config.height_y
    return int(np.clip(np.rint(frac * y), 1, y))


def decode_chunk_mesh(vae: ChunkVae, z: np.ndarray, *,
                      resolution: int | None = None, height: int | None = None,
                      n_surface: int = 2048, seed: int = 0) -> TriMesh:
    """Dense occupancy decode -> surface extraction -> color transfer.

    With `height` given, queries are restricted to voxel rows below it and
    everything above is left empty. Deterministic for fixed arguments.
    """
    cfg = vae.config
    s, y = cfg.chunk_size, cfg.height_y
    if resolution is not None and resolution != s:
        raise InvalidArgumentError(
            f"resolution {resolution} does not match chunk size {s}")
    z = _as_latent(vae, z)
    y_max = y if height is None else int(np.clip(height, 1, y))
    e = cfg.voxel_edge
    ix, iy, iz = np.meshgrid(np.arange(s), np.arange(y_max), np.arange(s),
                             indexing="ij")
    centers = (np.stack([ix, iy, iz], axis=-1).reshape(-1, 3) + 0.5) * e
    logits = decode_query_occupancy(vae, z, centers.astype(vae.dtype))
    occ = np.zeros((s, y, s), dtype=bool)
    occ[:, :y_max, :] = (logits > 0).reshape(s, y_max, s)
    if not occ.any():
        return TriMesh(np.zeros((0, 3), dtype=np.float32),
                       np.zeros((0, 3), dtype=np.int64))
    mesh = marching_cubes(OccupancyGrid(occ, e))
    if mesh.is_empty:
        return mesh
    pts = sample_surface_points(mesh, n_surface, seed=seed).points
    cols = decode_query_color(vae, z, pts)
    return nearest_color_transfer(mesh, ColoredPointCloud(pts, cols))


# ---------------------------------------------------------------------------
# Training


def vae_loss(vae: ChunkVae, batch: dict, seed: int | None
             ) -> tuple[Tensor, float, float, float, float]:
    """Total loss Tensor plus detached components.

    total = occ_bce + w_c * color_l2 + w_h * height_l2 + w_kl * kl. The KL
    term is the closed-form divergence of the diagonal posterior from the
    standard normal, summed over latent entries and averaged over the batch.
    """
    cfg = vae.config
    mean, logvar = vae.encode(batch["points"], batch["colors"])
    if seed is None:
        z = mean
    else:
        eps = rng_from(seed).standard_normal(mean.shape)
        z = mean + (logvar * 0.5).exp() * Tensor(eps.astype(vae.dtype))
    tokens = vae.decode_tokens(z)

    logits = vae.occupancy_logits(tokens, batch["occ_coords"])
    occ_t = Tensor(np.asarray(batch["occ_labels"], dtype=vae.dtype))
    occ_bce = bce_with_logits(logits, occ_t).mean()

    colors = vae.color_values(tokens, batch["col_coords"])
    col_t = Tensor(np.asarray(batch["col_colors"], dtype=vae.dtype))
    diff = colors - col_t
    color_l2 = (diff * diff).mean()

    frac = vae.height_fraction(tokens)
    target = Tensor(np.asarray(batch["heights"], dtype=vae.dtype) / cfg.height_y)
    hd = frac - target
    height_l2 = (hd * hd).mean()

    kl_terms = (mean * mean + logvar.exp() - logvar - 1.0) * 0.5
    kl = kl_terms.sum(axis=(1, 2)).mean()

    total = (occ_bce + cfg.color_weight * color_l2
             + cfg.height_weight * height_l2 + cfg.kl_weight * kl)
    return (total, float(occ_bce.data), float(color_l2.data),
            float(height_l2.data), float(kl.data))


def occupied_height(grid: OccupancyGrid) -> int:
    """Highest occupied voxel row plus one (>= 1 for non-empty grids)."""
    rows = grid.data.any(axis=(0, 2))
    if not rows.any():
        return 0
    return int(np.max(np.nonzero(rows)[0])) + 1


def make_training_item(occupancy: OccupancyGrid, surface: ColoredPointCloud,
                       config: VaeConfig, seed: int, pool_mult: int = 4) -> dict:
    """Precompute per-chunk training pools.

    The expensive parts (surface extraction for near-surface queries) run
    once per chunk; train steps subsample from the pools.
    """
    if not surface.has_colors:
        raise InvalidArgumentError("training chunks need colored surfaces")
    if len(surface) == 0:
        raise InvalidArgumentError("training chunk has no surface points")
    rng = rng_from(seed, 21)
    idx = rng.integers(0, len(surface), size=config.n_pc) \
        if len(surface) < config.n_pc else rng.permutation(len(surface))[:config.n_pc]
    n_pool = pool_mult * config.n_occ
    occ_coords, occ_labels = sample_occupancy_queries(
        occupancy, n_uniform=n_pool // 2, n_near=n_pool - n_pool // 2,
        sigma=occupancy.voxel_edge, seed=derive_seed(seed, 22))
    return {
        "points": surface.points[idx].astype(np.float32),
        "colors": surface.colors[idx].astype(np.float32),
        "occ_pool": occ_coords.astype(np.float32),
        "occ_pool_labels": occ_labels,
        "col_pool": surface.points.astype(np.float32),
        "col_pool_colors": surface.colors.astype(np.float32),
        "height": occupied_height(occupancy),
    }


def make_batch(items: list[dict], config: VaeConfig, rng: np.random.Generator) -> dict:
    """Assemble a training batch by subsampling each chunk's query pools."""
    points, colors = [], []
    occ_c, occ_l, col_c, col_v, heights = [], [], [], [], []
    for item in items:
        points.append(item["points"])
        colors.append(item["colors"])
        oi = rng.integers(0, len(item["occ_pool"]), size=config.n_occ)
        occ_c.append(item["occ_pool"][oi])
        occ_l.append(item["occ_pool_labels"][oi].astype(np.float32))
        ci = rng.integers(0, len(item["col_pool"]), size=config.n_col)
        col_c.append(item["col_pool"][ci])
        col_v.append(item["col_pool_colors"][ci])
        heights.append(item["height"])
    return {
        "points": np.stack(points), "colors": np.stack(colors),
        "occ_coords": np.stack(occ_c), "occ_labels": np.stack(occ_l),
        "col_coords": np.stack(col_c), "col_colors": np.stack(col_v),
        "heights": np.asarray(heights, dtype=np.float32),
    }


def train_vae(vae: ChunkVae, items: list[dict], steps: int, seed: int, *,
              lr: float = 1e-3, batch_size: int = 8, weight_decay: float = 0.0,
              warmup: int = 100, log_every: int = 0) -> dict:
    """AdamW training with cosine decay; returns per-step loss history."""
    from .nn import AdamW, cosine_lr

    if not items:
        raise InvalidArgumentError("no training chunks")
    opt = AdamW(vae.store, lr=lr, weight_decay=weight_decay)
    history = {"total": [], "occ_bce": [], "color_l2": [], "height_l2": [], "kl": []}
    rng = rng_from(seed, 31)
    for step in range(steps):
        picks = rng.integers(0, len(items), size=min(batch_size, len(items)))
        batch = make_batch([items[i] for i in picks], vae.config, rng)
        total, occ, col, hgt, kl = vae_loss(vae, batch, seed=derive_seed(seed, 32, step))
        vae.store.zero_grad()
        total.backward()
        opt.lr = cosine_lr(step, steps, lr, warmup_steps=warmup)
        opt.step()
        history["total"].append(float(total.data))
        history["occ_bce"].append(occ)
        history["color_l2"].append(col)
        history["height_l2"].append(hgt)
        history["kl"].append(kl)
        if log_every and (step % log_every == 0 or step == steps - 1):
            print(f"step {step:5d} total {float(total.data):.4f} occ {occ:.4f} "
                  f"col {col:.4f} hgt {hgt:.5f} kl {kl:.1f}")
    return history


def save_vae(path, vae: ChunkVae, extra_meta: dict | None = None) -> None:
    meta = {"config": dataclasses.asdict(vae.config)}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, vae.store.state_arrays(), meta=meta)


def load_vae(path) -> tuple[ChunkVae, dict]:
    arrays, meta = load_checkpoint(path)
    config = VaeConfig(**meta["config"])
    vae = ChunkVae(config, seed=0)
    vae.store.load_state(arrays)
    return vae, meta
