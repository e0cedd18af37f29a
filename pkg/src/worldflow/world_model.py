"""Variable-length sketch-conditioned flow transformer over scene latents.

A scene is an R x C grid of chunk latents; each grid cell becomes one token
of channel size V*c, so compute grows with the number of chunks rather than
with the vector-set length V. Input and output projections map V*c to and
from the hidden width, which lets the width exceed the latent channel size.
Sketch tokens enter through cross-attention; a learned null token stands in
when conditioning is dropped, which is what makes classifier-free guidance
possible at sampling time. A small perceptron on the sketch summary vector
optionally predicts the grid size when the caller does not supply one.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UnavailableModelError
from .forge import LayoutSpec
from .nn import (AdamW, LayerNorm, Linear, ModulatedBlock, ParameterStore,
                 Tensor, TimestepEmbedder, cosine_lr, load_checkpoint, no_grad,
                 save_checkpoint, sinusoidal_embed)
from .quad_flow import flow_interpolate, sample_timestep
from .seeding import derive_seed, rng_from
from .sketch import SketchEncoding


@dataclass(frozen=True)
class WorldConfig:
    """Latent token shape and transformer size for the scene-level model."""

    v: int = 16
    c: int = 64
    width: int = 1536
    depth: int = 16
    n_heads: int = 16
    d_sk: int = 1024          # sketch token channel size
    drop_prob: float = 0.2    # conditioning dropout for guidance training
    t_mean: float = 1.0       # logit-normal timestep location
    t_std: float = 1.0

    def __post_init__(self):
        if self.v < 1 or self.c < 1 or self.depth < 1:
            raise InvalidArgumentError("v, c, depth must be >= 1")
        if self.width < self.token_dim:
            raise InvalidArgumentError(
                f"width {self.width} below token channel size {self.token_dim}")
        if self.width % self.n_heads != 0 or self.width % 4 != 0:
            raise InvalidArgumentError("width must divide by n_heads and by 4")
        if not 0.0 <= self.drop_prob < 1.0:
            raise InvalidArgumentError("drop_prob must lie in [0, 1)")
        if not self.t_std > 0:
            raise InvalidArgumentError("t_std must be positive")

    @property
    def token_dim(self) -> int:
        return self.v * self.c

    @classmethod
    def toy(cls, **overrides) -> "WorldConfig":
        base = dict(v=2, c=16, width=64, depth=4, n_heads=4, d_sk=64)
        base.update(overrides)
        return cls(**base)


def pos_size_embed(layout: LayoutSpec, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-token position table (R*C, dim) and the shared size vector (dim,).

    The position of token (r, c) concatenates sinusoids of its row and
    column index, so it does not depend on the layout; the size vector is a
    sinusoid of the token count R*C, identical for every token.
    """
    if dim % 4 != 0:
        raise InvalidArgumentError("embedding dim must be a multiple of 4")
    rows = np.repeat(np.arange(layout.rows), layout.cols)
    cols = np.tile(np.arange(layout.cols), layout.rows)
    pos = np.concatenate([sinusoidal_embed(rows, dim // 2),
                          sinusoidal_embed(cols, dim // 2)], axis=-1)
    size = sinusoidal_embed(layout.area, dim)
    return pos, size


class WorldModel:
    """Velocity predictor over a grid of chunk latents.

    Exposes ``last_token_count`` after each forward pass so callers can
    confirm the sequence length equals the chunk count R*C.
    """

    def __init__(self, config: WorldConfig, seed: int, dtype=np.float32):
        self.config = config
        self.store = ParameterStore(dtype=dtype)
        rng = rng_from(seed, 61)
        w, heads = config.width, config.n_heads
        self.w_in = Linear(self.store, "in", config.token_dim, w, rng)
        self.null_kv = self.store.add(
            "null_kv", rng.normal(0.0, config.d_sk ** -0.5, size=(1, 1, config.d_sk)))
        self.t_embed = TimestepEmbedder(self.store, "temb", w, rng)
        self.blocks = [
            ModulatedBlock(self.store, f"block{i}", w, heads, w, rng,
                           kv_dim=config.d_sk)
            for i in range(config.depth)]
        self.ln_out = LayerNorm(self.store, "ln_out", w, affine=False)
        self.mod_shift = Linear(self.store, "out.mod_shift", w, w, zero_init=True)
        self.mod_scale = Linear(self.store, "out.mod_scale", w, w, zero_init=True)
        self.w_out = Linear(self.store, "out", w, config.token_dim, zero_init=True)
        self.last_token_count = 0

    @property
    def dtype(self):
        return self.store.dtype

    def velocity(self, latents: np.ndarray, enc: SketchEncoding | None,
                 t: float) -> Tensor:
        """(R,C,V,c) noisy latents + optional sketch encoding -> velocity."""
        cfg = self.config
        latents = np.asarray(latents, dtype=self.dtype)
        if latents.ndim != 4 or latents.shape[2:] != (cfg.v, cfg.c):
            raise InvalidArgumentError(
                f"expected (R,C,{cfg.v},{cfg.c}) latents, got {latents.shape}")
        if not 0.0 <= t <= 1.0:
            raise InvalidArgumentError("t must lie in [0, 1]")
        R, C = latents.shape[:2]
        n_tokens = R * C
        self.last_token_count = n_tokens
        pos, size = pos_size_embed(LayoutSpec(R, C), cfg.width)
        x = self.w_in(Tensor(latents.reshape(1, n_tokens, cfg.token_dim)))
        x = x + (pos + size).astype(self.dtype)
        cond = self.t_embed(np.array([t]))
        if enc is None:
            kv = self.null_kv
        else:
            if enc.tokens.shape[-1] != cfg.d_sk:
                raise InvalidArgumentError(
                    f"sketch tokens have {enc.tokens.shape[-1]} channels, "
                    f"model expects {cfg.d_sk}")
            kv = Tensor(enc.tokens[None].astype(self.dtype))
        for block in self.blocks:
            x = block(x, cond, kv)
        sh = self.mod_shift(cond).reshape(1, 1, cfg.width)
        sc = self.mod_scale(cond).reshape(1, 1, cfg.width)
        out = self.w_out(self.ln_out(x) * (sc + 1.0) + sh)
        return out.reshape(R, C, cfg.v, cfg.c)


def conditioning_choice(rng: np.random.Generator, n_variants: int,
                        drop_prob: float) -> tuple[int, bool]:
    """Uniform sketch-variant pick plus the conditioning-drop coin flip."""
    idx = int(rng.integers(0, n_variants))
    dropped = bool(rng.random() < drop_prob)
    return idx, dropped


def world_train_step(model: WorldModel, latents: np.ndarray,
                     sketch_encs: list[SketchEncoding], seed: int
                     ) -> tuple[Tensor, dict]:
    """One velocity-matching loss on a single scene.

    Picks one sketch variant uniformly, drops conditioning with the
    configured probability, and averages the squared error over every token
    and channel.
    """
    cfg = model.config
    if not sketch_encs:
        raise InvalidArgumentError("need at least one sketch encoding")
    v0 = np.asarray(latents, dtype=model.dtype)
    rng = rng_from(seed, 51)
    idx, dropped = conditioning_choice(rng, len(sketch_encs), cfg.drop_prob)
    t = sample_timestep(cfg.t_mean, cfg.t_std, derive_seed(seed, 52))
    eps = rng.standard_normal(v0.shape).astype(model.dtype)
    vt = flow_interpolate(v0, eps, np.asarray(t, dtype=model.dtype))
    pred = model.velocity(vt, None if dropped else sketch_encs[idx], t)
    diff = pred - Tensor((eps - v0).astype(model.dtype))
    loss = (diff * diff).sum() / float(v0.size)
    return loss, {"sketch_index": idx, "dropped": dropped, "t": t}


def cfg_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, g: float) -> np.ndarray:
    """Guided velocity v_uncond + g (v_cond - v_uncond); exact at g in {0, 1}."""
    v_cond = np.asarray(v_cond)
    v_uncond = np.asarray(v_uncond)
    if v_cond.shape != v_uncond.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {v_cond.shape} vs {v_uncond.shape}")
    if g == 1.0:
        return v_cond
    if g == 0.0:
        return v_uncond
    return v_uncond + g * (v_cond - v_uncond)


def generate_world(model: WorldModel, enc: SketchEncoding,
                   layout: LayoutSpec | None, steps: int = 25,
                   guidance: float = 3.0, seed: int = 0,
                   size_predictor: "SizePredictor | None" = None) -> np.ndarray:
    """Euler-integrate the guided velocity field from t=1 to t=0.

    ``layout=None`` asks the size predictor for (rows, cols); guidance 1
    runs a single conditional pass per step and guidance 0 ignores the
    sketch entirely.
    """
    cfg = model.config
    if steps < 1:
        raise InvalidArgumentError("need at least one integration step")
    if layout is None:
        if size_predictor is None:
            raise UnavailableModelError(
                "no layout given and no size predictor available")
        rows, cols = predict_size(size_predictor, enc.cls)
        layout = LayoutSpec(rows, cols)
    x = rng_from(seed, 54).standard_normal(
        (layout.rows, layout.cols, cfg.v, cfg.c)).astype(model.dtype)
    dt = 1.0 / steps
    with no_grad():
        for k in range(steps):
            t = 1.0 - k * dt
            if guidance == 0.0:
                vel = model.velocity(x, None, t).data
            elif guidance == 1.0:
                vel = model.velocity(x, enc, t).data
            else:
                v_c = model.velocity(x, enc, t).data
                v_u = model.velocity(x, None, t).data
                vel = cfg_velocity(v_c, v_u, guidance)
            x = x - dt * vel
    return x


def train_world(model: WorldModel, scenes: list[tuple[np.ndarray, list]],
                steps: int, seed: int, *, lr: float = 1e-3, warmup: int = 100,
                weight_decay: float = 0.0, log_every: int = 0) -> dict:
    """AdamW training over (latents, sketch encodings) pairs, one per step."""
    if not scenes:
        raise InvalidArgumentError("no training scenes")
    opt = AdamW(model.store, lr=lr, weight_decay=weight_decay)
    history = {"loss": [], "dropped": []}
    rng = rng_from(seed, 62)
    for step in range(steps):
        latents, encs = scenes[int(rng.integers(0, len(scenes)))]
        loss, info = world_train_step(model, latents, encs,
                                      seed=derive_seed(seed, 63, step))
        model.store.zero_grad()
        loss.backward()
        opt.step(lr=cosine_lr(step, steps, lr, warmup_steps=warmup))
        history["loss"].append(float(loss.data))
        history["dropped"].append(info["dropped"])
        if log_every and (step % log_every == 0 or step == steps - 1):
            print(f"world step {step:5d} loss {float(loss.data):.4f}")
    return history


class SizePredictor:
    """Three-layer perceptron from a sketch summary vector to log grid dims."""

    def __init__(self, d_sk: int, hidden: int, seed: int, dtype=np.float32):
        self.d_sk = d_sk
        self.hidden = hidden
        self.store = ParameterStore(dtype=dtype)
        rng = rng_from(seed, 71)
        self.l1 = Linear(self.store, "sz.l1", d_sk, hidden, rng)
        self.l2 = Linear(self.store, "sz.l2", hidden, hidden, rng)
        self.l3 = Linear(self.store, "sz.l3", hidden, 2, rng)
        self.trained = False

    def log_dims(self, cls_batch: np.ndarray) -> Tensor:
        x = np.asarray(cls_batch, dtype=self.store.dtype)
        if x.ndim != 2 or x.shape[1] != self.d_sk:
            raise InvalidArgumentError(
                f"expected (B,{self.d_sk}) summary vectors, got {x.shape}")
        h = self.l1(Tensor(x)).gelu()
        h = self.l2(h).gelu()
        return self.l3(h)


def predict_size(predictor: SizePredictor, cls_vec: np.ndarray) -> tuple[int, int]:
    """Sketch summary vector -> (rows, cols) with cols >= rows >= 2."""
    if not predictor.trained:
        raise UnavailableModelError("size predictor has not been trained")
    with no_grad():
        log_rc = predictor.log_dims(np.asarray(cls_vec)[None]).data[0]
    rows = max(2, int(np.rint(np.exp(float(log_rc[0])))))
    cols = max(rows, int(np.rint(np.exp(float(log_rc[1])))))
    return rows, cols


def train_size_predictor(predictor: SizePredictor,
                         dataset: list[tuple[np.ndarray, LayoutSpec]],
                         steps: int, seed: int, *, lr: float = 1e-3,
                         warmup: int = 50) -> dict:
    """Full-batch squared-error regression on log grid dimensions."""
    if not dataset:
        raise InvalidArgumentError("no training pairs")
    X = np.stack([np.asarray(c, dtype=predictor.store.dtype) for c, _ in dataset])
    Y = np.array([[np.log(l.rows), np.log(l.cols)] for _, l in dataset],
                 dtype=predictor.store.dtype)
    opt = AdamW(predictor.store, lr=lr)
    history = {"loss": []}
    for step in range(steps):
        pred = predictor.log_dims(X)
        diff = pred - Tensor(Y)
        loss = (diff * diff).sum() / float(Y.size)
        predictor.store.zero_grad()
        loss.backward()
        opt.step(lr=cosine_lr(step, steps, lr, warmup_steps=warmup))
        history["loss"].append(float(loss.data))
    predictor.trained = True
    return history


def save_world(path, model: WorldModel, extra_meta: dict | None = None) -> None:
    meta = {"config": dataclasses.asdict(model.config)}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, model.store.state_arrays(), meta=meta)


def load_world(path) -> tuple[WorldModel, dict]:
    arrays, meta = load_checkpoint(path)
    model = WorldModel(WorldConfig(**meta["config"]), seed=0)
    model.store.load_state(arrays)
    return model, meta


def save_size_predictor(path, predictor: SizePredictor) -> None:
    meta = {"d_sk": predictor.d_sk, "hidden": predictor.hidden,
            "trained": predictor.trained}
    save_checkpoint(path, predictor.store.state_arrays(), meta=meta)


def load_size_predictor(path) -> SizePredictor:
    arrays, meta = load_checkpoint(path)
    predictor = SizePredictor(meta["d_sk"], meta["hidden"], seed=0)
    predictor.store.load_state(arrays)
    predictor.trained = bool(meta["trained"])
    return predictor
