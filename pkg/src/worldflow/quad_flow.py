"""Rectified-flow generation over 2x2 windows of neighboring chunk latents.

The model learns the straight-line velocity field between data and noise on
four chunk tokens at once. Four masking configurations decide which of the
four chunks are generated and which are supplied clean as conditioning;
they are exactly the set needed to grow a scene in raster order with
stride-1 overlap: the very first window generates everything, windows along
the first row extend to the right, windows down the first column extend
downward, and interior windows fill in a single new chunk.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError
from .nn import (LayerNorm, Linear, ModulatedBlock, ParameterStore, Tensor,
                 TimestepEmbedder, no_grad, save_checkpoint, load_checkpoint)
from .seeding import derive_seed, rng_from

_CANONICAL = {
    "all": ((True, True), (True, True)),
    "right_column": ((False, True), (False, True)),
    "bottom_row": ((False, False), (True, True)),
    "bottom_right": ((False, False), (False, True)),
}


@dataclass(frozen=True)
class MaskConfig:
    """2x2 generate/conditioning pattern; True marks a chunk to generate."""

    name: str

    def __post_init__(self):
        if self.name not in _CANONICAL:
            raise InvalidArgumentError(
                f"mask {self.name!r} not one of {sorted(_CANONICAL)}")

    @property
    def mask(self) -> tuple[tuple[bool, bool], tuple[bool, bool]]:
        return _CANONICAL[self.name]

    def as_array(self) -> np.ndarray:
        return np.array(self.mask, dtype=bool)

    def conditioning_slots(self) -> list[tuple[int, int]]:
        return [(a, b) for a in (0, 1) for b in (0, 1) if not self.mask[a][b]]


MASK_ALL = MaskConfig("all")
MASK_RIGHT_COLUMN = MaskConfig("right_column")
MASK_BOTTOM_ROW = MaskConfig("bottom_row")
MASK_BOTTOM_RIGHT = MaskConfig("bottom_right")
CANONICAL_MASKS = (MASK_ALL, MASK_RIGHT_COLUMN, MASK_BOTTOM_ROW, MASK_BOTTOM_RIGHT)


def sample_timestep(mean: float, std: float, seed: int, n: int | None = None):
    """Logit-normal draw(s): sigmoid of a Normal(mean, std) sample."""
    if not std > 0:
        raise InvalidArgumentError("timestep std must be positive")
    rng = rng_from(seed)
    g = rng.normal(mean, std, size=n)
    t = 1.0 / (1.0 + np.exp(-g))
    return float(t) if n is None else t


def flow_interpolate(v0: np.ndarray, eps: np.ndarray, t) -> np.ndarray:
    """Straight-line blend V_t = (1-t) V0 + t eps; velocity target eps - V0."""
    v0 = np.asarray(v0)
    eps = np.asarray(eps)
    if v0.shape != eps.shape:
        raise InvalidArgumentError(f"shape mismatch: {v0.shape} vs {eps.shape}")
    t_arr = np.asarray(t, dtype=v0.dtype)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise InvalidArgumentError("t must lie in [0, 1]")
    return (1.0 - t_arr) * v0 + t_arr * eps


@dataclass(frozen=True)
class QuadFlowConfig:
    """Latent token shape and transformer size for the 2x2 window model."""

    v: int = 16
    c: int = 64
    d_model: int = 512
    n_heads: int = 8
    depth: int = 8
    t_mean: float = 0.0      # logit-normal timestep location
    t_std: float = 1.0

    def __post_init__(self):
        if self.v < 1 or self.c < 1 or self.depth < 1:
            raise InvalidArgumentError("v, c, depth must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise InvalidArgumentError("d_model must divide by n_heads")
        if not self.t_std > 0:
            raise InvalidArgumentError("t_std must be positive")

    @property
    def token_dim(self) -> int:
        return self.v * self.c

    @classmethod
    def toy(cls, **overrides) -> "QuadFlowConfig":
        base = dict(v=4, c=16, d_model=64, n_heads=4, depth=4)
        base.update(overrides)
        return cls(**base)


class QuadFlowModel:
    """Velocity predictor on four chunk tokens.

    Per token the input concatenates the noisy latent (zeroed on
    conditioning slots), the clean latent (zeroed on generated slots), and a
    binary conditioning flag. The output projection starts at zero, so the
    initial model predicts zero velocity everywhere.
    """

    def __init__(self, config: QuadFlowConfig, seed: int, dtype=np.float32):
        self.config = config
        self.store = ParameterStore(dtype=dtype)
        rng = rng_from(seed, 41)
        d, heads = config.d_model, config.n_heads
        td = config.token_dim
        self.w_in = Linear(self.store, "in", 2 * td + 1, d, rng)
        self.pos = self.store.add("pos", rng.normal(0.0, d ** -0.5, size=(4, d)))
        self.t_embed = TimestepEmbedder(self.store, "temb", d, rng)
        self.blocks = [ModulatedBlock(self.store, f"block{i}", d, heads, d, rng)
                       for i in range(config.depth)]
        self.ln_out = LayerNorm(self.store, "ln_out", d, affine=False)
        self.mod_shift = Linear(self.store, "out.mod_shift", d, d, zero_init=True)
        self.mod_scale = Linear(self.store, "out.mod_scale", d, d, zero_init=True)
        self.w_out = Linear(self.store, "out", d, td, zero_init=True)

    @property
    def dtype(self):
        return self.store.dtype

    def velocity(self, noisy: np.ndarray, clean: np.ndarray, mask: MaskConfig,
                 t: np.ndarray) -> Tensor:
        """(B,2,2,V,c) noisy + clean, mask, (B,) t -> (B,2,2,V,c) velocity."""
        cfg = self.config
        noisy = np.asarray(noisy, dtype=self.dtype)
        clean = np.asarray(clean, dtype=self.dtype)
        if noisy.shape != clean.shape or noisy.shape[1:] != (2, 2, cfg.v, cfg.c):
            raise InvalidArgumentError(
                f"expected (B,2,2,{cfg.v},{cfg.c}) latents, got {noisy.shape}")
        B = noisy.shape[0]
        m = mask.as_array().reshape(1, 4, 1).astype(self.dtype)
        n_tok = noisy.reshape(B, 4, cfg.token_dim) * m
        c_tok = clean.reshape(B, 4, cfg.token_dim) * (1.0 - m)
        flag = np.broadcast_to(1.0 - m, (B, 4, 1))
        feats = np.concatenate([n_tok, c_tok, flag], axis=-1)
        x = self.w_in(Tensor(feats)) + self.pos
        cond = self.t_embed(np.asarray(t, dtype=np.float64).reshape(B))
        for block in self.blocks:
            x = block(x, cond)
        sh = self.mod_shift(cond).reshape(B, 1, cfg.d_model)
        sc = self.mod_scale(cond).reshape(B, 1, cfg.d_model)
        out = self.w_out(self.ln_out(x) * (sc + 1.0) + sh)
        return out.reshape(B, 2, 2, cfg.v, cfg.c)


def quad_train_step(model: QuadFlowModel, batch: np.ndarray, seed: int,
                    mask: MaskConfig | None = None) -> tuple[Tensor, MaskConfig]:
    """One velocity-matching loss evaluation on a batch of 2x2 latents.

    Picks one of the four canonical masks uniformly when none is given.
    Conditioning chunks enter clean and contribute nothing to the loss.
    """
    cfg = model.config
    v0 = np.asarray(batch, dtype=model.dtype)
    if v0.ndim != 5 or v0.shape[1:] != (2, 2, cfg.v, cfg.c):
        raise InvalidArgumentError(
            f"expected (B,2,2,{cfg.v},{cfg.c}) batch, got {v0.shape}")
    B = v0.shape[0]
    rng = rng_from(seed, 42)
    if mask is None:
        mask = CANONICAL_MASKS[int(rng.integers(0, 4))]
    t = sample_timestep(cfg.t_mean, cfg.t_std, derive_seed(seed, 43), n=B)
    eps = rng.standard_normal(v0.shape).astype(model.dtype)
    vt = flow_interpolate(v0, eps, t.reshape(B, 1, 1, 1, 1).astype(model.dtype))
    pred = model.velocity(vt, v0, mask, t)
    target = Tensor((eps - v0).astype(model.dtype))
    diff = pred - target
    m = Tensor(np.broadcast_to(
        mask.as_array().astype(model.dtype).reshape(1, 2, 2, 1, 1), v0.shape).copy())
    n_masked = int(mask.as_array().sum())
    loss = (diff * diff * m).sum() / float(B * n_masked * cfg.token_dim)
    return loss, mask


def quad_sample(model: QuadFlowModel, cond: dict, mask: MaskConfig, steps: int,
                seed: int, velocity_fn: Callable | None = None) -> np.ndarray:
    """Generate the masked chunks of one 2x2 window by Euler integration
    from t=1 to t=0; conditioning chunks pass through bit-identically.

    `cond` maps (row, col) in {0,1}^2 to a (V, c) latent and must cover
    exactly the conditioning slots of the mask. `velocity_fn(noisy, clean,
    mask, t) -> (1,2,2,V,c)` overrides the model's field when given.
    """
    cfg = model.config
    if steps < 1:
        raise InvalidArgumentError("need at least one integration step")
    slots = mask.conditioning_slots()
    if sorted(cond) != sorted(slots):
        raise InvalidArgumentError(
            f"conditioning must cover exactly {sorted(slots)}, got {sorted(cond)}")
    clean = np.zeros((1, 2, 2, cfg.v, cfg.c), dtype=model.dtype)
    for (a, b), z in cond.items():
        z = np.asarray(z, dtype=model.dtype)
        if z.shape != (cfg.v, cfg.c):
            raise InvalidArgumentError(f"conditioning chunk {(a, b)} has shape {z.shape}")
        clean[0, a, b] = z

    if velocity_fn is None:
        def velocity_fn(noisy, cl, mk, t):
            with no_grad():
                return model.velocity(noisy, cl, mk, t).data

    rng = rng_from(seed, 44)
    x = rng.standard_normal((1, 2, 2, cfg.v, cfg.c)).astype(model.dtype)
    marr = mask.as_array()[None, :, :, None, None]
    x = np.where(marr, x, clean)
    dt = 1.0 / steps
    for k in range(steps):
        t = 1.0 - k * dt
        vel = np.asarray(velocity_fn(x, clean, mask, np.array([t])))
        x = np.where(marr, x - dt * vel, x)

    out = x[0]
    for (a, b), z in cond.items():
        out[a, b] = np.asarray(z, dtype=model.dtype)   # exact pass-through
    return out


def raster_scan_generate(model: QuadFlowModel, rows: int, cols: int, steps: int,
                         seed: int, call_log: list | None = None) -> np.ndarray:
    """Fill an R x C latent grid window by window in raster order.

    The (R-1)(C-1) windows use the ALL mask at the origin, RIGHT-COLUMN
    along the first row, BOTTOM-ROW down the first column, and BOTTOM-RIGHT
    elsewhere. Previously generated chunks are only ever read, never
    rewritten.
    """
    cfg = model.config
    if rows < 2 or cols < 2:
        raise InvalidArgumentError("raster generation needs at least a 2x2 layout")
    grid = np.zeros((rows, cols, cfg.v, cfg.c), dtype=model.dtype)
    for i in range(rows - 1):
        for j in range(cols - 1):
            if i == 0 and j == 0:
                mask = MASK_ALL
            elif i == 0:
                mask = MASK_RIGHT_COLUMN
            elif j == 0:
                mask = MASK_BOTTOM_ROW
            else:
                mask = MASK_BOTTOM_RIGHT
            cond = {(a, b): grid[i + a, j + b]
                    for a, b in mask.conditioning_slots()}
            if call_log is not None:
                call_log.append(((i, j), mask.name))
            quad = quad_sample(model, cond, mask, steps,
                               seed=derive_seed(seed, 45, i, j))
            m = mask.as_array()
            for a in (0, 1):
                for b in (0, 1):
                    if m[a, b]:
                        grid[i + a, j + b] = quad[a, b]
    return grid


def train_quad(model: QuadFlowModel, quads: np.ndarray, steps: int, seed: int, *,
               lr: float = 1e-3, batch_size: int = 16, warmup: int = 100,
               weight_decay: float = 0.0, log_every: int = 0) -> dict:
    """AdamW velocity-matching training over a stack of (N,2,2,V,c) quads."""
    from .nn import AdamW, cosine_lr

    quads = np.asarray(quads, dtype=model.dtype)
    if len(quads) == 0:
        raise InvalidArgumentError("no training quads")
    opt = AdamW(model.store, lr=lr, weight_decay=weight_decay)
    history = {"loss": [], "mask": []}
    rng = rng_from(seed, 46)
    for step in range(steps):
        picks = rng.integers(0, len(quads), size=min(batch_size, len(quads)))
        loss, mask = quad_train_step(model, quads[picks], seed=derive_seed(seed, 47, step))
        model.store.zero_grad()
        loss.backward()
        opt.step(lr=cosine_lr(step, steps, lr, warmup_steps=warmup))
        history["loss"].append(float(loss.data))
        history["mask"].append(mask.name)
        if log_every and (step % log_every == 0 or step == steps - 1):
            print(f"quad step {step:5d} loss {float(loss.data):.4f} mask {mask.name}")
    return history


def held_out_velocity_mse(model: QuadFlowModel, quads: np.ndarray, seed: int,
                          n_eval: int = 64) -> tuple[float, float]:
    """Masked velocity MSE on held-out quads vs the predict-zero baseline.

    Both numbers average over the same draws of (mask, t, noise), so the
    comparison isolates the model's contribution.
    """
    quads = np.asarray(quads, dtype=model.dtype)
    mse_model = 0.0
    mse_zero = 0.0
    for k in range(n_eval):
        s = derive_seed(seed, 48, k)
        rng = rng_from(s, 42)
        mask = CANONICAL_MASKS[int(rng.integers(0, 4))]
        t = sample_timestep(model.config.t_mean, model.config.t_std,
                            derive_seed(s, 43), n=len(quads))
        eps = rng.standard_normal(quads.shape).astype(model.dtype)
        vt = flow_interpolate(quads, eps,
                              t.reshape(-1, 1, 1, 1, 1).astype(model.dtype))
        with no_grad():
            pred = model.velocity(vt, quads, mask, t).data
        target = eps - quads
        m = mask.as_array().reshape(1, 2, 2, 1, 1)
        denom = float(quads.shape[0] * mask.as_array().sum() * model.config.token_dim)
        mse_model += float((((pred - target) ** 2) * m).sum() / denom)
        mse_zero += float(((target ** 2) * m).sum() / denom)
    return mse_model / n_eval, mse_zero / n_eval


def save_quad(path, model: QuadFlowModel, extra_meta: dict | None = None) -> None:
    meta = {"config": dataclasses.asdict(model.config)}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, model.store.state_arrays(), meta=meta)


def load_quad(path) -> tuple[QuadFlowModel, dict]:
    arrays, meta = load_checkpoint(path)
    model = QuadFlowModel(QuadFlowConfig(**meta["config"]), seed=0)
    model.store.load_state(arrays)
    return model, meta
