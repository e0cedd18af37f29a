"""Network building blocks: linear/norm layers, attention, modulated blocks.

All attention paths take batched token tensors shaped (B, T, d). Blocks are
pre-norm residual. Modulated blocks follow the adaptive-norm recipe: the
conditioning vector produces per-sublayer shift/scale/gate signals through
zero-initialized projections, so a fresh block is exactly the identity map.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError
from .params import ParameterStore
from .tensor import Tensor, softmax


class Linear:
    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator | None = None, *, bias: bool = True,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            if rng is None:
                raise InvalidArgumentError("rng required unless zero_init")
            w = rng.normal(0.0, d_in ** -0.5, size=(d_in, d_out))
        self.w = store.add(name + ".w", w)
        self.b = store.add(name + ".b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        if self.b is not None:
            y = y + self.b
        return y


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, dim: int, *,
                 affine: bool = True, eps: float = 1e-5):
        self.eps = eps
        self.g = store.add(name + ".g", np.ones(dim)) if affine else None
        self.b = store.add(name + ".b", np.zeros(dim)) if affine else None

    def __call__(self, x: Tensor) -> Tensor:
        m = x.mean(axis=-1, keepdims=True)
        d = x - m
        var = (d * d).mean(axis=-1, keepdims=True)
        xhat = d / ((var + self.eps) ** 0.5)
        if self.g is not None:
            xhat = xhat * self.g + self.b
        return xhat


def sinusoidal_embed(values, dim: int, base: float = 10000.0, dtype=np.float32) -> np.ndarray:
    """Interleaved sin/cos embedding at geometric frequencies.

    Pair i uses angular frequency base^(-2i/dim), so component 0 is sin(v)
    and the squared norm is dim/2 for every value.
    """
    if dim % 2 != 0:
        raise InvalidArgumentError("embedding dim must be even")
    v = np.asarray(values, dtype=np.float64)
    half = dim // 2
    freqs = base ** (-2.0 * np.arange(half) / dim)
    ang = v[..., None] * freqs
    out = np.empty(v.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out.astype(dtype)


def pixel_shuffle_tokens(x, k: int):
    """Rearrange (..., V, c) tokens into (..., V*k, c/k): token v becomes k
    consecutive tokens, each taking a contiguous c/k channel slice."""
    if k < 1:
        raise InvalidArgumentError("shuffle factor must be >= 1")
    shape = x.shape
    if len(shape) < 2:
        raise InvalidArgumentError("need at least (V, c) shaped tokens")
    V, c = shape[-2], shape[-1]
    if c % k != 0:
        raise InvalidArgumentError(f"channels {c} not divisible by factor {k}")
    if k == 1:
        return x
    new = shape[:-2] + (V * k, c // k)
    return x.reshape(new) if isinstance(x, Tensor) else np.reshape(x, new)


def pixel_unshuffle_tokens(x, k: int):
    """Inverse of pixel_shuffle_tokens."""
    shape = x.shape
    V, c = shape[-2], shape[-1]
    if V % k != 0:
        raise InvalidArgumentError(f"tokens {V} not divisible by factor {k}")
    if k == 1:
        return x
    new = shape[:-2] + (V // k, c * k)
    return x.reshape(new) if isinstance(x, Tensor) else np.reshape(x, new)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, T, d = x.shape
    return x.reshape(B, T, heads, d // heads).swapaxes(1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    B, H, T, dh = x.shape
    return x.swapaxes(1, 2).reshape(B, T, H * dh)


class SelfAttention:
    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int,
                 rng: np.random.Generator):
        if dim % heads != 0:
            raise InvalidArgumentError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.wq = Linear(store, name + ".q", dim, dim, rng)
        self.wk = Linear(store, name + ".k", dim, dim, rng)
        self.wv = Linear(store, name + ".v", dim, dim, rng)
        self.proj = Linear(store, name + ".o", dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3:
            raise InvalidArgumentError("attention expects (B, T, d) tokens")
        q = _split_heads(self.wq(x), self.heads)
        k = _split_heads(self.wk(x), self.heads)
        v = _split_heads(self.wv(x), self.heads)
        att = (q @ k.swapaxes(-1, -2)) * self.scale
        o = softmax(att, axis=-1) @ v
        return self.proj(_merge_heads(o))


class CrossAttention:
    def __init__(self, store: ParameterStore, name: str, dim: int, kv_dim: int,
                 heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise InvalidArgumentError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.wq = Linear(store, name + ".q", dim, dim, rng)
        self.wk = Linear(store, name + ".k", kv_dim, dim, rng)
        self.wv = Linear(store, name + ".v", kv_dim, dim, rng)
        self.proj = Linear(store, name + ".o", dim, dim, rng)

    def __call__(self, x: Tensor, kv: Tensor) -> Tensor:
        if x.ndim != 3 or kv.ndim != 3:
            raise InvalidArgumentError("attention expects (B, T, d) tokens")
        if kv.shape[1] == 0:
            raise InvalidArgumentError("cross-attention requires at least one kv token")
        q = _split_heads(self.wq(x), self.heads)
        k = _split_heads(self.wk(kv), self.heads)
        v = _split_heads(self.wv(kv), self.heads)
        att = (q @ k.swapaxes(-1, -2)) * self.scale
        o = softmax(att, axis=-1) @ v
        return self.proj(_merge_heads(o))


class FeedForward:
    def __init__(self, store: ParameterStore, name: str, dim: int,
                 rng: np.random.Generator, mult: int = 4):
        self.l1 = Linear(store, name + ".l1", dim, mult * dim, rng)
        self.l2 = Linear(store, name + ".l2", mult * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(self.l1(x).gelu())


class TransformerBlock:
    """Pre-norm residual block: self-attention, optional cross-attention,
    feed-forward."""

    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int,
                 rng: np.random.Generator, *, kv_dim: int | None = None, ff_mult: int = 4):
        self.ln1 = LayerNorm(store, name + ".ln1", dim)
        self.attn = SelfAttention(store, name + ".sa", dim, heads, rng)
        if kv_dim is not None:
            self.lnc = LayerNorm(store, name + ".lnc", dim)
            self.cross = CrossAttention(store, name + ".ca", dim, kv_dim, heads, rng)
        else:
            self.cross = None
        self.ln2 = LayerNorm(store, name + ".ln2", dim)
        self.ff = FeedForward(store, name + ".ff", dim, rng, mult=ff_mult)

    def __call__(self, x: Tensor, kv: Tensor | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x))
        if self.cross is not None:
            if kv is None:
                raise InvalidArgumentError("block built with cross-attention needs kv")
            x = x + self.cross(self.lnc(x), kv)
        x = x + self.ff(self.ln2(x))
        return x


class _Modulation:
    """shift/scale/gate triple from a conditioning vector, zero-initialized."""

    def __init__(self, store: ParameterStore, name: str, cond_dim: int, dim: int):
        self.shift = Linear(store, name + ".shift", cond_dim, dim, zero_init=True)
        self.scale = Linear(store, name + ".scale", cond_dim, dim, zero_init=True)
        self.gate = Linear(store, name + ".gate", cond_dim, dim, zero_init=True)

    def signals(self, c: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        B = c.shape[0]
        sh = self.shift(c).reshape(B, 1, -1)
        sc = self.scale(c).reshape(B, 1, -1)
        g = self.gate(c).reshape(B, 1, -1)
        return sh, sc, g


class ModulatedBlock:
    """Residual block whose norms are modulated by a conditioning vector.

    All modulation projections start at zero, so output == input at init
    regardless of the conditioning value.
    """

    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int,
                 cond_dim: int, rng: np.random.Generator, *,
                 kv_dim: int | None = None, ff_mult: int = 4):
        self.ln1 = LayerNorm(store, name + ".ln1", dim, affine=False)
        self.attn = SelfAttention(store, name + ".sa", dim, heads, rng)
        self.mod1 = _Modulation(store, name + ".mod1", cond_dim, dim)
        if kv_dim is not None:
            self.lnc = LayerNorm(store, name + ".lnc", dim, affine=False)
            self.cross = CrossAttention(store, name + ".ca", dim, kv_dim, heads, rng)
            self.modc = _Modulation(store, name + ".modc", cond_dim, dim)
        else:
            self.cross = None
        self.ln2 = LayerNorm(store, name + ".ln2", dim, affine=False)
        self.ff = FeedForward(store, name + ".ff", dim, rng, mult=ff_mult)
        self.mod2 = _Modulation(store, name + ".mod2", cond_dim, dim)

    def __call__(self, x: Tensor, cond: Tensor, kv: Tensor | None = None) -> Tensor:
        if cond.ndim != 2 or cond.shape[0] != x.shape[0]:
            raise InvalidArgumentError("conditioning must be (B, cond_dim)")
        c = cond.silu()
        sh, sc, g = self.mod1.signals(c)
        x = x + g * self.attn(self.ln1(x) * (sc + 1.0) + sh)
        if self.cross is not None:
            if kv is None:
                raise InvalidArgumentError("block built with cross-attention needs kv")
            sh, sc, g = self.modc.signals(c)
            x = x + g * self.cross(self.lnc(x) * (sc + 1.0) + sh, kv)
        sh, sc, g = self.mod2.signals(c)
        x = x + g * self.ff(self.ln2(x) * (sc + 1.0) + sh)
        return x


class TimestepEmbedder:
    """Map a scalar diffusion time t in [0, 1] to a conditioning vector."""

    def __init__(self, store: ParameterStore, name: str, dim: int,
                 rng: np.random.Generator, freq_dim: int = 128, t_scale: float = 1000.0):
        self.freq_dim = freq_dim
        self.t_scale = t_scale
        self.dtype = store.dtype
        self.l1 = Linear(store, name + ".l1", freq_dim, dim, rng)
        self.l2 = Linear(store, name + ".l2", dim, dim, rng)

    def __call__(self, t) -> Tensor:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        e = sinusoidal_embed(t * self.t_scale, self.freq_dim, dtype=self.dtype)
        return self.l2(self.l1(Tensor(e)).silu())
