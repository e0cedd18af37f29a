"""Minimal numpy-backed neural substrate: autodiff, layers, optimizer."""

from .tensor import (
    Tensor,
    as_tensor,
    bce_with_logits,
    concatenate,
    grad_enabled,
    no_grad,
    softmax,
    stack,
    take,
)
from .params import CHECKPOINT_MAGIC, ParameterStore, load_checkpoint, save_checkpoint
from .optim import AdamW, cosine_lr
from .layers import (
    CrossAttention,
    FeedForward,
    LayerNorm,
    Linear,
    ModulatedBlock,
    SelfAttention,
    TimestepEmbedder,
    TransformerBlock,
    pixel_shuffle_tokens,
    pixel_unshuffle_tokens,
    sinusoidal_embed,
)
from .gradcheck import check_gradients, finite_difference_grad

__all__ = [
    "Tensor", "as_tensor", "bce_with_logits", "concatenate", "grad_enabled",
    "no_grad", "softmax", "stack", "take",
    "CHECKPOINT_MAGIC", "ParameterStore", "load_checkpoint", "save_checkpoint",
    "AdamW", "cosine_lr",
    "CrossAttention", "FeedForward", "LayerNorm", "Linear", "ModulatedBlock",
    "SelfAttention", "TimestepEmbedder", "TransformerBlock",
    "pixel_shuffle_tokens", "pixel_unshuffle_tokens", "sinusoidal_embed",
    "check_gradients", "finite_difference_grad",
]
