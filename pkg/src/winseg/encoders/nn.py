"""Minimal numpy transformer blocks used by both encoder backends.

Everything operates on float64 arrays with shape (..., n_tokens, d) so a
batch of window forwards runs as one call.  Attention supports a boolean
key mask (keys outside the mask receive zero weight) and a causal mask;
both are needed to reproduce masked-window and text-tower semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def gelu(x: np.ndarray) -> np.ndarray:
    # Exact erf form, matching the usual framework default.
    from scipy.special import erf

    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def quick_gelu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-1.702 * x))


ACTIVATIONS = {"gelu": gelu, "quick_gelu": quick_gelu}


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class AttentionWeights:
    in_w: np.ndarray   # (3d, d) packed q/k/v projection
    in_b: np.ndarray   # (3d,)
    out_w: np.ndarray  # (d, d)
    out_b: np.ndarray  # (d,)
    n_heads: int


@dataclass
class BlockWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    attn: AttentionWeights
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    fc_w: np.ndarray    # (d_mlp, d)
    fc_b: np.ndarray
    proj_w: np.ndarray  # (d, d_mlp)
    proj_b: np.ndarray


def attention(x: np.ndarray, w: AttentionWeights, key_mask: np.ndarray = None,
              causal: bool = False) -> np.ndarray:
    """Multi-head self-attention over the trailing token axis.

    key_mask, when given, is a boolean (n,) array; keys where it is False
    are excluded from every query's softmax, which makes the masked-in
    tokens' outputs identical to a forward run on the kept subset alone.
    """
    *lead, n, d = x.shape
    h = w.n_heads
    dh = d // h
    qkv = x @ w.in_w.T + w.in_b
    q, k, v = np.split(qkv, 3, axis=-1)

    def heads(t):
        return t.reshape(*lead, n, h, dh).swapaxes(-3, -2)  # (..., h, n, dh)

    q, k, v = heads(q), heads(k), heads(v)
    logits = q @ k.swapaxes(-1, -2) / math.sqrt(dh)
    if key_mask is not None:
        logits = np.where(key_mask[..., None, None, :], logits, -np.inf)
    if causal:
        tri = np.triu(np.ones((n, n), dtype=bool), k=1)
        logits = np.where(tri, -np.inf, logits)
    out = softmax(logits, axis=-1) @ v
    out = out.swapaxes(-3, -2).reshape(*lead, n, d)
    return out @ w.out_w.T + w.out_b


def block(x: np.ndarray, w: BlockWeights, act, key_mask: np.ndarray = None,
          causal: bool = False) -> np.ndarray:
    """Pre-norm residual block: attention then two-layer MLP."""
    x = x + attention(layer_norm(x, w.ln1_g, w.ln1_b), w.attn, key_mask, causal)
    hidden = act(layer_norm(x, w.ln2_g, w.ln2_b) @ w.fc_w.T + w.fc_b)
    return x + hidden @ w.proj_w.T + w.proj_b


def l2_normalize(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return x / np.linalg.norm(x, axis=axis, keepdims=True)
