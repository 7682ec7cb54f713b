"""Transformer building blocks over the autograd core.

Layers are plain functions reading weights from a flat name->Tensor dict, so
a parameter group is just a dict with dotted keys.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor

Params = dict[str, Tensor]


class ParamBuilder:
    """Seeded initializer filling a name->Tensor dict."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: Params = {}

    def linear(self, name: str, d_in: int, d_out: int) -> None:
        bound = 1.0 / math.sqrt(d_in)
        self.params[f"{name}.w"] = Tensor(self.rng.uniform(-bound, bound, (d_in, d_out)))
        self.params[f"{name}.b"] = Tensor(np.zeros(d_out))

    def embedding(self, name: str, n: int, d: int, std: float = 0.02) -> None:
        self.params[name] = Tensor(self.rng.normal(0.0, std, (n, d)))

    def layer_norm(self, name: str, d: int) -> None:
        self.params[f"{name}.g"] = Tensor(np.ones(d))
        self.params[f"{name}.b"] = Tensor(np.zeros(d))

    def attention(self, name: str, d: int) -> None:
        for proj in ("q", "k", "v", "o"):
            self.linear(f"{name}.{proj}", d, d)

    def encoder_block(self, name: str, d: int, ff: int) -> None:
        self.layer_norm(f"{name}.ln1", d)
        self.attention(f"{name}.attn", d)
        self.layer_norm(f"{name}.ln2", d)
        self.linear(f"{name}.ff1", d, ff)
        self.linear(f"{name}.ff2", ff, d)

    def decoder_block(self, name: str, d: int, ff: int) -> None:
        self.layer_norm(f"{name}.ln1", d)
        self.attention(f"{name}.self", d)
        self.layer_norm(f"{name}.ln2", d)
        self.attention(f"{name}.cross", d)
        self.layer_norm(f"{name}.ln3", d)
        self.linear(f"{name}.ff1", d, ff)
        self.linear(f"{name}.ff2", ff, d)


def linear(x: Tensor, p: Params, name: str) -> Tensor:
    return x @ p[f"{name}.w"] + p[f"{name}.b"]


def norm(x: Tensor, p: Params, name: str) -> Tensor:
    return ag.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d) restricted to mask) v over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ag.ShapeMismatch(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
    scores = (q @ ag.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    return ag.softmax(scores, axis=-1, mask=mask) @ v


def causal_mask(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def multi_head(x_q: Tensor, x_kv: Tensor, p: Params, name: str, heads: int,
               mask: np.ndarray | None = None) -> Tensor:
    """Multi-head attention. x_q (B,Tq,d), x_kv (B,Tk,d); mask broadcastable to
    (B,1,Tq,Tk) with True meaning attend."""
    q = _split_heads(linear(x_q, p, f"{name}.q"), heads)
    k = _split_heads(linear(x_kv, p, f"{name}.k"), heads)
    v = _split_heads(linear(x_kv, p, f"{name}.v"), heads)
    return linear(_merge_heads(attention(q, k, v, mask)), p, f"{name}.o")


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """(B,Tk) validity -> (B,1,1,Tk) attention mask."""
    return np.asarray(valid, dtype=bool)[:, None, None, :]


def feed_forward(x: Tensor, p: Params, name: str) -> Tensor:
    return linear(ag.gelu(linear(x, p, f"{name}.ff1")), p, f"{name}.ff2")


def encoder_block(x: Tensor, p: Params, name: str, heads: int,
                  mask: np.ndarray | None) -> Tensor:
    h = norm(x, p, f"{name}.ln1")
    x = x + multi_head(h, h, p, f"{name}.attn", heads, mask)
    return x + feed_forward(norm(x, p, f"{name}.ln2"), p, name)


def decoder_block(x: Tensor, memory: Tensor, p: Params, name: str, heads: int,
                  self_mask: np.ndarray, memory_mask: np.ndarray | None) -> Tensor:
    h = norm(x, p, f"{name}.ln1")
    x = x + multi_head(h, h, p, f"{name}.self", heads, self_mask)
    x = x + multi_head(norm(x, p, f"{name}.ln2"), memory, p, f"{name}.cross", heads, memory_mask)
    return x + feed_forward(norm(x, p, f"{name}.ln3"), p, name)


def sinusoidal_positions(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
