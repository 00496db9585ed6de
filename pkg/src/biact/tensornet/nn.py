"""Neural building blocks on top of the autodiff core."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from . import core
from .core import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Kaiming-style uniform init scaled by fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = core.matmul(x, w)
    return y if b is None else core.add(y, b)


def feed_forward(x: Tensor, p: dict, prefix: str) -> Tensor:
    h = core.relu(linear(x, p[prefix + "w1"], p[prefix + "b1"]))
    return linear(h, p[prefix + "w2"], p[prefix + "b2"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def multihead_attention(query: Tensor, key: Tensor, value: Tensor, p: dict, prefix: str, n_heads: int) -> Tensor:
    """Scaled dot-product attention over ``n_heads`` heads.

    ``query`` is (B, Tq, D); ``key``/``value`` are (B, Tk, D). Projections
    ``wq, wk, wv, wo`` (and biases) are looked up in ``p`` under ``prefix``.
    """
    d = query.shape[-1]
    if d % n_heads:
        raise ConfigurationError(f"model dim {d} is not divisible by {n_heads} heads")
    q = _split_heads(linear(query, p[prefix + "wq"], p[prefix + "bq"]), n_heads)
    k = _split_heads(linear(key, p[prefix + "wk"], p[prefix + "bk"]), n_heads)
    v = _split_heads(linear(value, p[prefix + "wv"], p[prefix + "bv"]), n_heads)
    scores = core.mul(core.matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / np.sqrt(d // n_heads))
    attn = core.softmax(scores, axis=-1)
    out = core.matmul(attn, v).transpose(0, 2, 1, 3)
    b, t = query.shape[:2]
    return linear(out.reshape(b, t, d), p[prefix + "wo"], p[prefix + "bo"])


def _freqs(n, dtype):
    return 1.0 / (10000.0 ** (np.arange(n, dtype=np.float64) / n))


def sinusoidal_embed_1d(n: int, dim: int, dtype=np.float32) -> np.ndarray:
    """(n, dim) table: first half sin, second half cos of position times a frequency ladder."""
    if dim % 2:
        raise ConfigurationError(f"1-D sinusoidal embedding needs an even dim, got {dim}")
    ang = np.arange(n)[:, None] * _freqs(dim // 2, dtype)[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


def sinusoidal_embed_2d(h: int, w: int, dim: int, dtype=np.float32) -> np.ndarray:
    """(h*w, dim) table, row-major over the grid.

    Channels ``[0, dim/2)`` encode the row index and ``[dim/2, dim)`` the
    column index; each half is ``[sin..., cos...]`` over dim/4 frequencies.
    """
    if dim % 4:
        raise ConfigurationError(f"2-D sinusoidal embedding needs dim divisible by 4, got {dim}")
    rows = sinusoidal_embed_1d(h, dim // 2, np.float64)
    cols = sinusoidal_embed_1d(w, dim // 2, np.float64)
    grid = np.concatenate([np.repeat(rows, w, axis=0), np.tile(cols, (h, 1))], axis=1)
    return grid.astype(dtype)
