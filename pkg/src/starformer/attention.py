"""Scaled dot-product attention and its multi-head composition."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


class EmptyContextError(ValueError):
    pass


@dataclass
class AttentionTrace:
    """Running count of query-key score pairs evaluated."""

    pairs: int = 0
    calls: int = 0

    def record(self, pairs: int) -> None:
        self.pairs += int(pairs)
        self.calls += 1


@dataclass
class MultiHeadParams:
    """Per-head projections stored side by side.

    Head ``i`` owns columns ``i*head_dim:(i+1)*head_dim`` of ``w_q``, ``w_k``
    and ``w_v``; ``w_o`` maps the concatenated heads back to ``d``.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int
    head_dim: int

    def __post_init__(self):
        if self.heads < 1:
            raise ValueError("need at least one head")
        width = self.heads * self.head_dim
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v"):
            w = getattr(self, name)
            if w.shape != (d, width):
                raise DimensionError(f"{name} has shape {w.shape}, expected {(d, width)}")
        if self.w_o.shape[0] != width:
            raise DimensionError(f"w_o input extent {self.w_o.shape[0]} != heads*head_dim {width}")

    @classmethod
    def init(cls, d: int, heads: int, head_dim: int, rng: np.random.Generator,
             d_out: int | None = None) -> MultiHeadParams:
        d_out = d if d_out is None else d_out
        width = heads * head_dim

        def w(rows, cols):
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(rows), (rows, cols)), requires_grad=True)

        return cls(w(d, width), w(d, width), w(d, width), w(width, d_out), heads, head_dim)

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    def head(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Raw (W_q, W_k, W_v) blocks of head ``i``."""
        cols = slice(i * self.head_dim, (i + 1) * self.head_dim)
        return self.w_q.data[:, cols], self.w_k.data[:, cols], self.w_v.data[:, cols]

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "w_q": self.w_q, prefix + "w_k": self.w_k,
                prefix + "w_v": self.w_v, prefix + "w_o": self.w_o}


def _count(q_rows: int, keys: int, lead: tuple[int, ...], mask) -> int:
    if mask is None:
        return int(np.prod(lead, dtype=np.int64)) * q_rows * keys
    full = np.broadcast_to(mask, lead + (q_rows, keys)) if lead else np.broadcast_to(mask, (q_rows, keys))
    return int(np.count_nonzero(full))


def _sdpa(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(k.shape[-1]))
    return T.matmul(T.softmax_rows(scores, mask), v)


def scaled_dot_attention(q: Tensor, K: Tensor, V: Tensor,
                         trace: AttentionTrace | None = None, mask=None) -> Tensor:
    """softmax(q K^T / sqrt(d)) V for ``q[..., r, d]``, ``K[..., m, d]``, ``V[..., m, dv]``.

    ``mask`` (boolean, broadcastable to ``[..., r, m]``) removes keys; a
    masked-out pair is not counted in ``trace``.
    """
    m = K.shape[-2]
    if m == 0:
        raise EmptyContextError("attention over an empty context")
    if q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query dim {q.shape[-1]} != key dim {K.shape[-1]}")
    if V.shape[-2] != m:
        raise DimensionError(f"{m} keys but {V.shape[-2]} values")
    if trace is not None:
        trace.record(_count(q.shape[-2], m, q.shape[:-2], mask))
    return _sdpa(q, K, V, mask)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``[..., r, heads*dh]`` -> ``[..., heads, r, dh]``."""
    *lead, r, width = x.shape
    x = T.reshape(x, tuple(lead) + (r, heads, width // heads))
    return T.swapaxes(x, -3, -2)


def merge_heads(x: Tensor) -> Tensor:
    """``[..., heads, r, dh]`` -> ``[..., r, heads*dh]``."""
    *lead, h, r, dh = x.shape
    x = T.swapaxes(x, -3, -2)
    return T.reshape(x, tuple(lead) + (r, h * dh))


def attend_projected(q_proj: Tensor, k_proj: Tensor, v_proj: Tensor,
                     params: MultiHeadParams, mask=None) -> Tensor:
    """Multi-head attention from already projected queries, keys and values.

    Inputs are ``[..., r, heads*dh]`` / ``[..., m, heads*dh]``; ``mask`` is
    broadcastable to ``[..., r, m]``.
    """
    hq = split_heads(q_proj, params.heads)
    hk = split_heads(k_proj, params.heads)
    hv = split_heads(v_proj, params.heads)
    if mask is not None:
        mask = np.expand_dims(mask, -3)
    heads = _sdpa(hq, hk, hv, mask)
    return T.matmul(merge_heads(heads), params.w_o)


def multi_head_attention(q: Tensor, H: Tensor, params: MultiHeadParams,
                         trace: AttentionTrace | None = None, mask=None) -> Tensor:
    """(a_1 ++ ... ++ a_k) W_o with a_i = Att(q W_i^Q, H W_i^K, H W_i^V).

    Each head scales its scores by sqrt(head_dim).  ``q`` may hold several
    query rows; each is answered independently against all rows of ``H``.
    """
    m = H.shape[-2]
    if m == 0:
        raise EmptyContextError("attention over an empty context")
    d = params.dim
    if q.shape[-1] != d or H.shape[-1] != d:
        raise DimensionError(f"params expect dim {d}, got query {q.shape} and context {H.shape}")
    if trace is not None:
        lead = np.broadcast_shapes(q.shape[:-2], H.shape[:-2])
        trace.record(_count(q.shape[-2], m, tuple(lead), mask))
    return attend_projected(T.matmul(q, params.w_q), T.matmul(H, params.w_k),
                            T.matmul(H, params.w_v), params, mask)
