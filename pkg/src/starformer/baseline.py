"""Standard fully connected Transformer encoder used as the comparison system."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionTrace, MultiHeadParams, multi_head_attention
from .star import ConfigError, embed
from .tensor import Tensor


@dataclass
class BaselineConfig:
    d_in: int
    d_out: int
    hidden: int = 64
    heads: int = 4
    head_dim: int = 16
    layers: int = 3
    ffn_dim: int | None = None
    max_len: int = 256
    d_pos: int | None = None

    def __post_init__(self):
        if self.d_pos is None:
            self.d_pos = self.d_in
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden
        if self.hidden != self.heads * self.head_dim:
            raise ConfigError(f"hidden {self.hidden} != heads {self.heads} x head_dim {self.head_dim}")
        if self.layers < 1 or self.max_len < 1:
            raise ConfigError("layers and max_len must be >= 1")

    # shared name with StarConfig so callers can read the depth uniformly
    @property
    def steps(self) -> int:
        return self.layers


@dataclass
class LayerParams:
    attn: MultiHeadParams
    ln1_gain: Tensor
    ln1_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @classmethod
    def init(cls, c: BaselineConfig, rng: np.random.Generator) -> LayerParams:
        d, f = c.hidden, c.ffn_dim

        def p(a):
            return Tensor(a, requires_grad=True)

        return cls(
            MultiHeadParams.init(d, c.heads, c.head_dim, rng),
            p(np.ones((1, d))), p(np.zeros((1, d))),
            p(rng.normal(0.0, 1.0 / math.sqrt(d), (d, f))), p(np.zeros((1, f))),
            p(rng.normal(0.0, 1.0 / math.sqrt(f), (f, d))), p(np.zeros((1, d))),
            p(np.ones((1, d))), p(np.zeros((1, d))),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.attn.named(prefix + "attn.")
        for name in ("ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2", "ln2_gain", "ln2_bias"):
            out[prefix + name] = getattr(self, name)
        return out


@dataclass
class BaselineParams:
    w_e: Tensor
    pos: Tensor | None
    layers: list[LayerParams]
    w_r: Tensor
    max_len: int

    @classmethod
    def init(cls, c: BaselineConfig, rng: np.random.Generator) -> BaselineParams:
        fan = c.d_in + c.d_pos
        w_e = Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan), (fan, c.hidden)), requires_grad=True)
        pos = Tensor(rng.normal(0.0, 1.0, (c.max_len, c.d_pos)), requires_grad=True) if c.d_pos else None
        layers = [LayerParams.init(c, rng) for _ in range(c.layers)]
        w_r = Tensor(rng.normal(0.0, 1.0 / math.sqrt(c.hidden), (c.hidden, c.d_out)), requires_grad=True)
        return cls(w_e, pos, layers, w_r, c.max_len)

    def named(self) -> dict[str, Tensor]:
        out = {"embed.w_e": self.w_e}
        if self.pos is not None:
            out["embed.pos"] = self.pos
        for i, lp in enumerate(self.layers):
            out.update(lp.named(f"layer{i}."))
        out["readout.w_r"] = self.w_r
        return out


def self_attention_layer(H: Tensor, params: LayerParams, trace: AttentionTrace | None = None) -> Tensor:
    """Post-norm encoder layer: every position attends to all n positions, then a ReLU FFN."""
    a = multi_head_attention(H, H, params.attn, trace)
    H = T.layer_norm(T.add(H, a), params.ln1_gain, params.ln1_bias)
    f = T.relu(T.add(T.matmul(H, params.w1), params.b1))
    f = T.add(T.matmul(f, params.w2), params.b2)
    return T.layer_norm(T.add(H, f), params.ln2_gain, params.ln2_bias)


def encode_baseline(X, params: BaselineParams, config: BaselineConfig,
                    trace: AttentionTrace | None = None) -> Tensor:
    H = embed(X, params)
    for lp in params.layers:
        H = self_attention_layer(H, lp, trace)
    return H


class BaselineModel:
    kind = "baseline"

    def __init__(self, config: BaselineConfig, seed: int = 0, params: BaselineParams | None = None):
        self.config = config
        self.params = params if params is not None else BaselineParams.init(config, np.random.default_rng(seed))

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params.named()

    def parameters(self) -> list[Tensor]:
        return list(self.params.named().values())

    def encode(self, X, trace: AttentionTrace | None = None) -> Tensor:
        return encode_baseline(X, self.params, self.config, trace)

    def __call__(self, X, trace: AttentionTrace | None = None) -> Tensor:
        H = self.encode(X, trace)
        out = T.matmul(T.max_pool_rows(H), self.params.w_r)
        return T.reshape(out, out.shape[:-2] + (out.shape[-1],))

    def pairs_per_step(self, n: int) -> int:
        return n * n
