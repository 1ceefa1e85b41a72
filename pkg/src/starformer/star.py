"""Star-topology encoder: satellites on a ring plus one shared relay node.

Each update step runs two phases.  Every satellite ``h_i`` attends over its
ring neighbours, itself, its own embedding ``e_i`` and the relay ``s``; all
satellites read the previous step's states.  The relay then attends over
itself and the freshly updated satellites.  Both phases finish with
ReLU followed by layer normalisation.

Indices are 0-based throughout.  Inputs may be a single ``(n, d_in)`` matrix
or a batch ``(B, n, d_in)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import tensor as T
from .attention import AttentionTrace, MultiHeadParams, attend_projected, multi_head_attention
from .tensor import Tensor

TOPOLOGIES = ("full_star", "no_radical", "no_ring")


class ConfigError(ValueError):
    pass


class SequenceLengthError(ValueError):
    pass


@dataclass
class StarConfig:
    d_in: int
    d_out: int
    hidden: int = 64
    heads: int = 4
    head_dim: int = 16
    steps: int = 3
    max_len: int = 256
    d_pos: int | None = None
    topology: str = "full_star"
    ring_wraparound: bool = True
    share_params: bool = True

    def __post_init__(self):
        if self.d_pos is None:
            self.d_pos = self.d_in
        if self.hidden != self.heads * self.head_dim:
            raise ConfigError(f"hidden {self.hidden} != heads {self.heads} x head_dim {self.head_dim}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.topology!r}; choose from {TOPOLOGIES}")
        if self.d_in < 1 or self.d_out < 1 or self.d_pos < 0:
            raise ConfigError("d_in, d_out must be positive and d_pos non-negative")


@dataclass
class EncoderState:
    H: Tensor
    s: Tensor
    t: int = 0


@dataclass
class StepParams:
    satellite: MultiHeadParams
    relay: MultiHeadParams
    sat_gain: Tensor
    sat_bias: Tensor
    relay_gain: Tensor
    relay_bias: Tensor

    @classmethod
    def init(cls, d: int, heads: int, head_dim: int, rng: np.random.Generator) -> StepParams:
        return cls(
            MultiHeadParams.init(d, heads, head_dim, rng),
            MultiHeadParams.init(d, heads, head_dim, rng),
            Tensor(np.ones((1, d)), requires_grad=True),
            Tensor(np.zeros((1, d)), requires_grad=True),
            Tensor(np.ones((1, d)), requires_grad=True),
            Tensor(np.zeros((1, d)), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.satellite.named(prefix + "sat.")
        out.update(self.relay.named(prefix + "relay."))
        out[prefix + "sat_ln.gain"] = self.sat_gain
        out[prefix + "sat_ln.bias"] = self.sat_bias
        out[prefix + "relay_ln.gain"] = self.relay_gain
        out[prefix + "relay_ln.bias"] = self.relay_bias
        return out


@dataclass
class StarParams:
    w_e: Tensor                 # (d_in + d_pos) x hidden
    pos: Tensor | None          # max_len x d_pos, None when d_pos == 0
    steps: list[StepParams]     # one entry when shared across steps
    w_r: Tensor                 # hidden x d_out
    max_len: int = field(default=0)

    @classmethod
    def init(cls, config: StarConfig, rng: np.random.Generator) -> StarParams:
        c = config
        fan = c.d_in + c.d_pos
        w_e = Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan), (fan, c.hidden)), requires_grad=True)
        pos = Tensor(rng.normal(0.0, 1.0, (c.max_len, c.d_pos)), requires_grad=True) if c.d_pos else None
        n_sets = 1 if c.share_params else c.steps
        steps = [StepParams.init(c.hidden, c.heads, c.head_dim, rng) for _ in range(n_sets)]
        w_r = Tensor(rng.normal(0.0, 1.0 / math.sqrt(c.hidden), (c.hidden, c.d_out)), requires_grad=True)
        return cls(w_e, pos, steps, w_r, c.max_len)

    def step(self, t: int) -> StepParams:
        return self.steps[0] if len(self.steps) == 1 else self.steps[t]

    def named(self) -> dict[str, Tensor]:
        out = {"embed.w_e": self.w_e}
        if self.pos is not None:
            out["embed.pos"] = self.pos
        for i, sp in enumerate(self.steps):
            out.update(sp.named(f"step{i}."))
        out["readout.w_r"] = self.w_r
        return out


# ---------------------------------------------------------------------------
# embedding and initial state
# ---------------------------------------------------------------------------

def embed(X: Tensor, params) -> Tensor:
    """e_i = [x_i ; p_i] W_e with learned position rows p_i.

    ``params`` needs ``w_e``, ``pos`` (or None) and ``max_len``.
    """
    X = T.as_tensor(X)
    n = X.shape[-2]
    if n > params.max_len:
        raise SequenceLengthError(f"sequence length {n} exceeds max_len {params.max_len}")
    if params.pos is None:
        return T.matmul(X, params.w_e)
    P = T.slice_rows(params.pos, 0, n)
    if X.ndim > 2:
        P = T.expand(P, X.shape[:-1] + (P.shape[-1],))
    return T.matmul(T.concat([X, P], axis=-1), params.w_e)


def init_state(E: Tensor) -> EncoderState:
    return EncoderState(H=E, s=T.mean_rows(E), t=0)


# ---------------------------------------------------------------------------
# satellite phase
# ---------------------------------------------------------------------------

def _ring_rows(i: int, n: int, config: StarConfig) -> list[int]:
    if config.topology == "no_ring":
        return [i]
    if config.ring_wraparound:
        return [(i - 1) % n, i, (i + 1) % n]
    return ([i - 1] if i > 0 else []) + [i] + ([i + 1] if i < n - 1 else [])


def satellite_context(state: EncoderState, E: Tensor, i: int, config: StarConfig) -> Tensor:
    """Stack ``[h_{i-1}; h_i; h_{i+1}; e_i; s]`` from the previous step.

    The ring rows vanish for ``no_ring``, ``s`` vanishes for ``no_radical``,
    and boundary neighbours are dropped when the ring is not closed.
    """
    n = state.H.shape[-2]
    parts = [T.gather_rows(state.H, np.array(_ring_rows(i, n, config))),
             T.gather_rows(E, np.array([i]))]
    if config.topology != "no_radical":
        parts.append(state.s)
    return T.concat_rows(parts)


def context_index(n: int, config: StarConfig) -> tuple[np.ndarray, np.ndarray | None]:
    """Row indices into ``[H; E; s]`` (``2n + 1`` rows) for every satellite.

    Returns ``(index, mask)`` with ``index`` of shape ``(n, m)``.  Missing
    boundary neighbours are filled with the satellite itself and switched off
    in ``mask``; ``mask`` is None when nothing is switched off.
    """
    i = np.arange(n)
    cols: list[np.ndarray] = []
    keep: list[np.ndarray] = []
    if config.topology != "no_ring":
        prev, nxt = i - 1, i + 1
        if config.ring_wraparound:
            cols += [prev % n, i, nxt % n]
            keep += [np.ones(n, bool)] * 3
        else:
            cols += [np.where(prev >= 0, prev, i), i, np.where(nxt < n, nxt, i)]
            keep += [prev >= 0, np.ones(n, bool), nxt < n]
    else:
        cols.append(i)
        keep.append(np.ones(n, bool))
    cols.append(n + i)
    keep.append(np.ones(n, bool))
    if config.topology != "no_radical":
        cols.append(np.full(n, 2 * n))
        keep.append(np.ones(n, bool))
    index = np.stack(cols, axis=1)
    mask = np.stack(keep, axis=1)
    return index, (None if mask.all() else mask)


def satellite_phase(state: EncoderState, E: Tensor, params: StepParams, config: StarConfig,
                    trace: AttentionTrace | None = None) -> Tensor:
    """Update all satellites at once; returns the new ``H``.

    Keys and values are projected once per source row and then gathered,
    which is the same computation as projecting each gathered context.
    """
    H, s = state.H, state.s
    n = H.shape[-2]
    mh = params.satellite
    index, mask = context_index(n, config)
    sources = T.concat_rows([H, E, s])
    keys = T.gather_rows(T.matmul(sources, mh.w_k), index)
    values = T.gather_rows(T.matmul(sources, mh.w_v), index)
    q = T.matmul(H, mh.w_q)
    q = T.reshape(q, q.shape[:-1] + (1, q.shape[-1]))
    if trace is not None:
        batch = int(np.prod(H.shape[:-2], dtype=np.int64))
        trace.record(batch * (index.size if mask is None else int(mask.sum())))
    m = None if mask is None else mask[:, None, :]
    out = attend_projected(q, keys, values, mh, m)
    out = T.reshape(out, H.shape[:-1] + (out.shape[-1],))
    return T.layer_norm(T.relu(out), params.sat_gain, params.sat_bias)


def satellite_phase_rowwise(state: EncoderState, E: Tensor, params: StepParams, config: StarConfig,
                            trace: AttentionTrace | None = None,
                            order: Iterable[int] | None = None) -> Tensor:
    """Reference satellite update: one multi-head call per row, in ``order``."""
    n = state.H.shape[-2]
    rows: dict[int, Tensor] = {}
    for i in (range(n) if order is None else order):
        ctx = satellite_context(state, E, i, config)
        h_prev = T.gather_rows(state.H, np.array([i]))
        h = multi_head_attention(h_prev, ctx, params.satellite, trace)
        rows[i] = T.layer_norm(T.relu(h), params.sat_gain, params.sat_bias)
    return T.concat_rows([rows[i] for i in range(n)])


# ---------------------------------------------------------------------------
# relay phase, full recurrence, readout
# ---------------------------------------------------------------------------

def relay_phase(H: Tensor, s: Tensor, params: StepParams,
                trace: AttentionTrace | None = None) -> Tensor:
    """s_new = LayerNorm(ReLU(MultiAtt(s, [s; H]))) using the updated ``H``."""
    ctx = T.concat_rows([s, H])
    out = multi_head_attention(s, ctx, params.relay, trace)
    return T.layer_norm(T.relu(out), params.relay_gain, params.relay_bias)


def step(state: EncoderState, E: Tensor, params: StepParams, config: StarConfig,
         trace: AttentionTrace | None = None) -> EncoderState:
    if state.t >= config.steps:
        raise ConfigError(f"state already at step {state.t} of {config.steps}")
    H = satellite_phase(state, E, params, config, trace)
    if config.topology == "no_radical":
        s = state.s
    else:
        s = relay_phase(H, state.s, params, trace)
    return EncoderState(H, s, state.t + 1)


def encode(X, params: StarParams, config: StarConfig,
           trace: AttentionTrace | None = None) -> tuple[Tensor, Tensor]:
    """Run ``config.steps`` satellite/relay alternations; returns ``(H_T, s_T)``."""
    E = embed(X, params)
    state = init_state(E)
    for t in range(config.steps):
        state = step(state, E, params.step(t), config, trace)
    return state.H, state.s


def readout(H: Tensor, s: Tensor, w_r: Tensor) -> Tensor:
    """(s + per-feature max over satellites) W_r."""
    return T.matmul(T.add(s, T.max_pool_rows(H)), w_r)


class StarModel:
    """Encoder plus linear readout, mapping ``(.., n, d_in)`` to ``(.., d_out)``."""

    kind = "star"

    def __init__(self, config: StarConfig, seed: int = 0, params: StarParams | None = None):
        self.config = config
        self.params = params if params is not None else StarParams.init(config, np.random.default_rng(seed))

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params.named()

    def parameters(self) -> list[Tensor]:
        return list(self.params.named().values())

    def encode(self, X, trace: AttentionTrace | None = None) -> tuple[Tensor, Tensor]:
        return encode(X, self.params, self.config, trace)

    def __call__(self, X, trace: AttentionTrace | None = None) -> Tensor:
        H, s = self.encode(X, trace)
        out = readout(H, s, self.params.w_r)
        return T.reshape(out, out.shape[:-2] + (out.shape[-1],))

    def pairs_per_step(self, n: int) -> int:
        """Analytic score-pair count for one update step on one sequence."""
        index, mask = context_index(n, self.config)
        sat = index.size if mask is None else int(mask.sum())
        return sat + (0 if self.config.topology == "no_radical" else n + 1)

