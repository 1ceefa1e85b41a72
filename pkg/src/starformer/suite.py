"""Verification routines shared by the CLI and the test suite.

* :func:`gradcheck_suite` compares ``backward`` against central differences
  for every differentiable op and for tiny end-to-end encoders.
* :func:`jacobian_support` estimates how strongly each input position
  influences each output satellite, for receptive-field checks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .attention import MultiHeadParams, multi_head_attention, scaled_dot_attention
from .baseline import BaselineConfig, BaselineModel, LayerParams, self_attention_layer
from .gradcheck import finite_diff_grad, rel_error
from .star import (EncoderState, StarConfig, StarModel, StepParams, embed, relay_phase,
                   satellite_phase)
from .tensor import Tensor

GRAD_TOL = 1e-5

# A case builds (inputs, loss_fn) from an rng; loss_fn takes no arguments and
# reads the current contents of the inputs.
Case = Callable[[np.random.Generator], tuple[list[Tensor], Callable[[], Tensor]]]


def _u(rng, *shape) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, shape), requires_grad=True)


def _probe(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    """Random linear functional, so every output coordinate matters."""
    w = rng.uniform(-1.0, 1.0, out.shape)
    return lambda y: T.sum_all(T.mul(y, w))


def _case(build):
    def case(rng):
        inputs, fwd = build(rng)
        probe = _probe(fwd(), rng)
        return inputs, lambda: probe(fwd())
    return case


def _fresh(tensors: Iterable[Tensor]) -> list[Tensor]:
    for t in tensors:
        t.requires_grad = True
    return list(tensors)


CASES: dict[str, Case] = {}


def _register(name):
    def deco(build):
        CASES[name] = _case(build)
        return build
    return deco


@_register("matmul")
def _(rng):
    a, b = _u(rng, 3, 4), _u(rng, 4, 2)
    return [a, b], lambda: T.matmul(a, b)


@_register("matmul_batched")
def _(rng):
    a, b = _u(rng, 2, 3, 4), _u(rng, 2, 4, 2)
    return [a, b], lambda: T.matmul(a, b)


@_register("add_broadcast")
def _(rng):
    a, b = _u(rng, 3, 4), _u(rng, 1, 4)
    return [a, b], lambda: T.add(a, b)


@_register("scale")
def _(rng):
    a = _u(rng, 2, 3)
    return [a], lambda: T.scale(a, -1.7)


@_register("relu")
def _(rng):
    a = _u(rng, 3, 5)
    return [a], lambda: T.relu(a)


@_register("softmax_rows")
def _(rng):
    a = _u(rng, 3, 5)
    return [a], lambda: T.softmax_rows(a)


@_register("layer_norm")
def _(rng):
    x, g, b = _u(rng, 1, 8), _u(rng, 1, 8), _u(rng, 1, 8)
    return [x, g, b], lambda: T.layer_norm(x, g, b)


@_register("mean_rows")
def _(rng):
    a = _u(rng, 4, 3)
    return [a], lambda: T.mean_rows(a)


@_register("max_pool_rows")
def _(rng):
    a = _u(rng, 4, 3)
    return [a], lambda: T.max_pool_rows(a)


@_register("concat_rows")
def _(rng):
    a, b = _u(rng, 2, 3), _u(rng, 1, 3)
    return [a, b], lambda: T.concat_rows([a, b, a])


@_register("slice_rows")
def _(rng):
    a = _u(rng, 5, 2)
    return [a], lambda: T.slice_rows(a, 1, 4)


@_register("gather_rows")
def _(rng):
    a = _u(rng, 4, 3)
    return [a], lambda: T.gather_rows(a, np.array([[3, 0, 1], [1, 1, 2]]))


@_register("mse_loss")
def _(rng):
    p, t = _u(rng, 3, 2), _u(rng, 3, 2)
    return [p, t], lambda: T.mse_loss(p, t)


@_register("scaled_dot_attention")
def _(rng):
    q, K, V = _u(rng, 1, 4), _u(rng, 5, 4), _u(rng, 5, 3)
    return [q, K, V], lambda: scaled_dot_attention(q, K, V)


@_register("multi_head_attention")
def _(rng):
    q, H = _u(rng, 1, 4), _u(rng, 5, 4)
    p = MultiHeadParams.init(4, 2, 2, rng)
    return [q, H, p.w_q, p.w_k, p.w_v, p.w_o], lambda: multi_head_attention(q, H, p)


def _tiny_star(rng, topology="full_star"):
    c = StarConfig(d_in=3, d_out=2, hidden=4, heads=2, head_dim=2, steps=2, max_len=3,
                   topology=topology)
    m = StarModel(c, seed=int(rng.integers(1 << 31)))
    for t in m.parameters():
        t.data[...] = rng.uniform(-1.0, 1.0, t.shape)
    return c, m


@_register("satellite_phase")
def _(rng):
    c, m = _tiny_star(rng)
    H, E, s = _u(rng, 3, 4), _u(rng, 3, 4), _u(rng, 1, 4)
    sp: StepParams = m.params.step(0)
    ps = [H, E, s] + list(sp.named("").values())
    return ps, lambda: satellite_phase(EncoderState(H, s), E, sp, c)


@_register("relay_phase")
def _(rng):
    c, m = _tiny_star(rng)
    H, s = _u(rng, 3, 4), _u(rng, 1, 4)
    sp = m.params.step(0)
    return [H, s] + list(sp.named("").values()), lambda: relay_phase(H, s, sp)


@_register("embed")
def _(rng):
    c, m = _tiny_star(rng)
    X = _u(rng, 3, 3)
    return [X, m.params.w_e, m.params.pos], lambda: embed(X, m.params)


@_register("star_end_to_end")
def _(rng):
    c, m = _tiny_star(rng)
    X = _u(rng, 3, 3)
    return [X] + m.parameters(), lambda: m(X)


@_register("star_no_radical_end_to_end")
def _(rng):
    c, m = _tiny_star(rng, "no_radical")
    X = _u(rng, 3, 3)
    return [X] + m.parameters(), lambda: m(X)


@_register("baseline_layer")
def _(rng):
    c = BaselineConfig(d_in=3, d_out=2, hidden=4, heads=2, head_dim=2, layers=1, max_len=2)
    lp = LayerParams.init(c, rng)
    for t in lp.named("").values():
        t.data[...] = rng.uniform(-1.0, 1.0, t.shape)
    H = _u(rng, 2, 4)
    return [H] + list(lp.named("").values()), lambda: self_attention_layer(H, lp)


@_register("baseline_end_to_end")
def _(rng):
    c = BaselineConfig(d_in=3, d_out=2, hidden=4, heads=2, head_dim=2, layers=2, max_len=2)
    m = BaselineModel(c, seed=int(rng.integers(1 << 31)))
    X = _u(rng, 2, 3)
    return [X] + m.parameters(), lambda: m(X)


@dataclass
class GradcheckResult:
    name: str
    seeds: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= GRAD_TOL


def check_case(case: Case, seed: int, h: float = 1e-6) -> float:
    rng = np.random.default_rng(seed)
    inputs, loss_fn = case(rng)
    _fresh(inputs)
    for t in inputs:
        t.grad = None
    T.backward(loss_fn())
    analytic, numeric = [], []
    for t in inputs:
        analytic.append((t.grad if t.grad is not None else np.zeros_like(t.data)).ravel())
        with T.no_grad():
            numeric.append(finite_diff_grad(lambda _: loss_fn(), t, h).ravel())
    # one relative error for the whole gradient vector of the case
    return rel_error(np.concatenate(analytic), np.concatenate(numeric))


def gradcheck_suite(seeds: Iterable[int] = range(10), names: Iterable[str] | None = None) -> list[GradcheckResult]:
    seeds = list(seeds)
    out = []
    for name in (names or CASES):
        worst = max(check_case(CASES[name], s) for s in seeds)
        out.append(GradcheckResult(name, len(seeds), worst))
    return out


# ---------------------------------------------------------------------------
# receptive field
# ---------------------------------------------------------------------------

def ring_distance(i: int, j: int, n: int) -> int:
    d = abs(i - j)
    return min(d, n - d)


def jacobian_support(model, X: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """``A[i, j]`` = max |d h_j^T / d x_i| over feature pairs, by central differences.

    All ``2 * n * d_in`` perturbed copies of ``X`` run as a single batch.
    """
    n, d_in = X.shape
    batch = np.repeat(X[None], 2 * n * d_in, axis=0)
    for p in range(n * d_in):
        i, f = divmod(p, d_in)
        batch[2 * p, i, f] += h
        batch[2 * p + 1, i, f] -= h
    with T.no_grad():
        out = model.encode(Tensor(batch))
    H = (out[0] if isinstance(out, tuple) else out).data
    diff = np.abs(H[0::2] - H[1::2]) / (2.0 * h)        # (n*d_in, n, d)
    return diff.reshape(n, d_in, n, -1).max(axis=(1, 3))


@dataclass
class ReachabilityReport:
    kind: str
    n: int
    steps: int
    support: np.ndarray
    threshold: float = 1e-12

    def reached(self) -> np.ndarray:
        return self.support > self.threshold

    @property
    def max_distance(self) -> int:
        r = self.reached()
        return max((ring_distance(i, j, self.n) for i in range(self.n) for j in range(self.n) if r[i, j]),
                   default=0)

    def fraction_within(self, radius: int) -> float:
        r = self.reached()
        pairs = [(i, j) for i in range(self.n) for j in range(self.n) if ring_distance(i, j, self.n) <= radius]
        return sum(bool(r[i, j]) for i, j in pairs) / len(pairs)

    def max_beyond(self, radius: int) -> float:
        vals = [self.support[i, j] for i in range(self.n) for j in range(self.n)
                if ring_distance(i, j, self.n) > radius]
        return float(max(vals, default=0.0))


def reachability(kind: str, steps: int, n: int, seed: int = 0, d_in: int = 10,
                 hidden: int = 64, heads: int = 4) -> ReachabilityReport:
    """Jacobian support of a freshly initialised model on a random input.

    Very narrow models are a poor probe: a row whose ReLU outputs are all
    negative is constant after layer norm and has zero Jacobian everywhere.
    """
    from .harness import build_model, TrainConfig

    cfg = TrainConfig(model=kind, hidden=hidden, heads=heads, head_dim=hidden // heads, steps=steps, seed=seed)
    model = build_model(cfg, d_in=d_in, d_out=2, max_len=n)
    X = np.random.default_rng(seed + 7919).uniform(-1.0, 1.0, (n, d_in))
    return ReachabilityReport(kind, n, steps, jacobian_support(model, X))
