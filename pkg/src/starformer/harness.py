"""Training, evaluation and benchmarking on Masked Summation.

Everything here is deterministic given the seeds in :class:`TrainConfig`,
apart from the wall-clock columns named in :data:`WALL_CLOCK_COLUMNS`.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import resource
import time
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .attention import AttentionTrace
from .baseline import BaselineConfig, BaselineModel
from .checkpoint import assign, load_checkpoint, save_checkpoint
from .masked_sum import (GenSpec, MaskedSumDataset, evaluate_mse, generate, k_half_baseline_mse,
                         load_dataset)
from .optim import AdamState, adam_step
from .star import StarConfig, StarModel

log = logging.getLogger(__name__)

MODEL_KINDS = ("star", "star_no_radical", "star_no_ring", "baseline")
TOPOLOGY_OF = {"star": "full_star", "star_no_radical": "no_radical", "star_no_ring": "no_ring"}

# Tab. 1 "Masked Summation" row and the n/k/d of the reported curves.
PAPER_SCALE = dict(hidden=100, heads=10, head_dim=10, n=200, k=10, d=10,
                   train_count=10_000, dev_count=10_000, test_count=10_000)

WALL_CLOCK_COLUMNS = ("forward_ms", "epoch_seconds")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: str = "star"
    hidden: int = 64
    heads: int = 4
    head_dim: int = 16
    steps: int = 3
    ffn_dim: int | None = None
    ring_wraparound: bool = True
    share_params: bool = True
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 60
    batch_size: int = 32
    patience: int = 10
    seed: int = 0
    data_seed: int = 0
    n: int = 32
    k: int = 5
    d: int = 10
    train_count: int = 2000
    dev_count: int = 1000
    test_count: int = 1000
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    out_dir: str = "runs/latest"
    paper_scale: bool = False

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}; choose from {MODEL_KINDS}")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1, epochs >= 0")

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


_HINTS = typing.get_type_hints(TrainConfig)


def _coerce(name: str, value):
    if not isinstance(value, str):
        return value
    hint = _HINTS[name]
    args = typing.get_args(hint)
    if value in ("None", "") and type(None) in args:
        return None
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    if base is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: cannot read {value!r} as a boolean")
    return base(value)


def make_config(overrides: dict[str, object] | None = None, file_values: dict[str, str] | None = None,
                paper_scale: bool = False) -> TrainConfig:
    """Defaults < paper-scale preset < config file < explicit overrides."""
    values: dict[str, object] = {}
    if paper_scale or (file_values or {}).get("paper_scale", "").lower() in ("1", "true", "yes", "on"):
        values.update(PAPER_SCALE)
        values["paper_scale"] = True
    known = {f.name for f in fields(TrainConfig)}
    for src in (file_values or {}), (overrides or {}):
        for k, v in src.items():
            if k not in known:
                raise ValueError(f"unknown config key {k!r}")
            if v is not None:
                values[k] = _coerce(k, v)
    return TrainConfig(**values)


def build_model(cfg: TrainConfig, d_in: int, d_out: int, max_len: int):
    if cfg.model == "baseline":
        bc = BaselineConfig(d_in=d_in, d_out=d_out, hidden=cfg.hidden, heads=cfg.heads,
                            head_dim=cfg.head_dim, layers=cfg.steps, ffn_dim=cfg.ffn_dim, max_len=max_len)
        return BaselineModel(bc, seed=cfg.seed)
    sc = StarConfig(d_in=d_in, d_out=d_out, hidden=cfg.hidden, heads=cfg.heads, head_dim=cfg.head_dim,
                    steps=cfg.steps, max_len=max_len, topology=TOPOLOGY_OF[cfg.model],
                    ring_wraparound=cfg.ring_wraparound, share_params=cfg.share_params)
    return StarModel(sc, seed=cfg.seed)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_mse: float
    test_mse: float
    pairs_per_forward: int
    forward_ms: float
    epoch_seconds: float


@dataclass
class RunMetrics:
    epochs: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_mse: float = math.inf
    test_mse: float = math.nan
    k_half_test_mse: float = math.nan
    pairs_per_step: int = 0
    peak_rss_kb: int | None = None
    stopped_early: bool = False


_EPOCH_FIELDS = [f.name for f in fields(EpochMetrics)]
_EPOCH_TYPES = {f.name: (int if f.type in ("int", int) else float) for f in fields(EpochMetrics)}


def metrics_to_csv(rows: Sequence[EpochMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_EPOCH_FIELDS)
    for r in rows:
        w.writerow([repr(getattr(r, k)) for k in _EPOCH_FIELDS])
    return buf.getvalue()


def metrics_from_csv(text: str) -> list[EpochMetrics]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != _EPOCH_FIELDS:
        raise ValueError(f"unexpected metrics columns {reader.fieldnames}")
    return [EpochMetrics(**{k: _EPOCH_TYPES[k](v) for k, v in row.items()}) for row in reader]


def _peak_rss_kb() -> int | None:
    try:
        return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)
    except (OSError, ValueError):
        return None


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def load_splits(cfg: TrainConfig) -> tuple[MaskedSumDataset, MaskedSumDataset, MaskedSumDataset]:
    """Read the dataset files named in ``cfg``, generating any split without a path."""
    out = []
    for i, (path, count) in enumerate(((cfg.train_path, cfg.train_count), (cfg.dev_path, cfg.dev_count),
                                       (cfg.test_path, cfg.test_count))):
        if path:
            out.append(load_dataset(path))
        else:
            out.append(generate(GenSpec(cfg.n, cfg.k, cfg.d, count, cfg.data_seed + i)))
    return tuple(out)


def _forward_pairs(model, n: int, d: int) -> int:
    trace = AttentionTrace()
    with T.no_grad():
        model.encode(T.Tensor(np.zeros((1, n, d))), trace)
    return trace.pairs


def train(cfg: TrainConfig, train_ds: MaskedSumDataset, dev_ds: MaskedSumDataset,
          test_ds: MaskedSumDataset, model=None) -> tuple[object, RunMetrics]:
    """Adam on MSE with early stopping on dev MSE; the best-dev parameters are kept."""
    n, d = train_ds.spec.n, train_ds.spec.d
    if model is None:
        max_len = max(n, dev_ds.spec.n, test_ds.spec.n)
        model = build_model(cfg, d_in=d, d_out=d - 1, max_len=max_len)
    params = model.parameters()
    state = AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    metrics = RunMetrics(pairs_per_step=model.pairs_per_step(n))
    pairs = _forward_pairs(model, n, d)
    best = [p.data.copy() for p in params]
    bad = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_ds))
        total = 0.0
        for step, i in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[i:i + cfg.batch_size]
            try:
                loss = T.mse_loss(model(T.Tensor(train_ds.X[idx])), train_ds.Y[idx])
            except T.NumericError as exc:
                raise TrainingError(f"non-finite values at epoch {epoch} step {step}: {exc}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch} step {step}")
            T.backward(loss)
            adam_step(params, [p.grad for p in params], state)
            for p in params:
                p.grad = None
            total += value * len(idx)
        t1 = time.perf_counter()
        dev = evaluate_mse(model, dev_ds, cfg.batch_size)
        n_batches = math.ceil(len(dev_ds) / cfg.batch_size)
        forward_ms = (time.perf_counter() - t1) * 1e3 / max(n_batches, 1)
        test = evaluate_mse(model, test_ds, cfg.batch_size)
        row = EpochMetrics(epoch, total / len(train_ds), dev, test, pairs, forward_ms,
                           time.perf_counter() - t0)
        metrics.epochs.append(row)
        log.info("epoch %d train %.5f dev %.5f test %.5f (%.1fs)", epoch, row.train_loss, dev, test,
                 row.epoch_seconds)
        if dev < metrics.best_dev_mse:
            metrics.best_dev_mse, metrics.best_epoch, metrics.test_mse = dev, epoch, test
            best = [p.data.copy() for p in params]
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                metrics.stopped_early = True
                break
    for p, b in zip(params, best):
        p.data[...] = b
    if not metrics.epochs:
        metrics.test_mse = evaluate_mse(model, test_ds, cfg.batch_size)
    metrics.k_half_test_mse = k_half_baseline_mse(test_ds)
    metrics.peak_rss_kb = _peak_rss_kb()
    return model, metrics


def checkpoint_config(cfg: TrainConfig, model) -> dict[str, object]:
    out: dict[str, object] = {"kind": cfg.model}
    out.update({k: v for k, v in cfg.to_dict().items() if k != "model"})
    mc = model.config
    out.update(d_in=mc.d_in, d_out=mc.d_out, max_len=mc.max_len)
    return out


def model_from_checkpoint(path: str | Path):
    arrays, kv = load_checkpoint(path)
    kv = dict(kv)
    kind = kv.pop("kind")
    d_in, d_out, max_len = (int(kv.pop(k)) for k in ("d_in", "d_out", "max_len"))
    cfg = make_config(file_values={**kv, "model": kind, "paper_scale": "false"})
    model = build_model(cfg, d_in=d_in, d_out=d_out, max_len=max_len)
    assign(model.named_parameters(), arrays)
    return model


def summary_text(cfg: TrainConfig, metrics: RunMetrics) -> str:
    lines = [f"{k} = {v}" for k, v in cfg.to_dict().items()]
    lines += [
        f"best_epoch = {metrics.best_epoch}",
        f"best_dev_mse = {metrics.best_dev_mse!r}",
        f"test_mse = {metrics.test_mse!r}",
        f"k_half_test_mse = {metrics.k_half_test_mse!r}",
        f"pairs_per_step = {metrics.pairs_per_step}",
        f"epochs_run = {len(metrics.epochs)}",
        f"stopped_early = {metrics.stopped_early}",
        f"peak_rss_kb = {metrics.peak_rss_kb}",
    ]
    return "\n".join(lines) + "\n"


def cmd_train(cfg: TrainConfig) -> RunMetrics:
    splits = load_splits(cfg)
    model, metrics = train(cfg, *splits)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_to_csv(metrics.epochs))
    (out / "summary.txt").write_text(summary_text(cfg, metrics))
    save_checkpoint(out / "model.ckpt", model.named_parameters(), checkpoint_config(cfg, model))
    return metrics


def cmd_eval(checkpoint: str | Path, dataset: str | Path, batch_size: int = 64) -> dict[str, float]:
    model = model_from_checkpoint(checkpoint)
    ds = load_dataset(dataset)
    return {"count": len(ds), "mse": evaluate_mse(model, ds, batch_size),
            "k_half_mse": k_half_baseline_mse(ds)}


def cmd_gen(n: int, k: int, d: int, counts: dict[str, int], seed: int, out_dir: str | Path) -> list[Path]:
    from .masked_sum import save_dataset

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (split, count) in enumerate(counts.items()):
        p = out / f"{split}.txt"
        save_dataset(generate(GenSpec(n, k, d, count, seed + i)), p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# speed benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    model: str
    n: int
    ms_per_batch: float
    pairs_per_layer: int


def bench(lengths: Iterable[int], kinds: Iterable[str] = ("star", "baseline"), batch: int = 4,
          d: int = 10, hidden: int = 64, heads: int = 4, steps: int = 3, repeats: int = 5,
          warmup: int = 1, seed: int = 0) -> list[BenchRow]:
    """Forward-only wall time per batch, single BLAS thread, warmup excluded.

    Each entry is the median over ``repeats`` timed passes.
    """
    from threadpoolctl import threadpool_limits

    lengths = list(lengths)
    rows = []
    with threadpool_limits(limits=1):
        for kind in kinds:
            cfg = TrainConfig(model=kind, hidden=hidden, heads=heads, head_dim=hidden // heads,
                              steps=steps, seed=seed)
            model = build_model(cfg, d_in=d, d_out=d - 1, max_len=max(lengths))
            for n in lengths:
                X = T.Tensor(generate(GenSpec(n, min(10, n), d, batch, seed)).X)
                times = []
                with T.no_grad():
                    for r in range(warmup + repeats):
                        t0 = time.perf_counter()
                        model(X)
                        if r >= warmup:
                            times.append(time.perf_counter() - t0)
                rows.append(BenchRow(kind, n, float(np.median(times)) * 1e3, model.pairs_per_step(n)))
    return rows


def bench_csv(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "n", "ms_per_batch", "pairs_per_layer"])
    for r in rows:
        w.writerow([r.model, r.n, f"{r.ms_per_batch:.3f}", r.pairs_per_layer])
    return buf.getvalue()


def speed_ratios(rows: Sequence[BenchRow], fast: str = "star", slow: str = "baseline") -> dict[int, float]:
    by = {(r.model, r.n): r.ms_per_batch for r in rows}
    return {n: by[(slow, n)] / by[(fast, n)] for (m, n) in by if m == fast and (slow, n) in by}
