"""Masked Summation: sum the payload of the k rows whose mask slot is 1.

Each instance is an ``(n, d)`` matrix.  Column 0 holds the mask bit, the
remaining ``d - 1`` columns are uniform in ``[0, 1)``.  The target is the
column-wise sum of the payloads of the masked rows.

Dataset text format (one file per split)::

    n k d count seed
    <n*d input reals> <d-1 target reals>     # one line per instance

All reals are written as hexadecimal float literals (``float.hex``), so a
save/load cycle reproduces every double exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    n: int
    k: int
    d: int
    count: int
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise SpecError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.d < 2:
            raise SpecError(f"need d >= 2 (mask slot plus payload), got {self.d}")
        if self.count < 0:
            raise SpecError("count must be non-negative")


@dataclass
class MaskedSumDataset:
    spec: GenSpec
    X: np.ndarray   # (count, n, d)
    Y: np.ndarray   # (count, d - 1)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.X[i], self.Y[i]


def target_oracle(X: np.ndarray) -> np.ndarray:
    """Correctly rounded sum of the payload rows whose mask slot is 1."""
    X = np.asarray(X, dtype=np.float64)
    rows = X[X[:, 0] == 1.0, 1:]
    return np.array([math.fsum(col) for col in rows.T]) if rows.size else np.zeros(X.shape[1] - 1)


def generate(spec: GenSpec) -> MaskedSumDataset:
    """Draw ``spec.count`` instances deterministically from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n, k, d, count = spec.n, spec.k, spec.d, spec.count
    X = np.empty((count, n, d))
    X[:, :, 1:] = rng.random((count, n, d - 1))
    # k positions without replacement per instance: the k smallest of n uniform keys
    picked = np.argsort(rng.random((count, n)), axis=1)[:, :k]
    mask = np.zeros((count, n))
    np.put_along_axis(mask, picked, 1.0, axis=1)
    X[:, :, 0] = mask
    Y = np.stack([target_oracle(x) for x in X]) if count else np.zeros((0, d - 1))
    return MaskedSumDataset(spec, X, Y)


def k_half_baseline_mse(dataset: MaskedSumDataset) -> float:
    """MSE of always predicting k/2 in every coordinate."""
    return float(np.mean((dataset.Y - dataset.spec.k / 2.0) ** 2))


def predict(model, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    with T.no_grad():
        out = [model(T.Tensor(X[i:i + batch_size])).data for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros((0,))


def evaluate_mse(model, dataset: MaskedSumDataset, batch_size: int = 256) -> float:
    """Mean over instances of the per-instance MSE (all instances share a size)."""
    if len(dataset) == 0:
        raise SpecError("cannot evaluate on an empty dataset")
    pred = predict(model, dataset.X, batch_size)
    return float(np.mean(np.mean((pred - dataset.Y) ** 2, axis=1)))


def save_dataset(dataset: MaskedSumDataset, path: str | Path) -> None:
    s = dataset.spec
    with open(path, "w") as fh:
        fh.write(f"{s.n} {s.k} {s.d} {s.count} {s.seed}\n")
        for x, y in zip(dataset.X, dataset.Y):
            fh.write(" ".join(v.hex() for v in np.concatenate([x.ravel(), y]).tolist()))
            fh.write("\n")


def load_dataset(path: str | Path) -> MaskedSumDataset:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise SpecError(f"{path}: header must be 'n k d count seed'")
        n, k, d, count, seed = (int(v) for v in header)
        spec = GenSpec(n, k, d, count, seed)
        width = n * d + d - 1
        X = np.empty((count, n, d))
        Y = np.empty((count, d - 1))
        i = 0
        for line in fh:
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != width:
                raise SpecError(f"{path}: instance {i} has {len(vals)} values, expected {width}")
            if i >= count:
                raise SpecError(f"{path}: more instances than the declared {count}")
            row = np.array([float.fromhex(v) for v in vals])
            X[i] = row[:n * d].reshape(n, d)
            Y[i] = row[n * d:]
            i += 1
    if i != count:
        raise SpecError(f"{path}: {i} instances, header declares {count}")
    return MaskedSumDataset(spec, X, Y)
