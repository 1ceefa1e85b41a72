"""The nine acceptance criteria, one test each.

Every test prints a ``PASS`` or ``FAIL`` line (straight to the terminal, past
pytest's capture) before asserting, so a full run leaves a nine-line verdict
in the log.  ``python tests/test_acceptance.py`` runs them without pytest.
"""
from __future__ import annotations

import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import pytest

from starformer import tensor as T
from starformer.attention import AttentionTrace
from starformer.harness import TrainConfig, WALL_CLOCK_COLUMNS, bench, build_model, cmd_train, load_splits, train
from starformer.masked_sum import GenSpec, generate, k_half_baseline_mse, target_oracle
from starformer.suite import GRAD_TOL, gradcheck_suite, reachability

_capsys = None


@pytest.fixture(autouse=True)
def _grab_capsys(capsys):
    global _capsys
    _capsys = capsys
    yield
    _capsys = None


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    with (_capsys.disabled() if _capsys else nullcontext()):
        print("\n" + line, flush=True)
    assert ok, line


# 1 ---------------------------------------------------------------------------

def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    results = gradcheck_suite(range(10))
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_error)
    failed = [r.name for r in results if not r.passed]
    names = {r.name for r in results}
    ok = not failed and elapsed < 60 and {"star_end_to_end", "layer_norm", "softmax_rows"} <= names
    verdict(1, ok, f"{len(results)} cases x 10 seeds, worst {worst.name} {worst.max_rel_error:.2e} "
                   f"(tol {GRAD_TOL:g}), failed={failed}, {elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------

def test_criterion_2_eight_row_example():
    X = np.array([[1, 0.3, 0.4], [0, 0.5, 0.7], [0, 0.1, 0.2], [1, 0.5, 0.9],
                  [0, 0.4, 0.2], [0, 0.6, 0.8], [0, 0.1, 0.3], [1, 0.1, 0.6]])
    y = target_oracle(X)
    ok = y.shape == (2,) and y[0] == 0.9 and y[1] == 1.9
    verdict(2, ok, f"target = ({float(y[0])!r}, {float(y[1])!r}), expected (0.9, 1.9) bit-exact")


# 3 ---------------------------------------------------------------------------

def test_criterion_3_half_k_baseline():
    ds = generate(GenSpec(n=200, k=10, d=10, count=10_000, seed=2024))
    mse = k_half_baseline_mse(ds)
    per_instance = np.mean((ds.Y - 5.0) ** 2, axis=1)
    se = per_instance.std(ddof=1) / np.sqrt(len(per_instance))
    z = (mse - 10 / 12) / se
    verdict(3, abs(z) <= 3, f"empirical {mse:.5f} vs 10/12 = {10 / 12:.5f}, SE {se:.5f}, z = {z:+.2f}")


# 4 ---------------------------------------------------------------------------

DESK = dict(model="star", hidden=64, heads=4, head_dim=16, steps=3, n=32, k=5, d=10,
            train_count=2000, dev_count=1000, test_count=1000, epochs=60, patience=10, seed=0, data_seed=0)


@pytest.mark.slow
def test_criterion_4_desk_scale_learning():
    cfg = TrainConfig(**DESK)
    c0 = time.process_time()
    _, m = train(cfg, *load_splits(cfg))
    cpu = time.process_time() - c0
    ok = m.test_mse < 0.05 and cpu < 600
    verdict(4, ok, f"test MSE {m.test_mse:.4f} (< 0.05; k/2 baseline {m.k_half_test_mse:.4f}) "
                   f"after {len(m.epochs)} epochs, {cpu / 60:.1f} CPU-min (< 10)")


# 5 ---------------------------------------------------------------------------

# Identical budget for every variant: same data, seed, epochs and optimizer.
ABLATION = dict(hidden=32, heads=4, head_dim=8, steps=3, n=200, k=10, d=10, train_count=10_000,
                dev_count=1000, test_count=1000, epochs=20, patience=100, lr=3e-3, batch_size=32,
                seed=0, data_seed=100)


@pytest.mark.slow
def test_criterion_5_ablation_ordering():
    splits = None
    mse = {}
    for kind in ("star", "star_no_ring", "star_no_radical"):
        cfg = TrainConfig(model=kind, **ABLATION)
        splits = splits or load_splits(cfg)
        _, m = train(cfg, *splits)
        mse[kind] = m.test_mse
    s, ring, rad = mse["star"], mse["star_no_ring"], mse["star_no_radical"]
    ok = s < ring < rad and rad >= 3 * s
    verdict(5, ok, f"star {s:.4f} < no_ring {ring:.4f} < no_radical {rad:.4f}; "
                   f"no_radical/star = {rad / s:.2f} (>= 3)")


# 6 ---------------------------------------------------------------------------

def test_criterion_6_pair_counts():
    bad = []
    for kind in ("star", "baseline"):
        cfg = TrainConfig(model=kind, hidden=8, heads=2, head_dim=4, steps=2)
        model = build_model(cfg, d_in=10, d_out=9, max_len=200)
        for n in (8, 64, 200):
            tr = AttentionTrace()
            with T.no_grad():
                model.encode(T.Tensor(np.zeros((n, 10))), tr)
            per_step = tr.pairs / 2
            expect = 6 * n + 1 if kind == "star" else n * n
            if per_step != expect:
                bad.append((kind, n, per_step, expect))
    verdict(6, not bad, "per-step pairs 6n+1 (star) and n^2 (baseline) at n = 8, 64, 200"
                        + (f"; mismatches {bad}" if bad else ""))


# 7 ---------------------------------------------------------------------------

def test_criterion_7_speed_trend():
    rows = bench([64, 1024], repeats=3)
    t = {(r.model, r.n): r.ms_per_batch for r in rows}
    r64 = t[("baseline", 64)] / t[("star", 64)]
    r1024 = t[("baseline", 1024)] / t[("star", 1024)]
    verdict(7, r1024 > r64, f"baseline/star time ratio {r64:.2f} at n=64, {r1024:.2f} at n=1024 "
                            f"(single thread, batch 4, forward only)")


# 8 ---------------------------------------------------------------------------

def test_criterion_8_receptive_field():
    notes, ok = [], True
    for steps in (1, 2):
        for seed in range(5):
            rep = reachability("star_no_radical", steps, 12, seed)
            beyond, within = rep.max_beyond(steps), rep.fraction_within(steps)
            if beyond > 1e-12 or within < 0.95:
                ok = False
                notes.append(f"T={steps} seed={seed}: beyond {beyond:.1e}, within {within:.2%}")
    full = [reachability("star", 2, 12, seed).reached().mean() for seed in range(5)]
    if min(full) < 1.0:
        ok = False
        notes.append(f"full star T=2 coverage {min(full):.2%}")
    verdict(8, ok, "no_radical T=1,2 x 5 seeds: zero beyond ring distance T, >=95% nonzero within; "
                   f"full star T=2 covers {min(full):.0%}" + (f"; {notes}" if notes else ""))


# 9 ---------------------------------------------------------------------------

def _strip_wall_clock(text: str) -> list[list[str]]:
    rows = [line.split(",") for line in text.strip().splitlines()]
    drop = {rows[0].index(c) for c in WALL_CLOCK_COLUMNS}
    return [[v for i, v in enumerate(r) if i not in drop] for r in rows]


def test_criterion_9_determinism(tmp_path):
    texts = []
    for run in ("a", "b"):
        cfg = TrainConfig(hidden=8, heads=2, head_dim=4, steps=2, n=16, k=3, d=5, train_count=256,
                          dev_count=64, test_count=64, epochs=3, seed=11, data_seed=5,
                          out_dir=str(tmp_path / run))
        cmd_train(cfg)
        texts.append((tmp_path / run / "metrics.csv").read_text())
    a, b = (_strip_wall_clock(t) for t in texts)
    verdict(9, a == b and len(a) == 4, f"{len(a) - 1} epochs, non-wall-clock columns identical: {a == b}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", *sys.argv[1:]]))
