from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starformer.masked_sum import (GenSpec, MaskedSumDataset, SpecError, evaluate_mse, generate,
                                   k_half_baseline_mse, load_dataset, save_dataset, target_oracle)

# eight rows, mask bit first, three of them selected
EIGHT_ROW_EXAMPLE = np.array([
    [1, 0.3, 0.4], [0, 0.5, 0.7], [0, 0.1, 0.2], [1, 0.5, 0.9],
    [0, 0.4, 0.2], [0, 0.6, 0.8], [0, 0.1, 0.3], [1, 0.1, 0.6],
])


def exact_target(x):
    """Rational sum of the doubles, rounded once."""
    rows = [r for r in x if r[0] == 1.0]
    return np.array([float(sum((Fraction(r[j]) for r in rows), Fraction(0))) for j in range(1, x.shape[1])])


def test_eight_row_example():
    y = target_oracle(EIGHT_ROW_EXAMPLE)
    assert y[0] == 0.9 and y[1] == 1.9


def test_all_rows_masked_gives_column_sums():
    ds = generate(GenSpec(n=6, k=6, d=4, count=5, seed=2))
    for x, y in ds:
        assert np.allclose(y, x[:, 1:].sum(axis=0), rtol=0, atol=1e-14)
        assert np.array_equal(y, exact_target(x))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))),
       st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_generated_instances_satisfy_invariants(nk, d, seed):
    n, k = nk
    ds = generate(GenSpec(n, k, d, count=4, seed=seed))
    assert ds.X.shape == (4, n, d) and ds.Y.shape == (4, d - 1)
    for x, y in ds:
        assert set(np.unique(x[:, 0])) <= {0.0, 1.0}
        assert int(x[:, 0].sum()) == k
        assert np.all((x[:, 1:] >= 0) & (x[:, 1:] < 1))
        assert np.array_equal(y, exact_target(x))


def test_spec_errors():
    with pytest.raises(SpecError):
        GenSpec(n=3, k=4, d=3, count=1)
    with pytest.raises(SpecError):
        GenSpec(n=3, k=0, d=3, count=1)
    with pytest.raises(SpecError):
        GenSpec(n=3, k=1, d=1, count=1)


def test_seed_determinism():
    a = generate(GenSpec(10, 3, 4, 20, seed=7))
    b = generate(GenSpec(10, 3, 4, 20, seed=7))
    c = generate(GenSpec(10, 3, 4, 20, seed=8))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    assert not np.array_equal(a.X, c.X)


def test_mask_positions_are_uniform():
    ds = generate(GenSpec(n=8, k=2, d=2, count=8000, seed=3))
    freq = ds.X[:, :, 0].mean(axis=0)
    # each position is selected with probability k/n = 0.25
    se = np.sqrt(0.25 * 0.75 / 8000)
    assert np.all(np.abs(freq - 0.25) < 4 * se)


def test_target_mean_is_half_k():
    ds = generate(GenSpec(n=20, k=10, d=4, count=10_000, seed=1))
    se = np.sqrt(10 / 12 / 10_000)
    assert np.all(np.abs(ds.Y.mean(axis=0) - 5.0) < 3 * se)


@pytest.mark.parametrize("k", [1, 10])
def test_half_k_baseline_matches_k_over_12(k):
    ds = generate(GenSpec(n=max(k, 12), k=k, d=10, count=10_000, seed=k))
    per_instance = np.mean((ds.Y - k / 2) ** 2, axis=1)
    se = per_instance.std(ddof=1) / np.sqrt(len(per_instance))
    assert abs(k_half_baseline_mse(ds) - k / 12) < 3 * se


def test_half_k_baseline_zero_when_targets_equal_half_k():
    spec = GenSpec(n=4, k=2, d=3, count=3)
    ds = MaskedSumDataset(spec, np.zeros((3, 4, 3)), np.ones((3, 2)))
    assert k_half_baseline_mse(ds) == 0.0


def test_evaluate_mse_averages_instances():
    spec = GenSpec(n=2, k=1, d=3, count=2)
    ds = MaskedSumDataset(spec, np.zeros((2, 2, 3)), np.array([[1.0, 1.0], [0.0, 2.0]]))

    class Const:
        def __call__(self, X):
            from starformer.tensor import Tensor
            return Tensor(np.zeros(X.shape[:-2] + (2,)))

    assert evaluate_mse(Const(), ds) == pytest.approx((1.0 + 2.0) / 2)
    with pytest.raises(SpecError):
        evaluate_mse(Const(), MaskedSumDataset(spec, np.zeros((0, 2, 3)), np.zeros((0, 2))))


def test_file_round_trip_is_exact(tmp_path):
    ds = generate(GenSpec(n=5, k=2, d=4, count=7, seed=9))
    p = tmp_path / "d.txt"
    save_dataset(ds, p)
    header = p.read_text().splitlines()[0]
    assert header == "5 2 4 7 9"
    back = load_dataset(p)
    assert back.spec == ds.spec
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.Y, ds.Y)


def test_load_rejects_malformed(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("2 1 2 1 0\n" + " ".join(["0x0p+0"] * 4) + "\n")
    with pytest.raises(SpecError, match="expected 5"):
        load_dataset(p)
    p.write_text("2 1 2 2 0\n" + " ".join(["0x0p+0"] * 5) + "\n")
    with pytest.raises(SpecError, match="declares 2"):
        load_dataset(p)
    p.write_text("2 1 2\n")
    with pytest.raises(SpecError, match="header"):
        load_dataset(p)
