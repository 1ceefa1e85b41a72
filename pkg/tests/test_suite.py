import numpy as np
import pytest

from starformer.suite import CASES, GRAD_TOL, ReachabilityReport, check_case, gradcheck_suite, reachability, ring_distance


def test_ring_distance():
    assert ring_distance(0, 11, 12) == 1
    assert ring_distance(2, 8, 12) == 6
    assert ring_distance(5, 5, 12) == 0


def test_report_helpers():
    sup = np.array([[1.0, 1e-3, 0.0], [0.0, 2.0, 1e-13], [5e-12, 0.0, 1.0]])
    rep = ReachabilityReport("x", 3, 1, sup)
    assert rep.reached().sum() == 5
    assert rep.max_distance == 1
    assert rep.fraction_within(0) == 1.0
    assert rep.fraction_within(1) == pytest.approx(5 / 9)
    assert rep.max_beyond(0) == 1e-3
    assert rep.max_beyond(1) == 0.0


def test_ring_only_growth_and_relay_shortcut():
    assert reachability("star_no_radical", 3, 8, seed=1).max_distance == 3
    # the initial relay is the mean embedding, so one step already sees everything
    assert reachability("star_no_ring", 1, 8, seed=1).reached().all()


def test_baseline_reaches_everything_in_one_layer():
    assert reachability("baseline", 1, 8, seed=2).reached().all()


def test_every_case_runs_for_one_seed():
    results = gradcheck_suite([0])
    assert [r.name for r in results] == list(CASES)
    assert all(r.max_rel_error <= GRAD_TOL for r in results)


def test_check_case_detects_a_wrong_adjoint(monkeypatch):
    from starformer import tensor as T

    real = T.relu

    def bad_relu(x):
        out = real(x)
        fn = out._backward
        out._backward = lambda g: tuple(1.5 * v for v in fn(g))
        return out

    monkeypatch.setattr(T, "relu", bad_relu)
    assert check_case(CASES["relu"], 0) > 0.1
