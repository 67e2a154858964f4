import json

import numpy as np
import pytest

from todalab.experiments import (
    HypothesisViolation,
    curvature_experiment,
    folding_consistency_experiment,
    limit_experiment,
    log_mean,
    monotonicity_experiment,
    ordering_experiment,
    ordering_matrix,
)
from todalab.folding import extended_affine, fold, sigma0
from todalab.grid import TorusGrid
from todalab.rootsys import build_root_system

G32 = TorusGrid(N=32)
P = [[8, 8, 1]]
P2 = [[8, 8, 2]]


def folded(t, n):
    return fold(extended_affine(build_root_system(t, n)), sigma0(t, n))


def test_log_mean():
    a = np.array([1.0, 2.0, 3.0])
    b = np.array([np.e, 2.0, 3.0 + 1e-12])
    assert np.allclose(log_mean(a, b), [(np.e - 1), 2.0, 3.0])


def test_ordering_matrix_column_sums():
    A = np.array(folded("A", 5).A, float)
    C = ordering_matrix(A, np.ones(4))
    assert (np.diag(C) >= 0).all() and (C - np.diag(np.diag(C)) <= 0).all()
    assert (C.sum(axis=0) >= -1e-12).all()


def test_monotonicity_small():
    v = monotonicity_experiment(build_root_system("C", 2), [P, [], []], [0.5, 1.0, 2.0], grid=G32)
    assert v.passed and v.margin > 0
    for step in v.details["steps"]:
        assert step["dai_li"] == "all_positive" and step["subset_graph"]["holds"]
        pi = step["product_identity"]
        assert pi["spread"] <= 1e-8 and np.isclose(pi["log_ratio_sum"], pi["expected_2r_log"])
    json.dumps(v.to_json())


def test_monotonicity_equal_rungs():
    v = monotonicity_experiment(build_root_system("G", 2), [P, [], []], [1.0, 1.0], grid=G32)
    assert v.details["steps"][0]["equality_case"] and v.details["steps"][0]["ok"]


def test_ordering_small():
    v = ordering_experiment(folded("A", 5), [P2, P, [], []], grid=G32)
    assert v.passed and v.margin > 0
    assert v.details["ratio_system_residual_off_divisor"] < 1e-8


def test_ordering_rejects_bad_chain():
    with pytest.raises(HypothesisViolation):
        ordering_experiment(folded("A", 5), [P, P, [], []], grid=G32)
    with pytest.raises(HypothesisViolation):
        ordering_experiment(extended_affine(build_root_system("D", 4)), [P] + [[]] * 4, grid=G32)


def test_curvature_prong_and_folded():
    v = curvature_experiment(build_root_system("B", 3), [P] + [[]] * 3, grid=G32)
    assert v.passed and v.details["prong"]
    v = curvature_experiment(folded("E", 6), [P] + [[]] * 4, grid=G32)
    assert v.passed and v.details["Q_positive"]


def test_curvature_short_roots_report_both_forms():
    v = curvature_experiment(build_root_system("C", 2), [P, [], []], grid=G32)
    assert v.details["energy_over_marks_ok"] and v.details["Q_positive"]
    assert v.details["rescaled_over_marks"]


def test_curvature_hypotheses():
    with pytest.raises(HypothesisViolation):
        curvature_experiment(build_root_system("G", 2), [[], P, []], grid=G32)
    with pytest.raises(HypothesisViolation):
        curvature_experiment(build_root_system("D", 4), [P, P, [], P, P], grid=G32)


def test_fold_consistency_small():
    v = folding_consistency_experiment("A", 4, [P] + [[]] * 4, grid=G32)
    assert v.passed and v.details["deviation_u"] <= 1e-8
    with pytest.raises(HypothesisViolation):
        folding_consistency_experiment("A", 4, [P, P, [], [], []], grid=G32)


def test_limit_small():
    v = limit_experiment(build_root_system("C", 2), [P, [], []], [1.0, 0.5, 0.25], grid=G32)
    assert v.passed and v.margin > 0
    d = v.details["distance_to_limit"]
    assert d[0] > d[1] > d[2]
    with pytest.raises(ValueError):
        limit_experiment(build_root_system("C", 2), [P, [], []], [0.5, 1.0], grid=G32)


@pytest.fixture(scope="module")
def c2_limit_ladder():
    return limit_experiment(build_root_system("C", 2), [[[16, 16, 1]], [], []], [1, 0.5, 0.25, 0.125, 0.0625],
                            grid=TorusGrid(N=64))


def test_limit_ladder_monotone(c2_limit_ladder):
    v = c2_limit_ladder
    assert v.passed and all(s["margin"] > 0 for s in v.details["steps"])


def test_limit_ladder_rate_matches_t_squared(c2_limit_ladder):
    # scaling the lowest root by eps^2 is t = eps^(1/r); distances shrink like t^2 = eps^(2/r)
    d = c2_limit_ladder.details
    assert d["observed_rate"] == pytest.approx(d["expected_rate"], rel=0.2)


def test_limit_ladder_cauchy_tail(c2_limit_ladder):
    # required tail; with distances shrinking like eps^(2/r) it is out of reach on this ladder
    assert c2_limit_ladder.details["cauchy_tail"] <= 1e-4
