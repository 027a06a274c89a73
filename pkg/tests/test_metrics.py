import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tsda.metrics import accuracy, average_precision, pcp_score, pr_curve


def test_accuracy_spot_cases():
    assert accuracy([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0
    assert accuracy([0, 1, 2, 1], [1, 1, 2, 0]) == 0.5
    assert accuracy([3], [2]) == 0.0
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ValueError):
        accuracy([1, 2], [1])


def test_perfect_ranker_has_unit_ap():
    assert average_precision(pr_curve([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])) == 1.0


def test_single_positive_ranked_last_of_four():
    assert average_precision(pr_curve([0.9, 0.8, 0.7, 0.1], [0, 0, 0, 1])) == 0.25


def test_ties_enter_at_one_threshold():
    c = pr_curve([0.5, 0.5, 0.2], [1, 0, 1])
    assert c.thresholds.tolist() == [0.5, 0.2]
    assert c.precision.tolist() == [0.5, 2 / 3]
    assert c.recall.tolist() == [0.5, 1.0]


def test_pr_curve_needs_a_positive():
    with pytest.raises(ValueError):
        pr_curve([0.1, 0.2], [0, 0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.booleans()), min_size=1, max_size=30, unique_by=lambda t: t[0]))
def test_ap_matches_rank_oracle_without_ties(pairs):
    scores = [p[0] for p in pairs]
    truths = [p[1] for p in pairs]
    if not any(truths):
        return
    assert average_precision(pr_curve(scores, truths)) == pytest.approx(oracles.average_precision(scores, truths), abs=1e-12)


def test_pr_csv_layout():
    text = pr_curve([0.9, 0.1], [1, 0]).to_csv()
    assert text.splitlines() == ["threshold,precision,recall", "0.9,1.0,1.0", "0.1,0.5,1.0"]


def test_pcp_closed_ball_boundary():
    truth = np.zeros((4, 1, 2))
    pred = np.array([[[2.0, 0.0]], [[0.0, -2.0]], [[2.0 + 1e-9, 0.0]], [[1.2, 1.6]]])
    per, mean = pcp_score(pred, truth, radius=2.0)
    assert per.tolist() == [0.75] and mean == 0.75


def test_pcp_matches_oracle():
    rng = np.random.default_rng(0)
    pred, truth = rng.normal(scale=2, size=(30, 5, 2)), rng.normal(scale=2, size=(30, 5, 2))
    per, mean = pcp_score(pred, truth, 2.0)
    assert per.tolist() == oracles.pcp(pred, truth, 2.0)
    assert mean == pytest.approx(np.mean(oracles.pcp(pred, truth, 2.0)))


def test_pcp_shape_checks():
    with pytest.raises(ValueError):
        pcp_score(np.zeros((2, 3, 2)), np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        pcp_score(np.zeros((2, 3, 2)), np.zeros((2, 3, 2)), radius=0)
