import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from defmatch.evaluation import (NO_MATCH, QualityCounts, QualityScore, classify, evaluate_assignment,
                                 ground_truth_assignment, nearest_assignment, prf, top_x)


def six_pose_fixture():
    """Query poses 100 m apart, each with a reference 1 m away except the last.

    Hypothesis: q0->r0, q1->r1 (TP); q2->r3 (FP, and FN for the missed r2);
    q3, q4 unmatched (FN); q5 unmatched and without a true counterpart.
    """
    gq = np.array([[100.0 * i, 0.0, 0.0] for i in range(6)])
    gr = np.array([[100.0 * j, 1.0, 0.0] for j in range(6)])
    gr[5] = [500.0, 50.0, 0.0]
    hq = gq.copy()
    hq[2] = [300.0, 0.0, 0.0]  # the hypothesis believes q2 sits next to r3
    hyp = np.array([0, 1, 3, NO_MATCH, NO_MATCH, NO_MATCH])
    return hyp, (hq, gr), (gq, gr)


def oracle_assignment(q, r, thresh):
    out = []
    for a in q:
        best, best_d = NO_MATCH, math.inf
        for j, b in enumerate(r):
            d = math.hypot(a[0] - b[0], a[1] - b[1])
            if d < best_d:
                best, best_d = j, d
        out.append(best if best_d < thresh else NO_MATCH)
    return out


def test_six_pose_fixture_counts():
    hyp, hp, gp = six_pose_fixture()
    ga = ground_truth_assignment(*gp, 10.0)
    assert ga.tolist() == [0, 1, 2, 3, 4, NO_MATCH]
    assert classify(hyp, hp, ga, gp, 10.0) == QualityCounts(2, 1, 3)
    # face-value assignment gives the same counts here
    assert classify(hyp, None, ga, gp, 10.0) == QualityCounts(2, 1, 3)


def test_hypothesis_equal_to_ground_truth():
    _, _, (gq, gr) = six_pose_fixture()
    ga = ground_truth_assignment(gq, gr)
    c = classify(ga, (gq, gr), ga, (gq, gr))
    assert c == QualityCounts(5, 0, 0)
    assert prf(c).f_measure == 1.0


def test_matches_where_ground_truth_has_none_are_false_positives():
    gq = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    gr = np.array([[500.0, 0.0, 0.0], [501.0, 0.0, 0.0]])
    ga = ground_truth_assignment(gq, gr)
    assert ga.tolist() == [NO_MATCH, NO_MATCH]
    hq = gr.copy()  # hypothesis drags the query onto the reference
    assert classify(np.array([0, 1]), (hq, gr), ga, (gq, gr)) == QualityCounts(0, 2, 0)


def test_assertions_outside_threshold_under_hypothesis_are_ignored():
    gq = np.zeros((1, 3))
    gr = np.zeros((1, 3))
    hq = np.array([[50.0, 0.0, 0.0]])
    ga = ground_truth_assignment(gq, gr)
    assert classify(np.array([0]), (hq, gr), ga, (gq, gr)) == QualityCounts(0, 0, 1)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        classify(np.zeros(3, int), None, np.zeros(4, int), (np.zeros((4, 3)), np.zeros((4, 3))))


def test_ground_truth_assignment_examples():
    p = np.random.default_rng(0).uniform(0, 500, (30, 3))
    assert ground_truth_assignment(p, p).tolist() == list(range(30))
    far = p + [5000.0, 0.0, 0.0]
    assert ground_truth_assignment(p, far).tolist() == [NO_MATCH] * 30


def test_ground_truth_assignment_random_oracle():
    rng = np.random.default_rng(1)
    q = rng.uniform(0, 100, (300, 3))
    r = rng.uniform(0, 100, (200, 3))
    assert nearest_assignment(q, r, 10.0).tolist() == oracle_assignment(q, r, 10.0)
    assert nearest_assignment(q, r, 3.0).tolist() == oracle_assignment(q, r, 3.0)


def test_nearest_tie_goes_to_lowest_index():
    q = np.zeros((1, 3))
    r = np.array([[1.0, 0, 0], [0.0, 1.0, 0], [-1.0, 0, 0]])
    assert nearest_assignment(q, r).tolist() == [0]


def test_prf_examples():
    assert prf(QualityCounts(10, 0, 0)) == QualityScore(1.0, 1.0, 1.0)
    assert prf(QualityCounts(0, 5, 5)) == QualityScore(0.0, 0.0, 0.0)
    s = prf(QualityCounts(3, 1, 2))
    assert s.precision == 0.75 and s.recall == 0.6
    assert s.f_measure == pytest.approx(2 * 0.45 / 1.35)
    assert prf(QualityCounts(0, 0, 0)) == QualityScore(0.0, 0.0, 0.0)


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_prf_bounds(tp, fp, fn):
    p, r, f = prf(QualityCounts(tp, fp, fn))
    assert 0 <= p <= 1 and 0 <= r <= 1 and 0 <= f <= 1
    if p + r > 0:
        lo, hi = min(p, r), max(p, r)
        assert f == pytest.approx(2 * lo / (1 + lo / hi))
        assert lo - 1e-12 <= f <= hi + 1e-12


@given(st.lists(st.integers(-1, 7), min_size=8, max_size=8), st.integers(0, 10_000))
def test_count_bounds(hyp, seed):
    rng = np.random.default_rng(seed)
    gq = rng.uniform(0, 40, (8, 3))
    gr = rng.uniform(0, 40, (8, 3))
    ga = ground_truth_assignment(gq, gr)
    c = classify(np.array(hyp), None, ga, (gq, gr))
    assert min(c) >= 0
    assert c.n_tp + c.n_fp <= 8 and c.n_tp + c.n_fn <= 8


def test_top_x_examples():
    s = [QualityScore(1.0, 1.0, 1.0), QualityScore(0.0, 0.0, 0.0)]
    assert top_x(s, 1) == QualityScore(1.0, 1.0, 1.0)
    assert top_x(s, 2) == QualityScore(0.5, 0.5, 0.5)
    assert top_x(s, 10) == QualityScore(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        top_x(s, 0)
    with pytest.raises(ValueError):
        top_x([], 3)


def test_evaluate_assignment_perfect():
    _, _, (gq, gr) = six_pose_fixture()
    ga = ground_truth_assignment(gq, gr)
    assert evaluate_assignment(ga, gq, gr, gq, gr) == QualityScore(1.0, 1.0, 1.0)
