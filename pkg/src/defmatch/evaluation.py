"""Map-matching quality: TP/FP/FN per query pose, precision/recall/f-measure, top-X means.

Assignments are integer arrays of length Q holding a reference index for each
query pose, or ``NO_MATCH`` (-1) when the pose has no counterpart.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

NO_MATCH = -1


class QualityCounts(NamedTuple):
    n_tp: int
    n_fp: int
    n_fn: int


class QualityScore(NamedTuple):
    precision: float
    recall: float
    f_measure: float


def nearest_assignment(query_xy, ref_xy, thresh: float = 10.0) -> np.ndarray:
    """Nearest reference index for each query position if closer than ``thresh``.

    Ties resolve to the lowest reference index. Used both for hypothesis
    assignments and for ground truth.
    """
    q = np.asarray(query_xy, dtype=float)[:, :2]
    r = np.asarray(ref_xy, dtype=float)[:, :2]
    if len(q) == 0 or len(r) == 0:
        return np.full(len(q), NO_MATCH, dtype=int)
    out = np.empty(len(q), dtype=int)
    # chunk to bound memory on long maps
    for s in range(0, len(q), 512):
        d2 = ((q[s:s + 512, None, :] - r[None, :, :]) ** 2).sum(-1)
        idx = np.argmin(d2, axis=1)  # first minimum = lowest index
        best = d2[np.arange(len(idx)), idx]
        out[s:s + 512] = np.where(best < thresh * thresh, idx, NO_MATCH)
    return out


def ground_truth_assignment(gt_query_poses, gt_ref_poses, thresh: float = 10.0) -> np.ndarray:
    return nearest_assignment(gt_query_poses, gt_ref_poses, thresh)


def _pair_dist(a, b, assign):
    a = np.asarray(a, dtype=float)[:, :2]
    b = np.asarray(b, dtype=float)[:, :2]
    out = np.full(len(assign), np.inf)
    m = assign != NO_MATCH
    out[m] = np.linalg.norm(a[m] - b[assign[m]], axis=1)
    return out


def classify(hyp_assignment, hyp_poses, gt_assignment, gt_poses, thresh: float = 10.0) -> QualityCounts:
    """Count TP/FP/FN over query poses.

    ``hyp_poses`` and ``gt_poses`` are ``(query_poses, ref_poses)`` pairs;
    ``hyp_poses`` may be None to take the assignment at face value.
    A hypothesis correspondence is a TP when its pose pair is within
    ``thresh`` under both the hypothesis and the ground truth, and an FP when
    only the hypothesis supports it. A query pose whose ground truth has a
    counterpart but whose hypothesis correspondence is missing or an FP
    counts as an FN; so a wrong reference index costs one FP and one FN.
    """
    ha = np.asarray(hyp_assignment, dtype=int)
    ga = np.asarray(gt_assignment, dtype=int)
    if ha.shape != ga.shape:
        raise ValueError(f"assignment lengths differ: {ha.shape} vs {ga.shape}")
    gq, gr = gt_poses
    if len(gq) != len(ga):
        raise ValueError("ground-truth query poses do not match assignment length")
    asserted = ha != NO_MATCH
    if hyp_poses is not None:
        hq, hr = hyp_poses
        if len(hq) != len(ha):
            raise ValueError("hypothesis query poses do not match assignment length")
        asserted &= _pair_dist(hq, hr, ha) < thresh
    gt_ok = asserted & (_pair_dist(gq, gr, np.where(asserted, ha, NO_MATCH)) < thresh)
    tp = int(np.sum(gt_ok))
    fp = int(np.sum(asserted & ~gt_ok))
    fn = int(np.sum((ga != NO_MATCH) & ~gt_ok))
    return QualityCounts(tp, fp, fn)


def prf(c: QualityCounts) -> QualityScore:
    n_tp, n_fp, n_fn = c
    p = n_tp / (n_tp + n_fp) if n_tp + n_fp else 0.0
    r = n_tp / (n_tp + n_fn) if n_tp + n_fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return QualityScore(p, r, f)


def top_x(ranked_scores: Sequence[QualityScore], X: int) -> QualityScore:
    """Mean precision, recall and f-measure over the first ``X`` ranked entries."""
    if X < 1:
        raise ValueError("X must be at least 1")
    if len(ranked_scores) == 0:
        raise ValueError("cannot average an empty hypothesis list")
    top = np.asarray(ranked_scores[:X], dtype=float).reshape(-1, 3)
    p, r, f = top.mean(axis=0)
    return QualityScore(float(p), float(r), float(f))


def evaluate_assignment(hyp_assignment, hyp_query, hyp_ref, gt_query, gt_ref,
                        thresh: float = 10.0) -> QualityScore:
    """Convenience: ground-truth assignment, classification and prf in one call."""
    ga = ground_truth_assignment(gt_query, gt_ref, thresh)
    counts = classify(hyp_assignment, (hyp_query, hyp_ref), ga, (gt_query, gt_ref), thresh)
    return prf(counts)
