"""
Scoring hypotheses against ground truth
=======================================

A query pose is a true positive when the hypothesis assigns it a reference
pose that is really within 10 m. Unmatched poses that have a true
counterpart are false negatives.
"""

import numpy as np

from defmatch.evaluation import NO_MATCH, classify, ground_truth_assignment, prf, top_x

gq = np.array([[100.0 * i, 0.0, 0.0] for i in range(6)])
gr = np.array([[100.0 * j, 1.0, 0.0] for j in range(6)])
gr[5] = [500.0, 50.0, 0.0]  # the last reference pose is out of reach

ga = ground_truth_assignment(gq, gr)
print("ground truth:", ga.tolist())

hyp = np.array([0, 1, 3, NO_MATCH, NO_MATCH, NO_MATCH])
c = classify(hyp, None, ga, (gq, gr))
print("tp, fp, fn:", tuple(c), "->", tuple(round(v, 3) for v in prf(c)))

ranked = [prf(c), prf(classify(ga, None, ga, (gq, gr)))]
for X in (1, 2, 5):
    print(f"top-{X} mean f:", round(top_x(ranked, X).f_measure, 3))
