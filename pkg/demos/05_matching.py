"""
Deformable map matching
=======================

naive ranks rigid alignments by descriptor distance. single adds one
deformation step per hypothesis. multiple keeps the best K' hypotheses and
keeps adding inconsistent constraints for M rounds, re-optimizing the merged
query/reference graph each time.
"""

import warnings

from defmatch.datagen import DatasetConfig, make_dataset
from defmatch.evaluation import top_x
from defmatch.matcher import ALGORITHMS, MatchConfig, match

with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    task = make_dataset(DatasetConfig(n_tasks=1), seed=2)[0]

for alg in ALGORITHMS:
    res = match(task.query, task.ref, alg, MatchConfig())
    best = res.hypotheses[0]
    s = top_x(res.qualities(), 10)
    print(f"{alg:8s} {len(res.hypotheses):3d} hypotheses; best has {len(best.constraints)} constraints, "
          f"score {best.score}; top-10 f {s.f_measure:.3f}")
