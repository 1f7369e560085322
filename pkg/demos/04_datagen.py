"""
Synthetic loop-less map pairs
=============================

An environment is one long route driven in several sessions. Each session
sees the route with its own lane offset, seasonal appearance and odometry
noise. Windows of two sessions become query/reference tasks when both are
loop-less and their views overlap.
"""

import warnings

import numpy as np

from defmatch.datagen import DatasetConfig, is_loopless, make_dataset, self_correspondences

cfg = DatasetConfig(n_tasks=3)
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    tasks = make_dataset(cfg, seed=1)

for t in tasks:
    q, r = t.query, t.ref
    drift = np.linalg.norm(q.poses[-1, :2] - q.gt_poses[-1, :2])
    print(f"{t.task_id}: {q.session_id} vs {r.session_id}, {len(q)} poses, "
          f"overlap {t.overlap:.0f} m, query end drift {drift:.2f} m, "
          f"loop-less {is_loopless(q, self_correspondences(q))}")
