"""Deformable map matching for uncertain loop-less 2D maps."""

__version__ = "0.1.0"

from .geometry import Pose2, between, compose, integrate_odometry, inverse, transform_poses, wrap_angle
from .retrieval import (CodeModel, Correspondence, HashIndex, PcaModel, RetrievalResult, Retriever,
                        build_index, encode_binary, fit_pca, hamming_ball, project, query_index, retrieve)
from .posegraph import Edge, GraphError, OptimizeConfig, OptimizeResult, PoseGraph, default_information, optimize
from .maps import MapSequence
from .evaluation import (NO_MATCH, QualityCounts, QualityScore, classify, ground_truth_assignment,
                         nearest_assignment, prf, top_x)
from .matcher import (ALGORITHMS, Hypothesis, MatchConfig, MatchContext, MatchResult, deform,
                      initial_hypotheses, match, merge_maps, run_multiple, run_naive, run_single,
                      select_next_constraint)
from .datagen import (DatasetConfig, DatasetError, GenConfig, Task, generate_trajectory, is_loopless,
                      make_dataset, select_task_pairs, simulate_odometry, view_overlap)

__all__ = [name for name in dir() if not name.startswith("_")]
