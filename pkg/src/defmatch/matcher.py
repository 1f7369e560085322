"""Deformable map matching.

A hypothesis starts from one retrieved image correspondence: the query map is
rigidly aligned so the two matched poses coincide, and the two pose chains are
joined into one graph by a loop edge. Further correspondences that the current
hypothesis places more than ``Tp`` apart are added one at a time as loop edges
and the merged graph is re-optimized, which bends both maps jointly.

Three algorithms are provided:

``naive``
    rigid alignments only, ranked by the seed's descriptor distance.
``single``
    every rigid alignment spawns one deformed child (two constraints).
``multiple``
    iterative preemption: each round the best ``K_prime`` hypotheses seen so
    far spawn one deformed child each, for ``M`` rounds.

Everything except ``naive`` ranks by score, the number of pooled image
correspondences whose pose pair lies within ``consist_thresh``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .evaluation import NO_MATCH, QualityScore, evaluate_assignment, nearest_assignment
from .geometry import Pose2, compose, inverse, transform_poses
from .maps import MapSequence
from .posegraph import (
    GraphError,
    OptimizeConfig,
    PoseGraph,
    default_information,
    optimize,
)
from .retrieval import Correspondence, RetrievalResult, Retriever

logger = logging.getLogger(__name__)

ALGORITHMS = ("naive", "single", "multiple")


@dataclass
class MatchConfig:
    K: int = 10
    K_prime: int = 10
    M: int = 10
    consist_thresh: float = 10.0
    Tp: float = 1.0
    Nr: int = 10
    Nb: int = 1
    bucket_cap: int = 100
    pca_dim: int = 128
    n_bits: int = 20
    code_seed: int = 0
    rerank_raw: bool = False
    loop_sigma_t: float = 0.1
    loop_sigma_theta: float = 0.05
    # additive noise on the identity relative-pose measurement of loop edges
    rel_noise_t: float = 0.0
    rel_noise_theta: float = 0.0
    rel_noise_seed: int = 0
    # odometry noise level used for edge information; None reads each map's
    # recorded noise_frac (0.01 when absent)
    odometry_noise_frac: float | None = None
    max_iterations: int = 50
    convergence_tol: float = 1e-9
    damping: float = 1e-4

    def __post_init__(self):
        for name in ("K", "K_prime", "consist_thresh", "Tp", "Nr", "bucket_cap", "pca_dim", "n_bits"):
            if not getattr(self, name) > 0:
                raise ValueError(f"MatchConfig.{name} must be positive")
        if self.M < 0 or self.Nb < 0:
            raise ValueError("MatchConfig.M and Nb must be non-negative")
        if not self.consist_thresh > self.Tp:
            raise ValueError("consist_thresh must exceed Tp")

    @property
    def optimize_config(self) -> OptimizeConfig:
        return OptimizeConfig(self.max_iterations, self.convergence_tol, self.damping)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Hypothesis:
    id: int
    seed: Correspondence
    constraints: list[Correspondence]
    transform: Pose2
    poses: np.ndarray  # (Q + R, 3): query block then reference block
    n_query: int
    score: int = 0
    assignment: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    parent: int | None = None
    chi2: float = 0.0
    # constraints already used to spawn children of this hypothesis
    tried: set = field(default_factory=set)
    quality: QualityScore | None = None
    rank: int | None = None

    @property
    def query_poses(self) -> np.ndarray:
        return self.poses[: self.n_query]

    @property
    def ref_poses(self) -> np.ndarray:
        return self.poses[self.n_query:]


def _pair(c: Correspondence) -> tuple[int, int]:
    return (c.query_index, c.ref_index)


def rigid_align(c: Correspondence, query_map: MapSequence, ref_map: MapSequence,
                rel: Pose2 | None = None) -> Pose2:
    """Transform T with T (+) query_pose = ref_pose (+) rel for the matched pair."""
    rel = rel or Pose2.identity()
    q = Pose2.from_array(query_map.poses[c.query_index])
    r = Pose2.from_array(ref_map.poses[c.ref_index])
    return compose(compose(r, rel), inverse(q))


def pose_correspondences(query_poses, ref_poses, consist_thresh: float = 10.0) -> np.ndarray:
    """Nearest reference index per query pose when within ``consist_thresh``, else -1."""
    return nearest_assignment(query_poses, ref_poses, consist_thresh)


class MatchContext:
    """Read-only state shared by every hypothesis of one query/reference pair."""

    def __init__(self, query_map: MapSequence, ref_map: MapSequence, cfg: MatchConfig,
                 retrieval: RetrievalResult | None = None):
        if query_map.descriptors is None or ref_map.descriptors is None:
            raise ValueError("both maps need descriptors for matching")
        self.query_map = query_map
        self.ref_map = ref_map
        self.cfg = cfg
        if retrieval is None:
            retriever = Retriever(ref_map.descriptors, cfg.pca_dim, cfg.n_bits, cfg.bucket_cap,
                                  cfg.code_seed, cfg.rerank_raw)
            retrieval = retriever.match(query_map.descriptors, cfg.Nr, cfg.Nb)
        self.retrieval = retrieval
        self.pooled = retrieval.pooled
        self.pool_q = np.array([c.query_index for c in self.pooled], dtype=int)
        self.pool_r = np.array([c.ref_index for c in self.pooled], dtype=int)
        self.pool_l2 = np.array([c.l2 for c in self.pooled], dtype=float)
        self._base_graph = self._odometry_graph()
        self._next_id = 0

    @property
    def Q(self) -> int:
        return len(self.query_map)

    @property
    def R(self) -> int:
        return len(self.ref_map)

    def new_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def _odometry_graph(self) -> list[tuple]:
        blocks = []
        for offset, m in ((0, self.query_map), (self.Q, self.ref_map)):
            n = len(m)
            if n < 2:
                continue
            steps = np.linalg.norm(m.odometry[:, :2], axis=1)
            nf = self.cfg.odometry_noise_frac
            if nf is None:
                nf = float(m.meta.get("noise_frac", 0.01))
            W = np.array([
                default_information("odometry", max(s, 1e-9), dth, noise_frac=nf)
                for s, dth in zip(steps, m.odometry[:, 2])
            ])
            I = offset + np.arange(n - 1)
            blocks.append((I, I + 1, m.odometry, W))
        return blocks

    def relative_pose(self, c: Correspondence) -> Pose2:
        cfg = self.cfg
        if cfg.rel_noise_t == 0 and cfg.rel_noise_theta == 0:
            return Pose2.identity()
        rng = np.random.default_rng([cfg.rel_noise_seed, c.query_index, c.ref_index])
        dx, dy = rng.normal(0.0, cfg.rel_noise_t, 2) if cfg.rel_noise_t > 0 else (0.0, 0.0)
        dth = rng.normal(0.0, cfg.rel_noise_theta) if cfg.rel_noise_theta > 0 else 0.0
        return Pose2(dx, dy, dth)

    def score(self, poses: np.ndarray) -> int:
        """Pooled correspondences whose pose pair lies within ``consist_thresh``."""
        if len(self.pool_q) == 0:
            return 0
        d = np.linalg.norm(poses[self.pool_q, :2] - poses[self.Q + self.pool_r, :2], axis=1)
        return int(np.count_nonzero(d < self.cfg.consist_thresh))

    def refresh(self, h: Hypothesis) -> Hypothesis:
        h.score = self.score(h.poses)
        h.assignment = pose_correspondences(h.query_poses, h.ref_poses, self.cfg.consist_thresh)
        return h


def merge_maps(ctx: MatchContext, constraints: list[Correspondence],
               initial_poses: np.ndarray | None = None) -> PoseGraph:
    """Join both pose chains into one graph with a loop edge per constraint.

    Nodes 0..Q-1 are the query map and Q..Q+R-1 the reference map; the first
    reference node is the anchor. Without ``initial_poses`` the query block
    starts at its rigid alignment to the first constraint.
    """
    if not constraints:
        raise ValueError("merging needs at least one constraint")
    qm, rm = ctx.query_map, ctx.ref_map
    if initial_poses is None:
        T = rigid_align(constraints[0], qm, rm, ctx.relative_pose(constraints[0]))
        initial_poses = np.vstack([transform_poses(T, qm.poses), rm.poses])
    g = PoseGraph(initial_poses, anchor=ctx.Q)
    for I, J, Z, W in ctx._base_graph:
        g.add_edges(I, J, Z, W, "odometry")
    W_loop = default_information("loop", loop_sigma_t=ctx.cfg.loop_sigma_t,
                                 loop_sigma_theta=ctx.cfg.loop_sigma_theta)
    I = np.array([ctx.Q + c.ref_index for c in constraints])
    J = np.array([c.query_index for c in constraints])
    Z = np.array([ctx.relative_pose(c).as_array() for c in constraints])
    g.add_edges(I, J, Z, W_loop, "loop")
    return g


def initial_hypotheses(ctx: MatchContext, K: int | None = None, optimize_seed: bool = False) -> list[Hypothesis]:
    """One rigidly aligned hypothesis for each of the top-``K`` correspondences."""
    K = ctx.cfg.K if K is None else K
    out = []
    for c in ctx.retrieval.top[:K]:
        T = rigid_align(c, ctx.query_map, ctx.ref_map, ctx.relative_pose(c))
        poses = np.vstack([transform_poses(T, ctx.query_map.poses), ctx.ref_map.poses])
        h = Hypothesis(ctx.new_id(), c, [c], T, poses, ctx.Q)
        if optimize_seed:
            res = optimize(merge_maps(ctx, h.constraints, poses), ctx.cfg.optimize_config)
            h.poses, h.chi2 = res.poses, res.chi2
        out.append(ctx.refresh(h))
    return out


def select_next_constraint(ctx: MatchContext, h: Hypothesis, Tp: float | None = None,
                           exclude=None) -> Correspondence | None:
    """Lowest-l2 pooled correspondence the hypothesis places more than ``Tp`` apart.

    Pairs already constrained in ``h`` (and any in ``exclude``) are skipped.
    Ties go to the lower (query, reference) index pair.
    """
    Tp = ctx.cfg.Tp if Tp is None else Tp
    if len(ctx.pool_q) == 0:
        return None
    used = {_pair(c) for c in h.constraints}
    if exclude:
        used |= set(exclude)
    d = np.linalg.norm(h.poses[ctx.pool_q, :2] - h.poses[ctx.Q + ctx.pool_r, :2], axis=1)
    cand = np.flatnonzero(d > Tp)
    if len(cand) == 0:
        return None
    order = cand[np.lexsort((ctx.pool_r[cand], ctx.pool_q[cand], ctx.pool_l2[cand]))]
    for k in order:
        c = ctx.pooled[k]
        if _pair(c) not in used:
            return c
    return None


def deform(ctx: MatchContext, h: Hypothesis, c: Correspondence) -> Hypothesis | None:
    """Child of ``h`` with ``c`` appended as a loop edge and the merged map re-optimized.

    Returns None (and logs why) if the optimizer rejects the graph.
    """
    constraints = h.constraints + [c]
    try:
        g = merge_maps(ctx, constraints, h.poses)
        res = optimize(g, ctx.cfg.optimize_config)
    except GraphError as exc:
        logger.warning("deformation of hypothesis %d with %s failed: %s", h.id, c, exc)
        return None
    child = Hypothesis(ctx.new_id(), h.seed, constraints, h.transform, res.poses, ctx.Q,
                       parent=h.id, chi2=res.chi2)
    return ctx.refresh(child)


def rank_key(h: Hypothesis):
    return (-h.score, len(h.constraints), h.id)


def _spawn(ctx: MatchContext, parent: Hypothesis) -> tuple[bool, Hypothesis | None]:
    """(whether a constraint was available, the child if deformation succeeded)."""
    c = select_next_constraint(ctx, parent, exclude=parent.tried)
    if c is None:
        return False, None
    parent.tried.add(_pair(c))
    return True, deform(ctx, parent, c)


def _finish(hyps: list[Hypothesis], key) -> list[Hypothesis]:
    ranked = sorted(hyps, key=key)
    for k, h in enumerate(ranked):
        h.rank = k + 1
    return ranked


def run_naive(ctx: MatchContext) -> list[Hypothesis]:
    hyps = initial_hypotheses(ctx)
    return _finish(hyps, key=lambda h: (h.seed.l2, h.id))


def run_single(ctx: MatchContext) -> list[Hypothesis]:
    hyps = initial_hypotheses(ctx)
    children = [ch for _, ch in (_spawn(ctx, h) for h in hyps) if ch is not None]
    return _finish(hyps + children, key=rank_key)


def run_multiple(ctx: MatchContext) -> list[Hypothesis]:
    cfg = ctx.cfg
    hyps = initial_hypotheses(ctx, optimize_seed=True)
    for it in range(cfg.M):
        survivors = sorted(hyps, key=rank_key)[: cfg.K_prime]
        spawned = [_spawn(ctx, h) for h in survivors]
        children = [ch for _, ch in spawned if ch is not None]
        logger.debug("iteration %d: %d survivors spawned %d children", it + 1, len(survivors), len(children))
        if not any(ok for ok, _ in spawned):
            break
        hyps.extend(children)
    return _finish(hyps, key=rank_key)


@dataclass
class MatchResult:
    algorithm: str
    hypotheses: list[Hypothesis]
    retrieval: RetrievalResult
    context: MatchContext

    def qualities(self) -> list[QualityScore]:
        return [h.quality for h in self.hypotheses]


_RUNNERS: dict[str, Callable[[MatchContext], list[Hypothesis]]] = {
    "naive": run_naive,
    "single": run_single,
    "multiple": run_multiple,
}


def match(query_map: MapSequence, ref_map: MapSequence, algorithm: str = "multiple",
          cfg: MatchConfig | None = None, retrieval: RetrievalResult | None = None) -> MatchResult:
    """Run one of the matching algorithms and rank its hypotheses.

    If both maps carry ground truth, each hypothesis also gets its
    precision/recall/f-measure in ``quality``.
    """
    if algorithm not in _RUNNERS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    cfg = cfg or MatchConfig()
    ctx = MatchContext(query_map, ref_map, cfg, retrieval)
    if not ctx.pooled:
        logger.warning("no image correspondences between %r and %r; nothing to match",
                       query_map.session_id, ref_map.session_id)
        return MatchResult(algorithm, [], ctx.retrieval, ctx)
    hyps = _RUNNERS[algorithm](ctx)
    if query_map.has_ground_truth and ref_map.has_ground_truth:
        for h in hyps:
            h.quality = evaluate_assignment(h.assignment, h.query_poses, h.ref_poses,
                                            query_map.gt_poses, ref_map.gt_poses, cfg.consist_thresh)
    return MatchResult(algorithm, hyps, ctx.retrieval, ctx)


def run_algorithm(query_map, ref_map, algorithm, cfg=None) -> list[Hypothesis]:
    return match(query_map, ref_map, algorithm, cfg).hypotheses
