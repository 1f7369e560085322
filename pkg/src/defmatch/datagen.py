"""Synthetic loop-less map pairs.

An environment is one long ground-truth route plus a shared appearance model.
Several sessions drive the route with their own lane offset, sampling phase
and appearance noise, standing in for the same campus visited in different
seasons. Task pairs are windows cut from two different sessions; each window
becomes a map by simulating noisy odometry over its ground truth and dead
reckoning from its first pose.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .geometry import Pose2, between_arrays, integrate_odometry, wrap_angle
from .maps import MapSequence
from .retrieval import Correspondence, Retriever

logger = logging.getLogger(__name__)


class DatasetError(RuntimeError):
    """The requested dataset cannot be produced."""


@dataclass
class GenConfig:
    length_m: float = 400.0
    spacing_m: float = 1.0
    noise_frac: float = 0.01
    seed: int = 0
    descriptor_dim: int = 64
    place_scale: float = 10.0
    heading_weight: float = 0.8
    session_noise: float = 0.35  # expected L2 norm of one pose's appearance noise
    season_weight: float = 0.25  # norm of the per-session appearance change field
    alias_weight: float = 0.0  # share of appearance that repeats with alias_period_m
    alias_period_m: float = 100.0

    def __post_init__(self):
        if not self.spacing_m > 0:
            raise ValueError("spacing_m must be positive")
        if not 0 <= self.noise_frac < 1:
            raise ValueError("noise_frac must lie in [0, 1)")
        if self.length_m < 2 * self.spacing_m:
            raise ValueError("length_m must be at least twice spacing_m")


@dataclass
class DatasetConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    route_length_m: float = 1500.0
    n_sessions: int = 4
    n_tasks: int = 10
    n_candidates: int = 40
    lateral_offset_m: float = 1.5
    reverse_prob: float = 0.1
    precise_reference: bool = False
    loop_thresh_m: float = 100.0
    min_overlap_m: float = 0.0
    # retrieval settings for overlap and self-correspondence checks
    Nr: int = 10
    Nb: int = 1
    bucket_cap: int = 100
    pca_dim: int = 128

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        gen = GenConfig(**d.pop("gen", {}))
        return cls(gen=gen, **d)

    def to_dict(self) -> dict:
        return asdict(self)


# -- trajectories -----------------------------------------------------------


def _curvature_profile(n_steps: int, spacing: float, rng: np.random.Generator,
                       max_dev: float = 1.2) -> np.ndarray:
    """Per-step heading increments: straight runs and bounded-curvature arcs.

    The accumulated heading stays within ``max_dev`` of the start heading, so
    the path always advances along one direction and never revisits itself.
    """
    dth = np.zeros(n_steps)
    dev = 0.0
    k = 0
    straight = True
    while k < n_steps:
        if straight:
            seg = int(rng.uniform(20.0, 80.0) / spacing)
            k += max(seg, 1)
        else:
            kappa = rng.uniform(1 / 80.0, 1 / 25.0)
            turn = rng.uniform(0.3, 1.4)
            # turn back toward the mean direction when far from it
            sign = -np.sign(dev) if abs(dev) > 0.4 else rng.choice([-1.0, 1.0])
            steps = max(int(turn / (kappa * spacing)), 1)
            for _ in range(steps):
                if k >= n_steps:
                    break
                step = sign * kappa * spacing
                if abs(dev + step) > max_dev:
                    break
                dth[k] = step
                dev += step
                k += 1
        straight = not straight
    return dth


def _trace(start: Pose2, dth: np.ndarray, spacing: float) -> np.ndarray:
    """Poses along an arc-spline: each step turns by dth[k] over arc length ``spacing``."""
    chord = np.where(np.abs(dth) > 1e-12, 2.0 * np.sin(dth / 2.0) / np.where(dth == 0, 1, dth), 1.0) * spacing
    steps = np.column_stack([chord * np.cos(dth / 2.0), chord * np.sin(dth / 2.0), dth])
    return integrate_odometry(start, steps)


def generate_trajectory(cfg: GenConfig, rng: np.random.Generator, start: Pose2 | None = None) -> np.ndarray:
    """Ground-truth poses, ``length_m / spacing_m + 1`` of them, one every ``spacing_m``."""
    n_steps = int(round(cfg.length_m / cfg.spacing_m))
    if start is None:
        start = Pose2(0.0, 0.0, rng.uniform(-math.pi, math.pi))
    return _trace(start, _curvature_profile(n_steps, cfg.spacing_m, rng), cfg.spacing_m)


def simulate_odometry(gt_poses, noise_frac: float, rng: np.random.Generator):
    """Noisy relative steps and the dead-reckoned poses they integrate to.

    Per step: sigma = noise_frac * length on each translation axis and
    noise_frac * |dtheta| + 0.1 * noise_frac * length on heading.
    """
    gt = np.asarray(gt_poses, dtype=float).reshape(-1, 3)
    if len(gt) < 2:
        raise ValueError("need at least two poses to simulate odometry")
    true = between_arrays(gt[:-1], gt[1:])
    length = np.linalg.norm(true[:, :2], axis=1)
    sig_t = noise_frac * length
    sig_th = noise_frac * np.abs(true[:, 2]) + 0.1 * noise_frac * length
    noise = rng.standard_normal((len(true), 3)) * np.column_stack([sig_t, sig_t, sig_th])
    meas = true + noise
    meas[:, 2] = wrap_angle(meas[:, 2])
    return meas, integrate_odometry(Pose2.from_array(gt[0]), meas)


# -- appearance -------------------------------------------------------------


class PlaceField:
    """Random Fourier features of planar position; unit expected norm.

    With ``period`` set, frequencies snap to multiples of 2*pi/period so the
    field repeats on a square lattice (look-alike places).
    """

    def __init__(self, dim: int, scale: float, rng: np.random.Generator, period: float | None = None):
        W = rng.standard_normal((dim, 2)) / scale
        if period is not None:
            step = 2.0 * np.pi / period
            W = np.round(W / step) * step
        self.W = W
        self.b = rng.uniform(0.0, 2.0 * np.pi, dim)
        self.dim = dim

    def __call__(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return math.sqrt(2.0 / self.dim) * np.cos(xy @ self.W.T + self.b)


@dataclass
class SessionParams:
    session_id: str
    noise_seed: int
    season_field: PlaceField | None = None


class Appearance:
    """Descriptor model shared by every session of one environment."""

    def __init__(self, cfg: GenConfig, rng: np.random.Generator):
        D = cfg.descriptor_dim
        self.cfg = cfg
        self.place = PlaceField(D, cfg.place_scale, rng)
        q, _ = np.linalg.qr(rng.standard_normal((D, 2)))
        self.u, self.v = q[:, 0], q[:, 1]
        self.alias = PlaceField(D, cfg.place_scale, rng, cfg.alias_period_m) if cfg.alias_weight > 0 else None

    def place_field(self, xy) -> np.ndarray:
        if self.alias is None:
            return self.place(xy)
        a = self.cfg.alias_weight
        return math.sqrt(1.0 - a * a) * self.place(xy) + a * self.alias(xy)

    def direction_field(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1, 1)
        return self.cfg.heading_weight * (np.cos(theta) * self.u + np.sin(theta) * self.v)

    def session(self, session_id: str, seed: int) -> SessionParams:
        rng = np.random.default_rng([seed, 1])
        season = PlaceField(self.cfg.descriptor_dim, self.cfg.place_scale, rng) if self.cfg.season_weight > 0 else None
        return SessionParams(session_id, seed, season)


def synthesize_descriptors(gt_poses, appearance: Appearance, session: SessionParams,
                           pose_ids=None) -> np.ndarray:
    """place_field(x, y) + direction_field(theta) + seasonal change + per-pose noise.

    Noise is drawn from a generator keyed on (session seed, pose id), so a
    given pose of a given session always gets the same descriptor.
    """
    gt = np.asarray(gt_poses, dtype=float).reshape(-1, 3)
    cfg = appearance.cfg
    D = cfg.descriptor_dim
    desc = appearance.place_field(gt[:, :2]) + appearance.direction_field(gt[:, 2])
    if session.season_field is not None:
        desc += cfg.season_weight * session.season_field(gt[:, :2])
    if cfg.session_noise > 0:
        ids = range(len(gt)) if pose_ids is None else pose_ids
        sigma = cfg.session_noise / math.sqrt(D)
        noise = np.array([np.random.default_rng([session.noise_seed, 2, int(k)]).standard_normal(D) for k in ids])
        desc += sigma * noise.reshape(len(gt), D)
    return desc


# -- environment and sessions ------------------------------------------------


class Environment:
    """Route + appearance model + per-session traversals, all from one seed."""

    def __init__(self, cfg: DatasetConfig, seed: int | None = None):
        self.cfg = cfg
        self.seed = cfg.gen.seed if seed is None else seed
        rng = np.random.default_rng([self.seed, 0])
        fine = 0.25
        route_cfg = replace(cfg.gen, length_m=cfg.route_length_m + 20.0, spacing_m=fine)
        self.route = generate_trajectory(route_cfg, rng)
        self.route_s = np.arange(len(self.route)) * fine
        self.route_th = np.unwrap(self.route[:, 2])
        self.appearance = Appearance(cfg.gen, rng)
        self._sessions: dict[int, tuple] = {}

    def _route_at(self, s):
        x = np.interp(s, self.route_s, self.route[:, 0])
        y = np.interp(s, self.route_s, self.route[:, 1])
        th = np.interp(s, self.route_s, self.route_th)
        return x, y, th

    def session(self, k: int):
        """(ground-truth poses, descriptors, SessionParams) for session ``k``."""
        if k in self._sessions:
            return self._sessions[k]
        cfg = self.cfg
        sp = cfg.gen.spacing_m
        rng = np.random.default_rng([self.seed, 10 + k])
        phase = rng.uniform(0.0, sp)
        s = phase + np.arange(int(cfg.route_length_m / sp)) * sp
        # smooth lateral lane offset
        n_modes = 3
        amp = rng.uniform(0.2, 1.0, n_modes)
        amp *= cfg.lateral_offset_m / amp.sum()
        wl = rng.uniform(40.0, 200.0, n_modes)
        ph = rng.uniform(0.0, 2 * np.pi, n_modes)
        off = (amp[:, None] * np.sin(2 * np.pi * s[None, :] / wl[:, None] + ph[:, None])).sum(0)
        doff = (amp[:, None] * (2 * np.pi / wl[:, None]) * np.cos(2 * np.pi * s[None, :] / wl[:, None] + ph[:, None])).sum(0)
        x, y, th = self._route_at(s)
        gt = np.column_stack([x - off * np.sin(th), y + off * np.cos(th), wrap_angle(th + np.arctan(doff))])
        params = self.appearance.session(f"s{k:02d}", int(rng.integers(2**31)))
        desc = synthesize_descriptors(gt, self.appearance, params)
        self._sessions[k] = (gt, desc, params)
        return self._sessions[k]

    def window(self, k: int, start: int, n: int, reverse: bool = False):
        gt, desc, params = self.session(k)
        sl = slice(start, start + n)
        g, d = gt[sl].copy(), desc[sl].copy()
        if reverse:
            g = g[::-1].copy()
            g[:, 2] = wrap_angle(g[:, 2] + np.pi)
            # driving the other way shows the opposite view
            d = synthesize_descriptors(g, self.appearance, params,
                                       pose_ids=[10**7 + start + n - 1 - i for i in range(n)])
        return g, d, params


def make_map(gt_poses, descriptors, noise_frac: float, rng: np.random.Generator,
             session_id: str = "", meta: dict | None = None) -> MapSequence:
    odom, dr = simulate_odometry(gt_poses, noise_frac, rng)
    return MapSequence(dr, odom, descriptors, np.asarray(gt_poses, dtype=float),
                       session_id=session_id, meta=meta or {})


# -- dataset protocol --------------------------------------------------------


def self_correspondences(m: MapSequence, Nr: int = 10, Nb: int = 1, bucket_cap: int = 100,
                         pca_dim: int = 128, seed: int = 0, max_l2: float | None = None) -> list[Correspondence]:
    """Pooled correspondences of a map queried against itself.

    Hash collisions can pair visually unrelated poses; ``max_l2`` drops
    correspondences whose descriptor distance exceeds it (None keeps all).
    """
    r = Retriever(m.descriptors, pca_dim, 20, bucket_cap, seed)
    pooled = r.match(m.descriptors, Nr, Nb).pooled
    if max_l2 is not None:
        pooled = [c for c in pooled if c.l2 <= max_l2]
    return pooled


def is_loopless(m: MapSequence, self_corr: list[Correspondence], loop_thresh_m: float = 100.0) -> bool:
    """False iff two poses more than ``loop_thresh_m`` apart in travel match each other."""
    t = m.travel
    return not any(abs(t[c.query_index] - t[c.ref_index]) > loop_thresh_m for c in self_corr)


def view_overlap(query_map: MapSequence, ref_map: MapSequence, correspondences) -> float:
    """Largest travel-distance spread among reference poses matched by some query pose."""
    refs = sorted({c.ref_index for c in correspondences})
    if len(refs) < 2:
        return 0.0
    t = ref_map.travel[refs]
    return float(t.max() - t.min())


@dataclass
class CandidatePair:
    query: MapSequence
    ref: MapSequence
    overlap: float = 0.0
    info: dict = field(default_factory=dict)


def select_task_pairs(candidate_pairs: list[CandidatePair], n: int, min_overlap: float = 0.0) -> list[CandidatePair]:
    """Top ``n`` candidates by view overlap; ties keep input order; zero overlap excluded."""
    keep = [(k, c) for k, c in enumerate(candidate_pairs) if c.overlap > min_overlap]
    keep.sort(key=lambda kc: (-kc[1].overlap, kc[0]))
    out = [c for _, c in keep[:n]]
    if len(out) < n:
        warnings.warn(f"only {len(out)} of {n} requested task pairs have positive view overlap",
                      RuntimeWarning, stacklevel=2)
    return out


@dataclass
class Task:
    task_id: str
    query: MapSequence
    ref: MapSequence
    overlap: float
    info: dict = field(default_factory=dict)


def make_dataset(cfg: DatasetConfig, seed: int | None = None) -> list[Task]:
    """Candidate windows from session pairs, filtered loop-less, top ``n_tasks`` by overlap."""
    seed = cfg.gen.seed if seed is None else seed
    env = Environment(cfg, seed)
    rng = np.random.default_rng([seed, 99])
    sp = cfg.gen.spacing_m
    n = int(round(cfg.gen.length_m / sp)) + 1
    n_route = int(cfg.route_length_m / sp)
    if n > n_route:
        raise DatasetError("map length exceeds the route length")
    retr = dict(Nr=cfg.Nr, Nb=cfg.Nb, bucket_cap=cfg.bucket_cap, pca_dim=cfg.pca_dim)
    ref_noise = 0.0 if cfg.precise_reference else cfg.gen.noise_frac

    candidates = []
    n_rejected = 0
    for c in range(cfg.n_candidates):
        a, b = rng.choice(cfg.n_sessions, 2, replace=False)
        r0 = int(rng.integers(0, n_route - n + 1))
        shift = int(rng.integers(-(n // 2), n // 2 + 1))
        q0 = int(np.clip(r0 + shift, 0, n_route - n))
        reverse = bool(rng.random() < cfg.reverse_prob)
        gq, dq, pq = env.window(int(a), q0, n, reverse)
        gr, dr, pr = env.window(int(b), r0, n)
        info = dict(query_session=pq.session_id, ref_session=pr.session_id, query_start=q0,
                    ref_start=r0, reversed=reverse, candidate=c, env_seed=seed)
        qm = make_map(gq, dq, cfg.gen.noise_frac, np.random.default_rng([seed, 1000 + c, 0]),
                      pq.session_id, dict(spacing_m=sp, noise_frac=cfg.gen.noise_frac, seed=seed))
        rm = make_map(gr, dr, ref_noise, np.random.default_rng([seed, 1000 + c, 1]),
                      pr.session_id, dict(spacing_m=sp, noise_frac=ref_noise, seed=seed))
        if not (is_loopless(qm, self_correspondences(qm, **retr), cfg.loop_thresh_m)
                and is_loopless(rm, self_correspondences(rm, **retr), cfg.loop_thresh_m)):
            n_rejected += 1
            continue
        corr = Retriever(rm.descriptors, cfg.pca_dim, 20, cfg.bucket_cap).match(qm.descriptors, cfg.Nr, cfg.Nb)
        candidates.append(CandidatePair(qm, rm, view_overlap(qm, rm, corr.pooled), info))
    if n_rejected:
        logger.info("rejected %d candidate pairs with large loops", n_rejected)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        chosen = select_task_pairs(candidates, cfg.n_tasks, cfg.min_overlap_m)
    if not chosen:
        raise DatasetError(
            f"no loop-less candidate pair with view overlap above {cfg.min_overlap_m} m "
            f"among {cfg.n_candidates} candidates"
        )
    if len(chosen) < cfg.n_tasks:
        warnings.warn(f"only {len(chosen)} of {cfg.n_tasks} task pairs could be built", RuntimeWarning)
    tasks = []
    for k, c in enumerate(chosen):
        tid = f"e{seed}-t{k:02d}"
        c.query.meta.update(task_id=tid, role="query")
        c.ref.meta.update(task_id=tid, role="reference")
        tasks.append(Task(tid, c.query, c.ref, c.overlap, c.info))
    return tasks
