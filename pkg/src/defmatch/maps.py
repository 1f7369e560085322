"""Map sequences: dead-reckoned poses, odometry, descriptors and optional ground truth."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import Pose2, between_arrays, integrate_odometry


@dataclass
class MapSequence:
    poses: np.ndarray  # (N, 3) dead-reckoned
    odometry: np.ndarray  # (N-1, 3) measured steps, odometry[k] takes pose k to k+1
    descriptors: np.ndarray | None = None  # (N, D)
    gt_poses: np.ndarray | None = None  # (N, 3)
    travel: np.ndarray | None = None  # (N,) cumulative travel distance
    session_id: str = ""
    meta: dict | None = None

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        n = len(self.poses)
        self.odometry = np.asarray(self.odometry, dtype=float).reshape(-1, 3)
        if len(self.odometry) != max(n - 1, 0):
            raise ValueError(f"expected {n - 1} odometry steps for {n} poses, got {len(self.odometry)}")
        if self.descriptors is not None:
            self.descriptors = np.asarray(self.descriptors, dtype=float)
            if len(self.descriptors) != n:
                raise ValueError("descriptor count does not match pose count")
        if self.gt_poses is not None:
            self.gt_poses = np.asarray(self.gt_poses, dtype=float).reshape(-1, 3)
            if len(self.gt_poses) != n:
                raise ValueError("ground-truth pose count does not match pose count")
        if self.travel is None:
            steps = np.linalg.norm(self.odometry[:, :2], axis=1)
            self.travel = np.concatenate([[0.0], np.cumsum(steps)])
        self.travel = np.asarray(self.travel, dtype=float)
        if self.meta is None:
            self.meta = {}

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def has_ground_truth(self) -> bool:
        return self.gt_poses is not None

    @classmethod
    def from_odometry(cls, start, odometry, **kw) -> "MapSequence":
        start = start if isinstance(start, Pose2) else Pose2.from_array(start)
        return cls(integrate_odometry(start, odometry), odometry, **kw)

    @classmethod
    def from_poses(cls, poses, **kw) -> "MapSequence":
        """Build a map whose odometry is read off consecutive poses (noise-free)."""
        poses = np.asarray(poses, dtype=float).reshape(-1, 3)
        return cls(poses, between_arrays(poses[:-1], poses[1:]), **kw)

    def without_ground_truth(self) -> "MapSequence":
        return replace(self, gt_poses=None)
