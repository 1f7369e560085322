"""SE(2) pose algebra.

Poses are (x, y, theta) with theta kept in (-pi, pi]. The scalar API works on
:class:`Pose2` values; the ``*_arrays`` helpers do the same arithmetic on
``(N, 3)`` arrays and are what the optimizer and matcher use internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    if np.ndim(theta) == 0:
        theta = float(theta)
        if not math.isfinite(theta):
            raise ValueError(f"cannot wrap non-finite angle {theta!r}")
        wrapped = math.remainder(theta, 2.0 * math.pi)
        # remainder() returns values in [-pi, pi]; -pi maps to +pi
        return math.pi if wrapped <= -math.pi else wrapped
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("cannot wrap non-finite angles")
    wrapped = np.remainder(theta + np.pi, 2.0 * np.pi) - np.pi
    wrapped[wrapped <= -np.pi] = np.pi
    return wrapped


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> "Pose2":
        x, y, theta = np.asarray(a, dtype=float).reshape(3)
        return cls(x, y, theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous transform."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    def __iter__(self):
        return iter((self.x, self.y, self.theta))

    def __matmul__(self, other: "Pose2") -> "Pose2":
        return compose(self, other)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Return a (+) b: pose ``b`` expressed in the frame reached by motion ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose of ``b`` seen from ``a``, i.e. inverse(a) (+) b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


def compose_arrays(a, b) -> np.ndarray:
    """Row-wise compose of broadcastable ``(..., 3)`` pose arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 0] + c * b[..., 0] - s * b[..., 1]
    out[..., 1] = a[..., 1] + s * b[..., 0] + c * b[..., 1]
    out[..., 2] = wrap_angle(a[..., 2] + b[..., 2])
    return out


def between_arrays(a, b) -> np.ndarray:
    """Row-wise inverse(a) (+) b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    dx = b[..., 0] - a[..., 0]
    dy = b[..., 1] - a[..., 1]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    out[..., 2] = wrap_angle(b[..., 2] - a[..., 2])
    return out


def transform_poses(t: Pose2, poses) -> np.ndarray:
    """Apply the rigid transform ``t`` to every row of an ``(N, 3)`` array."""
    return compose_arrays(np.asarray(t.as_array())[None, :], np.asarray(poses, dtype=float))


def integrate_odometry(start: Pose2, steps) -> np.ndarray:
    """Dead-reckon: cumulative composition of relative ``steps`` from ``start``.

    Returns ``len(steps) + 1`` poses, the first being ``start``.
    """
    steps = np.asarray(steps, dtype=float).reshape(-1, 3)
    out = np.empty((len(steps) + 1, 3))
    out[0] = start.as_array()
    x, y, th = out[0]
    for k, (dx, dy, dth) in enumerate(steps, start=1):
        c, s = math.cos(th), math.sin(th)
        x, y = x + c * dx - s * dy, y + s * dx + c * dy
        th = wrap_angle(th + dth)
        out[k] = (x, y, th)
    return out
