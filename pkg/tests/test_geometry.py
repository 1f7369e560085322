import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defmatch.geometry import (Pose2, between, between_arrays, compose, compose_arrays, integrate_odometry,
                               inverse, transform_poses, wrap_angle)

TOL = 1e-9


def mat(p):
    c, s = math.cos(p[2]), math.sin(p[2])
    return np.array([[c, -s, p[0]], [s, c, p[1]], [0, 0, 1.0]])


def from_mat(m):
    return np.array([m[0, 2], m[1, 2], math.atan2(m[1, 0], m[0, 0])])


def close(a, b, tol=TOL):
    a, b = np.asarray(tuple(a), float), np.asarray(tuple(b), float)
    d = a - b
    d[2] = wrap_angle(d[2])
    return np.all(np.abs(d) < tol)


coord = st.floats(-100, 100, allow_nan=False)
angle = st.floats(-10, 10, allow_nan=False)
poses = st.builds(Pose2, coord, coord, angle)


def test_compose_examples():
    assert close(compose(Pose2.identity(), Pose2(3, -2, 0.5)), (3, -2, 0.5))
    assert close(compose(Pose2(1, 0, 0), Pose2(1, 0, 0)), (2, 0, 0))
    got = compose(Pose2(0, 0, math.pi / 2), Pose2(1, 0, 0))
    assert close(got, from_mat(mat((0, 0, math.pi / 2)) @ mat((1, 0, 0))))
    assert close(got, (0, 1, math.pi / 2))


def test_inverse_examples():
    assert close(inverse(Pose2.identity()), (0, 0, 0))
    assert close(inverse(Pose2(1, 0, 0)), (-1, 0, 0))
    got = inverse(Pose2(1, 2, math.pi / 2))
    assert close(got, from_mat(np.linalg.inv(mat((1, 2, math.pi / 2)))))
    assert close(got, (-2, 1, -math.pi / 2))


def test_between_examples():
    p = Pose2(4, -1, 2.5)
    assert close(between(p, p), (0, 0, 0))
    assert close(between(Pose2(), Pose2(2, 3, 1)), (2, 3, 1))
    a, b = (1, 1, math.pi / 2), (1, 2, math.pi / 2)
    assert close(between(Pose2(*a), Pose2(*b)), from_mat(np.linalg.inv(mat(a)) @ mat(b)))
    assert close(between(Pose2(*a), Pose2(*b)), (1, 0, 0))


def _reduce(t):
    # repeated +-2pi reduction
    while t > math.pi:
        t -= 2 * math.pi
    while t <= -math.pi:
        t += 2 * math.pi
    return t


def test_wrap_angle_examples():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-3.5 * math.pi) == pytest.approx(0.5 * math.pi)
    assert wrap_angle(-3.5 * math.pi) == pytest.approx(_reduce(-3.5 * math.pi))
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(math.pi) == math.pi


@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_wrap_angle_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        wrap_angle(bad)
    with pytest.raises(ValueError):
        wrap_angle(np.array([0.0, bad]))
    with pytest.raises(ValueError):
        Pose2(0, 0, bad)


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_range_congruence_idempotence(t):
    w = wrap_angle(t)
    assert -math.pi < w <= math.pi
    k = (t - w) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-9
    assert wrap_angle(w) == w
    assert wrap_angle(np.array([t]))[0] == pytest.approx(w, abs=1e-9) or abs(w) == pytest.approx(math.pi)


@given(poses, poses, poses)
def test_associativity(a, b, c):
    assert close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-10)


@given(poses)
def test_identity_and_inverse_laws(p):
    e = Pose2.identity()
    assert close(compose(p, e), p, 1e-12)
    assert close(compose(e, p), p, 1e-12)
    assert close(compose(p, inverse(p)), e, 1e-12)
    assert close(compose(inverse(p), p), e, 1e-12)


@given(poses, poses)
def test_between_round_trip(a, b):
    assert close(compose(a, between(a, b)), b, 1e-12)


@given(poses, poses)
def test_matches_matrix_oracle(a, b):
    assert close(compose(a, b), from_mat(mat(tuple(a)) @ mat(tuple(b))), 1e-9)


@settings(max_examples=50)
@given(st.lists(st.tuples(coord, coord, angle), min_size=2, max_size=20))
def test_array_versions_match_scalar(rows):
    a = np.array(rows)
    b = a[::-1].copy()
    ca, ba = compose_arrays(a, b), between_arrays(a, b)
    for k in range(len(a)):
        pa, pb = Pose2.from_array(a[k]), Pose2.from_array(b[k])
        assert close(ca[k], compose(pa, pb))
        assert close(ba[k], between(pa, pb))
    assert np.all((ca[:, 2] > -math.pi) & (ca[:, 2] <= math.pi))


def test_theta_always_wrapped():
    p = Pose2(0, 0, 7.0)
    assert -math.pi < p.theta <= math.pi
    assert -math.pi < compose(Pose2(0, 0, 3.0), Pose2(0, 0, 3.0)).theta <= math.pi


def test_integrate_odometry_and_transform():
    steps = np.array([[1, 0, math.pi / 2]] * 4)
    out = integrate_odometry(Pose2(), steps)
    assert out.shape == (5, 3)
    assert close(out[-1], (0, 0, 0))
    assert close(out[2], (1, 1, math.pi))
    t = Pose2(5, -3, 0.3)
    moved = transform_poses(t, out)
    for k in range(5):
        assert close(moved[k], compose(t, Pose2.from_array(out[k])))


def test_pose_helpers():
    p = Pose2(1, 2, 0.5)
    assert np.allclose(Pose2.from_array(p.as_array()).as_array(), p.as_array())
    assert np.allclose(p.matrix(), mat((1, 2, 0.5)))
    assert tuple(p) == (1.0, 2.0, 0.5)
    assert close(p @ inverse(p), (0, 0, 0))
