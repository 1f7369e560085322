"""
SE(2) poses and odometry
========================

Poses are (x, y, theta) with theta kept in (-pi, pi]. Composition, inverse
and relative pose are the only operations the rest of the package needs.
"""

import math

import numpy as np

from defmatch.geometry import Pose2, between, compose, integrate_odometry, inverse, transform_poses

a = Pose2(2.0, 1.0, math.pi / 2)
b = Pose2(1.0, 0.0, math.pi / 2)

# b expressed in a's frame, then mapped back
print("a o b       =", compose(a, b))
print("a^-1 o a    =", compose(inverse(a), a))
print("between(a,b)=", between(a, b))

# heading wraps eagerly: two quarter turns plus a bit land just past -pi
print("wrapped     =", compose(Pose2(0, 0, 3.0), Pose2(0, 0, 0.5)))

# dead reckoning: a 1 m step with a slight left turn, repeated
steps = np.tile([1.0, 0.0, 0.05], (40, 1))
track = integrate_odometry(Pose2(), steps)
print("after 40 steps:", np.round(track[-1], 3))

# moving a whole trajectory by one rigid transform
moved = transform_poses(Pose2(10.0, -5.0, math.pi), track)
print("first pose moved to", np.round(moved[0], 3))
