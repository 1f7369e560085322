"""Independent reference implementations shared by the test modules."""

import math
from collections import Counter

import numpy as np

from defmatch.geometry import wrap_angle


def mat(p):
    c, s = math.cos(p[2]), math.sin(p[2])
    return np.array([[c, -s, p[0]], [s, c, p[1]], [0, 0, 1.0]])


def residual_oracle(xi, xj, z):
    m = np.linalg.inv(mat(z)) @ np.linalg.inv(mat(xi)) @ mat(xj)
    return np.array([m[0, 2], m[1, 2], math.atan2(m[1, 0], m[0, 0])])


def fd_jacobians(xi, xj, z, h=1e-6):
    def r(a, b):
        return residual_oracle(a, b, z)

    Ji, Jj = np.zeros((3, 3)), np.zeros((3, 3))
    for k in range(3):
        d = np.zeros(3)
        d[k] = h
        for J, f in ((Ji, lambda e: r(xi + e, xj)), (Jj, lambda e: r(xi, xj + e))):
            col = f(d) - f(-d)
            col[2] = wrap_angle(col[2])
            J[:, k] = col / (2 * h)
    return Ji, Jj


def dense_gauss_newton(poses, edges, anchor, iters=100):
    """Reference solver: dense normal equations with finite-difference Jacobians."""
    x = np.array(poses, dtype=float)
    n = len(x)
    free = [k for k in range(3 * n) if k // 3 != anchor]
    for _ in range(iters):
        H = np.zeros((3 * n, 3 * n))
        b = np.zeros(3 * n)
        for i, j, z, w in edges:
            r = residual_oracle(x[i], x[j], z)
            Ji, Jj = fd_jacobians(x[i], x[j], z, 1e-7)
            J = np.zeros((3, 3 * n))
            J[:, 3 * i:3 * i + 3] = Ji
            J[:, 3 * j:3 * j + 3] = Jj
            H += J.T @ w @ J
            b += J.T @ w @ r
        dx = np.linalg.solve(H[np.ix_(free, free)], -b[free])
        x.reshape(-1)[free] += dx
        x[:, 2] = [wrap_angle(t) for t in x[:, 2]]
        if np.max(np.abs(dx)) < 1e-13:
            break
    return x


def brute_force_query(P, q, hyperplanes, Nb, Nr, cap):
    """Linear scan: re-encode everything, filter by Hamming radius and bucket size, sort by L2."""
    def code(v):
        c = 0
        for k, h in enumerate(hyperplanes):
            if float(np.dot(h, v)) >= 0.0:
                c |= 1 << k
        return c

    codes = [code(p) for p in P]
    sizes = Counter(codes)
    qc = code(q)
    keep = [i for i, c in enumerate(codes) if bin(c ^ qc).count("1") <= Nb and sizes[c] <= cap]
    scored = sorted((float(np.linalg.norm(P[i] - q)), i) for i in keep)
    return [(i, d) for d, i in scored[:Nr]]
