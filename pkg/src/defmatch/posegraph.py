"""2D pose graph with odometry and loop-closure edges, solved by Levenberg-Marquardt.

Residual convention: for an edge (i, j, z) the residual is
``between(z, between(x_i, x_j))`` as (dx, dy, wrap(dtheta)). Moving node j
one metre further along node i's x-axis than the measurement says therefore
gives a residual of (+1, 0, 0) when z has zero heading.

Poses are updated additively on (x, y, theta) and the anchor node is held
fixed to remove the gauge freedom.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, reverse_cuthill_mckee
from scipy.sparse.linalg import splu

from .geometry import Pose2, between_arrays, wrap_angle

logger = logging.getLogger(__name__)

LOOP_SIGMA_T = 0.1
LOOP_SIGMA_THETA = 0.05
# below this chi2 a graph counts as already satisfying every measurement
_CHI2_FLOOR = 1e-16


class GraphError(ValueError):
    """Raised for malformed graphs or graphs the solver cannot handle."""


@dataclass
class Edge:
    i: int
    j: int
    measurement: np.ndarray  # (3,)
    information: np.ndarray  # (3, 3)
    kind: str = "odometry"


def _check_information(info: np.ndarray) -> np.ndarray:
    info = np.asarray(info, dtype=float)
    if info.shape != (3, 3):
        raise GraphError(f"information matrix must be 3x3, got {info.shape}")
    if not np.allclose(info, info.T, rtol=0, atol=1e-9 * max(1.0, np.abs(info).max())):
        raise GraphError("information matrix is not symmetric")
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise GraphError("information matrix is not positive definite") from None
    return info


def default_information(kind: str, step_length: float = 1.0, dtheta: float = 0.0,
                        loop_sigma_t: float = LOOP_SIGMA_T,
                        loop_sigma_theta: float = LOOP_SIGMA_THETA,
                        noise_frac: float = 0.01) -> np.ndarray:
    """Diagonal information matrix for an odometry or loop edge.

    Odometry: sigma_t = noise_frac * step (at least 1 mm), sigma_theta =
    noise_frac * |dtheta| + 0.1 * noise_frac * step (at least 1e-4 rad).
    Loop edges use fixed sigmas.
    """
    if kind == "loop":
        st, sth = loop_sigma_t, loop_sigma_theta
    elif kind == "odometry":
        if not step_length > 0:
            raise ValueError(f"odometry step length must be positive, got {step_length}")
        if noise_frac < 0:
            raise ValueError(f"noise_frac must be non-negative, got {noise_frac}")
        st = max(noise_frac * step_length, 1e-3)
        sth = max(noise_frac * abs(dtheta) + 0.1 * noise_frac * step_length, 1e-4)
    else:
        raise ValueError(f"unknown edge kind {kind!r}")
    return np.diag([st**-2, st**-2, sth**-2])


class PoseGraph:
    def __init__(self, poses=None, anchor: int = 0):
        self.poses = np.zeros((0, 3)) if poses is None else np.array(poses, dtype=float).reshape(-1, 3)
        self.edges: list[Edge] = []
        self.anchor = anchor

    @property
    def n_nodes(self) -> int:
        return len(self.poses)

    def add_node(self, pose) -> int:
        self.poses = np.vstack([self.poses, np.asarray(tuple(pose), dtype=float)])
        return self.n_nodes - 1

    def add_edge(self, i: int, j: int, measurement, information, kind: str = "odometry") -> Edge:
        n = self.n_nodes
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise GraphError(f"edge ({i}, {j}) does not reference two valid nodes of {n}")
        z = np.asarray(tuple(measurement), dtype=float)
        e = Edge(i, j, z, _check_information(information), kind)
        self.edges.append(e)
        return e

    def add_edges(self, I, J, Z, W, kind: str = "odometry") -> None:
        """Append many edges at once; ``W`` is (E, 3, 3) or one shared (3, 3)."""
        I = np.asarray(I, dtype=int)
        J = np.asarray(J, dtype=int)
        Z = np.asarray(Z, dtype=float).reshape(-1, 3)
        W = np.asarray(W, dtype=float)
        if W.ndim == 2:
            W = np.broadcast_to(W, (len(I), 3, 3))
        n = self.n_nodes
        bad = (I < 0) | (I >= n) | (J < 0) | (J >= n) | (I == J)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise GraphError(f"edge ({I[k]}, {J[k]}) does not reference two valid nodes of {n}")
        if len(W):
            if not np.allclose(W, W.transpose(0, 2, 1)):
                raise GraphError("information matrix is not symmetric")
            if np.linalg.eigvalsh(W).min() <= 0:
                raise GraphError("information matrix is not positive definite")
        self.edges.extend(Edge(int(i), int(j), z, w, kind) for i, j, z, w in zip(I, J, Z, W))

    @property
    def odometry_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kind == "odometry"]

    @property
    def loop_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kind != "odometry"]

    def _arrays(self):
        I = np.array([e.i for e in self.edges], dtype=int)
        J = np.array([e.j for e in self.edges], dtype=int)
        Z = np.array([e.measurement for e in self.edges]).reshape(-1, 3)
        W = np.array([e.information for e in self.edges]).reshape(-1, 3, 3)
        return I, J, Z, W

    def chi2(self, poses=None) -> float:
        if not self.edges:
            return 0.0
        I, J, Z, W = self._arrays()
        x = self.poses if poses is None else poses
        r = residuals(x[I], x[J], Z)
        return float(np.einsum("ei,eij,ej->", r, W, r))

    # -- text dump -----------------------------------------------------------

    def dumps(self) -> str:
        """Text dump with ``VERTEX`` and ``EDGE`` lines (upper-triangle information)."""
        lines = [f"VERTEX {k} {x:.17g} {y:.17g} {t:.17g}" for k, (x, y, t) in enumerate(self.poses)]
        for e in self.edges:
            m = e.information
            tri = (m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2])
            vals = " ".join(f"{v:.17g}" for v in (*e.measurement, *tri))
            lines.append(f"EDGE {e.i} {e.j} {vals}")
        lines.append(f"FIX {self.anchor}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PoseGraph":
        g = cls()
        verts: dict[int, tuple] = {}
        edges = []
        anchor = 0
        for line in text.splitlines():
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "VERTEX":
                verts[int(tok[1])] = tuple(float(v) for v in tok[2:5])
            elif tok[0] == "EDGE":
                i, j = int(tok[1]), int(tok[2])
                v = [float(t) for t in tok[3:12]]
                a, b, c, d, e, f = v[3:]
                info = np.array([[a, b, c], [b, d, e], [c, e, f]])
                edges.append((i, j, v[:3], info))
            elif tok[0] == "FIX":
                anchor = int(tok[1])
            else:
                raise GraphError(f"unrecognised line: {line!r}")
        ids = sorted(verts)
        if ids != list(range(len(ids))):
            raise GraphError("vertex ids must be 0..N-1")
        g.poses = np.array([verts[k] for k in ids], dtype=float).reshape(-1, 3)
        g.anchor = anchor
        for i, j, z, info in edges:
            kind = "odometry" if j == i + 1 else "loop"
            g.add_edge(i, j, z, info, kind)
        return g


def residuals(xi, xj, z) -> np.ndarray:
    """Row-wise edge residuals between(z, between(xi, xj))."""
    return between_arrays(z, between_arrays(xi, xj))


def edge_residual(edge: Edge, poses) -> np.ndarray:
    poses = np.asarray(poses, dtype=float)
    return residuals(poses[edge.i], poses[edge.j], edge.measurement)


def _jacobians(xi, xj, z):
    """Analytic d r / d x_i and d r / d x_j for stacked edges, each (E, 3, 3)."""
    E = len(xi)
    ci, si = np.cos(xi[:, 2]), np.sin(xi[:, 2])
    cz, sz = np.cos(z[:, 2]), np.sin(z[:, 2])
    # Rz^T Ri^T = R(-(thz + thi))
    a = -(z[:, 2] + xi[:, 2])
    ca, sa = np.cos(a), np.sin(a)
    RzRi = np.stack([np.stack([ca, -sa], -1), np.stack([sa, ca], -1)], -2)
    dx = xj[:, 0] - xi[:, 0]
    dy = xj[:, 1] - xi[:, 1]
    # d(Ri^T)/dthi applied to (dx, dy)
    u = np.stack([-si * dx + ci * dy, -ci * dx - si * dy], -1)
    RzT = np.stack([np.stack([cz, sz], -1), np.stack([-sz, cz], -1)], -2)
    Ji = np.zeros((E, 3, 3))
    Jj = np.zeros((E, 3, 3))
    Ji[:, :2, :2] = -RzRi
    Ji[:, :2, 2] = np.einsum("eab,eb->ea", RzT, u)
    Ji[:, 2, 2] = -1.0
    Jj[:, :2, :2] = RzRi
    Jj[:, 2, 2] = 1.0
    return Ji, Jj


def edge_jacobians(edge: Edge, poses) -> tuple[np.ndarray, np.ndarray]:
    poses = np.asarray(poses, dtype=float)
    Ji, Jj = _jacobians(poses[[edge.i]], poses[[edge.j]], edge.measurement[None, :])
    return Ji[0], Jj[0]


@dataclass
class OptimizeConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-9
    damping: float = 1e-4

    def __post_init__(self):
        if self.max_iterations < 1 or self.convergence_tol <= 0 or self.damping <= 0:
            raise ValueError("OptimizeConfig fields must all be positive")


@dataclass
class OptimizeResult:
    poses: np.ndarray
    chi2: float
    iterations: int
    converged: bool
    initial_chi2: float = 0.0
    chi2_history: list[float] = field(default_factory=list)


def _check_connected(n: int, I: np.ndarray, J: np.ndarray) -> None:
    adj = sp.coo_matrix((np.ones(len(I)), (I, J)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp > 1:
        lonely = np.flatnonzero(labels != labels[0])[:5].tolist()
        raise GraphError(
            f"pose graph has {n_comp} disconnected components; normal matrix is singular "
            f"(e.g. nodes {lonely} are not connected to node 0)"
        )


def _normal_equations(x, I, J, Z, W, n):
    xi, xj = x[I], x[J]
    r = residuals(xi, xj, Z)
    Ji, Jj = _jacobians(xi, xj, Z)
    JiT = Ji.transpose(0, 2, 1)
    JjT = Jj.transpose(0, 2, 1)
    WJi = W @ Ji
    WJj = W @ Jj
    Hii = JiT @ WJi
    Hjj = JjT @ WJj
    Hij = JiT @ WJj
    Wr = (W @ r[:, :, None])[:, :, 0]
    gi = (JiT @ Wr[:, :, None])[:, :, 0]
    gj = (JjT @ Wr[:, :, None])[:, :, 0]

    a3 = np.arange(3)
    rows, cols = [], []
    for ra, cb in ((I, I), (J, J), (I, J), (J, I)):
        rows.append(np.broadcast_to(3 * ra[:, None, None] + a3[None, :, None], Hii.shape))
        cols.append(np.broadcast_to(3 * cb[:, None, None] + a3[None, None, :], Hii.shape))
    rows = np.concatenate(rows).ravel()
    cols = np.concatenate(cols).ravel()
    vals = np.concatenate([Hii, Hjj, Hij, Hij.transpose(0, 2, 1)]).ravel()
    H = sp.coo_matrix((vals, (rows, cols)), shape=(3 * n, 3 * n)).tocsc()
    g = np.zeros(3 * n)
    np.add.at(g, (3 * I[:, None] + a3).ravel(), gi.ravel())
    np.add.at(g, (3 * J[:, None] + a3).ravel(), gj.ravel())
    chi2 = float(np.sum(r * Wr))
    return H, g, chi2


def optimize(graph: PoseGraph, config: OptimizeConfig | None = None) -> OptimizeResult:
    """Levenberg-Marquardt on the weighted edge residuals.

    Returns optimized poses; the graph itself is left untouched.
    """
    cfg = config or OptimizeConfig()
    n = graph.n_nodes
    x = graph.poses.copy()
    if n == 0:
        return OptimizeResult(x, 0.0, 0, True)
    if not (0 <= graph.anchor < n):
        raise GraphError(f"anchor {graph.anchor} is not a node index")
    if not graph.edges:
        if n == 1:
            return OptimizeResult(x, 0.0, 1, True)
        raise GraphError("pose graph has no edges; normal matrix is singular")
    I, J, Z, W = graph._arrays()
    _check_connected(n, I, J)

    # fill-reducing order: reverse Cuthill-McKee on nodes, anchor removed
    adj = sp.coo_matrix((np.ones(len(I)), (I, J)), shape=(n, n)).tocsr()
    perm = reverse_cuthill_mckee(adj + adj.T, symmetric_mode=True)
    perm = perm[perm != graph.anchor]
    free_idx = (3 * perm[:, None] + np.arange(3)).ravel()

    lam = cfg.damping
    H, g, chi2 = _normal_equations(x, I, J, Z, W, n)
    chi2_0 = chi2
    history = [chi2]
    converged = False
    it = 0
    while it < cfg.max_iterations:
        it += 1
        gf = g[free_idx]
        if chi2 <= _CHI2_FLOOR or np.max(np.abs(gf)) <= 1e-14:
            converged = True
            break
        Hf = H[free_idx][:, free_idx].tocsc()
        diag = Hf.diagonal()
        accepted = False
        while True:
            A = Hf + sp.diags(lam * np.maximum(diag, 1e-12), format="csc")
            try:
                dx = -splu(A, permc_spec="NATURAL", options=dict(SymmetricMode=True)).solve(gf)
            except RuntimeError as exc:
                raise GraphError(f"normal matrix factorization failed: {exc}") from None
            x_new = x.copy()
            flat = x_new.reshape(-1)
            flat[free_idx] += dx
            x_new[:, 2] = wrap_angle(x_new[:, 2])
            x_new[graph.anchor] = x[graph.anchor]  # wrapping may round the pinned pose
            H_new, g_new, chi2_new = _normal_equations(x_new, I, J, Z, W, n)
            if chi2_new < chi2:
                accepted = True
                break
            lam *= 10.0
            if lam > 1e12:
                break
        if not accepted:
            converged = True
            break
        rel = (chi2 - chi2_new) / chi2
        x, H, g, chi2 = x_new, H_new, g_new, chi2_new
        history.append(chi2)
        lam = max(lam / 10.0, 1e-12)
        if rel < cfg.convergence_tol:
            converged = True
            break
    return OptimizeResult(x, chi2, it, converged, chi2_0, history)
