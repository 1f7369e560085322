"""Descriptor retrieval: PCA compression, binary sign codes and a Hamming-ball hash index.

The index stores projected reference descriptors under a B-bit code. A query
probes every bucket within Hamming radius ``Nb`` of its own code, skips
buckets holding more than ``bucket_cap`` items, and ranks the surviving
candidates by exact L2 distance.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)


class Correspondence(NamedTuple):
    query_index: int
    ref_index: int
    l2: float


@dataclass
class PcaModel:
    mean: np.ndarray  # (D,)
    basis: np.ndarray  # (d, D), orthonormal rows

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def D(self) -> int:
        return self.basis.shape[1]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "basis": self.basis.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["basis"], dtype=float))


@dataclass
class CodeModel:
    """B random hyperplanes through the origin of the projected space."""

    hyperplanes: np.ndarray  # (B, d)
    seed: int | None = None

    @classmethod
    def random(cls, d: int, n_bits: int = 20, seed: int = 0) -> "CodeModel":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n_bits, d)), seed)

    @property
    def n_bits(self) -> int:
        return self.hyperplanes.shape[0]

    @property
    def d(self) -> int:
        return self.hyperplanes.shape[1]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "hyperplanes": self.hyperplanes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CodeModel":
        return cls(np.asarray(d["hyperplanes"], dtype=float), d.get("seed"))


def fit_pca(features, d: int) -> PcaModel:
    """Fit a d-dimensional PCA basis, rows ordered by decreasing variance.

    If the centered data has rank below ``d`` the basis is completed with an
    arbitrary orthonormal set and a warning is issued.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D array (n_samples, D)")
    n, D = X.shape
    if d < 1 or d > D:
        raise ValueError(f"PCA dimension {d} must be in [1, {D}]")
    if n < d:
        raise ValueError(f"need at least {d} samples to fit a {d}-dimensional PCA, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, svals, vt = np.linalg.svd(Xc, full_matrices=True)
    tol = max(n, D) * np.finfo(float).eps * (svals[0] if svals.size else 0.0)
    rank = int(np.sum(svals > tol))
    if rank < d:
        warnings.warn(
            f"centered features have rank {rank} < {d}; basis padded with an "
            "arbitrary orthonormal completion",
            RuntimeWarning,
            stacklevel=2,
        )
    # full_matrices=True already yields an orthonormal completion past the rank
    basis = vt[:d].copy()
    # deterministic sign: largest-magnitude entry of each row positive
    idx = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(d), idx])
    signs[signs == 0] = 1.0
    basis *= signs[:, None]
    return PcaModel(mean, basis)


def project(model: PcaModel, f) -> np.ndarray:
    """basis . (f - mean); accepts one descriptor or a stack of them."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != model.D:
        raise ValueError(f"descriptor dimension {f.shape[-1]} != model dimension {model.D}")
    return (f - model.mean) @ model.basis.T


def encode_binary(code_model: CodeModel, p) -> int | np.ndarray:
    """Bit k is set iff dot(hyperplane_k, p) >= 0. Bit 0 is the least significant."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != code_model.d:
        raise ValueError(f"projected dimension {p.shape[-1]} != code dimension {code_model.d}")
    bits = (p @ code_model.hyperplanes.T >= 0.0).astype(np.int64)
    weights = np.left_shift(np.int64(1), np.arange(code_model.n_bits, dtype=np.int64))
    codes = bits @ weights
    return int(codes) if np.ndim(codes) == 0 else codes


def hamming_ball(code: int, n_bits: int, radius: int) -> list[int]:
    """All codes within Hamming distance ``radius`` of ``code``, in increasing distance."""
    keys = [code]
    for r in range(1, radius + 1):
        for flips in combinations(range(n_bits), r):
            k = code
            for b in flips:
                k ^= 1 << b
            keys.append(k)
    return keys


@dataclass
class HashIndex:
    code_model: CodeModel
    bucket_cap: int = 100
    buckets: dict[int, list[int]] = field(default_factory=dict)
    descriptors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    raw: np.ndarray | None = None

    def __len__(self) -> int:
        return sum(len(v) for v in self.buckets.values())

    def candidates(self, code: int, Nb: int) -> list[int]:
        out: list[int] = []
        for key in hamming_ball(code, self.code_model.n_bits, Nb):
            members = self.buckets.get(key)
            if members is None or len(members) > self.bucket_cap:
                continue
            out.extend(members)
        return out


def build_index(descriptors, code_model: CodeModel, bucket_cap: int = 100, raw=None) -> HashIndex:
    """Store every projected descriptor under its binary code.

    ``raw`` optionally keeps the unprojected descriptors so queries can
    re-rank in the original space.
    """
    P = np.asarray(descriptors, dtype=float)
    if P.size == 0:
        return HashIndex(code_model, bucket_cap, {}, np.zeros((0, code_model.d)), None)
    codes = np.atleast_1d(encode_binary(code_model, P))
    buckets: dict[int, list[int]] = {}
    for i, c in enumerate(codes.tolist()):
        buckets.setdefault(c, []).append(i)
    raw_arr = None if raw is None else np.asarray(raw, dtype=float)
    return HashIndex(code_model, bucket_cap, buckets, P, raw_arr)


def query_index(
    index: HashIndex,
    q,
    Nb: int = 1,
    Nr: int = 10,
    query_index_value: int = 0,
    q_raw=None,
) -> list[Correspondence]:
    """Top-``Nr`` reference entries for one projected query descriptor.

    Ranking is by L2 in projected space, or in raw space when ``q_raw`` is
    given and the index retained raw descriptors. Ties go to the lower
    reference index.
    """
    q = np.asarray(q, dtype=float)
    code = encode_binary(index.code_model, q)
    cand = index.candidates(code, Nb)
    if not cand:
        return []
    cand = np.asarray(sorted(cand))
    if q_raw is not None and index.raw is not None:
        dist = np.linalg.norm(index.raw[cand] - np.asarray(q_raw, dtype=float), axis=1)
    else:
        dist = np.linalg.norm(index.descriptors[cand] - q, axis=1)
    order = np.lexsort((cand, dist))[:Nr]
    return [Correspondence(query_index_value, int(cand[k]), float(dist[k])) for k in order]


@dataclass
class RetrievalResult:
    top: list[Correspondence]  # global best Nr
    pooled: list[Correspondence]  # every correspondence returned by any query


def _corr_key(c: Correspondence):
    return (c.l2, c.query_index, c.ref_index)


def global_correspondences(
    query_descriptors, index: HashIndex, Nr: int = 10, Nb: int = 1, query_raw=None
) -> RetrievalResult:
    """Query every pose, pool the results, keep the ``Nr`` globally smallest."""
    Q = np.asarray(query_descriptors, dtype=float)
    pooled: list[Correspondence] = []
    for i in range(len(Q)):
        q_raw = None if query_raw is None else query_raw[i]
        pooled.extend(query_index(index, Q[i], Nb, Nr, query_index_value=i, q_raw=q_raw))
    pooled.sort(key=_corr_key)
    return RetrievalResult(pooled[:Nr], pooled)


class Retriever:
    """PCA model + code model + index fitted on one reference descriptor set."""

    def __init__(
        self,
        ref_descriptors,
        pca_dim: int = 128,
        n_bits: int = 20,
        bucket_cap: int = 100,
        seed: int = 0,
        rerank_raw: bool = False,
        pca: PcaModel | None = None,
        codes: CodeModel | None = None,
    ):
        R = np.asarray(ref_descriptors, dtype=float)
        if pca is None:
            d = max(1, min(pca_dim, R.shape[1], R.shape[0] - 1))
            pca = fit_pca(R, d)
        self.pca = pca
        self.codes = codes if codes is not None else CodeModel.random(pca.d, n_bits, seed)
        self.rerank_raw = rerank_raw
        self.index = build_index(project(pca, R), self.codes, bucket_cap, raw=R if rerank_raw else None)

    def match(self, query_descriptors, Nr: int = 10, Nb: int = 1) -> RetrievalResult:
        Qd = np.asarray(query_descriptors, dtype=float)
        raw = Qd if self.rerank_raw else None
        return global_correspondences(project(self.pca, Qd), self.index, Nr, Nb, query_raw=raw)

    def to_dict(self) -> dict:
        return {
            "seed": self.codes.seed,
            "mean": self.pca.mean.tolist(),
            "basis": self.pca.basis.tolist(),
            "hyperplanes": self.codes.hyperplanes.tolist(),
            "bucket_cap": self.index.bucket_cap,
        }


def retrieve(query_descriptors, ref_descriptors, Nr=10, Nb=1, bucket_cap=100, pca_dim=128,
             n_bits=20, seed=0, rerank_raw=False) -> RetrievalResult:
    """One-shot helper: fit on the reference, query with the query map."""
    r = Retriever(ref_descriptors, pca_dim, n_bits, bucket_cap, seed, rerank_raw)
    return r.match(query_descriptors, Nr, Nb)
