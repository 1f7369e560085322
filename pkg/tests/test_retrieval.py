import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_query

from defmatch.retrieval import (CodeModel, Correspondence, PcaModel, Retriever, build_index, encode_binary,
                                fit_pca, global_correspondences, hamming_ball, project, query_index, retrieve)

GOLDEN_SEED42 = (848446, 200129)  # codes of linspace(-1, 1, 8) and its negation, 20 bits


# -- PCA ---------------------------------------------------------------------


def test_fit_pca_line():
    rng = np.random.default_rng(0)
    u = np.array([1.0, 2.0, -2.0]) / 3.0
    X = np.outer(rng.standard_normal(50), u) + np.array([5.0, -1.0, 2.0])
    m = fit_pca(X, 1)
    assert abs(abs(m.basis[0] @ u) - 1.0) < 1e-6


def test_fit_pca_full_rank_isometry():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((30, 6))
    m = fit_pca(X, 6)
    P = project(m, X)
    for i in range(0, 30, 7):
        for j in range(30):
            assert abs(np.linalg.norm(P[i] - P[j]) - np.linalg.norm(X[i] - X[j])) < 1e-8


def test_fit_pca_captured_variance_matches_eigendecomposition():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((200, 16)) * np.linspace(0.5, 3.0, 16)
    m = fit_pca(X, 4)
    C = np.cov(X, rowvar=False, bias=True)
    top4 = np.sort(np.linalg.eigvalsh(C))[::-1][:4]
    captured = np.trace(m.basis @ C @ m.basis.T)
    assert captured == pytest.approx(top4.sum(), rel=1e-10)
    # rows ordered by decreasing variance
    v = np.var(project(m, X), axis=0)
    assert np.all(np.diff(v) <= 1e-9)


def test_fit_pca_orthonormal_rows():
    X = np.random.default_rng(3).standard_normal((40, 10))
    m = fit_pca(X, 7)
    assert np.allclose(m.basis @ m.basis.T, np.eye(7), atol=1e-8)
    assert m.d == 7 and m.D == 10


def test_fit_pca_errors_and_rank_warning():
    with pytest.raises(ValueError):
        fit_pca(np.zeros((3, 5)), 4)
    with pytest.raises(ValueError):
        fit_pca(np.zeros((10, 5)), 6)
    X = np.outer(np.arange(10.0), [1.0, 0, 0, 0])
    with pytest.warns(RuntimeWarning, match="rank"):
        m = fit_pca(X, 3)
    assert np.allclose(m.basis @ m.basis.T, np.eye(3), atol=1e-8)


def test_fit_pca_deterministic():
    X = np.random.default_rng(4).standard_normal((50, 8))
    assert np.array_equal(fit_pca(X, 4).basis, fit_pca(X.copy(), 4).basis)


def test_project_examples():
    rng = np.random.default_rng(5)
    mean = rng.standard_normal(6)
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    m = PcaModel(mean, q[:3])
    assert np.allclose(project(m, mean), 0.0)
    f = rng.standard_normal(6)
    assert np.allclose(project(PcaModel(np.zeros(6), np.eye(6)), f), f)
    expected = np.array([sum(q[k, j] * (f[j] - mean[j]) for j in range(6)) for k in range(3)])
    assert np.allclose(project(m, f), expected, atol=1e-10)
    with pytest.raises(ValueError):
        project(m, np.zeros(5))


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_projection_is_contraction(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((20, 8))
    m = fit_pca(X, 3)
    a, b = rng.standard_normal((2, 8))
    assert np.linalg.norm(project(m, a) - project(m, b)) <= np.linalg.norm(a - b) + 1e-8


# -- codes -------------------------------------------------------------------


def test_encode_zero_vector_all_ones():
    cm = CodeModel.random(5, 20, 0)
    assert encode_binary(cm, np.zeros(5)) == (1 << 20) - 1


def test_encode_antipodal_complement():
    cm = CodeModel.random(8, 20, 7)
    p = np.random.default_rng(1).standard_normal(8)
    assert encode_binary(cm, p) ^ encode_binary(cm, -p) == (1 << 20) - 1


def test_encode_golden_seed42():
    cm = CodeModel.random(8, 20, 42)
    p = np.linspace(-1.0, 1.0, 8)
    assert (encode_binary(cm, p), encode_binary(cm, -p)) == GOLDEN_SEED42


def test_encode_only_low_bits_and_batch():
    cm = CodeModel.random(4, 20, 3)
    P = np.random.default_rng(2).standard_normal((50, 4))
    codes = encode_binary(cm, P)
    assert codes.shape == (50,) and np.all(codes < (1 << 20)) and np.all(codes >= 0)
    assert [encode_binary(cm, p) for p in P] == codes.tolist()
    with pytest.raises(ValueError):
        encode_binary(cm, np.zeros(3))


def test_hamming_ball_size():
    keys = hamming_ball(0b1011, 20, 1)
    assert len(keys) == 21 and len(set(keys)) == 21
    assert keys[0] == 0b1011
    assert all(bin(k ^ 0b1011).count("1") == 1 for k in keys[1:])
    assert len(hamming_ball(5, 20, 2)) == 1 + 20 + 190
    assert hamming_ball(5, 20, 0) == [5]


# -- index -------------------------------------------------------------------


def test_build_index_examples():
    cm = CodeModel.random(4, 20, 0)
    empty = build_index(np.zeros((0, 4)), cm)
    assert empty.buckets == {} and len(empty) == 0
    v = np.array([0.3, -1.0, 2.0, 0.5])
    idx = build_index(np.stack([v, v]), cm)
    assert list(idx.buckets.values()) == [[0, 1]]
    assert idx.bucket_cap == 100


def test_build_index_reencoding():
    cm = CodeModel.random(6, 20, 1)
    P = np.random.default_rng(0).standard_normal((1000, 6))
    idx = build_index(P, cm)
    assert len(idx) == 1000
    seen = set()
    for key, members in idx.buckets.items():
        for i in members:
            assert encode_binary(cm, P[i]) == key
            assert i not in seen
            seen.add(i)
    assert seen == set(range(1000))


def test_query_self_first():
    cm = CodeModel.random(5, 20, 2)
    P = np.random.default_rng(1).standard_normal((100, 5))
    idx = build_index(P, cm)
    res = query_index(idx, P[17], Nb=0, Nr=5, query_index_value=3)
    assert res[0] == Correspondence(3, 17, 0.0)


def test_query_all_buckets_over_cap():
    cm = CodeModel.random(3, 20, 0)
    P = np.tile([1.0, 2.0, 3.0], (10, 1))
    idx = build_index(P, cm, bucket_cap=5)
    assert query_index(idx, P[0], Nb=1, Nr=10) == []


def test_query_tie_break_by_ref_index():
    cm = CodeModel.random(3, 20, 0)
    P = np.tile([1.0, 2.0, 3.0], (4, 1))
    res = query_index(build_index(P, cm), P[0], Nb=0, Nr=3)
    assert [c.ref_index for c in res] == [0, 1, 2]


def test_query_matches_brute_force_example():
    rng = np.random.default_rng(11)
    cm = CodeModel.random(4, 20, 5)
    P = rng.standard_normal((500, 4))
    idx = build_index(P, cm)
    for _ in range(20):
        q = rng.standard_normal(4)
        got = query_index(idx, q, Nb=1, Nr=10)
        want = brute_force_query(P, q, cm.hyperplanes, 1, 10, 100)
        assert [c.ref_index for c in got] == [i for i, _ in want]
        assert np.allclose([c.l2 for c in got], [d for _, d in want], rtol=1e-12)


# -- pooled ------------------------------------------------------------------


def test_global_single_query_equals_query_index():
    rng = np.random.default_rng(0)
    cm = CodeModel.random(4, 20, 0)
    P = rng.standard_normal((80, 4))
    idx = build_index(P, cm)
    q = rng.standard_normal((1, 4))
    res = global_correspondences(q, idx, Nr=5, Nb=2)
    assert res.top == query_index(idx, q[0], Nb=2, Nr=5)


def test_global_duplicate_queries():
    rng = np.random.default_rng(1)
    cm = CodeModel.random(4, 20, 0)
    P = rng.standard_normal((60, 4))
    idx = build_index(P, cm)
    q = np.stack([P[3], P[3]])
    res = global_correspondences(q, idx, Nr=4, Nb=1)
    assert res.top[0].l2 == 0.0 and res.top[1].l2 == 0.0
    assert [c.query_index for c in res.top[:2]] == [0, 1]


def test_global_matches_pooled_oracle():
    rng = np.random.default_rng(2)
    cm = CodeModel.random(3, 20, 9)
    R = rng.standard_normal((50, 3))
    Q = R + 0.05 * rng.standard_normal((50, 3))
    idx = build_index(R, cm)
    res = global_correspondences(Q, idx, Nr=10, Nb=1)
    pooled = []
    for i, q in enumerate(Q):
        pooled += [(d, i, r) for r, d in brute_force_query(R, q, cm.hyperplanes, 1, 10, 100)]
    pooled.sort()
    assert [(c.query_index, c.ref_index) for c in res.pooled] == [(i, r) for _, i, r in pooled]
    assert np.allclose([c.l2 for c in res.pooled], [d for d, _, _ in pooled], rtol=1e-12)
    assert res.top == res.pooled[:10]


def test_retriever_clips_pca_dim_and_is_deterministic():
    rng = np.random.default_rng(3)
    R = rng.standard_normal((40, 16))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r = Retriever(R, pca_dim=128)
    assert r.pca.d == 16
    assert Retriever(R[:10], pca_dim=128).pca.d == 9
    a = retrieve(R[:5], R, seed=3)
    b = retrieve(R[:5], R, seed=3)
    assert a.pooled == b.pooled
    assert a.top[0].l2 < 1e-9


def test_retriever_raw_rerank():
    rng = np.random.default_rng(4)
    R = rng.standard_normal((60, 16))
    r = Retriever(R, pca_dim=4, rerank_raw=True)
    res = r.match(R[:3], Nr=3, Nb=2)
    for c in res.pooled:
        assert c.l2 == pytest.approx(np.linalg.norm(R[c.query_index] - R[c.ref_index]))
    d = r.to_dict()
    assert set(d) >= {"seed", "mean", "basis", "hyperplanes"}
