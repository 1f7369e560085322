"""
Descriptor retrieval with PCA and binary codes
==============================================

Reference descriptors are projected with PCA, hashed to 20-bit sign codes
and stored in buckets. A query probes every bucket within Hamming distance
Nb of its own code and ranks what it finds by L2 distance.
"""

import numpy as np

from defmatch.retrieval import CodeModel, Retriever, build_index, encode_binary, fit_pca, project, query_index

rng = np.random.default_rng(0)
ref = rng.normal(size=(300, 64))
query = ref[:5] + rng.normal(0, 0.1, (5, 64))  # noisy revisits of the first five places

pca = fit_pca(ref, 16)
codes = CodeModel.random(16, 20, seed=0)
P = project(pca, ref)
print("code of reference 0:", format(encode_binary(codes, P[0]), "020b"))

idx = build_index(P, codes, bucket_cap=100)
hits = query_index(idx, project(pca, query[0]), Nb=2, Nr=3)
print("query 0 ->", [(c.ref_index, round(c.l2, 3)) for c in hits])

# the whole pipeline in one object: every query pose, pooled, best Nr overall
r = Retriever(ref, pca_dim=16, seed=0)
res = r.match(query, Nr=5, Nb=2)
print("global top:", [(c.query_index, c.ref_index) for c in res.top])
print("pooled correspondences:", len(res.pooled))
