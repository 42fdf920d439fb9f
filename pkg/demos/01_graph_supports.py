"""
Spatial supports from embeddings and geography
==============================================

Three kinds of node relations feed the spatial branch: a learned asymmetric
adjacency, a distance kernel, and hyperedges that group several nodes.
"""

import numpy as np

from sthsep.graphs import (
    adaptive_adjacency,
    gaussian_incident,
    hop_hyperedges,
    incidence,
    knn_hyperedges,
    normalize_adjacency,
    theorem1_check,
)

rng = np.random.default_rng(0)
N, d = 6, 4

# Learned adjacency: two embedding tables pass through one shared map.
# The antisymmetric difference means at most one of A[i, j], A[j, i] is positive.
E1, E2 = rng.standard_normal((N, d)), rng.standard_normal((N, d))
W = rng.standard_normal((d, N))
A = adaptive_adjacency(E1, E2, W, alpha=3.0).data
print("adaptive adjacency\n", np.round(A, 3))
print("one-sided:", bool(np.all(A * A.T == 0)))

# Distance kernel over random coordinates, thresholded at 0.1.
coords = rng.uniform(0, 10, (N, 2))
dist = np.sqrt(((coords[:, None] - coords[None]) ** 2).sum(-1))
G = gaussian_incident(dist, threshold=0.1)
print("\nkernel adjacency\n", np.round(G, 3))
print("\nsymmetric normalisation rows\n", np.round(normalize_adjacency(G), 3))

# Feature-space hyperedges: every node plus its two nearest neighbours.
hg = knn_hyperedges(rng.standard_normal((N, 3)), order_k=3)
print("\nknn hyperedges:", hg.hyperedges)
print("incidence matrix\n", incidence(hg).matrix.astype(int))

# Hop hyperedges on the kernel graph, then the membership check:
# w is within k-1 hops of v exactly when both sit in v's hyperedge.
hop = hop_hyperedges(G > 0, order_k=3)
print("\nhop hyperedges:", hop.hyperedges)
print("membership check:", theorem1_check(hop, G > 0, 3))
