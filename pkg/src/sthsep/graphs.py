"""Spatial supports: adaptive adjacency, distance-kernel adjacency and hypergraphs."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class Hypergraph:
    """Sorted, de-duplicated hyperedges over ``n`` nodes.

    ``owner[v]`` is the index of the hyperedge generated from node ``v``
    (several nodes may share one after de-duplication).
    """

    n: int
    hyperedges: tuple[tuple[int, ...], ...]
    order_k: int
    owner: tuple[int, ...] | None = None

    def __post_init__(self):
        seen = set()
        for e in self.hyperedges:
            if not e:
                raise ValueError("hyperedges must be non-empty")
            if list(e) != sorted(set(e)):
                raise ValueError(f"hyperedge {e} is not a sorted set")
            if e[0] < 0 or e[-1] >= self.n:
                raise ValueError(f"hyperedge {e} has a node index outside [0, {self.n})")
            if e in seen:
                raise ValueError(f"duplicate hyperedge {e}")
            seen.add(e)
        if self.owner is not None and len(self.owner) != self.n:
            raise ValueError("owner must list one hyperedge index per node")

    @property
    def m(self) -> int:
        return len(self.hyperedges)

    @classmethod
    def from_node_sets(cls, n: int, sets, order_k: int) -> Hypergraph:
        """Build from one candidate set per node, dropping repeats."""
        index: dict[tuple[int, ...], int] = {}
        owner = []
        for s in sets:
            e = tuple(sorted(set(int(i) for i in s)))
            if e not in index:
                index[e] = len(index)
            owner.append(index[e])
        return cls(n, tuple(index), order_k, tuple(owner))


@dataclass(frozen=True)
class IncidenceMatrix:
    n: int
    m: int
    matrix: np.ndarray  # (n, m) of 0/1

    def hyperedges(self) -> list[tuple[int, ...]]:
        return [tuple(np.flatnonzero(col).tolist()) for col in self.matrix.T]


# ---------------------------------------------------------------- pairwise supports

def shared_ffn(E: Tensor, W: Tensor, b: Tensor | None, alpha: float) -> Tensor:
    """tanh(alpha * (E W + b)), the embedding map shared by both adjacency inputs."""
    z = E @ W
    if b is not None:
        z = z + b
    return ad.tanh(alpha * z)


def adaptive_adjacency(E1, E2, W, b=None, alpha: float = 3.0) -> Tensor:
    """Asymmetric learned adjacency ReLU(tanh(alpha (F1^T F2 - F2^T F1))).

    ``E1``, ``E2`` are (N, d); ``W`` maps d -> N so F1, F2 are (N, N).
    """
    E1, E2, W = ad.as_tensor(E1), ad.as_tensor(E2), ad.as_tensor(W)
    if E1.shape != E2.shape:
        raise ShapeError("adaptive_adjacency", E1.shape, E2.shape)
    if W.shape != (E1.shape[1], E1.shape[0]):
        raise ShapeError("adaptive_adjacency", E1.shape, W.shape, "ffn must map d -> N")
    F1 = shared_ffn(E1, W, b, alpha)
    F2 = shared_ffn(E2, W, b, alpha)
    M = F1.T @ F2 - F2.T @ F1
    return ad.relu(ad.tanh(alpha * M))


def default_sigma(distances: np.ndarray) -> float:
    d = np.asarray(distances, dtype=np.float64)
    off = d[~np.eye(d.shape[0], dtype=bool) & np.isfinite(d)]
    s = float(off.std()) if off.size else 0.0
    return s if s > 0 else 1.0


def gaussian_incident(distances, sigma: float | None = None, threshold: float = 0.1) -> np.ndarray:
    """exp(-d^2 / sigma^2) with entries below ``threshold`` zeroed and unit diagonal."""
    if distances is None:
        raise ConfigError("no distances available: supply a coords file or an edges file")
    d = np.asarray(distances, dtype=np.float64)
    if sigma is None:
        sigma = default_sigma(d)
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if not 0 <= threshold < 1:
        raise ConfigError(f"threshold must lie in [0, 1), got {threshold}")
    with np.errstate(over="ignore"):
        A = np.exp(-(d * d) / (sigma * sigma))
    A[A < threshold] = 0.0
    np.fill_diagonal(A, 1.0)
    return A


def normalize_adjacency(A):
    """D^{-1/2} (A + I) D^{-1/2} with row degrees of A + I.

    Differentiable when ``A`` is a Tensor; plain arrays give plain arrays.
    """
    if not isinstance(A, Tensor):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError("normalize_adjacency", A.shape, A.shape, "matrix must be square")
        S = A + np.eye(A.shape[0])
        dinv = 1.0 / np.sqrt(S.sum(axis=1))
        return dinv[:, None] * S * dinv[None, :]
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError("normalize_adjacency", A.shape, A.shape, "matrix must be square")
    S = A + np.eye(A.shape[0])
    dinv = ad.power(S.sum(axis=1), -0.5)
    return dinv.reshape(-1, 1) * S * dinv.reshape(1, -1)


# ---------------------------------------------------------------- hypergraphs

def hyperedge_features(E3, W, b=None, alpha: float = 3.0) -> Tensor:
    """Node features tanh(alpha * FFN(E3)) used to pick hyperedge members."""
    return shared_ffn(ad.as_tensor(E3), ad.as_tensor(W), b, alpha)


def knn_hyperedges(F3, order_k: int) -> Hypergraph:
    """One hyperedge per node: itself plus its ``order_k - 1`` nearest neighbours.

    Euclidean distance in feature space; ties go to the smaller node index.
    """
    F = np.asarray(F3.data if isinstance(F3, Tensor) else F3, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    n = F.shape[0]
    if not 2 <= order_k <= n:
        raise ConfigError(f"order_k must lie in [2, N={n}], got {order_k}")
    diff = F[:, None, :] - F[None, :, :]
    dist = (diff * diff).sum(axis=-1)
    sets = []
    for i in range(n):
        cand = np.delete(np.arange(n), i)
        order = np.argsort(dist[i, cand], kind="stable")
        sets.append([i, *cand[order[:order_k - 1]]])
    return Hypergraph.from_node_sets(n, sets, order_k)


def _binary_support(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError("hop_hyperedges", A.shape, A.shape, "support must be square")
    B = A != 0
    np.fill_diagonal(B, False)
    return B


def bfs_within(adj: list[list[int]], source: int, depth: int) -> set[int]:
    """Nodes reachable from ``source`` in at most ``depth`` edges (source included)."""
    seen = {source}
    frontier = deque([(source, 0)])
    while frontier:
        u, d = frontier.popleft()
        if d == depth:
            continue
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                frontier.append((w, d + 1))
    return seen


def hop_hyperedges(A, order_k: int) -> Hypergraph:
    """Hyperedge per node from its (order_k - 1)-hop neighbourhood."""
    if order_k < 2:
        raise ConfigError(f"order_k must be >= 2, got {order_k}")
    B = _binary_support(A)
    n = B.shape[0]
    adj = [np.flatnonzero(B[i] | B[:, i]).tolist() for i in range(n)]
    sets = [bfs_within(adj, v, order_k - 1) for v in range(n)]
    return Hypergraph.from_node_sets(n, sets, order_k)


def incidence(hg: Hypergraph) -> IncidenceMatrix:
    H = np.zeros((hg.n, hg.m))
    for j, e in enumerate(hg.hyperedges):
        H[list(e), j] = 1.0
    return IncidenceMatrix(hg.n, hg.m, H)


def hyperdegree(H: IncidenceMatrix) -> np.ndarray:
    return H.matrix.sum(axis=1)


# ---------------------------------------------------------------- hop/membership equivalence

@dataclass(frozen=True)
class HopCheckResult:
    passed: bool
    counterexample: tuple[int, int] | None = None
    reason: str = ""


def reach_within(A, depth: int) -> np.ndarray:
    """Boolean reachability in at most ``depth`` undirected steps via matrix powers."""
    B = _binary_support(A)
    step = (B | B.T).astype(np.int64) + np.eye(B.shape[0], dtype=np.int64)
    R = np.eye(B.shape[0], dtype=np.int64)
    for _ in range(depth):
        R = np.minimum(R @ step, 1)
    return R.astype(bool)


def theorem1_check(hg: Hypergraph, A, order_k: int) -> HopCheckResult:
    """Verify w in N_{k-1}(v)  <=>  the hyperedge of v contains both v and w, for all pairs.

    The neighbourhood side is recomputed independently of the hypergraph
    construction.  Returns the first violating (v, w) in row-major order.
    """
    if hg.owner is None:
        raise ValueError("theorem1_check needs a hypergraph that records each node's hyperedge")
    R = reach_within(A, order_k - 1)
    n = R.shape[0]
    if hg.n != n:
        return HopCheckResult(False, None, f"hypergraph has {hg.n} nodes, graph has {n}")
    for v in range(n):
        e = set(hg.hyperedges[hg.owner[v]])
        for w in range(n):
            lhs = bool(R[v, w])
            rhs = v in e and w in e
            if lhs != rhs:
                why = "reachable but not covered" if lhs else "covered but not reachable"
                return HopCheckResult(False, (v, w), why)
    return HopCheckResult(True)
