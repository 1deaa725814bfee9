"""Exact k-nearest-neighbor graph construction over normalized features.

Distances are squared Euclidean, computed by brute force. Neighbor ranking
ties break toward the lower row index, the graph is made undirected by adding
reciprocal edges, and self-loops are never created. Because the ranking does
not depend on k, the sorted neighbor order can be computed once and sliced
for any k (the K sweep relies on this).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import EmptyFeatures, IndexOutOfRange, KTooLarge


def pairwise_sq_distances(features: np.ndarray) -> np.ndarray:
    """Dense (n, n) squared Euclidean distances.

    Accumulates one feature at a time so the rounding sequence per entry is
    exactly sum((a_f - b_f)^2) in column order, matching a scalar loop.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise EmptyFeatures("features must be a nonempty 2-D array")
    n = x.shape[0]
    d2 = np.zeros((n, n), dtype=np.float64)
    for col in range(x.shape[1]):
        diff = x[:, col, None] - x[None, :, col]
        d2 += diff * diff
    return d2


def neighbor_order(features: np.ndarray) -> np.ndarray:
    """(n, n-1) matrix whose row i lists all other nodes by increasing
    distance to i, ties broken by lower node index."""
    d2 = pairwise_sq_distances(features)
    n = d2.shape[0]
    if n < 2:
        raise KTooLarge("need at least 2 rows to have neighbors")
    idx = np.arange(n)
    order = np.empty((n, n - 1), dtype=np.int64)
    for i in range(n):
        ranked = np.lexsort((idx, d2[i]))
        order[i] = ranked[ranked != i]
    return order


@dataclass
class KnnGraph:
    """Undirected graph in CSR form with sorted neighbor lists per node."""

    n: int
    k: int
    indptr: np.ndarray  # (n+1,) int64
    indices: np.ndarray  # (total degree,) int64, sorted within each row
    _mean_matrix: sp.csr_matrix | None = field(default=None, repr=False)
    _mean_matrix_t: sp.csr_matrix | None = field(default=None, repr=False)
    _ego_union: object | None = field(default=None, repr=False)

    def neighbors(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexOutOfRange(f"node {i} outside [0, {self.n})")
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def degree(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise IndexOutOfRange(f"node {i} outside [0, {self.n})")
        return int(self.indptr[i + 1] - self.indptr[i])

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return int(self.indices.shape[0] // 2)

    def mean_matrix(self) -> sp.csr_matrix:
        """Row-stochastic (n, n) sparse matrix averaging over neighbors."""
        if self._mean_matrix is None:
            degrees = np.diff(self.indptr).astype(np.float64)
            data = np.repeat(1.0 / degrees, np.diff(self.indptr))
            self._mean_matrix = sp.csr_matrix(
                (data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n)
            )
        return self._mean_matrix


def graph_from_order(order: np.ndarray, k: int) -> KnnGraph:
    """Build the undirected graph for a given k from a precomputed ranking."""
    n = order.shape[0]
    if k < 1 or k >= n:
        raise KTooLarge(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    heads = np.repeat(np.arange(n, dtype=np.int64), k)
    tails = order[:, :k].reshape(-1)
    src = np.concatenate([heads, tails])
    dst = np.concatenate([tails, heads])
    keys = np.unique(src * np.int64(n) + dst)
    rows = keys // n
    cols = keys % n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    return KnnGraph(n=n, k=k, indptr=indptr, indices=cols.astype(np.int64))


def build_knn_graph(features: np.ndarray, k: int) -> KnnGraph:
    """Construct the symmetrized exact k-NN graph of the feature rows."""
    return graph_from_order(neighbor_order(features), k)


@dataclass(frozen=True)
class EgoSubgraph:
    """A center node, its direct neighborhood, and the induced edges.

    Node ids are positions into `nodes`, which lists the parent-graph ids in
    increasing order.
    """

    nodes: np.ndarray  # sorted parent ids, includes the center
    center_local: int
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return int(self.nodes.shape[0])


def ego_subgraph(graph: KnnGraph, center: int) -> EgoSubgraph:
    """Induced subgraph on the center and its neighbors."""
    if not 0 <= center < graph.n:
        raise IndexOutOfRange(f"node {center} outside [0, {graph.n})")
    members = np.sort(np.concatenate([[center], graph.neighbors(center)]))
    local = {int(p): i for i, p in enumerate(members)}
    member_set = set(local)
    indptr = [0]
    indices: list[int] = []
    for parent in members:
        row = [local[int(j)] for j in graph.neighbors(int(parent)) if int(j) in member_set]
        indices.extend(row)
        indptr.append(len(indices))
    return EgoSubgraph(
        nodes=members,
        center_local=local[center],
        indptr=np.asarray(indptr, dtype=np.int64),
        indices=np.asarray(indices, dtype=np.int64),
    )


def write_edge_list(graph: KnnGraph, path: str) -> None:
    """Dump undirected edges as "i j" lines with i < j, sorted."""
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(graph.n):
            for j in graph.neighbors(i):
                if i < j:
                    handle.write(f"{i} {int(j)}\n")
