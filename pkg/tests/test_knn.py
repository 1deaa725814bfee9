"""Graph construction against a brute-force oracle plus structural properties."""

import numpy as np
import pytest

from tabsage.errors import EmptyFeatures, IndexOutOfRange, KTooLarge
from tabsage.knn import (
    build_knn_graph,
    ego_subgraph,
    graph_from_order,
    neighbor_order,
    pairwise_sq_distances,
    write_edge_list,
)


def brute_force_neighbors(points, k):
    """O(n^2) reference: full sort by (distance, index) per node."""
    n = len(points)
    out = []
    for i in range(n):
        cands = []
        for j in range(n):
            if j == i:
                continue
            d2 = float(np.sum((points[i] - points[j]) ** 2))
            cands.append((d2, j))
        cands.sort()
        out.append([j for _, j in cands[:k]])
    return out


def undirected_pairs(graph):
    pairs = set()
    for i in range(graph.n):
        for j in graph.neighbors(i):
            pairs.add((min(i, j), max(i, j)))
    return pairs


def test_line_points_k1():
    pts = np.array([[0.0], [1.0], [3.0]])
    order = neighbor_order(pts)
    assert order[0][0] == 1
    assert order[1][0] == 0
    assert order[2][0] == 1
    graph = graph_from_order(order, 1)
    assert undirected_pairs(graph) == {(0, 1), (1, 2)}
    assert [graph.degree(i) for i in range(3)] == [1, 2, 1]


def test_identical_points_tie_on_lowest_index():
    pts = np.zeros((3, 2))
    order = neighbor_order(pts)
    # directed picks all fall to the lowest admissible index
    assert order[0][0] == 1
    assert order[1][0] == 0
    assert order[2][0] == 0
    graph = build_knn_graph(pts, 1)
    # symmetrization hands node 0 the reciprocal 2-0 edge
    assert list(graph.neighbors(0)) == [1, 2]
    assert list(graph.neighbors(1)) == [0]
    assert list(graph.neighbors(2)) == [0]
    assert undirected_pairs(graph) == {(0, 1), (0, 2)}


def test_k_too_large():
    pts = np.random.default_rng(0).random((5, 2))
    with pytest.raises(KTooLarge):
        build_knn_graph(pts, 5)
    with pytest.raises(KTooLarge):
        build_knn_graph(pts, 0)


def test_empty_features():
    with pytest.raises(EmptyFeatures):
        pairwise_sq_distances(np.zeros((0, 3)))
    with pytest.raises(EmptyFeatures):
        pairwise_sq_distances(np.zeros((3, 0)))


def test_oracle_agreement_on_random_points():
    rng = np.random.default_rng(11)
    pts = rng.random((200, 8))
    # duplicated rows exercise the tie rule exactly
    pts[50] = pts[10]
    pts[51] = pts[10]
    pts[120] = pts[119]
    order = neighbor_order(pts)
    for k in (1, 3, 5):
        expected = brute_force_neighbors(pts, k)
        for i in range(200):
            assert list(order[i][:k]) == expected[i], f"node {i}, k={k}"


def test_symmetry_as_matrix():
    rng = np.random.default_rng(5)
    pts = rng.random((40, 3))
    graph = build_knn_graph(pts, 3)
    adj = np.zeros((40, 40), dtype=int)
    for i in range(40):
        adj[i, graph.neighbors(i)] = 1
    assert np.array_equal(adj, adj.T)
    assert np.all(np.diag(adj) == 0)


def test_degree_at_least_k_and_sorted_lists():
    rng = np.random.default_rng(6)
    pts = rng.random((60, 4))
    for k in (1, 2, 5):
        graph = build_knn_graph(pts, k)
        for i in range(60):
            nbrs = graph.neighbors(i)
            assert len(nbrs) >= k
            assert np.all(np.diff(nbrs) > 0)


def test_edge_count_monotone_in_k():
    rng = np.random.default_rng(7)
    pts = rng.random((50, 5))
    order = neighbor_order(pts)
    counts = [graph_from_order(order, k).n_edges for k in range(1, 10)]
    assert all(b >= a for a, b in zip(counts, counts[1:]))


def test_permutation_equivariance():
    rng = np.random.default_rng(8)
    pts = rng.random((30, 4))
    # strictly distinct pairwise distances keep the test independent of ties
    graph = build_knn_graph(pts, 2)
    perm = rng.permutation(30)
    inv = np.argsort(perm)
    graph_p = build_knn_graph(pts[perm], 2)
    base = undirected_pairs(graph)
    mapped = {(min(inv[a], inv[b]), max(inv[a], inv[b])) for a, b in base}
    assert undirected_pairs(graph_p) == mapped


def test_neighbor_order_reused_across_k():
    rng = np.random.default_rng(9)
    pts = rng.random((25, 3))
    order = neighbor_order(pts)
    for k in (1, 4, 7):
        direct = build_knn_graph(pts, k)
        via_order = graph_from_order(order, k)
        assert np.array_equal(direct.indptr, via_order.indptr)
        assert np.array_equal(direct.indices, via_order.indices)


def test_pairwise_matches_scalar_loop():
    rng = np.random.default_rng(10)
    pts = rng.random((12, 4))
    d2 = pairwise_sq_distances(pts)
    for i in range(12):
        for j in range(12):
            acc = 0.0
            for c in range(4):
                diff = pts[i, c] - pts[j, c]
                acc += diff * diff
            assert d2[i, j] == acc  # bitwise: same accumulation order


def test_ego_subgraph_on_line_example():
    pts = np.array([[0.0], [1.0], [3.0]])
    graph = build_knn_graph(pts, 1)
    ego = ego_subgraph(graph, 1)
    assert list(ego.nodes) == [0, 1, 2]
    assert ego.center_local == 1
    local_pairs = set()
    for a in range(len(ego.nodes)):
        start, stop = ego.indptr[a], ego.indptr[a + 1]
        for b in ego.indices[start:stop]:
            local_pairs.add((min(a, b), max(a, b)))
    assert local_pairs == {(0, 1), (1, 2)}


def test_ego_subgraph_size_is_degree_plus_one():
    rng = np.random.default_rng(12)
    pts = rng.random((40, 3))
    graph = build_knn_graph(pts, 3)
    for center in (0, 17, 39):
        ego = ego_subgraph(graph, center)
        assert len(ego.nodes) == graph.degree(center) + 1
        assert ego.nodes[ego.center_local] == center


def test_ego_center_out_of_range():
    pts = np.random.default_rng(13).random((10, 2))
    graph = build_knn_graph(pts, 2)
    with pytest.raises(IndexOutOfRange):
        ego_subgraph(graph, 10)


def test_edge_list_file_format(tmp_path):
    pts = np.array([[0.0], [1.0], [3.0]])
    graph = build_knn_graph(pts, 1)
    path = tmp_path / "edges.txt"
    write_edge_list(graph, str(path))
    lines = path.read_text().splitlines()
    assert lines == ["0 1", "1 2"]


def test_mean_matrix_rows_average_neighbors():
    rng = np.random.default_rng(14)
    pts = rng.random((20, 4))
    graph = build_knn_graph(pts, 3)
    h = rng.normal(size=(20, 6))
    mixed = graph.mean_matrix() @ h
    for i in range(20):
        nbrs = graph.neighbors(i)
        assert np.allclose(mixed[i], h[nbrs].mean(axis=0))
