from collections import deque

import networkx as nx
import numpy as np
import pytest
from scipy.sparse.csgraph import shortest_path

from spatiospectral import datasets as D
from spatiospectral.errors import InvalidSize


def _bfs_oracle(g, src):
    adj = {u: g.indices[g.indptr[u]:g.indptr[u + 1]].tolist() for u in range(g.n)}
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return np.array([dist.get(i, np.inf) for i in range(g.n)])


def _diameter(g):
    return shortest_path(g.adjacency(), unweighted=True, directed=False).max()


@pytest.fixture(scope="module")
def lr_graphs():
    return D.gen_lr_cluster(200, seed=0).graphs


def test_lr_cluster_statistics(lr_graphs):
    sizes = np.array([g.n for g in lr_graphs])
    assert sizes.min() >= 600 and sizes.max() <= 1194
    assert abs(sizes.mean() - 897) <= 30
    assert all(g.is_connected() for g in lr_graphs)


def test_lr_cluster_diameter(lr_graphs):
    mean_diam = np.mean([_diameter(g) for g in lr_graphs])
    assert 28 <= mean_diam <= 38


def test_lr_cluster_seed_nodes(lr_graphs):
    for g in lr_graphs[:20]:
        x = g.node_features[:, 0]
        for c in range(D.NUM_CLUSTERS):
            marked = np.flatnonzero(x == c + 1)
            assert len(marked) == 1 and g.labels[marked[0]] == c
        assert np.sum(x > 0) == D.NUM_CLUSTERS


def test_lr_cluster_deterministic():
    a, b = D.lr_cluster_graph(7), D.lr_cluster_graph(7)
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_sbm_statistics():
    ds = D.gen_cluster_sbm(500, seed=0)
    sizes = np.array([g.n for g in ds.graphs])
    assert sizes.min() >= 30 and sizes.max() <= 210
    intra_edges = intra_pairs = 0
    diam = []
    for g in ds.graphs:
        a = g.adjacency().toarray() > 0
        same = g.labels[:, None] == g.labels[None, :]
        np.fill_diagonal(same, False)
        intra_edges += a[same].sum()
        intra_pairs += same.sum()
        diam.append(_diameter(g))
    assert abs(intra_edges / intra_pairs - 0.55) <= 0.03
    assert abs(np.mean(diam) - 2.2) <= 0.4


@pytest.mark.parametrize("kind", ["tree", "dag"])
def test_distance_labels_match_bfs(kind):
    ds = D.gen_distance(kind, 12, n_range=(50, 120), seed=3)
    assert ds.target == "regression"
    for g in ds.graphs:
        src = g.meta["source"]
        assert g.node_features[src, 0] == 1 and g.node_features[:, 0].sum() == 1
        np.testing.assert_array_equal(g.labels, _bfs_oracle(g, src))
        extra = g.n // 10 if kind == "dag" else 0
        assert g.num_edges == g.n - 1 + extra
        assert np.all(np.isfinite(g.labels))


def test_distance_ood_range():
    ds = D.gen_distance("tree", 3, n_range=(1000, 1099), seed=0)
    assert all(1000 <= g.n <= 1099 for g in ds.graphs)
    with pytest.raises(ValueError):
        D.distance_graph("grid", 10, 0)


def test_worked_recall_sequence():
    # keys a,e,z,h -> 0..3; values 0,b,9,2 -> 5..8; separator 10; query z
    tokens = [0, 5, 1, 6, 2, 7, 3, 8, 10, 2]
    assert D.recall_answer(tokens, 10) + 5 == 7


def test_recall_scan_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        length = 2 * int(rng.integers(10, 100))
        tokens, answer = D.assoc_recall_tokens(length, 10, rng)
        assert D.recall_answer(tokens, 10) == answer
        assert tokens[-2] == 10


def test_recall_graph_structure():
    ds = D.gen_assoc_recall(20, (20, 60), 10, seed=1)
    for g in ds.graphs:
        assert g.directed and g.num_edges == g.n - 1
        assert 20 <= g.n <= 60 and g.n % 2 == 0
        assert np.sum(g.labels >= 0) == 1 and g.labels[-1] >= 0
        assert D.recall_answer(g.node_features[:, 0].astype(int), 10) == g.labels[-1]
    assert ds.num_classes == 5 and ds.meta["num_tokens"] == 11


def test_recall_size_checks():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidSize):
        D.assoc_recall_tokens(7, 10, rng)
    with pytest.raises(InvalidSize):
        D.assoc_recall_tokens(10, 3, rng)


def test_oversquash_construction():
    ds = D.gen_oversquash()
    train = ds.split("train")
    test = ds.split("test")
    assert {g.n for g in train} == set(range(4, 51, 2))
    assert {g.n for g in test} == set(range(52, 101, 2))
    for g in train + test:
        src, tgt = g.meta["source"], g.meta["target"]
        c = g.labels[tgt]
        assert g.node_features[src, 0] == c + 1
        nxg = nx.from_scipy_sparse_array(g.adjacency())
        assert max(len(q) for q in nx.find_cliques(nxg)) <= 15
        clique = min(g.n // 2, 15)
        dist = nx.shortest_path_length(nxg, src, tgt)
        assert dist == g.n - clique + (1 if clique > 1 else 0)
    for n in (4, 50, 100):
        labels = [g.labels[g.meta["target"]] for g in train + test if g.n == n]
        assert sorted(labels) == list(range(5))


def test_oversquash_ring_mix():
    gs = D.oversquash_graphs([10], mix="both")
    assert len(gs) == 10
    ring = [g for g in gs if g.meta["target"] == 5]
    assert len(ring) == 5
    with pytest.raises(InvalidSize):
        D.oversquash_graph(5, 0)


def test_generate_dispatch_and_scale():
    ds = D.generate(D.DatasetSpec("cluster_sbm", count=20, seed=0, scale=10))
    assert len(ds) == 2
    splits = [set(v) for v in ds.splits.values()]
    assert sum(len(s) for s in splits) == len(set().union(*splits))
    with pytest.raises(ValueError):
        D.generate(D.DatasetSpec("nope"))


def test_generation_is_order_independent():
    ds = D.gen_assoc_recall(6, seed=5)
    alone = D.gen_assoc_recall(1, seed=5 + 4)
    np.testing.assert_array_equal(ds.graphs[4].node_features, alone.graphs[0].node_features)
