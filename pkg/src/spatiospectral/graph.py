"""Sparse graph storage, Laplacians, batching and special graph constructors."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    EmptyBatch,
    FeatureDimMismatch,
    GraphError,
    InvalidSize,
    NegativeWeight,
    ThetaOutOfRange,
    ZeroDegreeNode,
)

LAPLACIAN_KINDS = ("sym", "rw", "unnormalized", "magnetic")

# the over-squashing setup caps cliques to keep m = O(n)
MAX_CLIQUE = 15


def _frozen(a):
    if a is None:
        return None
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable CSR graph.

    ``weights`` is None for binary graphs.  Undirected graphs store both
    directions of every edge.  ``labels`` holds per-node targets; unlabeled
    nodes carry -1 (integer labels) or NaN (real labels).
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray | None = None
    directed: bool = False
    node_features: np.ndarray | None = None
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "indices", _frozen(np.asarray(self.indices, dtype=np.int64)))
        if self.weights is not None:
            object.__setattr__(self, "weights", _frozen(np.asarray(self.weights, dtype=np.float64)))
        if self.node_features is not None:
            x = np.asarray(self.node_features, dtype=np.float64)
            if x.ndim == 1:
                x = x[:, None]
            object.__setattr__(self, "node_features", _frozen(x))
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(np.asarray(self.labels)))
        self._validate()

    def _validate(self):
        if len(self.indptr) != self.n + 1 or self.indptr[0] != 0:
            raise GraphError("indptr must have length n+1 and start at 0")
        if np.any(np.diff(self.indptr) < 0) or self.indptr[-1] != len(self.indices):
            raise GraphError("indptr must be nondecreasing and end at m")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.n):
            raise GraphError("column index out of range")
        if self.weights is not None:
            if len(self.weights) != len(self.indices):
                raise GraphError("weights must have one entry per edge")
            if np.any(self.weights < 0):
                raise NegativeWeight("edge weights must be nonnegative")
            if np.any(self.weights == 0):
                raise GraphError("zero-weight edges must be removed")
        if self.node_features is not None and self.node_features.shape[0] != self.n:
            raise GraphError("node_features must have n rows")

    # construction -------------------------------------------------------

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Iterable[Sequence[int]] | np.ndarray,
        weights=None,
        directed: bool = False,
        node_features=None,
        labels=None,
        meta: dict | None = None,
    ) -> "Graph":
        """Build a canonical CSR graph from an edge list.

        Duplicate edges are merged by summing their weights and zero-weight
        edges are dropped.  For undirected graphs each unordered pair is
        listed once (either orientation) and mirrored here.
        """
        if n < 0:
            raise InvalidSize("n must be nonnegative")
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        w = np.ones(len(e)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
        if len(w) != len(e):
            raise GraphError("one weight per edge required")
        if np.any(w < 0):
            raise NegativeWeight("edge weights must be nonnegative")
        if len(e) and (e.min() < 0 or e.max() >= n):
            raise GraphError("edge endpoint out of range")
        rows, cols = e[:, 0], e[:, 1]
        if not directed:
            lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
            half = sp.coo_matrix((w, (lo, hi)), shape=(n, n)).tocsr()
            half.sum_duplicates()
            coo = half.tocoo()
            offdiag = coo.row != coo.col
            rows = np.concatenate([coo.row, coo.col[offdiag]])
            cols = np.concatenate([coo.col, coo.row[offdiag]])
            w = np.concatenate([coo.data, coo.data[offdiag]])
        mat = sp.coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
        return cls.from_csr(mat, directed=directed, binary=weights is None,
                            node_features=node_features, labels=labels, meta=meta)

    @classmethod
    def from_csr(cls, mat, directed=False, binary=False, node_features=None, labels=None,
                 meta=None) -> "Graph":
        mat = sp.csr_matrix(mat, dtype=np.float64, copy=True)
        mat.sum_duplicates()
        mat.eliminate_zeros()
        mat.sort_indices()
        if np.any(mat.data < 0):
            raise NegativeWeight("edge weights must be nonnegative")
        weights = None if binary and np.all(mat.data == 1.0) else mat.data
        return cls(n=mat.shape[0], indptr=mat.indptr, indices=mat.indices, weights=weights,
                   directed=directed, node_features=node_features, labels=labels,
                   meta=dict(meta or {}))

    # accessors -----------------------------------------------------------

    @property
    def m(self) -> int:
        """Number of stored (directed) CSR entries."""
        return int(self.indptr[-1])

    @property
    def num_edges(self) -> int:
        """Edge count |E|: undirected pairs for undirected graphs."""
        if self.directed:
            return self.m
        loops = int(np.sum(self.edge_array()[0] == self.edge_array()[1]))
        return (self.m - loops) // 2 + loops

    @property
    def feature_dim(self) -> int:
        return 0 if self.node_features is None else self.node_features.shape[1]

    def edge_weights(self) -> np.ndarray:
        return np.ones(self.m) if self.weights is None else self.weights

    def adjacency(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.edge_weights(), self.indices, self.indptr), shape=(self.n, self.n))

    def binary_adjacency(self) -> sp.csr_matrix:
        """Unweighted adjacency, built once per graph and cached."""
        a = self.__dict__.get("_binary_adjacency")
        if a is None:
            a = sp.csr_matrix((np.ones(self.m), self.indices, self.indptr), shape=(self.n, self.n))
            object.__setattr__(self, "_binary_adjacency", a)
        return a

    def edge_array(self) -> tuple[np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return rows, np.asarray(self.indices)

    def degrees(self) -> np.ndarray:
        """Weighted out-degrees (row sums of A)."""
        return np.asarray(self.adjacency().sum(axis=1)).ravel()

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        ncomp, _ = connected_components(self.adjacency(), directed=self.directed, connection="weak")
        return ncomp == 1

    def replace(self, **changes) -> "Graph":
        return replace(self, **changes)

    def permute(self, perm: np.ndarray) -> "Graph":
        """Relabel nodes so that old node ``perm[i]`` becomes node ``i``."""
        perm = np.asarray(perm)
        a = self.adjacency()[perm][:, perm]
        feats = None if self.node_features is None else self.node_features[perm]
        labels = None if self.labels is None else self.labels[perm]
        return Graph.from_csr(a, directed=self.directed, binary=self.weights is None,
                              node_features=feats, labels=labels, meta=dict(self.meta))


def symmetrize(g: Graph) -> Graph:
    """Undirected graph with edge set A ∨ Aᵀ (weights merged by max)."""
    if not g.directed:
        return g
    a = g.adjacency()
    s = a.maximum(a.T).tocsr()
    return Graph.from_csr(s, directed=False, binary=g.weights is None,
                          node_features=g.node_features, labels=g.labels, meta=dict(g.meta))


# Laplacians -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Laplacian:
    """A (Hermitian, except ``rw``) graph Laplacian with solver hints.

    ``matrix`` is a scipy CSR matrix, complex128 for the magnetic kind.
    ``sqrt_deg`` holds D^{1/2}1 for the normalized kinds; for a connected
    graph with kind ``sym`` it spans the null space.
    """

    matrix: sp.csr_matrix
    kind: str
    q: float = 0.0
    degrees: np.ndarray | None = None
    connected: bool = True

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.matrix.data)

    @property
    def sqrt_deg(self) -> np.ndarray | None:
        return None if self.degrees is None else np.sqrt(self.degrees)

    def symmetric_form(self) -> sp.csr_matrix:
        """Hermitian matrix with the same spectrum (D^{1/2} L_rw D^{-1/2} for ``rw``)."""
        if self.kind != "rw":
            return self.matrix
        s = np.sqrt(self.degrees)
        return (sp.diags(s) @ self.matrix @ sp.diags(1.0 / s)).tocsr()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _normalized_adjacency(a: sp.csr_matrix, deg: np.ndarray) -> sp.csr_matrix:
    inv = 1.0 / np.sqrt(deg)
    return (sp.diags(inv) @ a @ sp.diags(inv)).tocsr()


def build_laplacian(g: Graph, kind: str = "sym", q: float = 0.0) -> Laplacian:
    """Graph Laplacian of the requested kind.

    sym:          I - D^{-1/2} A D^{-1/2}
    rw:           I - D^{-1} A
    unnormalized: D - A
    magnetic:     I - (D_s^{-1/2} A_s D_s^{-1/2}) ∘ exp(i 2π q (A - Aᵀ))

    Directed graphs are symmetrized for the real kinds.  The magnetic kind
    takes magnitudes and degrees from A_s = A ∨ Aᵀ and the phase from A - Aᵀ.
    """
    if kind not in LAPLACIAN_KINDS:
        raise ValueError(f"unknown Laplacian kind {kind!r}")
    if kind == "magnetic" and not (0.0 <= q <= 2 * np.pi):
        raise ValueError("magnetic potential q must lie in [0, 2π]")
    sym_g = symmetrize(g)
    a_s = sym_g.adjacency()
    deg = np.asarray(a_s.sum(axis=1)).ravel()
    n = g.n
    eye = sp.identity(n, format="csr")
    connected = sym_g.is_connected()
    if kind == "unnormalized":
        return Laplacian((sp.diags(deg) - a_s).tocsr(), kind, degrees=deg, connected=connected)
    if np.any(deg <= 0):
        raise ZeroDegreeNode(f"node {int(np.argmin(deg))} has zero degree")
    if kind == "sym":
        mat = (eye - _normalized_adjacency(a_s, deg)).tocsr()
    elif kind == "rw":
        mat = (eye - sp.diags(1.0 / deg) @ a_s).tocsr()
    else:
        a = g.adjacency()
        skew = (a - a.T).tocsr()
        norm = _normalized_adjacency(a_s, deg).tocoo()
        phase = np.asarray(skew[norm.row, norm.col]).ravel()
        vals = norm.data * np.exp(1j * 2 * np.pi * q * phase)
        off = sp.csr_matrix((vals, (norm.row, norm.col)), shape=(n, n), dtype=np.complex128)
        mat = (sp.identity(n, dtype=np.complex128, format="csr") - off).tocsr()
    mat.sort_indices()
    return Laplacian(mat, kind, q=float(q), degrees=deg, connected=connected)


# batching -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BatchedGraph:
    """Several graphs viewed as one block-diagonal graph (kept sparse)."""

    graphs: tuple
    node_offsets: np.ndarray
    k_offsets: np.ndarray | None = None

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    @property
    def n(self) -> int:
        return int(self.node_offsets[-1])

    def node_graph_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_graphs), np.diff(self.node_offsets))

    def adjacency(self) -> sp.csr_matrix:
        return sp.block_diag([g.adjacency() for g in self.graphs], format="csr")

    def node_features(self) -> np.ndarray | None:
        if self.graphs[0].node_features is None:
            return None
        return np.vstack([g.node_features for g in self.graphs])

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[a:b] for a, b in zip(self.node_offsets[:-1], self.node_offsets[1:])]


def batch(graphs: Sequence[Graph]) -> BatchedGraph:
    if len(graphs) == 0:
        raise EmptyBatch("cannot batch an empty list of graphs")
    dims = {g.feature_dim for g in graphs}
    if len(dims) > 1:
        raise FeatureDimMismatch(f"feature dimensions differ: {sorted(dims)}")
    offsets = np.concatenate([[0], np.cumsum([g.n for g in graphs])]).astype(np.int64)
    return BatchedGraph(tuple(graphs), offsets)


# constructors ---------------------------------------------------------------


def _check_size(n: int, minimum: int = 1):
    if int(n) != n or n < minimum:
        raise InvalidSize(f"size must be an integer >= {minimum}, got {n}")


def path(n: int, directed: bool = False) -> Graph:
    _check_size(n)
    e = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return Graph.from_edges(n, e, directed=directed)


def cycle(n: int) -> Graph:
    _check_size(n, 3)
    e = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    return Graph.from_edges(n, e)


ring = cycle


def clique(n: int) -> Graph:
    _check_size(n)
    iu = np.triu_indices(n, 1)
    return Graph.from_edges(n, np.stack(iu, axis=1))


def clique_path(clique_size: int, path_len: int) -> Graph:
    """Clique on nodes 0..c-1 with a path of ``path_len`` nodes hanging off node c-1.

    Node 0 and the final path node are at distance ``path_len + 1``
    (``path_len`` when c == 1).
    """
    _check_size(clique_size)
    _check_size(path_len, 0)
    c = clique_size
    iu = np.triu_indices(c, 1)
    edges = list(zip(iu[0], iu[1]))
    chain = [c - 1] + list(range(c, c + path_len))
    edges += list(zip(chain[:-1], chain[1:]))
    return Graph.from_edges(c + path_len, edges)


def random_tree(n: int, seed: int | np.random.Generator = 0) -> Graph:
    """Uniform random labeled tree (Prüfer sequence), undirected."""
    _check_size(n)
    return Graph.from_edges(n, _pruefer_edges(n, np.random.default_rng(seed)))


def _pruefer_edges(n: int, rng: np.random.Generator) -> np.ndarray:
    if n == 1:
        return np.zeros((0, 2), dtype=np.int64)
    if n == 2:
        return np.array([[0, 1]])
    seq = rng.integers(0, n, size=n - 2)
    degree = np.ones(n, dtype=np.int64)
    np.add.at(degree, seq, 1)
    import heapq

    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for s in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, s))
        degree[s] -= 1
        if degree[s] == 1:
            heapq.heappush(leaves, s)
    u, v = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((u, v))
    return np.asarray(edges, dtype=np.int64)


def orient_tree(tree: Graph, root: int) -> Graph:
    """Direct every tree edge away from ``root`` (BFS order)."""
    from scipy.sparse.csgraph import breadth_first_order

    order, pred = breadth_first_order(tree.adjacency(), root, directed=False)
    child = order[1:]
    edges = np.stack([pred[child], child], axis=1)
    return Graph.from_edges(tree.n, edges, directed=True, meta={"source": int(root)})


def random_dag(n: int, extra_edges: int | None = None, seed: int | np.random.Generator = 0) -> Graph:
    """Directed random tree from a random root plus ``extra_edges`` acyclic shortcuts.

    Extra edges always point from the earlier to the later node of one fixed
    BFS order of the tree, so the result stays acyclic with the root as the
    only source.  ``extra_edges`` defaults to floor(n/10).
    """
    _check_size(n)
    rng = np.random.default_rng(seed)
    tree = Graph.from_edges(n, _pruefer_edges(n, rng))
    root = int(rng.integers(n))
    dag = orient_tree(tree, root)
    if extra_edges is None:
        extra_edges = n // 10
    if extra_edges == 0 or n < 3:
        return dag
    from scipy.sparse.csgraph import breadth_first_order

    order = breadth_first_order(tree.adjacency(), root, directed=False, return_predecessors=False)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    src, dst = dag.edge_array()
    existing = set(zip(src.tolist(), dst.tolist()))
    max_pairs = n * (n - 1) // 2
    target = min(extra_edges, max_pairs - len(existing))
    added = []
    while len(added) < target:
        u, v = rng.integers(n, size=2)
        if u == v:
            continue
        if rank[u] > rank[v]:
            u, v = v, u
        # the root must keep in-degree 0
        if v == root or (int(u), int(v)) in existing:
            continue
        existing.add((int(u), int(v)))
        added.append((int(u), int(v)))
    edges = np.concatenate([np.stack([src, dst], axis=1), np.asarray(added, dtype=np.int64)])
    return Graph.from_edges(n, edges, directed=True, meta={"source": root})


def adversarial_triangle(theta: float) -> Graph:
    """Weighted 3-cycle: w(0,1) = sin²θ, w(1,2) = w(2,0) = cos²θ.

    Zero weights at the endpoints of the range are removed, e.g. θ = 0
    yields the path 1-2-0.  Note that the symmetrically normalized
    Laplacian of a connected 3-node graph always has spectrum
    {0, μ, 3-μ} with μ in [1, 1.5]; use :func:`eigenvalue_realizer` to place
    an arbitrary eigenvalue in [0, 2].
    """
    if not (0.0 <= theta <= np.pi / 2):
        raise ThetaOutOfRange("theta must lie in [0, π/2]")
    s2 = np.sin(theta) ** 2
    c2 = np.cos(theta) ** 2
    edges = [(0, 1), (1, 2), (2, 0)]
    return Graph.from_edges(3, edges, weights=[s2, c2, c2])


def eigenvalue_realizer(lam: float) -> Graph:
    """Weighted 4-cycle whose normalized Laplacian has spectrum {0, λ, 2-λ, 2}.

    Alternating weights a = 1 - λ/2 and b = λ/2 give a 2-regular weighted
    cycle with adjacency eigenvalues ±1 and ±(1 - λ).
    """
    if not (0.0 <= lam <= 2.0):
        raise ThetaOutOfRange("eigenvalue must lie in [0, 2]")
    a, b = 1.0 - lam / 2.0, lam / 2.0
    edges = [(0, 1), (1, 2), (2, 3), (3, 0)]
    return Graph.from_edges(4, edges, weights=[a, b, a, b])


# the five connected 3-regular graphs on 8 nodes, ordered to match the
# printed positional-encoding table (identified by adjacency spectrum)
CUBIC8_EDGES = (
    [(0, 1), (0, 6), (0, 7), (1, 3), (1, 7), (2, 4), (2, 5), (2, 7), (3, 4), (3, 6), (4, 5), (5, 6)],
    [(0, 2), (0, 3), (0, 4), (1, 3), (1, 5), (1, 7), (2, 5), (2, 6), (3, 6), (4, 6), (4, 7), (5, 7)],
    [(0, 1), (0, 6), (0, 7), (1, 6), (1, 7), (2, 3), (2, 4), (2, 5), (3, 5), (3, 6), (4, 5), (4, 7)],
    [(0, 3), (0, 4), (0, 7), (1, 2), (1, 6), (1, 7), (2, 3), (2, 4), (3, 6), (4, 5), (5, 6), (5, 7)],
    [(0, 1), (0, 4), (0, 6), (1, 3), (1, 5), (2, 3), (2, 5), (2, 7), (3, 4), (4, 7), (5, 6), (6, 7)],
)


def cubic8(index: int) -> Graph:
    """One of the five connected 3-regular graphs on 8 nodes (index 1..5)."""
    if not 1 <= index <= 5:
        raise InvalidSize("index must be in 1..5")
    return Graph.from_edges(8, CUBIC8_EDGES[index - 1])


def read_edge_list(path_or_lines, directed: bool = False) -> Graph:
    """Parse whitespace-separated ``u v [w]`` lines; ``#`` starts a comment.

    The node count is one more than the largest index unless a header line
    ``# nodes: N`` is present.
    """
    if isinstance(path_or_lines, (str, bytes)) or hasattr(path_or_lines, "__fspath__"):
        with open(path_or_lines) as fh:
            lines = fh.readlines()
    else:
        lines = list(path_or_lines)
    edges, weights, n = [], [], None
    for line in lines:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.lower().startswith("nodes:"):
                n = int(body.split(":", 1)[1])
            continue
        parts = line.split()
        edges.append((int(parts[0]), int(parts[1])))
        weights.append(float(parts[2]) if len(parts) > 2 else 1.0)
    if n is None:
        n = 1 + max((max(e) for e in edges), default=-1)
    binary = all(w == 1.0 for w in weights)
    return Graph.from_edges(n, edges, weights=None if binary else weights, directed=directed)
