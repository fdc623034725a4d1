"""Deterministic generators for the synthetic tasks.

Every generator derives graph i from seed ``seed + i`` so datasets can be
produced in any order (or in parallel) with identical results.  Node
features are small integer codes stored as one float column; models embed
them.  Unlabeled nodes carry label -1 (classes) or NaN (regression).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from .errors import GenerationFailed, InvalidSize
from .graph import MAX_CLIQUE, Graph, _pruefer_edges, clique_path, cycle, orient_tree, random_dag

TASKS = ("lr_cluster", "cluster_sbm", "tree_dist", "dag_dist", "assoc_recall", "oversquash")
NUM_CLUSTERS = 6
# full-scale LR-CLUSTER split sizes
LR_CLUSTER_SPLITS = (10_000, 1_000, 1_000)


@dataclass
class LabeledDataset:
    """Graphs plus disjoint split index lists and task metadata."""

    graphs: list
    splits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.graphs)

    def split(self, name: str) -> list:
        return [self.graphs[i] for i in self.splits.get(name, [])]

    @property
    def task(self) -> str:
        return self.meta.get("task", "")

    @property
    def num_classes(self) -> int:
        return int(self.meta.get("num_classes", 0))

    @property
    def target(self) -> str:
        return self.meta.get("target", "class")

    @classmethod
    def from_parts(cls, parts: dict, meta: dict) -> "LabeledDataset":
        """Concatenate named parts (e.g. train/val/test lists) into one dataset."""
        graphs, splits, off = [], {}, 0
        for name, gs in parts.items():
            graphs.extend(gs)
            splits[name] = list(range(off, off + len(gs)))
            off += len(gs)
        return cls(graphs, splits, dict(meta))


def _split_fractions(count: int, fractions=(0.8, 0.1, 0.1)) -> dict:
    n_train = int(round(count * fractions[0]))
    n_val = int(round(count * fractions[1]))
    idx = list(range(count))
    return {"train": idx[:n_train], "val": idx[n_train:n_train + n_val], "test": idx[n_train + n_val:]}


def _seed_features(labels: np.ndarray, rng: np.random.Generator, num_classes: int) -> np.ndarray:
    """Zero features except one random seed node per class carrying c + 1."""
    x = np.zeros(len(labels))
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if len(members):
            x[rng.choice(members)] = c + 1
    return x


# clustering ---------------------------------------------------------------


def lr_cluster_graph(seed: int, max_tries: int = 1000) -> Graph:
    """One LR-CLUSTER graph: a 6-component Gaussian mixture on a kNN graph."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        centers = rng.uniform(0.0, 10.0, size=(NUM_CLUSTERS, 2))
        sizes = rng.integers(100, 200, size=NUM_CLUSTERS)
        pts = np.concatenate([rng.normal(centers[c], 2.0, size=(s, 2)) for c, s in enumerate(sizes)])
        # equal weights and a shared covariance: the most likely component is the nearest center
        d_center = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        labels = np.argmin(d_center, axis=1)
        n = len(pts)
        sq = (pts * pts).sum(1)
        dist = sq[:, None] + sq[None, :] - 2 * pts @ pts.T
        # the neighbour query counts the node itself (as common kNN routines
        # do), so e_v = 1 adds no edge; self-loops are dropped below
        np.fill_diagonal(dist, -np.inf)
        e_v = rng.integers(1, 11, size=n)
        # stable sort breaks distance ties by node index
        order = np.argsort(dist, axis=1, kind="stable")[:, :10]
        src = np.repeat(np.arange(n), e_v)
        dst = np.concatenate([order[i, : e_v[i]] for i in range(n)])
        keep = src != dst
        g = Graph.from_edges(n, np.stack([src[keep], dst[keep]], axis=1))
        # merge duplicated symmetric pairs back to binary weights
        g = Graph.from_csr((g.adjacency() > 0).astype(np.float64), binary=True)
        if g.is_connected():
            x = _seed_features(labels, rng, NUM_CLUSTERS)
            return g.replace(node_features=x[:, None], labels=labels.astype(np.int64))
    raise GenerationFailed(f"no connected LR-CLUSTER graph after {max_tries} tries (seed {seed})")


def gen_lr_cluster(count: int, seed: int = 0, fractions=(10 / 12, 1 / 12, 1 / 12)) -> LabeledDataset:
    graphs = [lr_cluster_graph(seed + i) for i in range(count)]
    return LabeledDataset(graphs, _split_fractions(count, fractions),
                          {"task": "lr_cluster", "num_classes": NUM_CLUSTERS, "target": "class",
                           "num_tokens": NUM_CLUSTERS + 1})


def sbm_graph(seed: int, p: float = 0.55, q: float = 0.25, max_tries: int = 1000) -> Graph:
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        sizes = rng.integers(5, 36, size=NUM_CLUSTERS)
        labels = np.repeat(np.arange(NUM_CLUSTERS), sizes)
        n = len(labels)
        same = labels[:, None] == labels[None, :]
        prob = np.where(same, p, q)
        upper = np.triu(rng.random((n, n)) < prob, 1)
        g = Graph.from_edges(n, np.argwhere(upper))
        if g.is_connected():
            x = _seed_features(labels, rng, NUM_CLUSTERS)
            return g.replace(node_features=x[:, None], labels=labels.astype(np.int64))
    raise GenerationFailed(f"no connected SBM graph after {max_tries} tries (seed {seed})")


def gen_cluster_sbm(count: int, seed: int = 0, fractions=(10 / 12, 1 / 12, 1 / 12)) -> LabeledDataset:
    graphs = [sbm_graph(seed + i) for i in range(count)]
    return LabeledDataset(graphs, _split_fractions(count, fractions),
                          {"task": "cluster_sbm", "num_classes": NUM_CLUSTERS, "target": "class",
                           "num_tokens": NUM_CLUSTERS + 1})


# distances -----------------------------------------------------------------


def bfs_distances(g: Graph, source: int) -> np.ndarray:
    """Hop distances along directed edges; unreachable nodes get inf."""
    dist = np.full(g.n, np.inf)
    dist[source] = 0
    frontier = [source]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for v in g.indices[g.indptr[u]:g.indptr[u + 1]]:
                if dist[v] == np.inf:
                    dist[v] = d
                    nxt.append(int(v))
        frontier = nxt
    return dist


def distance_graph(kind: str, n: int, seed: int | np.random.Generator) -> Graph:
    """Directed tree or DAG from a random source; labels are hop distances."""
    rng = np.random.default_rng(seed)
    if kind == "tree":
        tree = Graph.from_edges(n, _pruefer_edges(n, rng))
        g = orient_tree(tree, int(rng.integers(n)))
    elif kind == "dag":
        g = random_dag(n, n // 10, rng)
    else:
        raise ValueError(f"unknown distance graph kind {kind!r}")
    src = g.meta["source"]
    x = np.zeros(n)
    x[src] = 1.0
    return g.replace(node_features=x[:, None], labels=bfs_distances(g, src))


def gen_distance(kind: str, count: int, n_range=(500, 999), seed: int = 0,
                 fractions=(0.8, 0.1, 0.1)) -> LabeledDataset:
    graphs = []
    for i in range(count):
        rng = np.random.default_rng(seed + i)
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        graphs.append(distance_graph(kind, n, rng))
    return LabeledDataset(graphs, _split_fractions(count, fractions),
                          {"task": f"{kind}_dist", "target": "regression", "num_tokens": 2})


# associative recall ------------------------------------------------------------


def assoc_recall_tokens(length: int, vocab: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Token ids for one key/value sequence ending in the separator and a query key.

    Keys are ids 0..K-1, values K..vocab-1 and the separator is ``vocab``.
    Returns the tokens and the class (value index) of the answer.
    """
    if vocab < 4:
        raise InvalidSize("vocabulary must hold at least 4 tokens")
    if length < 4 or length % 2:
        raise InvalidSize("sequence length must be even and at least 4")
    n_keys = vocab // 2
    n_vals = vocab - n_keys
    mapping = rng.integers(0, n_vals, size=n_keys)
    pairs = (length - 2) // 2
    keys = rng.integers(0, n_keys, size=pairs)
    tokens = np.empty(length, dtype=np.int64)
    tokens[0:2 * pairs:2] = keys
    tokens[1:2 * pairs:2] = n_keys + mapping[keys]
    tokens[-2] = vocab
    query = int(rng.choice(np.unique(keys)))
    tokens[-1] = query
    return tokens, int(mapping[query])


def recall_answer(tokens: Sequence[int], vocab: int) -> int:
    """Scan oracle: the value following the last earlier occurrence of the query key."""
    tokens = list(tokens)
    query = tokens[-1]
    n_keys = vocab // 2
    for i in range(len(tokens) - 4, -1, -2):
        if tokens[i] == query:
            return tokens[i + 1] - n_keys
    raise ValueError("query key does not occur in the sequence")


def assoc_recall_graph(length: int, vocab: int, seed: int) -> Graph:
    rng = np.random.default_rng(seed)
    tokens, answer = assoc_recall_tokens(length, vocab, rng)
    labels = np.full(length, -1, dtype=np.int64)
    labels[-1] = answer
    e = np.stack([np.arange(length - 1), np.arange(1, length)], axis=1)
    return Graph.from_edges(length, e, directed=True, node_features=tokens[:, None].astype(np.float64),
                            labels=labels)


def gen_assoc_recall(count: int, seq_len_range=(20, 200), vocab: int = 10, seed: int = 0,
                     fractions=(0.8, 0.1, 0.1)) -> LabeledDataset:
    lo, hi = seq_len_range
    graphs = []
    for i in range(count):
        rng = np.random.default_rng(seed + i)
        length = 2 * int(rng.integers((lo + 1) // 2, hi // 2 + 1))
        graphs.append(assoc_recall_graph(length, vocab, int(rng.integers(2**62))))
    return LabeledDataset(graphs, _split_fractions(count, fractions),
                          {"task": "assoc_recall", "num_classes": vocab - vocab // 2, "target": "class",
                           "num_tokens": vocab + 1, "vocab": vocab})


# over-squashing ---------------------------------------------------------------


OVERSQUASH_CLASSES = 5


def oversquash_graph(n: int, label: int, shape: str = "clique_path") -> Graph:
    """Class code at a source node, the label at the farthest node.

    clique_path: clique of min(n/2, 15) nodes; source is clique node 0 and
    the target is the end of the path.  ring: source 0, target n/2.
    """
    if n < 4 or n % 2:
        raise InvalidSize("over-squashing graphs need an even n >= 4")
    if shape == "clique_path":
        c = min(n // 2, MAX_CLIQUE)
        g = clique_path(c, n - c)
        target = n - 1
    elif shape == "ring":
        g = cycle(n)
        target = n // 2
    else:
        raise ValueError(f"unknown shape {shape!r}")
    x = np.zeros(n)
    x[0] = label + 1
    labels = np.full(n, -1, dtype=np.int64)
    labels[target] = label
    return g.replace(node_features=x[:, None], labels=labels, meta={"source": 0, "target": target})


def oversquash_graphs(sizes: Sequence[int], mix: str = "clique_path", repeats: int = 1) -> list:
    shapes = ["clique_path", "ring"] if mix == "both" else [mix]
    out = []
    for n in sizes:
        for shape in shapes:
            for _ in range(repeats):
                for c in range(OVERSQUASH_CLASSES):
                    out.append(oversquash_graph(int(n), c, shape))
    return out


def gen_oversquash(count: int | None = None, n_range=(4, 50), mix: str = "clique_path", seed: int = 0,
                   test_range=(52, 100)) -> LabeledDataset:
    """Enumerates every even size; train and validation share the sizes in
    ``n_range`` and the test split uses ``test_range``.

    ``count`` repeats the 5-class enumeration ``count`` times per size
    (default once); graphs are fully determined by size and class, so the
    seed only orders the training split.
    """
    repeats = max(1, int(count or 1))
    train_sizes = range(n_range[0], n_range[1] + 1, 2)
    test_sizes = range(test_range[0], test_range[1] + 1, 2)
    train = oversquash_graphs(train_sizes, mix, repeats)
    order = np.random.default_rng(seed).permutation(len(train))
    train = [train[i] for i in order]
    return LabeledDataset.from_parts(
        {"train": train, "val": oversquash_graphs(train_sizes, mix, 1),
         "test": oversquash_graphs(test_sizes, mix, 1)},
        {"task": "oversquash", "num_classes": OVERSQUASH_CLASSES, "target": "class",
         "num_tokens": OVERSQUASH_CLASSES + 1})


# dispatch --------------------------------------------------------------------


@dataclass
class DatasetSpec:
    task: str
    count: int = 100
    seed: int = 0
    scale: float = 1.0
    params: dict = field(default_factory=dict)


def generate(spec: DatasetSpec) -> LabeledDataset:
    """Build the dataset named by ``spec.task``; ``scale`` divides the count."""
    count = max(1, int(round(spec.count / spec.scale)))
    p = spec.params
    if spec.task == "lr_cluster":
        return gen_lr_cluster(count, spec.seed)
    if spec.task == "cluster_sbm":
        return gen_cluster_sbm(count, spec.seed)
    if spec.task in ("tree_dist", "dag_dist"):
        return gen_distance(spec.task.split("_")[0], count, tuple(p.get("n_range", (500, 999))), spec.seed)
    if spec.task == "assoc_recall":
        return gen_assoc_recall(count, tuple(p.get("seq_len_range", (20, 200))), int(p.get("vocab", 10)),
                                spec.seed)
    if spec.task == "oversquash":
        return gen_oversquash(spec.count if "count" in p else None, tuple(p.get("n_range", (4, 50))),
                              p.get("mix", "clique_path"), spec.seed)
    raise ValueError(f"unknown task {spec.task!r}")
