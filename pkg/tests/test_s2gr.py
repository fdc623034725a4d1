import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spatiospectral import graph as G
from spatiospectral import s2gr
from spatiospectral.datasets import LabeledDataset, gen_assoc_recall, gen_distance
from spatiospectral.eigensolver import decompose
from spatiospectral.errors import FormatError

from conftest import random_connected_graph


def _same_graph(a, b):
    assert a.n == b.n and a.directed == b.directed
    np.testing.assert_array_equal(a.indptr, b.indptr)
    np.testing.assert_array_equal(a.indices, b.indices)
    for x, y in ((a.weights, b.weights), (a.node_features, b.node_features), (a.labels, b.labels)):
        assert (x is None) == (y is None)
        if x is not None:
            np.testing.assert_array_equal(x, y)
            assert x.dtype == y.dtype
    assert a.meta == b.meta


@given(st.integers(2, 30), st.integers(0, 10_000), st.booleans(), st.booleans())
def test_roundtrip_graphs(n, seed, weighted, directed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, rng, weighted=weighted, directed=directed)
    g = g.replace(node_features=rng.standard_normal((n, 2)), labels=rng.integers(0, 3, n),
                  meta={"source": 0, "note": "x"})
    ds = LabeledDataset([g, G.path(3)], {"train": [0], "test": [1]}, {"task": "demo", "num_classes": 3})
    back, evds = s2gr.loads(s2gr.dumps(ds))
    assert evds is None
    assert back.splits == ds.splits and back.meta == ds.meta
    for a, b in zip(ds.graphs, back.graphs):
        _same_graph(a, b)


@pytest.mark.parametrize("kind", ["sym", "rw", "magnetic"])
def test_roundtrip_evd(kind):
    rng = np.random.default_rng(1)
    g = random_connected_graph(20, rng, directed=kind == "magnetic", weighted=True)
    evd = decompose(G.build_laplacian(g, kind, 0.1), 5)
    _, evds = s2gr.loads(s2gr.dumps([g], [evd]))
    e = evds[0]
    assert (e.k_requested, e.k_eff, e.kind, e.q) == (evd.k_requested, evd.k_eff, evd.kind, evd.q)
    np.testing.assert_array_equal(e.eigvals, evd.eigvals)
    np.testing.assert_array_equal(e.eigvecs, evd.eigvecs)
    np.testing.assert_allclose(e.gft_matrix(), evd.gft_matrix(), atol=1e-12)


def test_float_labels_roundtrip():
    ds = gen_distance("tree", 2, n_range=(10, 20))
    back, _ = s2gr.loads(s2gr.dumps(ds))
    _same_graph(ds.graphs[1], back.graphs[1])


def test_bytes_are_deterministic(tmp_path):
    ds = gen_assoc_recall(5, (20, 40), seed=3)
    s2gr.write(tmp_path / "a.s2gr", ds)
    s2gr.write(tmp_path / "b.s2gr", gen_assoc_recall(5, (20, 40), seed=3))
    assert (tmp_path / "a.s2gr").read_bytes() == (tmp_path / "b.s2gr").read_bytes()
    back, _ = s2gr.read(tmp_path / "a.s2gr")
    assert len(back) == 5


def test_header_layout():
    data = s2gr.dumps([G.path(2)])
    assert data[:4] == b"S2GR"
    assert struct.unpack("<HI", data[4:10]) == (1, 1)
    n, m, flags, dim = struct.unpack("<QQII", data[10:34])
    assert (n, m, flags, dim) == (2, 2, 0, 0)


def test_corrupt_inputs():
    data = s2gr.dumps([G.path(3)])
    with pytest.raises(FormatError):
        s2gr.loads(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        s2gr.loads(data[:-3])
    with pytest.raises(FormatError):
        s2gr.loads(data + b"\0")
    bad_version = data[:4] + struct.pack("<H", 9) + data[6:]
    with pytest.raises(FormatError):
        s2gr.loads(bad_version)
    with pytest.raises(FormatError):
        s2gr.dumps([G.path(3)], [])
