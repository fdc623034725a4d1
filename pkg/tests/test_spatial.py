import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spatiospectral import autodiff as ad
from spatiospectral import graph as G
from spatiospectral import spatial as M
from spatiospectral.errors import OrderGuard, WidthMismatch

from conftest import grad_rel_error, random_connected_graph


def test_polynomial_matches_dense_powers():
    rng = np.random.default_rng(0)
    g = random_connected_graph(10, rng)
    lap = G.build_laplacian(g, "sym")
    l = lap.dense()
    gam = rng.standard_normal(5)
    h = rng.standard_normal((10, 3))
    expect = sum(c * np.linalg.matrix_power(l, j) @ h for j, c in enumerate(gam))
    np.testing.assert_allclose(M.polynomial_forward(ad.Tensor(h), lap, gam).data, expect, atol=1e-12)


def test_polynomial_per_channel_coefficients():
    rng = np.random.default_rng(1)
    lap = G.build_laplacian(G.cycle(6), "sym")
    gam = rng.standard_normal((3, 2))
    h = rng.standard_normal((6, 2))
    out = M.polynomial_forward(ad.Tensor(h), lap, gam).data
    for c in range(2):
        ref = M.polynomial_forward(ad.Tensor(h[:, [c]]), lap, gam[:, c]).data
        np.testing.assert_allclose(out[:, [c]], ref, atol=1e-12)


def test_polynomial_order_guard():
    lap = G.build_laplacian(G.path(4), "sym")
    h = ad.Tensor(np.ones((4, 1)))
    M.polynomial_forward(h, lap, np.ones(M.MAX_ORDER + 1))
    with pytest.raises(OrderGuard):
        M.polynomial_forward(h, lap, np.ones(M.MAX_ORDER + 2))
    with pytest.raises(OrderGuard):
        M.polynomial_forward(h, lap, np.ones(0))


def test_polynomial_gradients():
    rng = np.random.default_rng(2)
    lap = G.build_laplacian(random_connected_graph(7, rng), "sym")
    gam = ad.parameter(rng.standard_normal((4, 2)))
    h = ad.parameter(rng.standard_normal((7, 2)))
    f = lambda: ad.tsum(ad.square(M.polynomial_forward(h, lap, gam)))
    assert grad_rel_error(f, [gam, h]) < 1e-6


def test_gcn_operator_closed_form():
    rng = np.random.default_rng(3)
    g = random_connected_graph(8, rng, weighted=True)
    a = g.adjacency().toarray() + np.eye(8)
    d = a.sum(1)
    expect = a / np.sqrt(np.outer(d, d))
    np.testing.assert_allclose(M.gcn_operator(g).toarray(), expect, atol=1e-14)


def test_gcn_operator_symmetrizes_directed():
    op = M.gcn_operator(G.path(3, directed=True)).toarray()
    np.testing.assert_allclose(op, op.T)
    b = G.batch([G.path(3, directed=True), G.path(2, directed=True)])
    np.testing.assert_allclose(M.gcn_operator(b).toarray()[:3, :3], op)


def test_dir_operators_row_stochastic():
    fwd, bwd = M.dir_operators(G.path(4, directed=True))
    np.testing.assert_allclose(fwd.sum(1), 1)
    np.testing.assert_allclose(bwd.sum(1), 1)
    # node 1 averages itself and its in-neighbour 0 along Aᵀ
    np.testing.assert_allclose(bwd.toarray()[1], [0.5, 0.5, 0, 0])


def test_gcn_and_dirgcn_gradients():
    rng = np.random.default_rng(4)
    g = random_connected_graph(6, rng, directed=True)
    op = M.gcn_operator(g)
    ops = M.dir_operators(g)
    p = M.init_gcn(rng, 3, 3)
    q = M.init_dir_gcn(rng, 3, 3)
    h = ad.parameter(rng.standard_normal((6, 3)))
    f = lambda: ad.tsum(ad.square(M.dir_gcn_forward(M.gcn_forward(h, op, p), ops, q, "tanh")))
    assert grad_rel_error(f, [h] + p.parameters() + q.parameters()) < 1e-6


def test_gcn_width_mismatch():
    rng = np.random.default_rng(5)
    with pytest.raises(WidthMismatch):
        M.gcn_forward(ad.Tensor(np.ones((3, 2))), M.gcn_operator(G.path(3)), M.init_gcn(rng, 4, 4))


@given(st.integers(3, 20), st.integers(0, 10_000))
def test_gcn_permutation_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, rng, directed=True)
    perm = rng.permutation(n)
    p = M.init_gcn(rng, 2, 2)
    q = M.init_dir_gcn(rng, 2, 2)
    h = rng.standard_normal((n, 2))
    y1 = M.dir_gcn_forward(M.gcn_forward(ad.Tensor(h), M.gcn_operator(g), p), M.dir_operators(g), q).data
    gp = g.permute(perm)
    y2 = M.dir_gcn_forward(M.gcn_forward(ad.Tensor(h[perm]), M.gcn_operator(gp), p),
                           M.dir_operators(gp), q).data
    np.testing.assert_allclose(y2, y1[perm], atol=1e-12)


def test_s2_block_modes():
    h = ad.Tensor(np.arange(6.0).reshape(3, 2))
    double = lambda x: x * 2.0
    plus1 = lambda x: x + 1.0
    add = M.s2_block_forward(h, double, plus1, "additive")
    np.testing.assert_allclose(add.data, h.data * 2 + h.data + 1 + h.data)
    seq = M.s2_block_forward(h, double, plus1, "sequential", residual_spatial=False)
    np.testing.assert_allclose(seq.data, 2 * h.data + 1 + 2 * h.data)
    assert M.s2_block_forward(h, None, None) is h
    with pytest.raises(WidthMismatch):
        M.s2_block_forward(h, lambda x: ad.Tensor(np.ones((3, 1))), None)
    with pytest.raises(ValueError):
        M.s2_block_forward(h, double, plus1, "parallel")
