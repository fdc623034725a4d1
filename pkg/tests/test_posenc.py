import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spatiospectral import graph as G
from spatiospectral.eigensolver import decompose, dense_evd
from spatiospectral.errors import KMismatch, NotRegular, ShapeMismatch
from spatiospectral.posenc import (PEConfig, compute_pe, degree_regular_spectral_collapse,
                                   is_regular, pe_graph_signature, rbf_matrix, rbf_weights,
                                   signatures_equal)

from conftest import random_connected_graph


def _pe(g, k, kind="sym", q=0.0):
    evd = decompose(G.build_laplacian(g, kind, q), k)
    return compute_pe(evd, g, PEConfig(k=k)), evd


def test_rbf_weights_concentrate_on_eigenspace():
    lam = np.array([0.0, 0.5, 0.5, 1.0])
    np.testing.assert_allclose(rbf_weights(1, lam), [0, 0.5, 0.5, 0], atol=1e-12)
    np.testing.assert_allclose(rbf_matrix(lam).sum(axis=1), 1)
    np.testing.assert_allclose(rbf_matrix(lam)[2], rbf_weights(2, lam))


def test_config_validation():
    with pytest.raises(ValueError):
        PEConfig(k=0)
    with pytest.raises(ValueError):
        PEConfig(k=2, sigma=0)
    with pytest.raises(ValueError):
        PEConfig(k=2, sign=0)


def test_k_mismatch_and_shape_checks():
    g = G.cycle(6)
    evd = decompose(G.build_laplacian(g, "sym"), 3)
    with pytest.raises(KMismatch):
        compute_pe(evd, g, PEConfig(k=4))
    with pytest.raises(ShapeMismatch):
        compute_pe(evd, G.cycle(7), PEConfig(k=3))


def test_padding_to_requested_width():
    g = G.cycle(6)
    pe, evd = _pe(g, 4)
    assert evd.k_eff < 4
    assert pe.shape == (6, 4)
    np.testing.assert_array_equal(pe[:, evd.k_eff:], 0)
    unpadded = compute_pe(evd, g, PEConfig(k=4), pad=False)
    assert unpadded.shape == (6, evd.k_eff)


def test_brute_force_definition():
    rng = np.random.default_rng(0)
    g = random_connected_graph(9, rng)
    pe, evd = _pe(g, 5)
    a = (g.adjacency().toarray() > 0).astype(float)
    v, lam = evd.eigvecs, evd.eigvals
    for j in range(evd.k_eff):
        h = rbf_weights(j, lam)
        ref = ((v * h) @ v.T * a).sum(axis=1)
        np.testing.assert_allclose(pe[:, j], ref, atol=1e-12)


def test_complex_encoding_has_two_blocks():
    rng = np.random.default_rng(1)
    g = random_connected_graph(10, rng, directed=True)
    pe, _ = _pe(g, 4, "magnetic", 0.1)
    assert pe.shape == (10, 8)


@given(st.integers(4, 25), st.integers(0, 10_000), st.booleans())
def test_permutation_equivariance(n, seed, magnetic):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, rng, directed=magnetic)
    kind, q = ("magnetic", 0.2) if magnetic else ("sym", 0.0)
    k = min(4, n - 1)
    perm = rng.permutation(n)
    pe1, _ = _pe(g, k, kind, q)
    pe2, _ = _pe(g.permute(perm), k, kind, q)
    np.testing.assert_allclose(pe2, pe1[perm], atol=1e-9)


def test_basis_rotation_invariance_on_cycle():
    g = G.cycle(6)
    evd = dense_evd(G.build_laplacian(g, "sym"))
    pe = compute_pe(evd, g, PEConfig(k=6))
    rng = np.random.default_rng(2)
    vecs = evd.eigvecs.copy()
    for idx in ([1, 2], [3, 4]):
        q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        vecs[:, idx] = vecs[:, idx] @ q
    rotated = type(evd)(evd.eigvals, vecs, evd.k_requested, evd.k_eff, evd.residuals, evd.kind)
    np.testing.assert_allclose(compute_pe(rotated, g, PEConfig(k=6)), pe, atol=1e-12)


@pytest.mark.parametrize("index,expect", [
    (1, [3, 1.73, 1, 0.41, -1, -1, -1.73, -2.41]),
    (4, [3, 1, 1, 0.41, 0.41, -1, -2.41, -2.41]),
    (5, [3, 1, 1, 1, -1, -1, -1, -3]),
])
def test_cubic_graph_column_sums(index, expect):
    pe, _ = _pe(G.cubic8(index), 8)
    np.testing.assert_allclose(np.round(pe.sum(axis=0), 2), expect, atol=1e-9)


@pytest.mark.parametrize("index", range(1, 6))
def test_full_basis_column_sums_add_to_zero(index):
    # Σ_j 1ᵀPE_j = 1ᵀ (VVᵀ ⊙ A) 1 = tr(A) = 0 without self-loops
    pe, _ = _pe(G.cubic8(index), 8)
    assert abs(pe.sum()) < 1e-9


def test_signatures():
    rng = np.random.default_rng(3)
    g = random_connected_graph(12, rng)
    pe, _ = _pe(g, 5)
    perm = rng.permutation(12)
    pe2, _ = _pe(g.permute(perm), 5)
    assert signatures_equal(pe_graph_signature(pe), pe_graph_signature(pe2))
    other, _ = _pe(G.cubic8(1), 5)
    assert not signatures_equal(pe_graph_signature(pe), pe_graph_signature(other))


def test_regular_collapse_is_constant():
    for g in [G.cycle(7), G.cubic8(2), G.clique(5)]:
        assert is_regular(g)
        out = degree_regular_spectral_collapse(g, lambda lam: np.exp(-3 * lam) + lam ** 2)
        np.testing.assert_allclose(out, np.full(g.n, out[0]), atol=1e-9)
        np.testing.assert_allclose(out, 1.0, atol=1e-9)
    with pytest.raises(NotRegular):
        degree_regular_spectral_collapse(G.path(4), lambda lam: lam)
