"""Stable eigenvector positional encodings.

Column j of the encoding is the row sum of (V diag(h_j) Vᴴ) ⊙ A, where
h_j = softmax(-(λ_j - λ)²/σ²) concentrates on the eigenspace of λ_j.
Because the filtered operator is a function of the eigenspaces (not the
individual eigenvectors), the encoding is invariant to sign, phase and
basis choice within repeated eigenvalues.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .eigensolver import PartialEVD, dense_evd
from .errors import KMismatch, NotRegular, ShapeMismatch
from .graph import Graph, build_laplacian, symmetrize


@dataclass(frozen=True)
class PEConfig:
    """k: number of requested eigenpairs; sigma: RBF width; sign: -1 weights
    the nearest eigenvalues (default), +1 is the literal positive exponent."""

    k: int
    sigma: float = 0.001
    sign: int = -1

    def __post_init__(self):
        if self.sigma <= 0 or self.k < 1:
            raise ValueError("PE needs sigma > 0 and k >= 1")
        if self.sign not in (-1, 1):
            raise ValueError("sign must be -1 or +1")


def _softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(z - z.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def rbf_weights(j: int, eigvals: np.ndarray, sigma: float = 0.001, sign: int = -1) -> np.ndarray:
    """softmax(sign·(λ_j - λ)²/σ²) over the kept eigenvalues."""
    eigvals = np.asarray(eigvals, dtype=np.float64)
    d = eigvals[j] - eigvals
    return _softmax(sign * d * d / (sigma * sigma))


def rbf_matrix(eigvals: np.ndarray, sigma: float = 0.001, sign: int = -1) -> np.ndarray:
    """Row j holds ``rbf_weights(j, ...)``."""
    eigvals = np.asarray(eigvals, dtype=np.float64)
    d = eigvals[:, None] - eigvals[None, :]
    return _softmax(sign * d * d / (sigma * sigma), axis=1)


def neighbour_sum(g: Graph, x: np.ndarray) -> np.ndarray:
    """Row i is the sum of x over the neighbours of i (binary adjacency times x)."""
    return g.binary_adjacency() @ x


def compute_pe(evd: PartialEVD, g: Graph, cfg: PEConfig | None = None, pad: bool = True) -> np.ndarray:
    """Positional encodings (n × k, or n × 2k real‖imag for complex bases).

    The mask is the binary symmetrized adjacency; weights are ignored.  The
    cost is O(k·m + n·k²): with T = V ⊙ conj(A V), column j equals T h_jᵀ.

    Raises:
        KMismatch: if ``cfg.k`` differs from the decomposition's request.
    """
    cfg = cfg or PEConfig(k=max(evd.k_requested, 1))
    if evd.n != g.n:
        raise ShapeMismatch(f"decomposition has {evd.n} nodes, graph has {g.n}")
    if cfg.k != evd.k_requested:
        raise KMismatch(f"PE configured for k={cfg.k}, decomposition computed k={evd.k_requested}")
    v = evd.eigvecs
    t = v * np.conj(neighbour_sum(symmetrize(g) if g.directed else g, v))
    h = rbf_matrix(evd.eigvals, cfg.sigma, cfg.sign)
    pe = t @ h.T
    width = cfg.k if pad else evd.k_eff
    out = np.zeros((g.n, width), dtype=pe.dtype)
    out[:, : evd.k_eff] = pe
    if np.iscomplexobj(out):
        return np.hstack([out.real, out.imag])
    return out


def pe_graph_signature(pe: np.ndarray, decimals: int = 8) -> tuple:
    """Permutation-invariant summary: rounded column sums and sorted rows."""
    pe = np.asarray(pe)
    cols = np.round(pe.sum(axis=0), decimals) + 0.0
    rows = np.round(pe, decimals) + 0.0
    rows = rows[np.lexsort(rows.T[::-1])] if rows.size else rows
    return cols, rows


def signatures_equal(a: tuple, b: tuple) -> bool:
    return (a[0].shape == b[0].shape and np.array_equal(a[0], b[0])
            and a[1].shape == b[1].shape and np.array_equal(a[1], b[1]))


def is_regular(g: Graph) -> bool:
    deg = np.diff(symmetrize(g).indptr)
    return bool(np.all(deg == deg[0])) if g.n else True


def degree_regular_spectral_collapse(g: Graph, filt: Callable[[np.ndarray], np.ndarray],
                                     kind: str = "sym") -> np.ndarray:
    """V diag(ĝ(λ)) Vᵀ 1 on a degree-regular graph.

    1 is an eigenvector of every Laplacian of a regular graph, so the
    result is the constant ĝ(0)·1: spectral filters alone cannot tell
    nodes of regular graphs apart.

    Raises:
        NotRegular: if node degrees differ.
    """
    if not is_regular(g):
        raise NotRegular("graph is not degree-regular")
    evd = dense_evd(build_laplacian(g, kind))
    v = evd.eigvecs
    resp = np.asarray(filt(evd.eigvals), dtype=np.float64)
    return (v * resp[None, :]) @ (v.conj().T @ np.ones(g.n))
