"""Spatial message passing and the spatio-spectral block compositions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .errors import OrderGuard, WidthMismatch
from .graph import BatchedGraph, Graph, symmetrize
from .optim import uniform_init

MAX_ORDER = 64


def polynomial_forward(h: Tensor, lap, gammas) -> Tensor:
    """Σ_j γ_j L^j H by Horner's rule (one sparse product per order).

    ``gammas`` is (p+1,) shared over channels or (p+1, d) per channel.
    """
    gammas = ad.as_tensor(gammas)
    p = gammas.shape[0] - 1
    if p < 0:
        raise OrderGuard("need at least one coefficient")
    if p > MAX_ORDER:
        raise OrderGuard(f"polynomial order {p} exceeds {MAX_ORDER}")
    mat = lap.matrix if hasattr(lap, "matrix") else lap

    def coef(j):
        c = gammas[j]
        return c if c.ndim == 1 else ad.reshape(c, (1, 1))

    y = h * coef(p)
    for j in range(p - 1, -1, -1):
        y = ad.spmm(mat, y) + h * coef(j)
    return y


def gcn_operator(g: Graph | BatchedGraph, gamma0: float = 1.0, gamma1: float = -1.0) -> sp.csr_matrix:
    """γ0 I + γ1 L̃ with L̃ the normalized Laplacian of A + I.

    The defaults give D̃^{-1/2}(A+I)D̃^{-1/2}.  Directed graphs are
    symmetrized; isolated nodes keep their self-loop.
    """
    a = g.adjacency() if isinstance(g, BatchedGraph) else symmetrize(g).adjacency()
    if isinstance(g, BatchedGraph) and any(x.directed for x in g.graphs):
        a = a.maximum(a.T)
    n = a.shape[0]
    a = (a + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = 1.0 / np.sqrt(deg)
    lap = sp.identity(n, format="csr") - sp.diags(inv) @ a @ sp.diags(inv)
    return (gamma0 * sp.identity(n, format="csr") + gamma1 * lap).tocsr()


def dir_operators(g: Graph | BatchedGraph) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Mean aggregation over out- and in-neighbours (each with a self-loop)."""
    a = g.adjacency()
    n = a.shape[0]
    out = []
    for m in (a, a.T.tocsr()):
        m = (m + sp.identity(n, format="csr")).tocsr()
        deg = np.asarray(m.sum(axis=1)).ravel()
        out.append((sp.diags(1.0 / deg) @ m).tocsr())
    return out[0], out[1]


@dataclass(eq=False)
class GCNParams:
    weight: Tensor
    bias: Tensor

    def parameters(self):
        return [self.weight, self.bias]


def init_gcn(rng: np.random.Generator, d_in: int, d_out: int) -> GCNParams:
    return GCNParams(uniform_init(rng, d_in, (d_in, d_out)), ad.parameter(np.zeros(d_out)))


def gcn_forward(h: Tensor, op, p: GCNParams, activation: str | None = "gelu") -> Tensor:
    """act(S H W + b) for a propagation operator S."""
    if h.shape[1] != p.weight.shape[0]:
        raise WidthMismatch(f"input width {h.shape[1]} != layer width {p.weight.shape[0]}")
    y = ad.spmm(op, h @ p.weight) + p.bias
    if activation is None:
        return y
    return ad.ACTIVATIONS[activation](y)


@dataclass(eq=False)
class DirGCNParams:
    w_out: Tensor
    w_in: Tensor
    bias: Tensor

    def parameters(self):
        return [self.w_out, self.w_in, self.bias]


def init_dir_gcn(rng: np.random.Generator, d_in: int, d_out: int) -> DirGCNParams:
    half = d_out // 2
    return DirGCNParams(uniform_init(rng, d_in, (d_in, half)),
                        uniform_init(rng, d_in, (d_in, d_out - half)),
                        ad.parameter(np.zeros(d_out)))


def dir_gcn_forward(h: Tensor, ops, p: DirGCNParams, activation: str | None = "gelu") -> Tensor:
    """Half-width transforms along A and Aᵀ, concatenated."""
    fwd, bwd = ops
    y = ad.concat([ad.spmm(fwd, h @ p.w_out), ad.spmm(bwd, h @ p.w_in)], axis=1) + p.bias
    return y if activation is None else ad.ACTIVATIONS[activation](y)


def s2_block_forward(h: Tensor, spatial: Callable[[Tensor], Tensor] | None,
                     spectral: Callable[[Tensor], Tensor] | None, mode: str = "additive",
                     residual_spatial: bool = False, residual_spectral: bool = True) -> Tensor:
    """One spatio-spectral block.

    additive:   h + Spectral(h) + Spatial(h)  (the input term only if residual)
    sequential: Spectral applied after Spatial, each with its own residual.
    """
    def check(y):
        if y.shape != h.shape:
            raise WidthMismatch(f"branch output {y.shape} does not match input {h.shape}")
        return y

    if mode == "additive":
        out = None
        for fn in (spatial, spectral):
            if fn is not None:
                y = check(fn(h))
                out = y if out is None else out + y
        if out is None:
            return h
        if residual_spatial or residual_spectral:
            out = out + h
        return out
    if mode == "sequential":
        x = h
        if spatial is not None:
            y = check(spatial(x))
            x = y + x if residual_spatial else y
        if spectral is not None:
            y = check(spectral(x))
            x = y + x if residual_spectral else y
        return x
    raise ValueError(f"unknown composition mode {mode!r}")
