"""Spectral filters: parametrization, windows, forward pass, gating,
spectral-domain MLP, normalization and readout.

All functions work on a ``SpectralBasis``, which stacks the partial
eigendecompositions of one or more graphs block-diagonally.  Per-graph
reductions in the spectral domain (the MLP gate, normalization, readout)
go through the sparse segment matrix ``seg`` so that a batched forward is
exactly the concatenation of per-graph forwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import CTensor, Tensor
from .eigensolver import PartialEVD, eigenvalue_transform
from .errors import ShapeMismatch
from .optim import uniform_init

WINDOWS = ("none", "tukey", "exp")


# basis ------------------------------------------------------------------


@dataclass(eq=False)
class SpectralBasis:
    """Eigenpairs of a batch of graphs.

    Attributes:
        eigvals: concatenated kept eigenvalues (K,).
        synth: n×K synthesis matrix V (dense for one graph, sparse block
            diagonal for batches), complex for magnetic Laplacians.
        analysis: K×n analysis matrix (Vᴴ, or the left eigenvectors for
            the random-walk Laplacian).
        seg: G×K indicator of which graph each eigenpair belongs to.
        node_seg: G×n indicator of which graph each node belongs to.
        n_per_eig: node count of the owning graph for every eigenpair.
    """

    eigvals: np.ndarray
    synth: object
    analysis: object
    seg: sp.csr_matrix
    node_seg: sp.csr_matrix
    n_per_eig: np.ndarray
    is_complex: bool = False

    @property
    def k(self) -> int:
        return len(self.eigvals)

    @property
    def n(self) -> int:
        return self.synth.shape[0]

    @classmethod
    def from_evd(cls, evd: PartialEVD) -> "SpectralBasis":
        return cls.from_evds([evd], dense=True)

    @classmethod
    def from_evds(cls, evds: Sequence[PartialEVD], dense: bool = False) -> "SpectralBasis":
        if len(evds) == 0:
            raise ShapeMismatch("need at least one decomposition")
        cplx = any(e.is_complex for e in evds)
        dtype = np.complex128 if cplx else np.float64
        eigvals = np.concatenate([e.eigvals for e in evds])
        ks = [e.k_eff for e in evds]
        ns = [e.n for e in evds]
        if dense and len(evds) == 1:
            synth = evds[0].eigvecs.astype(dtype)
            analysis = np.ascontiguousarray(evds[0].gft_matrix().astype(dtype))
        else:
            synth = sp.block_diag([sp.csr_matrix(e.eigvecs.astype(dtype)) if e.k_eff else
                                   sp.csr_matrix((e.n, 0), dtype=dtype) for e in evds],
                                  format="csr", dtype=dtype)
            analysis = sp.block_diag([sp.csr_matrix(e.gft_matrix().astype(dtype)) if e.k_eff else
                                      sp.csr_matrix((0, e.n), dtype=dtype) for e in evds],
                                     format="csr", dtype=dtype)
        g = len(evds)
        owner = np.repeat(np.arange(g), ks)
        seg = sp.csr_matrix((np.ones(len(owner)), (owner, np.arange(len(owner)))), shape=(g, len(owner)))
        node_owner = np.repeat(np.arange(g), ns)
        node_seg = sp.csr_matrix((np.ones(len(node_owner)), (node_owner, np.arange(len(node_owner)))),
                                 shape=(g, len(node_owner)))
        return cls(eigvals, synth, analysis, seg, node_seg,
                   np.repeat(np.asarray(ns, dtype=np.float64), ks), cplx)


# filter parametrization ----------------------------------------------------


def window_values(lam: np.ndarray, lam_cut: float, kind: str = "tukey", taper: float = 0.2,
                  rate: float = 1.0) -> np.ndarray:
    """Window over [0, λ_cut]; zero beyond the cut.

    tukey: 1 up to (1-taper)·λ_cut, then a half-cosine down to 0 at λ_cut.
    exp:   exp(-rate·λ/λ_cut).
    none:  1.
    """
    lam = np.asarray(lam, dtype=np.float64)
    inside = lam <= lam_cut
    if kind == "none":
        w = np.ones_like(lam)
    elif kind == "tukey":
        start = (1.0 - taper) * lam_cut
        w = np.ones_like(lam)
        if taper > 0:
            t = np.clip((lam - start) / (taper * lam_cut), 0.0, 1.0)
            w = np.where(lam > start, 0.5 * (1 + np.cos(np.pi * t)), 1.0)
    elif kind == "exp":
        w = np.exp(-rate * lam / lam_cut)
    else:
        raise ValueError(f"unknown window {kind!r}")
    return np.where(inside, w, 0.0)


@dataclass(eq=False)
class FilterParams:
    """Gaussian-smearing filter bank ĝ(λ) = (smear(λ) W [+ b]) ⊙ window(λ).

    ``assign[c]`` names the filter used by channel c (round robin, so f
    filters are shared over d channels).
    """

    centers: np.ndarray
    sigma: float
    weight: Tensor
    lam_cut: float
    window: str = "tukey"
    taper: float = 0.2
    rate: float = 1.0
    transform: str | None = None
    bias: Tensor | None = None
    assign: np.ndarray = field(default=None)

    def __post_init__(self):
        self.centers = np.sort(np.asarray(self.centers, dtype=np.float64))
        if self.sigma <= 0:
            raise ValueError("smearing width must be positive")
        if self.weight.shape[0] != len(self.centers):
            raise ShapeMismatch("weight must have one row per center")
        if self.assign is None:
            self.assign = np.arange(self.weight.shape[1])

    @property
    def num_filters(self) -> int:
        return self.weight.shape[1]

    @property
    def width(self) -> int:
        return len(self.assign)

    def parameters(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


def init_filter(rng: np.random.Generator, d: int, f: int | None = None, z: int = 32,
                lam_cut: float = 2.0, window: str = "tukey", sigma: float | None = None,
                transform: str | None = None, bias: bool = False, taper: float = 0.2) -> FilterParams:
    """Filter bank with ``z`` evenly spaced centers on [0, λ_cut] and f ≤ d filters."""
    f = d if f is None else f
    if f > d:
        raise ShapeMismatch("cannot have more filters than channels")
    centers = np.linspace(0.0, lam_cut, z)
    sigma = sigma if sigma is not None else (lam_cut / max(z - 1, 1))
    w = uniform_init(rng, z, (z, f))
    b = ad.parameter(np.zeros(f)) if bias else None
    return FilterParams(centers, sigma, w, lam_cut, window, taper=taper, transform=transform,
                        bias=b, assign=np.arange(d) % f)


def smearing(lam: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    """Unnormalized Gaussian basis exp(-(λ-c)²/(2σ²)), shape (k, z)."""
    diff = np.asarray(lam)[:, None] - centers[None, :]
    return np.exp(-diff * diff / (2 * sigma * sigma))


def filter_response(eigvals: np.ndarray, p: FilterParams, n_per_eig: np.ndarray | None = None) -> Tensor:
    """Per-eigenvalue, per-channel response (k × d); zero above λ_cut."""
    lam = np.asarray(eigvals, dtype=np.float64)
    if p.transform == "narccos":
        lam = eigenvalue_transform(lam, "arccos") * n_per_eig
    elif p.transform:
        lam = eigenvalue_transform(lam, p.transform)
    basis = Tensor(smearing(lam, p.centers, p.sigma))
    resp = basis @ p.weight
    if p.bias is not None:
        resp = resp + p.bias
    win = window_values(lam, p.lam_cut, p.window, p.taper, p.rate)
    resp = resp * Tensor(win[:, None])
    if p.num_filters == p.width and np.array_equal(p.assign, np.arange(p.width)):
        return resp
    return ad.index(resp, (slice(None), p.assign))


# gating --------------------------------------------------------------------


@dataclass(eq=False)
class GatingParams:
    """f_θ(H) = H ⊙ act(H W + b).

    ``weight`` may be replaced by a low-rank pair (``w1`` d×r, ``w2`` r×d).
    The complex variant emits H ⊙ (σ(H W_re + b_re) + i σ(H W_im + b_im)).
    """

    weight: Tensor | None
    bias: Tensor
    activation: str = "silu"
    w1: Tensor | None = None
    w2: Tensor | None = None
    weight_im: Tensor | None = None
    bias_im: Tensor | None = None

    @property
    def is_complex(self) -> bool:
        return self.weight_im is not None

    def parameters(self) -> list[Tensor]:
        ps = [t for t in (self.weight, self.w1, self.w2, self.bias, self.weight_im, self.bias_im)
              if t is not None]
        return ps


def init_gating(rng: np.random.Generator, d: int, activation: str = "silu", rank: int | None = None,
                complex_gate: bool = False) -> GatingParams:
    if rank is not None:
        return GatingParams(None, ad.parameter(np.zeros(d)), activation,
                            w1=uniform_init(rng, d, (d, rank)), w2=uniform_init(rng, rank, (rank, d)))
    if complex_gate:
        return GatingParams(uniform_init(rng, d, (d, d)), ad.parameter(np.zeros(d)), "sigmoid",
                            weight_im=uniform_init(rng, d, (d, d)), bias_im=ad.parameter(np.zeros(d)))
    return GatingParams(uniform_init(rng, d, (d, d)), ad.parameter(np.zeros(d)), activation)


def _gate_linear(h: Tensor, g: GatingParams) -> Tensor:
    if g.weight is None:
        return (h @ g.w1) @ g.w2
    return h @ g.weight


def gate(h: Tensor, g: GatingParams):
    """Apply the gate; returns a ``Tensor`` or, for complex gates, a ``CTensor``."""
    if h.shape[-1] != g.bias.shape[0]:
        raise ShapeMismatch(f"gate width {g.bias.shape[0]} does not match input {h.shape}")
    if g.is_complex:
        real = h * ad.sigmoid(_gate_linear(h, g) + g.bias)
        imag = h * ad.sigmoid(h @ g.weight_im + g.bias_im)
        return CTensor(real, imag)
    act = ad.ACTIVATIONS[g.activation]
    return h * act(_gate_linear(h, g) + g.bias)


# spectral-domain operations ---------------------------------------------------


def _is_c(x) -> bool:
    return isinstance(x, CTensor)


def _abs(x) -> Tensor:
    return ad.cabs(x) if _is_c(x) else ad.tabs(x)


def _mul_real(x, t: Tensor):
    return ad.cscale(x, t) if _is_c(x) else x * t


def _matmul(x, w: Tensor):
    return CTensor(x.re @ w, x.im @ w) if _is_c(x) else x @ w


@dataclass(eq=False)
class SpectralMLPParams:
    """Bias-free linear maps with the per-graph gate φ(Ĥ) = Ĥ ⊙ σ(1ᵀ|Ĥ| W_K)."""

    weights: list
    gate_weights: list

    def parameters(self) -> list[Tensor]:
        return list(self.weights) + list(self.gate_weights)


def init_spectral_mlp(rng: np.random.Generator, d: int, layers: int = 1) -> SpectralMLPParams:
    return SpectralMLPParams([uniform_init(rng, d, (d, d)) for _ in range(layers)],
                             [uniform_init(rng, d, (d, d)) for _ in range(layers)])


def spectral_mlp(hh, p: SpectralMLPParams, seg: sp.csr_matrix | None = None):
    """Spectral-domain network on Ĥ (k × d, real or complex).

    ``seg`` (G × k) groups rows by graph; the gate K is computed per graph
    and shared by all of that graph's eigenvectors.
    """
    if seg is None:
        seg = sp.csr_matrix(np.ones((1, hh.shape[0])))
    segt = seg.T.tocsr()
    for w, wk in zip(p.weights, p.gate_weights):
        hh = _matmul(hh, w)
        k = ad.spmm(seg, _abs(hh)) @ wk
        hh = _mul_real(hh, ad.spmm(segt, ad.sigmoid(k)))
    return hh


def spectral_normalize(hh, a, seg: sp.csr_matrix | None = None):
    """Ĥ_j ← (1-a_j) Ĥ_j + a_j Ĥ_j / ‖Ĥ_j‖ per graph and column; zero columns pass."""
    if seg is None:
        seg = sp.csr_matrix(np.ones((1, hh.shape[0])))
    a = ad.as_tensor(a)
    sq = ad.square(hh.re) + ad.square(hh.im) if _is_c(hh) else ad.square(hh)
    ss = ad.spmm(seg, sq)
    guard = Tensor((ss.data == 0).astype(np.float64))
    inv = ad.reciprocal(ad.sqrt(ss + guard))
    factor = (1.0 - a) + a * inv
    return _mul_real(hh, ad.spmm(seg.T.tocsr(), factor))


def spectral_readout(hh, seg: sp.csr_matrix | None = None) -> Tensor:
    """Σ_k |Ĥ| per graph (G × d); invariant to sign and phase of eigenvectors."""
    if seg is None:
        seg = sp.csr_matrix(np.ones((1, hh.shape[0])))
    return ad.spmm(seg, _abs(hh))


# forward -------------------------------------------------------------------


@dataclass(eq=False)
class ComplexMix:
    """Learned map back to the real domain: w_re ⊙ Re + w_im ⊙ Im."""

    w_re: Tensor
    w_im: Tensor

    @classmethod
    def init(cls, d: int) -> "ComplexMix":
        return cls(ad.parameter(np.ones(d)), ad.parameter(np.zeros(d)))

    def parameters(self) -> list[Tensor]:
        return [self.w_re, self.w_im]


def to_spectral(x, basis: SpectralBasis):
    """Ĥ = Vᴴ x."""
    if basis.is_complex or _is_c(x):
        return ad.cspmm(basis.analysis, x)
    return ad.spmm(basis.analysis, x)


def from_spectral(hh, basis: SpectralBasis):
    if basis.is_complex or _is_c(hh):
        return ad.cspmm(basis.synth, hh)
    return ad.spmm(basis.synth, hh)


def spectral_forward(h: Tensor, basis: SpectralBasis, response, gating: GatingParams | None = None,
                     mlp: SpectralMLPParams | None = None, norm_a=None,
                     mix: ComplexMix | None = None) -> Tensor:
    """V (ĝ(λ) ⊙ [Vᴴ f_θ(H)]) mapped to the real domain.

    Args:
        h: node features (n × d).
        basis: stacked eigenpairs matching ``h``'s nodes.
        response: k × d filter values (``Tensor``, array) or ``FilterParams``.
        gating: optional f_θ; identity when None.
        mlp: optional spectral-domain network applied after filtering.
        norm_a: optional spectral normalization blend per channel.
        mix: complex-to-real map; defaults to taking the real part.
    """
    if h.shape[0] != basis.n:
        raise ShapeMismatch(f"features have {h.shape[0]} rows, basis has {basis.n} nodes")
    if isinstance(response, FilterParams):
        response = filter_response(basis.eigvals, response, basis.n_per_eig)
    response = ad.as_tensor(response)
    if response.shape != (basis.k, h.shape[1]):
        raise ShapeMismatch(f"response shape {response.shape} != {(basis.k, h.shape[1])}")
    x = gate(h, gating) if gating is not None else h
    hh = to_spectral(x, basis)
    hh = _mul_real(hh, response)
    if norm_a is not None:
        hh = spectral_normalize(hh, norm_a, basis.seg)
    if mlp is not None:
        hh = spectral_mlp(hh, mlp, basis.seg)
    y = from_spectral(hh, basis)
    if _is_c(y):
        if mix is None:
            return y.re
        return y.re * mix.w_re + y.im * mix.w_im
    return y
