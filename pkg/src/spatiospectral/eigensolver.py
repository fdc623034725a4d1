"""Partial eigendecomposition of graph Laplacians.

Lanczos with full reorthogonalization and locking is the production route;
``dense_evd`` (LAPACK) is the oracle it is tested against.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import KTooLarge, NotConverged, OutOfDomain, SizeGuard
from .graph import Laplacian

DENSE_MAX_N = 512


@dataclass
class LanczosConfig:
    """Solver settings.

    Attributes:
        max_iter: budget of Lanczos steps (matrix-vector products) over all
            restarts.
        tol: residual tolerance ‖Lv - λv‖ for accepting an eigenpair.
        eq_tol: absolute tolerance under which two eigenvalues count as equal.
        seed: seed of the start-vector generator.
        full_reorth: reorthogonalize against the whole basis each step.
    """

    max_iter: int = 20000
    tol: float = 1e-10
    eq_tol: float = 1e-8
    seed: int = 0
    full_reorth: bool = True

    def __post_init__(self):
        if self.tol <= 0 or self.eq_tol < 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True, eq=False)
class PartialEVD:
    """The lowest ``k_eff`` eigenpairs of a Laplacian.

    ``eigvecs`` are right eigenvectors.  For the Hermitian kinds they are
    orthonormal and the graph Fourier transform is ``eigvecs.conj().T @ x``.
    For the random-walk Laplacian they are D-orthonormal and ``analysis``
    holds the left eigenvectors (rows of the inverse), i.e. ``Vᵀ D``.
    """

    eigvals: np.ndarray
    eigvecs: np.ndarray
    k_requested: int
    k_eff: int
    residuals: np.ndarray
    kind: str = "sym"
    q: float = 0.0
    analysis: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.eigvecs.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.eigvecs)

    def gft_matrix(self) -> np.ndarray:
        """k_eff × n matrix mapping node signals to spectral coefficients."""
        if self.analysis is not None:
            return self.analysis
        return self.eigvecs.conj().T

    def truncate(self, k: int, eq_tol: float = 1e-8) -> "PartialEVD":
        """Re-apply the trailing-drop rule for a smaller request ``k``."""
        if k + 1 > self.k_eff and k != self.k_eff:
            raise KTooLarge(f"need {k + 1} stored eigenpairs, have {self.k_eff}")
        if k == self.k_eff:
            return self
        keep = drop_trailing(self.eigvals[: k + 1], eq_tol)
        return PartialEVD(
            self.eigvals[:keep].copy(),
            self.eigvecs[:, :keep].copy(),
            k,
            keep,
            self.residuals[:keep].copy(),
            self.kind,
            self.q,
            None if self.analysis is None else self.analysis[:keep].copy(),
        )


def drop_trailing(vals: np.ndarray, eq_tol: float) -> int:
    """Number of leading eigenvalues kept out of ``k+1`` computed ones.

    Every λ_j (j ≤ k) within ``eq_tol`` of λ_{k+1} is dropped so that no
    eigenspace is split.
    """
    k = len(vals) - 1
    if k <= 0:
        return 0
    last = vals[k]
    keep = k
    while keep > 0 and abs(vals[keep - 1] - last) <= eq_tol:
        keep -= 1
    return keep


def _fix_gauge(vecs: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column real and positive."""
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs) > np.abs(vecs).max(axis=0) * (1 - 1e-8), axis=0)
    pivots = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.abs(pivots) / pivots)[None, :]


def _hermitian_operator(lap: Laplacian) -> sp.csr_matrix:
    return lap.symmetric_form() if isinstance(lap, Laplacian) else sp.csr_matrix(lap)


def _finish(lap, vals, vecs, k, kind, eq_tol, computed_all):
    """Apply the drop rule and convert symmetric-form vectors back for ``rw``."""
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    keep = len(vals) if computed_all else drop_trailing(vals, eq_tol)
    vals, vecs = vals[:keep], _fix_gauge(vecs[:, :keep])
    op = _hermitian_operator(lap)
    res = np.linalg.norm(op @ vecs - vecs * vals[None, :], axis=0) if keep else np.zeros(0)
    analysis = None
    q = 0.0
    if isinstance(lap, Laplacian):
        q = lap.q
        if kind == "rw":
            s = np.sqrt(lap.degrees)
            analysis = (vecs * s[:, None]).conj().T
            vecs = vecs / s[:, None]
            res = np.linalg.norm(lap.matrix @ vecs - vecs * vals[None, :], axis=0)
    return PartialEVD(vals, vecs, k, keep, res, kind, q, analysis)


def dense_evd(lap: Laplacian | np.ndarray | sp.spmatrix) -> PartialEVD:
    """Full spectrum through LAPACK; the test oracle.

    Raises:
        SizeGuard: if n exceeds 512.
    """
    kind = lap.kind if isinstance(lap, Laplacian) else "matrix"
    op = _hermitian_operator(lap) if not isinstance(lap, np.ndarray) else lap
    n = op.shape[0]
    if n > DENSE_MAX_N:
        raise SizeGuard(f"dense_evd limited to n <= {DENSE_MAX_N}, got {n}")
    mat = op.toarray() if sp.issparse(op) else np.asarray(op)
    vals, vecs = np.linalg.eigh(mat)
    return _finish(lap, vals, vecs, n, kind, 0.0, computed_all=True)


def _orth(v, blocks):
    """Project ``v`` out of the column spaces in ``blocks`` (two passes)."""
    for _ in range(2):
        for b in blocks:
            if b.shape[1]:
                v = v - b @ (b.conj().T @ v)
    return v


def partial_evd(lap: Laplacian, k: int, cfg: LanczosConfig | None = None) -> PartialEVD:
    """Lowest eigenpairs under the trailing-drop rule.

    Computes the k+1 smallest eigenpairs, then drops every λ_j (j ≤ k) that
    equals λ_{k+1} within ``cfg.eq_tol``.  ``k = 0`` yields an empty result.

    The iteration is a thick-restart Lanczos: the basis grows by one
    fully reorthogonalized vector per step, the Rayleigh quotient is formed
    explicitly, converged low pairs are locked, and restarts keep the best
    unconverged Ritz vectors.  Once k+1 pairs are locked, a fresh random
    start in their orthogonal complement checks that no multiplicity was
    missed (Krylov spaces from one vector see one copy per eigenvalue).

    Raises:
        KTooLarge: if k >= n.
        NotConverged: if the step budget is exhausted.
    """
    cfg = cfg or LanczosConfig()
    op = _hermitian_operator(lap)
    n = op.shape[0]
    kind = lap.kind if isinstance(lap, Laplacian) else "matrix"
    if k < 0 or k >= n:
        raise KTooLarge(f"k must satisfy 0 <= k < n (k={k}, n={n})")
    dtype = np.complex128 if np.iscomplexobj(op.data) else np.float64
    if k == 0:
        empty = np.zeros((n, 0), dtype=dtype)
        return PartialEVD(np.zeros(0), empty, 0, 0, np.zeros(0), kind,
                          getattr(lap, "q", 0.0),
                          np.zeros((0, n)) if kind == "rw" else None)
    want = k + 1
    rng = np.random.default_rng(cfg.seed)

    def rand_vec():
        v = rng.standard_normal(n)
        if dtype == np.complex128:
            v = v + 1j * rng.standard_normal(n)
        return v.astype(dtype)

    locked = np.zeros((n, 0), dtype=dtype)
    locked_vals = np.zeros(0)
    if kind == "sym" and getattr(lap, "connected", False):
        null = lap.sqrt_deg.astype(dtype)
        null = null / np.linalg.norm(null)
        locked = null[:, None]
        locked_vals = np.array([np.vdot(null, op @ null).real])

    dim_max = min(n, max(2 * want + 30, 60))
    steps = 0
    worst = np.inf
    verifying = False
    q_basis = np.zeros((n, 0), dtype=dtype)
    w_basis = np.zeros((n, 0), dtype=dtype)
    nxt = rand_vec()
    while True:
        free = n - locked.shape[1]
        if free <= 0:
            break
        dim = min(dim_max, free)
        # grow the basis
        j = q_basis.shape[1]
        qb = np.zeros((n, dim), dtype=dtype)
        wb = np.zeros((n, dim), dtype=dtype)
        qb[:, :j], wb[:, :j] = q_basis, w_basis
        while j < dim:
            v = _orth(nxt, [locked, qb[:, :j]])
            nrm = np.linalg.norm(v)
            tries = 0
            while nrm < 1e-10 * max(1.0, np.linalg.norm(nxt)) and tries < 5:
                # invariant subspace reached; continue with a fresh direction
                tries += 1
                v = _orth(rand_vec(), [locked, qb[:, :j]])
                nrm = np.linalg.norm(v)
            if nrm < 1e-10:
                break
            qb[:, j] = v / nrm
            wb[:, j] = op @ qb[:, j]
            nxt = wb[:, j]
            steps += 1
            j += 1
        if steps > cfg.max_iter:
            raise NotConverged(cfg.max_iter, worst)
        q_basis, w_basis = qb[:, :j], wb[:, :j]
        h = q_basis.conj().T @ w_basis
        theta, s = np.linalg.eigh((h + h.conj().T) / 2)
        ritz = q_basis @ s
        ritz_w = w_basis @ s
        full_space = q_basis.shape[1] >= free
        need = want - len(locked_vals)
        if not verifying:
            cand = min(need, len(theta))
            res = np.linalg.norm(ritz_w[:, :cand] - ritz[:, :cand] * theta[None, :cand], axis=0)
            ok = (res <= cfg.tol) | full_space
            nconv = cand if ok.all() else int(np.argmin(ok))
            worst = float(res[nconv:].max()) if nconv < cand else 0.0
            if nconv:
                locked = np.hstack([locked, ritz[:, :nconv]])
                locked_vals = np.concatenate([locked_vals, theta[:nconv]])
            if nconv == cand:
                verifying = True
                q_basis = np.zeros((n, 0), dtype=dtype)
                w_basis = np.zeros((n, 0), dtype=dtype)
                nxt = rand_vec()
                continue
            keep = min(len(theta) - nconv, max(need - nconv + 10, (dim - nconv) // 2))
            sel = slice(nconv, nconv + keep)
            nxt = ritz_w[:, cand - 1] - theta[cand - 1] * ritz[:, cand - 1]
            q_basis, w_basis = ritz[:, sel], ritz_w[:, sel]
            continue
        res0 = np.linalg.norm(ritz_w[:, 0] - theta[0] * ritz[:, 0])
        if res0 > cfg.tol and not full_space:
            keep = max(10, dim // 2)
            nxt = ritz_w[:, 0] - theta[0] * ritz[:, 0]
            q_basis, w_basis = ritz[:, :keep], ritz_w[:, :keep]
            worst = float(res0)
            continue
        top = np.sort(locked_vals)[want - 1]
        if theta[0] < top - cfg.eq_tol:
            locked = np.hstack([locked, ritz[:, :1]])
            locked_vals = np.concatenate([locked_vals, theta[:1]])
            q_basis = np.zeros((n, 0), dtype=dtype)
            w_basis = np.zeros((n, 0), dtype=dtype)
            nxt = rand_vec()
            continue
        break

    order = np.argsort(locked_vals, kind="stable")[:want]
    vecs = locked[:, order]
    # final Rayleigh-Ritz on the locked block cleans up degenerate pairs
    h = vecs.conj().T @ (op @ vecs)
    vals, rs = np.linalg.eigh((h + h.conj().T) / 2)
    vecs = vecs @ rs
    res = np.linalg.norm(op @ vecs - vecs * vals[None, :], axis=0)
    if res.max(initial=0.0) > cfg.tol * 10:
        raise NotConverged(cfg.max_iter, float(res.max()))
    return _finish(lap, vals, vecs, k, kind, cfg.eq_tol, computed_all=False)


def decompose(lap: Laplacian, k: int, cfg: LanczosConfig | None = None,
              dense_below: int = 512) -> PartialEVD:
    """``partial_evd`` that also accepts k ≥ n and small graphs.

    Graphs with at most ``dense_below`` nodes (or with k ≥ n) go through
    LAPACK; when k ≥ n every eigenpair is kept and ``k_requested`` stays k
    so padded encodings keep a fixed width.
    """
    cfg = cfg or LanczosConfig()
    n = lap.n
    if k < 0:
        raise KTooLarge(f"k must be nonnegative, got {k}")
    if k >= n or n <= dense_below:
        full = dense_evd(lap)
        if k >= n:
            return replace(full, k_requested=k)
        return full.truncate(k, cfg.eq_tol)
    return partial_evd(lap, k, cfg)


def eigenvalue_transform(vals, kind: str | None = None, n: int | None = None) -> np.ndarray:
    """Rescale eigenvalues.

    ``arccos`` maps λ to arccos(1-λ)/π and ``narccos`` to n·arccos(1-λ)/π.
    Both use atan2(√(λ(2-λ)), 1-λ), which stays accurate near λ = 0 where
    arccos(1-λ) loses half the significant digits.

    Raises:
        OutOfDomain: for values outside [0, 2].
    """
    vals = np.asarray(vals, dtype=np.float64)
    if kind is None or kind == "none":
        return vals.copy()
    if np.any(vals < -1e-9) or np.any(vals > 2 + 1e-9):
        raise OutOfDomain("eigenvalues must lie in [0, 2]")
    lam = np.clip(vals, 0.0, 2.0)
    ang = np.arctan2(np.sqrt(lam * (2.0 - lam)), 1.0 - lam)
    if kind == "arccos":
        return ang / np.pi
    if kind == "narccos":
        if n is None:
            raise ValueError("narccos needs the node count n")
        return n * ang / np.pi
    raise ValueError(f"unknown eigenvalue transform {kind!r}")
