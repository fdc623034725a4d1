"""Numerical checks of the approximation, electrostatics, ringing and
sensitivity results.

Polynomial (spatial) filters are modelled by Chebyshev interpolants, which
are within a logarithmic factor of the best uniform approximation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Chebyshev

from . import autodiff as ad
from .autodiff import Tensor
from .eigensolver import dense_evd
from .errors import DegenerateInterval, LambdaZero, OutOfDomain
from .graph import Graph, build_laplacian, eigenvalue_realizer, path
from .spectral import window_values

GRID_POINTS = 10_000


# target filters ---------------------------------------------------------------


class FilterSpec:
    """A target response ĝ on [0, 2]."""

    kind = "custom"

    def __call__(self, lam) -> np.ndarray:
        raise NotImplementedError


class Indicator0(FilterSpec):
    """1 at λ = 0, else 0 (the virtual-node filter)."""

    kind = "indicator0"

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        return (lam == 0).astype(np.float64)


@dataclass
class PolyPlusJump(FilterSpec):
    """Polynomial (coefficients in increasing order) plus a jump at λ = 0."""

    coeffs: Sequence[float] = (0.2, -0.9, 0.9, -0.25)
    jump: float = 1.0
    kind = "poly_jump"

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        return np.polynomial.polynomial.polyval(lam, self.coeffs) + self.jump * (lam == 0)


class OneOverLambda(FilterSpec):
    kind = "one_over_lambda"

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        if np.any(lam == 0):
            raise LambdaZero("1/λ is undefined at λ = 0")
        return 1.0 / lam


@dataclass
class ElectrostaticSigma(FilterSpec):
    sigma: float = 3.0
    m_max: int = 10_000
    kind = "electrostatic"

    def __call__(self, lam):
        return electrostatic_filter(lam, self.sigma, self.m_max)


@dataclass
class PowerKink(FilterSpec):
    """|λ - c|^r: r-1 times continuously differentiable, a C¹ test target for r in (1, 2)."""

    center: float = 1.2
    power: float = 1.5
    kind = "power_kink"

    def __call__(self, lam):
        return np.abs(np.asarray(lam, dtype=np.float64) - self.center) ** self.power


@dataclass
class Custom(FilterSpec):
    """Piecewise-linear interpolation of samples."""

    lams: np.ndarray = field(default_factory=lambda: np.array([0.0, 2.0]))
    values: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0]))
    kind = "custom"

    def __call__(self, lam):
        return np.interp(lam, self.lams, self.values)


# approximation -------------------------------------------------------------------


def chebyshev_fit(target: Callable, degree: int, interval=(0.0, 2.0)) -> Chebyshev:
    """Chebyshev interpolant of ``target`` at the first-kind nodes of ``interval``."""
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise DegenerateInterval(f"interval [{a}, {b}] is empty")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    return Chebyshev.interpolate(target, degree, domain=[a, b])


def eval_grid(extra: np.ndarray | None = None, a: float = 0.0, b: float = 2.0,
              points: int = GRID_POINTS) -> np.ndarray:
    grid = np.linspace(a, b, points)
    if extra is not None:
        extra = np.asarray(extra)
        grid = np.union1d(grid, extra[(extra >= a) & (extra <= b)])
    return grid


def sup_error(approx: Callable, target: Callable, grid: np.ndarray) -> float:
    if len(grid) == 0:
        return 0.0
    return float(np.max(np.abs(approx(grid) - target(grid))))


def decay_exponent(degrees: Sequence[int], errors: Sequence[float], floor: float = 1e-13) -> float:
    """Slope of log(error) against log(degree), ignoring errors at round-off level."""
    d = np.asarray(degrees, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    keep = (d > 0) & (e > floor)
    if keep.sum() < 2:
        return float("-inf")
    return float(np.polyfit(np.log(d[keep]), np.log(e[keep]), 1)[0])


@dataclass
class ApproxReport:
    method: str
    degrees: list
    grid_errors: list
    op_errors: list
    exponent: float


def _s2_filter(target, degree, lam_cut):
    poly = chebyshev_fit(target, degree, (lam_cut, 2.0))

    def f(lam):
        lam = np.asarray(lam, dtype=np.float64)
        return np.where(lam <= lam_cut, target(lam), poly(lam))

    return f


def approximation_sweep(target: Callable, degrees: Sequence[int], lam_cut: float = 0.3,
                        graph: Graph | None = None, kind: str = "rw") -> dict:
    """Compare spatial, spectral-only and S² approximations of ``target``.

    spatial:  Chebyshev interpolant on [0, 2].
    spectral: exact for λ ≤ λ_cut, zero above.
    S²:       exact for λ ≤ λ_cut plus a Chebyshev interpolant on [λ_cut, 2].

    Grid errors use 10⁴ points plus every eigenvalue of ``graph`` (default
    the path on 21 nodes).  Operator errors are the largest deviation over
    that graph's eigenvalues, which is the operator norm of the filter
    difference (in the D-weighted inner product for ``rw``).
    """
    if not 0.0 < lam_cut < 2.0:
        raise OutOfDomain("λ_cut must lie in (0, 2)")
    graph = graph if graph is not None else path(21)
    eig = dense_evd(build_laplacian(graph, kind)).eigvals
    eig = np.clip(eig, 0.0, 2.0)
    eig[np.abs(eig) < 1e-12] = 0.0
    grid = eval_grid(np.concatenate([eig, [0.0, lam_cut]]))
    reports = {}
    spectral_only = lambda lam: np.where(np.asarray(lam) <= lam_cut, target(lam), 0.0)
    for method in ("spatial", "spectral", "s2"):
        g_err, o_err = [], []
        for p in degrees:
            if method == "spatial":
                f = chebyshev_fit(target, p, (0.0, 2.0))
            elif method == "spectral":
                f = spectral_only
            else:
                f = _s2_filter(target, p, lam_cut)
            g_err.append(sup_error(f, target, grid))
            o_err.append(sup_error(f, target, eig))
        reports[method] = ApproxReport(method, list(degrees), g_err, o_err,
                                       decay_exponent(degrees, g_err))
    return reports


def adversarial_sweep(target: Callable, degrees: Sequence[int]) -> list[dict]:
    """Place a graph eigenvalue where the degree-p interpolant errs most.

    For each degree the worst grid point λ* is realized as an eigenvalue of
    a weighted 4-cycle (spectrum {0, λ*, 2-λ*, 2}); the operator-norm error
    on that graph then matches the grid sup error.
    """
    grid = eval_grid(np.array([0.0]))
    rows = []
    for p in degrees:
        poly = chebyshev_fit(target, p, (0.0, 2.0))
        err = np.abs(poly(grid) - target(grid))
        lam_star = float(grid[int(np.argmax(err))])
        g = eigenvalue_realizer(lam_star)
        eig = dense_evd(build_laplacian(g, "sym")).eigvals
        eig = np.clip(eig, 0.0, 2.0)
        eig[np.abs(eig - lam_star) < 1e-12] = lam_star
        eig[np.abs(eig) < 1e-12] = 0.0
        rows.append({
            "degree": p,
            "lambda_star": lam_star,
            "grid_error": float(err.max()),
            "op_error": sup_error(poly, target, eig),
        })
    return rows


# electrostatics ------------------------------------------------------------------


def _phi_hat(kappa: np.ndarray, sigma: float) -> np.ndarray:
    k2 = kappa * kappa
    if np.isinf(sigma):
        return 1.0 / (np.pi * k2)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = -np.expm1(-0.5 * sigma * sigma * k2) / (np.pi * k2)
    return np.where(k2 == 0, sigma * sigma / (2 * np.pi), val)


def electrostatic_filter(lam, sigma: float = np.inf, m_max: int = 10_000,
                         tail_correction: bool = True) -> np.ndarray:
    """ĝ_σ(λ) = (1/2π) Σ_m φ̂_σ(z + m) with z = arccos(1-λ)/(2π).

    φ̂_σ(κ) = (1 - exp(-σ²κ²/2))/(πκ²), and φ̂_∞ = 1/(πκ²) for which the sum
    is exactly 1/λ.  The sum runs over |m| ≤ m_max; for large |κ| both
    kernels equal 1/(πκ²), so the two tails are added in closed form with
    the midpoint rule Σ_{m>M} 1/(m+a)² ≈ 1/(M+a+½), leaving an error of
    order M⁻³ instead of the plain truncation's 1/(π²M).

    Raises:
        LambdaZero: for σ = ∞ at λ = 0.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    if np.any(lam < 0) or np.any(lam > 2):
        raise OutOfDomain("λ must lie in [0, 2]")
    if np.isinf(sigma) and np.any(lam == 0):
        raise LambdaZero("the σ = ∞ filter diverges at λ = 0")
    if m_max < 100:
        raise ValueError("m_max must be at least 100")
    z = np.arctan2(np.sqrt(lam * (2 - lam)), 1 - lam) / (2 * np.pi)
    m = np.arange(-m_max, m_max + 1, dtype=np.float64)
    out = np.empty_like(z)
    chunk = max(1, 2_000_000 // len(m))
    for s in range(0, len(z), chunk):
        zz = z[s:s + chunk, None]
        # sum from the smallest terms up to limit round-off
        terms = _phi_hat(zz + m[None, :], sigma)
        out[s:s + chunk] = np.sort(terms, axis=1).sum(axis=1)
    if tail_correction:
        out += (1.0 / (m_max + z + 0.5) + 1.0 / (m_max - z + 0.5)) / np.pi
    res = out / (2 * np.pi)
    return res if np.ndim(lam) else res[0]


def electrostatic_derivative(lam, sigma: float, h: float = 1e-5, m_max: int = 10_000) -> np.ndarray:
    """Central difference of ĝ_σ (second-order one-sided near the ends of [0, 2])."""
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    f = lambda x: electrostatic_filter(x, sigma, m_max)
    out = np.empty_like(lam)
    mid = (lam - h >= 0) & (lam + h <= 2)
    out[mid] = (f(lam[mid] + h) - f(lam[mid] - h)) / (2 * h)
    hi = ~mid & (lam + h > 2)
    if hi.any():
        x = lam[hi]
        out[hi] = (3 * f(x) - 4 * f(x - h) + f(x - 2 * h)) / (2 * h)
    lo = ~mid & ~hi
    if lo.any():
        x = lam[lo]
        out[lo] = (-3 * f(x) + 4 * f(x + h) - f(x + 2 * h)) / (2 * h)
    return out


# ringing ------------------------------------------------------------------------


@dataclass
class RingingResult:
    signal: np.ndarray
    plain: np.ndarray
    windowed: np.ndarray
    overshoot_plain: float
    overshoot_windowed: float


def rectangular_wave(n: int, periods: int = 2) -> np.ndarray:
    """0/1 square wave with ``periods`` full periods over n samples."""
    idx = np.arange(n)
    return ((idx * 2 * periods // n) % 2 == 1).astype(np.float64)


def overshoot(y: np.ndarray, x: np.ndarray) -> float:
    """Largest excursion of ``y`` outside the range of ``x``."""
    return float(max(y.max() - x.max(), x.min() - y.min(), 0.0))


def ringing_demo(n: int = 100, cutoff_k: int = 25, window: str = "tukey", signal: np.ndarray | None = None,
                 kind: str = "rw", taper: float = 0.5) -> RingingResult:
    """Ideal low-pass reconstruction of a signal on the path graph, with and without a window.

    The low pass keeps the ``cutoff_k`` lowest eigenpairs.  The window is
    evaluated on the kept eigenvalues with λ_cut halfway between the last
    kept and the first dropped eigenvalue.
    """
    evd = dense_evd(build_laplacian(path(n), kind))
    x = rectangular_wave(n) if signal is None else np.asarray(signal, dtype=np.float64)
    lam = evd.eigvals
    lam_cut = 0.5 * (lam[cutoff_k - 1] + lam[cutoff_k]) if cutoff_k < n else 2.0
    ideal = (np.arange(n) < cutoff_k).astype(np.float64)
    win = ideal * window_values(lam, lam_cut, window, taper=taper)
    coef = evd.gft_matrix() @ x
    plain = (evd.eigvecs @ (ideal * coef)).real
    windowed = (evd.eigvecs @ (win * coef)).real
    return RingingResult(x, plain, windowed, overshoot(plain, x), overshoot(windowed, x))


# sensitivity -------------------------------------------------------------------


def jacobian_sensitivity(model: Callable[[Tensor], Tensor], h0: np.ndarray, u: int, v: int) -> float:
    """‖∂h_v/∂h_u‖ as the entrywise L1 norm of the d_out × d_in block.

    Uses one backward pass per output channel.
    """
    h0 = np.asarray(h0, dtype=np.float64)
    x = ad.parameter(h0.copy())
    out = model(x)
    total = 0.0
    for c in range(out.shape[1]):
        x.grad = None
        sel = np.zeros(out.shape)
        sel[v, c] = 1.0
        ad.backward(ad.tsum(out * Tensor(sel)))
        if x.grad is not None:
            total += float(np.abs(x.grad[u]).sum())
    return total


def virtual_node_sensitivity(g: Graph, u: int, v: int, d: int, K: float, layers: int) -> float:
    """Closed form K^ℓ √(d_u d_v) d / (2|E|) for the indicator-filter model."""
    deg = g.degrees()
    return K ** layers * np.sqrt(deg[u] * deg[v]) * d / deg.sum()
