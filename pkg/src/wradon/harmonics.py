"""Legendre functions, semi-normalized spherical harmonics and weight analysis.

Convention: ``Y_k^n(gamma, phi) = p_k^{|n|}(cos gamma) * exp(i n phi)`` where

    p_k^n(x) = (-1)^n sqrt((k-n)!/(k+n)!) (1-x^2)^{n/2} d^n/dx^n p_k(x)

and ``p_k`` is the ordinary Legendre polynomial.  With this normalization
``int_{S^2} |Y_k^n|^2 = 4 pi / (2k+1)`` and the coefficient of ``Y_k^n`` in a
function ``W`` is ``(2k+1)/(4 pi) int W conj(Y_k^n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .grids import ScalarField3D, SphereGrid

__all__ = [
    "HarmonicCoefficients",
    "legendre_p",
    "legendre_assoc",
    "legendre_assoc_table",
    "ylm",
    "ylm_table",
    "harmonic_norm_sq",
    "index_pairs",
    "analyze_weight",
    "symmetrize",
    "truncate",
    "synthesize",
    "QuadratureOrderError",
]


class QuadratureOrderError(ValueError):
    """The sphere grid cannot integrate the requested harmonic products exactly."""


def _check_unit_interval(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-14):
        raise ValueError("Legendre argument must lie in [-1, 1]")
    return np.clip(x, -1.0, 1.0)


def legendre_p(k: int, x):
    """Ordinary Legendre polynomial p_k(x) by the three-term recurrence."""
    if k < 0:
        raise ValueError("degree must be non-negative")
    x = _check_unit_interval(x)
    p0, p1 = np.ones_like(x), x
    if k == 0:
        return p0 if p0.ndim else float(p0)
    for j in range(1, k):
        p0, p1 = p1, ((2 * j + 1) * x * p1 - j * p0) / (j + 1)
    return p1 if p1.ndim else float(p1)


def legendre_assoc_table(k_max: int, x) -> np.ndarray:
    """All p_k^n(x) for 0 <= n <= k <= k_max; shape ``(k_max+1, k_max+1) + x.shape``.

    Entries with n > k are zero.
    """
    x = _check_unit_interval(x)
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    out = np.zeros((k_max + 1, k_max + 1) + x.shape)
    pnn = np.ones_like(x)
    for n in range(k_max + 1):
        if n > 0:
            pnn = -pnn * s * np.sqrt((2 * n - 1) / (2 * n))
        out[n, n] = pnn
        if n + 1 <= k_max:
            out[n + 1, n] = x * np.sqrt(2 * n + 1) * pnn
        for k in range(n + 1, k_max):
            out[k + 1, n] = (
                (2 * k + 1) * x * out[k, n] - np.sqrt((k + n) * (k - n)) * out[k - 1, n]
            ) / np.sqrt((k + 1) ** 2 - n**2)
    return out


def _assoc_column(k: int, n: int, x: np.ndarray) -> np.ndarray:
    """p_k^n(x) by the order-n recurrence only (no full table)."""
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    p = np.ones_like(x)
    for j in range(1, n + 1):
        p = -p * s * np.sqrt((2 * j - 1) / (2 * j))
    if k == n:
        return p
    prev, cur = p, x * np.sqrt(2 * n + 1) * p
    for j in range(n + 1, k):
        prev, cur = cur, (
            (2 * j + 1) * x * cur - np.sqrt((j + n) * (j - n)) * prev
        ) / np.sqrt((j + 1) ** 2 - n**2)
    return cur


def legendre_assoc(k: int, n: int, x):
    """Semi-normalized associated Legendre function p_k^n(x), 0 <= n <= k."""
    if not 0 <= n <= k:
        raise ValueError(f"need 0 <= n <= k, got k={k}, n={n}")
    v = _assoc_column(k, n, _check_unit_interval(x))
    return v if v.ndim else float(v)


def ylm(k: int, n: int, gamma, phi):
    """Y_k^n(gamma, phi) = p_k^{|n|}(cos gamma) exp(i n phi)."""
    if abs(n) > k:
        raise ValueError(f"need |n| <= k, got k={k}, n={n}")
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < -1e-12) or np.any(gamma > np.pi + 1e-12):
        raise ValueError("gamma must lie in [0, pi]")
    v = legendre_assoc(k, abs(n), np.cos(gamma)) * np.exp(1j * n * np.asarray(phi, dtype=float))
    return v if np.ndim(v) else complex(v)


def index_pairs(k_max: int, even_only: bool = False, k_min: int = 0) -> list[tuple[int, int]]:
    ks = range(k_min, k_max + 1)
    return [(k, n) for k in ks if not (even_only and k % 2) for n in range(-k, k + 1)]


def ylm_table(k_max: int, cos_gamma, phi, pairs=None) -> np.ndarray:
    """Matrix of Y_k^n at given nodes, shape ``(len(pairs), len(nodes))``."""
    pairs = index_pairs(k_max) if pairs is None else pairs
    cos_gamma = np.asarray(cos_gamma, dtype=float)
    phi = np.asarray(phi, dtype=float)
    leg = legendre_assoc_table(k_max, cos_gamma)
    return np.array([leg[k, abs(n)] * np.exp(1j * n * phi) for k, n in pairs])


def harmonic_norm_sq(k: int, n: int = 0) -> float:
    """Analytic int_{S^2} |Y_k^n|^2 dtheta for the semi-normalized harmonics."""
    if abs(n) > k:
        raise ValueError("need |n| <= k")
    return 4.0 * np.pi / (2 * k + 1)


@dataclass(frozen=True)
class HarmonicCoefficients:
    """Coefficient fields w_{k,n}(x) of a weight, keyed by ``(k, n)``.

    ``truncation_residual`` is the largest (over voxels) quadrature estimate of
    ``||W(x,.) - W_{K_max}(x,.)||_{L2(S^2)}`` when the coefficients came from
    :func:`analyze_weight`; it is ``0.0`` for exactly specified series.
    """

    k_max: int
    entries: dict = field(repr=False)
    truncation_residual: float = 0.0

    def __post_init__(self):
        if (0, 0) not in self.entries:
            raise ValueError("entry (0, 0) is required")
        ref = self.entries[(0, 0)]
        for (k, n), f in self.entries.items():
            if not (0 <= k <= self.k_max and abs(n) <= k):
                raise ValueError(f"invalid index {(k, n)} for K_max={self.k_max}")
            if not f.same_geometry(ref):
                raise ValueError("all coefficient fields must share one grid")

    @property
    def grid(self) -> ScalarField3D:
        return self.entries[(0, 0)]

    @property
    def w00(self) -> ScalarField3D:
        return self.entries[(0, 0)]

    def get(self, k: int, n: int) -> ScalarField3D:
        """Coefficient field, zero if the entry is absent."""
        f = self.entries.get((k, n))
        return self.grid.zeros_like() if f is None else f

    def keys(self):
        return sorted(self.entries)

    def replace(self, entries, k_max=None) -> "HarmonicCoefficients":
        return HarmonicCoefficients(
            self.k_max if k_max is None else k_max, dict(entries), self.truncation_residual
        )


def check_quadrature(sphere: SphereGrid, k_max: int) -> None:
    if sphere.max_exact_degree() < k_max:
        raise QuadratureOrderError(
            f"sphere grid ({sphere.n_gamma}, {sphere.n_phi}) integrates harmonic products "
            f"exactly only up to degree {sphere.max_exact_degree()}; K_max={k_max} requested"
        )


def analyze_weight(W, grid: ScalarField3D, sphere: SphereGrid, k_max: int = 8,
                   chunk: int = 4096) -> HarmonicCoefficients:
    """Quadrature analysis of ``W(x, theta)`` into coefficient fields w_{k,n}.

    ``W`` is called as ``W(points, directions)`` and must return an array of
    shape ``(len(points), len(directions))``.
    """
    check_quadrature(sphere, k_max)
    pairs = index_pairs(k_max)
    Y = ylm_table(k_max, sphere.cos_gamma_per_direction, sphere.phi_per_direction, pairs)
    scale = np.array([(2 * k + 1) / (4.0 * np.pi) for k, _ in pairs])
    B = (np.conj(Y) * sphere.weights[None, :]).T * scale[None, :]
    pts = grid.points()
    out = np.empty((len(pts), len(pairs)), dtype=np.complex128)
    resid = 0.0
    for lo in range(0, len(pts), chunk):
        vals = np.asarray(W(pts[lo:lo + chunk], sphere.directions), dtype=np.complex128)
        c = vals @ B
        out[lo:lo + chunk] = c
        r2 = (np.abs(vals - c @ Y) ** 2) @ sphere.weights
        resid = max(resid, float(np.sqrt(np.max(r2))))
    entries = {p: grid.like(out[:, i]) for i, p in enumerate(pairs)}
    return HarmonicCoefficients(k_max, entries, resid)


def symmetrize(coeffs: HarmonicCoefficients) -> HarmonicCoefficients:
    """Coefficients of the theta-even part of the weight: odd degrees set to exactly zero."""
    return coeffs.replace({
        kn: (f if kn[0] % 2 == 0 else f.zeros_like()) for kn, f in coeffs.entries.items()
    })


def truncate(coeffs: HarmonicCoefficients, N: int, even_only: bool = False) -> HarmonicCoefficients:
    """Keep degrees ``k <= N`` (and only even ``k`` when ``even_only``)."""
    if N > coeffs.k_max or N < 0:
        raise ValueError(f"truncation degree {N} outside [0, {coeffs.k_max}]")
    keep = {
        (k, n): f for (k, n), f in coeffs.entries.items()
        if k <= N and not (even_only and k % 2)
    }
    return coeffs.replace(keep)


def sample_field(f: ScalarField3D, points) -> np.ndarray:
    """Trilinear interpolation of ``f`` at physical ``points`` (shape ``(N, 3)``)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    idx = (points - np.asarray(f.origin)[None, :]) / f.spacing
    n = np.asarray(f.dims)
    if np.any(idx < -1e-9) or np.any(idx > (n - 1)[None, :] + 1e-9):
        raise ValueError("point outside the sampled grid")
    idx = np.clip(idx, 0, n - 1).T
    re = map_coordinates(f.values.real, idx, order=1, mode="nearest")
    if not np.any(f.values.imag):
        return re.astype(np.complex128)
    return re + 1j * map_coordinates(f.values.imag, idx, order=1, mode="nearest")


def synthesize(coeffs: HarmonicCoefficients, x, gamma, phi) -> np.ndarray:
    """Evaluate sum_{k,n} w_{k,n}(x) Y_k^n(gamma, phi).

    ``x`` has shape ``(N, 3)`` (or ``(3,)``); ``gamma``/``phi`` broadcast to
    ``(M,)``.  Returns shape ``(N, M)`` (squeezed for scalar inputs).
    """
    scalar = np.ndim(x) == 1 and np.ndim(gamma) == 0 and np.ndim(phi) == 0
    gamma, phi = np.broadcast_arrays(np.atleast_1d(gamma), np.atleast_1d(phi))
    pairs = coeffs.keys()
    Y = ylm_table(coeffs.k_max, np.cos(gamma), phi, pairs)
    C = np.stack([sample_field(coeffs.entries[p], x) for p in pairs], axis=1)
    out = C @ Y
    return complex(out[0, 0]) if scalar else out
