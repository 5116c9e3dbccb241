"""Weight families W(x, theta) and SPECT-style test-data generators.

Every weight is a callable ``W(points, directions) -> (N, M) complex array``
with ``points`` of shape ``(N, 3)`` and unit ``directions`` of shape ``(M, 3)``.
``c_lower`` is a certified lower bound on ``|w_{0,0}|`` over the domain.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.ndimage import map_coordinates

from .grids import DomainMask, ScalarField3D, make_ball_mask, make_sphere_grid, make_uniform_grid
from .harmonics import HarmonicCoefficients, sample_field, ylm_table

__all__ = [
    "WeightFunction",
    "ConstantWeight",
    "SeriesWeight",
    "PerturbedWeight",
    "AttenuationWeight",
    "SymmetrizedWeight",
    "CallableWeight",
    "constant_weight",
    "finite_series_weight",
    "perturbed_weight",
    "attenuation_weight",
    "symmetrized_weight",
    "ray_transform",
    "make_phantom",
    "random_phantom_spec",
    "direction_angles",
]

log = logging.getLogger(__name__)


def direction_angles(directions):
    """(gamma, phi) of unit vectors, phi in [0, 2 pi)."""
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    gamma = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
    return gamma, phi


class WeightFunction:
    """Base class: subclasses implement ``__call__(points, directions)``."""

    tag = "generic"
    c_lower: float | None = None

    def __call__(self, points, directions) -> np.ndarray:
        raise NotImplementedError

    def prepare(self, points):
        """Bind ``points`` once; returns ``directions -> (N, M)`` values."""
        return lambda directions: self(points, directions)

    def __repr__(self):
        return f"{type(self).__name__}(tag={self.tag!r}, c_lower={self.c_lower})"


class CallableWeight(WeightFunction):
    def __init__(self, fn, tag="callable", c_lower=None):
        self.fn = fn
        self.tag = tag
        self.c_lower = c_lower

    def __call__(self, points, directions):
        p = np.atleast_2d(points)
        d = np.atleast_2d(directions)
        return np.broadcast_to(np.asarray(self.fn(p, d), dtype=np.complex128), (len(p), len(d)))


class ConstantWeight(WeightFunction):
    tag = "constant"

    def __init__(self, c: complex):
        if c == 0:
            raise ValueError("constant weight must be nonzero")
        self.c = complex(c)
        self.c_lower = abs(self.c)

    def __call__(self, points, directions):
        return np.full((len(np.atleast_2d(points)), len(np.atleast_2d(directions))), self.c)


def constant_weight(c: complex) -> ConstantWeight:
    return ConstantWeight(c)


class SeriesWeight(WeightFunction):
    """Finite harmonic series sum_{(k,n)} w_{k,n}(x) Y_k^n(theta).

    Coefficients are fields (sampled with trilinear interpolation) or numbers.
    """

    tag = "finite_series"

    def __init__(self, entries: dict, mask: DomainMask | None = None):
        if (0, 0) not in entries:
            raise ValueError("finite series weight needs a (0, 0) entry")
        for (k, n) in entries:
            if k < 0 or abs(n) > k:
                raise ValueError(f"invalid harmonic index {(k, n)}")
        self.entries = dict(entries)
        self.k_max = max(k for k, _ in self.entries)
        self.pairs = sorted(self.entries)
        w00 = self.entries[(0, 0)]
        if isinstance(w00, ScalarField3D):
            m = make_ball_mask(w00) if mask is None else mask
            c = float(np.min(np.abs(w00.values[m.values])))
        else:
            c = abs(complex(w00))
        if not c > 0:
            raise ValueError("w_{0,0} vanishes on the domain")
        self.c_lower = c

    def _coeff_matrix(self, points):
        p = np.atleast_2d(points)
        cols = []
        for kn in self.pairs:
            v = self.entries[kn]
            if isinstance(v, ScalarField3D):
                cols.append(sample_field(v, p))
            else:
                cols.append(np.full(len(p), complex(v)))
        return np.stack(cols, axis=1)

    def _harmonics(self, directions):
        g, ph = direction_angles(directions)
        return ylm_table(self.k_max, np.cos(g), ph, self.pairs)

    def __call__(self, points, directions):
        return self._coeff_matrix(points) @ self._harmonics(directions)

    def prepare(self, points):
        C = self._coeff_matrix(points)
        return lambda directions: C @ self._harmonics(directions)

    def coefficients(self, grid: ScalarField3D, k_max: int | None = None) -> HarmonicCoefficients:
        """Exact coefficient fields on ``grid`` (no quadrature)."""
        k_max = self.k_max if k_max is None else k_max
        out = {}
        for kn, v in self.entries.items():
            if isinstance(v, ScalarField3D):
                out[kn] = v if v.same_geometry(grid) else grid.like(sample_field(v, grid.points()))
            else:
                out[kn] = grid.like(np.full(grid.dims, complex(v)))
        return HarmonicCoefficients(k_max, out)


def finite_series_weight(entries, mask: DomainMask | None = None) -> SeriesWeight:
    """Weight from ``(k, n, coefficient)`` triples or a ``{(k, n): coefficient}`` mapping."""
    if isinstance(entries, HarmonicCoefficients):
        entries = entries.entries
    if not isinstance(entries, dict):
        entries = {(k, n): c for k, n, c in entries}
    return SeriesWeight(entries, mask)


def _default_samples(grid: ScalarField3D | None):
    grid = make_uniform_grid(8, 1.0) if grid is None else grid
    sph = make_sphere_grid(8, 16)
    axes = np.vstack([np.eye(3), -np.eye(3)])
    return grid.points(), np.vstack([sph.directions, axes])


class PerturbedWeight(WeightFunction):
    """W = c + V(x, theta) with c > 0 and sampled sup |V| < c."""

    tag = "perturbed"

    def __init__(self, c: float, V, bound_check: bool = True, grid: ScalarField3D | None = None):
        if not c > 0:
            raise ValueError("c must be positive")
        self.c = float(c)
        self.V = V
        pts, dirs = _default_samples(grid)
        self.sup_v = float(np.max(np.abs(V(pts, dirs))))
        log.info("perturbed weight: c=%g, sampled sup|V|=%g", self.c, self.sup_v)
        if bound_check and self.sup_v >= self.c * (1 - 1e-12):
            raise ValueError(
                f"sampled sup|V| = {self.sup_v:g} is not below c = {self.c:g}; w_00 may vanish"
            )
        self.c_lower = max(self.c - self.sup_v, 0.0)

    def __call__(self, points, directions):
        return self.c + np.asarray(self.V(np.atleast_2d(points), np.atleast_2d(directions)))


def perturbed_weight(c: float, V, bound_check: bool = True, grid=None) -> PerturbedWeight:
    return PerturbedWeight(c, V, bound_check, grid)


class AttenuationWeight(WeightFunction):
    """w(x, theta) = exp(-int_0^inf a(x + t theta) dt) by midpoint ray marching.

    The step is half a voxel and ``a`` is sampled trilinearly (zero outside the
    grid).  This is the SPECT ray weight, used here as a test weight.
    """

    tag = "attenuation"

    def __init__(self, a: ScalarField3D, step: float | None = None):
        if np.any(a.values.imag != 0) or np.any(a.values.real < 0):
            raise ValueError("attenuation map must be real and non-negative")
        self.a = a
        self.step = 0.5 * a.spacing if step is None else float(step)
        self.length = 2.0 * a.circumradius()
        self.n_steps = int(np.ceil(self.length / self.step))
        amax = float(np.max(a.values.real))
        self.c_lower = float(np.exp(-amax * self.length))

    def path_integral(self, points, directions) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        t = (np.arange(self.n_steps) + 0.5) * self.step
        origin = np.asarray(self.a.origin)
        vals = self.a.values.real
        out = np.empty((len(p), len(d)))
        for j, th in enumerate(d):
            x = p[:, None, :] + t[None, :, None] * th[None, None, :]
            idx = ((x - origin) / self.a.spacing).reshape(-1, 3).T
            s = map_coordinates(vals, idx, order=1, mode="constant", cval=0.0)
            out[:, j] = s.reshape(len(p), len(t)).sum(axis=1) * self.step
        return out

    def __call__(self, points, directions):
        return np.exp(-self.path_integral(points, directions)).astype(np.complex128)


def attenuation_weight(a: ScalarField3D) -> AttenuationWeight:
    return AttenuationWeight(a)


class SymmetrizedWeight(WeightFunction):
    """0.5 * (W(x, theta) + W(x, -theta))."""

    tag = "symmetrized"

    def __init__(self, W):
        self.W = W
        self.c_lower = getattr(W, "c_lower", None)

    def __call__(self, points, directions):
        d = np.atleast_2d(directions)
        return 0.5 * (self.W(points, d) + self.W(points, -d))

    def prepare(self, points):
        ev = self.W.prepare(points) if hasattr(self.W, "prepare") else (lambda d: self.W(points, d))
        return lambda d: 0.5 * (ev(np.atleast_2d(d)) + ev(-np.atleast_2d(d)))


def symmetrized_weight(W) -> SymmetrizedWeight:
    return SymmetrizedWeight(W)


def ray_transform(f: ScalarField3D, w_ray, rays, step: float | None = None) -> np.ndarray:
    """Weighted line integrals int w(x + t a, a) f(x + t a) dt for ``rays = [(x, a), ...]``."""
    step = 0.5 * f.spacing if step is None else float(step)
    T = f.circumradius()
    n = int(np.ceil(2 * T / step))
    t = -T + (np.arange(n) + 0.5) * (2 * T / n)
    dt = 2 * T / n
    origin = np.asarray(f.origin)
    out = []
    for x, a in rays:
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValueError("ray direction must be a unit vector")
        pts = x[None, :] + t[:, None] * a[None, :]
        idx = ((pts - origin) / f.spacing).T
        fv = map_coordinates(f.values.real, idx, order=1, mode="constant", cval=0.0)
        if np.any(f.values.imag):
            fv = fv + 1j * map_coordinates(f.values.imag, idx, order=1, mode="constant", cval=0.0)
        live = fv != 0
        wv = np.zeros(len(t), dtype=np.complex128)
        if np.any(live):
            wv[live] = np.asarray(w_ray(pts[live], a[None, :]))[:, 0]
        val = np.sum(wv * fv) * dt
        out.append(val.real if np.isreal(val) else val)
    return np.asarray(out)


def _bump(r2_scaled):
    out = np.zeros_like(r2_scaled)
    inside = r2_scaled < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2_scaled[inside]))
    return out


def make_phantom(kind: str, spec, grid: ScalarField3D, mask: DomainMask | None = None,
                 supersample: int = 1) -> ScalarField3D:
    """Sum of ball indicators (``kind="balls"``) or C-infinity bumps (``"smooth-bumps"``).

    ``spec`` is a list of ``{"center": (x, y, z), "radius": r, "amplitude": a}``.
    A bump has value ``a`` at its center and vanishes outside its radius.
    ``supersample > 1`` averages ``supersample^3`` sub-voxel samples per voxel
    (partial-volume balls).
    """
    if kind not in ("balls", "smooth-bumps"):
        raise ValueError(f"unknown phantom kind {kind!r}")
    mask = make_ball_mask(grid) if mask is None else mask
    X = grid.coordinates()
    ss = int(supersample)
    if ss < 1:
        raise ValueError("supersample must be >= 1")
    sub = grid.spacing * ((np.arange(ss) + 0.5) / ss - 0.5)
    offsets = np.stack(np.meshgrid(sub, sub, sub, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = np.zeros(grid.dims)
    for item in spec:
        c = np.asarray(item.get("center", (0.0, 0.0, 0.0)), dtype=float)
        r = float(item["radius"])
        amp = float(item.get("amplitude", 1.0))
        for off in offsets:
            r2 = np.sum((X + off - c) ** 2, axis=-1) / r**2
            vals += amp * ((r2 <= 1.0) if kind == "balls" else _bump(r2)) / len(offsets)
    if np.any((vals != 0) & ~mask.values):
        raise ValueError("phantom support escapes the domain mask")
    return grid.like(vals)


def random_phantom_spec(count: int, seed: int, max_radius: float, domain_radius: float,
                        amplitude=(0.5, 1.5)) -> list[dict]:
    """Random centers/radii/amplitudes with every support inside ``domain_radius``."""
    rng = np.random.default_rng(seed)
    spec = []
    while len(spec) < count:
        r = rng.uniform(0.4, 1.0) * max_radius
        c = rng.uniform(-1, 1, 3) * (domain_radius - r)
        if np.linalg.norm(c) + r < 0.95 * domain_radius:
            spec.append({"center": c.tolist(), "radius": float(r),
                         "amplitude": float(rng.uniform(*amplitude))})
    return spec
