"""Grid, domain-mask and sphere-quadrature primitives.

Volumes are stored as arrays indexed ``values[ix, iy, iz]``; on disk they are
written with x fastest (Fortran order), see :mod:`wradon.io`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScalarField3D",
    "DomainMask",
    "SphereGrid",
    "Sinogram",
    "make_uniform_grid",
    "make_ball_mask",
    "make_sphere_grid",
    "make_sinogram",
    "field_norm_l2",
    "field_sup",
    "GridMismatchError",
]

MIN_GRID_POINTS = 8


class GridMismatchError(ValueError):
    """Two fields or masks do not share grid geometry."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ScalarField3D:
    """Complex samples on a uniform isotropic cube grid.

    ``origin`` is the physical position of voxel ``(0, 0, 0)``'s center.
    """

    values: np.ndarray
    spacing: float
    origin: tuple[float, float, float]

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128)
        if v.ndim != 3:
            raise ValueError(f"values must be 3-D, got shape {v.shape}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def voxel_volume(self) -> float:
        return self.spacing**3

    @property
    def is_real(self) -> bool:
        return not np.any(self.values.imag)

    def axes(self) -> list[np.ndarray]:
        return [self.origin[a] + self.spacing * np.arange(self.dims[a]) for a in range(3)]

    def coordinates(self) -> np.ndarray:
        """Voxel-center positions, shape ``dims + (3,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        """Voxel-center positions flattened in C order, shape ``(N, 3)``."""
        return self.coordinates().reshape(-1, 3)

    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.coordinates(), axis=-1)

    @property
    def half_extent(self) -> float:
        """Half side length of the cube when it is centered at the origin."""
        return 0.5 * self.spacing * max(self.dims)

    def circumradius(self) -> float:
        """Radius of the smallest origin-centered ball containing the cube."""
        corners = np.array(
            [[ax[0] - 0.5 * self.spacing, ax[-1] + 0.5 * self.spacing] for ax in self.axes()]
        )
        return float(np.sqrt(np.sum(np.max(np.abs(corners), axis=1) ** 2)))

    def same_geometry(self, other) -> bool:
        return (
            tuple(self.dims) == tuple(other.dims)
            and np.isclose(self.spacing, other.spacing, rtol=1e-12, atol=0)
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12 * self.spacing)
        )

    def like(self, values) -> "ScalarField3D":
        """A field with this geometry and new values."""
        return ScalarField3D(np.asarray(values).reshape(self.dims), self.spacing, self.origin)

    def zeros_like(self) -> "ScalarField3D":
        return self.like(np.zeros(self.dims, dtype=np.complex128))

    def integral(self) -> complex:
        return complex(self.values.sum() * self.voxel_volume)

    def __add__(self, other):
        return self.like(self.values + _vals(self, other))

    def __sub__(self, other):
        return self.like(self.values - _vals(self, other))

    def __mul__(self, other):
        return self.like(self.values * _vals(self, other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.like(self.values / _vals(self, other))

    def __neg__(self):
        return self.like(-self.values)


def _vals(ref, other):
    if isinstance(other, (ScalarField3D, DomainMask)):
        if not ref.same_geometry(other):
            raise GridMismatchError("fields live on different grids")
        return other.values
    return other


@dataclass(frozen=True)
class DomainMask:
    """Voxel indicator of the reconstruction domain D."""

    values: np.ndarray
    spacing: float
    origin: tuple[float, float, float]

    def __post_init__(self):
        v = np.array(self.values, dtype=bool)
        if v.ndim != 3:
            raise ValueError("mask must be 3-D")
        if not v.any():
            raise ValueError("mask is empty")
        border = np.ones_like(v)
        border[1:-1, 1:-1, 1:-1] = False
        if np.any(v & border):
            raise ValueError("mask must lie strictly inside the grid cube")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self):
        return self.values.shape

    @property
    def volume(self) -> float:
        return float(self.values.sum()) * self.spacing**3

    def same_geometry(self, other) -> bool:
        return ScalarField3D.same_geometry(self, other)  # type: ignore[arg-type]

    @classmethod
    def like(cls, grid: ScalarField3D, values) -> "DomainMask":
        return cls(np.asarray(values, dtype=bool), grid.spacing, grid.origin)


def make_uniform_grid(n_per_axis: int, half_extent: float) -> ScalarField3D:
    """Zero field on ``[-half_extent, half_extent]^3`` with ``n_per_axis`` voxels per side."""
    if int(n_per_axis) != n_per_axis or n_per_axis < MIN_GRID_POINTS:
        raise ValueError(f"n_per_axis must be an integer >= {MIN_GRID_POINTS}, got {n_per_axis}")
    if not half_extent > 0:
        raise ValueError("half_extent must be positive")
    n = int(n_per_axis)
    h = 2.0 * half_extent / n
    o = -half_extent + 0.5 * h
    return ScalarField3D(np.zeros((n, n, n), dtype=np.complex128), h, (o, o, o))


def make_ball_mask(grid: ScalarField3D, radius: float | None = None) -> DomainMask:
    """Centered ball mask; the default radius is 0.8 of the grid half extent."""
    if radius is None:
        radius = 0.8 * grid.half_extent
    return DomainMask.like(grid, grid.radius() <= radius)


def _check_compatible(u: ScalarField3D, mask: DomainMask) -> None:
    if not u.same_geometry(mask):
        raise GridMismatchError(
            f"field grid {u.dims}/{u.spacing} does not match mask grid {mask.dims}/{mask.spacing}"
        )


def field_norm_l2(u: ScalarField3D, mask: DomainMask) -> float:
    """Discrete L2(D) norm: sqrt(sum over masked voxels of |u|^2 * voxel volume)."""
    _check_compatible(u, mask)
    v = u.values[mask.values]
    return float(np.sqrt(np.sum(np.abs(v) ** 2) * u.voxel_volume))


def field_sup(u: ScalarField3D, mask: DomainMask) -> float:
    """Max of |u| over masked voxels (a lower bound on the continuous sup)."""
    _check_compatible(u, mask)
    return float(np.max(np.abs(u.values[mask.values])))


@dataclass(frozen=True)
class SphereGrid:
    """Gauss-Legendre (in cos gamma) x uniform (in phi) product rule on S^2.

    Directions are flattened gamma-major: index ``i_gamma * n_phi + i_phi``.
    The node sets are built so that the antipode of every node is another node
    with exactly negated coordinates.
    """

    cos_gamma: np.ndarray
    gamma_weights: np.ndarray
    phi: np.ndarray
    directions: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def n_gamma(self) -> int:
        return len(self.cos_gamma)

    @property
    def n_phi(self) -> int:
        return len(self.phi)

    @property
    def n_directions(self) -> int:
        return len(self.weights)

    @property
    def gamma(self) -> np.ndarray:
        """Polar angle per direction, shape ``(n_directions,)``."""
        return np.repeat(np.arccos(self.cos_gamma), self.n_phi)

    @property
    def phi_per_direction(self) -> np.ndarray:
        return np.tile(self.phi, self.n_gamma)

    @property
    def cos_gamma_per_direction(self) -> np.ndarray:
        return np.repeat(self.cos_gamma, self.n_phi)

    def antipode_index(self) -> np.ndarray:
        """Index of -theta for every direction theta."""
        ig = np.arange(self.n_gamma)[:, None]
        ip = np.arange(self.n_phi)[None, :]
        anti = (self.n_gamma - 1 - ig) * self.n_phi + (ip + self.n_phi // 2) % self.n_phi
        return anti.ravel()

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Quadrature over the last axis (length ``n_directions``)."""
        return np.asarray(values) @ self.weights

    def max_exact_degree(self) -> int:
        """Largest K such that products of harmonics of degree <= K are integrated exactly."""
        return min(self.n_gamma - 1, (self.n_phi - 1) // 2)


def make_sphere_grid(n_gamma: int, n_phi: int) -> SphereGrid:
    if n_gamma < 2 or n_phi < 4 or n_phi % 2:
        raise ValueError(
            f"need n_gamma >= 2 and even n_phi >= 4, got n_gamma={n_gamma}, n_phi={n_phi}"
        )
    x, wg = np.polynomial.legendre.leggauss(n_gamma)
    x = 0.5 * (x - x[::-1])
    wg = 0.5 * (wg + wg[::-1])
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    half = n_phi // 2
    cphi = np.cos(phi[:half])
    sphi = np.sin(phi[:half])
    cphi = np.concatenate([cphi, -cphi])
    sphi = np.concatenate([sphi, -sphi])
    sg = np.sqrt(1.0 - x**2)
    dirs = np.empty((n_gamma, n_phi, 3))
    dirs[..., 0] = sg[:, None] * cphi[None, :]
    dirs[..., 1] = sg[:, None] * sphi[None, :]
    dirs[..., 2] = x[:, None]
    weights = np.repeat(wg, n_phi) * (2.0 * np.pi / n_phi)
    return SphereGrid(
        _frozen(x), _frozen(wg), _frozen(phi), _frozen(dirs.reshape(-1, 3)), _frozen(weights)
    )


@dataclass(frozen=True)
class Sinogram:
    """Samples of a function on R x S^2, indexed ``values[direction, s]``.

    ``s`` nodes are ``-s_max + j * ds`` for ``j = 0..n_s-1`` (symmetric about 0).
    """

    values: np.ndarray
    sphere: SphereGrid
    s_max: float

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128)
        if v.ndim != 2 or v.shape[0] != self.sphere.n_directions:
            raise ValueError(
                f"sinogram shape {v.shape} does not match {self.sphere.n_directions} directions"
            )
        if v.shape[1] < 3 or not self.s_max > 0:
            raise ValueError("need at least 3 s samples and s_max > 0")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "s_max", float(self.s_max))

    @property
    def n_s(self) -> int:
        return self.values.shape[1]

    @property
    def ds(self) -> float:
        return 2.0 * self.s_max / (self.n_s - 1)

    @property
    def s_nodes(self) -> np.ndarray:
        return -self.s_max + self.ds * np.arange(self.n_s)

    def like(self, values) -> "Sinogram":
        return Sinogram(values, self.sphere, self.s_max)

    def __add__(self, other: "Sinogram") -> "Sinogram":
        return self.like(self.values + other.values)

    def __mul__(self, c) -> "Sinogram":
        return self.like(self.values * c)

    __rmul__ = __mul__


def make_sinogram(grid: ScalarField3D, sphere: SphereGrid, n_s: int) -> Sinogram:
    """Zero sinogram whose s range covers the circumscribed ball of ``grid``."""
    if n_s < MIN_GRID_POINTS:
        raise ValueError(f"n_s must be >= {MIN_GRID_POINTS}, got {n_s}")
    return Sinogram(np.zeros((sphere.n_directions, n_s)), sphere, grid.circumradius())
