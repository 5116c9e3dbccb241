"""Forward (weighted) Radon transforms over planes and two inverse routes.

The forward operator splats every voxel value times the voxel volume onto the
two nearest s-bins with linear (hat) weights and divides by the bin width, so
``sum_s Rf(s, theta) ds`` equals the voxel sum of ``f`` in every direction.
``inverse_radon_fbp`` applies the second s-derivative and backprojects with
the constant -1/(8 pi^2); ``inverse_radon_fourier`` goes through the
projection theorem and a gridded inverse 3D FFT.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import gaussian_filter1d

from .grids import ScalarField3D, Sinogram, SphereGrid, make_sinogram

__all__ = [
    "forward_radon",
    "forward_weighted_radon",
    "symmetrize_sinogram",
    "second_derivative",
    "inverse_radon_fbp",
    "inverse_radon_fourier",
    "inverse_radon",
]

_BATCH = 32


def _bin_coordinates(s, s_max, ds, n_s):
    t = (s + s_max) / ds
    i0 = np.floor(t).astype(np.int64)
    frac = t - i0
    if np.any(i0 < 0) or np.any(i0 > n_s - 2):
        raise ValueError("plane offsets fall outside the sinogram s range")
    return i0, frac


def _splat(points, dirs, vals, s_max, ds, n_s):
    """Hat-weight accumulation of ``vals`` (shape ``(N, B)`` or ``(N,)``) into ``(B, n_s)``."""
    B = len(dirs)
    s = points @ dirs.T
    i0, frac = _bin_coordinates(s, s_max, ds, n_s)
    vals = np.broadcast_to(vals if np.ndim(vals) == 2 else np.asarray(vals)[:, None], s.shape)
    flat = (i0 + n_s * np.arange(B)[None, :]).ravel()
    out = np.zeros(B * n_s, dtype=np.complex128)
    for part, unit in ((vals.real, 1.0), (vals.imag, 1j)):
        if not np.any(part):
            continue
        lo = np.bincount(flat, weights=(part * (1.0 - frac)).ravel(), minlength=B * n_s)
        hi = np.bincount(flat + 1, weights=(part * frac).ravel(), minlength=B * n_s + 1)
        out += unit * (lo[: B * n_s] + hi[: B * n_s])
    return out.reshape(B, n_s) / ds


def _support(f: ScalarField3D):
    flat = f.values.ravel()
    nz = np.flatnonzero(flat)
    return f.points()[nz], flat[nz] * f.voxel_volume


def forward_radon(f: ScalarField3D, sphere: SphereGrid, n_s: int) -> Sinogram:
    """Plane integrals of ``f`` for every sphere direction and s-bin."""
    return forward_weighted_radon(f, None, sphere, n_s)


def forward_weighted_radon(f: ScalarField3D, W, sphere: SphereGrid, n_s: int) -> Sinogram:
    """Plane integrals of ``W(x, theta) f(x)``; ``W=None`` means the classical transform.

    ``W`` follows the weight protocol of :mod:`wradon.weights`: calling
    ``W(points, directions)`` returns an ``(N, M)`` array.
    """
    sino = make_sinogram(f, sphere, n_s)
    pts, vals = _support(f)
    out = np.zeros((sphere.n_directions, n_s), dtype=np.complex128)
    if len(pts) == 0:
        return sino
    evaluate = None
    if W is not None:
        evaluate = W.prepare(pts) if hasattr(W, "prepare") else (lambda d: W(pts, d))
    for lo in range(0, sphere.n_directions, _BATCH):
        dirs = sphere.directions[lo:lo + _BATCH]
        v = vals if evaluate is None else vals[:, None] * evaluate(dirs)
        out[lo:lo + _BATCH] = _splat(pts, dirs, v, sino.s_max, sino.ds, n_s)
    return sino.like(out)


def symmetrize_sinogram(q: Sinogram) -> Sinogram:
    """0.5 * (q(s, theta) + q(-s, -theta)); the s grid is symmetric so -s is a node."""
    anti = q.sphere.antipode_index()
    return q.like(0.5 * (q.values + q.values[anti, ::-1]))


def second_derivative(q: Sinogram, method: str = "fd", mollify: float = 0.0) -> np.ndarray:
    """d^2 q / ds^2 per direction.

    ``method="fd"`` uses centered second differences with one-sided ends;
    ``"spectral"`` multiplies by -rho^2 in the FFT domain.  ``mollify`` is an
    optional Gaussian smoothing width in units of ``ds``.
    """
    v = q.values
    if mollify > 0:
        v = gaussian_filter1d(v.real, mollify, axis=1) + 1j * gaussian_filter1d(
            v.imag, mollify, axis=1
        )
    ds = q.ds
    if method == "fd":
        d2 = np.empty_like(v)
        d2[:, 1:-1] = (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / ds**2
        d2[:, 0] = (2 * v[:, 0] - 5 * v[:, 1] + 4 * v[:, 2] - v[:, 3]) / ds**2
        d2[:, -1] = (2 * v[:, -1] - 5 * v[:, -2] + 4 * v[:, -3] - v[:, -4]) / ds**2
        return d2
    if method == "spectral":
        n = 2 * q.n_s
        rho = 2 * np.pi * sfft.fftfreq(n, d=ds)
        return sfft.ifft(-(rho**2) * sfft.fft(v, n=n, axis=1), axis=1)[:, : q.n_s]
    raise ValueError(f"unknown derivative method {method!r}")


def _backproject(values, q: Sinogram, grid: ScalarField3D) -> np.ndarray:
    """sum_theta weight(theta) * values(x.theta, theta) with linear interpolation in s."""
    pts = grid.points()
    sphere = q.sphere
    n_s = q.n_s
    acc = np.zeros(len(pts), dtype=np.complex128)
    real = not np.any(values.imag)
    for lo in range(0, sphere.n_directions, _BATCH):
        dirs = sphere.directions[lo:lo + _BATCH]
        B = len(dirs)
        i0, frac = _bin_coordinates(pts @ dirs.T, q.s_max, q.ds, n_s)
        block = values[lo:lo + B]
        flat = block.real.ravel() if real else block.ravel()
        base = i0 + n_s * np.arange(B)[None, :]
        interp = flat[base] * (1.0 - frac) + flat[base + 1] * frac
        acc += interp @ sphere.weights[lo:lo + B]
    return acc


def inverse_radon_fbp(q: Sinogram, grid: ScalarField3D, method: str = "fd",
                      mollify: float = 0.0) -> ScalarField3D:
    """R^{-1} q(x) = -1/(8 pi^2) int_{S^2} q''(x.theta, theta) dtheta on ``grid``."""
    d2 = second_derivative(q, method=method, mollify=mollify)
    acc = _backproject(d2, q, grid)
    return grid.like(-acc / (8.0 * np.pi**2))


def inverse_radon_fourier(q: Sinogram, grid: ScalarField3D, oversample: int = 2) -> ScalarField3D:
    """R^{-1} through the projection theorem.

    Per direction, ``qhat(rho) = (2 pi)^{-1/2} int q(s) e^{-i rho s} ds`` is
    sampled on a symmetric radial grid.  Each polar sample is weighted by
    ``(2 pi)^{-5/2} rho^2/2 drho dOmega`` (density compensation), spread onto an
    oversampled Cartesian frequency grid with trilinear weights, brought back
    with an inverse 3D FFT and divided by the spreading kernel's transform.
    """
    n = np.asarray(grid.dims)
    h = grid.spacing
    N = int(oversample * n.max())
    N += N % 2
    dk = 2 * np.pi / (N * h)
    drho = 0.5 * dk
    rho_max = min(np.pi / q.ds, np.pi / h) - 2 * dk
    L = int(np.floor(rho_max / drho))
    rho = drho * np.arange(-L, L + 1)

    s = q.s_nodes
    E = np.exp(-1j * np.outer(s, rho)) * (q.ds / np.sqrt(2 * np.pi))
    qhat = q.values @ E  # (M, n_rho)

    sphere = q.sphere
    w = ((2 * np.pi) ** -2.5) * (0.5 * rho**2 * drho)[None, :] * sphere.weights[:, None]
    vals = (qhat * w).ravel()
    xi = (sphere.directions[:, None, :] * rho[None, :, None]).reshape(-1, 3)

    # frequency index p <-> k = (p - N/2) dk
    t = xi / dk + N // 2
    i0 = np.floor(t).astype(np.int64)
    fr = t - i0
    G = np.zeros(N**3, dtype=np.complex128)
    for cx in (0, 1):
        wx = fr[:, 0] if cx else 1 - fr[:, 0]
        for cy in (0, 1):
            wy = fr[:, 1] if cy else 1 - fr[:, 1]
            for cz in (0, 1):
                wz = fr[:, 2] if cz else 1 - fr[:, 2]
                idx = ((i0[:, 0] + cx) * N + (i0[:, 1] + cy)) * N + (i0[:, 2] + cz)
                wt = wx * wy * wz
                G += np.bincount(idx, weights=(vals.real * wt), minlength=N**3)
                G += 1j * np.bincount(idx, weights=(vals.imag * wt), minlength=N**3)
    G = G.reshape(N, N, N)

    pad_lo = (N - n) // 2
    x0 = np.asarray(grid.origin) - pad_lo * h
    k = (np.arange(N) - N // 2) * dk
    for a in range(3):
        shape = [1, 1, 1]
        shape[a] = N
        G = G * np.exp(1j * k * x0[a]).reshape(shape)
    img = sfft.ifftn(G) * N**3
    m = np.arange(N)
    sign = (-1.0) ** m
    img = img * sign[:, None, None] * sign[None, :, None] * sign[None, None, :]
    img = img[pad_lo[0]:pad_lo[0] + n[0], pad_lo[1]:pad_lo[1] + n[1], pad_lo[2]:pad_lo[2] + n[2]]

    apod = np.ones(tuple(n))
    for a, ax in enumerate(grid.axes()):
        shape = [1, 1, 1]
        shape[a] = n[a]
        apod = apod * (np.sinc(ax * dk / (2 * np.pi)) ** 2).reshape(shape)
    return grid.like(img / apod)


def inverse_radon(q: Sinogram, grid: ScalarField3D, route: str = "fbp", **kw) -> ScalarField3D:
    if route == "fbp":
        return inverse_radon_fbp(q, grid, **kw)
    if route == "fourier":
        return inverse_radon_fourier(q, grid, **kw)
    raise ValueError(f"unknown inverse route {route!r}")
