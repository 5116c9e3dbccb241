"""On-disk formats: volumes, masks, sinograms, coefficient bundles, weight specs, PGM slices.

Volume / mask file (``.vol``): raw little-endian float64 ``(re, im)`` pairs,
x index fastest, z slowest, ``nx * ny * nz * 16`` bytes.  Sidecar
``<file>.json``: ``{"dims", "spacing", "origin", "complex"}`` (masks add
``"mask": true`` and store 0/1 in the real part).

Sinogram file (``.sino``): raw little-endian float64 ``(re, im)`` pairs,
direction-major (all s samples of direction 0 first), directions in
SphereGrid order (gamma slowest, phi fastest).  Sidecar: ``{"n_gamma",
"n_phi", "n_s", "s_max", "complex"}``.

Coefficient bundle: a JSON manifest ``{"K_max", "truncation_residual",
"entries": [{"k", "n", "file"}]}`` with one volume file per entry, paths
relative to the manifest.

Weight spec (JSON): ``{"family": "constant" | "finite_series" | "perturbed" |
"attenuation", "parameters": {...}, "coefficients": <bundle path>,
"attenuation": <volume path>}``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .grids import DomainMask, ScalarField3D, Sinogram, make_sphere_grid
from .harmonics import HarmonicCoefficients

__all__ = [
    "FormatError",
    "sidecar_path",
    "write_volume",
    "read_volume",
    "write_mask",
    "read_mask",
    "write_sinogram",
    "read_sinogram",
    "write_bundle",
    "read_bundle",
    "read_weight_spec",
    "weight_from_spec",
    "write_pgm",
    "read_pgm",
]

_LE = np.dtype("<f8")


class FormatError(ValueError):
    """A file or sidecar is malformed or inconsistent with its payload."""


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def _pairs(values: np.ndarray, order: str) -> bytes:
    flat = np.ravel(values, order=order)
    out = np.empty(2 * flat.size, dtype=_LE)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out.tobytes()


def _unpairs(path, count: int) -> np.ndarray:
    raw = np.fromfile(path, dtype=_LE)
    if raw.size != 2 * count:
        raise FormatError(f"{path}: expected {2 * count} float64 values, found {raw.size}")
    return raw[0::2] + 1j * raw[1::2]


def write_volume(path, f: ScalarField3D) -> None:
    Path(path).write_bytes(_pairs(f.values, "F"))
    _write_json(sidecar_path(path), {
        "dims": list(f.dims), "spacing": f.spacing, "origin": list(f.origin),
        "complex": not f.is_real,
    })


def _geometry(meta, path):
    try:
        dims = tuple(int(d) for d in meta["dims"])
        return dims, float(meta["spacing"]), tuple(float(o) for o in meta["origin"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: sidecar lacks dims/spacing/origin") from exc


def read_volume(path) -> ScalarField3D:
    meta = _read_json(sidecar_path(path))
    dims, h, origin = _geometry(meta, path)
    vals = _unpairs(path, int(np.prod(dims))).reshape(dims, order="F")
    return ScalarField3D(vals, h, origin)


def write_mask(path, mask: DomainMask) -> None:
    Path(path).write_bytes(_pairs(mask.values.astype(np.complex128), "F"))
    _write_json(sidecar_path(path), {
        "dims": list(mask.dims), "spacing": mask.spacing, "origin": list(mask.origin),
        "complex": False, "mask": True,
    })


def read_mask(path) -> DomainMask:
    meta = _read_json(sidecar_path(path))
    dims, h, origin = _geometry(meta, path)
    vals = _unpairs(path, int(np.prod(dims))).reshape(dims, order="F")
    if np.any(vals.imag != 0) or not np.all(np.isin(vals.real, (0.0, 1.0))):
        raise FormatError(f"{path}: mask values must be 0 or 1")
    return DomainMask(vals.real.astype(bool), h, origin)


def write_sinogram(path, q: Sinogram) -> None:
    Path(path).write_bytes(_pairs(q.values, "C"))
    _write_json(sidecar_path(path), {
        "n_gamma": q.sphere.n_gamma, "n_phi": q.sphere.n_phi, "n_s": q.n_s,
        "s_max": q.s_max, "complex": bool(np.any(q.values.imag)),
    })


def read_sinogram(path) -> Sinogram:
    meta = _read_json(sidecar_path(path))
    try:
        ng, nphi, n_s = int(meta["n_gamma"]), int(meta["n_phi"]), int(meta["n_s"])
        s_max = float(meta["s_max"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: sidecar lacks n_gamma/n_phi/n_s/s_max") from exc
    sphere = make_sphere_grid(ng, nphi)
    vals = _unpairs(path, sphere.n_directions * n_s).reshape(sphere.n_directions, n_s)
    return Sinogram(vals, sphere, s_max)


def write_bundle(path, coeffs: HarmonicCoefficients) -> None:
    """Manifest at ``path``; volumes next to it as ``<stem>_k<k>_n<n>.vol``."""
    path = Path(path)
    entries = []
    for k, n in coeffs.keys():
        name = f"{path.stem}_k{k}_n{n}.vol"
        write_volume(path.parent / name, coeffs.entries[(k, n)])
        entries.append({"k": k, "n": n, "file": name})
    _write_json(path, {
        "K_max": coeffs.k_max, "truncation_residual": coeffs.truncation_residual,
        "entries": entries,
    })


def read_bundle(path) -> HarmonicCoefficients:
    path = Path(path)
    meta = _read_json(path)
    try:
        k_max = int(meta["K_max"])
        items = [(int(e["k"]), int(e["n"]), e["file"]) for e in meta["entries"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed bundle manifest") from exc
    entries = {(k, n): read_volume(path.parent / f) for k, n, f in items}
    return HarmonicCoefficients(k_max, entries, float(meta.get("truncation_residual", 0.0)))


def read_weight_spec(path) -> dict:
    spec = _read_json(path)
    if not isinstance(spec, dict) or "family" not in spec:
        raise FormatError(f"{path}: weight spec needs a 'family'")
    spec["_base"] = str(Path(path).resolve().parent)
    return spec


def _resolve(spec, key):
    p = spec.get(key)
    if p is None:
        raise FormatError(f"weight spec of family {spec['family']!r} needs {key!r}")
    return p if os.path.isabs(p) else os.path.join(spec.get("_base", "."), p)


_PROFILES = {
    "constant": lambda X: np.ones(len(X)),
    "sin_x1": lambda X: np.sin(X[:, 0]),
    "x1": lambda X: X[:, 0],
    "gauss": lambda X: np.exp(-np.sum(X**2, axis=1)),
}


def weight_from_spec(spec: dict, grid: ScalarField3D | None = None):
    """Build a weight object from a parsed spec (see module docstring).

    Returns ``(W, coeffs)`` where ``coeffs`` is the exact coefficient bundle
    for finite series (``None`` otherwise).

    ``perturbed`` parameters: ``{"c": 1.0, "terms": [{"k", "n", "amplitude",
    "profile"}]}`` with profiles ``constant``, ``sin_x1``, ``x1``, ``gauss``;
    ``V = sum amplitude * profile(x) * Y_k^n(theta)``.  A ``finite_series`` spec
    may give ``"coefficients"`` (bundle path) or constant ``parameters.terms``.
    """
    from . import weights as wt
    from .harmonics import ylm_table

    fam = spec["family"]
    par = spec.get("parameters", {}) or {}
    if fam == "constant":
        return wt.constant_weight(complex(par.get("c", 1.0))), None
    if fam == "finite_series":
        if "coefficients" in spec:
            coeffs = read_bundle(_resolve(spec, "coefficients"))
            return wt.finite_series_weight(coeffs.entries), coeffs
        terms = par.get("terms")
        if not terms:
            raise FormatError("finite_series spec needs 'coefficients' or parameters.terms")
        entries = {(int(t["k"]), int(t["n"])): complex(t.get("amplitude", 1.0)) for t in terms}
        W = wt.finite_series_weight(entries)
        k_max = max(k for k, _ in entries)
        k_max += k_max % 2
        return W, (W.coefficients(grid, k_max) if grid is not None else None)
    if fam == "perturbed":
        c = float(par.get("c", 1.0))
        terms = par.get("terms", [])
        for t in terms:
            if t.get("profile", "constant") not in _PROFILES:
                raise FormatError(f"unknown profile {t.get('profile')!r}")
        pairs = [(int(t["k"]), int(t["n"])) for t in terms]
        k_max = max([k for k, _ in pairs], default=0)

        def V(points, directions):
            if not terms:
                return np.zeros((len(points), len(directions)))
            d = np.atleast_2d(directions)
            gam = np.arccos(np.clip(d[:, 2], -1, 1))
            Y = ylm_table(k_max, np.cos(gam), np.arctan2(d[:, 1], d[:, 0]), pairs)
            C = np.stack([float(t.get("amplitude", 0.0)) * _PROFILES[t.get("profile", "constant")](
                np.atleast_2d(points)) for t in terms], axis=1)
            return C @ Y

        return wt.perturbed_weight(c, V, bound_check=bool(par.get("bound_check", True)),
                                   grid=grid), None
    if fam == "attenuation":
        return wt.attenuation_weight(read_volume(_resolve(spec, "attenuation"))), None
    raise FormatError(f"unknown weight family {fam!r}")


def write_pgm(path, image: np.ndarray) -> tuple[float, float]:
    """16-bit binary PGM (P5) of a real 2-D image, min-max scaled; returns (min, max).

    Row ``j`` of the file is ``image[:, j]`` so x runs left to right.
    """
    img = np.asarray(image, dtype=float).T
    lo, hi = float(img.min()), float(img.max())
    scale = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    data = np.round(scale * 65535).astype(">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode()
    Path(path).write_bytes(header + data.tobytes())
    return lo, hi


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm` up to scaling: returns the 16-bit counts as ``image[x, y]``."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise FormatError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3], dtype=">u2", count=w * h).reshape(h, w)
    return data.T.astype(np.int64)
