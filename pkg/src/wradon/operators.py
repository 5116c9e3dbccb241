"""The perturbation operators Q, sigma numbers, the Neumann solver and inversions.

``apply_Q`` evaluates

    Q_m u = sum_{k=1..m} sum_{|n|<=2k} R^{-1}( Y_{2k}^n(theta) R[(w_{2k,n}/w_{0,0}) chi_D u] )

through Fourier multipliers: the composition ``R^{-1}(Y R g)`` multiplies the
3D spectrum of ``g`` by ``Y_{2k}^n(xi/|xi|)`` (see :mod:`wradon.kernels`).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft as sfft

from .grids import DomainMask, ScalarField3D, Sinogram, field_norm_l2
from .harmonics import HarmonicCoefficients
from .kernels import (
    PAPER_MULTIPLIER_BOUND,
    max_abs_harmonic,
    operator_multiplier,
    periodic_image_constant,
)
from .radon import inverse_radon

__all__ = [
    "SolveReport",
    "SigmaGateError",
    "DivergenceError",
    "c_lower",
    "sigma",
    "sigma_table",
    "recommended_order",
    "apply_Q",
    "successive_approximations",
    "neumann_solve",
    "invert_exact",
    "invert_approx",
    "error_bound",
    "tail_sums",
]

log = logging.getLogger(__name__)


class SigmaGateError(RuntimeError):
    """sigma_measured >= 1 and the caller did not force the solve."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class DivergenceError(RuntimeError):
    """The successive approximations grew for three consecutive iterations."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class SolveReport:
    order: int = 0
    sigma_paper: float = 0.0
    sigma_measured: float = 0.0
    c_lower: float = 0.0
    residual_history: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    fixed_point_residual: float | None = None
    error_bound: float | None = None
    error_bound_measured: float | None = None
    tail_sum: float | None = None
    relaxed_tail_sum: float | None = None
    forced: bool = False

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)

    def residuals_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "relative_change"])
        for i, r in enumerate(self.residual_history, start=1):
            w.writerow([i, repr(float(r))])
        return buf.getvalue()


def _ratio_fields(coeffs: HarmonicCoefficients, mask: DomainMask, m: int):
    """(k, n, ratio) with ratio = chi_D w_{2k,n}/w_{0,0} for k = 1..m (present entries only)."""
    w00 = coeffs.w00.values
    inside = mask.values
    if not coeffs.w00.same_geometry(mask):
        raise ValueError("coefficients and mask live on different grids")
    if np.any(w00[inside] == 0):
        raise ValueError("w_{0,0} vanishes inside the domain")
    out = []
    for k in range(1, m + 1):
        for n in range(-2 * k, 2 * k + 1):
            f = coeffs.entries.get((2 * k, n))
            if f is None:
                continue
            r = np.zeros(mask.dims, dtype=np.complex128)
            r[inside] = f.values[inside] / w00[inside]
            if np.any(r):
                out.append((k, n, r))
    return out


def c_lower(coeffs: HarmonicCoefficients, mask: DomainMask) -> float:
    """inf over D of |w_{0,0}|."""
    return float(np.min(np.abs(coeffs.w00.values[mask.values])))


def _check_order(coeffs, m):
    if m < 0 or 2 * m > coeffs.k_max:
        raise ValueError(f"order m={m} needs 2m <= K_max={coeffs.k_max}")


def sigma(coeffs: HarmonicCoefficients, mask: DomainMask, m: int) -> tuple[float, float]:
    """(sigma_paper, sigma_measured) for truncation order ``m``.

    ``sigma_paper`` uses the constant 1/(2 pi sqrt 2) for every harmonic;
    ``sigma_measured`` uses max|Y_{2k}^n|, the sup of the multiplier that
    :func:`apply_Q` actually applies, so ``||Q_m|| <= sigma_measured``.
    """
    _check_order(coeffs, m)
    if c_lower(coeffs, mask) <= 0:
        raise ValueError("w_{0,0} vanishes inside the domain")
    paper = measured = 0.0
    for k, n, r in _ratio_fields(coeffs, mask, m):
        s = float(np.max(np.abs(r[mask.values])))
        paper += PAPER_MULTIPLIER_BOUND * s
        measured += max_abs_harmonic(2 * k, n) * s
    return paper, measured


def sigma_table(coeffs: HarmonicCoefficients, mask: DomainMask) -> list[dict]:
    rows = []
    for m in range(coeffs.k_max // 2 + 1):
        p, s = sigma(coeffs, mask, m)
        rows.append({"m": m, "sigma_paper": p, "sigma_measured": s})
    return rows


def recommended_order(coeffs: HarmonicCoefficients, mask: DomainMask) -> int:
    """Largest m with sigma_measured < 1 (sigma is non-decreasing in m)."""
    best = 0
    for row in sigma_table(coeffs, mask):
        if row["sigma_measured"] < 1:
            best = row["m"]
        else:
            break
    return best


def apply_Q(u: ScalarField3D, coeffs: HarmonicCoefficients, mask: DomainMask, m: int,
            pad: int = 2, image_correction: bool = True, _terms=None) -> ScalarField3D:
    """Q_m u via zero-padded FFTs; returns a field on ``u``'s grid.

    With ``image_correction`` the near-constant offset contributed by the
    periodic images of the padded box is removed
    (:func:`wradon.kernels.periodic_image_constant`); it matters for degree-4
    harmonics, whose lattice sums do not vanish.
    """
    _check_order(coeffs, m)
    if not u.same_geometry(mask):
        raise ValueError("field and mask live on different grids")
    terms = _ratio_fields(coeffs, mask, m) if _terms is None else _terms
    if m == 0 or not terms:
        return u.zeros_like()
    n = u.dims
    N = tuple(pad * d for d in n)
    acc = np.zeros(N, dtype=np.complex128)
    offset = 0.0
    for k, nn, r in terms:
        v = r * u.values
        acc += operator_multiplier(k, nn, N, u.spacing) * sfft.fftn(v, s=N)
        if image_correction:
            c = periodic_image_constant(k, nn, N, u.spacing)
            # Q applies Y = (2 pi)^{-1/2} times the multiplier of d, see kernels
            offset += c * np.sum(v) * u.voxel_volume / np.sqrt(2 * np.pi)
    out = sfft.ifftn(acc)[: n[0], : n[1], : n[2]] - offset
    return u.like(out)


def successive_approximations(g: ScalarField3D, apply_op, mask: DomainMask, tol: float = 1e-6,
                              max_iter: int = 200, report: SolveReport | None = None):
    """Iterate u_{j+1} = g - A u_j from u_0 = g until the L2(D) relative change is <= tol.

    Raises :class:`DivergenceError` after three consecutive growing steps
    ``||u_{j+1} - u_j||`` (the relative change saturates when the iterates blow up).
    """
    report = SolveReport() if report is None else report
    u = g
    prev = None
    growth = 0
    for it in range(1, max_iter + 1):
        u_new = g - apply_op(u)
        diff = field_norm_l2(u_new - u, mask)
        scale = field_norm_l2(u_new, mask)
        rel = diff / scale if scale > 0 else diff
        report.residual_history.append(rel)
        report.step_norms.append(diff)
        report.iterations = it
        u = u_new
        if rel <= tol:
            report.converged = True
            break
        if prev is not None and diff > prev:
            growth += 1
            if growth >= 3:
                raise DivergenceError(
                    f"successive approximations diverging after {it} iterations", report
                )
        else:
            growth = 0
        prev = diff
    gn = field_norm_l2(g, mask)
    res = field_norm_l2(u + apply_op(u) - g, mask)
    report.fixed_point_residual = res / gn if gn > 0 else res
    return u, report


def neumann_solve(g: ScalarField3D, coeffs: HarmonicCoefficients, mask: DomainMask, m: int,
                  tol: float = 1e-6, max_iter: int = 200, force: bool = False, pad: int = 2):
    """Solve u + Q_m u = g by successive approximations; returns ``(u, SolveReport)``."""
    sp, sm = sigma(coeffs, mask, m)
    report = SolveReport(order=m, sigma_paper=sp, sigma_measured=sm,
                         c_lower=c_lower(coeffs, mask), forced=force)
    if sm >= 1 and not force:
        raise SigmaGateError(f"sigma_measured={sm:.4g} >= 1 at order m={m}", report)
    if sm >= 1:
        log.warning("sigma_measured=%.4g >= 1; iterating anyway (forced)", sm)
    terms = _ratio_fields(coeffs, mask, m)
    if m == 0 or not terms:
        report.iterations = 1
        report.residual_history.append(0.0)
        report.converged = True
        report.fixed_point_residual = 0.0
        return g, report
    op = lambda v: apply_Q(v, coeffs, mask, m, pad=pad, _terms=terms)  # noqa: E731
    return successive_approximations(g, op, mask, tol, max_iter, report)


def _finish(u: ScalarField3D, coeffs, mask):
    w00 = coeffs.w00.values
    out = np.zeros(u.dims, dtype=np.complex128)
    inside = mask.values
    out[inside] = u.values[inside] / w00[inside]
    return u.like(out)


def invert_approx(q: Sinogram, coeffs: HarmonicCoefficients, mask: DomainMask, m: int,
                  tol: float = 1e-6, max_iter: int = 200, force: bool = False,
                  route: str = "fbp", f_sup: float | None = None, g: ScalarField3D | None = None):
    """f_m = (w_00)^{-1} (I + Q_m)^{-1} R^{-1} q on D (zero outside D).

    ``g`` may carry a precomputed ``R^{-1} q``.  When ``f_sup`` is given the
    report carries the tail error bound for order ``m``.
    """
    if g is None:
        g = inverse_radon(q, coeffs.grid, route=route)
    u, report = neumann_solve(g, coeffs, mask, m, tol=tol, max_iter=max_iter, force=force)
    if f_sup is not None:
        tails = tail_sums(coeffs, mask, m)
        report.tail_sum = tails["tail"]
        report.relaxed_tail_sum = tails["relaxed_tail"]
        if report.sigma_measured < 1:
            report.error_bound = error_bound(coeffs, mask, m, f_sup)
            report.error_bound_measured = error_bound(coeffs, mask, m, f_sup, constants="measured")
    return _finish(u, coeffs, mask), report


def invert_exact(q: Sinogram, coeffs: HarmonicCoefficients, mask: DomainMask,
                 K_half: int | None = None, **kw):
    """Inversion with Q truncated at the highest resolved order floor(K_max/2)."""
    K_half = coeffs.k_max // 2 if K_half is None else K_half
    return invert_approx(q, coeffs, mask, K_half, **kw)


def tail_sums(coeffs: HarmonicCoefficients, mask: DomainMask, m: int) -> dict:
    """sum_{k>m} sum_n ||w_{2k,n}||_{L2(D)} and the same with w_{2k,n}/w_{0,0}."""
    _check_order(coeffs, m)
    tail = relaxed = 0.0
    tail_meas = 0.0
    for k, n, r in _ratio_fields(coeffs, mask, coeffs.k_max // 2):
        if k <= m:
            continue
        wn = field_norm_l2(coeffs.entries[(2 * k, n)], mask)
        tail += wn
        tail_meas += max_abs_harmonic(2 * k, n) * wn
        relaxed += field_norm_l2(coeffs.w00.like(r), mask)
    return {"tail": tail, "relaxed_tail": relaxed, "tail_measured": tail_meas}


def error_bound(coeffs: HarmonicCoefficients, mask: DomainMask, m: int, f_sup: float,
                constants: str = "paper") -> float:
    """Bound on ||f - f_m||_{L2(D)} from the discarded even harmonics.

    ``constants="paper"``:   f_sup / (2 pi sqrt2 c (1 - sigma_paper)) * sum_tail ||w_{2k,n}||
    ``constants="measured"``: f_sup / (c (1 - sigma_measured)) * sum_tail max|Y_{2k}^n| ||w_{2k,n}||
    """
    sp, sm = sigma(coeffs, mask, m)
    c = c_lower(coeffs, mask)
    tails = tail_sums(coeffs, mask, m)
    if constants == "paper":
        if sp >= 1:
            raise ValueError(f"sigma_paper={sp:.4g} >= 1; bound undefined")
        return f_sup * PAPER_MULTIPLIER_BOUND * tails["tail"] / (c * (1 - sp))
    if constants == "measured":
        if sm >= 1:
            raise ValueError(f"sigma_measured={sm:.4g} >= 1; bound undefined")
        return f_sup * tails["tail_measured"] / (c * (1 - sm))
    raise ValueError(f"unknown constants {constants!r}")

