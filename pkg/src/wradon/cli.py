"""``wradon`` command line: phantom, forward, sigma, invert, selftest.

Exit codes: 0 ok, 1 usage / bad input, 2 numerical gate failure (sigma >= 1,
divergence, failed self-test), 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from . import io as wio
from .grids import GridMismatchError, field_norm_l2, make_ball_mask, make_sphere_grid, make_uniform_grid

log = logging.getLogger("wradon")

EXIT_OK, EXIT_USAGE, EXIT_GATE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _set_threads(n):
    n = n or os.environ.get("WRADON_THREADS")
    if n:
        os.environ["OMP_NUM_THREADS"] = str(n)
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:
            log.debug("threadpoolctl not installed; --threads only sets OMP_NUM_THREADS")
        else:
            threadpool_limits(int(n))
    return n


# -- phantom ----------------------------------------------------------------------

def _analytic_mass(kind, spec):
    total = 0.0
    for item in spec:
        r, a = float(item["radius"]), float(item.get("amplitude", 1.0))
        if kind == "balls":
            total += a * 4.0 / 3.0 * np.pi * r**3
        else:
            radial = quad(lambda t: np.exp(1.0 - 1.0 / (1.0 - (t / r) ** 2)) * t**2, 0, r)[0]
            total += a * 4 * np.pi * radial
    return total


def cmd_phantom(args):
    from .weights import make_phantom, random_phantom_spec

    if args.n < 8:
        raise UsageError("--n must be at least 8")
    grid = make_uniform_grid(args.n, args.half_extent)
    mask = make_ball_mask(grid)
    domain_radius = 0.8 * args.half_extent
    if args.spec:
        spec = json.loads(Path(args.spec).read_text())
    elif args.count:
        spec = random_phantom_spec(args.count, args.seed, 0.3 * domain_radius, domain_radius)
    else:
        spec = [{"center": [0.0, 0.0, 0.0], "radius": 0.5 * domain_radius, "amplitude": 1.0}]
    try:
        f = make_phantom(args.kind, spec, grid, mask)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad phantom spec: {exc!r}") from exc
    wio.write_volume(args.out, f)
    mass = f.integral().real
    expected = _analytic_mass(args.kind, spec)
    meta = json.loads(wio.sidecar_path(args.out).read_text())
    meta.update({"phantom": {"kind": args.kind, "spec": spec, "seed": args.seed,
                             "analytic_mass": expected}})
    wio.sidecar_path(args.out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out}: {args.kind}, {len(spec)} component(s), "
          f"mass {mass:.6g} (analytic {expected:.6g})")
    return EXIT_OK


# -- forward ------------------------------------------------------------------------

def _load_weight(path, grid):
    if path is None:
        return None, None
    spec = wio.read_weight_spec(path)
    return wio.weight_from_spec(spec, grid)


def cmd_forward(args):
    from .radon import forward_weighted_radon

    f = wio.read_volume(args.volume)
    W, coeffs = _load_weight(args.weight, f)
    if coeffs is not None and not coeffs.grid.same_geometry(f):
        raise GridMismatchError("weight coefficient bundle and volume live on different grids")
    sphere = make_sphere_grid(args.n_gamma, args.n_phi)
    q = forward_weighted_radon(f, W, sphere, args.n_s)
    wio.write_sinogram(args.out, q)
    mass = q.values.sum(axis=1) * q.ds
    if W is None:
        ref = f.integral()
        dev = float(np.max(np.abs(mass - ref))) / max(abs(ref), 1e-300)
        log.info("mass conservation: max relative deviation %.3g over %d directions",
                 dev, sphere.n_directions)
    print(f"wrote {args.out}: {sphere.n_directions} directions x {args.n_s} offsets, "
          f"plane-integral mass range [{mass.real.min():.6g}, {mass.real.max():.6g}]")
    return EXIT_OK


# -- sigma / invert -------------------------------------------------------------------

def _grid_from_args(args):
    if getattr(args, "like", None):
        g = wio.read_volume(args.like)
        return g.zeros_like()
    return make_uniform_grid(args.n, args.half_extent)


def _coefficients(args, grid):
    from .harmonics import analyze_weight

    if args.weight is None:
        raise UsageError("--weight is required")
    W, coeffs = _load_weight(args.weight, grid)
    if coeffs is None:
        sphere = make_sphere_grid(args.analysis_gamma, 2 * args.analysis_gamma)
        coeffs = analyze_weight(W, grid, sphere, k_max=args.k_max)
        log.info("analyzed weight to K_max=%d, truncation residual %.3g",
                 coeffs.k_max, coeffs.truncation_residual)
    if not coeffs.grid.same_geometry(grid):
        raise GridMismatchError("weight coefficients and reconstruction grid differ")
    return coeffs


def cmd_sigma(args):
    from .operators import recommended_order, sigma_table

    grid = _grid_from_args(args)
    coeffs = _coefficients(args, grid)
    mask = make_ball_mask(grid)
    rows = sigma_table(coeffs, mask)
    best = recommended_order(coeffs, mask)
    print(f"{'m':>3} {'sigma_paper':>14} {'sigma_measured':>16}")
    for r in rows:
        print(f"{r['m']:>3} {r['sigma_paper']:>14.8f} {r['sigma_measured']:>16.8f}")
    print(f"recommended m = {best} (largest m with sigma_measured < 1)")
    if args.json:
        Path(args.json).write_text(json.dumps({"rows": rows, "recommended_m": best}, indent=2))
    return EXIT_OK


def _write_slices(out, f):
    base = Path(str(out) + ".slices")
    base.mkdir(parents=True, exist_ok=True)
    nz = f.dims[2]
    info = []
    for iz in sorted({nz // 4, nz // 2, (3 * nz) // 4}):
        name = f"z{iz:04d}.pgm"
        lo, hi = wio.write_pgm(base / name, f.values.real[:, :, iz])
        info.append({"file": name, "z_index": iz, "min": lo, "max": hi})
    (base / "slices.json").write_text(json.dumps({"slices": info}, indent=2) + "\n")


def cmd_invert(args):
    from .operators import DivergenceError, SigmaGateError, invert_approx, invert_exact

    q = wio.read_sinogram(args.sinogram)
    grid = _grid_from_args(args)
    coeffs = _coefficients(args, grid)
    mask = make_ball_mask(grid)
    ref = wio.read_volume(args.reference) if args.reference else None
    f_sup = float(np.max(np.abs(ref.values))) if ref is not None else args.f_sup
    kw = dict(tol=args.tol, max_iter=args.max_iter, force=args.force, route=args.route,
              f_sup=f_sup)
    try:
        if args.mode == "exact":
            f, report = invert_exact(q, coeffs, mask, **kw)
        else:
            m = 0 if args.mode == "chang" else args.m
            if m is None:
                raise UsageError("--m is required for --mode approx")
            if 2 * m > coeffs.k_max:
                raise UsageError(f"--m {m} exceeds K_max/2 = {coeffs.k_max // 2}")
            f, report = invert_approx(q, coeffs, mask, m, **kw)
    except (SigmaGateError, DivergenceError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        if exc.report is not None:
            Path(str(args.out) + ".report.json").write_text(exc.report.to_json(indent=2))
        return EXIT_GATE
    wio.write_volume(args.out, f)
    summary = json.loads(report.to_json())
    if ref is not None:
        summary["relative_error_L2D"] = field_norm_l2(f - ref, mask) / field_norm_l2(ref, mask)
    Path(str(args.out) + ".report.json").write_text(json.dumps(summary, indent=2) + "\n")
    Path(str(args.out) + ".residuals.csv").write_text(report.residuals_csv())
    _write_slices(args.out, f)
    line = (f"wrote {args.out}: mode={args.mode} m={report.order} iterations={report.iterations} "
            f"sigma_measured={report.sigma_measured:.4g} sigma_paper={report.sigma_paper:.4g}")
    if ref is not None:
        line += f" relative_error={summary['relative_error_L2D']:.4g}"
    print(line)
    return EXIT_OK


# -- selftest ---------------------------------------------------------------------------

def cmd_selftest(args):
    from unittest import mock

    from . import checks, kernels

    names = checks.QUICK_CHECKS if args.quick else None
    if args.corrupt_multiplier:
        good = kernels.operator_multiplier
        bad = lambda *a, **k: 1.5 * good(*a, **k)  # noqa: E731
        with mock.patch("wradon.operators.operator_multiplier", bad):
            results = checks.run_checks(args.n, names)
    else:
        results = checks.run_checks(args.n, names)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed at {args.n}^3")
    return EXIT_OK if failed == 0 else EXIT_GATE


# -- parser ------------------------------------------------------------------------------

def _add_grid_args(p):
    p.add_argument("--like", help="volume whose grid geometry is used")
    p.add_argument("--n", type=int, default=64, help="voxels per axis when --like is absent")
    p.add_argument("--half-extent", type=float, default=1.0)
    p.add_argument("--weight", help="weight spec JSON")
    p.add_argument("--k-max", type=int, default=8, help="analysis degree for non-series weights")
    p.add_argument("--analysis-gamma", type=int, default=16,
                   help="Gauss-Legendre nodes for weight analysis (n_phi = 2x)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wradon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--threads", type=int, help="cap worker threads (default: $WRADON_THREADS)")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized phantoms")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="write a phantom volume")
    s.add_argument("--kind", choices=["balls", "smooth-bumps"], required=True)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--half-extent", type=float, default=1.0)
    s.add_argument("--spec", help="JSON list of {center, radius, amplitude}")
    s.add_argument("--count", type=int, default=0, help="random components (uses --seed)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("forward", help="weighted Radon transform of a volume")
    s.add_argument("--volume", required=True)
    s.add_argument("--weight", help="weight spec JSON (default W = 1)")
    s.add_argument("--n-gamma", type=int, default=16)
    s.add_argument("--n-phi", type=int, default=32)
    s.add_argument("--n-s", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("sigma", help="sigma table and recommended order")
    _add_grid_args(s)
    s.add_argument("--json", help="also write the table as JSON")
    s.set_defaults(func=cmd_sigma)

    s = sub.add_parser("invert", help="reconstruct from a weighted sinogram")
    _add_grid_args(s)
    s.add_argument("--sinogram", required=True)
    s.add_argument("--mode", choices=["exact", "approx", "chang"], default="exact")
    s.add_argument("--m", type=int)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("--force", action="store_true", help="iterate even if sigma_measured >= 1")
    s.add_argument("--route", choices=["fbp", "fourier"], default="fbp")
    s.add_argument("--reference", help="true volume, for error reporting and f_sup")
    s.add_argument("--f-sup", type=float, help="sup|f| for the error bound")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("selftest", help="run the oracle check suite")
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--quick", action="store_true")
    s.add_argument("--corrupt-multiplier", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wradon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError, wio.FormatError) as exc:
        print(f"wradon: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GridMismatchError, ValueError) as exc:
        print(f"wradon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
