import json

import numpy as np
import pytest

from wradon import operators as ops
from wradon.grids import field_norm_l2, make_ball_mask, make_sphere_grid, make_uniform_grid
from wradon.harmonics import HarmonicCoefficients
from wradon.radon import forward_radon, forward_weighted_radon, inverse_radon
from wradon.weights import finite_series_weight, make_phantom

SQ = 2 * np.pi * np.sqrt(2)


@pytest.fixture(scope="module")
def g():
    return make_uniform_grid(16, 1.0)


@pytest.fixture(scope="module")
def mask(g):
    return make_ball_mask(g)


def _coeffs(g, terms, k_max=None, w00=1.0):
    entries = {(0, 0): g.like(np.full(g.dims, w00, dtype=complex))}
    entries.update({kn: g.like(np.full(g.dims, v, dtype=complex)) for kn, v in terms.items()})
    return HarmonicCoefficients(k_max or max(k for k, _ in entries), entries)


def test_sigma_examples(g, mask):
    one = _coeffs(g, {}, k_max=4)
    for m in range(3):
        assert ops.sigma(one, mask, m) == (0.0, 0.0)
    C = _coeffs(g, {(2, 0): 0.3})
    assert ops.sigma(C, mask, 0) == (0.0, 0.0)
    sp, sm = ops.sigma(C, mask, 1)
    assert sp == pytest.approx(0.3 / SQ, rel=1e-14)
    assert sm == pytest.approx(0.3, rel=1e-12)
    assert 0.5 / SQ == pytest.approx(0.0563, abs=1e-4)


def test_sigma_ratio_uses_w00(g, mask):
    C = _coeffs(g, {(2, 1): 0.4, (4, -3): 0.2}, w00=2.0)
    sp, _ = ops.sigma(C, mask, 2)
    assert sp == pytest.approx((0.2 + 0.1) / SQ, rel=1e-14)
    assert ops.sigma(C, mask, 1)[0] == pytest.approx(0.2 / SQ, rel=1e-14)


def test_sigma_rejects(g, mask):
    with pytest.raises(ValueError):
        ops.sigma(_coeffs(g, {}, w00=0.0), mask, 0)
    with pytest.raises(ValueError):
        ops.sigma(_coeffs(g, {(2, 0): 0.1}), mask, 2)


def test_sigma_table_and_recommendation(g, mask):
    C = _coeffs(g, {(2, 0): 0.5, (4, 0): 0.7})
    rows = ops.sigma_table(C, mask)
    assert [r["m"] for r in rows] == [0, 1, 2]
    assert rows[2]["sigma_measured"] == pytest.approx(1.2)
    assert ops.recommended_order(C, mask) == 1


def test_apply_Q_trivial_cases(g, mask, rng):
    u = g.like(rng.normal(size=g.dims))
    C = _coeffs(g, {(2, 0): 0.5})
    assert np.all(ops.apply_Q(u, C, mask, 0).values == 0)
    assert np.all(ops.apply_Q(u, _coeffs(g, {}, k_max=4), mask, 2).values == 0)


def test_apply_Q_linear(g, mask, rng):
    C = _coeffs(g, {(2, 0): 0.5, (2, -1): 0.2j, (4, 3): 0.1})
    u = g.like(rng.normal(size=g.dims))
    v = g.like(rng.normal(size=g.dims) + 1j * rng.normal(size=g.dims))
    a = ops.apply_Q(u * 2.0 + v, C, mask, 2).values
    b = 2.0 * ops.apply_Q(u, C, mask, 2).values + ops.apply_Q(v, C, mask, 2).values
    assert np.max(np.abs(a - b)) < 1e-12 * np.max(np.abs(a))


def test_operator_norm_below_sigma(g, mask, rng):
    C = _coeffs(g, {(2, 0): 0.3, (2, 2): 0.2, (4, 1): 0.1})
    _, sm = ops.sigma(C, mask, 2)
    for _ in range(5):
        u = g.like(rng.normal(size=g.dims))
        Qu = ops.apply_Q(u, C, mask, 2)
        assert field_norm_l2(Qu, mask) <= sm * field_norm_l2(u, mask)


def test_scalar_surrogate_geometric_series(g, mask, rng):
    f = g.like(rng.normal(size=g.dims))
    for q in (0.5, -0.7):
        u, rep = ops.successive_approximations(f, lambda v: q * v, mask, tol=1e-12)
        assert rep.converged
        assert field_norm_l2(u - f * (1 / (1 + q)), mask) < 1e-10 * field_norm_l2(f, mask)
        assert rep.fixed_point_residual < 1e-10


def test_divergence_detected(g, mask, rng):
    f = g.like(rng.normal(size=g.dims))
    with pytest.raises(ops.DivergenceError) as err:
        ops.successive_approximations(f, lambda v: 1.5 * v, mask, max_iter=50)
    assert err.value.report.iterations < 10


def test_neumann_m0_and_gate(g, mask, rng):
    f = g.like(rng.normal(size=g.dims))
    u, rep = ops.neumann_solve(f, _coeffs(g, {(2, 0): 0.5}), mask, 0)
    assert u is f and rep.iterations == 1
    bad = _coeffs(g, {(2, 0): 1.5})
    with pytest.raises(ops.SigmaGateError) as err:
        ops.neumann_solve(f, bad, mask, 1)
    assert err.value.report.sigma_measured == pytest.approx(1.5)


def test_neumann_fixed_point(g, mask):
    f = make_phantom("smooth-bumps", [{"center": (0, 0, 0), "radius": 0.6}], g)
    C = _coeffs(g, {(2, 0): 0.5})
    u, rep = ops.neumann_solve(f, C, mask, 1, tol=1e-9)
    assert rep.converged
    r = field_norm_l2(u + ops.apply_Q(u, C, mask, 1) - f, mask) / field_norm_l2(f, mask)
    assert r <= 2e-9
    steps = np.asarray(rep.step_norms)
    assert np.all(steps[1:] / steps[:-1] <= rep.sigma_measured + 0.05)
    d = json.loads(rep.to_json())
    assert d["iterations"] == rep.iterations
    lines = rep.residuals_csv().splitlines()
    assert lines[0] == "iteration,relative_change" and len(lines) == rep.iterations + 1


@pytest.fixture(scope="module")
def setup32():
    g = make_uniform_grid(32, 1.0)
    mask = make_ball_mask(g)
    sph = make_sphere_grid(16, 32)
    f = make_phantom("smooth-bumps", [{"center": (0.1, -0.05, 0), "radius": 0.45}], g, mask)
    return g, mask, sph, f


def test_invert_constant_weight_is_plain_inverse(setup32):
    g, mask, sph, f = setup32
    q = forward_radon(f, sph, 64)
    C = _coeffs(g, {(2, 0): 0.0})
    out, rep = ops.invert_exact(q, C, mask, route="fbp")
    ref = inverse_radon(q, g, "fbp")
    assert np.allclose(out.values[mask.values], ref.values[mask.values], atol=1e-14)
    assert np.all(out.values[~mask.values] == 0)


def test_invert_zero_sinogram(setup32):
    g, mask, sph, _ = setup32
    q = forward_radon(g.zeros_like(), sph, 64)
    out, _ = ops.invert_exact(q, _coeffs(g, {(2, 0): 0.5}), mask)
    assert np.all(out.values == 0)


def test_invert_approx_ladder(setup32):
    g, mask, sph, f = setup32
    C = _coeffs(g, {(2, 0): 0.5})
    q = forward_weighted_radon(f, finite_series_weight(C.entries), sph, 64)
    gq = inverse_radon(q, g, "fourier")
    f0, _ = ops.invert_approx(q, C, mask, 0, g=gq)
    # Chang-type: R^-1 q divided by w00 on D
    assert np.allclose(f0.values[mask.values], gq.values[mask.values])
    f1, _ = ops.invert_approx(q, C, mask, 1, g=gq)
    fe, _ = ops.invert_exact(q, C, mask, g=gq)
    assert np.array_equal(f1.values, fe.values)
    e0 = field_norm_l2(f0 - f, mask)
    e1 = field_norm_l2(f1 - f, mask)
    assert e1 <= e0


def test_error_bound_formula(g, mask):
    eps, delta = 0.3, 0.15
    C = _coeffs(g, {(2, 0): eps, (4, 0): delta})
    vol = mask.volume
    expected = 2.0 * delta * np.sqrt(vol) / (SQ * 1.0 * (1 - eps / SQ))
    assert ops.error_bound(C, mask, 1, 2.0) == pytest.approx(expected, rel=1e-12)
    meas = 2.0 * delta * np.sqrt(vol) / (1 - eps)
    assert ops.error_bound(C, mask, 1, 2.0, constants="measured") == pytest.approx(meas, rel=1e-9)
    assert ops.error_bound(C, mask, 2, 2.0) == 0.0
    t = ops.tail_sums(C, mask, 1)
    assert t["tail"] == pytest.approx(delta * np.sqrt(vol))
    assert t["relaxed_tail"] == pytest.approx(delta * np.sqrt(vol))
    with pytest.raises(ValueError):
        ops.error_bound(_coeffs(g, {(2, 0): 1.2, (4, 0): 0.1}), mask, 1, 1.0, constants="measured")
