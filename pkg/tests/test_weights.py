import numpy as np
import pytest

from wradon.grids import field_sup, make_ball_mask, make_sphere_grid, make_uniform_grid
from wradon.harmonics import analyze_weight, ylm_table
from wradon.operators import sigma
from wradon.weights import (
    ConstantWeight,
    attenuation_weight,
    constant_weight,
    direction_angles,
    finite_series_weight,
    make_phantom,
    perturbed_weight,
    random_phantom_spec,
    ray_transform,
    symmetrized_weight,
)

SQ = 2 * np.pi * np.sqrt(2)


@pytest.fixture(scope="module")
def g8():
    return make_uniform_grid(8, 1.0)


@pytest.fixture(scope="module")
def g32():
    return make_uniform_grid(32, 1.0)


@pytest.fixture(scope="module")
def sph():
    return make_sphere_grid(8, 16)


def test_constant_weight(g8, sph):
    for c in (1.0, 5.0):
        C = analyze_weight(constant_weight(c), g8, sph, k_max=2)
        assert np.max(np.abs(C.w00.values - c)) < 1e-12
    assert constant_weight(2 - 1j).c_lower == pytest.approx(np.sqrt(5))
    with pytest.raises(ValueError):
        constant_weight(0)


def test_series_weight_examples(g8, sph):
    one = g8.like(np.ones(g8.dims))
    W = finite_series_weight([(0, 0, one)])
    d = sph.directions[:5]
    assert np.allclose(W(g8.points()[:3], d), 1.0)
    W2 = finite_series_weight({(0, 0): 1.0, (2, 0): 0.5})
    C = W2.coefficients(g8)
    mask = make_ball_mask(g8)
    assert sigma(C, mask, 1)[0] == pytest.approx(0.5 / SQ)
    assert 0.5 / SQ == pytest.approx(0.0563, abs=5e-5)


def test_series_odd_part_discarded(g8):
    W = finite_series_weight({(0, 0): 1.0, (1, 0): 0.9})
    Ws = symmetrized_weight(W)
    dirs = make_sphere_grid(4, 8).directions
    assert np.allclose(Ws(g8.points()[:7], dirs), 1.0, atol=1e-14)


def test_series_weight_rejects(g8):
    with pytest.raises(ValueError):
        finite_series_weight({(2, 0): 1.0})
    with pytest.raises(ValueError):
        finite_series_weight({(0, 0): 0.0})
    with pytest.raises(ValueError):
        finite_series_weight({(0, 0): 1.0, (1, 2): 1.0})


def test_series_round_trip(g8, rng):
    sph = make_sphere_grid(16, 32)
    entries = {(k, n): g8.like(rng.normal(size=g8.dims)) for k in range(5) for n in range(-k, k + 1)}
    entries[(0, 0)] = g8.like(3.0 + rng.random(g8.dims))
    W = finite_series_weight(entries)
    C = analyze_weight(W, g8, sph, k_max=4)
    W2 = finite_series_weight(C)
    C2 = analyze_weight(W2, g8, sph, k_max=4)
    for kn in C.keys():
        assert np.max(np.abs(C2.entries[kn].values - C.entries[kn].values)) < 1e-9
    assert W2.c_lower > 0


def test_perturbed_weight(g8, sph):
    W = perturbed_weight(2.0, lambda p, d: np.zeros((len(p), len(d))))
    assert np.allclose(W(g8.points()[:4], sph.directions), 2.0)
    assert W.c_lower == 2.0

    def V(p, d):
        gam, phi = direction_angles(d)
        return 0.2 * np.sin(p[:, 0])[:, None] * ylm_table(2, np.cos(gam), phi, [(2, 0)])

    Wp = perturbed_weight(1.0, V, grid=g8)
    C = analyze_weight(Wp, g8, make_sphere_grid(16, 32), k_max=4)
    sp, _ = sigma(C, make_ball_mask(g8), 1)
    assert sp <= 0.2 / SQ + 1e-12
    assert Wp.c_lower > 0.8

    with pytest.raises(ValueError):
        perturbed_weight(1.0, lambda p, d: np.ones((len(p), len(d))))
    Wf = perturbed_weight(1.0, lambda p, d: np.ones((len(p), len(d))), bound_check=False)
    assert Wf.c_lower == 0.0


def _ball(grid, rho, mu=1.0, center=(0, 0, 0)):
    return make_phantom("balls", [{"center": center, "radius": rho, "amplitude": mu}], grid,
                        make_ball_mask(grid, 0.9), supersample=8)


def test_attenuation_examples(g32):
    dirs = make_sphere_grid(4, 8).directions
    w0 = attenuation_weight(g32.zeros_like())
    assert np.allclose(w0(np.zeros((1, 3)), dirs), 1.0)
    a = _ball(g32, 0.5)
    W = attenuation_weight(a)
    assert np.max(np.abs(W(np.zeros((1, 3)), dirs).real / np.exp(-0.5) - 1)) < 0.01
    # from (0.8, 0, 0) heading +x the ray never meets the ball
    assert W(np.array([[0.8, 0, 0]]), np.array([[1.0, 0, 0]]))[0, 0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        attenuation_weight(a * -1.0)


def test_attenuation_multiplicative(g32):
    a = _ball(g32, 0.3, 0.8, (0.2, 0, 0))
    b = _ball(g32, 0.25, 1.5, (-0.2, 0.1, 0))
    pts = np.array([[0.0, 0.0, 0.0], [0.1, -0.2, 0.3]])
    dirs = make_sphere_grid(4, 8).directions
    wa, wb = attenuation_weight(a)(pts, dirs), attenuation_weight(b)(pts, dirs)
    wab = attenuation_weight(a + b)(pts, dirs)
    assert np.max(np.abs(wab - wa * wb)) < 1e-12


def test_ray_transform(g32):
    ball = _ball(g32, 0.5)
    rays = [(np.zeros(3), np.array([0, 0, 1.0])), (np.zeros(3), np.array([0.6, 0.8, 0]))]
    v = ray_transform(ball, ConstantWeight(1.0), rays)
    assert np.max(np.abs(v / 1.0 - 1)) < 0.01
    assert np.allclose(ray_transform(g32.zeros_like(), ConstantWeight(1.0), rays), 0)
    v3 = ray_transform(ball, ConstantWeight(3.0), rays)
    assert np.allclose(v3, 3 * v)
    with pytest.raises(ValueError):
        ray_transform(ball, ConstantWeight(1.0), [(np.zeros(3), np.array([1.0, 1.0, 0]))])


def test_phantoms(g32):
    rho = 0.5
    ball = make_phantom("balls", [{"center": (0, 0, 0), "radius": rho}], g32, supersample=4)
    assert ball.integral().real == pytest.approx(4 / 3 * np.pi * rho**3, rel=0.01)
    assert np.all(make_phantom("balls", [], g32).values == 0)
    bump = make_phantom("smooth-bumps", [{"center": (0, 0, 0), "radius": 0.4}], g32)
    # grid nodes sit half a voxel off the origin, so compare with the nearest-node value
    assert field_sup(bump, make_ball_mask(g32)) == pytest.approx(1.0, abs=0.02)
    g33 = make_uniform_grid(33, 1.0)
    bump33 = make_phantom("smooth-bumps", [{"center": (0, 0, 0), "radius": 0.4}], g33)
    assert np.max(bump33.values.real) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        make_phantom("balls", [{"center": (0.7, 0, 0), "radius": 0.3}], g32)
    with pytest.raises(ValueError):
        make_phantom("cubes", [], g32)


def test_random_spec_deterministic_and_inside():
    a = random_phantom_spec(5, 11, 0.3, 0.8)
    assert a == random_phantom_spec(5, 11, 0.3, 0.8)
    assert a != random_phantom_spec(5, 12, 0.3, 0.8)
    for item in a:
        assert np.linalg.norm(item["center"]) + item["radius"] < 0.8
