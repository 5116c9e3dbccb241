import json
import subprocess
import sys

import numpy as np
import pytest

from wradon import io as wio
from wradon.cli import main
from wradon.grids import make_ball_mask, make_uniform_grid
from wradon.radon import inverse_radon


def _spec(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


W2 = {"family": "finite_series",
      "parameters": {"terms": [{"k": 0, "n": 0, "amplitude": 1.0}, {"k": 2, "n": 0, "amplitude": 0.5}]}}


@pytest.fixture
def bump(tmp_path):
    spec = _spec(tmp_path / "ph.json", [{"center": [0.1, -0.05, 0], "radius": 0.45}])
    out = tmp_path / "f.vol"
    assert main(["phantom", "--kind", "smooth-bumps", "--n", "32", "--spec", spec,
                 "--out", str(out)]) == 0
    return out


def test_phantom_mass(tmp_path):
    out = tmp_path / "b.vol"
    assert main(["phantom", "--kind", "balls", "--n", "64", "--out", str(out)]) == 0
    assert out.exists() and wio.sidecar_path(out).exists()
    meta = json.loads(wio.sidecar_path(out).read_text())
    f = wio.read_volume(out)
    assert f.integral().real == pytest.approx(meta["phantom"]["analytic_mass"], rel=0.01)
    assert meta["phantom"]["analytic_mass"] == pytest.approx(4 / 3 * np.pi * 0.4**3)


def test_phantom_seeded(tmp_path):
    a, b = tmp_path / "a.vol", tmp_path / "b.vol"
    for p in (a, b):
        assert main(["--seed", "5", "phantom", "--kind", "smooth-bumps", "--n", "16",
                     "--count", "3", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_usage_errors(tmp_path, capsys):
    out = str(tmp_path / "x.vol")
    assert main(["phantom", "--kind", "balls", "--n", "4", "--out", out]) == 1
    with pytest.raises(SystemExit) as e:
        main(["phantom", "--kind", "none", "--out", out])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1


def test_forward_profile(tmp_path):
    g = make_uniform_grid(32, 1.0)
    r2 = np.sum(g.coordinates() ** 2, axis=-1)
    wio.write_volume(tmp_path / "g.vol", g.like(np.exp(-r2 / (2 * 0.25**2))))
    assert main(["forward", "--volume", str(tmp_path / "g.vol"), "--out", str(tmp_path / "q.sino")]) == 0
    q = wio.read_sinogram(tmp_path / "q.sino")
    prof = 2 * np.pi * 0.25**2 * np.exp(-q.s_nodes**2 / (2 * 0.25**2))
    err = np.linalg.norm(q.values - prof) / np.linalg.norm(np.broadcast_to(prof, q.values.shape))
    assert err < 0.02


def test_forward_zero_and_missing(tmp_path):
    wio.write_volume(tmp_path / "z.vol", make_uniform_grid(16, 1.0))
    assert main(["forward", "--volume", str(tmp_path / "z.vol"), "--out", str(tmp_path / "q.sino")]) == 0
    assert np.all(wio.read_sinogram(tmp_path / "q.sino").values == 0)
    assert main(["forward", "--volume", str(tmp_path / "nope.vol"), "--out", str(tmp_path / "q.sino")]) == 3


def test_forward_grid_mismatch(tmp_path, bump):
    g = make_uniform_grid(16, 1.0)
    C = {(0, 0): g.like(np.ones(g.dims)), (2, 0): g.like(np.full(g.dims, 0.2))}
    from wradon.harmonics import HarmonicCoefficients
    wio.write_bundle(tmp_path / "c.json", HarmonicCoefficients(2, C))
    spec = _spec(tmp_path / "w.json", {"family": "finite_series", "coefficients": "c.json"})
    assert main(["forward", "--volume", str(bump), "--weight", spec, "--out", str(tmp_path / "q.sino")]) == 1


def test_sigma(tmp_path, bump, capsys):
    one = _spec(tmp_path / "one.json", {"family": "constant", "parameters": {"c": 1.0}})
    js = tmp_path / "s.json"
    assert main(["sigma", "--like", str(bump), "--weight", one, "--k-max", "4", "--json", str(js)]) == 0
    rows = json.loads(js.read_text())["rows"]
    assert all(abs(r["sigma_paper"]) < 1e-12 and abs(r["sigma_measured"]) < 1e-12 for r in rows)
    w2 = _spec(tmp_path / "w2.json", W2)
    assert main(["sigma", "--like", str(bump), "--weight", w2, "--json", str(js)]) == 0
    d = json.loads(js.read_text())
    assert d["rows"][1]["sigma_paper"] == pytest.approx(0.5 / (2 * np.pi * np.sqrt(2)))
    assert d["rows"][1]["sigma_measured"] == pytest.approx(0.5)
    assert d["recommended_m"] == 1
    assert "recommended m = 1" in capsys.readouterr().out
    assert main(["sigma", "--like", str(bump), "--weight", str(tmp_path / "missing.json")]) == 3


def test_invert_exact_constant_is_fbp(tmp_path, bump):
    one = _spec(tmp_path / "one.json", {"family": "finite_series",
                                        "parameters": {"terms": [{"k": 0, "n": 0, "amplitude": 1}]}})
    q = tmp_path / "q.sino"
    assert main(["forward", "--volume", str(bump), "--out", str(q)]) == 0
    out = tmp_path / "r.vol"
    assert main(["invert", "--like", str(bump), "--weight", one, "--sinogram", str(q),
                 "--mode", "exact", "--out", str(out)]) == 0
    f = wio.read_volume(out)
    ref = inverse_radon(wio.read_sinogram(q), f, "fbp")
    m = make_ball_mask(f).values
    assert np.allclose(f.values[m], ref.values[m], atol=1e-14)
    assert (tmp_path / "r.vol.report.json").exists()
    assert (tmp_path / "r.vol.residuals.csv").read_text().startswith("iteration,")
    slices = json.loads((tmp_path / "r.vol.slices" / "slices.json").read_text())["slices"]
    assert len(slices) == 3 and (tmp_path / "r.vol.slices" / slices[0]["file"]).exists()


def test_invert_perturbed_improves_on_chang(tmp_path, bump):
    spec = _spec(tmp_path / "p.json", {"family": "perturbed", "parameters": {
        "c": 1.0, "terms": [{"k": 2, "n": 0, "amplitude": 0.5, "profile": "constant"},
                            {"k": 2, "n": 1, "amplitude": 0.1, "profile": "x1"}]}})
    q = tmp_path / "q.sino"
    assert main(["forward", "--volume", str(bump), "--weight", spec, "--out", str(q)]) == 0
    errs = {}
    for mode, extra in (("chang", []), ("approx", ["--m", "1"])):
        out = tmp_path / f"{mode}.vol"
        assert main(["invert", "--like", str(bump), "--weight", spec, "--k-max", "4",
                     "--sinogram", str(q), "--mode", mode, *extra, "--route", "fourier",
                     "--reference", str(bump), "--out", str(out)]) == 0
        errs[mode] = json.loads((tmp_path / f"{mode}.vol.report.json").read_text())["relative_error_L2D"]
    assert errs["approx"] < errs["chang"]


def test_invert_gate(tmp_path, bump):
    bad = _spec(tmp_path / "bad.json", {"family": "finite_series", "parameters": {"terms": [
        {"k": 0, "n": 0, "amplitude": 1.0}, {"k": 2, "n": 0, "amplitude": 1.5}]}})
    q = tmp_path / "q.sino"
    assert main(["forward", "--volume", str(bump), "--out", str(q)]) == 0
    out = tmp_path / "r.vol"
    args = ["invert", "--like", str(bump), "--weight", bad, "--sinogram", str(q),
            "--mode", "approx", "--m", "1", "--out", str(out)]
    assert main(args) == 2
    rep = json.loads((tmp_path / "r.vol.report.json").read_text())
    assert rep["sigma_measured"] == pytest.approx(1.5)
    assert not out.exists()
    assert main(args[:-2] + ["--m", "2", "--out", str(out)]) == 1


def test_selftest_quick_and_corrupted(capsys):
    assert main(["selftest", "--quick"]) == 0
    text = capsys.readouterr().out
    assert "[FAIL]" not in text and "checks passed" in text
    assert main(["selftest", "--quick", "--corrupt-multiplier"]) == 2
    assert "[FAIL]" in capsys.readouterr().out


def test_selftest_full():
    r = subprocess.run([sys.executable, "-m", "wradon.cli", "--threads", "2", "selftest"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stdout + r.stderr
    assert "[FAIL]" not in r.stdout
