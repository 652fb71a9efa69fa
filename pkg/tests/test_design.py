import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage
from scipy.spatial.distance import directed_hausdorff

from caccdrive import design as D
from caccdrive.control import REDESIGNED_GAINS, ControllerGains
from caccdrive.errors import (
    ConfigError,
    DegenerateBoundaryError,
    EmptyRegionError,
    IllConditionedError,
)

SPEC = D.DEFAULT_DREGION
MODEL = D.LoopModel()


def model(mode, **kw):
    return D.LoopModel(delay_mode=mode, **kw)


@pytest.fixture(scope="module")
def regions():
    return {m: D.assemble_region(SPEC, model(m)) for m in D.DELAY_MODES}


# -- characteristic function ----------------------------------------------------

@pytest.mark.parametrize("mode", D.DELAY_MODES)
def test_char_eval_at_origin_is_kp(mode):
    assert D.char_eval(0.0, ControllerGains(0.37, 1.9), model(mode)) == pytest.approx(0.37)


def test_char_eval_plant_only():
    assert D.char_eval(-1.0, ControllerGains(0, 0), MODEL) == pytest.approx(0.5)


def test_exact_and_pade1_agree_at_low_frequency():
    g = ControllerGains(1.3, 0.8)
    e = D.char_eval(0.1j, g, model("exact"))
    p = D.char_eval(0.1j, g, model("pade1"))
    assert abs(e - p) / abs(e) < 1e-4


def test_spacing_factor_enters_when_requested():
    m = model("none", headway_in_loop=True)
    s = 0.3 + 0.2j
    g = ControllerGains(2.0, 0.5)
    expected = s * s * (0.5 * s + 1) + (2.0 + 0.5 * s) * (1 + 0.6 * s)
    assert D.char_eval(s, g, m) == pytest.approx(expected)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5),
       st.floats(-3, 0), st.floats(0, 20), st.sampled_from(D.DELAY_MODES))
def test_affine_in_gains(kp1, kd1, kp2, kd2, x, y, mode):
    m, s = model(mode), complex(x, y)
    g1, g2 = ControllerGains(kp1, kd1), ControllerGains(kp2, kd2)
    lhs = D.char_eval(s, g1, m) + D.char_eval(s, g2, m) - D.char_eval(s, ControllerGains(0, 0), m)
    rhs = D.char_eval(s, ControllerGains(kp1 + kp2, kd1 + kd2), m)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(rhs))


def test_pade_coefficients():
    num, den = D.pade(0.1, 1)
    assert np.allclose(num, [-0.05, 1]) and np.allclose(den, [0.05, 1])
    num, den = D.pade(0.1, 2)
    s = 0.05j
    approx = np.polyval(num, s) / np.polyval(den, s)
    assert abs(approx - np.exp(-0.1 * s)) < 1e-12


# -- complex / real root boundaries --------------------------------------------

@pytest.mark.parametrize("mode", D.DELAY_MODES)
@pytest.mark.parametrize("boundary", D.CRB_BOUNDARIES)
def test_crb_residuals(mode, boundary):
    m = model(mode)
    c = D.map_crb(boundary, SPEC, m)
    assert c.params.size == D.DEFAULT_RESOLUTION
    s = c.s
    res = np.array([abs(D.char_eval(z, ControllerGains(p, d), m))
                    for z, p, d in zip(s, c.kp, c.kd)])
    assert res.max() < 1e-8
    assert np.all(np.diff(c.params) > 0)


def test_damping_ray_near_origin_gives_zero_kp():
    c = D.map_crb("damping", SPEC, MODEL, np.geomspace(1e-9, 1e-6, 20))
    assert abs(c.kp[0]) < 1e-8
    assert np.all(np.abs(c.kp) < 1e-5)


@pytest.mark.parametrize("in_loop", [False, True])
def test_sigma_crb_matches_symbolic_solve(in_loop):
    sig = SPEC.sigma
    kp, kd = sp.symbols("kp kd", real=True)
    s = -sp.Rational(1, 2) + sp.I * sp.Rational(1, 2)  # omega = sigma
    H = (1 + sp.Rational(3, 5) * s) if in_loop else 1
    delta = sp.expand(s ** 2 * (sp.Rational(1, 2) * s + 1) + (kp + kd * s) * H)
    sol = sp.solve([sp.re(delta), sp.im(delta)], [kp, kd], dict=True)[0]
    c = D.map_crb("sigma", SPEC, model("none", headway_in_loop=in_loop), [sig])
    assert c.kp[0] == pytest.approx(float(sol[kp]), abs=1e-12)
    assert c.kd[0] == pytest.approx(float(sol[kd]), abs=1e-12)


def test_all_singular_grid_is_degenerate():
    with pytest.raises(DegenerateBoundaryError):
        D.map_crb("sigma", SPEC, MODEL, [0.0])


def test_decreasing_grid_violates_curve_invariant():
    with pytest.raises(ConfigError):
        D.map_crb("sigma", SPEC, MODEL, [2.0, 1.0])


def test_rrb_at_origin_is_kp_zero():
    c = D.map_rrb("zero", SPEC, MODEL)
    assert np.all(c.kp == 0)


def test_rrb_sigma_matches_hand_substitution():
    # delta(-sigma) = sigma^2 (1 - tau sigma) + kp - kd sigma = 0
    sig, tau = SPEC.sigma, 0.5
    c = D.map_rrb("sigma", SPEC, model("none"), kd_range=(0.0, 2.0), n=5)
    assert np.allclose(c.kp, sig * c.kd - sig ** 2 * (1 - tau * sig))


def test_rrb_bandwidth_distinct_from_sigma():
    a = D.map_rrb("sigma", SPEC, MODEL, n=10)
    b = D.map_rrb("bandwidth", SPEC, MODEL, n=10)
    assert not np.allclose(a.kp, b.kp)
    assert b.residuals(MODEL).max() < 1e-8


def test_pade1_bandwidth_rrb_is_kp_equals_20kd():
    c = D.map_rrb("bandwidth", SPEC, model("pade1"), n=11)
    assert np.allclose(c.kp, 20 * c.kd)


# -- rational poles -------------------------------------------------------------

def test_poles_plant_only():
    r = sorted(D.poles(ControllerGains(0, 0), model("none")), key=lambda z: z.real)
    assert np.allclose(r, [-2, 0, 0], atol=1e-7)


@pytest.mark.parametrize("mode,order,count", [("none", 1, 3), ("pade1", 1, 4), ("exact", 2, 5)])
def test_pole_count(mode, order, count):
    assert len(D.poles(REDESIGNED_GAINS, model(mode), order)) == count


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.sampled_from([1, 2]))
def test_pole_residuals(kp, kd, order):
    g = ControllerGains(kp, kd)
    c = D.char_poly(g, MODEL, order)
    for z in D.poles(g, MODEL, order):
        assert abs(np.polyval(c, z)) < 1e-7 * np.abs(c).max() * max(1, abs(z)) ** (c.size - 1)


def test_leading_coefficient_underflow():
    with pytest.raises(IllConditionedError):
        D.polyroots([0.0, 1.0, 2.0])


def test_redesigned_dominant_rational_poles_in_region():
    # the pade1 pole near -20.14 has no exact-delay counterpart (see certificate test)
    r = D.poles(REDESIGNED_GAINS, model("pade1"), 1)
    dominant = [z for z in r if abs(z) < 10]
    assert len(dominant) == 3
    m = D.d_margins(dominant, SPEC)
    assert min(m.values()) >= 0


def test_redesigned_exact_certificate():
    cert = D.pole_certificate(REDESIGNED_GAINS, SPEC, MODEL)
    assert cert.certified and cert.feasible
    assert len(cert.roots) == 3
    assert [round(abs(z.real), 3) for z in cert.roots] == [0.663, 0.597, 0.597]
    assert min(D.damping_ratio(z) for z in cert.roots) == pytest.approx(0.8603, abs=1e-3)
    assert len(cert.artifacts) == 1 and cert.artifacts[0].real == pytest.approx(-20.14, abs=0.01)
    f, _ = D._exact_parts(REDESIGNED_GAINS, MODEL)
    assert max(abs(f(z)) for z in cert.roots) < 1e-9


def test_spec_spacing_factor_loop_misses_region():
    # keeping (1 + h s) in the error loop puts the redesigned gains outside the D-region
    m = model("pade1", headway_in_loop=True)
    r = D.poles(REDESIGNED_GAINS, m, 1)
    assert max(z.real for z in r if abs(z) < 10) > -SPEC.sigma


def test_strict_damping_fails_redesigned_gains():
    strict = D.DRegionSpec()
    assert not D.pole_certificate(REDESIGNED_GAINS, strict, MODEL).feasible


def test_fast_path_matches_certificate():
    rng = np.random.default_rng(3)
    kp = rng.uniform(0, 1, 60)
    kd = rng.uniform(0, 2, 60)
    fast = D.batch_margins(kp, kd, SPEC, MODEL)
    for p, d, f in zip(kp, kd, fast):
        c = D.pole_certificate(ControllerGains(p, d), SPEC, MODEL)
        assert (f >= 0) == c.feasible
        assert f == pytest.approx(c.margin, abs=1e-7)


# -- region ---------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(omega_b=0.4), dict(theta=0), dict(theta=90),
                                dict(sigma=0), dict(damping_tol=-0.1)])
def test_dregion_validation(kw):
    with pytest.raises(ConfigError):
        D.DRegionSpec(**kw)


def test_damping_convention():
    assert D.DRegionSpec().zeta_min == pytest.approx(math.sqrt(3) / 2)
    assert SPEC.zeta_min == pytest.approx(math.sqrt(3) / 2 - 0.01)


@pytest.mark.parametrize("mode", D.DELAY_MODES)
def test_region_contains_redesigned_gains(regions, mode):
    r = regions[mode]
    assert D.in_region(REDESIGNED_GAINS, r)
    assert r.probe.feasible and r.probe.certified
    assert D.in_region(r.probe.gains, r)
    assert not D.in_region(ControllerGains(0.0, 0.0), r)


def test_curve_residuals_in_region(regions):
    for mode, r in regions.items():
        for c in r.curves:
            assert c.residuals(r.model).max() < 1e-8, (mode, c.label)


def _corner_free_edge_points(r):
    edges = r.edge_points()
    d = r.diameter
    for label, pts in edges.items():
        idx = r.active[label]
        others = [v for k, v in edges.items() if k != label and len(v)]
        if not others:
            continue
        others = np.vstack(others)
        for i, p in zip(idx, pts):
            if np.min(np.hypot(*(others - p).T)) > 0.02 * d:
                yield r.curve(label), i


def test_boundary_straddle(regions):
    r = regions["exact"]
    d = r.diameter
    n = 0
    for k, (c, i) in enumerate(_corner_free_edge_points(r)):
        if k % 4:
            continue
        p = c.points
        t = p[i + 1] - p[i - 1]
        nrm = np.array([-t[1], t[0]]) / np.hypot(*t)
        inward = nrm if r.sides[c.label] > 0 else -nrm
        for ok, q in ((True, p[i] + 0.01 * d * inward), (False, p[i] - 0.01 * d * inward)):
            cert = D.pole_certificate(ControllerGains(*q), SPEC, r.model)
            assert cert.feasible is ok, (c.label, i, q)
        n += 1
    assert n > 40


def test_side_flags(regions):
    sides = regions["exact"].sides
    assert sides["sigma_crb"] != 0 and sides["damping_crb"] != 0 and sides["sigma_rrb"] != 0


def test_pole_and_geometry_agree_on_random_samples(regions):
    r = regions["exact"]
    rng = np.random.default_rng(11)
    lo_p, hi_p, lo_d, hi_d = r.box
    pts = np.column_stack([rng.uniform(lo_p, hi_p, 100), rng.uniform(lo_d, hi_d, 100)])
    geo = r.geometric_inside(pts)
    cell = math.hypot(r.kp_grid[1] - r.kp_grid[0], r.kd_grid[1] - r.kd_grid[0])
    edge = np.vstack([v for v in r.edge_points().values() if len(v)])
    for q, g in zip(pts, geo):
        pole = D.pole_certificate(ControllerGains(*q), SPEC, r.model).feasible
        if pole != g:
            assert np.min(np.hypot(*(edge - q).T)) < cell


def _edge_cells(mask, r):
    kk, dd = np.meshgrid(r.kp_grid, r.kd_grid)
    e = mask & ~ndimage.binary_erosion(mask)
    return np.column_stack([kk[e], dd[e]])


def test_exact_and_pade1_regions_close(regions):
    a, b = regions["exact"], regions["pade1"]
    ea, eb = _edge_cells(D.geometric_mask(a), a), _edge_cells(D.geometric_mask(b), b)
    h = max(directed_hausdorff(ea, eb)[0], directed_hausdorff(eb, ea)[0])
    assert h < 0.05 * a.diameter


def test_mismatch_recorded_in_diagnostics(regions):
    # delay-free curves do not bound the exact-delay feasible set
    r = regions["none"]
    geo = D.geometric_mask(r)
    j, i = np.argwhere(geo != r.mask)[0]
    before = len(r.diagnostics)
    D.in_region(ControllerGains(r.kp_grid[i], r.kd_grid[j]), r)
    assert len(r.diagnostics) == before + 1


def test_empty_region_reported():
    with pytest.raises(EmptyRegionError):
        D.assemble_region(D.DRegionSpec(sigma=3.0), MODEL, resolution=50)


def test_wider_cone_gives_larger_region(regions):
    wide = D.assemble_region(D.DRegionSpec(theta=45.0), MODEL, resolution=200)
    base = regions["exact"]

    def area(r):
        return r.mask.mean() * (r.box[1] - r.box[0]) * (r.box[3] - r.box[2])

    assert area(wide) > area(base)
    assert D.in_region(REDESIGNED_GAINS, wide)


def test_region_export(tmp_path, regions):
    r = regions["exact"]
    D.write_region_csv(r, tmp_path / "r.csv")
    back = D.read_region_csv(tmp_path / "r.csv")
    assert set(back) == {c.label for c in r.curves}
    c = r.curve("damping_crb")
    assert np.array_equal(back["damping_crb"][:, 1], c.kp)
    doc = D.region_summary(r)
    assert doc["probe"]["certified"] and doc["spec"]["sigma"] == 0.5
