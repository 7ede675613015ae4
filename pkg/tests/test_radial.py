import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kahler_ricci.errors import DomainOverflowError, GridError
from kahler_ricci.radial import (
    MetricFamily,
    RadialProfile,
    Variant,
    build_profile,
    check_kahler,
    differentiate_profile,
    eval_family,
    family_bxx,
    fd_weights,
    profile_from_values,
)

SQRT3 = math.sqrt(3.0)


def mp_phi(fam, r):
    m = fam.power
    return ((mpmath.mpf(m) / fam.a) * mpmath.exp(fam.a * r) + fam.c) ** (mpmath.mpf(1) / m)


def test_eval_family_values_at_origin():
    fam = MetricFamily(2, 1.0, 1.0, Variant.PAPER_N2)
    phi, phi_r, phi_rr, _ = (float(x) for x in eval_family(fam, 0.0))
    assert phi == pytest.approx(SQRT3, rel=1e-15)
    assert phi_r == pytest.approx(1 / SQRT3, rel=1e-15)
    assert phi_rr == pytest.approx((2 / 3) / SQRT3, rel=1e-15)


def test_flat_family_is_exponential():
    fam = MetricFamily(2, 2.0, 0.0, Variant.PAPER_N2)
    r = np.linspace(-5, 5, 11)
    for col in eval_family(fam, r):
        np.testing.assert_allclose(np.asarray(col, float), np.exp(r), rtol=1e-15)


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("n", [2, 3, 4])
def test_defining_identity(variant, n):
    fam = MetricFamily(n, 1.0, 1.0, variant)
    r = np.linspace(-30, 30, 241)
    phi, phi_r = eval_family(fam, r, 1)
    m = fam.power
    lhs = phi ** (m - 1) * phi_r
    rel = np.abs(lhs / np.exp(np.asarray(r, dtype=np.longdouble)) - 1)
    assert float(rel.max()) <= 1e-13


def test_paper_identity_sampled():
    fam = MetricFamily(2, 1.0, 1.0, Variant.PAPER_N2)
    r = np.random.default_rng(0).uniform(-10, 10, 100)
    phi, phi_r = eval_family(fam, r, 1)
    assert float(np.max(np.abs(phi * phi_r / np.exp(r.astype(np.longdouble)) - 1))) <= 1e-14


@pytest.mark.parametrize("fam", [MetricFamily(2, 1.0, 1.0), MetricFamily(3, 2.0, 0.5), MetricFamily(2, 1.5, 4.0)])
def test_higher_derivatives_against_mpmath(fam):
    with mpmath.workdps(30):
        for r in (-3.0, -0.4, 0.0, 1.7, 5.0):
            ours = [float(x) for x in eval_family(fam, r, 4)]
            ref = [float(mpmath.diff(lambda s: mp_phi(fam, s), r, k)) for k in range(5)]
            np.testing.assert_allclose(ours, ref, rtol=1e-14, atol=1e-17 * ref[0])


def test_scaling_identity_paper_n2():
    for b in (-2.0, 0.5, 3.0):
        fam = MetricFamily(2, 1.0, 1.0, Variant.PAPER_N2)
        other = MetricFamily(2, 1.0, math.exp(-b), Variant.PAPER_N2)
        r = np.linspace(-8, 8, 33)
        lhs = np.asarray(eval_family(fam, r + b, 0)[0], float)
        rhs = math.exp(b / 2) * np.asarray(eval_family(other, r, 0)[0], float)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-14)


def test_shifted_family_matches_definition():
    fam = MetricFamily(3, 2.0, 1.5)
    b = 0.7
    r = np.linspace(-4, 4, 9)
    lhs = np.asarray(eval_family(fam.shifted(b), r, 0)[0], float)
    rhs = math.exp(-fam.a * b / fam.power) * np.asarray(eval_family(fam, r + b, 0)[0], float)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-14)


def test_overflow_reports_radius():
    with pytest.raises(DomainOverflowError) as err:
        eval_family(MetricFamily(2, 1.0, 1.0), np.array([0.0, 20000.0]))
    assert err.value.r == 20000.0


@pytest.mark.parametrize("kwargs", [dict(n=1), dict(a=0.0), dict(c=-1.0), dict(n=2.5)])
def test_family_validation(kwargs):
    with pytest.raises(ValueError):
        MetricFamily(**kwargs)


def test_family_properties():
    fam = MetricFamily(2, 1.0, 4.0)
    assert fam.predicted_boundary() == pytest.approx(math.log(4))
    assert fam.left_limit() == pytest.approx(2.0)
    assert MetricFamily.flat(3).is_flat
    assert not MetricFamily(2, 1.5, 1.0).integer_a
    assert MetricFamily(3, 2.0, 1.0).theorem_range


def test_build_profile_default_grid():
    prof = build_profile(MetricFamily(2, 1.0, 1.0))
    assert len(prof) == 2401
    assert prof.spacing == pytest.approx(0.01)
    assert prof.provenance == "analytic"
    assert check_kahler(prof).passed


def test_build_profile_rejects_short_grid():
    with pytest.raises(GridError):
        build_profile(MetricFamily(2, 1.0, 1.0), (-12, 12, 3))


def test_flat_profile_phi_equals_phi_r():
    prof = build_profile(MetricFamily(2, 2.0, 0.0, Variant.PAPER_N2), (-5, 5, 1001))
    np.testing.assert_allclose(np.asarray(prof.phi, float), np.asarray(prof.phi_r, float), rtol=1e-15)
    assert check_kahler(prof).passed


def test_profile_validation():
    g = np.linspace(0, 1, 6)
    with pytest.raises(GridError):
        RadialProfile(g, g, g, g, g[:5])
    with pytest.raises(GridError):
        RadialProfile(g[::-1], g, g, g, g)
    prof = RadialProfile(g, g + 1, g + 1, g, g)
    with pytest.raises(ValueError):
        prof.phi[0] = 3.0


def test_check_kahler_reports_bad_node():
    prof = build_profile(MetricFamily(2, 1.0, 1.0), (-2, 2, 41))
    phi_r = np.array(prof.phi_r)
    phi_r[17] = -1
    bad = RadialProfile(prof.grid, prof.phi, phi_r, prof.phi_rr, prof.phi_rrr)
    rep = check_kahler(bad)
    assert not rep.passed
    assert rep.failing_nodes == (17,)
    assert check_kahler(bad, window=(1.0, 2.0)).passed


def test_fd_weights_exact():
    assert fd_weights((-1, 0, 1), 1) == (-0.5, 0.0, 0.5)
    w = fd_weights((-2, -1, 0, 1, 2), 1)
    assert w == pytest.approx((1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12))


def test_differentiate_exponential():
    grid = np.linspace(-5, 5, 1001)
    d = differentiate_profile(np.exp(grid), grid)
    assert np.max(np.abs(d / np.exp(grid) - 1)) <= 1e-8


def test_differentiate_constant():
    grid = np.linspace(-5, 5, 101)
    assert np.max(np.abs(differentiate_profile(np.full(101, 3.25), grid))) <= 1e-12


def test_differentiate_family_phi():
    fam = MetricFamily(2, 1.0, 1.0)
    prof = build_profile(fam, (-10, 10, 2001))
    d = differentiate_profile(np.asarray(prof.phi, float), prof.grid)
    assert np.max(np.abs(d / np.asarray(prof.phi_r, float) - 1)) <= 1e-7


def test_differentiate_fourth_order_convergence():
    errs = []
    for nodes in (101, 201):
        grid = np.linspace(0, 2, nodes)
        errs.append(np.max(np.abs(differentiate_profile(np.sin(grid), grid) - np.cos(grid))))
    assert errs[0] / errs[1] > 12  # 2^4 = 16 in the asymptotic regime


def test_differentiate_rejects_nonuniform():
    grid = np.array([0.0, 0.1, 0.3, 0.35, 0.5, 0.9])
    with pytest.raises(GridError):
        differentiate_profile(grid**2, grid)


def test_profile_from_values_matches_analytic():
    fam = MetricFamily(2, 1.0, 1.0)
    ref = build_profile(fam, (-6, 6, 1201))
    num = profile_from_values(ref.grid, np.asarray(ref.phi, float))
    assert num.provenance == "numeric"
    for k in (1, 2):
        a, b = np.asarray(num.derivatives()[k], float), np.asarray(ref.derivatives()[k], float)
        assert np.max(np.abs(a - b)) / np.max(np.abs(b)) < 1e-7


@pytest.mark.parametrize("fam", [MetricFamily(2, 1.0, 1.0), MetricFamily(3, 2.0, 1.0), MetricFamily(2, 1.5, 0.5)])
def test_family_bxx_matches_derivative_formula(fam):
    r = np.linspace(-3, 3, 13)
    f0, f1, f2, f3 = eval_family(fam, r)
    direct = (f2 * f2 / f1 - f3) / (f1 * f1)
    np.testing.assert_allclose(np.asarray(family_bxx(fam, r), float), np.asarray(direct, float), rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(
    a=st.floats(0.2, 3.0),
    c=st.floats(0.01, 50.0),
    n=st.integers(2, 5),
    r=st.floats(-20.0, 20.0),
)
def test_property_positivity_and_identity(a, c, n, r):
    fam = MetricFamily(n, a, c)
    phi, phi_r, phi_rr = eval_family(fam, r, 2)
    assert phi > 0 and phi_r > 0
    # differentiated identity: (phi^{n-1} phi_r)_r = a e^{ar}
    lhs = (n - 1) * phi ** (n - 2) * phi_r**2 + phi ** (n - 1) * phi_rr
    assert float(lhs / (a * np.exp(np.longdouble(a) * np.longdouble(r)))) == pytest.approx(1.0, rel=1e-12)
