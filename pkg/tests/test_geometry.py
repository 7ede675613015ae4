import math

import numpy as np
import pytest

from kahler_ricci.geometry import (
    aitken,
    arclength,
    asymptotic_rates,
    density_finding,
    density_ratio,
    geometry_report,
    predicted_density,
    printed_density,
    right_growth_ratio,
    volume_to,
    zero_section_area,
)
from kahler_ricci.radial import MetricFamily, build_profile, profile_from_values

FAM = MetricFamily(2, 1.0, 1.0)
FLAT = MetricFamily.flat(2)


def test_flat_arclength_is_modulus():
    for r in (-4.0, 0.0, 3.0):
        assert arclength(FLAT, -np.inf, r) == pytest.approx(math.exp(r / 2), rel=1e-12)


def test_flat_volume_is_euclidean_ball():
    for n in (2, 3):
        fam = MetricFamily.flat(n)
        r = 1.3
        assert volume_to(fam, r) == pytest.approx(math.pi**n * math.exp(n * r) / math.factorial(n), rel=1e-12)


def test_volume_quotient_by_k():
    assert volume_to(FAM, 2.0, k=2) == pytest.approx(volume_to(FAM, 2.0) / 2, rel=1e-15)
    with pytest.raises(ValueError):
        volume_to(FAM, 2.0, k=0)


def test_arclength_profile_matches_family():
    prof = build_profile(FAM, (-12, 12, 2401))
    num = profile_from_values(prof.grid, np.asarray(prof.phi, float))
    ref = arclength(FAM, -5.0, 5.0)
    assert arclength(num, -5.0, 5.0) == pytest.approx(ref, rel=1e-7)
    with pytest.raises(ValueError):
        arclength(num, -20.0, 0.0)
    with pytest.raises(ValueError):
        arclength(FAM, 1.0, 0.0)


def test_volume_numeric_profile_needs_n():
    prof = build_profile(FAM, (-12, 12, 2401))
    num = profile_from_values(prof.grid, np.asarray(prof.phi, float))
    with pytest.raises(ValueError):
        volume_to(num, 0.0)
    # the grid truncation at -12 only misses an O(e^-12) sliver
    assert volume_to(num, 0.0, n=2) == pytest.approx(volume_to(FAM, 0.0), rel=1e-4)


def test_left_arclength_converges():
    s30 = arclength(FAM, -30.0, 0.0)
    s50 = arclength(FAM, -50.0, 0.0)
    s60 = arclength(FAM, -60.0, 0.0)
    assert abs(s60 - s50) <= 1e-10
    assert s30 < s50 < arclength(FAM, -np.inf, 0.0) + 1e-12


def test_right_growth_tends_to_e():
    ratios = [right_growth_ratio(FAM, R) for R in (12.0, 16.0, 20.0, 28.0)]
    errs = [abs(x / math.e - 1) for x in ratios]
    assert errs == sorted(errs, reverse=True)
    assert errs[-1] < 1e-3


def test_aitken_geometric_sequence():
    seq = [1 + 0.5**k for k in range(3)]
    assert aitken(*seq) == pytest.approx(1.0, rel=1e-14)
    assert aitken(2.0, 2.0, 2.0) == 2.0


def test_density_n2():
    assert density_ratio(FAM, 1, 30.0) == pytest.approx(0.25, abs=0.01)
    assert predicted_density(FAM, 1) == pytest.approx(0.25, rel=1e-14)
    assert printed_density(2, 1) == 0.25


def test_density_flat_calibration():
    assert density_ratio(FLAT, 1, 30.0) == pytest.approx(1.0, abs=1e-6)
    assert predicted_density(FLAT, 1) == pytest.approx(1.0, rel=1e-14)


def test_density_rejects_small_probe():
    with pytest.raises(ValueError):
        density_ratio(FAM, 1, 10.0)


def test_density_n3_differs_from_printed_value():
    fam = MetricFamily(3, 1.0, 1.0)
    assert predicted_density(fam, 1) == pytest.approx(1 / 27, rel=1e-14)
    f = density_finding(fam, 1)
    assert f.oracle_value == pytest.approx(1 / 27, rel=1e-3)
    assert f.printed_value == pytest.approx(1 / 8)
    assert f.verdict == "Inconsistent"


def test_density_n3_a2():
    fam = MetricFamily(3, 2.0, 1.0)
    assert predicted_density(fam, 2) == pytest.approx(4 / 27, rel=1e-14)
    assert density_ratio(fam, 2, 40.0) == pytest.approx(4 / 27, rel=1e-3)


@pytest.mark.parametrize("c", [1.0, 4.0])
def test_zero_section_area(c):
    fam = MetricFamily(2, 1.0, c)
    assert abs(zero_section_area(fam) - 2 * math.pi * math.sqrt(c)) <= 1e-12


def test_zero_section_area_independent_route():
    # phi at very negative r equals sqrt(c) to double precision
    phi = float(build_profile(FAM, (-200, -190, 11)).phi[0])
    assert 2 * math.pi * phi == pytest.approx(zero_section_area(FAM), abs=1e-12)


@pytest.mark.parametrize("fam", [MetricFamily(3, 1.0, 1.0), MetricFamily(2, 1.5, 1.0), FLAT])
def test_zero_section_area_rejects(fam):
    with pytest.raises(ValueError):
        zero_section_area(fam)


def test_asymptotic_rates():
    rates = asymptotic_rates(build_profile(FAM))
    assert rates.left_ok and rates.right_ok
    assert rates.left_slope == pytest.approx(1.0, rel=1e-3)
    assert rates.right_slope == pytest.approx(0.5, rel=1e-3)
    shifted = asymptotic_rates(build_profile(MetricFamily(2, 1.0, 100.0)))
    assert shifted.crossover - rates.crossover == pytest.approx(math.log(100), rel=0.05)


def test_asymptotic_rates_cone():
    rates = asymptotic_rates(build_profile(FLAT))
    assert rates.left_ok and rates.right_ok
    assert math.isnan(rates.crossover)


def test_asymptotic_rates_needs_wide_grid():
    with pytest.raises(ValueError):
        asymptotic_rates(build_profile(FAM, (-5, 5, 1001)))


def test_geometry_report():
    rep = geometry_report(FAM)
    assert rep.arclength_right_divergent
    assert rep.zero_section_area == pytest.approx(2 * math.pi)
    assert rep.density_ratio_estimate == pytest.approx(0.25, abs=0.01)
    assert rep.volume_profile.shape == (21, 2)
    assert np.all(np.diff(rep.volume_profile[:, 1]) > 0)
    d = rep.to_dict()
    assert d["findings"] == [] and len(d["volume_profile"]) == 21


def test_geometry_report_n3_has_finding():
    rep = geometry_report(MetricFamily(3, 1.0, 1.0))
    assert rep.zero_section_area is None
    assert [f.quantity for f in rep.findings] == ["density_ratio"]
