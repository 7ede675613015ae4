"""Global geometry of the radial families: lengths, volumes and the asymptotic cone.

Normalizations are fixed by the flat metric phi = e^r (P = |z|^2):

* radial arclength element ds = (1/2) sqrt(phi_r) dr, so that the flat
  distance from the origin to |z| is |z|;
* volume of {w <= e^r} is (pi^n / (n-1)!) (1/k) int phi^(n-1) phi_r dr,
  which is the Euclidean ball volume pi^n w^n / n! when k = 1.

Functions accept either a :class:`MetricFamily` (integrated with adaptive
quadrature on the closed form) or a :class:`RadialProfile` (integrated by a
cubic spline through the node values; analytic profiles defer to their
family).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .curvature import curvature_sup
from .oracle import AuditFinding, make_finding
from .radial import MetricFamily, RadialProfile, build_profile, eval_family

TAIL_EXPONENT = 50.0
CHUNK = 10.0
DENSITY_TOL = 0.01
SLOPE_TOL = 0.02


def _family_of(source):
    if isinstance(source, MetricFamily):
        return source
    if isinstance(source, RadialProfile) and source.family is not None:
        return source.family
    return None


def _integrate(func, lo, hi):
    """Adaptive quadrature in chunks of width CHUNK (keeps exponentials resolved)."""
    if hi <= lo:
        return 0.0
    edges = np.append(np.arange(lo, hi, CHUNK), hi)
    total = 0.0
    for x0, x1 in zip(edges[:-1], edges[1:]):
        if x1 <= x0:
            continue
        val, err = quad(func, x0, x1, epsabs=0.0, epsrel=1e-13, limit=200)
        if not np.isfinite(val):
            raise ArithmeticError(f"quadrature failed on [{x0}, {x1}]")
        total += val
    return total


def left_cutoff(family: MetricFamily, r_ref: float = 0.0) -> float:
    """A radius below which every left tail is smaller than e^-TAIL_EXPONENT.

    The slowest-decaying left integrand is sqrt(phi_r) ~ e^{a r / (2m)} (cone
    case c = 0); using that rate for all families is conservative.
    """
    rate = family.a / (2 * family.power)
    return r_ref - TAIL_EXPONENT / rate


def _phi_r(family, r):
    return float(eval_family(family, r, 1, dtype=np.float64)[1])


def _spline(profile: RadialProfile, values, r0, r1):
    grid = np.asarray(profile.grid, dtype=float)
    if r0 < grid[0] - 1e-12 or r1 > grid[-1] + 1e-12:
        raise ValueError(f"[{r0}, {r1}] outside the profile grid [{grid[0]}, {grid[-1]}]")
    return float(CubicSpline(grid, np.asarray(values, dtype=float)).integrate(r0, r1))


def arclength(source, r0: float, r1: float) -> float:
    """Radial distance s = (1/2) int_{r0}^{r1} sqrt(phi_r) dr; r0 may be -inf for a family."""
    if not r0 < r1:
        raise ValueError("need r0 < r1")
    family = _family_of(source)
    if family is not None:
        lo = max(r0, left_cutoff(family, min(r1, 0.0))) if np.isinf(r0) else r0
        return 0.5 * _integrate(lambda r: math.sqrt(_phi_r(family, r)), lo, r1)
    return 0.5 * _spline(source, np.sqrt(np.asarray(source.phi_r, dtype=float)), r0, r1)


def volume_to(source, r: float, n=None, k: int = 1) -> float:
    """Volume of the sublevel set {w <= e^r} (quotient by Z_k)."""
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    family = _family_of(source)
    n = n if n is not None else (family.n if family is not None else None)
    if n is None:
        raise ValueError("n is required for numeric profiles")
    pref = math.pi**n / math.factorial(n - 1) / k
    if family is not None:
        def integrand(s):
            phi, phi_r = eval_family(family, s, 1, dtype=np.float64)
            return float(phi) ** (n - 1) * float(phi_r)

        return pref * _integrate(integrand, left_cutoff(family, min(r, 0.0)), r)
    phi = np.asarray(source.phi, dtype=float)
    return pref * _spline(source, phi ** (n - 1) * np.asarray(source.phi_r, dtype=float), source.grid[0], r)


def _ratio_at(family, k, r):
    n = family.n
    s = arclength(family, -np.inf, r)
    return volume_to(family, r, n, k) / (math.pi**n * s ** (2 * n) / math.factorial(n))


def aitken(x0: float, x1: float, x2: float) -> float:
    """Aitken delta-squared extrapolation of three equally spaced samples."""
    denom = (x2 - x1) - (x1 - x0)
    if denom == 0 or abs(denom) < 1e-15 * max(abs(x2), 1.0):
        return x2
    return x2 - (x2 - x1) ** 2 / denom


def density_ratio(family: MetricFamily, k: int = 1, r_probe: float = 30.0, extrapolate: bool = True) -> float:
    """Vol(B_s) / Euclidean Vol(B_s) at the sphere w = e^{r_probe}, extrapolated to r -> inf.

    Samples at r_probe - 10, r_probe - 5, r_probe feed an Aitken extrapolation;
    the correction decays like e^{-a r / (2m)}, so three equally spaced probes
    are in the geometric regime the method assumes.
    """
    if r_probe < 20:
        raise ValueError("r_probe must be >= 20")
    if not extrapolate:
        return _ratio_at(family, k, r_probe)
    vals = [_ratio_at(family, k, r_probe - d) for d in (10.0, 5.0, 0.0)]
    return aitken(*vals)


def predicted_density(family: MetricFamily, k: int = 1) -> float:
    """Limit of the density ratio from the leading asymptotics phi^m ~ (m/a) e^{a r}."""
    n, m, a = family.n, family.power, family.a
    # phi ~ L e^{rate r} with L = (m/a)^{1/m}, rate = a/m
    lead_phi = (m / a) ** (1.0 / m)
    rate = a / m
    s_coef = 0.5 * math.sqrt(rate * lead_phi) * 2.0 / rate
    vol_coef = math.pi**n / math.factorial(n - 1) / k * lead_phi**n / n
    # V ~ vol_coef e^{n rate r}, s ~ s_coef e^{rate r / 2}
    return vol_coef / (math.pi**n * s_coef ** (2 * n) / math.factorial(n))


def printed_density(n: int, k: int) -> float:
    """The claimed limit k^{1-n} / 2^n."""
    return k ** (1 - n) / 2**n


def density_finding(family: MetricFamily, k: int = 1, r_probe: float = 40.0) -> AuditFinding:
    est = density_ratio(family, k, r_probe)
    return make_finding("density ratio of the asymptotic cone", "density_ratio", family.variant, "printed",
                        printed_density(family.n, k), est, DENSITY_TOL)


def zero_section_area(family: MetricFamily) -> float:
    """Area of the zero section CP^1 of L_{-k}: 2 pi times lim_{r->-inf} phi."""
    if family.n != 2:
        raise ValueError("zero-section area is defined for n = 2")
    if not family.integer_a:
        raise ValueError("zero-section area needs integer a (a bundle over CP^1)")
    if family.c == 0:
        raise ValueError("c = 0: the metric has no zero section")
    return 2 * math.pi * family.left_limit()


@dataclass(frozen=True)
class AsymptoticRates:
    left_slope: float
    right_slope: float
    expected_left: float
    expected_right: float
    crossover: float

    @property
    def left_ok(self) -> bool:
        return abs(self.left_slope - self.expected_left) <= SLOPE_TOL * self.expected_left

    @property
    def right_ok(self) -> bool:
        return abs(self.right_slope - self.expected_right) <= SLOPE_TOL * self.expected_right


def asymptotic_rates(profile: RadialProfile, a=None, m=None) -> AsymptoticRates:
    """Fit log phi_r linearly on the outer 20% of each end of the grid.

    Expected slopes are a (left, c > 0) and a/m (right); for a cone (c = 0)
    both are a/m.  ``crossover`` is where the two fitted lines meet (NaN
    when they are parallel to within SLOPE_TOL).
    """
    grid = np.asarray(profile.grid, dtype=float)
    if grid[0] > -10 or grid[-1] < 10:
        raise ValueError("asymptotic_rates needs a grid spanning [-10, 10]")
    fam = profile.family
    a = a if a is not None else (fam.a if fam is not None else None)
    m = m if m is not None else (fam.power if fam is not None else 2)
    logd = np.log(np.asarray(profile.phi_r, dtype=float))
    span = grid[-1] - grid[0]
    left = grid <= grid[0] + 0.2 * span
    right = grid >= grid[-1] - 0.2 * span
    sl, il = np.polyfit(grid[left], logd[left], 1)
    sr, ir = np.polyfit(grid[right], logd[right], 1)
    if a is None:
        a = sl
    cone = fam is not None and fam.c == 0
    exp_left = a / m if cone else a
    # parallel fits (the cone) have no meaningful intersection
    parallel = abs(sl - sr) <= SLOPE_TOL * max(abs(sl), abs(sr))
    crossover = float("nan") if parallel else (ir - il) / (sl - sr)
    return AsymptoticRates(float(sl), float(sr), float(exp_left), float(a / m), float(crossover))


@dataclass
class GeometryReport:
    arclength_left: float
    arclength_right_divergent: bool
    right_growth_ratio: float
    zero_section_area: float | None
    density_ratio_estimate: float
    density_ratio_predicted: float
    curvature_sup: float
    volume_profile: np.ndarray = field(repr=False)
    findings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "arclength_left": self.arclength_left,
            "arclength_right_divergent": self.arclength_right_divergent,
            "right_growth_ratio": self.right_growth_ratio,
            "zero_section_area": self.zero_section_area,
            "density_ratio_estimate": self.density_ratio_estimate,
            "density_ratio_predicted": self.density_ratio_predicted,
            "curvature_sup": self.curvature_sup,
            "volume_profile": [[float(r), float(v)] for r, v in self.volume_profile],
            "findings": [f.to_dict() for f in self.findings],
        }


def right_growth_ratio(family: MetricFamily, R: float = 20.0, step: float = 4.0) -> float:
    return arclength(family, 0.0, R + step) / arclength(family, 0.0, R)


def geometry_report(family: MetricFamily, k=None, grid_spec=(-12.0, 12.0, 2401), r_probe: float = 30.0) -> GeometryReport:
    """Collect the global checks for one family.  k defaults to a when a is an integer, else 1."""
    if k is None:
        k = int(family.a) if family.integer_a else 1
    growth = right_growth_ratio(family)
    # sqrt(phi_r) grows like e^{a r / (2m)}, so the ratio over a step of 4 tends to e^{2a/m}
    expected = math.exp(2 * family.a / family.power)
    zsa = None
    if family.n == 2 and family.integer_a and family.c > 0:
        zsa = zero_section_area(family)
    radii = np.linspace(-10.0, 10.0, 21)
    vols = np.array([[r, volume_to(family, r, family.n, k)] for r in radii])
    est = density_ratio(family, k, r_probe)
    findings = []
    if family.n > 2:
        findings.append(density_finding(family, k, max(r_probe, 40.0)))
    return GeometryReport(
        arclength_left=arclength(family, -np.inf, 0.0),
        arclength_right_divergent=bool(growth > 0.99 * expected),
        right_growth_ratio=growth,
        zero_section_area=zsa,
        density_ratio_estimate=est,
        density_ratio_predicted=predicted_density(family, k),
        curvature_sup=curvature_sup(build_profile(family, grid_spec)),
        volume_profile=vols,
        findings=findings,
    )
