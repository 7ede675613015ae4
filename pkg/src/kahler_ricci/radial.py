"""Radial Kahler potentials on C^n minus the origin.

A U(n)-invariant potential P depends on w = |z|^2 only through r = log w.
Everything downstream is expressed through phi = dP/dr and its r-derivatives.

Two closed-form families are provided, both of the shape

    phi = F**(1/m),    F = (m/a) * exp(a r) + c,

with m = 2 (``Variant.PAPER_N2``, so phi * phi_r = exp(a r)) or m = n
(``Variant.CORRECTED_GENERAL``, so phi**(n-1) * phi_r = exp(a r)).
Writing rho = d(log F)/dr = m exp(a r) / F, one has rho' = rho (a - rho) and
every r-derivative of phi equals phi times a polynomial in rho.  Those
polynomials are generated exactly, so no finite differences are ever applied
to an analytic family.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import DomainOverflowError, GridError

DEFAULT_GRID = (-12.0, 12.0, 2401)
MIN_NODES = 5


class Variant(str, enum.Enum):
    PAPER_N2 = "paper_n2"
    CORRECTED_GENERAL = "corrected_general"


class FormulaVersion(str, enum.Enum):
    """Which Ricci-potential formula to use for n > 2 (they agree at n = 2)."""

    PRINTED = "printed"
    CORRECTED = "corrected"


@dataclass(frozen=True)
class MetricFamily:
    """Parameters of a closed-form radial family.

    ``a`` doubles as the bundle index k when it is an integer in [1, n-1].
    ``c = 0`` gives a cone (flat space when additionally a equals the power m).
    """

    n: int = 2
    a: float = 1.0
    c: float = 1.0
    variant: Variant = Variant.CORRECTED_GENERAL

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 2:
            raise ValueError(f"complex dimension must be an integer >= 2, got {self.n!r}")
        if not np.isfinite(self.a) or self.a <= 0:
            raise ValueError(f"a must be positive, got {self.a!r}")
        if not np.isfinite(self.c) or self.c < 0:
            raise ValueError(f"c must be non-negative, got {self.c!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "variant", Variant(self.variant))

    @classmethod
    def flat(cls, n=2, variant=Variant.CORRECTED_GENERAL):
        """phi = e^r, i.e. P = |z|^2."""
        a = 2 if Variant(variant) is Variant.PAPER_N2 else n
        return cls(n=n, a=a, c=0.0, variant=variant)

    @property
    def power(self) -> int:
        return 2 if self.variant is Variant.PAPER_N2 else self.n

    @property
    def is_flat(self) -> bool:
        return self.c == 0 and self.a == self.power

    @property
    def integer_a(self) -> bool:
        return float(self.a).is_integer()

    @property
    def theorem_range(self) -> bool:
        """0 < a < n and c > 0: the range where Ricci starts non-negative."""
        return 0 < self.a < self.n and self.c > 0

    def predicted_boundary(self) -> float:
        """r* = log(a c) / a; d(psi_r)/dt at t=0 is negative exactly for r < r*."""
        if self.c <= 0:
            return float("-inf")
        return float(np.log(self.a * self.c) / self.a)

    def left_limit(self) -> float:
        """lim phi as r -> -inf, i.e. c**(1/m)."""
        return float(self.c ** (1.0 / self.power))

    def shifted(self, b: float) -> "MetricFamily":
        """Family whose phi(r) equals exp(-a b / m) * phi_self(r + b)."""
        return MetricFamily(self.n, self.a, self.c * float(np.exp(-self.a * b)), self.variant)


def _poly_der(coef):
    if len(coef) == 1:
        return coef[:1] * 0
    return coef[1:] * np.arange(1, len(coef), dtype=coef.dtype)


def _poly_add(p, q):
    out = np.zeros(max(len(p), len(q)), dtype=p.dtype)
    out[: len(p)] += p
    out[: len(q)] += q
    return out


def _poly_times_rho(p):
    return np.concatenate([np.zeros(1, dtype=p.dtype), p])


def _horner(coef, x):
    out = np.zeros_like(x) + coef[-1]
    for cf in coef[-2::-1]:
        out = out * x + cf
    return out


def _rho_flow(poly, a):
    """Coefficients of d/dr poly(rho) = poly'(rho) * rho * (a - rho)."""
    d = _poly_der(poly)
    return _poly_add(_poly_times_rho(d) * a, -_poly_times_rho(_poly_times_rho(d)))


def _phi_polys(p, a, order):
    # phi^{(k)} = phi * P_k(rho), P_{k+1} = p rho P_k + P_k' rho (a - rho)
    polys = [np.array([1], dtype=p.dtype)]
    for _ in range(order):
        prev = polys[-1]
        polys.append(_poly_add(_poly_times_rho(prev) * p, _rho_flow(prev, a)))
    return polys


def _rho_polys(a, order, dtype):
    polys = [np.array([0, 1], dtype=dtype)]
    for _ in range(order):
        polys.append(_rho_flow(polys[-1], a))
    return polys


def _exp_and_rho(family, r, dtype):
    r = np.asarray(r, dtype=dtype)
    a = dtype(family.a)
    c = dtype(family.c)
    m = family.power
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(a * r)
        f = (dtype(m) / a) * e + c
        rho = dtype(m) * e / f
    bad = ~(np.isfinite(f) & np.isfinite(rho))
    if np.any(bad):
        raise DomainOverflowError(float(np.atleast_1d(r)[np.atleast_1d(bad)][0]))
    return e, f, rho


def eval_family(family: MetricFamily, r, order: int = 3, dtype=np.longdouble):
    """Closed-form phi and its first ``order`` r-derivatives.

    Returns a tuple ``(phi, phi_r, ..., phi^{(order)})`` of arrays (or scalars
    when ``r`` is scalar) in ``dtype``; the default extended precision keeps
    the curvature combinations, which cancel strongly as r -> -inf, accurate.
    """
    _, f, rho = _exp_and_rho(family, r, dtype)
    p = dtype(1) / dtype(family.power)
    phi = f**p
    polys = _phi_polys(p, dtype(family.a), order)
    return tuple(phi * _horner(poly, rho) for poly in polys)


def family_psi(family: MetricFamily, r, version=FormulaVersion.CORRECTED, order=0, dtype=np.longdouble):
    """psi and its r-derivatives for an analytic family, via psi = n - a - kappa*rho.

    Independent route from :func:`kahler_ricci.curvature.psi_of`, which works
    from the phi-derivatives; used for base solutions in the flow solver.
    """
    version = FormulaVersion(version)
    _, _, rho = _exp_and_rho(family, r, dtype)
    m, n = family.power, family.n
    if version is FormulaVersion.CORRECTED:
        kappa = dtype(n) / dtype(m) - 1
    else:
        kappa = dtype(2) / dtype(m) - 1
    a = dtype(family.a)
    polys = _rho_polys(a, order, dtype)
    out = [dtype(n) - a - kappa * rho]
    out += [-kappa * _horner(poly, rho) for poly in polys[1:]]
    return tuple(out)


def _poly_mul(p, q):
    return np.convolve(p, q)


def family_bxx(family: MetricFamily, r, dtype=np.longdouble):
    """(phi_rr^2/phi_r - phi_rrr)/phi_r^2 without the cancellation as r -> -inf.

    With phi^{(k)} = phi P_k(rho) the quantity is N(rho) / (phi P_1^3) where
    N = P_2^2 - P_1 P_3.  P_1 = p rho, so N is divisible by rho^3; the division
    is done on coefficients, where the cancelling low-order terms vanish
    exactly instead of being subtracted at tiny rho.
    """
    _, f, rho = _exp_and_rho(family, r, dtype)
    p = dtype(1) / dtype(family.power)
    _, p1, p2, p3 = _phi_polys(p, dtype(family.a), 3)
    num = _poly_add(_poly_mul(p2, p2), -_poly_mul(p1, p3))
    quotient = num[3:]
    return _horner(quotient, rho) / (p**3 * f**p)


@dataclass(frozen=True)
class RadialProfile:
    """phi and three r-derivatives sampled on a strictly increasing grid.

    ``family`` is the originating closed form, or ``None`` for numeric data.
    Positivity is *not* enforced here; use :func:`check_kahler`.
    """

    grid: np.ndarray
    phi: np.ndarray
    phi_r: np.ndarray
    phi_rr: np.ndarray
    phi_rrr: np.ndarray
    family: MetricFamily | None = None
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        arrays = [np.asarray(x) for x in (self.grid, self.phi, self.phi_r, self.phi_rr, self.phi_rrr)]
        lengths = {len(x) for x in arrays}
        if len(lengths) != 1:
            raise GridError(f"profile arrays have unequal lengths {sorted(lengths)}")
        if arrays[0].ndim != 1 or len(arrays[0]) < MIN_NODES:
            raise GridError(f"profile needs at least {MIN_NODES} nodes, got {len(arrays[0])}")
        if not np.all(np.diff(arrays[0]) > 0):
            raise GridError("grid must be strictly increasing")
        for name, arr in zip(("grid", "phi", "phi_r", "phi_rr", "phi_rrr"), arrays):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def provenance(self) -> str:
        return "numeric" if self.family is None else "analytic"

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def __len__(self):
        return len(self.grid)

    def derivatives(self):
        return self.phi, self.phi_r, self.phi_rr, self.phi_rrr


def build_profile(family: MetricFamily, grid_spec=DEFAULT_GRID, dtype=np.longdouble) -> RadialProfile:
    r_min, r_max, nodes = grid_spec
    if nodes < MIN_NODES:
        raise GridError(f"node_count {nodes} below minimum {MIN_NODES}")
    if not r_min < r_max:
        raise GridError(f"empty grid interval [{r_min}, {r_max}]")
    grid = np.linspace(r_min, r_max, int(nodes))
    return RadialProfile(grid, *eval_family(family, grid, 3, dtype), family=family)


def profile_from_values(grid, phi) -> RadialProfile:
    """Numeric profile; derivatives come from :func:`differentiate_profile`."""
    grid = np.asarray(grid, dtype=float)
    phi = np.asarray(phi)
    return RadialProfile(
        grid,
        phi,
        differentiate_profile(phi, grid, 1),
        differentiate_profile(phi, grid, 2),
        differentiate_profile(phi, grid, 3),
    )


# -- finite differences -------------------------------------------------------


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple, deriv: int) -> tuple:
    """Exact (rational) Fornberg weights for ``deriv`` at 0 on integer ``offsets``."""
    xs = [Fraction(o) for o in offsets]
    npts = len(xs)
    c = [[Fraction(0)] * (deriv + 1) for _ in range(npts)]
    c[0][0] = Fraction(1)
    c1 = Fraction(1)
    c4 = xs[0]
    for i in range(1, npts):
        mn = min(i, deriv)
        c2 = Fraction(1)
        c5 = c4
        c4 = xs[i]
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2
            for k in range(mn, 0, -1):
                c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3
            c[j][0] = c4 * c[j][0] / c3
        c1 = c2
    return tuple(c[i][deriv] for i in range(npts))


def stencil_rows(nodes: int, deriv: int):
    """Yield (row, offsets, weights) for 4th-order accurate ``deriv``-th derivatives.

    Interior rows are centred; rows too close to an end use a one-sided
    window of ``deriv + 4`` nodes shifted to stay on the grid.
    """
    half = (deriv + 1) // 2 + 1
    width = deriv + 4
    if nodes < width:
        raise GridError(f"need at least {width} nodes for derivative order {deriv}")
    central = tuple(range(-half, half + 1))
    wc = fd_weights(central, deriv)
    rows = []
    for i in range(nodes):
        if half <= i < nodes - half:
            rows.append((i, central, wc))
            continue
        start = min(max(i - width // 2, 0), nodes - width)
        offs = tuple(j - i for j in range(start, start + width))
        rows.append((i, offs, fd_weights(offs, deriv)))
    return rows


def _check_uniform(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < MIN_NODES:
        raise GridError(f"grid needs at least {MIN_NODES} nodes")
    steps = np.diff(grid)
    h = (grid[-1] - grid[0]) / (len(grid) - 1)
    if h <= 0 or np.max(np.abs(steps - h)) > 1e-9 * abs(h) + 1e-12 * np.max(np.abs(grid)):
        raise GridError("grid is not uniform")
    return h


def differentiate_profile(values, grid, deriv: int = 1):
    """4th-order finite-difference ``deriv``-th derivative on a uniform grid.

    Preserves the dtype of ``values`` (extended precision stays extended).
    """
    h = _check_uniform(grid)
    values = np.asarray(values)
    dtype = values.dtype.type if np.issubdtype(values.dtype, np.floating) else np.float64
    values = values.astype(dtype, copy=False)
    nodes = len(values)
    rows = stencil_rows(nodes, deriv)
    half = (deriv + 1) // 2 + 1
    out = np.zeros(nodes, dtype=dtype)
    _, central, wc = rows[half]
    for off, wgt in zip(central, wc):
        if wgt:
            out[half : nodes - half] += _frac(wgt, dtype) * values[half + off : nodes - half + off]
    for i, offs, wgt in rows[:half] + rows[nodes - half :]:
        out[i] = sum(_frac(w, dtype) * values[i + o] for o, w in zip(offs, wgt))
    return out / dtype(h) ** deriv


def _frac(q: Fraction, dtype):
    return dtype(q.numerator) / dtype(q.denominator)


def fd_matrix(nodes: int, h: float, deriv: int):
    """Sparse float64 matrix of :func:`differentiate_profile` (used in Jacobians)."""
    from scipy import sparse

    rows, cols, vals = [], [], []
    for i, offs, wgt in stencil_rows(nodes, deriv):
        for o, w in zip(offs, wgt):
            if w:
                rows.append(i)
                cols.append(i + o)
                vals.append(float(w))
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(nodes, nodes))
    return mat / h**deriv


# -- Kahler condition ---------------------------------------------------------


@dataclass(frozen=True)
class KahlerReport:
    phi_positive: np.ndarray
    phi_r_positive: np.ndarray
    failing_nodes: tuple
    failing_r: tuple

    @property
    def passed(self) -> bool:
        return not self.failing_nodes

    def __bool__(self):
        return self.passed


def check_kahler(profile: RadialProfile, window=None) -> KahlerReport:
    """Per-node phi > 0 and phi_r > 0; P defines a metric iff both hold everywhere.

    ``window`` optionally restricts the verdict to r in [lo, hi].
    """
    phi_ok = np.asarray(profile.phi > 0)
    phir_ok = np.asarray(profile.phi_r > 0)
    ok = phi_ok & phir_ok
    if window is not None:
        lo, hi = window
        ok = ok | (profile.grid < lo) | (profile.grid > hi)
    bad = np.flatnonzero(~ok)
    return KahlerReport(phi_ok, phir_ok, tuple(int(i) for i in bad), tuple(float(profile.grid[i]) for i in bad))
