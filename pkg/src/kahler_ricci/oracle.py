"""Finite-difference oracle working from the potential P itself.

Nothing here uses the closed-form curvature formulas.  Metrics come from
complex Hessians of P (P obtained by quadrature of phi), Ricci forms from
complex Hessians of -log det g, and the Riemann tensor from the coordinate
expression R = -d dbar g + g^{-1} dg dbar g.  All arithmetic runs in mpmath
at 40 digits so that second differences at h ~ 1e-5 are truncation-limited.
phi_r, where the closed-form metric is needed, is obtained by numerical
differentiation of phi rather than from the family's derivative formulas.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import mpmath
import numpy as np

from .curvature import HermitianForm, psi_from_derivatives
from .radial import FormulaVersion, MetricFamily, Variant, eval_family

DPS = 40
DEFAULT_STEP = 1e-5
CONSISTENT_TOL = 1e-4
FIT_WINDOW = 1e-3
FIT_SAMPLES = 50


def _mpctx():
    return mpmath.workdps(DPS)


def _phi_mp(family: MetricFamily, r):
    m = family.power
    a = mpmath.mpf(family.a)
    return ((mpmath.mpf(m) / a) * mpmath.exp(a * r) + family.c) ** (mpmath.mpf(1) / m)


def _phi_r_mp(family, r):
    return mpmath.diff(lambda s: _phi_mp(family, s), r)


def potential_value(family: MetricFamily, r: float, r0: float = 0.0, method: str = "tanh-sinh") -> float:
    """P(r) = integral of phi from r0 to r (P is defined up to a constant)."""
    with _mpctx():
        val = mpmath.quad(lambda s: _phi_mp(family, s), [mpmath.mpf(r0), mpmath.mpf(r)], method=method)
    return float(val)


# -- complex derivatives by central differences ------------------------------


def _real_coords(z):
    z = np.asarray(z, dtype=complex).ravel()
    return [mpmath.mpf(float(x)) for x in np.concatenate([z.real, z.imag])]


def _to_complex_point(x, n):
    return [mpmath.mpc(x[i], x[n + i]) for i in range(n)]


class _Stencil:
    """Cached evaluations of f on the real stencil around x0 (step s)."""

    def __init__(self, func, x0, step):
        self.func = func
        self.x0 = x0
        self.s = step
        self.cache = {}

    def at(self, *moves):
        key = tuple(sorted(moves))
        if key not in self.cache:
            x = list(self.x0)
            for idx, sign in moves:
                x[idx] += sign * self.s
            self.cache[key] = self.func(x)
        return self.cache[key]

    def d1(self, a):
        return _lin(self.at((a, 1)), self.at((a, -1)), 1, -1, 1 / (2 * self.s))

    def d2(self, a, b):
        if a == b:
            f0 = self.at()
            return _lin3(self.at((a, 1)), f0, self.at((a, -1)), 1 / self.s**2)
        return _lin4(self.at((a, 1), (b, 1)), self.at((a, 1), (b, -1)),
                     self.at((a, -1), (b, 1)), self.at((a, -1), (b, -1)), 1 / (4 * self.s**2))


def _lin(p, q, cp, cq, scale):
    if isinstance(p, list):
        return [(cp * x + cq * y) * scale for x, y in zip(p, q)]
    return (cp * p + cq * q) * scale


def _lin3(p, f0, q, scale):
    if isinstance(p, list):
        return [(x - 2 * y + z) * scale for x, y, z in zip(p, f0, q)]
    return (p - 2 * f0 + q) * scale


def _lin4(pp, pm, mp_, mm, scale):
    if isinstance(pp, list):
        return [(a - b - c + d) * scale for a, b, c, d in zip(pp, pm, mp_, mm)]
    return (pp - pm - mp_ + mm) * scale


def _wirtinger_hessian(st: _Stencil, n):
    """H[i][j] = d_i dbar_j f = (f_xx + f_yy + i (f_xy' - f_yx')) / 4."""
    out = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            xx = st.d2(i, j)
            yy = st.d2(n + i, n + j)
            xy = st.d2(i, n + j)
            yx = st.d2(n + i, j)
            out[i][j] = _combine(xx, yy, xy, yx)
    return out


def _combine(xx, yy, xy, yx):
    if isinstance(xx, list):
        return [(a + b + 1j * (c - d)) / 4 for a, b, c, d in zip(xx, yy, xy, yx)]
    return (xx + yy + 1j * (xy - yx)) / 4


def _wirtinger_grad(st: _Stencil, n):
    """(d_i f, dbar_i f) lists."""
    dz, dzb = [], []
    for i in range(n):
        fx, fy = st.d1(i), st.d1(n + i)
        if isinstance(fx, list):
            dz.append([(a - 1j * b) / 2 for a, b in zip(fx, fy)])
            dzb.append([(a + 1j * b) / 2 for a, b in zip(fx, fy)])
        else:
            dz.append((fx - 1j * fy) / 2)
            dzb.append((fx + 1j * fy) / 2)
    return dz, dzb


def _step(z, h):
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"relative step h={h} outside [1e-7, 1e-3]")
    norm = float(np.linalg.norm(np.asarray(z, dtype=complex)))
    if norm < 1e-150:
        raise ValueError("step underflow: |z| too close to 0")
    return mpmath.mpf(h) * norm


def _to_array(nested):
    return np.array([[complex(x) for x in row] for row in nested])


# -- oracle quantities ----------------------------------------------------------


def _w_of(x):
    return mpmath.fsum(xi * xi for xi in x)


def fd_metric(family: MetricFamily, z, h: float = DEFAULT_STEP) -> HermitianForm:
    """g_{i jbar} = d_i dbar_j P by central differences of the quadrature potential."""
    z = np.asarray(z, dtype=complex).ravel()
    n = len(z)
    with _mpctx():
        x0 = _real_coords(z)
        rc = mpmath.log(_w_of(x0))

        def potential(x):
            # constant of integration cancels in second differences
            return mpmath.quad(lambda s: _phi_mp(family, s), [rc, mpmath.log(_w_of(x))])

        st = _Stencil(potential, x0, _step(z, h))
        return HermitianForm(_to_array(_wirtinger_hessian(st, n)))


def _closed_metric_mp(family, x, n):
    """Metric entries (flattened, row-major) from phi and a numerical phi_r."""
    zc = _to_complex_point(x, n)
    w = _w_of(x)
    r = mpmath.log(w)
    phi = _phi_mp(family, r)
    phi_r = _phi_r_mp(family, r)
    diag = phi / w
    rank1 = (phi_r - phi) / w**2
    return [(diag if i == j else 0) + rank1 * mpmath.conj(zc[i]) * zc[j] for i in range(n) for j in range(n)]


def _fd_metric_mp(family, x, n, step):
    st = _Stencil(lambda y: _potential_rel(family, y, x), x, step)
    hess = _wirtinger_hessian(st, n)
    return [hess[i][j] for i in range(n) for j in range(n)]


def _potential_rel(family, y, x):
    return mpmath.quad(lambda s: _phi_mp(family, s), [mpmath.log(_w_of(x)), mpmath.log(_w_of(y))])


def fd_ricci(family: MetricFamily, z, h: float = DEFAULT_STEP, n=None, mode: str = "closed_metric") -> HermitianForm:
    """R_{i jbar} = -d_i dbar_j log det g by central differences.

    ``mode="closed_metric"`` evaluates det g from the coordinate metric
    formula at each stencil point; ``mode="potential"`` builds g itself by
    finite differences of P (slow, end-to-end).
    """
    z = np.asarray(z, dtype=complex).ravel()
    n = len(z) if n is None else n
    if n != len(z):
        raise ValueError("z must have n components")
    with _mpctx():
        x0 = _real_coords(z)
        step = _step(z, h)
        if mode == "closed_metric":
            def metric(x):
                return _closed_metric_mp(family, x, n)
        elif mode == "potential":
            inner = step / 100

            def metric(x):
                return _fd_metric_mp(family, x, n, inner)
        else:
            raise ValueError(f"unknown mode {mode!r}")

        def neg_logdet(x):
            return -mpmath.log(mpmath.re(mpmath.det(_mat(metric(x), n))))

        st = _Stencil(neg_logdet, x0, step)
        return HermitianForm(_to_array(_wirtinger_hessian(st, n)))


def _mat(flat, n):
    m = mpmath.matrix(n, n)
    for i in range(n):
        for j in range(n):
            m[i, j] = flat[i * n + j]
    return m


def fd_riemann(family: MetricFamily, z, h: float = DEFAULT_STEP) -> np.ndarray:
    """R[i,j,k,l] = -d_i dbar_j g_{k lbar} + g^{p qbar} d_i g_{k qbar} dbar_j g_{p lbar}."""
    z = np.asarray(z, dtype=complex).ravel()
    n = len(z)
    with _mpctx():
        x0 = _real_coords(z)
        st = _Stencil(lambda x: _closed_metric_mp(family, x, n), x0, _step(z, h))
        g = _mat(st.at(), n)
        # upper-index metric H[p][q] with H[p][q] g_{k qbar} = delta_pk
        hup = (g.T) ** -1
        hess = _wirtinger_hessian(st, n)
        dz, dzb = _wirtinger_grad(st, n)
        out = np.zeros((n,) * 4, dtype=complex)
        for i, j, k, l in itertools.product(range(n), repeat=4):
            val = -hess[i][j][k * n + l]
            for p in range(n):
                for q in range(n):
                    val += hup[p, q] * dz[i][k * n + q] * dzb[j][p * n + l]
            out[i, j, k, l] = complex(val)
        return out


def oracle_psi(family: MetricFamily, r: float, h: float = DEFAULT_STEP):
    """(psi, psi_r) read off the diagonal of fd_ricci at (sqrt(e^r), 0, ..., 0)."""
    n = family.n
    w = float(np.exp(r))
    z = np.zeros(n, dtype=complex)
    z[0] = np.sqrt(w)
    ric = fd_ricci(family, z, h, n).entries
    return float(ric[1, 1].real * w), float(ric[0, 0].real * w)


# -- series fit --------------------------------------------------------------------


@dataclass(frozen=True)
class CalabiFit:
    k: int
    a0: float
    a1: float
    a2: float
    a3: float
    residual: float

    @property
    def fit_ok(self) -> bool:
        return self.residual <= 1e-10 * abs(self.a0)

    @property
    def criterion(self) -> bool:
        """a0 > 0 and a1 > 0 with a fit that actually resolves the series in w^k."""
        return self.fit_ok and self.a0 > 0 and self.a1 > 0


def series_fit_calabi(family: MetricFamily, k, w_fit: float = FIT_WINDOW, samples: int = FIT_SAMPLES) -> CalabiFit:
    """Least-squares fit of phi(w) to a0 + a1 w^k + a2 w^2k + a3 w^3k on (0, w_fit]."""
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    k = int(k)
    w = np.logspace(np.log10(w_fit) - 5, np.log10(w_fit), samples)
    phi = np.asarray(eval_family(family, np.log(w), 0)[0], dtype=float)
    scale = w_fit ** k
    basis = np.stack([(w**k / scale) ** j for j in range(4)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, phi, rcond=None)
    resid = float(np.max(np.abs(basis @ coef - phi)))
    coef = coef / scale ** np.arange(4)
    return CalabiFit(k, *(float(x) for x in coef), resid)


# -- audit -------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditFinding:
    location: str
    quantity: str
    variant: str
    version: str
    printed_value: float
    oracle_value: float
    discrepancy: float
    tolerance: float

    @property
    def verdict(self) -> str:
        return "Inconsistent" if self.discrepancy > self.tolerance else "Consistent"

    def to_dict(self):
        d = asdict(self)
        d["verdict"] = self.verdict
        return d


def make_finding(location, quantity, variant, version, printed, oracle, tol) -> AuditFinding:
    printed = np.asarray(printed, dtype=float).ravel()
    oracle = np.asarray(oracle, dtype=float).ravel()
    scale = max(float(np.max(np.abs(oracle))), 1e-300)
    worst = int(np.argmax(np.abs(printed - oracle)))
    disc = float(np.max(np.abs(printed - oracle)) / scale)
    return AuditFinding(location, quantity, str(variant.value if hasattr(variant, "value") else variant),
                        str(version.value if hasattr(version, "value") else version),
                        float(printed[worst]), float(oracle[worst]), disc, tol)


AUDIT_RADII = (-1.5, -0.5, 0.5, 1.5)
TIME_DIFF_TOL = 1e-3


def _one_step_dpsir(family, radii, dt=1e-7):
    """d psi_r/dt at t=0 by one implicit step of the oracle-validated (corrected) flow."""
    from .flow import SolverControls, initial_state, step_implicit

    state = initial_state(family, (-8.0, 8.0, 1601), FormulaVersion.CORRECTED)
    _, psi_r0 = state.psi(1)
    new, _ = step_implicit(state, dt, SolverControls(dt_max=dt))
    _, psi_r1 = new.psi(1)
    rate = np.asarray((psi_r1 - psi_r0) / np.longdouble(dt), dtype=float)
    return np.interp(radii, state.grid, rate)


def audit_general_n(n: int, a: float, c: float, radii=AUDIT_RADII, h: float = DEFAULT_STEP):
    """Cross-check psi, phi_t and d(psi_r)/dt formulas against the oracle.

    One finding per (quantity, variant, formula version).  ``psi`` and
    ``phi_t`` are judged against -d dbar log det g; the constant-psi claim
    against the same; ``dpsir_dt`` against one implicit step of the flow whose
    right-hand side the oracle validates.
    """
    from .flow import initial_derivatives, rhs_from_derivatives

    findings = []
    radii = np.asarray(radii, dtype=float)
    for variant in Variant:
        fam = MetricFamily(n, a, c, variant)
        truth = np.array([oracle_psi(fam, r, h) for r in radii])
        psi_true = truth[:, 0]
        dpsir_true = _one_step_dpsir(fam, radii)
        derivs = eval_family(fam, radii, 3)
        for version in FormulaVersion:
            psi_v, _ = psi_from_derivatives(derivs, n, version)
            phi_t = rhs_from_derivatives(derivs, n, version)
            findings.append(make_finding("general-n Ricci potential", "psi", variant, version,
                                         psi_v, psi_true, CONSISTENT_TOL))
            findings.append(make_finding("general-n flow equation", "phi_t", variant, version,
                                         phi_t, -psi_true, CONSISTENT_TOL))
            findings.append(make_finding("general-n initial derivative of psi_r", "dpsir_dt", variant, version,
                                         initial_derivatives(fam, radii, version)[1], dpsir_true, TIME_DIFF_TOL))
        findings.append(make_finding("general-n constant Ricci potential", "psi_equals_n_minus_a", variant, "claim",
                                     np.full_like(psi_true, n - a), psi_true, CONSISTENT_TOL))
    return findings


# -- seeded cross-checks -----------------------------------------------------------


def sample_points(rng: np.random.Generator, count: int, n: int, rmin: float = 0.1, rmax: float = 10.0):
    """Points of C^n with |z| log-uniform in [rmin, rmax] and uniformly random direction."""
    out = []
    for _ in range(count):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        mod = float(np.exp(rng.uniform(np.log(rmin), np.log(rmax))))
        out.append(v / np.linalg.norm(v) * mod)
    return out


def _compare(fd, closed):
    """(relative error, fd value, closed value) at the worst entry.

    Relative to the largest closed-form entry; when the closed form vanishes
    (flat points) the error is absolute.
    """
    fd = np.asarray(fd).ravel()
    closed = np.asarray(closed).ravel()
    diff = np.abs(fd - closed)
    worst = int(np.argmax(diff))
    scale = float(np.max(np.abs(closed)))
    scale = scale if scale > 1e-8 else 1.0
    return float(diff[worst] / scale), complex(fd[worst]), complex(closed[worst])


def cross_check(family: MetricFamily, points, h: float = DEFAULT_STEP, tol: float = 1e-5):
    """Closed-form g, g^-1, Ricci and (n = 2) Riemann against the oracle at each point.

    Returns one AuditFinding per quantity, holding the worst point.
    """
    from .curvature import inverse_metric_at, metric_at, ricci_at, riemann_at

    worst = {}
    for z in points:
        g_fd = fd_metric(family, z, h).entries
        errs = {
            "metric": _compare(g_fd, metric_at(family, z).entries),
            "inverse_metric": _compare(np.linalg.inv(g_fd), inverse_metric_at(family, z).entries),
            "ricci": _compare(fd_ricci(family, z, h).entries, ricci_at(family, z).entries),
        }
        if family.n == 2:
            errs["riemann"] = _compare(fd_riemann(family, z, h), riemann_at(family, z))
        for key, val in errs.items():
            if key not in worst or val[0] >= worst[key][0]:
                worst[key] = val
    return [
        AuditFinding("closed-form curvature formulas", key, family.variant.value, FormulaVersion.CORRECTED.value,
                     abs(closed), abs(fd), err, tol)
        for key, (err, fd, closed) in worst.items()
    ]
