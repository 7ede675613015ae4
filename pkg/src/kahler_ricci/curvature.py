"""Closed-form curvature of U(n)-invariant Kahler metrics.

Index conventions follow the coordinate formulas: ``g[i, j]`` is g_{i jbar}
in the basis dz_i, so g = (phi/w) I + ((phi_r - phi)/w^2) conj(z) z^T.  The
Ricci form has the same shape with phi replaced by the Ricci potential psi.

Functions accepting a *source* take either a :class:`MetricFamily` (exact,
extended precision) or a :class:`RadialProfile` (values at grid nodes, cubic
spline in between; out-of-grid radii are rejected).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .radial import FormulaVersion, MetricFamily, RadialProfile, eval_family, family_bxx

DEGENERATE_PHI_R = 1e-300


@dataclass(frozen=True)
class HermitianForm:
    """An n x n Hermitian matrix at a point, stored exactly Hermitian."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        m = (m + m.conj().T) / 2
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def relative_eigenvalues(self, metric: "HermitianForm") -> np.ndarray:
        """Eigenvalues lambda of R V = lambda g V (ascending)."""
        from scipy.linalg import eigh

        return eigh(self.entries, metric.entries, eigvals_only=True)

    def is_positive_definite(self) -> bool:
        return bool(np.all(self.eigenvalues() > 0))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


# -- radial values ------------------------------------------------------------


def _n_of(source, n):
    if n is not None:
        return int(n)
    if isinstance(source, MetricFamily):
        return source.n
    if isinstance(source, RadialProfile) and source.family is not None:
        return source.family.n
    raise ValueError("complex dimension n must be given for numeric profiles")


def radial_values(source, r):
    """(phi, phi_r, phi_rr, phi_rrr) at radius r (scalar or array)."""
    if isinstance(source, MetricFamily):
        return eval_family(source, r, 3)
    if not isinstance(source, RadialProfile):
        raise TypeError(f"expected MetricFamily or RadialProfile, got {type(source).__name__}")
    r = np.asarray(r, dtype=float)
    grid = source.grid
    if np.any(r < grid[0] - 1e-12) or np.any(r > grid[-1] + 1e-12):
        raise ValueError(f"r={r} outside profile grid [{grid[0]}, {grid[-1]}]")
    if source.family is not None:
        return eval_family(source.family, r, 3)
    idx = np.searchsorted(grid, r)
    idx = np.clip(idx, 0, len(grid) - 1)
    if np.all(np.abs(grid[idx] - r) <= 1e-12 * max(1.0, float(np.max(np.abs(r))))):
        return tuple(np.asarray(col)[idx] for col in source.derivatives())
    from scipy.interpolate import CubicSpline

    return tuple(CubicSpline(grid, np.asarray(col, dtype=float))(r) for col in source.derivatives())


def _mu(n, version):
    return n - 1 if FormulaVersion(version) is FormulaVersion.CORRECTED else 1


def psi_from_derivatives(derivs, n, version=FormulaVersion.CORRECTED):
    """psi and its r-derivatives from (phi, phi_r, phi_rr, phi_rrr[, phi_rrrr]).

    Corrected: psi = n - (n-1) phi_r/phi - phi_rr/phi_r, the r-derivative of
    -log det g.  Printed: psi = n - phi_r/phi - phi_rr/phi_r.  Returns
    (psi, psi_r) or, when a fourth derivative is supplied, (psi, psi_r, psi_rr).
    """
    mu = _mu(n, version)
    f0, f1, f2, f3 = derivs[:4]
    q1 = f1 / f0
    q2 = f2 / f1
    psi = n - mu * q1 - q2
    psi_r = -mu * (f2 / f0 - q1 * q1) - (f3 / f1 - q2 * q2)
    if len(derivs) < 5:
        return psi, psi_r
    f4 = derivs[4]
    psi_rr = -mu * (f3 / f0 - 3 * q1 * f2 / f0 + 2 * q1**3) - (f4 / f1 - 3 * q2 * f3 / f1 + 2 * q2**3)
    return psi, psi_r, psi_rr


def degenerate_nodes(phi_r) -> np.ndarray:
    return np.flatnonzero(~(np.asarray(phi_r) >= DEGENERATE_PHI_R))


def psi_of(profile: RadialProfile, n=None, version=FormulaVersion.CORRECTED):
    """Ricci potential psi = G_r and psi_r on the profile's nodes.

    Both come from the closed-form expressions in phi..phi_rrr, so the
    numeric case uses the profile's own finite-difference derivative columns.
    Nodes with phi_r < 1e-300 are set to NaN and reported with a warning.
    """
    n = _n_of(profile, n)
    derivs = profile.derivatives()
    bad = degenerate_nodes(derivs[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        psi, psi_r = psi_from_derivatives(derivs, n, version)
    if bad.size:
        psi = np.array(psi, copy=True)
        psi_r = np.array(psi_r, copy=True)
        psi[bad] = np.nan
        psi_r[bad] = np.nan
        warnings.warn(f"phi_r underflow: {bad.size} node(s) excluded, first at index {bad[0]}", RuntimeWarning)
    return psi, psi_r


def _psi_at(source, r, n, version):
    derivs = radial_values(source, r)
    return psi_from_derivatives(derivs, n, version)


# -- forms at a point ---------------------------------------------------------


def _point(z):
    z = np.asarray(z, dtype=complex).ravel()
    w = float(np.vdot(z, z).real)
    if w == 0:
        raise ValueError("z = 0 is not in the domain")
    return z, w


def _radial_form(z, w, diag, rank_one):
    n = len(z)
    return HermitianForm(diag * np.eye(n) + rank_one * np.outer(z.conj(), z))


def metric_at(source, z) -> HermitianForm:
    """g_{i jbar} = e^{-r} phi delta_ij + e^{-2r} (phi_r - phi) conj(z_i) z_j."""
    z, w = _point(z)
    phi, phi_r = (float(x) for x in radial_values(source, np.log(w))[:2])
    return _radial_form(z, w, phi / w, (phi_r - phi) / w**2)


def inverse_metric_at(source, z) -> HermitianForm:
    """Matrix inverse of :func:`metric_at`, i.e. ``g.entries @ ginv.entries == I``.

    Entry [j, k] is g^{k jbar} = e^r/phi delta + (1/phi_r - 1/phi) z_k conj(z_j),
    which is the transposed arrangement of the upper-index tensor.
    """
    z, w = _point(z)
    phi, phi_r = (float(x) for x in radial_values(source, np.log(w))[:2])
    return _radial_form(z, w, w / phi, 1 / phi_r - 1 / phi)


def ricci_at(source, z, version=FormulaVersion.CORRECTED, n=None) -> HermitianForm:
    """R_{i jbar} = e^{-r} psi delta_ij + e^{-2r} (psi_r - psi) conj(z_i) z_j."""
    z, w = _point(z)
    n = len(z) if n is None else n
    psi, psi_r = (float(x) for x in _psi_at(source, np.log(w), n, version))
    return _radial_form(z, w, psi / w, (psi_r - psi) / w**2)


def ricci_eigenvalues(source, r=None, n=None, version=FormulaVersion.CORRECTED):
    """(lambda1, lambda2) = (psi/w, psi_r/w); lambda1 has multiplicity n-1.

    These are the eigenvalues of the Ricci matrix in the coordinate basis
    (identical at every point of the sphere |z|^2 = e^r).  Eigenvalues measured
    against g are given by :func:`ricci_metric_eigenvalues`; both pairs have
    the same signs.  With ``r=None`` a profile is evaluated at all its nodes.
    """
    n = _n_of(source, n)
    if r is None:
        psi, psi_r = psi_of(source, n, version)
        w = np.exp(np.asarray(source.grid, dtype=np.longdouble))
    else:
        psi, psi_r = _psi_at(source, r, n, version)
        w = np.exp(np.asarray(r, dtype=np.longdouble))
    return _to_float(psi / w), _to_float(psi_r / w)


def ricci_metric_eigenvalues(source, r=None, n=None, version=FormulaVersion.CORRECTED):
    """Solutions of R V = lambda g V: (psi/phi, psi_r/phi_r)."""
    n = _n_of(source, n)
    if r is None:
        derivs = source.derivatives()
    else:
        derivs = radial_values(source, r)
    psi, psi_r = psi_from_derivatives(derivs, n, version)
    return _to_float(psi / derivs[0]), _to_float(psi_r / derivs[1])


def _to_float(x):
    return np.asarray(x, dtype=float) if np.ndim(x) else float(x)


# -- connection and curvature (n = 2) -----------------------------------------


def _require_n2(z):
    z, w = _point(z)
    if len(z) != 2:
        raise ValueError(f"closed-form connection/curvature available only for n = 2, got n = {len(z)}")
    return z, w


def christoffels_at(source, z) -> np.ndarray:
    """Array ``gamma[m, i, k]`` = Gamma^m_{ik} (symmetric in i, k) from the six n=2 formulas."""
    z, w = _require_n2(z)
    phi, phi_r, phi_rr, _ = (float(x) for x in radial_values(source, np.log(w)))
    u, v = abs(z[0]) ** 2, abs(z[1]) ** 2
    s = phi_rr / phi_r
    t = phi_r / phi
    zb1, zb2 = z.conj()
    gam = np.zeros((2, 2, 2), dtype=complex)
    gam[0, 0, 0] = zb1 / w**2 * (u * s + 2 * v * t + u - 2 * w)
    gam[0, 0, 1] = gam[0, 1, 0] = zb2 / w**2 * (u * s + (v - u) * t - v)
    gam[0, 1, 1] = z[0] * zb2**2 / w**2 * (s - 2 * t + 1)
    gam[1, 0, 0] = zb1**2 * z[1] / w**2 * (s - 2 * t + 1)
    gam[1, 0, 1] = gam[1, 1, 0] = zb1 / w**2 * (v * s + (u - v) * t - u)
    gam[1, 1, 1] = zb2 / w**2 * (v * s + 2 * u * t + v - 2 * w)
    return gam


def riemann_coefficients(derivs):
    """Coefficients (A, B, C) of the quartic, quadratic and constant parts of R."""
    f0, f1, f2, f3 = derivs[:4]
    quartic = -f3 + 4 * f2 - 2 * f1 + 2 * f0 - 4 * f1**2 / f0 + f2**2 / f1
    quadratic = -f2 + f1 - f0 + f1**2 / f0
    const = f0 - f1
    return quartic, quadratic, const


def riemann_at(source, z) -> np.ndarray:
    """``R[i, j, k, l]`` = R_{i jbar k lbar} from the three-term closed form (n = 2)."""
    z, w = _require_n2(z)
    A, B, C = (float(x) for x in riemann_coefficients(radial_values(source, np.log(w))))
    zb = z.conj()
    d = np.eye(2)
    R = A / w**4 * np.einsum("i,j,k,l->ijkl", zb, z, zb, z)
    R = R + B / w**3 * (
        np.einsum("i,j,kl->ijkl", zb, z, d)
        + np.einsum("i,jk,l->ijkl", zb, d, z)
        + np.einsum("ij,k,l->ijkl", d, zb, z)
        + np.einsum("il,j,k->ijkl", d, z, zb)
    )
    R = R + C / w**2 * (np.einsum("ij,kl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
    return R


def bisectional_from_derivatives(derivs):
    f0, f1, f2, f3 = derivs[:4]
    bxx = (f2 * f2 / f1 - f3) / (f1 * f1)
    bxy = (f1 * f1 / f0 - f2) / (f1 * f0)
    byy = 2 * (f0 - f1) / (f0 * f0)
    return bxx, bxy, byy


def bisectional_at(source, r=None):
    """Bisectional curvatures B(X,X), B(X,Y), B(Y,Y) in the unit frame

        X = |zeta| phi_r^{-1/2} d/dz_1,   Y = |zeta| phi^{-1/2} d/dz_2

    at (zeta, 0) with |zeta|^2 = e^r.  The values do not depend on zeta.
    Evaluated in the source's precision (extended for analytic families).
    """
    derivs = source.derivatives() if r is None else radial_values(source, r)
    bxx, bxy, byy = bisectional_from_derivatives(derivs)
    family = source if isinstance(source, MetricFamily) else source.family
    if family is not None:
        bxx = family_bxx(family, source.grid if r is None else r)
    return tuple(_to_float(x) for x in (bxx, bxy, byy))


def curvature_sup(profile: RadialProfile) -> float:
    """max over nodes of max(|B(X,X)|, |B(X,Y)|, |B(Y,Y)|): the bounded-curvature proxy."""
    return float(max(np.max(np.abs(b)) for b in bisectional_at(profile)))


@dataclass(frozen=True)
class CurvaturePointReport:
    r: float
    w: float
    psi: float
    psi_r: float
    lambda1: float
    lambda2: float
    bXX: float
    bXY: float
    bYY: float
    christoffels: np.ndarray | None = None

    @property
    def rc_xx(self) -> float:
        return self.bXX + self.bXY

    @property
    def rc_yy(self) -> float:
        return self.bYY + self.bXY


def point_report(source, r: float, n=None, version=FormulaVersion.CORRECTED) -> CurvaturePointReport:
    n = _n_of(source, n)
    derivs = radial_values(source, r)
    psi, psi_r = psi_from_derivatives(derivs, n, version)
    w = float(np.exp(r))
    bxx, bxy, byy = (float(x) for x in bisectional_from_derivatives(derivs))
    gam = christoffels_at(source, [np.sqrt(w), 0]) if n == 2 else None
    return CurvaturePointReport(
        r=float(r), w=w, psi=float(psi), psi_r=float(psi_r),
        lambda1=float(psi / np.exp(np.longdouble(r))), lambda2=float(psi_r / np.exp(np.longdouble(r))),
        bXX=bxx, bXY=bxy, bYY=byy, christoffels=gam,
    )
