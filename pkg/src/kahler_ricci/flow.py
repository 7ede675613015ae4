"""Reduced Kahler-Ricci flow phi_t = -psi on a uniform r-grid.

The unknown carried by the solver is the deviation

    eta(r, t) = phi(r, t) - (phi0(r) - t * psi0(r))

from the exact first-order Taylor solution of the analytic initial data.  The
base part and all its r-derivatives are closed forms (extended precision);
only eta is differentiated numerically.  eta is O(t^2), so its roundoff is
tiny, which keeps psi_r / w resolvable far into r -> -inf where w ~ 1e-5.

Time stepping is implicit (backward Euler or Crank-Nicolson) with Newton
iterations on the method-of-lines system; the Jacobian is the analytic
linearisation of the discrete right-hand side, banded because the 4th-order
stencils reach two nodes (more at the one-sided ends).  End nodes use
one-sided stencils.  The left end node additionally keeps eta = 0 (the
deviation vanishes as r -> -inf for every family, and the diffusivity
1/phi_r ~ e^{-ar} there makes a free end node drift).  All assertions are
made on the trusted window, two r-units inside each end.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .curvature import psi_from_derivatives
from .errors import KahlerViolation, SolverFailure, StepRejected
from .radial import (
    DEFAULT_GRID,
    FormulaVersion,
    MetricFamily,
    RadialProfile,
    differentiate_profile,
    eval_family,
    family_psi,
    fd_matrix,
)

log = logging.getLogger(__name__)

LD = np.longdouble
WINDOW_MARGIN = 2.0


class Scheme(str, enum.Enum):
    IMPLICIT_EULER = "implicit_euler"
    CRANK_NICOLSON = "crank_nicolson"


@dataclass(frozen=True)
class SolverControls:
    dt_init: float = 1e-6
    dt_max: float = 1e-5
    newton_tol: float = 1e-11
    newton_max_iter: int = 8
    scheme: Scheme = Scheme.IMPLICIT_EULER
    pin_left: bool = True

    def __post_init__(self):
        for name in ("dt_init", "dt_max", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.newton_max_iter < 2:
            raise ValueError("newton_max_iter must be >= 2")
        object.__setattr__(self, "scheme", Scheme(self.scheme))


@dataclass(frozen=True, eq=False)
class _Base:
    """Closed-form phi0 and psi0 derivatives (orders 0..4) on the grid."""

    grid: np.ndarray
    phi0: tuple
    psi0: tuple
    d1: sparse.csr_matrix
    d2: sparse.csr_matrix

    @classmethod
    def build(cls, family, grid, version):
        phi0 = eval_family(family, grid, 4)
        psi0 = family_psi(family, grid, version, 4)
        h = float(grid[1] - grid[0])
        for arr in phi0 + psi0:
            arr.setflags(write=False)
        return cls(grid, phi0, psi0, fd_matrix(len(grid), h, 1), fd_matrix(len(grid), h, 2))

    def at(self, t, order=3):
        t = LD(t)
        return [self.phi0[k] - t * self.psi0[k] for k in range(order + 1)]


@dataclass(frozen=True, eq=False)
class FlowState:
    """Solution at time t: phi = phi0 - t psi0 + eta on ``grid``."""

    t: float
    family: MetricFamily
    version: FormulaVersion
    base: _Base = field(repr=False)
    eta: np.ndarray = field(repr=False)
    trusted_window: tuple = (0.0, 0.0)

    @property
    def grid(self):
        return self.base.grid

    @property
    def n(self):
        return self.family.n

    def derivatives(self, order=3):
        """phi and its r-derivatives (extended precision) up to ``order`` <= 4."""
        out = self.base.at(self.t, order)
        if np.any(self.eta):
            out[0] = out[0] + self.eta.astype(LD)
            for k in range(1, order + 1):
                out[k] = out[k] + differentiate_profile(self.eta, self.grid, k).astype(LD)
        return out

    @property
    def profile(self) -> RadialProfile:
        return RadialProfile(self.grid, *self.derivatives(3))

    def psi(self, order=1):
        """(psi, psi_r[, psi_rr]) for the state's formula version."""
        derivs = self.derivatives(3 if order < 2 else 4)
        return psi_from_derivatives(derivs, self.n, self.version)

    def lambda2(self):
        """psi_r / w on the full grid (float64)."""
        _, psi_r = self.psi(1)
        return np.asarray(psi_r / np.exp(self.grid.astype(LD)), dtype=float)

    def lambda1(self):
        psi, _ = self.psi(1)
        return np.asarray(psi / np.exp(self.grid.astype(LD)), dtype=float)

    def window_mask(self):
        lo, hi = self.trusted_window
        return (self.grid >= lo - 1e-12) & (self.grid <= hi + 1e-12)


def initial_state(family: MetricFamily, grid_spec=DEFAULT_GRID, version=FormulaVersion.CORRECTED) -> FlowState:
    r_min, r_max, nodes = grid_spec
    if r_max - r_min <= 2 * WINDOW_MARGIN:
        raise ValueError("grid too short for a trusted window with 2-unit margins")
    grid = np.linspace(r_min, r_max, int(nodes))
    version = FormulaVersion(version)
    base = _Base.build(family, grid, version)
    return FlowState(
        0.0, family, version, base, np.zeros(len(grid)),
        (float(r_min + WINDOW_MARGIN), float(r_max - WINDOW_MARGIN)),
    )


# -- right-hand side ----------------------------------------------------------


def _mu(n, version):
    return n - 1 if FormulaVersion(version) is FormulaVersion.CORRECTED else 1


def rhs_from_derivatives(derivs, n, version=FormulaVersion.CORRECTED):
    """phi_t = phi_rr/phi_r + mu phi_r/phi - n, mu = n-1 (corrected) or 1 (printed)."""
    f0, f1, f2 = derivs[:3]
    return f2 / f1 + _mu(n, version) * f1 / f0 - n


def flow_rhs(profile: RadialProfile, n=None, version=FormulaVersion.CORRECTED):
    """phi_t at the profile's nodes; equals -psi of the same formula version."""
    if n is None:
        if profile.family is None:
            raise ValueError("n must be given for numeric profiles")
        n = profile.family.n
    with np.errstate(divide="ignore", invalid="ignore"):
        return rhs_from_derivatives(profile.derivatives(), n, version)


def _eta_rate(state_base, t, eta, family, version):
    """G = d(eta)/dt = F(phi) + psi0 (extended precision) and phi-derivatives."""
    derivs = state_base.at(t, 2)
    derivs[0] = derivs[0] + eta.astype(LD)
    grid = state_base.grid
    derivs[1] = derivs[1] + differentiate_profile(eta, grid, 1).astype(LD)
    derivs[2] = derivs[2] + differentiate_profile(eta, grid, 2).astype(LD)
    g = rhs_from_derivatives(derivs, family.n, version) + state_base.psi0[0]
    return g, derivs


def _jacobian(base, derivs, n, version):
    f0, f1, f2 = (np.asarray(x, dtype=float) for x in derivs[:3])
    mu = _mu(n, version)
    return (
        sparse.diags(1 / f1) @ base.d2
        + sparse.diags(-f2 / f1**2 + mu / f0) @ base.d1
        + sparse.diags(-mu * f1 / f0**2)
    )


def step_implicit(state: FlowState, dt: float, controls: SolverControls = SolverControls()):
    """Advance by ``dt``; returns ``(new_state, newton_iterations)``.

    Raises StepRejected when Newton stalls (retry with dt/2) and
    KahlerViolation when phi or phi_r loses positivity on the trusted window.
    """
    if not 0 < dt <= controls.dt_max:
        raise ValueError(f"dt={dt} outside (0, dt_max={controls.dt_max}]")
    base, fam, ver = state.base, state.family, state.version
    t1 = state.t + dt
    theta = 0.5 if controls.scheme is Scheme.CRANK_NICOLSON else 1.0
    explicit_part = 0.0
    if theta < 1:
        g0, _ = _eta_rate(base, state.t, state.eta, fam, ver)
        explicit_part = (1 - theta) * dt * g0
    eta = state.eta.copy()
    nodes = len(eta)
    eye = sparse.identity(nodes, format="csr")
    resid_norm = np.inf
    for it in range(1, controls.newton_max_iter + 1):
        g1, derivs = _eta_rate(base, t1, eta, fam, ver)
        resid = eta.astype(LD) - state.eta.astype(LD) - theta * dt * g1 - explicit_part
        if controls.pin_left:
            # eta vanishes as r -> -inf for every smooth solution; hold it there
            resid[0] = eta[0] - state.eta[0]
        resid_norm = float(np.max(np.abs(resid))) / dt
        if not np.isfinite(resid_norm):
            break
        if resid_norm <= controls.newton_tol and it > 1:
            return _finish(state, t1, eta), it - 1
        system = (eye - theta * dt * _jacobian(base, derivs, fam.n, ver)).tolil()
        if controls.pin_left:
            system[0, :] = 0
            system[0, 0] = 1
        try:
            delta = splu(system.tocsc()).solve(-np.asarray(resid, dtype=float))
        except RuntimeError:
            break
        eta = eta + delta
    raise StepRejected(dt, resid_norm, controls.newton_max_iter)


def _finish(state, t1, eta):
    new = replace(state, t=float(t1), eta=eta)
    f0, f1 = new.derivatives(1)
    mask = new.window_mask()
    bad = np.flatnonzero(mask & ~((f0 > 0) & (f1 > 0)))
    if bad.size:
        i = int(bad[0])
        raise KahlerViolation(t1, float(new.grid[i]), i)
    return new


@dataclass(frozen=True)
class Snapshot:
    t: float
    lambda2: np.ndarray


@dataclass
class FlowRun:
    final: FlowState
    snapshots: list
    states: list
    steps: int = 0
    rejections: int = 0


def evolve(
    state: FlowState,
    t_final: float,
    controls: SolverControls = SolverControls(),
    snapshot_times=(),
    keep_states=False,
    fixed_dt=False,
) -> FlowRun:
    """Integrate to ``t_final`` with adaptive dt, landing exactly on snapshot times.

    dt is halved on Newton failure and grown by 1.5 (up to dt_max) after a
    step that converged in at most two iterations; ``fixed_dt`` disables
    growth.  ``keep_states`` retains every accepted state (for residual
    diagnostics).
    """
    if not t_final > state.t:
        raise ValueError(f"t_final={t_final} must exceed current t={state.t}")
    targets = sorted({float(s) for s in snapshot_times if state.t < s <= t_final} | {float(t_final)})
    dt = min(controls.dt_init, controls.dt_max)
    dt_floor = dt * 2.0**-30
    run = FlowRun(state, [], [state] if keep_states else [])
    cur = state
    for target in targets:
        while cur.t < target * (1 - 1e-14):
            h = min(dt, target - cur.t)
            try:
                new, iters = step_implicit(cur, h, controls)
            except StepRejected as exc:
                run.rejections += 1
                dt = exc.recommended_dt
                log.debug("step rejected at t=%.6e: %s", cur.t, exc)
                if dt < dt_floor:
                    raise SolverFailure(f"dt underflow at t={cur.t:.6e}") from exc
                continue
            run.steps += 1
            cur = new
            if abs(cur.t - target) <= 1e-14 * target:
                cur = replace(cur, t=target)
            if keep_states:
                run.states.append(cur)
            if not fixed_dt and iters <= 2 and h == dt:
                dt = min(dt * 1.5, controls.dt_max)
        if snapshot_times:
            run.snapshots.append(Snapshot(cur.t, cur.lambda2()))
    run.final = cur
    return run


# -- initial-time derivatives ---------------------------------------------------


def initial_derivatives(family: MetricFamily, r, version=FormulaVersion.CORRECTED):
    """(d psi/dt, d psi_r/dt) at t = 0 from closed forms assuming psi == n - a.

    Printed:   -(n-a) phi_r/phi^2,        (n-a) E (E - ac) / phi^5
    Corrected: -(n-1)(n-a) phi_r/phi^2,   (n-1)(n-a) E (E - ac) / phi^(2n+1)
    with E = exp(a r).  Both reduce to the same pair at n = 2.
    """
    version = FormulaVersion(version)
    n, a, c = family.n, LD(family.a), LD(family.c)
    phi, phi_r = eval_family(family, r, 1)
    e = np.exp(a * np.asarray(r, dtype=LD))
    if version is FormulaVersion.PRINTED:
        dpsi = -(n - a) * phi_r / phi**2
        dpsir = (n - a) * e * (e - a * c) / phi**5
    else:
        dpsi = -(n - 1) * (n - a) * phi_r / phi**2
        dpsir = (n - 1) * (n - a) * e * (e - a * c) / phi ** (2 * n + 1)
    conv = (lambda x: np.asarray(x, dtype=float)) if np.ndim(r) else float
    return conv(dpsi), conv(dpsir)


# -- diagnostics ----------------------------------------------------------------


def psi_residual(states, version=None):
    """psi_t (time-differenced) minus the psi evolution equation, per interior state.

    Returns an array of shape (len(states) - 2, nodes in trusted window).
    """
    states = list(states)
    if len(states) < 3:
        raise ValueError("need at least three consecutive states")
    grid = states[0].grid
    for s in states[1:]:
        if s.grid.shape != grid.shape or np.any(s.grid != grid):
            raise ValueError("states live on different grids")
    version = FormulaVersion(version or states[0].version)
    mask = states[0].window_mask()
    n = states[0].n
    mu = _mu(n, version)
    psis = [psi_from_derivatives(s.derivatives(4), n, version) for s in states]
    out = []
    for k in range(1, len(states) - 1):
        t0, t1, t2 = states[k - 1].t, states[k].t, states[k + 1].t
        h0, h1 = LD(t1 - t0), LD(t2 - t1)
        p0, p1, p2 = psis[k - 1][0], psis[k][0], psis[k + 1][0]
        # second-order difference on a non-uniform time grid
        psi_t = (-h1 / (h0 * (h0 + h1))) * p0 + ((h1 - h0) / (h0 * h1)) * p1 + (h0 / (h1 * (h0 + h1))) * p2
        f0, f1, f2 = states[k].derivatives(2)
        psi, psi_r, psi_rr = psis[k]
        rhs = psi_rr / f1 - f2 * psi_r / f1**2 + mu * (psi_r / f0 - f1 * psi / f0**2)
        out.append(np.asarray((psi_t - rhs)[mask], dtype=float))
    return np.array(out)


@dataclass(frozen=True)
class SignChangeReport:
    t: float
    eps_sign: float
    negative_r: np.ndarray
    boundary_detected: float | None
    boundary_predicted: float
    cell: float
    verdict: str  # "pass", "fail" or "not-applicable"
    contiguous: bool

    @property
    def negative_interval(self):
        if self.negative_r.size == 0:
            return None
        return float(self.negative_r.min()), float(self.negative_r.max())


def sign_threshold(lambda2) -> float:
    return max(1e-8 * float(np.max(np.abs(lambda2))), 1e-14)


def sign_change_scan(state0: FlowState, state_t: FlowState, version=None) -> SignChangeReport:
    """Locate where lambda2 = psi_r/w has turned negative and compare with r* = log(ac)/a."""
    if version is not None and FormulaVersion(version) is not state_t.version:
        state_t = replace(state_t, version=FormulaVersion(version))
    mask = state_t.window_mask()
    r = state_t.grid[mask]
    lam = state_t.lambda2()[mask]
    eps = sign_threshold(lam)
    neg = lam < -eps
    pos = lam > eps
    predicted = state_t.family.predicted_boundary()
    h = float(r[1] - r[0])
    if not neg.any():
        verdict = "not-applicable" if not pos.any() or predicted < r[0] else "fail"
        return SignChangeReport(state_t.t, eps, r[neg], None, predicted, h, verdict, True)
    last_neg = int(np.flatnonzero(neg)[-1])
    after = np.flatnonzero(pos[last_neg:])
    if after.size:
        j = last_neg + int(after[0])
        i = j - 1
        boundary = float(r[i] - lam[i] * (r[j] - r[i]) / (lam[j] - lam[i]))
    else:
        boundary = float(r[-1])
    contiguous = bool(neg[: last_neg + 1].all() and not neg[last_neg + 1 :].any())
    ok = contiguous and after.size > 0 and abs(boundary - predicted) <= 2 * h
    return SignChangeReport(state_t.t, eps, r[neg], boundary, predicted, h, "pass" if ok else "fail", contiguous)
