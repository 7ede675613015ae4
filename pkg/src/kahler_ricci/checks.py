"""Verification suite for one family: the checks behind ``kahler-ricci verify``.

Every check returns a :class:`Check` with status ``pass``, ``fail`` or
``skipped`` (with a reason when a precondition does not hold).  Audit
findings for n > 2 are attached to the result but never affect the exit
status.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .curvature import bisectional_at, curvature_sup, psi_of
from .flow import (
    SolverControls,
    evolve,
    initial_derivatives,
    initial_state,
    sign_change_scan,
    sign_threshold,
    step_implicit,
)
from .oracle import audit_general_n, series_fit_calabi
from .radial import DEFAULT_GRID, MetricFamily, build_profile, check_kahler, eval_family

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"


@dataclass
class Check:
    name: str
    status: str
    measured: dict = field(default_factory=dict)
    reason: str = ""

    def to_dict(self):
        return {"name": self.name, "status": self.status, "measured": _plain(self.measured), "reason": self.reason}


@dataclass
class VerifyResult:
    family: MetricFamily
    checks: list
    findings: list
    boundary_detected: float | None = None
    boundary_predicted: float | None = None

    @property
    def all_pass(self) -> bool:
        return all(c.status != FAIL for c in self.checks)

    @property
    def failing(self):
        return [c.name for c in self.checks if c.status == FAIL]

    def to_dict(self):
        return {
            "family": {"n": self.family.n, "a": self.family.a, "c": self.family.c, "variant": self.family.variant.value},
            "all_pass": self.all_pass,
            "boundary_detected": self.boundary_detected,
            "boundary_predicted": self.boundary_predicted,
            "checks": [c.to_dict() for c in self.checks],
            "findings": [f.to_dict() for f in self.findings],
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def _constant_psi(family: MetricFamily) -> bool:
    """psi is identically n - a exactly when the power m equals n."""
    return family.power == family.n


# -- initial-data checks -----------------------------------------------------------


def check_kahler_initial(profile) -> Check:
    rep = check_kahler(profile)
    return Check("kahler_initial", _status(rep.passed), {"failing_nodes": len(rep.failing_nodes)})


def check_psi_constant(family, profile) -> Check:
    if not _constant_psi(family):
        return Check("psi_constant", SKIPPED, reason="psi is not constant for this variant at this n; see audit findings")
    psi, psi_r = psi_of(profile, family.n)
    dev = float(np.max(np.abs(psi - (family.n - family.a))))
    slope = float(np.max(np.abs(psi_r)))
    return Check("psi_constant", _status(dev <= 1e-12 and slope <= 1e-10), {"max_dev": dev, "max_psi_r": slope})


def check_ricci_nonnegative(family, profile) -> Check:
    psi, psi_r = psi_of(profile, family.n)
    w = np.exp(np.asarray(profile.grid, dtype=np.longdouble))
    lam1 = np.asarray(psi / w, dtype=float)
    lam2 = np.asarray(psi_r / w, dtype=float)
    floor = -1e-12 * max(1.0, float(np.max(np.abs(lam1))))
    ok = float(lam1.min()) >= floor and float(lam2.min()) >= floor
    if not _constant_psi(family):
        return Check("ricci_nonnegative", SKIPPED, {"min_lambda1": float(lam1.min()), "min_lambda2": float(lam2.min())},
                     "variant is audit-only at this n")
    if not family.theorem_range and not family.is_flat:
        return Check("ricci_nonnegative", SKIPPED, {"min_lambda1": float(lam1.min()), "min_lambda2": float(lam2.min())},
                     "family outside 0 < a < n, c > 0")
    return Check("ricci_nonnegative", _status(ok), {"min_lambda1": float(lam1.min()), "min_lambda2": float(lam2.min())})


def check_bisectional(family, profile) -> Check:
    if family.n != 2:
        return Check("bisectional_identities", SKIPPED, reason="frame identities are stated for n = 2")
    derivs = profile.derivatives()
    bxx, bxy, byy = (np.asarray(b, dtype=np.longdouble) for b in bisectional_at(profile))
    psi, psi_r = psi_of(profile, 2)
    phi, phi_r = derivs[0], derivs[1]
    m = family.power
    closed = family.a * family.c * (m - 1) / phi ** (m + 1)
    meas = {
        "max_bxx_plus_bxy": float(np.max(np.abs(bxx + bxy))) if _constant_psi(family) else float("nan"),
        "max_bxx_vs_closed": float(np.max(np.abs(bxx - closed))),
        "max_frame_xx": float(np.max(np.abs(bxx + bxy - psi_r / phi_r))),
        "max_frame_yy": float(np.max(np.abs(byy + bxy - psi / phi))),
    }
    ok = meas["max_bxx_vs_closed"] <= 1e-12 and meas["max_frame_xx"] <= 1e-10 and meas["max_frame_yy"] <= 1e-10
    if _constant_psi(family):
        ok = ok and meas["max_bxx_plus_bxy"] <= 1e-12
    return Check("bisectional_identities", _status(ok), meas)


def check_bounded_curvature(family, grid_spec) -> Check:
    inner = curvature_sup(build_profile(family, grid_spec))
    wide = curvature_sup(build_profile(family, (-20.0, 20.0, 4001)))
    # absolute slack covers roundoff in 1/phi at r = -20 for the flat metric
    ok = math.isfinite(wide) and wide <= inner * (1 + 1e-3) + 1e-8
    return Check("bounded_curvature", _status(ok), {"sup_grid": inner, "sup_wide": wide})


# -- flow checks ------------------------------------------------------------------------


def check_initial_derivative(family, grid_spec, dt=1e-7) -> Check:
    if not _constant_psi(family):
        return Check("initial_derivative", SKIPPED, reason="closed form assumes constant psi")
    s0 = initial_state(family, grid_spec)
    s1, _ = step_implicit(s0, dt, SolverControls(dt_max=dt))
    _, pr0 = s0.psi(1)
    _, pr1 = s1.psi(1)
    r = s0.grid
    formula = initial_derivatives(family, r)[1]
    sel = (np.abs(r) <= 6) & (np.abs(formula) >= 1e-6)
    if not sel.any():
        return Check("initial_derivative", SKIPPED, reason="formula below 1e-6 everywhere on [-6, 6]")
    rate = np.asarray((pr1 - pr0) / np.longdouble(dt), dtype=float)
    err = float(np.max(np.abs(rate[sel] / formula[sel] - 1)))
    return Check("initial_derivative", _status(err <= 1e-2), {"max_rel_err": err, "nodes": int(sel.sum())})


def flow_checks(family, grid_spec, t_final, controls):
    """Sign change of lambda2 and persistence of lambda1 after evolving to t_final."""
    s0 = initial_state(family, grid_spec)
    run = evolve(s0, t_final, controls)
    rep = sign_change_scan(s0, run.final)
    mask = run.final.window_mask()
    r = run.final.grid[mask]
    lam2 = run.final.lambda2()[mask]
    eps = sign_threshold(lam2)
    meas = {
        "verdict": rep.verdict, "boundary_detected": rep.boundary_detected,
        "boundary_predicted": rep.boundary_predicted, "eps_sign": eps, "steps": run.steps,
    }
    if not _constant_psi(family):
        sign = Check("sign_change", SKIPPED, meas, "variant is audit-only at this n")
    elif rep.verdict == "not-applicable":
        sign = Check("sign_change", SKIPPED, meas, "lambda2 has no sign change for this family")
    else:
        rs = rep.boundary_predicted
        neg_ok = bool(np.all(lam2[r <= rs - 0.05] < -eps))
        pos_sel = (r >= rs + 0.05) & (r <= rs + 5)
        pos_ok = bool(np.all(lam2[pos_sel] > eps))
        meas.update(negative_side=neg_ok, positive_side=pos_ok)
        sign = Check("sign_change", _status(rep.verdict == "pass" and neg_ok and pos_ok), meas)
    psi0, _ = s0.psi(1)
    lam1w = np.asarray(run.final.lambda1() * np.exp(run.final.grid), dtype=float)[mask]
    floor = 0.9 * float(np.min(np.asarray(psi0, dtype=float)[mask]))
    if not _constant_psi(family):
        pos = Check("lambda1_positive", SKIPPED, {"min_lambda1_w": float(lam1w.min())}, "variant is audit-only at this n")
    elif floor <= 0:
        pos = Check("lambda1_positive", SKIPPED, {"min_lambda1_w": float(lam1w.min())}, "psi not positive initially")
    else:
        pos = Check("lambda1_positive", _status(float(lam1w.min()) >= floor),
                    {"min_lambda1_w": float(lam1w.min()), "floor": floor})
    return [sign, pos], rep


def check_flat_fixed_point(family, grid_spec) -> Check:
    if not family.is_flat:
        return Check("flat_fixed_point", SKIPPED, reason="family is not flat")
    s0 = initial_state(family, grid_spec)
    run = evolve(s0, 1.0, SolverControls(dt_max=1e-2))
    change = float(np.max(np.abs(np.asarray(run.final.derivatives(0)[0] - s0.derivatives(0)[0], dtype=float))))
    prof = run.final.profile
    curv = curvature_sup(prof)
    psi, psi_r = psi_of(prof, family.n)
    ric = float(max(np.max(np.abs(psi)), np.max(np.abs(psi_r))))
    ok = change <= 1e-10 and curv <= 1e-10 and ric <= 1e-10
    return Check("flat_fixed_point", _status(ok), {"sup_change": change, "curvature_sup": curv, "ricci_sup": ric})


# -- global checks ------------------------------------------------------------------------


def check_completeness(family) -> Check:
    # truncations deep enough that the e^{a r0/2} tail is far below 1e-8
    cauchy = abs(geometry.arclength(family, -50.0, 0.0) - geometry.arclength(family, -60.0, 0.0))
    # sqrt(phi_r) ~ e^{a r/(2m)}: probe at R = 10 m/a over a step of 2 m/a, where the ratio tends to e
    scale = family.power / family.a
    ratio = geometry.right_growth_ratio(family, 10.0 * scale, 2.0 * scale)
    expected = math.e
    ok = cauchy < 1e-8 and abs(ratio / expected - 1) <= 0.01
    return Check("completeness", _status(ok), {"left_cauchy": cauchy, "right_ratio": ratio, "expected_ratio": expected})


def check_zero_section(family) -> Check:
    if family.n != 2 or not family.integer_a or family.c == 0:
        return Check("zero_section_area", SKIPPED, reason="needs n = 2, integer a and c > 0")
    area = geometry.zero_section_area(family)
    # independent route: phi itself far to the left
    limit = 2 * math.pi * float(eval_family(family, -200.0 / family.a, 0)[0])
    target = 2 * math.pi * math.sqrt(family.c)
    ok = abs(area - target) <= 1e-12 * target and abs(limit - target) <= 1e-12 * target
    return Check("zero_section_area", _status(ok), {"area": area, "phi_limit_area": limit, "target": target})


def check_extension(family) -> Check:
    if not family.integer_a:
        return Check("calabi_extension", SKIPPED, reason=f"a = {family.a} is not an integer, no bundle L_-k")
    if family.c == 0:
        return Check("calabi_extension", SKIPPED, reason="c = 0: cone, no zero section to extend over")
    fit = series_fit_calabi(family, int(family.a))
    m = family.power
    expect = (family.c ** (1 / m), family.c ** (1 / m - 1) / family.a)
    meas = {"a0": fit.a0, "a1": fit.a1, "a2": fit.a2, "residual": fit.residual,
            "a0_expected": expect[0], "a1_expected": expect[1]}
    return Check("calabi_extension", _status(fit.criterion), meas)


def check_density(family, r_probe=30.0) -> Check:
    if not family.integer_a:
        return Check("density_ratio", SKIPPED, reason="bundle index k needs integer a")
    # the flat metric lives on C^n itself, not on a quotient
    k = 1 if family.is_flat else int(family.a)
    est = geometry.density_ratio(family, k, r_probe)
    pred = geometry.predicted_density(family, k)
    meas = {"estimate": est, "predicted": pred, "printed": geometry.printed_density(family.n, k), "k": k}
    tol = 1e-6 if family.is_flat else 0.01
    return Check("density_ratio", _status(abs(est - pred) <= tol), meas)


def run_verify(family: MetricFamily, grid_spec=DEFAULT_GRID, t_final: float = 1e-3,
               controls: SolverControls = SolverControls(), audit: bool = True) -> VerifyResult:
    """Run every applicable check for ``family``; SolverFailure propagates to the caller."""
    profile = build_profile(family, grid_spec)
    checks = [
        check_kahler_initial(profile),
        check_psi_constant(family, profile),
        check_ricci_nonnegative(family, profile),
        check_bisectional(family, profile),
        check_bounded_curvature(family, grid_spec),
        check_initial_derivative(family, grid_spec),
    ]
    flow, rep = flow_checks(family, grid_spec, t_final, controls)
    checks += flow
    checks += [
        check_flat_fixed_point(family, grid_spec),
        check_completeness(family),
        check_zero_section(family),
        check_extension(family),
        check_density(family),
    ]
    findings = []
    if audit and family.n > 2:
        findings += audit_general_n(family.n, family.a, family.c if family.c > 0 else 1.0)
        if family.integer_a:
            findings.append(geometry.density_finding(family, int(family.a)))
    return VerifyResult(family, checks, findings, rep.boundary_detected, rep.boundary_predicted)

