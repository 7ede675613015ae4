import math

import numpy as np
import pytest

from kahler_ricci.errors import StepRejected
from kahler_ricci.flow import (
    Scheme,
    SolverControls,
    evolve,
    flow_rhs,
    initial_derivatives,
    initial_state,
    psi_residual,
    sign_change_scan,
    sign_threshold,
    step_implicit,
)
from kahler_ricci.radial import FormulaVersion, MetricFamily, build_profile, eval_family

FAM = MetricFamily(2, 1.0, 1.0)
FLAT = MetricFamily.flat(2)


@pytest.fixture(scope="module")
def run_c1():
    state0 = initial_state(FAM)
    return state0, evolve(state0, 1e-3, snapshot_times=(5e-4, 1e-3))


def test_controls_validation():
    with pytest.raises(ValueError):
        SolverControls(dt_init=0)
    with pytest.raises(ValueError):
        SolverControls(newton_max_iter=1)
    assert SolverControls(scheme="crank_nicolson").scheme is Scheme.CRANK_NICOLSON


def test_initial_state_window():
    s = initial_state(FAM)
    assert s.trusted_window == (-10.0, 10.0)
    assert s.window_mask().sum() == 2001
    with pytest.raises(ValueError):
        initial_state(FAM, (-2, 2, 41))


def test_flow_rhs_is_minus_psi():
    prof = build_profile(MetricFamily(3, 2.0, 1.0))
    np.testing.assert_allclose(np.asarray(flow_rhs(prof), float), -1.0, atol=1e-12)
    printed = np.asarray(flow_rhs(prof, version=FormulaVersion.PRINTED), float)
    assert np.ptp(printed) > 1e-3


def test_step_precondition():
    with pytest.raises(ValueError):
        step_implicit(initial_state(FAM), 10.0, SolverControls(dt_max=1.0))


def test_single_step_first_order_consistency():
    s0 = initial_state(FAM)
    s1, iters = step_implicit(s0, 1e-7)
    assert iters >= 1
    assert s1.t == pytest.approx(1e-7)
    # phi(dt) - phi(0) + dt psi(0) is exactly eta
    assert np.max(np.abs(s1.eta[s1.window_mask()])) <= 1e-10


def test_crank_nicolson_step():
    s0 = initial_state(FAM)
    s1, _ = step_implicit(s0, 1e-6, SolverControls(scheme=Scheme.CRANK_NICOLSON))
    ie, _ = step_implicit(s0, 1e-6)
    mask = s0.window_mask()
    assert np.max(np.abs(s1.eta[mask] - ie.eta[mask])) <= 1e-12


def test_newton_failure_is_rejection():
    with pytest.raises(StepRejected) as err:
        step_implicit(initial_state(FAM), 1e-3, SolverControls(dt_max=1e-3, newton_max_iter=2, newton_tol=1e-30))
    assert err.value.recommended_dt == pytest.approx(5e-4)


def test_flat_step_is_stationary():
    s0 = initial_state(FLAT)
    s1, _ = step_implicit(s0, 1e-2, SolverControls(dt_max=1e-2))
    assert np.max(np.abs(s1.eta)) <= 1e-12


def test_flat_evolve_to_one():
    run = evolve(initial_state(FLAT), 1.0, SolverControls(dt_init=1e-2, dt_max=1e-2), snapshot_times=(0.5, 1.0))
    phi0 = np.asarray(eval_family(FLAT, run.final.grid, 0)[0], float)
    phi1 = np.asarray(run.final.derivatives(0)[0], float)
    assert np.max(np.abs(phi1 - phi0)) <= 1e-10
    assert all(np.max(np.abs(s.lambda2)) <= 1e-10 for s in run.snapshots)
    assert sign_change_scan(initial_state(FLAT), run.final).verdict == "not-applicable"


def test_evolve_rejects_backwards():
    s = initial_state(FAM)
    with pytest.raises(ValueError):
        evolve(s, 0.0)


def test_evolve_lands_on_snapshots(run_c1):
    _, run = run_c1
    assert [s.t for s in run.snapshots] == [5e-4, 1e-3]
    assert run.final.t == 1e-3
    assert run.steps > 0


def test_sign_change_c1(run_c1):
    state0, run = run_c1
    rep = sign_change_scan(state0, run.final)
    assert rep.verdict == "pass"
    assert rep.contiguous
    assert abs(rep.boundary_detected) <= 2 * rep.cell
    lo, hi = rep.negative_interval
    assert lo == pytest.approx(-10.0) and hi <= rep.cell
    r = run.final.grid
    lam = run.final.lambda2()
    window = run.final.window_mask()
    assert np.all(lam[window & (r <= -0.05)] < -rep.eps_sign)
    assert np.all(lam[(r >= 0.05) & (r <= 5)] > rep.eps_sign)


def test_lambda1_stays_positive(run_c1):
    _, run = run_c1
    mask = run.final.window_mask()
    lam1_w = run.final.lambda1()[mask] * np.exp(run.final.grid[mask])
    assert lam1_w.min() >= 0.9


def test_sign_change_c4():
    fam = MetricFamily(2, 1.0, 4.0)
    s0 = initial_state(fam)
    rep = sign_change_scan(s0, evolve(s0, 1e-3).final)
    assert rep.verdict == "pass"
    assert rep.boundary_detected == pytest.approx(math.log(4), abs=2 * rep.cell)


def test_sign_threshold_floor():
    assert sign_threshold(np.zeros(5)) == 1e-14
    assert sign_threshold(np.array([-2.0, 1.0])) == pytest.approx(2e-8)


def test_initial_derivatives_examples():
    assert initial_derivatives(FAM, 0.0)[1] == pytest.approx(0.0, abs=1e-16)
    dpsi, dpsir = initial_derivatives(FAM, -1.0)
    assert dpsir == pytest.approx(-5.858e-2, rel=1e-3)
    phi, phi_r = (float(x) for x in eval_family(FAM, -1.0, 1))
    assert dpsi == pytest.approx(-phi_r / phi**2, rel=1e-14)
    assert dpsi < 0


def test_initial_derivatives_versions_agree_at_n2():
    r = np.linspace(-4, 4, 9)
    fam = MetricFamily(2, 1.0, 2.5)
    for a, b in zip(initial_derivatives(fam, r, "printed"), initial_derivatives(fam, r, "corrected")):
        np.testing.assert_allclose(a, b, rtol=1e-15)


@pytest.mark.parametrize("n,a", [(2, 1.0), (3, 1.0), (3, 2.0)])
def test_initial_derivatives_against_one_step(n, a):
    fam = MetricFamily(n, a, 1.0)
    s0 = initial_state(fam, (-8, 8, 1601))
    s1, _ = step_implicit(s0, 1e-7)
    _, pr0 = s0.psi(1)
    _, pr1 = s1.psi(1)
    r = s0.grid
    sel = (np.abs(r) <= 6)
    measured = np.asarray((pr1 - pr0) / 1e-7, float)[sel]
    expected = initial_derivatives(fam, r[sel])[1]
    big = np.abs(expected) >= 1e-6
    rel = np.abs(measured[big] - expected[big]) / np.abs(expected[big])
    assert rel.max() <= 1e-2


def test_psi_residual_preconditions():
    s = initial_state(FAM)
    with pytest.raises(ValueError):
        psi_residual([s])
    other = initial_state(FAM, (-12, 12, 1201))
    with pytest.raises(ValueError):
        psi_residual([s, s, other])


def test_psi_residual_small():
    run = evolve(initial_state(FAM), 1e-4, SolverControls(dt_init=1e-6), keep_states=True, fixed_dt=True)
    res = psi_residual(run.states)
    assert res.shape == (len(run.states) - 2, 2001)
    assert np.max(np.abs(res)) <= 1e-3


def test_psi_residual_flat():
    run = evolve(initial_state(FLAT), 3e-2, SolverControls(dt_init=1e-2, dt_max=1e-2), keep_states=True)
    assert np.max(np.abs(psi_residual(run.states))) <= 1e-10


def test_scaling_relation():
    """phi_{c e^{-ab}}(r, T) = lam phi_c(r + b, T / lam) with lam = e^{-ab/m}.

    A plain translation of r does not commute with the flow because the flow
    rescales with phi; the time must be rescaled by lam as well.
    """
    b, t_final, dt = 1.0, 1e-4, 1e-6
    base = MetricFamily(2, 1.0, 1.0)
    shifted = base.shifted(b)
    lam = math.exp(-base.a * b / base.power)
    run_a = evolve(initial_state(base, (-11, 13, 2401)), t_final / lam, SolverControls(dt_init=dt / lam, dt_max=dt / lam), fixed_dt=True)
    run_b = evolve(initial_state(shifted, (-12, 12, 2401)), t_final, SolverControls(dt_init=dt, dt_max=dt), fixed_dt=True)
    mask = run_b.final.window_mask()
    phi_a = np.asarray(run_a.final.derivatives(0)[0], float)[mask]
    phi_b = np.asarray(run_b.final.derivatives(0)[0], float)[mask]
    np.testing.assert_allclose(phi_b, lam * phi_a, rtol=1e-8)
    lam2_a = run_a.final.lambda2()[mask]
    lam2_b = run_b.final.lambda2()[mask]
    scale = np.max(np.abs(lam2_b))
    assert np.max(np.abs(lam2_b - math.exp(b) * lam2_a)) <= 1e-6 * scale
