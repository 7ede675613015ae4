"""Numerical lab for U(n)-invariant Kahler metrics and the reduced Kahler-Ricci flow.

Modules:

* ``radial``    closed-form families phi(r), grid profiles, finite-difference weights
* ``curvature`` metric, Ricci, Christoffel, Riemann and bisectional curvature
* ``flow``      implicit method-of-lines solver for phi_t = -psi
* ``oracle``    finite-difference oracle from the potential, series fits, formula audit
* ``geometry``  arclength, volume, density ratio and asymptotic rates
* ``cli``       command-line driver
"""

from .curvature import (
    HermitianForm,
    bisectional_at,
    curvature_sup,
    metric_at,
    psi_of,
    ricci_at,
    ricci_eigenvalues,
    riemann_at,
)
from .errors import (
    DomainOverflowError,
    GridError,
    KahlerRicciError,
    KahlerViolation,
    SolverFailure,
    StepRejected,
)
from .flow import SolverControls, evolve, initial_state, sign_change_scan, step_implicit
from .radial import FormulaVersion, MetricFamily, RadialProfile, Variant, build_profile, eval_family

__version__ = "0.1.0"

__all__ = [
    "DomainOverflowError", "FormulaVersion", "GridError", "HermitianForm", "KahlerRicciError",
    "KahlerViolation", "MetricFamily", "RadialProfile", "SolverControls", "SolverFailure",
    "StepRejected", "Variant", "bisectional_at", "build_profile", "curvature_sup", "eval_family",
    "evolve", "initial_state", "metric_at", "psi_of", "ricci_at", "ricci_eigenvalues",
    "riemann_at", "sign_change_scan", "step_implicit",
]
