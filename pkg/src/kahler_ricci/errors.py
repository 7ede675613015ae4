"""Exception hierarchy shared by the numerical modules and the CLI."""


class KahlerRicciError(Exception):
    """Base class for all errors raised by this package."""


class DomainOverflowError(KahlerRicciError, ValueError):
    """Closed-form evaluation overflowed (``exp(a*r)`` not representable)."""

    def __init__(self, r, message=None):
        self.r = r
        super().__init__(message or f"domain overflow evaluating the family at r={r!r}")


class GridError(KahlerRicciError, ValueError):
    """Grid too short, not increasing, or not uniform."""


class StepRejected(KahlerRicciError):
    """Newton iteration did not converge; the caller should retry with dt/2."""

    def __init__(self, dt, residual, iterations):
        self.dt = dt
        self.residual = residual
        self.iterations = iterations
        self.recommended_dt = dt / 2
        super().__init__(
            f"Newton failed at dt={dt:.3e} after {iterations} iterations "
            f"(residual {residual:.3e}); retry with dt={dt / 2:.3e}"
        )


class KahlerViolation(KahlerRicciError):
    """phi or phi_r lost positivity inside the trusted window."""

    def __init__(self, t, r, index):
        self.t = t
        self.r = r
        self.index = index
        super().__init__(f"Kahler condition violated at t={t:.6e}, r={r:.6f} (node {index})")


class SolverFailure(KahlerRicciError):
    """Time integration gave up after exhausting step reductions."""
