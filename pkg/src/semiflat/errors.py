"""Exception types shared across the package."""


class SemiflatError(Exception):
    """Base class for all package errors."""


class OutOfDomain(SemiflatError):
    """Evaluation point is outside (or too close to the edge of) the domain."""


class NonConvexAt(SemiflatError):
    """Hessian is not positive definite at a specific point."""

    def __init__(self, point, message=""):
        self.point = point
        super().__init__(message or f"Hessian not positive definite at {point}")


class NonConvex(SemiflatError):
    """Potential fails convexity on the sampled domain."""


class NewtonDivergence(SemiflatError):
    """Damped Newton iteration for a gradient-map inversion failed."""


class LostConvexity(SemiflatError):
    """A damped solver step could not restore positive definiteness."""


class MaxIterations(SemiflatError):
    """Iteration budget exhausted before reaching tolerance."""


class HomotopyStall(SemiflatError):
    """Continuation in the phase of the target constant stalled."""


class DegreeOverflow(SemiflatError):
    """Wedge product would exceed the top exterior degree."""


class NotClosed(SemiflatError):
    """An input form required to be closed has a nonzero exterior derivative."""


class WrongArity(SemiflatError):
    """Wrong number of input forms for an n-ary coupling."""


class NotInvertible(SemiflatError):
    """Base map could not be inverted on the domain."""


class NotFiberLinear(SemiflatError):
    """Induced map is not linear along fibers."""


class SingularJacobian(SemiflatError):
    """Base map has a singular Jacobian at a sample point."""


class DimensionTooLarge(SemiflatError):
    """Operation caps the base dimension below the requested one."""


class ConfigError(SemiflatError):
    """Invalid suite configuration."""


class SolverFailure(SemiflatError):
    """A solver invoked by the suite runner failed."""


class QuadratureUnderResolvedWarning(UserWarning):
    """Heuristic warning: quadrature grid may be coarser than the integrand."""
