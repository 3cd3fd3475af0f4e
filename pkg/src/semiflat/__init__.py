"""Semi-flat Calabi-Yau mirror pairs from the real Monge-Ampere equation.

The package builds T^n-invariant mirror geometries out of a convex
potential and verifies, to quantified tolerances, the identities that
relate the two sides: the form transform, the paired sl(2) actions,
coupling and moduli-metric equalities, connection and cycle duality,
and the hyperkahler quaternion relations.
"""

from .errors import (
    ConfigError,
    DegreeOverflow,
    DimensionTooLarge,
    HomotopyStall,
    LostConvexity,
    MaxIterations,
    NewtonDivergence,
    NonConvex,
    NonConvexAt,
    NotClosed,
    NotFiberLinear,
    NotInvertible,
    OutOfDomain,
    SingularJacobian,
    SolverFailure,
    WrongArity,
)
from .geometry import (
    ComplexifiedPotential,
    Domain,
    GridPotential,
    JetFrame,
    LegendreDual,
    PolynomialPotential,
    QuadraticPotential,
    StructureTensors,
    complexified_residual,
    flat_potential,
    jet,
    legendre_dual,
    ma_residual,
    shrink_volume_check,
    structures,
)
from .polynomials import Polynomial
from .solver import SolveResult, SolverOptions, convexity_spectrum, solve_complexified_ma, solve_real_ma

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
