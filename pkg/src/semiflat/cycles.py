"""Special Lagrangian sections, their transform to line-bundle data on
the dual side, and the associated moduli/correlation checks.

A section is cut out by a generating function f through
y^j = phi^{jk} df_k; its phase condition and the deformed
Hermitian-Yang-Mills condition of the transformed connection are the
same scalar equation, which the two residuals here compute through
independent pipelines.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .connections import hess_a
from .errors import WrongArity
from .forms import Coeff, SIDE_W, TnForm, dbar, dell, wedge
from .geometry import JetFrame
from .mirror import MirrorContext, _perm_sign


# ---------------------------------------------------------------------------
# sections and their phase residual
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SLagSection:
    """Generating function, fiber flat-connection potential, phase angle."""

    f: object          # scalar field, two derivative orders
    e: object          # scalar field, one derivative order (may be None)
    theta: float = 0.0

    def section_value(self, frame: JetFrame):
        """y^j(x) = phi^{jk} df_k."""
        return frame.inverse_hessian @ np.asarray(self.f.gradient(frame.point))


def slag_phase_residual(section: SLagSection, frame: JetFrame) -> float:
    """|Im e^{i theta} det(Hess phi + i covariant Hess f)| at the jet."""
    H = frame.hessian
    A = hess_a(section.f, frame)
    val = np.exp(1j * section.theta) * np.linalg.det(H + 1j * A)
    return float(abs(np.imag(val)))


# ---------------------------------------------------------------------------
# the transformed U(1) connection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UOneConnection:
    """Connection data at one base point, in the dual chart.

    ``b`` are the fiber components (the section itself), ``a`` the base
    components from the flat connection potential; the curvature is
    stored through the symmetric matrix S with F = i S_jk dx_k ^ dy_j,
    plus the (2,0)/(0,2) projections and the base-base block (both
    vanish for gradient sections).
    """

    point: np.ndarray
    a: np.ndarray
    b: np.ndarray
    S: np.ndarray
    F20: np.ndarray
    F02: np.ndarray
    F_base: np.ndarray
    theta: float


def fourier_transform_cycle(section: SLagSection, frame: JetFrame) -> UOneConnection:
    """Dualize a section fiberwise into a U(1) connection with curvature.

    The fiber holonomy point is the section value; the flat potential e
    adds a base component that never changes the curvature.
    """
    inv = frame.inverse_hessian
    b = section.section_value(frame)
    A = hess_a(section.f, frame)
    S = inv @ A @ inv  # dy^j/dx_k
    S = 0.5 * (S + S.T)  # symmetric analytically; make it exact in floats
    F20 = -0.25 * (S - S.T)
    F02 = -0.25 * (S - S.T)
    n = frame.n
    if section.e is not None:
        a = inv @ np.asarray(section.e.gradient(frame.point))
        eh = np.asarray(section.e.hessian(frame.point))
        eg = np.asarray(section.e.gradient(frame.point))
        # d(a_j dx_j) in dual coordinates: antisymmetrized second derivative
        dual_second = np.einsum("ml,jk,km->jl", inv, inv, eh) - np.einsum(
            "ml,ja,abm,bk,k->jl", inv, inv, frame.third, inv, eg
        )
        F_base = dual_second - dual_second.T
    else:
        a = np.zeros(n)
        F_base = np.zeros((n, n))
    return UOneConnection(frame.point, a, b, S, F20, F02, F_base, section.theta)


def dhym_residual(conn: UOneConnection, theta: float, frame: JetFrame) -> float:
    """Deformed Hermitian-Yang-Mills residual of the dual connection.

    The top power of (omega + F) in the dual chart has coefficient
    det(phi^{jk} + i S^{jk}) up to positive constants; it is scaled here
    by det(Hess phi)^2, the square of the fiber determinant, so that the
    residual agrees pointwise with the section's phase residual.
    """
    M = frame.inverse_hessian + 1j * conn.S
    val = np.exp(1j * theta) * frame.det_hessian**2 * np.linalg.det(M)
    return float(abs(np.imag(val)))


# ---------------------------------------------------------------------------
# graded tangent transform
# ---------------------------------------------------------------------------


@dataclass
class CycleTangentForm:
    """A degree-q form on the cycle: coefficients on ascending dx-multi-indices."""

    n: int
    q: int
    coeffs: dict  # K (ascending tuple) -> Coeff

    @classmethod
    def one_form(cls, n, components):
        """From a list of n coefficient functions a_j(x) dx^j."""
        return cls(n, 1, {(j,): components[j - 1] for j in range(1, n + 1)})


def tangent_transform(t: CycleTangentForm, ctx: MirrorContext) -> TnForm:
    """Index-wise rule dx^j -> (i/2) phi^{jk} dzbar_k, with wedge signs."""
    n = t.n
    out = {}
    for K, c in t.coeffs.items():
        for L in itertools.combinations(range(1, n + 1), t.q):
            def value(x, c=c, K=K, L=L):
                frame = ctx.jet(x)
                inv = frame.inverse_hessian
                total = 0.0 + 0.0j
                for perm in itertools.permutations(range(t.q)):
                    prod = _perm_sign(perm)
                    for r in range(t.q):
                        prod *= inv[K[r] - 1, L[perm[r]] - 1]
                    total += prod
                return (0.5j) ** t.q * c(x) * total

            def grad(x, c=c, K=K, L=L):
                frame = ctx.jet(x)
                inv = frame.inverse_hessian
                dinv = -np.einsum("ja,abl,bk->ljk", inv, frame.third, inv)
                minor = 0.0 + 0.0j
                dminor = np.zeros(n, dtype=complex)
                for perm in itertools.permutations(range(t.q)):
                    sign = _perm_sign(perm)
                    entries = [inv[K[r] - 1, L[perm[r]] - 1] for r in range(t.q)]
                    prod = sign * np.prod(entries) if entries else sign
                    minor += prod
                    for r in range(t.q):
                        partial = sign
                        for s in range(t.q):
                            if s != r:
                                partial *= entries[s]
                        dminor += partial * dinv[:, K[r] - 1, L[perm[r]] - 1]
                return (0.5j) ** t.q * (c.grad(x) * minor + c(x) * dminor)

            key = ((), L)
            term = Coeff.from_callables(n, value, grad)
            out[key] = out[key] + term if key in out else term
    form = TnForm(n, 0, t.q, SIDE_W, {}, ctx.potential)
    form.coeffs = out
    return form


def omega_plus_curvature_form(ctx: MirrorContext, conn: UOneConnection = None) -> TnForm:
    """(omega_W + F) as a (1,1)-form on W: (i/2) phi^{jk} - S^{jk}/2."""
    n = ctx.n
    coeffs = {}
    for j in range(1, n + 1):
        for k in range(1, n + 1):
            def value(x, j=j, k=k):
                inv = ctx.jet(x).inverse_hessian
                base = 0.5j * inv[j - 1, k - 1]
                if conn is not None:
                    base = base - 0.5 * conn.S[j - 1, k - 1]
                return base

            def grad(x, j=j, k=k):
                frame = ctx.jet(x)
                dinv = -np.einsum("ja,abl,bk->ljk", frame.inverse_hessian, frame.third, frame.inverse_hessian)
                return 0.5j * dinv[:, j - 1, k - 1]

            coeffs[((j,), (k,))] = Coeff.from_callables(n, value, grad)
    form = TnForm(n, 1, 1, SIDE_W, {}, ctx.potential)
    form.coeffs = coeffs
    return form


def deformed_harmonic_residual(B: TnForm, q: int, theta: float, ctx: MirrorContext, points, conn=None):
    """(sup |dbar B|, sup |Im e^{i theta} (omega+F)^{n-q} ^ del B|)."""
    n = ctx.n
    r1 = dbar(B).max_abs(points)
    dB = dell(B)
    power = None
    g = omega_plus_curvature_form(ctx, conn)
    for _ in range(n - q):
        power = g if power is None else wedge(power, g)
    if power is not None:
        prod = wedge(power, dB)
    else:
        prod = dB
    worst = 0.0
    phase = np.exp(1j * theta)
    for x in points:
        for v in prod.value_at(x).values():
            worst = max(worst, abs(np.imag(phase * v)))
    return float(r1), float(worst)


# ---------------------------------------------------------------------------
# correlation functions
# ---------------------------------------------------------------------------


def _integrate_top_w(cfn, ctx: MirrorContext):
    """Integral over W of a top form with (n,n) canonical coefficient cfn(x)."""
    n = ctx.n

    def integrand(x):
        return cfn(x) * ctx.jet(x).det_hessian

    return (1.0 / ctx.covolume) * (-2j) ** n * ctx.quad.integrate(integrand)


def correlation_a(alphas, ctx: MirrorContext) -> complex:
    """Top wedge of n one-forms over the section, in base coordinates."""
    n = ctx.n
    if len(alphas) != n:
        raise WrongArity(f"expected {n} one-forms, got {len(alphas)}")

    def integrand(x):
        rows = np.array(
            [[complex(a.coeffs[(j,)](x)) if (j,) in a.coeffs else 0.0 for j in range(1, n + 1)] for a in alphas]
        )
        return np.linalg.det(rows)

    return complex(ctx.quad.integrate(integrand))


def correlation_b(alphas, ctx: MirrorContext) -> complex:
    """Dual-side correlation: Omega_W wedge the transformed one-forms."""
    n = ctx.n
    if len(alphas) != n:
        raise WrongArity(f"expected {n} one-forms, got {len(alphas)}")
    betas = [tangent_transform(a, ctx) for a in alphas]
    prod = betas[0]
    for b in betas[1:]:
        prod = wedge(prod, b)
    omega_top = TnForm.monomial(n, tuple(range(1, n + 1)), (), 1.0, SIDE_W, ctx.potential)
    top = wedge(omega_top, prod)
    full = tuple(range(1, n + 1))

    def cfn(x):
        return top.value_at(x).get((full, full), 0.0)

    return complex(_integrate_top_w(cfn, ctx))


def correlation_residual(alphas, ctx: MirrorContext, kappa=None) -> float:
    """|A-side - kappa * B-side| with the recorded calibration constant."""
    a_val = correlation_a(alphas, ctx)
    b_val = correlation_b(alphas, ctx)
    if kappa is None:
        kappa = correlation_calibration(ctx.n)
    return float(abs(a_val - kappa * b_val))


def correlation_calibration(n: int) -> complex:
    """A/B correlation ratio measured on the flat reference background."""
    from .geometry import Domain, QuadraticPotential

    domain = Domain(n, tuple((-1.0, 1.0) for _ in range(n)), grid_resolution=9)
    potential = QuadraticPotential(np.eye(n), domain=domain, target_constant=1.0)
    ctx = MirrorContext(domain, potential)
    alphas = [
        CycleTangentForm.one_form(n, [Coeff.const(n, 1.0 if j == r else 0.0) for j in range(1, n + 1)])
        for r in range(1, n + 1)
    ]
    a_val = correlation_a(alphas, ctx)
    b_val = correlation_b(alphas, ctx)
    return complex(a_val / b_val)
