"""The mirror transform on forms and the identities built from it.

The transform replaces the dz block by its complement inside the full
top product (removing hatted factors left-to-right, each from the right
end of the remaining product) and maps each dzbar^j to
sum_k phi^{jk} dzbar_k.  Composed with the fiberwise dual and the base
Legendre change of derivative, it intertwines the two sl(2) triples and
matches inner products, couplings and cycle data up to overall
constants.  Those constants are measured once on the flat reference
background and recorded; every suite then asserts constancy.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import NotClosed, WrongArity
from .forms import (
    Coeff,
    ModuliVector,
    OperatorTag,
    QuadratureContext,
    SIDE_M,
    SIDE_W,
    TnForm,
    dbar,
    dell,
    full_basis,
    inner_product,
    kahler_form,
    wedge,
)
from .geometry import Domain, QuadraticPotential, jet, legendre_dual


# ---------------------------------------------------------------------------
# context
# ---------------------------------------------------------------------------


class MirrorContext:
    """Shared background for a mirror pair: potential, dual, quadrature."""

    def __init__(self, domain: Domain, potential, dual=None, bfield=None, quad_resolution=None):
        self.domain = domain
        self.potential = potential
        self.dual = dual if dual is not None else legendre_dual(potential, domain)
        self.bfield = bfield
        self.covolume = domain.lattice_covolume
        self.quad = QuadratureContext(domain, potential, quad_resolution)
        center_jet = jet(potential, domain.center)
        self.V = float(np.sqrt(center_jet.det_hessian) * self.covolume)
        self._jets = {}

    @property
    def n(self):
        return self.domain.n

    def jet(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        if key not in self._jets:
            self._jets[key] = jet(self.potential, x)
        return self._jets[key]

    def sample_points(self, rng, count, margin=0.15):
        return self.domain.sample_interior(rng, count, margin)

    def omega_form(self, side=SIDE_M) -> TnForm:
        return kahler_form(self.n, self.potential, side)

    @property
    def calibration(self):
        return calibration_constants(self.n)


def make_context(domain: Domain, potential, **kw) -> MirrorContext:
    return MirrorContext(domain, potential, **kw)


# ---------------------------------------------------------------------------
# the transform
# ---------------------------------------------------------------------------


def _removal_sign(I, n):
    """Sign of removing the dz factors of I (ascending) one at a time,
    each anticommuted to the right end of the remaining product."""
    remaining = list(range(1, n + 1))
    sign = 1
    for i in I:
        pos = remaining.index(i)
        if (len(remaining) - 1 - pos) % 2:
            sign = -sign
        remaining.remove(i)
    return sign, tuple(remaining)


def _minor_value(mat, rows, cols):
    if not rows:
        return 1.0
    return np.linalg.det(mat[np.ix_([r - 1 for r in rows], [c - 1 for c in cols])])


def _perm_sign(perm):
    sign = 1
    for a in range(len(perm)):
        for b in range(a + 1, len(perm)):
            if perm[a] > perm[b]:
                sign = -sign
    return sign


def _dinv_field(frame):
    """d/dx^l of the inverse Hessian, indexed [l, j, k]."""
    inv, t = frame.inverse_hessian, frame.third
    return -np.einsum("ja,abl,bk->ljk", inv, t, inv)


def _dhess_field(frame):
    return np.einsum("jkl->ljk", frame.third)


def transform(a: TnForm, ctx: MirrorContext) -> TnForm:
    """Carry a (p,q)-form on M to the (n-p,q)-form on W."""
    if a.side != SIDE_M:
        raise ValueError("transform expects a form on side M")
    return _transform_impl(a, ctx, to_side=SIDE_W)


def transform_back(a: TnForm, ctx: MirrorContext) -> TnForm:
    """The W-to-M direction; composed with ``transform`` it is +-identity."""
    if a.side != SIDE_W:
        raise ValueError("transform_back expects a form on side W")
    return _transform_impl(a, ctx, to_side=SIDE_M)


def _transform_impl(a: TnForm, ctx: MirrorContext, to_side):
    n = a.n
    out_coeffs = {}
    use_inverse = to_side == SIDE_W
    for (I, J), c in a.coeffs.items():
        sign, comp = _removal_sign(I, n)
        for K in itertools.combinations(range(1, n + 1), len(J)):
            def value(x, c=c, J=J, K=K, sign=sign):
                frame = ctx.jet(x)
                mat = frame.inverse_hessian if use_inverse else frame.hessian
                return sign * c(x) * _minor_value(mat, J, K)

            def grad(x, c=c, J=J, K=K, sign=sign):
                frame = ctx.jet(x)
                mat = frame.inverse_hessian if use_inverse else frame.hessian
                dmat = _dinv_field(frame) if use_inverse else _dhess_field(frame)
                minor = _minor_value(mat, J, K)
                dminor = _det_minor_grad(mat, dmat, J, K)
                return sign * (c.grad(x) * minor + c(x) * dminor)

            key = (comp, K)
            term = Coeff.from_callables(n, value, grad)
            out_coeffs[key] = out_coeffs[key] + term if key in out_coeffs else term
    out = TnForm(n, n - a.p, a.q, to_side, {}, ctx.potential)
    out.coeffs = out_coeffs
    return out


def _det_minor_grad(mat, dmat, rows, cols):
    """Gradient of det(mat[rows, cols]) via the Leibniz expansion."""
    q = len(rows)
    n = dmat.shape[0]
    if q == 0:
        return np.zeros(n, dtype=complex)
    out = np.zeros(n, dtype=complex)
    ridx = [r - 1 for r in rows]
    cidx = [c - 1 for c in cols]
    for perm in itertools.permutations(range(q)):
        sign = _perm_sign(perm)
        entries = [mat[ridx[s], cidx[perm[s]]] for s in range(q)]
        for r in range(q):
            prod = sign
            for s in range(q):
                if s != r:
                    prod *= entries[s]
            out += prod * dmat[:, ridx[r], cidx[perm[r]]]
    return out


# ---------------------------------------------------------------------------
# commutation residuals
# ---------------------------------------------------------------------------


def dbar_commutation_residual(a: TnForm, ctx: MirrorContext, points) -> float:
    """sup |dbar(T a) - T(dbar a)| over sample points and index pairs."""
    lhs = dbar(transform(a, ctx))
    rhs = transform(dbar(a), ctx)
    worst = 0.0
    for x in points:
        lv = lhs.value_at(x)
        rv = rhs.value_at(x)
        for key in set(lv) | set(rv):
            worst = max(worst, abs(lv.get(key, 0.0) - rv.get(key, 0.0)))
    return worst


def _test_basis(n, p, q, degree=2):
    """Monomial forms with low-degree polynomial coefficients, per (p,q) key."""
    from .polynomials import Polynomial

    polys = [Polynomial.constant(n, 1.0)]
    for j in range(1, n + 1):
        polys.append(Polynomial.variable(n, j))
    if degree >= 2:
        for j in range(1, n + 1):
            for k in range(j, n + 1):
                polys.append(Polynomial.variable(n, j) * Polynomial.variable(n, k))
    singles = list(range(1, n + 1))
    Is = list(itertools.combinations(singles, p))
    Js = list(itertools.combinations(singles, q))
    out = []
    for I in Is:
        for J in Js:
            for poly in polys:
                out.append(TnForm.monomial(n, I, J, Coeff.from_poly(poly), SIDE_M))
    return out


def dbar_star_commutation_residual(a: TnForm, ctx: MirrorContext, test_forms=None) -> float:
    """Mismatch of the codifferential across the transform, tested weakly.

    The codifferential is the adjoint of the implemented dbar under the
    quadrature inner product on each side.  Tested against the image
    basis T(beta), the mismatch <T dbar* a - dbar* T a, T beta> reduces
    to kappa_p^{-1} <a, dbar beta>_M - <T a, dbar (T beta)>_W with
    kappa_p the recorded pairing constant of the transform at dz-degree
    p.  Returns the sup over the test basis.
    """
    if a.q == 0:
        return 0.0
    test_forms = test_forms or _test_basis(a.n, a.p, a.q - 1)
    kappa = ctx.calibration["pairing_ratio"][a.p] * ctx.covolume**2
    ta = transform(a, ctx)
    worst = 0.0
    for beta in test_forms:
        m_side = inner_product(a, dbar(beta), ctx.quad)
        tb = transform(beta, ctx)
        w_side = inner_product(ta, dbar(tb), ctx.quad)
        worst = max(worst, abs(m_side / kappa - w_side))
    return worst


# ---------------------------------------------------------------------------
# moduli map and isometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixField:
    """A matrix-valued function of the base point."""

    fn: object
    n: int

    def __call__(self, x):
        return np.asarray(self.fn(x))


def moduli_map(xi: ModuliVector, ctx: MirrorContext, use_bfield=False) -> MatrixField:
    """The infinitesimal mirror map on deformations: -xi Hess^{-1} (theta
    replacing the Hessian when a B-field is attached)."""

    def fn(x):
        if use_bfield:
            if ctx.bfield is None:
                raise ValueError("context carries no complexified potential")
            theta = ctx.bfield.theta_hessian(x)
            return -xi.hessian(x) @ np.linalg.inv(theta)
        return -xi.hessian(x) @ ctx.jet(x).inverse_hessian

    return MatrixField(fn, ctx.n)


def moduli_isometry_residual(xi: ModuliVector, zeta: ModuliVector, ctx: MirrorContext) -> float:
    """Relative gap between the two moduli inner products (constant V^2)."""

    def m_integrand(x):
        frame = ctx.jet(x)
        h = frame.inverse_hessian
        val = np.einsum("jl,km,jk,lm->", h, h, xi.hessian(x), zeta.hessian(x))
        return val * np.sqrt(frame.det_hessian)

    def w_integrand(x):
        frame = ctx.jet(x)
        h, H = frame.inverse_hessian, frame.hessian
        az = zeta.hessian(x) @ h
        ax = xi.hessian(x) @ h
        val = np.einsum("jp,lq,jl,pq->", h, H, az, ax)
        return val * np.sqrt(frame.det_hessian)

    ip_m = 2.0 * ctx.V * ctx.quad.integrate(m_integrand)
    ip_w = (2.0 / ctx.V) * ctx.quad.integrate(w_integrand)
    denom = max(abs(ip_m), 1e-30)
    return abs(ip_m - ctx.V**2 * ip_w) / denom


# ---------------------------------------------------------------------------
# Yukawa couplings and prepotentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class YukawaResult:
    value: complex
    side: str
    integrand_trace: tuple


def _coefficient_matrix(form: TnForm, x):
    n = form.n
    vals = form.value_at(x)
    mat = np.zeros((n, n), dtype=complex)
    for (I, J), v in vals.items():
        mat[I[0] - 1, J[0] - 1] = v
    return mat


def _signed_double_sum(mats):
    """sum over sigma, tau of sgn(sigma) sgn(tau) prod_r M_r[sigma(r), tau(r)]."""
    n = mats[0].shape[0]
    total = 0.0 + 0.0j
    for sigma in itertools.permutations(range(n)):
        ssign = _perm_sign(sigma)
        for tau in itertools.permutations(range(n)):
            tsign = _perm_sign(tau)
            prod = 1.0 + 0.0j
            for r in range(n):
                prod *= mats[r][sigma[r], tau[r]]
            total += ssign * tsign * prod
    return total


def closedness_residual(form: TnForm, points) -> float:
    d1 = dbar(form)
    d2 = dell(form)
    return max(d1.max_abs(points), d2.max_abs(points))


def yukawa_a(forms, ctx: MirrorContext, closed_tol=1e-8) -> YukawaResult:
    """n-fold coupling on M: top wedge of n closed (1,1)-forms."""
    n = ctx.n
    if len(forms) != n:
        raise WrongArity(f"expected {n} forms, got {len(forms)}")
    check_pts = ctx.domain.sample_interior(np.random.default_rng(0), 8)
    for f in forms:
        if closedness_residual(f, check_pts) > closed_tol:
            raise NotClosed("input form has nonzero exterior derivative")
    trace = []

    def integrand(x):
        mats = [_coefficient_matrix(f, x) for f in forms]
        c = _signed_double_sum(mats)
        if len(trace) < 5:
            trace.append(complex(c))
        return c

    value = ctx.V * (-2j) ** n * ctx.quad.integrate(integrand)
    return YukawaResult(complex(value), "A", tuple(trace))


def yukawa_b(images, ctx: MirrorContext) -> YukawaResult:
    """n-fold coupling on W from the images of the deformations.

    Each image contracts one slot of the holomorphic volume form; the
    iterated contraction is summed literally over the assignments of
    images to slots.
    """
    n = ctx.n
    if len(images) != n:
        raise WrongArity(f"expected {n} images, got {len(images)}")
    trace = []

    def integrand(x):
        H = ctx.jet(x).hessian
        xis = [-np.asarray(img(x)) @ H for img in images]
        total = 0.0 + 0.0j
        for assign in itertools.permutations(range(n)):
            rows = np.array([xis[assign[s]][s, :] for s in range(n)])
            total += np.linalg.det(rows)
        if len(trace) < 5:
            trace.append(complex(total))
        return total

    norm = (1.0 / ctx.covolume) * (1j) ** n * (-1.0) ** (n * n)
    value = norm * ctx.quad.integrate(integrand)
    return YukawaResult(complex(value), "B", tuple(trace))


def prepotential_a(ctx: MirrorContext) -> float:
    """Integral of the top power of the Kahler form over the total space."""
    import math

    val = ctx.quad.integrate(lambda x: ctx.jet(x).det_hessian)
    return float(math.factorial(ctx.n) * ctx.covolume * val)


def prepotential_b(ctx: MirrorContext) -> complex:
    """Integral of Omega wedge conj(Omega) on the dual side."""
    n = ctx.n
    val = ctx.quad.integrate(lambda x: ctx.jet(x).det_hessian)
    return complex((-2j) ** n * (1.0 / ctx.covolume) * val)


# ---------------------------------------------------------------------------
# fiber L^2 metric (moduli of special Lagrangian tori)
# ---------------------------------------------------------------------------


def _fiber_nodes(ctx, count=None):
    count = count or ctx.domain.fiber_resolution
    side = ctx.covolume ** (1.0 / ctx.n)
    axes = [np.arange(count) * (side / count) for _ in range(ctx.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack(mesh, axis=-1).reshape(-1, ctx.n)
    weight = (side / count) ** ctx.n
    return pts, weight


def fiber_l2_metric_residual(ctx: MirrorContext, j: int, l: int, x0=None) -> float:
    """|<d/dx^j, d/dx^l>_{L^2(fiber)} - phi_jl vol(fiber)| by fiber quadrature."""
    x0 = ctx.domain.center if x0 is None else np.asarray(x0, dtype=float)
    frame = ctx.jet(x0)
    H, Hinv = frame.hessian, frame.inverse_hessian
    nodes, w = _fiber_nodes(ctx)
    density = float(np.sqrt(frame.det_hessian))
    # harmonic representatives phi_jk dy^k; the pointwise pairing uses phi^{km}
    pair = np.einsum("k,m,km->", H[j - 1], H[l - 1], Hinv)
    total = sum(pair * density * w for _ in nodes)
    vol_c = density * ctx.covolume
    return float(abs(total - H[j - 1, l - 1] * vol_c))


def fiber_l2_mixed_block(ctx: MirrorContext, j: int, l: int, x0=None) -> float:
    """Mixed base/fiber block of the L^2 metric; identically zero.

    Base directions give real harmonic one-forms, connection directions
    give imaginary ones, and the metric is the real part of the Hermitian
    product.
    """
    x0 = ctx.domain.center if x0 is None else np.asarray(x0, dtype=float)
    frame = ctx.jet(x0)
    H, Hinv = frame.hessian, frame.inverse_hessian
    nodes, w = _fiber_nodes(ctx)
    density = float(np.sqrt(frame.det_hessian))
    base_form = H[j - 1].astype(complex)          # phi_jk dy^k
    conn_form = 1j * np.eye(ctx.n)[l - 1]         # i times a real constant form
    pair = np.einsum("k,m,km->", base_form, np.conj(conn_form), Hinv)
    total = sum(pair * density * w for _ in nodes)
    return float(abs(np.real(total)))


# ---------------------------------------------------------------------------
# B-field checks
# ---------------------------------------------------------------------------


def gross_bfield_checks(cp, ctx: MirrorContext, points):
    """(invariance of Omega conj(Omega) under the B-field, zero-section
    phase residual, recorded phase)."""
    n = cp.n

    def top_product(x, with_eta):
        theta = cp.phi.hessian(x) + (1j * cp.eta.hessian(x) if with_eta else 0.0)
        rows = np.zeros((2 * n, 2 * n), dtype=complex)
        rows[:n, :n] = theta
        rows[:n, n:] = 1j * np.eye(n)
        rows[n:, :n] = np.conj(theta)
        rows[n:, n:] = -1j * np.eye(n)
        return np.linalg.det(rows)

    res1 = max(abs(top_product(x, True) - top_product(x, False)) for x in points)
    dets = [np.linalg.det(cp.phi.hessian(x) + 1j * cp.eta.hessian(x)) for x in points]
    phase = -np.angle(np.mean(dets))
    res2 = max(abs(np.imag(np.exp(1j * phase) * d)) for d in dets)
    return float(res1), float(res2), float(phase)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def calibration_constants(n: int):
    """Overall constants of the transform, measured on the flat reference.

    pairing_ratio[p]: <u, v>_M / <T u, T v>_W at dz-degree p.
    inversion_signs: the +-1 pattern of the double transform per basis key.
    lefschetz_adjoint / vhs_adjoint: <L a, b> / <a, Lam b> for the two triples.
    """
    domain = Domain(n, tuple((-1.0, 1.0) for _ in range(n)), grid_resolution=9 if n >= 3 else 17)
    potential = QuadraticPotential(np.eye(n), domain=domain, target_constant=1.0)
    ctx = MirrorContext(domain, potential)
    ratios = {}
    for p in range(n + 1):
        I = tuple(range(1, p + 1))
        beta = TnForm.monomial(n, I, (), 1.0, SIDE_M)
        m = inner_product(beta, beta, ctx.quad)
        tb = transform(beta, ctx)
        w = inner_product(tb, tb, ctx.quad)
        ratios[p] = float(np.real(m / w))
    signs = {}
    for I, J in full_basis(n):
        mono = TnForm.monomial(n, I, J, 1.0, SIDE_M)
        back = transform_back(transform(mono, ctx), ctx)
        val = back.value_at(domain.center).get((I, J), 0.0)
        signs[f"{list(I)}|{list(J)}"] = int(np.sign(np.real(val)))
    from .forms import apply_operator

    x0 = domain.center + 0.05
    a_form = TnForm.monomial(n, (), (), 1.0, SIDE_M)
    b_form = TnForm.monomial(n, (1,), (1,), 1.0, SIDE_M)
    la = inner_product(apply_operator(OperatorTag.L_A, a_form, potential), b_form, ctx.quad)
    lam = inner_product(a_form, apply_operator(OperatorTag.LAM_A, b_form, potential), ctx.quad)
    kappa_a = float(np.real(la / lam))
    c_form = TnForm.monomial(n, (1,), (), 1.0, SIDE_M)
    d_form = TnForm.monomial(n, (), (1,), 1.0, SIDE_M)
    lb = inner_product(apply_operator(OperatorTag.L_B, c_form, potential), d_form, ctx.quad)
    lamb = inner_product(c_form, apply_operator(OperatorTag.LAM_B, d_form, potential), ctx.quad)
    kappa_b = float(np.real(lb / lamb))
    return {
        "pairing_ratio": ratios,
        "inversion_signs": signs,
        "lefschetz_adjoint": kappa_a,
        "vhs_adjoint": kappa_b,
    }
