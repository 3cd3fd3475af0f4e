"""Exterior algebra of T^n-invariant complex (p,q)-forms.

A form is a map from canonically ordered index pairs (I, J) - the dz
block ascending, then the dzbar block ascending - to coefficient
functions of the base coordinates only.  All operator signs are derived
mechanically from that ordering through four elementary moves: wedging
dz/dzbar at the front and the matching left contractions.

Two sl(2) triples act pointwise: the hard-Lefschetz triple (wedging with
the Kahler matrix and its normalized contraction) and the triple built
from moving along the large-complex-structure family.  Their
normalizations are fixed by requiring [L, Lam] = H exactly on every
basis monomial; see ``_apply_values``.
"""

from __future__ import annotations

import enum
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegreeOverflow, QuadratureUnderResolvedWarning
from .geometry import JetFrame, jet
from .polynomials import Polynomial

SIDE_M = "M"
SIDE_W = "W"


# ---------------------------------------------------------------------------
# coefficient functions
# ---------------------------------------------------------------------------


class Coeff:
    """A complex-valued coefficient function with one derivative order.

    Polynomial-backed coefficients stay polynomial under differentiation
    and products, so iterated operators on them are exact; generic
    callables carry an optional gradient callable and lose one
    derivative order per differentiation.
    """

    __slots__ = ("n", "_value", "_grad", "poly")

    def __init__(self, n, value, grad=None, poly=None):
        self.n = n
        self._value = value
        self._grad = grad
        self.poly = poly

    # -- constructors --------------------------------------------------------

    @classmethod
    def const(cls, n, c):
        c = complex(c)
        return cls.from_poly(Polynomial.constant(n, c))

    @classmethod
    def from_poly(cls, poly: Polynomial):
        grads = [poly.diff(j) for j in range(1, poly.n + 1)]
        return cls(
            poly.n,
            lambda x: complex(poly(x)),
            lambda x: np.array([g(x) for g in grads], dtype=complex),
            poly=poly,
        )

    @classmethod
    def from_callables(cls, n, value, grad=None):
        return cls(n, value, grad)

    # -- evaluation ------------------------------------------------------------

    def __call__(self, x):
        return complex(self._value(x))

    def grad(self, x):
        if self._grad is None:
            raise ValueError("coefficient carries no gradient")
        return np.asarray(self._grad(x), dtype=complex)

    def diff(self, j):
        """d/dx^j as a new coefficient (polynomial kind keeps its gradient)."""
        if self.poly is not None:
            return Coeff.from_poly(self.poly.diff(j))
        return Coeff(self.n, lambda x, j=j: self.grad(x)[j - 1])

    # -- algebra ----------------------------------------------------------------

    def scaled(self, c):
        if self.poly is not None:
            return Coeff.from_poly(self.poly * c)
        g = None if self._grad is None else (lambda x: c * self.grad(x))
        return Coeff(self.n, lambda x: c * self(x), g)

    def __add__(self, other):
        if self.poly is not None and other.poly is not None:
            return Coeff.from_poly(self.poly + other.poly)
        g = None
        if self._grad is not None and other._grad is not None:
            g = lambda x: self.grad(x) + other.grad(x)
        return Coeff(self.n, lambda x: self(x) + other(x), g)

    def __mul__(self, other):
        if self.poly is not None and other.poly is not None:
            return Coeff.from_poly(self.poly * other.poly)
        g = None
        if self._grad is not None and other._grad is not None:
            g = lambda x: self.grad(x) * other(x) + self(x) * other.grad(x)
        return Coeff(self.n, lambda x: self(x) * other(x), g)


# ---------------------------------------------------------------------------
# index bookkeeping
# ---------------------------------------------------------------------------


def check_multi_index(I, n):
    I = tuple(int(i) for i in I)
    if any(not 1 <= i <= n for i in I) or any(a >= b for a, b in zip(I, I[1:])):
        raise ValueError(f"multi-index {I} is not strictly increasing in 1..{n}")
    return I


def merge_sign(A, B):
    """Sign of sorting the concatenation of two disjoint ascending tuples."""
    inv = sum(1 for a in A for b in B if a > b)
    return -1 if inv % 2 else 1


def _insert(idx, j):
    """Insert j into ascending tuple idx; None on collision."""
    if j in idx:
        return None
    before = sum(1 for i in idx if i < j)
    sign = -1 if before % 2 else 1
    return sign, tuple(sorted(idx + (j,)))


def _remove(idx, j):
    """Left-contraction removal of j from ascending tuple idx."""
    if j not in idx:
        return None
    pos = idx.index(j)
    sign = -1 if pos % 2 else 1
    return sign, idx[:pos] + idx[pos + 1 :]


# the four elementary fermionic moves on a monomial (I, J)


def _wedge_dz(j, I, J):
    r = _insert(I, j)
    if r is None:
        return None
    return r[0], r[1], J


def _wedge_dzbar(k, I, J):
    r = _insert(J, k)
    if r is None:
        return None
    sign = -1 if len(I) % 2 else 1
    return sign * r[0], I, r[1]


def _contract_dz(j, I, J):
    r = _remove(I, j)
    if r is None:
        return None
    return r[0], r[1], J


def _contract_dzbar(k, I, J):
    r = _remove(J, k)
    if r is None:
        return None
    sign = -1 if len(I) % 2 else 1
    return sign * r[0], I, r[1]


# ---------------------------------------------------------------------------
# the form type
# ---------------------------------------------------------------------------


@dataclass
class TnForm:
    """A T^n-invariant (p,q)-form; missing keys are zero coefficients.

    W-side forms keep their coefficients as functions of the same base
    coordinates; derivatives in the dual coordinates are realized through
    the inverse Hessian of ``background``.
    """

    n: int
    p: int
    q: int
    side: str = SIDE_M
    coeffs: dict = field(default_factory=dict)
    background: object = None

    def __post_init__(self):
        clean = {}
        for (I, J), c in self.coeffs.items():
            I = check_multi_index(I, self.n)
            J = check_multi_index(J, self.n)
            if len(I) != self.p or len(J) != self.q:
                raise ValueError(f"key ({I},{J}) does not match bidegree ({self.p},{self.q})")
            clean[(I, J)] = c
        self.coeffs = clean

    @classmethod
    def zero(cls, n, p, q, side=SIDE_M, background=None):
        return cls(n, p, q, side, {}, background)

    @classmethod
    def monomial(cls, n, I, J, coeff=1.0, side=SIDE_M, background=None):
        I, J = tuple(I), tuple(J)
        c = coeff if isinstance(coeff, Coeff) else Coeff.const(n, coeff)
        return cls(n, len(I), len(J), side, {(I, J): c}, background)

    def value_at(self, x):
        """Numeric coefficients at one point as {(I, J): complex}."""
        return {key: c(x) for key, c in self.coeffs.items()}

    def scaled(self, factor):
        return TnForm(
            self.n, self.p, self.q, self.side,
            {k: c.scaled(factor) for k, c in self.coeffs.items()},
            self.background,
        )

    def __add__(self, other):
        if (self.p, self.q, self.side) != (other.p, other.q, other.side):
            raise ValueError("can only add forms of equal bidegree and side")
        coeffs = dict(self.coeffs)
        for k, c in other.coeffs.items():
            coeffs[k] = coeffs[k] + c if k in coeffs else c
        return TnForm(self.n, self.p, self.q, self.side, coeffs, self.background or other.background)

    def max_abs(self, points):
        """Sup over sample points and index pairs of the coefficients."""
        worst = 0.0
        for x in points:
            for v in self.value_at(x).values():
                worst = max(worst, abs(v))
        return worst

    # -- fixture serialization ---------------------------------------------------

    def to_json(self):
        entries = []
        for (I, J), c in self.coeffs.items():
            if c.poly is None:
                raise ValueError("only polynomial-coefficient forms serialize")
            terms = [[list(e), z.real, z.imag] for e, z in ((e, complex(v)) for e, v in c.poly.terms.items())]
            entries.append({"I": list(I), "J": list(J), "coeff_spec": {"terms": terms}})
        return {"p": self.p, "q": self.q, "side": self.side, "entries": entries}

    @classmethod
    def from_json(cls, n, data, background=None):
        coeffs = {}
        for entry in data["entries"]:
            terms = {tuple(e): re + 1j * im for e, re, im in entry["coeff_spec"]["terms"]}
            coeffs[(tuple(entry["I"]), tuple(entry["J"]))] = Coeff.from_poly(Polynomial(n, terms))
        return cls(n, data["p"], data["q"], data["side"], coeffs, background)


# ---------------------------------------------------------------------------
# wedge product
# ---------------------------------------------------------------------------


def wedge(a: TnForm, b: TnForm) -> TnForm:
    """Exterior product; dz blocks merge before dzbar blocks."""
    if a.side != b.side:
        raise ValueError("wedge requires forms on the same side")
    p, q = a.p + b.p, a.q + b.q
    if p > a.n or q > a.n:
        raise DegreeOverflow(f"wedge would produce bidegree ({p},{q}) in dimension {a.n}")
    out = {}
    for (Ia, Ja), ca in a.coeffs.items():
        for (Ib, Jb), cb in b.coeffs.items():
            if set(Ia) & set(Ib) or set(Ja) & set(Jb):
                continue
            # b's dz block crosses a's dzbar block
            cross = -1 if (len(Ib) * len(Ja)) % 2 else 1
            sign = cross * merge_sign(Ia, Ib) * merge_sign(Ja, Jb)
            key = (tuple(sorted(Ia + Ib)), tuple(sorted(Ja + Jb)))
            term = (ca * cb).scaled(sign)
            out[key] = out[key] + term if key in out else term
    return TnForm(a.n, p, q, a.side, out, a.background or b.background)


# ---------------------------------------------------------------------------
# dbar and del
# ---------------------------------------------------------------------------


def _coefficient_derivative(c: Coeff, p_idx: int, side, background):
    """d/dx^p on side M; the dual derivative via the inverse Hessian on side W."""
    if side == SIDE_M:
        return c.diff(p_idx)
    if background is None:
        raise ValueError("W-side differentiation needs a background potential")

    def value(x, c=c, p_idx=p_idx):
        frame = jet(background, x)
        return complex(frame.inverse_hessian[:, p_idx - 1] @ c.grad(x))

    return Coeff.from_callables(c.n, value)


def dbar(a: TnForm) -> TnForm:
    """The (0,1) part of d on invariant forms: prepend one dzbar factor."""
    out = TnForm.zero(a.n, a.p, a.q + 1, a.side, a.background) if a.q + 1 <= a.n else None
    if out is None:
        return TnForm.zero(a.n, a.p, a.q, a.side, a.background).scaled(0.0)
    coeffs = {}
    for (I, J), c in a.coeffs.items():
        for pi in range(1, a.n + 1):
            moved = _wedge_dzbar(pi, I, J)
            if moved is None:
                continue
            sign, I2, J2 = moved
            term = _coefficient_derivative(c, pi, a.side, a.background).scaled(0.5 * sign)
            key = (I2, J2)
            coeffs[key] = coeffs[key] + term if key in coeffs else term
    out.coeffs = coeffs
    return out


def dell(a: TnForm) -> TnForm:
    """The (1,0) part of d on invariant forms: prepend one dz factor."""
    if a.p + 1 > a.n:
        return TnForm.zero(a.n, a.p, a.q, a.side, a.background).scaled(0.0)
    coeffs = {}
    for (I, J), c in a.coeffs.items():
        for pi in range(1, a.n + 1):
            moved = _wedge_dz(pi, I, J)
            if moved is None:
                continue
            sign, I2, J2 = moved
            term = _coefficient_derivative(c, pi, a.side, a.background).scaled(0.5 * sign)
            key = (I2, J2)
            coeffs[key] = coeffs[key] + term if key in coeffs else term
    return TnForm(a.n, a.p + 1, a.q, a.side, coeffs, a.background)


# ---------------------------------------------------------------------------
# the two sl(2) triples
# ---------------------------------------------------------------------------


class OperatorTag(str, enum.Enum):
    L_A = "L_A"
    LAM_A = "Lam_A"
    H_A = "H_A"
    L_B = "L_B"
    LAM_B = "Lam_B"
    H_B = "H_B"


def apply_values(tag: OperatorTag, values: dict, frame: JetFrame, side=SIDE_M, n=None):
    """Apply one operator to pointwise monomial values at a jet.

    On side M the Lefschetz wedge matrix is the Hessian and the
    contraction matrix its inverse; on side W the two swap roles.
    Degree overflow or underflow annihilates (monomials drop out), it is
    not an error.
    """
    n = n or frame.n
    wedge_mat = frame.hessian if side == SIDE_M else frame.inverse_hessian
    contract_mat = frame.inverse_hessian if side == SIDE_M else frame.hessian
    out = {}

    def accumulate(key, val):
        if val != 0:
            out[key] = out.get(key, 0.0) + val

    for (I, J), v in values.items():
        if v == 0:
            continue
        if tag is OperatorTag.H_A:
            accumulate((I, J), (n - len(I) - len(J)) * v)
        elif tag is OperatorTag.H_B:
            accumulate((I, J), (len(I) - len(J)) * v)
        elif tag is OperatorTag.L_A:
            for j in range(1, n + 1):
                for k in range(1, n + 1):
                    w = wedge_mat[j - 1, k - 1]
                    if w == 0:
                        continue
                    m1 = _wedge_dzbar(k, I, J)
                    if m1 is None:
                        continue
                    m2 = _wedge_dz(j, m1[1], m1[2])
                    if m2 is None:
                        continue
                    accumulate((m2[1], m2[2]), w * m1[0] * m2[0] * v)
        elif tag is OperatorTag.LAM_A:
            # normalization fixed by [L_A, Lam_A] = H_A on every monomial
            for j in range(1, n + 1):
                for k in range(1, n + 1):
                    w = contract_mat[j - 1, k - 1]
                    if w == 0:
                        continue
                    m1 = _contract_dz(j, I, J)
                    if m1 is None:
                        continue
                    m2 = _contract_dzbar(k, m1[1], m1[2])
                    if m2 is None:
                        continue
                    accumulate((m2[1], m2[2]), -w * m1[0] * m2[0] * v)
        elif tag is OperatorTag.L_B:
            for j in range(1, n + 1):
                m1 = _contract_dz(j, I, J)
                if m1 is None:
                    continue
                m2 = _wedge_dzbar(j, m1[1], m1[2])
                if m2 is None:
                    continue
                accumulate((m2[1], m2[2]), m1[0] * m2[0] * v)
        elif tag is OperatorTag.LAM_B:
            for j in range(1, n + 1):
                m1 = _contract_dzbar(j, I, J)
                if m1 is None:
                    continue
                m2 = _wedge_dz(j, m1[1], m1[2])
                if m2 is None:
                    continue
                accumulate((m2[1], m2[2]), -m1[0] * m2[0] * v)
        else:  # pragma: no cover
            raise ValueError(f"unknown operator {tag}")
    return out


def _shifted_bidegree(tag, p, q):
    return {
        OperatorTag.L_A: (p + 1, q + 1),
        OperatorTag.LAM_A: (p - 1, q - 1),
        OperatorTag.H_A: (p, q),
        OperatorTag.L_B: (p - 1, q + 1),
        OperatorTag.LAM_B: (p + 1, q - 1),
        OperatorTag.H_B: (p, q),
    }[tag]


class AppliedForm(TnForm):
    """Lazy operator application: coefficients are computed per point."""

    def __init__(self, tag, base: TnForm, background):
        p, q = _shifted_bidegree(tag, base.p, base.q)
        p, q = max(p, 0), max(q, 0)
        super().__init__(base.n, min(p, base.n), min(q, base.n), base.side, {}, background)
        self._tag = tag
        self._base = base

    def value_at(self, x):
        frame = jet(self.background, x)
        return apply_values(self._tag, self._base.value_at(x), frame, self.side, self.n)


def apply_operator(tag: OperatorTag, a: TnForm, background) -> TnForm:
    """Operator application as a form, with the jet taken per point."""
    return AppliedForm(tag, a, background)


# ---------------------------------------------------------------------------
# inner products
# ---------------------------------------------------------------------------


def _pair_minor(mat, A, B):
    if not A:
        return 1.0
    sub = mat[np.ix_([a - 1 for a in A], [b - 1 for b in B])]
    return np.linalg.det(sub)


def pointwise_pairing(avals: dict, bvals: dict, frame: JetFrame, side=SIDE_M):
    """Hermitian pairing of two equal-bidegree forms at one jet.

    Each paired index contributes a factor 2 and one inverse-Hessian
    (side M) or Hessian (side W) entry; blocks pair through determinant
    minors.  Conjugate-linear in the second argument.
    """
    h = frame.inverse_hessian if side == SIDE_M else frame.hessian
    total = 0.0 + 0.0j
    for (I, J), av in avals.items():
        if av == 0:
            continue
        scale = 2.0 ** (len(I) + len(J))
        for (K, L), bv in bvals.items():
            if bv == 0:
                continue
            total += scale * av * np.conj(bv) * _pair_minor(h, I, K) * _pair_minor(h, J, L)
    return complex(total)


class QuadratureContext:
    """Tensor-product trapezoid quadrature bound to one background."""

    def __init__(self, domain, potential, resolution=None, covolume=None):
        self.domain = domain
        self.potential = potential
        self.covolume = domain.lattice_covolume if covolume is None else covolume
        res = resolution or domain.grid_resolution
        axes = domain.axis_coords(res)
        h = domain.spacing(res)
        weights_1d = []
        for a in range(domain.n):
            w = np.full(res, h[a])
            w[0] = w[-1] = h[a] / 2
            weights_1d.append(w)
        mesh = np.meshgrid(*axes, indexing="ij")
        self.points = np.stack(mesh, axis=-1).reshape(-1, domain.n)
        wmesh = np.meshgrid(*weights_1d, indexing="ij")
        self.weights = np.prod(np.stack(wmesh, axis=-1), axis=-1).ravel()
        self._jets = {}

    def jet_at(self, x):
        key = np.asarray(x).tobytes()
        if key not in self._jets:
            self._jets[key] = jet(self.potential, x)
        return self._jets[key]

    def integrate(self, fn):
        return sum(w * fn(x) for x, w in zip(self.points, self.weights))


def inner_product(a: TnForm, b: TnForm, quad: QuadratureContext) -> complex:
    """L^2 inner product: fiber volume times the weighted base quadrature.

    The fiber weight is det Hess (covolume-scaled) on side M and the
    dual-torus covolume on side W, which makes the product the honest
    total-space integral on either side.
    """
    if (a.p, a.q, a.side) != (b.p, b.q, b.side):
        raise ValueError("inner product needs equal bidegree and side")
    _warn_if_underresolved(a, quad)
    side = a.side
    cov = quad.covolume if side == SIDE_M else 1.0 / quad.covolume

    def integrand(x):
        frame = quad.jet_at(x)
        weight = frame.det_hessian if side == SIDE_M else 1.0
        return weight * pointwise_pairing(a.value_at(x), b.value_at(x), frame, side)

    return complex(cov * quad.integrate(integrand))


def _warn_if_underresolved(a: TnForm, quad: QuadratureContext, stride=7):
    """Cheap heuristic: large coefficient jumps between nearby quadrature nodes."""
    pts = quad.points[::stride]
    if len(pts) < 2 or not a.coeffs:
        return
    vals = np.array([max((abs(v) for v in a.value_at(x).values()), default=0.0) for x in pts[:32]])
    if vals.size >= 2 and vals.max() > 0:
        jumps = np.abs(np.diff(vals)).max() / vals.max()
        if jumps > 0.9:
            warnings.warn(
                "form coefficients vary quickly relative to the quadrature grid",
                QuadratureUnderResolvedWarning,
                stacklevel=3,
            )


# ---------------------------------------------------------------------------
# moduli vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModuliVector:
    """A deformation direction: a scalar with three derivative orders."""

    potential: object  # ScalarField protocol: value/gradient/hessian/third

    @property
    def n(self):
        return self.potential.n

    def hessian(self, x):
        return self.potential.hessian(x)

    def third(self, x):
        return self.potential.third(x)

    def induced_form(self, side=SIDE_M, background=None) -> TnForm:
        """The (1,1)-form i * xi_jk dz^j dzbar^k."""
        n = self.n
        coeffs = {}
        for j in range(1, n + 1):
            for k in range(1, n + 1):
                def value(x, j=j, k=k):
                    return 1j * self.potential.hessian(x)[j - 1, k - 1]

                def grad(x, j=j, k=k):
                    return 1j * self.potential.third(x)[j - 1, k - 1, :]

                key = ((j,), (k,))
                c = Coeff.from_callables(n, value, grad)
                coeffs[key] = coeffs[key] + c if key in coeffs else c
        return TnForm(n, 1, 1, side, coeffs, background)


def vhs_harmonic_residual(xi: ModuliVector, side, points) -> np.ndarray:
    """Per-index sup of the third-derivative trace that obstructs harmonicity.

    Side M contracts the last two indices (sum_k xi_jkk per j); side W the
    first two (sum_j xi_jjk per k).
    """
    n = xi.n
    worst = np.zeros(n)
    for x in points:
        t = xi.third(x)
        if side == SIDE_M:
            vals = np.abs(np.einsum("jkk->j", t))
        else:
            vals = np.abs(np.einsum("jjk->k", t))
        worst = np.maximum(worst, vals)
    return worst


# ---------------------------------------------------------------------------
# convenience constructors
# ---------------------------------------------------------------------------


def full_basis(n, side=SIDE_M):
    """All 4^n monomials dz^I dzbar^J as (I, J) keys."""
    singles = list(range(1, n + 1))
    idx = []
    for pi in range(n + 1):
        idx.extend(itertools.combinations(singles, pi))
    return [(I, J) for I in idx for J in idx]


def kahler_form(n, background, side=SIDE_M) -> TnForm:
    """(i/2) sum phi_jk dz^j dzbar^k (inverse Hessian entries on side W)."""
    coeffs = {}
    for j in range(1, n + 1):
        for k in range(1, n + 1):
            def value(x, j=j, k=k):
                f = jet(background, x)
                mat = f.hessian if side == SIDE_M else f.inverse_hessian
                return 0.5j * mat[j - 1, k - 1]

            def grad(x, j=j, k=k):
                f = jet(background, x)
                if side == SIDE_M:
                    return 0.5j * f.third[j - 1, k - 1, :]
                dinv = -np.einsum("ja,abl,bk->jkl", f.inverse_hessian, f.third, f.inverse_hessian)
                return 0.5j * dinv[j - 1, k - 1, :]

            coeffs[((j,), (k,))] = Coeff.from_callables(n, value, grad)
    return TnForm(n, 1, 1, side, coeffs, background)
