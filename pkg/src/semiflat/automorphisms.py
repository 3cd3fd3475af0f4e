"""Induced maps on the total spaces: the tangent lift of a base
diffeomorphism and its gradient-conjugated cotangent lift, the tensor
obstructions that detect affineness, and the flip that exchanges the
two flavors across the mirror.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NewtonDivergence, NotFiberLinear, NotInvertible, SingularJacobian
from .polynomials import Polynomial

_AFFINE_TOL = 1e-12


class PolyMap:
    """A smooth map of the base with polynomial components."""

    def __init__(self, components):
        self.components = list(components)
        self.n = len(self.components)
        n = self.n
        self._jac = [[p.diff(k + 1) for k in range(n)] for p in self.components]
        self._sec = [
            [[self._jac[a][j].diff(l + 1) for l in range(n)] for j in range(n)]
            for a in range(n)
        ]

    @classmethod
    def identity(cls, n):
        return cls([Polynomial.variable(n, j) for j in range(1, n + 1)])

    @classmethod
    def affine(cls, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
        comps = []
        for a in range(n):
            p = Polynomial.constant(n, b[a])
            for k in range(n):
                p = p + Polynomial.variable(n, k + 1) * A[a, k]
            comps.append(p)
        return cls(comps)

    def __call__(self, x):
        return np.array([p(x) for p in self.components])

    def jacobian(self, x):
        n = self.n
        return np.array([[self._jac[a][k](x) for k in range(n)] for a in range(n)])

    def second(self, x):
        """f^k_{jl} indexed [k, j, l]."""
        n = self.n
        return np.array(
            [[[self._sec[a][j][l](x) for l in range(n)] for j in range(n)] for a in range(n)]
        )


@dataclass
class BaseMap:
    """A base diffeomorphism with derivative evaluators and affine flag."""

    map: object  # PolyMap protocol: __call__/jacobian/second
    domain: object = None
    affine: bool = None

    def __post_init__(self):
        if self.affine is None:
            self.affine = self._detect_affine()

    def _detect_affine(self, samples=None):
        if self.domain is not None:
            rng = np.random.default_rng(7)
            pts = self.domain.sample_interior(rng, 16)
        else:
            pts = [np.zeros(self.map.n)]
        return max(np.abs(self.map.second(x)).max() for x in pts) < _AFFINE_TOL

    @property
    def n(self):
        return self.map.n

    def __call__(self, x):
        return self.map(np.asarray(x, dtype=float))

    def jacobian(self, x):
        J = self.map.jacobian(np.asarray(x, dtype=float))
        if abs(np.linalg.det(J)) < 1e-14:
            raise SingularJacobian(f"Jacobian singular at {x}")
        return J

    def second(self, x):
        return self.map.second(np.asarray(x, dtype=float))

    def inverse(self, target, start=None, tol=1e-13, max_iter=80):
        """Solve f(x) = target by damped Newton."""
        x = np.array(start if start is not None else target, dtype=float)
        res = self(x) - target
        norm = np.linalg.norm(res)
        for _ in range(max_iter):
            if norm <= tol:
                return x
            step = np.linalg.solve(self.jacobian(x), res)
            s = 1.0
            while s > 1e-12:
                xt = x - s * step
                rt = self(xt) - target
                nt = np.linalg.norm(rt)
                if nt < norm:
                    x, res, norm = xt, rt, nt
                    break
                s *= 0.5
            else:
                raise NewtonDivergence("base-map inversion stalled")
        if norm <= 1e-9:
            return x
        raise NotInvertible("base-map inversion did not converge")


class ConjugateMap:
    """grad(phi) o f^{-1} o grad(psi): the dual-side image of a base map.

    Derivatives up to second order are assembled analytically from the
    jets of the potential pair and the base map.
    """

    def __init__(self, base: BaseMap, potential, dual):
        self.base = base
        self.potential = potential
        self.dual = dual
        self.n = base.n
        self.domain = dual.domain

    def _pull(self, p):
        x = self.dual.inverse_gradient(p)          # grad psi(p)
        xt = self.base.inverse(x, start=x)         # f^{-1}
        return x, xt

    def __call__(self, p):
        _x, xt = self._pull(np.asarray(p, dtype=float))
        return np.asarray(self.potential.gradient(xt))

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        x, xt = self._pull(p)
        A = np.linalg.inv(self.base.jacobian(xt))
        psi2 = np.linalg.inv(self.potential.hessian(x))
        return self.potential.hessian(xt) @ A @ psi2

    def second(self, p):
        """fhat_k'' indexed [k, j, l]; exact chain rule through the jets."""
        p = np.asarray(p, dtype=float)
        x, xt = self._pull(p)
        A = np.linalg.inv(self.base.jacobian(xt))
        psi2 = np.linalg.inv(self.potential.hessian(x))
        psi3 = -np.einsum("ja,kb,lc,abc->jkl", psi2, psi2, psi2, self.potential.third(x))
        dxt = A @ psi2                              # d xt / d p
        phi3 = self.potential.third(xt)
        f2 = self.base.second(xt)
        dA = -np.einsum("ms,sbr,rl,bq->mql", A, f2, dxt, A)  # d A_{mq} / d p_l
        term1 = np.einsum("kmr,rl,mj->kjl", phi3, dxt, dxt)
        inner = np.einsum("mql,qj->mjl", dA, psi2) + np.einsum("ms,sjl->mjl", A, psi3)
        term2 = np.einsum("km,mjl->kjl", self.potential.hessian(xt), inner)
        return term1 + term2

    def inverse_evaluate(self, q):
        """The inverse composition grad(phi) o f o grad(psi), in closed form."""
        x = self.dual.inverse_gradient(np.asarray(q, dtype=float))
        return np.asarray(self.potential.gradient(self.base(x)))


@dataclass
class InducedMap:
    """A fiberwise-linear automorphism of the total space."""

    flavor: str          # "A" or "B"
    base: object         # BaseMap or ConjugateMap
    potential: object = None
    dual: object = None

    def fiber_matrix(self, x):
        if self.flavor == "B":
            return np.asarray(self.base.jacobian(x))
        if self.potential is None:
            raise ValueError("A-flavor maps need the potential pair")
        H_here = np.asarray(self.potential.hessian(x))
        H_there = np.asarray(self.potential.hessian(self.base(x)))
        J = np.asarray(self.base.jacobian(x))
        return np.linalg.inv(H_there) @ np.linalg.inv(J).T @ H_here

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.asarray(self.base(x)), self.fiber_matrix(x) @ y

    def is_fiber_linear(self):
        return True  # by construction; kept for the error contract


def induce_b(f: BaseMap) -> InducedMap:
    """(x, y) -> (f(x), Df(x) y): the tangent lift."""
    return InducedMap("B", f)


def induce_a(f: BaseMap, potential, dual) -> InducedMap:
    """The cotangent lift through the gradient coordinates.

    Pulling back one-forms under the conjugated inverse gives the fiber
    action Hess(f(x))^{-1} Df(x)^{-T} Hess(x); the base still moves by f.
    """
    return InducedMap("A", f, potential, dual)


def dbar_b_residual(f: BaseMap, x, y, t=1.0):
    """Antiholomorphic derivative of the tangent lift at scale t.

    Returns the matrix t (i/2) sum_j f^k_{jl} y^j; zero exactly when f
    is affine.
    """
    sec = f.second(np.asarray(x, dtype=float))
    return t * 0.5j * np.einsum("kjl,j->kl", sec, np.asarray(y, dtype=float))


def dbar_b_residual_fd(f: BaseMap, x, y, t=1.0, h=1e-6):
    """The same derivative by centered differences of the lift evaluator."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = f.n

    def lift(xx, yy):
        # the lift in the scaled holomorphic chart Re z = x / t
        return f(xx) / t + 1j * (f.jacobian(xx) @ yy)

    out = np.zeros((n, n), dtype=complex)
    for l in range(n):
        ex = np.zeros(n)
        ex[l] = h
        dx = (lift(x + ex, y) - lift(x - ex, y)) / (2 * h)
        dy = (lift(x, y + ex) - lift(x, y - ex)) / (2 * h)
        out[:, l] = 0.5 * (t * dx + 1j * dy)
    return out


def varpi_residual(f: BaseMap, potential, dual, x, y):
    """The symmetric two-tensor obstructing preservation of the
    mixed pairing: sum_k y^k fhat_k'' at the dual image point."""
    conj = ConjugateMap(f, potential, dual)
    p = np.asarray(potential.gradient(np.asarray(x, dtype=float)))
    sec = conj.second(p)
    return np.einsum("k,kjl->jl", np.asarray(y, dtype=float), sec)


def varpi_residual_fd(f: BaseMap, potential, dual, x, y, h=1e-5):
    """Finite-difference pullback of the mixed pairing minus itself."""
    conj = ConjugateMap(f, potential, dual)
    p = np.asarray(potential.gradient(np.asarray(x, dtype=float)))
    n = f.n
    sec = np.zeros((n, n, n))
    for l in range(n):
        ep = np.zeros(n)
        ep[l] = h
        sec[:, :, l] = (conj.jacobian(p + ep) - conj.jacobian(p - ep)) / (2 * h)
    return np.einsum("k,kjl->jl", np.asarray(y, dtype=float), sec)


def mirror_flip(F: InducedMap, potential, dual) -> InducedMap:
    """Exchange flavors across the mirror: the lifted map of the
    conjugated base, on the dual geometry.  Two flips reproduce F."""
    if not F.is_fiber_linear():
        raise NotFiberLinear("mirror flip needs a fiberwise-linear map")
    if isinstance(F.base, ConjugateMap):
        new_base = _reconjugate(F.base)
        new_potential, new_dual = F.base.potential, F.base.dual
    else:
        new_base = ConjugateMap(F.base, potential, dual)
        new_potential, new_dual = dual, potential
    flavor = "A" if F.flavor == "B" else "B"
    if flavor == "A":
        return InducedMap("A", new_base, new_potential, new_dual)
    return InducedMap("B", new_base)


def _reconjugate(conj: ConjugateMap) -> BaseMap:
    """Undo a conjugation: the double conjugate is the original base map."""
    return conj.base


def metric_pullback_residual(F: InducedMap, potential, x, y, h=1e-6) -> float:
    """Finite-difference pullback of the product metric minus itself."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)

    def metric_at(xx):
        H = np.asarray(potential.hessian(xx))
        G = np.zeros((2 * n, 2 * n))
        G[:n, :n] = H
        G[n:, n:] = H
        return G

    def ev(pt):
        bx, by = F.evaluate(pt[:n], pt[n:])
        return np.concatenate([bx, by])

    pt = np.concatenate([x, y])
    Jac = np.zeros((2 * n, 2 * n))
    for a in range(2 * n):
        e = np.zeros(2 * n)
        e[a] = h
        Jac[:, a] = (ev(pt + e) - ev(pt - e)) / (2 * h)
    image = F.evaluate(x, y)[0]
    G_img = metric_at(image)
    G_here = metric_at(x)
    return float(np.abs(Jac.T @ G_img @ Jac - G_here).max())


def symplectic_pullback_residual(F: InducedMap, potential, x, y, h=1e-6) -> float:
    """Finite-difference pullback of the Kahler form minus itself."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)

    def omega_at(xx):
        H = np.asarray(potential.hessian(xx))
        Om = np.zeros((2 * n, 2 * n))
        Om[:n, n:] = H
        Om[n:, :n] = -H
        return Om

    def ev(pt):
        bx, by = F.evaluate(pt[:n], pt[n:])
        return np.concatenate([bx, by])

    pt = np.concatenate([x, y])
    Jac = np.zeros((2 * n, 2 * n))
    for a in range(2 * n):
        e = np.zeros(2 * n)
        e[a] = h
        Jac[:, a] = (ev(pt + e) - ev(pt - e)) / (2 * h)
    image = F.evaluate(x, y)[0]
    return float(np.abs(Jac.T @ omega_at(image) @ Jac - omega_at(x)).max())
