"""Small multivariate polynomial arithmetic.

Polynomials are the workhorse for analytic potentials and form
coefficients: they evaluate at real or complex points, and they are
closed under differentiation, so derivative jets are exact.
"""

from __future__ import annotations

import numpy as np

_TOL = 0.0  # exact coefficient arithmetic; terms are dropped only when exactly zero


class Polynomial:
    """A polynomial in ``n`` variables stored as {exponent tuple: coefficient}."""

    __slots__ = ("n", "terms")

    def __init__(self, n, terms=None):
        self.n = int(n)
        clean = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.n:
                raise ValueError(f"exponent tuple {exps} has wrong length for n={self.n}")
            if c != 0:
                clean[exps] = clean.get(exps, 0) + c
        self.terms = {e: c for e, c in clean.items() if c != 0}

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, n):
        return cls(n, {})

    @classmethod
    def constant(cls, n, c):
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n, j):
        """The coordinate function x^j (1-based index)."""
        e = [0] * n
        e[j - 1] = 1
        return cls(n, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, n, exps, c=1.0):
        return cls(n, {tuple(exps): c})

    # -- algebra -----------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            return self + Polynomial.constant(self.n, other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0) + c
        return Polynomial(self.n, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, Polynomial) else Polynomial.constant(self.n, -other))

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.n, {e: c * other for e, c in self.terms.items()})
        terms = {}
        for ea, ca in self.terms.items():
            for eb, cb in other.terms.items():
                e = tuple(a + b for a, b in zip(ea, eb))
                terms[e] = terms.get(e, 0) + ca * cb
        return Polynomial(self.n, terms)

    __rmul__ = __mul__

    def __pow__(self, k):
        out = Polynomial.constant(self.n, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    # -- evaluation and calculus -------------------------------------------

    def __call__(self, x):
        x = np.asarray(x)
        total = 0
        for exps, c in self.terms.items():
            term = c
            for xi, e in zip(x, exps):
                if e:
                    term = term * xi**e
            total = total + term
        return total

    def diff(self, j):
        """Partial derivative with respect to x^j (1-based)."""
        terms = {}
        for exps, c in self.terms.items():
            e = exps[j - 1]
            if e:
                new = list(exps)
                new[j - 1] = e - 1
                key = tuple(new)
                terms[key] = terms.get(key, 0) + c * e
        return Polynomial(self.n, terms)

    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def is_constant(self):
        return all(sum(e) == 0 for e in self.terms)

    def __repr__(self):
        return f"Polynomial(n={self.n}, terms={self.terms!r})"
