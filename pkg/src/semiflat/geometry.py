"""Domains, potentials, derivative jets, Legendre duality, structure tensors.

A strictly convex potential on a box domain is the single source of all
geometry here.  Every operator downstream consumes ``JetFrame`` objects:
the value, gradient, Hessian, inverse Hessian and third derivatives of
the potential at one point.  All objects are immutable after
construction and safe to evaluate concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NewtonDivergence, NonConvex, NonConvexAt, OutOfDomain
from .polynomials import Polynomial

_INV_TOL = 1e-12


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """A box in R^n carrying grid, fiber torus and lattice data.

    Base coordinates are x^j; fiber coordinates y^j live on a torus of
    covolume ``lattice_covolume``; dual fiber coordinates are y_j.
    """

    n: int
    bounds: tuple  # ((lo, hi), ...) per axis
    grid_resolution: int = 33
    lattice_covolume: float = 1.0
    fiber_resolution: int = 16

    def __post_init__(self):
        if not (1 <= self.n <= 4):
            raise ValueError("base dimension must be between 1 and 4")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) != self.n:
            raise ValueError("bounds must have one interval per axis")
        for lo, hi in bounds:
            if not hi > lo:
                raise ValueError("each axis interval must have positive length")
        if self.grid_resolution < 9 or self.grid_resolution % 2 == 0:
            raise ValueError("grid_resolution must be an odd integer >= 9")
        if self.lattice_covolume <= 0:
            raise ValueError("lattice_covolume must be positive")
        if self.fiber_resolution < 8:
            raise ValueError("fiber_resolution must be >= 8")
        object.__setattr__(self, "bounds", bounds)

    # -- geometry helpers ---------------------------------------------------

    @property
    def lengths(self):
        return np.array([hi - lo for lo, hi in self.bounds])

    @property
    def center(self):
        return np.array([(lo + hi) / 2.0 for lo, hi in self.bounds])

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def spacing(self, resolution=None):
        res = resolution or self.grid_resolution
        return self.lengths / (res - 1)

    def axis_coords(self, resolution=None):
        res = resolution or self.grid_resolution
        return [np.linspace(lo, hi, res) for lo, hi in self.bounds]

    def contains(self, x, margin=0.0):
        x = np.asarray(x, dtype=float)
        for xi, (lo, hi) in zip(x, self.bounds):
            pad = margin * (hi - lo) - 1e-12 * (hi - lo)
            if not (lo + pad <= xi <= hi - pad):
                return False
        return True

    def sample_interior(self, rng, count, margin=0.15):
        """Uniform interior samples, kept ``margin`` away from each face."""
        lo = np.array([b[0] for b in self.bounds]) + margin * self.lengths
        hi = np.array([b[1] for b in self.bounds]) - margin * self.lengths
        return lo + (hi - lo) * rng.random((count, self.n))

    def with_resolution(self, resolution):
        return Domain(self.n, self.bounds, resolution, self.lattice_covolume, self.fiber_resolution)


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------


class QuadraticPotential:
    """phi(x) = x.A.x/2 + b.x + c with symmetric A."""

    kind = "quadratic"
    supports_complex = True

    def __init__(self, A, b=None, c=0.0, domain=None, target_constant=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.A = 0.5 * (A + A.T)
        self.n = A.shape[0]
        self.b = np.zeros(self.n) if b is None else np.asarray(b, dtype=float)
        self.c = float(c)
        self.domain = domain
        self.target_constant = float(np.linalg.det(self.A)) if target_constant is None else target_constant

    def value(self, x):
        x = np.asarray(x)
        return 0.5 * x @ self.A @ x + self.b @ x + self.c

    def gradient(self, x):
        return self.A @ np.asarray(x) + self.b

    def hessian(self, x):
        return self.A.copy()

    def third(self, x):
        return np.zeros((self.n, self.n, self.n))


class PolynomialPotential:
    """Potential backed by a multivariate polynomial; jets are exact."""

    kind = "polynomial"
    supports_complex = True

    def __init__(self, poly: Polynomial, domain=None, target_constant=None):
        self.poly = poly
        self.n = poly.n
        self.domain = domain
        self.target_constant = target_constant
        n = self.n
        self._g = [poly.diff(j) for j in range(1, n + 1)]
        self._h = [[self._g[j].diff(k + 1) for k in range(n)] for j in range(n)]
        self._t = [[[self._h[j][k].diff(l + 1) for l in range(n)] for k in range(n)] for j in range(n)]

    def value(self, x):
        return self.poly(x)

    def gradient(self, x):
        return np.array([g(x) for g in self._g])

    def hessian(self, x):
        return np.array([[self._h[j][k](x) for k in range(self.n)] for j in range(self.n)])

    def third(self, x):
        n = self.n
        return np.array([[[self._t[j][k][l](x) for l in range(n)] for k in range(n)] for j in range(n)])


class GridPotential:
    """Potential sampled on the domain grid.

    Derivative fields are assembled once with centered differences
    (one-sided, second order, on the two-cell boundary collar) and then
    interpolated multilinearly between nodes.
    """

    kind = "grid"
    supports_complex = False

    def __init__(self, domain: Domain, values, target_constant=None):
        values = np.asarray(values, dtype=float)
        expected = (domain.grid_resolution,) * domain.n
        if values.shape != expected:
            raise ValueError(f"grid values must have shape {expected}, got {values.shape}")
        self.domain = domain
        self.n = domain.n
        self.values = values
        self.target_constant = target_constant
        self._h = domain.spacing()
        self._grad_field = np.stack([self._axis_derivative(values, j) for j in range(self.n)], axis=-1)
        hess = np.empty(values.shape + (self.n, self.n))
        for j in range(self.n):
            # compact second difference on the diagonal, matching the solver stencil
            hess[..., j, j] = self._axis_second_derivative(values, j)
            for k in range(j + 1, self.n):
                d = self._axis_derivative(self._grad_field[..., j], k)
                hess[..., j, k] = d
                hess[..., k, j] = d
        self._hess_field = hess
        third = np.empty(values.shape + (self.n, self.n, self.n))
        for j in range(self.n):
            for k in range(self.n):
                for l in range(self.n):
                    third[..., j, k, l] = self._axis_derivative(hess[..., j, k], l)
        # symmetrize: one-sided collar stencils break exact index symmetry at O(h^2)
        self._third_field = (third + third.transpose(tuple(range(self.n)) + (self.n, self.n + 2, self.n + 1))) / 2.0

    def _axis_derivative(self, f, axis):
        h = self._h[axis]
        out = np.empty_like(f)
        fwd = [slice(None)] * f.ndim
        ctr = [slice(None)] * f.ndim
        bwd = [slice(None)] * f.ndim
        fwd[axis], ctr[axis], bwd[axis] = slice(2, None), slice(1, -1), slice(None, -2)
        out[tuple(ctr)] = (f[tuple(fwd)] - f[tuple(bwd)]) / (2 * h)
        # one-sided second-order stencils at the faces
        first = [slice(None)] * f.ndim
        first[axis] = 0
        s1, s2, s3 = list(first), list(first), list(first)
        s2[axis], s3[axis] = 1, 2
        out[tuple(first)] = (-3 * f[tuple(s1)] + 4 * f[tuple(s2)] - f[tuple(s3)]) / (2 * h)
        last = [slice(None)] * f.ndim
        last[axis] = -1
        e1, e2, e3 = list(last), list(last), list(last)
        e2[axis], e3[axis] = -2, -3
        out[tuple(last)] = (3 * f[tuple(e1)] - 4 * f[tuple(e2)] + f[tuple(e3)]) / (2 * h)
        return out

    def _axis_second_derivative(self, f, axis):
        h = self._h[axis]
        out = np.empty_like(f)
        fwd = [slice(None)] * f.ndim
        ctr = [slice(None)] * f.ndim
        bwd = [slice(None)] * f.ndim
        fwd[axis], ctr[axis], bwd[axis] = slice(2, None), slice(1, -1), slice(None, -2)
        out[tuple(ctr)] = (f[tuple(fwd)] - 2 * f[tuple(ctr)] + f[tuple(bwd)]) / h**2
        first = [slice(None)] * f.ndim
        first[axis] = 0
        s = [list(first) for _ in range(4)]
        for i, sl in enumerate(s):
            sl[axis] = i
        out[tuple(first)] = (
            2 * f[tuple(s[0])] - 5 * f[tuple(s[1])] + 4 * f[tuple(s[2])] - f[tuple(s[3])]
        ) / h**2
        last = [slice(None)] * f.ndim
        last[axis] = -1
        e = [list(last) for _ in range(4)]
        for i, sl in enumerate(e):
            sl[axis] = -1 - i
        out[tuple(last)] = (
            2 * f[tuple(e[0])] - 5 * f[tuple(e[1])] + 4 * f[tuple(e[2])] - f[tuple(e[3])]
        ) / h**2
        return out

    # -- interpolation -------------------------------------------------------

    def _cell(self, x):
        x = np.asarray(x, dtype=float)
        res = self.domain.grid_resolution
        idx = np.empty(self.n, dtype=int)
        frac = np.empty(self.n)
        for a, (lo, _hi) in enumerate(self.domain.bounds):
            t = (x[a] - lo) / self._h[a]
            i = int(np.floor(t))
            i = min(max(i, 0), res - 2)
            idx[a] = i
            frac[a] = t - i
        return idx, frac

    def _interp(self, fld, x):
        idx, frac = self._cell(x)
        total = 0.0
        for corner in range(2**self.n):
            w = 1.0
            pos = []
            for a in range(self.n):
                bit = (corner >> a) & 1
                w *= frac[a] if bit else (1.0 - frac[a])
                pos.append(idx[a] + bit)
            if w:
                total = total + w * fld[tuple(pos)]
        return total

    def value(self, x):
        return float(self._interp(self.values, x))

    def gradient(self, x):
        return np.asarray(self._interp(self._grad_field, x))

    def hessian(self, x):
        return np.asarray(self._interp(self._hess_field, x))

    def third(self, x):
        return np.asarray(self._interp(self._third_field, x))

    # -- CSV exchange format --------------------------------------------------

    def save_csv(self, path):
        save_grid_csv(path, self.domain, self.values)

    @classmethod
    def load_csv(cls, path, lattice_covolume=1.0, fiber_resolution=16):
        domain, values = load_grid_csv(path, lattice_covolume, fiber_resolution)
        return cls(domain, values)


def save_grid_csv(path, domain: Domain, values):
    """Header row ``n,resolution,bounds...`` then row-major values, 17 digits."""
    header = [str(domain.n), str(domain.grid_resolution)]
    for lo, hi in domain.bounds:
        header += ["%.17g" % lo, "%.17g" % hi]
    lines = [",".join(header)]
    lines += ["%.17g" % v for v in np.asarray(values).ravel(order="C")]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_grid_csv(path, lattice_covolume=1.0, fiber_resolution=16):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split(",")
    n, res = int(head[0]), int(head[1])
    bounds = tuple((float(head[2 + 2 * a]), float(head[3 + 2 * a])) for a in range(n))
    domain = Domain(n, bounds, res, lattice_covolume, fiber_resolution)
    values = np.array([float(v) for v in lines[1:]]).reshape((res,) * n)
    return domain, values


# ---------------------------------------------------------------------------
# Jets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JetFrame:
    """Derivative data of the potential at one base point.

    The gradient doubles as the Legendre image x_j of the point.
    """

    point: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    inverse_hessian: np.ndarray
    third: np.ndarray
    det_hessian: float

    @property
    def n(self):
        return self.point.shape[0]


def _check_domain(potential, x):
    dom = getattr(potential, "domain", None)
    if dom is None:
        return
    x = np.asarray(x, dtype=float)
    if potential.kind == "grid":
        # jets of grid potentials need the two-cell collar for their stencils
        h = dom.spacing()
        for xi, (lo, hi), hi_a in zip(x, dom.bounds, h):
            if not (lo + 2 * hi_a <= xi <= hi - 2 * hi_a):
                raise OutOfDomain(f"point {x} is within two cells of the boundary")
    elif not dom.contains(x):
        raise OutOfDomain(f"point {x} is outside the domain")


def jet(potential, x) -> JetFrame:
    """Evaluate the full derivative jet of ``potential`` at an interior point."""
    x = np.asarray(x, dtype=float)
    _check_domain(potential, x)
    hess = potential.hessian(x)
    try:
        np.linalg.cholesky(hess)
    except np.linalg.LinAlgError:
        raise NonConvexAt(x) from None
    inv = np.linalg.inv(hess)
    resid = np.abs(hess @ inv - np.eye(len(x))).max()
    if resid > 1e-8:
        raise NonConvexAt(x, f"Hessian inversion residual {resid:.2e} at {x}")
    return JetFrame(
        point=x,
        value=float(potential.value(x)),
        gradient=np.asarray(potential.gradient(x), dtype=float),
        hessian=hess,
        inverse_hessian=inv,
        third=np.asarray(potential.third(x), dtype=float),
        det_hessian=float(np.linalg.det(hess)),
    )


def ma_residual(frame: JetFrame, C: float) -> float:
    """det Hess - C at the jet's point."""
    return frame.det_hessian - C


# ---------------------------------------------------------------------------
# Legendre duality
# ---------------------------------------------------------------------------


class LegendreDual:
    """The convex conjugate psi on the gradient-image domain.

    psi(p) = <p, x(p)> - phi(x(p)) with x(p) inverting the gradient map by
    damped Newton; Hess psi is the inverse Hessian of phi at x(p) and the
    third derivatives follow by differentiating that inverse.  The object
    satisfies the same evaluator protocol as the analytic potentials, so
    jets on the dual side come from the ordinary ``jet``.
    """

    kind = "legendre"
    supports_complex = False

    def __init__(self, potential, domain: Domain, newton_tol=1e-13, max_iter=80):
        self.base = potential
        self.base_domain = domain
        self.newton_tol = newton_tol
        self.max_iter = max_iter
        self.n = domain.n
        self._start = domain.center
        grid = np.stack(np.meshgrid(*domain.axis_coords(9), indexing="ij"), axis=-1).reshape(-1, domain.n)
        try:
            grads = np.array([potential.gradient(x) for x in grid])
        except Exception as exc:  # pragma: no cover - defensive
            raise NonConvex(str(exc)) from exc
        lo, hi = grads.min(axis=0), grads.max(axis=0)
        self.domain = Domain(
            domain.n,
            tuple((float(a), float(b)) for a, b in zip(lo, hi)),
            domain.grid_resolution,
            domain.lattice_covolume,
            domain.fiber_resolution,
        )
        self.target_constant = None
        if getattr(potential, "target_constant", None):
            self.target_constant = 1.0 / potential.target_constant

    # -- gradient-map inversion ------------------------------------------------

    def inverse_gradient(self, p):
        """Solve grad phi(x) = p by damped Newton from the domain center."""
        p = np.asarray(p, dtype=float)
        x = self._start.copy()
        res = self.base.gradient(x) - p
        norm = np.linalg.norm(res)
        for _ in range(self.max_iter):
            if norm <= self.newton_tol:
                return x
            step = np.linalg.solve(self.base.hessian(x), res)
            s = 1.0
            while s > 1e-14:
                x_try = x - s * step
                if self.base_domain.contains(x_try, margin=-1e-12):
                    res_try = self.base.gradient(x_try) - p
                    norm_try = np.linalg.norm(res_try)
                    if norm_try < norm:
                        x, res, norm = x_try, res_try, norm_try
                        break
                s *= 0.5
            else:
                raise NewtonDivergence(f"gradient inversion stalled at p={p}")
        if norm <= 1e-9:
            return x
        raise NewtonDivergence(f"gradient inversion did not converge at p={p}")

    # -- potential protocol on the dual side ------------------------------------

    def value(self, p):
        x = self.inverse_gradient(p)
        return float(np.dot(p, x) - self.base.value(x))

    def gradient(self, p):
        return self.inverse_gradient(p)

    def hessian(self, p):
        x = self.inverse_gradient(p)
        return np.linalg.inv(self.base.hessian(x))

    def third(self, p):
        x = self.inverse_gradient(p)
        inv = np.linalg.inv(self.base.hessian(x))
        t = self.base.third(x)
        # d/dp_l of (Hess phi)^{-1}_{jk}: minus inv.third.inv, last leg raised
        return -np.einsum("ja,kb,lc,abc->jkl", inv, inv, inv, t)


def legendre_dual(potential, domain: Domain, sample_resolution=7) -> LegendreDual:
    """Construct the dual potential, checking convexity on a sample grid."""
    pts = np.stack(
        np.meshgrid(*domain.axis_coords(sample_resolution), indexing="ij"), axis=-1
    ).reshape(-1, domain.n)
    for x in pts:
        hess = potential.hessian(x)
        if np.linalg.eigvalsh(hess).min() <= 0:
            raise NonConvex(f"Hessian not positive definite at sampled point {x}")
    return LegendreDual(potential, domain)


# ---------------------------------------------------------------------------
# Structure tensors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StructureTensors:
    """Metric/symplectic/holomorphic-volume data on both sides at one jet."""

    g_M: np.ndarray
    omega_M: np.ndarray
    Omega_M_coeff: complex
    g_W: np.ndarray
    omega_W: np.ndarray
    Omega_W_coeff: complex
    fiber_volume: float


def structures(frame: JetFrame, lattice_covolume=1.0) -> StructureTensors:
    """Assemble g_M, omega_M, g_W, omega_W and the fiber volume at a jet.

    Ordering conventions: on M the coordinates are (x^1..x^n, y^1..y^n);
    on W they are (x^1..x^n, y_1..y_n) and omega_W has the constant
    canonical matrix there.
    """
    n = frame.n
    H = frame.hessian
    Hinv = frame.inverse_hessian
    g_m = np.zeros((2 * n, 2 * n))
    g_m[:n, :n] = H
    g_m[n:, n:] = H
    om_m = np.zeros((2 * n, 2 * n))
    om_m[:n, n:] = H
    om_m[n:, :n] = -H
    g_w = np.zeros((2 * n, 2 * n))
    g_w[:n, :n] = H
    g_w[n:, n:] = Hinv
    om_w = np.zeros((2 * n, 2 * n))
    om_w[:n, n:] = np.eye(n)
    om_w[n:, :n] = -np.eye(n)
    vol = float(np.sqrt(frame.det_hessian) * lattice_covolume)
    return StructureTensors(g_m, om_m, 1.0 + 0.0j, g_w, om_w, 1.0 + 0.0j, vol)


def shrink_volume_check(potential, t: float, x) -> float:
    """det of the fiber-shrunk metric minus det at t=1; zero for all t > 0."""
    if t <= 0:
        raise ValueError("t must be positive")
    H = potential.hessian(np.asarray(x, dtype=float))
    n = H.shape[0]

    def gdet(scale):
        g = np.zeros((2 * n, 2 * n))
        g[:n, :n] = H / scale
        g[n:, n:] = H * scale
        return np.linalg.det(g)

    return float(gdet(t) - gdet(1.0))


# ---------------------------------------------------------------------------
# Complexified potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComplexifiedPotential:
    """A pair (phi, eta) with target det(phi_jk + i eta_jk) = C."""

    phi: object
    eta: object
    C: complex

    @property
    def n(self):
        return self.phi.n

    def theta_hessian(self, x):
        return self.phi.hessian(x) + 1j * self.eta.hessian(x)


def complexified_residual(cp: ComplexifiedPotential, x) -> complex:
    """det(theta_jk) - C at x; raises if Re theta is not positive definite."""
    x = np.asarray(x, dtype=float)
    theta = cp.theta_hessian(x)
    if np.linalg.eigvalsh(theta.real).min() <= 0:
        raise NonConvexAt(x, "Re(theta) not positive definite")
    return complex(np.linalg.det(theta) - cp.C)


def flat_potential(domain: Domain) -> QuadraticPotential:
    """The reference potential |x|^2/2 (identity Hessian)."""
    return QuadraticPotential(np.eye(domain.n), domain=domain, target_constant=1.0)
