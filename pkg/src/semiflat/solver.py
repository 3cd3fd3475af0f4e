"""Damped-Newton Dirichlet solvers for the real and complexified
Monge-Ampere equations on the box grid.

The real solver Newton-iterates F(phi) = log det D^2_h phi - log C with a
convexity guard: a trial step is halved until the discrete Hessian is
positive definite at every interior node and the residual satisfies an
Armijo decrease.  The linearized operator psi -> trace(phi^{jk} D^2_h psi)
is assembled with the same centered stencils and solved by a Jacobi-
preconditioned BiCGStab (sparse-LU fallback).

The complexified solver continues in the phase of the target constant
from the real solution, Newton-solving Re/Im(det theta - C) = 0 jointly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import HomotopyStall, LostConvexity, MaxIterations
from .geometry import ComplexifiedPotential, Domain, GridPotential


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 60
    tolerance: float = 1e-9           # sup-norm of det D^2 phi - C
    damping_factor: float = 0.5
    armijo: float = 1e-4
    initial_guess: object = "quadratic"  # "quadratic" | "zero" | ndarray
    linear_maxiter: int = 4000
    homotopy_steps: int = 5


@dataclass
class SolveResult:
    potential: GridPotential
    residual_history: list
    min_eigenvalue_field: np.ndarray
    converged: bool
    iterations: int

    def to_json(self):
        return {
            "residual_history": [float(r) for r in self.residual_history],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }


# ---------------------------------------------------------------------------
# discrete Hessian
# ---------------------------------------------------------------------------


def _interior(shape):
    return tuple(slice(1, -1) for _ in shape)


def _shift(sl, axis, by, ndim):
    out = list(sl)
    lo, hi = 1 + by, -1 + by
    out[axis] = slice(lo, hi if hi != 0 else None)
    return tuple(out)


def discrete_hessian(values, spacing):
    """Centered second differences of a grid function at interior nodes.

    Returns an array of shape (R-2, ..., R-2, n, n).
    """
    values = np.asarray(values, dtype=values.dtype if np.iscomplexobj(values) else float)
    n = values.ndim
    inner = _interior(values.shape)
    base = [slice(1, -1)] * n
    out_shape = values[inner].shape + (n, n)
    H = np.empty(out_shape, dtype=values.dtype)
    for j in range(n):
        plus = _shift(base, j, 1, n)
        minus = _shift(base, j, -1, n)
        H[..., j, j] = (values[plus] - 2 * values[inner] + values[minus]) / spacing[j] ** 2
    for j in range(n):
        for k in range(j + 1, n):
            pp = _shift(_shift(base, j, 1, n), k, 1, n)
            pm = _shift(_shift(base, j, 1, n), k, -1, n)
            mp = _shift(_shift(base, j, -1, n), k, 1, n)
            mm = _shift(_shift(base, j, -1, n), k, -1, n)
            d = (values[pp] - values[pm] - values[mp] + values[mm]) / (4 * spacing[j] * spacing[k])
            H[..., j, k] = d
            H[..., k, j] = d
    return H


def convexity_spectrum(potential: GridPotential) -> np.ndarray:
    """Per-interior-node smallest eigenvalue of the discrete Hessian."""
    H = discrete_hessian(potential.values, potential.domain.spacing())
    return np.linalg.eigvalsh(H)[..., 0]


def _min_eig(values, spacing):
    return np.linalg.eigvalsh(discrete_hessian(values, spacing))[..., 0]


# ---------------------------------------------------------------------------
# boundary handling and initial guesses
# ---------------------------------------------------------------------------


def _boundary_mask(shape):
    mask = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[axis] = 0
        mask[tuple(sl)] = True
        sl[axis] = -1
        mask[tuple(sl)] = True
    return mask


def _grid_points(domain: Domain):
    axes = domain.axis_coords()
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _boundary_values(domain, boundary):
    pts = _grid_points(domain)
    shape = pts.shape[:-1]
    mask = _boundary_mask(shape)
    vals = np.zeros(shape)
    if boundary is None:
        return vals, mask
    if callable(boundary):
        flat = pts[mask]
        vals[mask] = np.array([float(boundary(x)) for x in flat])
    elif np.isscalar(boundary):
        vals[mask] = float(boundary)
    else:
        arr = np.asarray(boundary, dtype=float)
        if arr.shape != shape:
            raise ValueError(f"boundary array must have grid shape {shape}")
        vals[mask] = arr[mask]
    return vals, mask


def _quadratic_guess(domain: Domain, C, bvals, mask):
    """Convex quadratic fitted to the boundary data, touching it from below.

    A least-squares quadratic through the boundary nodes picks up the
    curvature of the data (eigenvalues clamped positive); the offset
    places it weakly below the data so that imposing the Dirichlet
    values keeps the grid function in the discrete convex cone whenever
    the data are quadratic-dominated.
    """
    n = domain.n
    pts = _grid_points(domain)
    bpts = pts[mask]
    cols = [np.ones(len(bpts))]
    cols += [bpts[:, j] for j in range(n)]
    pairs = [(j, k) for j in range(n) for k in range(j, n)]
    cols += [bpts[:, j] * bpts[:, k] for j, k in pairs]
    design = np.stack(cols, axis=1)
    sol, *_ = np.linalg.lstsq(design, bvals[mask], rcond=None)
    A = np.zeros((n, n))
    for coeff, (j, k) in zip(sol[1 + n :], pairs):
        if j == k:
            A[j, j] = 2 * coeff
        else:
            A[j, k] = A[k, j] = coeff
    lam, vecs = np.linalg.eigh(A)
    floor = max(0.05 * C ** (1.0 / n), 1e-3)
    lam = np.maximum(lam, floor)
    A = vecs @ np.diag(lam) @ vecs.T
    quad = 0.5 * np.einsum("...j,jk,...k->...", pts, A, pts) + pts @ sol[1 : 1 + n]
    beta = (bvals[mask] - quad[mask]).min()
    return quad + beta


def _reference_paraboloid(domain: Domain):
    pts = _grid_points(domain)
    return 0.5 * ((pts - domain.center) ** 2).sum(axis=-1)


# ---------------------------------------------------------------------------
# linearized operator
# ---------------------------------------------------------------------------


def _assemble_linearized(coeff, spacing, dtype=float):
    """Sparse matrix of psi -> sum_jk coeff_jk (D^2_h psi)_jk on interior nodes.

    ``coeff`` has shape (interior..., n, n); Dirichlet corrections vanish on
    the boundary so stencil legs leaving the interior are dropped.
    """
    inner_shape = coeff.shape[:-2]
    n = len(inner_shape)
    N = int(np.prod(inner_shape))
    idx = np.arange(N).reshape(inner_shape)
    rows, cols, vals = [], [], []

    def add(offset, weight):
        src = [slice(None)] * n
        dst = [slice(None)] * n
        for axis, by in enumerate(offset):
            if by == 1:
                src[axis] = slice(0, -1)
                dst[axis] = slice(1, None)
            elif by == -1:
                src[axis] = slice(1, None)
                dst[axis] = slice(0, -1)
        r = idx[tuple(src)].ravel()
        c = idx[tuple(dst)].ravel()
        w = weight[tuple(src)].ravel()
        rows.append(r)
        cols.append(c)
        vals.append(w)

    diag = np.zeros(inner_shape, dtype=dtype)
    for j in range(n):
        diag -= 2.0 * coeff[..., j, j] / spacing[j] ** 2
    add((0,) * n, diag)
    for j in range(n):
        w = coeff[..., j, j] / spacing[j] ** 2
        off = [0] * n
        off[j] = 1
        add(tuple(off), w)
        off[j] = -1
        add(tuple(off), w)
    for j in range(n):
        for k in range(j + 1, n):
            w = coeff[..., j, k] / (2.0 * spacing[j] * spacing[k])
            for sj, sk in itertools.product((1, -1), repeat=2):
                off = [0] * n
                off[j], off[k] = sj, sk
                add(tuple(off), (sj * sk) * w)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _linear_solve(A, rhs, maxiter, rtol=1e-12):
    diag = A.diagonal()
    safe = np.where(np.abs(diag) > 1e-300, diag, 1.0)
    M = spla.LinearOperator(A.shape, matvec=lambda v: v / safe, dtype=A.dtype)
    try:
        x, info = spla.bicgstab(A, rhs, rtol=rtol, atol=1e-15, maxiter=maxiter, M=M)
    except TypeError:  # older scipy spells the keyword "tol"
        x, info = spla.bicgstab(A, rhs, tol=rtol, atol=1e-15, maxiter=maxiter, M=M)
    if info != 0 or not np.all(np.isfinite(x)):
        x = spla.spsolve(A.tocsc(), rhs)
    return x


# ---------------------------------------------------------------------------
# real Monge-Ampere solver
# ---------------------------------------------------------------------------


def _newton_phase(domain, C, phi, opts):
    """Damped Newton from a discretely convex iterate; boundary rows of
    ``phi`` are held fixed.  Returns (phi, history)."""
    spacing = domain.spacing()
    history = []
    logC = np.log(C)
    for it in range(opts.max_iterations):
        H = discrete_hessian(phi, spacing)
        det = np.linalg.det(H)
        res = np.abs(det - C).max()
        history.append(float(res))
        if res <= opts.tolerance:
            return phi, history
        F = np.log(det) - logC
        A = _assemble_linearized(np.linalg.inv(H), spacing)
        delta = _linear_solve(A, -F.ravel(), opts.linear_maxiter).reshape(F.shape)
        full = np.zeros_like(phi)
        full[_interior(phi.shape)] = delta
        fnorm = np.abs(F).max()
        s = 1.0
        accepted = False
        while s >= 2.0**-40:
            cand = phi + s * full
            Hc = discrete_hessian(cand, spacing)
            if np.linalg.eigvalsh(Hc)[..., 0].min() > 0:
                fc = np.abs(np.log(np.linalg.det(Hc)) - logC).max()
                if fc <= (1 - opts.armijo * s) * fnorm:
                    phi = cand
                    accepted = True
                    break
            s *= opts.damping_factor
        if not accepted:
            raise LostConvexity(f"damped step could not make progress at iteration {it}")
    raise MaxIterations(f"no convergence in {opts.max_iterations} iterations (residual {history[-1]:.3e})")


def _initial_iterate(domain, C, bvals, mask, opts):
    """The starting grid function, damped into the convex cone if needed."""
    spacing = domain.spacing()
    quad = _quadratic_guess(domain, C, bvals, mask)
    if isinstance(opts.initial_guess, str):
        if opts.initial_guess == "quadratic":
            phi = quad.copy()
        elif opts.initial_guess == "zero":
            phi = np.zeros_like(bvals)
        else:
            raise ValueError(f"unknown initial guess {opts.initial_guess!r}")
    else:
        phi = np.asarray(opts.initial_guess, dtype=float).copy()
    phi[mask] = bvals[mask]
    if _min_eig(phi, spacing).min() > 0:
        return phi
    # damp toward the fitted convex quadratic until positive definite
    s = 1.0
    while s >= 2.0**-40:
        cand = (1 - s) * phi + s * quad
        cand[mask] = bvals[mask]
        if _min_eig(cand, spacing).min() > 0:
            return cand
        s *= opts.damping_factor
    return None


def _clamped_walk_in(domain, C, bvals, mask, opts, phi0=None, delta=None, max_iter=120):
    """Initialization for data with no convex-cone-compatible guess.

    Runs the Newton iteration on the eigenvalue-clamped log determinant
    sum_i log(max(lambda_i, delta)); the clamped operator is elliptic
    for any iterate, and the walk stops as soon as the discrete Hessian
    is positive definite everywhere.  Returns None when it never enters
    the cone.
    """
    spacing = domain.spacing()
    delta = delta if delta is not None else 0.02 * C ** (1.0 / domain.n)
    phi = _quadratic_guess(domain, C, bvals, mask) if phi0 is None else phi0.copy()
    phi[mask] = bvals[mask]
    logC = np.log(C)
    for _ in range(max_iter):
        H = discrete_hessian(phi, spacing)
        lam, vecs = np.linalg.eigh(H)
        if lam[..., 0].min() > 0:
            return phi
        lamc = np.maximum(lam, delta)
        F = np.log(lamc).sum(axis=-1) - logC
        coeff = np.einsum("...ij,...j,...kj->...ik", vecs, 1.0 / lamc, vecs)
        A = _assemble_linearized(coeff, spacing)
        # the walk-in only needs descent directions, not tight solves
        delta_phi = _linear_solve(A, -F.ravel(), opts.linear_maxiter, rtol=1e-6).reshape(F.shape)
        full = np.zeros_like(phi)
        full[_interior(phi.shape)] = delta_phi
        fnorm = float(np.linalg.norm(F))
        s = 1.0
        accepted = False
        while s >= 2.0**-30:
            cand = phi + s * full
            lc = np.maximum(np.linalg.eigvalsh(discrete_hessian(cand, spacing)), delta)
            fc = float(np.linalg.norm(np.log(lc).sum(axis=-1) - logC))
            if fc <= (1 - opts.armijo * s) * fnorm:
                phi = cand
                accepted = True
                break
            s *= opts.damping_factor
        if not accepted:
            return None
    return None


def _convexify_sweep(phi, spacing, mask, margin, rounds=12):
    """Locally lower the grid function at nodes where the discrete
    Hessian fails positive definiteness.

    Lowering a node's value raises every diagonal second difference
    there without touching its own cross terms; the per-node shift is
    found by bisection on the smallest eigenvalue.  The sweep is a
    cheap preconditioner for the clamped walk-in, not a solver.
    """
    phi = phi.copy()
    n = phi.ndim
    lift = 2.0 / spacing**2
    for _ in range(rounds):
        H = discrete_hessian(phi, spacing)
        lam = np.linalg.eigvalsh(H)[..., 0]
        bad = np.argwhere(lam <= 0)
        if len(bad) == 0:
            break
        for idx in bad:
            Hl = H[tuple(idx)]
            lo, hi = 0.0, 1.0
            while np.linalg.eigvalsh(Hl + hi * np.diag(lift))[0] < margin:
                hi *= 2.0
                if hi > 1e8:
                    break
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if np.linalg.eigvalsh(Hl + mid * np.diag(lift))[0] >= margin:
                    hi = mid
                else:
                    lo = mid
            phi[tuple(i + 1 for i in idx)] -= hi
    return phi


def _prolong(coarse, fine_shape):
    """Cubic midpoint interpolation from a nested coarse grid.

    Linear interpolation would leave zero curvature at inserted nodes
    and wreck discrete convexity; the 4-point midpoint rule carries the
    coarse curvature over.
    """

    def midpoints(arr, axis):
        arr = np.moveaxis(arr, axis, 0)
        mids = np.empty((arr.shape[0] - 1,) + arr.shape[1:], dtype=arr.dtype)
        if arr.shape[0] >= 4:
            mids[1:-1] = (-arr[:-3] + 9 * arr[1:-2] + 9 * arr[2:-1] - arr[3:]) / 16.0
            mids[0] = (3 * arr[0] + 6 * arr[1] - arr[2]) / 8.0
            mids[-1] = (3 * arr[-1] + 6 * arr[-2] - arr[-3]) / 8.0
        else:
            mids[:] = 0.5 * (arr[:-1] + arr[1:])
        return np.moveaxis(mids, 0, axis)

    out = coarse
    for axis in range(coarse.ndim):
        cur = out.shape[axis]
        shape = list(out.shape)
        shape[axis] = 2 * cur - 1
        refined = np.zeros(shape, dtype=out.dtype)
        even = [slice(None)] * out.ndim
        even[axis] = slice(0, None, 2)
        refined[tuple(even)] = out
        odd = [slice(None)] * out.ndim
        odd[axis] = slice(1, None, 2)
        refined[tuple(odd)] = midpoints(out, axis)
        out = refined
    assert out.shape == fine_shape
    return out


def solve_real_ma(domain: Domain, C: float, boundary=None, opts: SolverOptions = None) -> SolveResult:
    """Solve det D^2_h phi = C with Dirichlet data on the box grid.

    If no discretely convex starting iterate exists for the given data
    (boundary kinks near corners), the solver continues along the
    quadratic boundary family b + tau |x - c|^2 / 2 from a
    quadratic-dominated problem down to tau = 0; each continuation step
    shifts the previous solution by an exact quadratic, so the warm
    start matches the new boundary and convexity margins control the
    step size.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    opts = opts or SolverOptions()
    spacing = domain.spacing()
    bvals, mask = _boundary_values(domain, boundary)

    phi, history = _solve_grid(domain, C, bvals, mask, opts)
    return _pack_result(domain, C, phi, history)


def _solve_grid(domain: Domain, C, bvals, mask, opts):
    spacing = domain.spacing()
    phi0 = _initial_iterate(domain, C, bvals, mask, opts)
    if phi0 is not None:
        try:
            return _newton_phase(domain, C, phi0, opts)
        except LostConvexity:
            pass

    # the cone margin of the discrete solution shrinks with the spacing,
    # so the clamp candidates scale with it
    h_min = float(spacing.min())
    scale = C ** (1.0 / domain.n)
    deltas = (0.2 * h_min * scale, 0.05 * h_min * scale, 0.02 * scale)
    margin = 0.3 * scale

    # grid sequencing first: coarse solves are cheap and the prolonged,
    # locally convexified solution is an excellent walk-in start
    res = domain.grid_resolution
    coarse_res = (res + 1) // 2
    if res >= 17 and coarse_res % 2 == 1 and coarse_res >= 9:
        coarse_domain = domain.with_resolution(coarse_res)
        sub = tuple(slice(None, None, 2) for _ in range(domain.n))
        try:
            coarse_phi, _ = _solve_grid(
                coarse_domain, C, bvals[sub], _boundary_mask(bvals[sub].shape), opts
            )
        except (LostConvexity, MaxIterations):
            coarse_phi = None
        if coarse_phi is not None:
            warm = _prolong(coarse_phi, bvals.shape)
            warm[mask] = bvals[mask]
            warm = _convexify_sweep(warm, spacing, mask, margin)
            if _min_eig(warm, spacing).min() > 0:
                try:
                    return _newton_phase(domain, C, warm, opts)
                except LostConvexity:
                    pass
            for delta in deltas:
                start = _clamped_walk_in(domain, C, bvals, mask, opts, phi0=warm, delta=delta)
                if start is not None:
                    return _newton_phase(domain, C, start, opts)

    for delta in deltas:
        start = _clamped_walk_in(domain, C, bvals, mask, opts, delta=delta)
        if start is not None:
            return _newton_phase(domain, C, start, opts)
    raise LostConvexity("no discretely convex iterate reachable for this boundary data")


def _pack_result(domain, C, phi, history):
    H = discrete_hessian(phi, domain.spacing())
    return SolveResult(
        GridPotential(domain, phi, target_constant=C),
        history,
        np.linalg.eigvalsh(H)[..., 0],
        True,
        max(len(history) - 1, 0),
    )


# ---------------------------------------------------------------------------
# complexified solver
# ---------------------------------------------------------------------------


def _complex_newton(domain, phi, eta, C, opts):
    """Newton on det(D^2 phi + i D^2 eta) - C = 0 at fixed complex C."""
    spacing = domain.spacing()
    mask = _boundary_mask(phi.shape)
    for it in range(opts.max_iterations):
        theta = discrete_hessian(phi + 1j * eta, spacing)
        if np.linalg.eigvalsh(theta.real)[..., 0].min() <= 0:
            raise LostConvexity("Re(theta) lost positive definiteness")
        det = np.linalg.det(theta)
        G = det - C
        res = np.abs(G).max()
        if res <= opts.tolerance:
            return phi, eta, it
        # d det = det * trace(theta^{-1} d theta); the correction is complex
        # with real part updating phi and imaginary part updating eta.
        coeff = det[..., None, None] * np.linalg.inv(theta).transpose(
            tuple(range(det.ndim)) + (det.ndim + 1, det.ndim)
        )
        A = _assemble_linearized(coeff, spacing, dtype=complex)
        delta = _linear_solve(A, -G.ravel(), opts.linear_maxiter).reshape(G.shape)
        full = np.zeros(phi.shape, dtype=complex)
        full[_interior(phi.shape)] = delta
        gnorm = res
        s = 1.0
        accepted = False
        while s >= 2.0**-40:
            pc = phi + s * full.real
            ec = eta + s * full.imag
            pc[mask] = phi[mask]
            ec[mask] = eta[mask]
            th = discrete_hessian(pc + 1j * ec, spacing)
            if np.linalg.eigvalsh(th.real)[..., 0].min() > 0:
                gc = np.abs(np.linalg.det(th) - C).max()
                if gc <= (1 - opts.armijo * s) * gnorm:
                    phi, eta = pc, ec
                    accepted = True
                    break
            s *= opts.damping_factor
        if not accepted:
            raise LostConvexity("complexified damped step could not make progress")
    raise MaxIterations("complexified Newton did not converge")


def solve_complexified_ma(domain: Domain, C: complex, opts: SolverOptions = None):
    """Solve det(phi_jk + i eta_jk) = C with zero Dirichlet data for both.

    For real positive C this delegates to the real solver (eta stays
    identically zero, reproducing its iteration path exactly).  Otherwise
    the phase of C is continued from zero in ``opts.homotopy_steps``
    steps, with step halving on failure.
    """
    C = complex(C)
    if abs(C) == 0:
        raise ValueError("C must be nonzero")
    opts = opts or SolverOptions()
    tau = float(np.angle(C))
    mag = abs(C)
    real_result = solve_real_ma(domain, mag, boundary=0.0, opts=opts)
    phi = real_result.potential.values.copy()
    eta = np.zeros_like(phi)
    histories = [real_result.residual_history]
    if tau == 0.0:
        cp = ComplexifiedPotential(real_result.potential, GridPotential(domain, eta), C)
        return cp, histories

    s = 0.0
    step = tau / opts.homotopy_steps
    min_step = abs(tau) * 1e-3
    while abs(s - tau) > 1e-15:
        target = s + step
        if (step > 0 and target > tau) or (step < 0 and target < tau):
            target = tau
        try:
            phi_new, eta_new, _ = _complex_newton(domain, phi.copy(), eta.copy(), mag * np.exp(1j * target), opts)
        except (LostConvexity, MaxIterations):
            step *= 0.5
            if abs(step) < min_step:
                raise HomotopyStall(f"phase continuation stalled at arg C = {s}") from None
            continue
        phi, eta = phi_new, eta_new
        s = target
        theta = discrete_hessian(phi + 1j * eta, domain.spacing())
        histories.append([float(np.abs(np.linalg.det(theta) - mag * np.exp(1j * s)).max())])
    cp = ComplexifiedPotential(
        GridPotential(domain, phi, target_constant=None),
        GridPotential(domain, eta, target_constant=None),
        C,
    )
    return cp, histories
