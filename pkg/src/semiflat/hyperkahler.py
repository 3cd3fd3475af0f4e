"""Pointwise hyperkahler structure on the cotangent bundle of the
tangent-bundle geometry, and its operator identities.

Coordinates are ordered (x^1..x^n, y^1..y^n, u_1..u_n, v_1..v_n).  The
three symplectic forms come from the holomorphic symplectic form of the
cotangent bundle and the base Kahler form; the endomorphisms are the
metric raises, signed so that I J K = -id in this ordering.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionTooLarge
from .geometry import JetFrame


@dataclass(frozen=True)
class HKFrame:
    n: int
    point: np.ndarray  # length 4n (x, y, u, v)
    g: np.ndarray
    omega_I: np.ndarray
    omega_J: np.ndarray
    omega_K: np.ndarray
    I: np.ndarray
    J: np.ndarray
    K: np.ndarray

    @property
    def eta_J(self):
        """Holomorphic symplectic form: omega_I + i omega_K."""
        return self.omega_I + 1j * self.omega_K


@dataclass(frozen=True)
class SphereParam:
    t: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.t)
        if len(t) != 3 or abs(np.linalg.norm(t) - 1.0) > 1e-14:
            raise ValueError("sphere parameter must be a unit 3-vector")
        object.__setattr__(self, "t", t)


def build_hk_frame(frame: JetFrame, fiber_point=None) -> HKFrame:
    """Assemble metric, the three symplectic forms and I, J, K at a jet."""
    n = frame.n
    H, Hinv = frame.hessian, frame.inverse_hessian
    Z = np.zeros((n, n))
    Id = np.eye(n)
    g = np.block([
        [H, Z, Z, Z],
        [Z, H, Z, Z],
        [Z, Z, Hinv, Z],
        [Z, Z, Z, Hinv],
    ])
    om_j = np.block([
        [Z, H, Z, Z],
        [-H, Z, Z, Z],
        [Z, Z, Z, -Hinv],
        [Z, Z, Hinv, Z],
    ])
    om_i = np.block([
        [Z, Z, Id, Z],
        [Z, Z, Z, Id],
        [-Id, Z, Z, Z],
        [Z, -Id, Z, Z],
    ])
    om_k = np.block([
        [Z, Z, Z, Id],
        [Z, Z, -Id, Z],
        [Z, Id, Z, Z],
        [-Id, Z, Z, Z],
    ])
    ginv = np.linalg.inv(g)
    point = np.zeros(4 * n)
    point[:n] = frame.point
    if fiber_point is not None:
        point[n:] = np.asarray(fiber_point, dtype=float)
    return HKFrame(
        n, point, g, om_i, om_j, om_k,
        I=-ginv @ om_i, J=-ginv @ om_j, K=-ginv @ om_k,
    )


def quaternion_residuals(hk: HKFrame):
    """Max norms of I^2+id, J^2+id, K^2+id, IJK+id."""
    Id = np.eye(4 * hk.n)
    return (
        float(np.abs(hk.I @ hk.I + Id).max()),
        float(np.abs(hk.J @ hk.J + Id).max()),
        float(np.abs(hk.K @ hk.K + Id).max()),
        float(np.abs(hk.I @ hk.J @ hk.K + Id).max()),
    )


def compatibility_residual(hk: HKFrame) -> float:
    """Max over I, J, K of |g(E., E.) - g|."""
    worst = 0.0
    for E in (hk.I, hk.J, hk.K):
        worst = max(worst, float(np.abs(E.T @ hk.g @ E - hk.g).max()))
    return worst


def kahler_family_check(hk: HKFrame, t: SphereParam):
    """(min singular value of omega_t, max |(g^-1 omega_t)^2 + id|)."""
    a, b, c = t.t
    om = a * hk.omega_I + b * hk.omega_J + c * hk.omega_K
    sv = np.linalg.svd(om, compute_uv=False)
    E = -np.linalg.inv(hk.g) @ om
    res = float(np.abs(E @ E + np.eye(4 * hk.n)).max())
    return float(sv.min()), res


def d_omega_residual(potential, x, which="J", h=1e-20) -> float:
    """Exterior derivative of the chosen two-form along base directions.

    The I and K forms are constant; the J form's base block carries the
    Hessian, and its closedness cancels through the third-derivative
    symmetry.  Complex-step differentiation is used for analytic
    potentials, centered differences otherwise.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)

    def omega(xx):
        H = potential.hessian(xx)
        Z = np.zeros((n, n), dtype=H.dtype)
        Id = np.eye(n, dtype=H.dtype)
        Hinv = np.linalg.inv(H)
        if which == "J":
            return np.block([[Z, H, Z, Z], [-H, Z, Z, Z], [Z, Z, Z, -Hinv], [Z, Z, Hinv, Z]])
        if which == "I":
            return np.block([[Z, Z, Id, Z], [Z, Z, Z, Id], [-Id, Z, Z, Z], [Z, -Id, Z, Z]])
        return np.block([[Z, Z, Z, Id], [Z, Z, -Id, Z], [Z, Id, Z, Z], [-Id, Z, Z, Z]])

    grads = np.zeros((n, 4 * n, 4 * n))
    if getattr(potential, "supports_complex", False):
        for l in range(n):
            xc = x.astype(complex).copy()
            xc[l] += 1j * h
            grads[l] = np.imag(omega(xc)) / h
    else:
        step = 1e-5
        for l in range(n):
            xp, xm = x.copy(), x.copy()
            xp[l] += step
            xm[l] -= step
            grads[l] = (omega(xp) - omega(xm)) / (2 * step)
    worst = 0.0
    for a_idx in range(n):  # only base directions differentiate
        for b_idx in range(4 * n):
            for c_idx in range(4 * n):
                term = grads[a_idx, b_idx, c_idx]
                tb = grads[b_idx, a_idx, c_idx] if b_idx < n else 0.0
                tc = grads[c_idx, a_idx, b_idx] if c_idx < n else 0.0
                worst = max(worst, abs(term - tb + tc))
    return worst


# ---------------------------------------------------------------------------
# the degree-1 commutator identity
# ---------------------------------------------------------------------------


def _wedge_matrix(two_form, dim):
    """Matrix of wedging with a two-form on the full exterior algebra
    over ``dim`` generators (basis indexed by bitmask, bit order ascending)."""
    size = 1 << dim
    L = np.zeros((size, size))

    def wedge_one(mask, a):
        if mask & (1 << a):
            return None
        below = bin(mask & ((1 << a) - 1)).count("1")
        return (-1.0) ** below, mask | (1 << a)

    for a in range(dim):
        for b in range(a + 1, dim):
            coeff = two_form[a, b]  # omega = sum_{a<b} omega_ab e^a ^ e^b
            if coeff == 0:
                continue
            for mask in range(size):
                r1 = wedge_one(mask, b)
                if r1 is None:
                    continue
                s1, m1 = r1
                r2 = wedge_one(m1, a)
                if r2 is None:
                    continue
                s2, m2 = r2
                L[m2, mask] += coeff * s1 * s2
    return L


def _degree_masks(dim, k):
    return [m for m in range(1 << dim) if bin(m).count("1") == k]


def _gram(h, masks):
    """Gram matrix of wedge monomials under the inverse-metric pairing."""
    G = np.zeros((len(masks), len(masks)))
    idx = {m: i for i, m in enumerate(masks)}
    for mi, m in enumerate(masks):
        rows = [a for a in range(h.shape[0]) if m & (1 << a)]
        for mj, mm in enumerate(masks):
            cols = [a for a in range(h.shape[0]) if mm & (1 << a)]
            if len(rows) != len(cols):
                continue
            G[mi, mj] = np.linalg.det(h[np.ix_(rows, cols)]) if rows else 1.0
    return G


def lj_lambdak_check(hk: HKFrame) -> float:
    """Residual of the degree-one flip identity of [L_J, Lambda_K].

    Lambda_K is the contraction adjoint to wedging with omega_K under
    the metric pairing, taken conjugate-linearly; acting after L_J on
    dx^j + i du^j (du^j raised with the inverse Hessian) it returns
    i (dx^j - i du^j), and likewise on dy^j + i dv^j.
    """
    n = hk.n
    if n > 2:
        raise DimensionTooLarge("full exterior algebra is materialized only for n <= 2")
    dim = 4 * n
    h = np.linalg.inv(hk.g)  # pairing of one-forms
    L_J = _wedge_matrix(hk.omega_J, dim)
    L_K = _wedge_matrix(hk.omega_K, dim)
    m1 = _degree_masks(dim, 1)
    m3 = _degree_masks(dim, 3)
    G1 = _gram(h, m1)
    G3 = _gram(h, m3)
    LK_13 = L_K[np.ix_(m3, m1)]
    lam_gram = np.linalg.solve(G1, LK_13.T @ G3)  # degree 3 -> degree 1
    LJ_13 = L_J[np.ix_(m3, m1)]

    def commutator_action(vec):
        # [L_J, Lambda_K] on degree one = -Lambda_K L_J there, and the
        # contraction conjugates its argument.
        return lam_gram @ np.conj(LJ_13 @ vec)

    Hinv = np.linalg.inv(hk.g[:n, :n])  # = phi^{jk}
    worst = 0.0
    for j in range(n):
        for base, raised in ((0, 2), (1, 3)):  # (x, u) and (y, v) families
            vec = np.zeros(dim, dtype=complex)
            vec[base * n + j] = 1.0
            vec[raised * n : raised * n + n] += 1j * Hinv[j]
            target = np.zeros(dim, dtype=complex)
            target[base * n + j] = 1j
            target[raised * n : raised * n + n] += Hinv[j]
            got = commutator_action(vec)
            worst = max(worst, float(np.abs(got - target).max()))
    return worst


def base_restriction_residual(hk: HKFrame, structures) -> float:
    """Restricting the frame to the tangent-bundle factor reproduces the
    base Calabi-Yau metric and Kahler form."""
    n = hk.n
    res_g = np.abs(hk.g[: 2 * n, : 2 * n] - structures.g_M).max()
    res_om = np.abs(hk.omega_J[: 2 * n, : 2 * n] - structures.omega_M).max()
    return float(max(res_g, res_om))
