"""Conjugate and flat affine connections on the base, and their duality.

The conjugate connection has Christoffels phi^{jk} phi_{klm}: it is the
flat connection of the dual affine coordinates pushed through the
gradient map, hence curvature-free for every strictly convex potential.
The flat connection is plain coordinate differentiation.  Their average
is the Levi-Civita connection of the Hessian metric on the base.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import JetFrame, jet


@dataclass(frozen=True)
class Connection:
    """Christoffel field at a point; torsion-free by construction."""

    christoffels: np.ndarray  # Gamma^j_{lm}
    flavor: str               # "A" (conjugate) or "B" (flat)


def a_connection(frame: JetFrame) -> Connection:
    """Gamma^j_{lm} = phi^{jk} phi_{klm}."""
    gamma = np.einsum("jk,klm->jlm", frame.inverse_hessian, frame.third)
    return Connection(gamma, "A")


def b_connection(frame: JetFrame) -> Connection:
    """The flat connection: vanishing Christoffels in affine coordinates."""
    n = frame.n
    return Connection(np.zeros((n, n, n)), "B")


def levi_civita_christoffels(frame: JetFrame) -> np.ndarray:
    """Christoffels of the Hessian metric, from the metric formula."""
    t = frame.third
    inv = frame.inverse_hessian
    # 1/2 g^{jk} (d_l g_km + d_m g_kl - d_k g_lm) with g = Hess phi
    combo = 0.5 * (
        np.einsum("kml->klm", t) + np.einsum("klm->klm", t) - np.einsum("lmk->klm", t)
    )
    return np.einsum("jk,klm->jlm", inv, combo)


def _gamma_field(potential, x):
    frame = jet(potential, x) if not np.iscomplexobj(x) else None
    if frame is not None:
        return a_connection(frame).christoffels
    # complex-step evaluation path: assemble without convexity checks
    hess = potential.hessian(x)
    third = potential.third(x)
    inv = np.linalg.inv(hess)
    return np.einsum("jk,klm->jlm", inv, third)


def _dgamma(potential, x, h=1e-6):
    """d Gamma^j_{km} / dx^l, complex-step for analytic potentials."""
    n = len(x)
    out = np.empty((n,) + (n, n, n))
    if getattr(potential, "supports_complex", False):
        step = 1e-20
        for l in range(n):
            xc = np.asarray(x, dtype=complex).copy()
            xc[l] += 1j * step
            out[l] = np.imag(_gamma_field(potential, xc)) / step
        return out
    for l in range(n):
        xp = np.asarray(x, dtype=float).copy()
        xm = xp.copy()
        xp[l] += h
        xm[l] -= h
        out[l] = (_gamma_field(potential, xp) - _gamma_field(potential, xm)) / (2 * h)
    return out


def a_curvature_residual(potential, x) -> float:
    """Max curvature component of the conjugate connection; zero in theory."""
    x = np.asarray(x, dtype=float)
    gamma = _gamma_field(potential, x)
    dg = _dgamma(potential, x)
    # R^j_{k,lm} = d_l Gamma^j_{km} - d_m Gamma^j_{kl}
    #             + Gamma^j_{ls} Gamma^s_{km} - Gamma^j_{ms} Gamma^s_{kl}
    curv = (
        np.einsum("ljkm->jklm", dg[:, :, :, :])
        - np.einsum("mjkl->jklm", dg[:, :, :, :])
        + np.einsum("jls,skm->jklm", gamma, gamma)
        - np.einsum("jms,skl->jklm", gamma, gamma)
    )
    return float(np.abs(curv).max())


def nabla_omega_residual(frame: JetFrame) -> float:
    """Covariant derivative of the Kahler form under the conjugate
    connection, expanded componentwise; cancels through the symmetry of
    the third derivatives."""
    gamma = a_connection(frame).christoffels
    t = frame.third
    H = frame.hessian
    # coefficient of dx^l (x) (dx^j wedge dy^k):
    first = np.einsum("jkl->ljk", t)
    second = np.einsum("jk,jpq->qpk", H, gamma)
    return float(np.abs(first - second).max())


def nabla_omega_control(frame: JetFrame, epsilon=0.1) -> float:
    """Same expansion with a symmetry-breaking perturbed Christoffel.

    Nonzero whenever the third derivatives are: detects that the
    cancellation really uses the full index symmetry.
    """
    gamma = a_connection(frame).christoffels.copy()
    n = frame.n
    gamma[0, 0, n - 1] += epsilon  # breaks Gamma^j_{lm} = Gamma^j_{ml}
    t = frame.third
    H = frame.hessian
    first = np.einsum("jkl->ljk", t)
    second = np.einsum("jk,jpq->qpk", H, gamma)
    return float(np.abs(first - second).max())


def connection_duality_residual(frame: JetFrame) -> float:
    """Christoffels of the conjugate connection transported to the dual
    coordinates by the chain rule; expected to vanish identically."""
    inv = frame.inverse_hessian
    t = frame.third
    gamma = a_connection(frame).christoffels
    # (d x^l / d u_b)(d x^m / d u_c) Gamma^j_{lm} + d^2 x^j / d u_b d u_c
    transported = np.einsum("lb,mc,jlm->jbc", inv, inv, gamma) - np.einsum(
        "js,stm,tb,mc->jbc", inv, t, inv, inv
    )
    dual = np.einsum("aj,jbc->abc", frame.hessian, transported)
    return float(np.abs(dual).max())


def hess_a(f, frame: JetFrame) -> np.ndarray:
    """Covariant Hessian of a scalar under the conjugate connection:
    f_lk - phi^{pq} phi_{lkp} f_q."""
    grad = np.asarray(f.gradient(frame.point))
    hess = np.asarray(f.hessian(frame.point))
    corr = np.einsum("pq,lkp,q->lk", frame.inverse_hessian, frame.third, grad)
    return hess - corr
