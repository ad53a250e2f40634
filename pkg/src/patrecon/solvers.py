"""Damped LSQR (Paige and Saunders) with a recorded residual history."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator


@dataclass
class LsqrResult:
    x: np.ndarray
    iterations: int
    stop_reason: str
    residual_history: list = field(default_factory=list)
    normal_residual: float = np.nan


def stacked_real(op: LinearOperator) -> LinearOperator:
    """Real operator ``x -> [Re(Mx); Im(Mx)]`` for a complex ``M`` acting on real ``x``.

    Its adjoint is ``[a; b] -> Re(M^H (a + 1j b))``.
    """
    m, n = op.shape

    def matvec(x):
        y = op.matvec(np.asarray(x, dtype=float).ravel())
        return np.concatenate([y.real, y.imag])

    def rmatvec(y):
        y = np.asarray(y, dtype=float).ravel()
        return np.real(op.rmatvec(y[:m] + 1j * y[m:]))

    return LinearOperator((2 * m, n), matvec=matvec, rmatvec=rmatvec, dtype=float)


def lsqr(A, b, damp: float = 0.0, tol: float = 1e-6, max_iters: int = 100) -> LsqrResult:
    """Minimise ``||A x - b||^2 + damp^2 ||x||^2`` for real ``A`` and ``b``.

    Stops when the normal-equations residual ``||A^T r - damp^2 x||`` drops
    below ``tol * ||A|| * ||[r; damp x]||``, when ``||[r; damp x]|| <= tol * ||b||``,
    or after ``max_iters`` iterations. ``residual_history`` holds
    ``||[r; damp x]|| / ||b||`` after every iteration, which never increases.
    """
    A = aslinearoperator(A)
    m, n = A.shape
    b = np.asarray(b, dtype=float).ravel()
    if b.size != m:
        raise ValueError(f"right-hand side has {b.size} entries, operator has {m} rows")
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return LsqrResult(x, 0, "zero right-hand side", [0.0], 0.0)

    u = b / bnorm
    beta = bnorm
    v = A.rmatvec(u)
    alpha = np.linalg.norm(v)
    if alpha == 0:
        return LsqrResult(x, 0, "A^T b is zero", [1.0], 0.0)
    v = v / alpha
    w = v.copy()
    phibar, rhobar = beta, alpha
    anorm2 = 0.0
    res2 = 0.0
    history = []
    arnorm = alpha * beta
    reason = "iteration limit"
    itn = 0
    while itn < max_iters:
        itn += 1
        u = A.matvec(v) - alpha * u
        beta = np.linalg.norm(u)
        if beta > 0:
            u /= beta
            anorm2 += alpha ** 2 + beta ** 2 + damp ** 2
            v = A.rmatvec(u) - beta * v
            alpha = np.linalg.norm(v)
            if alpha > 0:
                v /= alpha
        else:
            anorm2 += alpha ** 2 + damp ** 2

        rhobar1 = np.hypot(rhobar, damp)
        cs1, sn1 = rhobar / rhobar1, damp / rhobar1
        psi = sn1 * phibar
        phibar = cs1 * phibar
        res2 += psi ** 2

        rho = np.hypot(rhobar1, beta)
        cs, sn = rhobar1 / rho, beta / rho
        theta = sn * alpha
        rhobar = -cs * alpha
        phi = cs * phibar
        phibar = sn * phibar

        x += (phi / rho) * w
        w = v - (theta / rho) * w

        rnorm = np.sqrt(phibar ** 2 + res2)
        arnorm = alpha * abs(sn * phi)
        history.append(rnorm / bnorm)
        anorm = np.sqrt(anorm2)
        if rnorm <= tol * bnorm:
            reason = "residual tolerance"
            break
        if arnorm <= tol * anorm * rnorm:
            reason = "normal-equations tolerance"
            break
        if alpha == 0 or beta == 0:
            reason = "exact solution"
            break
    return LsqrResult(x, itn, reason, history, arnorm)
