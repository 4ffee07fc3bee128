"""Dense convex quadratic programming by operator splitting.

Solves
    minimize    (1/2) x'Px + q'x
    subject to  l <= Ax <= u
for symmetric positive-semidefinite P with the alternating-direction
method of multipliers in the splitting popularized by OSQP: an x-update
through a cached linear solve, a clamp of the constraint image onto
[l, u], and a scaled dual ascent step.

Sized to this package's needs (estimation inner problems with ~65
variables and ~200 boxed or one-sided rows):

- Matrices are dense numpy arrays. The x-update applies an explicit
  inverse of (P/c + sigma*I + rho*A'A), refreshed only when rho is
  rescaled; with sigma > 0 that matrix is positive definite.
- The objective is normalized by c = max(1, max|P|, max|q|), so the
  dual-side stopping test is relative to the objective's scale. The
  primal (constraint) residual is tested unscaled — downstream
  feasibility audits rely on the unscaled bound.
- Primal infeasibility is certified by the separating-direction test on
  the dual increment. Dual infeasibility (an unbounded objective) is not
  checked: every caller boxes all variables, so the feasible set has no
  recession directions.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class QPConvergenceError(Exception):
    """Residuals still above tolerance when the iteration budget ran out."""

    def __init__(self, iterations: int, primal_residual: float, dual_residual: float):
        self.iterations = iterations
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        super().__init__(
            f"no convergence after {iterations} iterations"
            f" (primal residual {primal_residual:.3e},"
            f" dual residual {dual_residual:.3e})"
        )


@dataclass(frozen=True)
class QPResult:
    status: str  # "solved" or "primal_infeasible"
    x: Optional[np.ndarray]
    y: Optional[np.ndarray]  # multipliers, or the infeasibility certificate
    objective: Optional[float]
    iterations: int
    primal_residual: float
    dual_residual: float


def _certifies_primal_infeasibility(dy, A, l, u, eps):
    """Farkas-style test: a dual direction separating l <= Ax <= u from reality.

    dy certifies infeasibility when A'dy ~ 0 while the support function
    u'(dy)+ + l'(dy)- is strictly negative. Rows with an infinite bound on
    the active side can never certify.
    """
    norm = np.max(np.abs(dy))
    if norm <= eps:
        return False
    e = dy / norm
    if np.max(np.abs(A.T @ e)) > eps:
        return False
    pos = e > 0
    neg = e < 0
    if np.any(pos & np.isinf(u)) or np.any(neg & np.isinf(l)):
        return False
    support = float(np.sum(u[pos] * e[pos]) + np.sum(l[neg] * e[neg]))
    return support < -eps


def solve_qp(
    P,
    q,
    A,
    l,
    u,
    tolerance: float = 1e-6,
    max_iterations: int = 10000,
    sigma: float = 1e-6,
    relaxation: float = 1.6,
    rho_initial: float = 0.1,
    adaptive_rho: bool = True,
    infeasibility_eps: float = 1e-7,
) -> QPResult:
    """Minimize (1/2)x'Px + q'x subject to l <= Ax <= u.

    Returns a QPResult with status "solved" (both infinity-norm residuals
    at or below tolerance) or "primal_infeasible" (certificate found).
    Raises QPConvergenceError when max_iterations passes without either.
    Fully deterministic: cold start at the origin, no randomization.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    A = np.asarray(A, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)

    n = q.shape[0]
    if A.size == 0:
        A = A.reshape(0, n)
    m = A.shape[0]
    if P.shape != (n, n) or A.shape[1] != n or l.shape != (m,) or u.shape != (m,):
        raise ValueError("inconsistent QP dimensions")
    if np.any(l > u):
        raise ValueError("constraint bounds cross: some l > u")
    if tolerance <= 0 or max_iterations < 1:
        raise ValueError("tolerance must be > 0 and max_iterations >= 1")

    # normalize the objective so the dual tolerance is relative to its scale
    scale = max(1.0, float(np.max(np.abs(P))) if P.size else 0.0,
                float(np.max(np.abs(q))) if q.size else 0.0)
    Ps = P / scale
    qs = q / scale

    rho = rho_initial
    eye = np.eye(n)
    AtA = A.T @ A
    inv = np.linalg.inv(Ps + sigma * eye + rho * AtA)

    x = np.zeros(n)
    z = np.clip(A @ x, l, u)
    y = np.zeros(m)

    r_prim = 0.0
    r_dual = math.inf
    for k in range(1, max_iterations + 1):
        rhs = sigma * x - qs + A.T @ (rho * z - y)
        x_tilde = inv @ rhs
        z_tilde = A @ x_tilde

        x = relaxation * x_tilde + (1.0 - relaxation) * x
        z_relaxed = relaxation * z_tilde + (1.0 - relaxation) * z
        z_new = np.clip(z_relaxed + y / rho, l, u) if m else z
        dy = rho * (z_relaxed - z_new)
        y = y + dy
        z = z_new

        Ax = A @ x
        Aty = A.T @ y
        r_prim = float(np.max(np.abs(Ax - z))) if m else 0.0
        r_dual = float(np.max(np.abs(Ps @ x + qs + Aty)))
        if r_prim <= tolerance and r_dual <= tolerance:
            objective = 0.5 * float(x @ P @ x) + float(q @ x)
            return QPResult("solved", x, y * scale, objective, k, r_prim, r_dual)

        if m and _certifies_primal_infeasibility(dy, A, l, u, infeasibility_eps):
            return QPResult("primal_infeasible", None, dy / np.max(np.abs(dy)),
                            None, k, r_prim, r_dual)

        if adaptive_rho and k % 25 == 0 and m:
            prim_ref = max(float(np.max(np.abs(Ax))), float(np.max(np.abs(z))), 1e-12)
            dual_ref = max(float(np.max(np.abs(Ps @ x))), float(np.max(np.abs(Aty))),
                           float(np.max(np.abs(qs))) if qs.size else 0.0, 1e-12)
            ratio = (r_prim / prim_ref) / max(r_dual / dual_ref, 1e-16)
            candidate = min(max(rho * math.sqrt(ratio), 1e-6), 1e6)
            if candidate > 5.0 * rho or candidate < rho / 5.0:
                rho = candidate
                inv = np.linalg.inv(Ps + sigma * eye + rho * AtA)

    raise QPConvergenceError(max_iterations, r_prim, r_dual)
