"""Dense primal active-set solver for small strictly convex QPs.

Solves::

    minimize    1/2 x' H x + f' x
    subject to  A_ineq x <= b_ineq
                A_eq x    = b_eq

A feasible starting point comes from a phase-one LP; the active-set loop then
solves one equality-constrained QP per iteration through its KKT system, so
the returned point satisfies stationarity to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class QPError(RuntimeError):
    pass


class QPInfeasibleError(QPError):
    pass


class QPUnboundedError(QPError):
    pass


class QPMaxIterError(QPError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    lam_ineq: np.ndarray
    lam_eq: np.ndarray
    objective: float
    iterations: int
    active: list

    def kkt_residuals(self, H, f, A_ineq=None, b_ineq=None, A_eq=None, b_eq=None) -> dict:
        """Stationarity, primal feasibility and complementarity residuals."""
        H, f, A_ineq, b_ineq, A_eq, b_eq = _as_arrays(H, f, A_ineq, b_ineq, A_eq, b_eq)
        grad = H @ self.x + f + A_ineq.T @ self.lam_ineq + A_eq.T @ self.lam_eq
        slack = A_ineq @ self.x - b_ineq
        return {
            "stationarity": float(np.max(np.abs(grad), initial=0.0)),
            "primal": float(
                max(
                    np.max(slack, initial=0.0),
                    np.max(np.abs(A_eq @ self.x - b_eq), initial=0.0),
                )
            ),
            "dual": float(max(0.0, -np.min(self.lam_ineq, initial=0.0))),
            "complementarity": float(np.max(np.abs(self.lam_ineq * slack), initial=0.0)),
        }


def _as_arrays(H, f, A_ineq, b_ineq, A_eq, b_eq):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = H.shape[0]
    f = np.zeros(n) if f is None else np.asarray(f, dtype=float).reshape(-1)
    if A_ineq is None:
        A_ineq, b_ineq = np.zeros((0, n)), np.zeros(0)
    if A_eq is None:
        A_eq, b_eq = np.zeros((0, n)), np.zeros(0)
    A_ineq = np.asarray(A_ineq, dtype=float).reshape(-1, n)
    b_ineq = np.asarray(b_ineq, dtype=float).reshape(-1)
    A_eq = np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.asarray(b_eq, dtype=float).reshape(-1)
    return H, f, A_ineq, b_ineq, A_eq, b_eq


def _phase_one(A_ineq, b_ineq, A_eq, b_eq, n):
    res = linprog(
        np.zeros(n),
        A_ub=A_ineq if len(b_ineq) else None,
        b_ub=b_ineq if len(b_ineq) else None,
        A_eq=A_eq if len(b_eq) else None,
        b_eq=b_eq if len(b_eq) else None,
        bounds=(None, None),
        method="highs",
    )
    if res.status == 2:
        raise QPInfeasibleError("constraints are infeasible")
    if res.status != 0:
        raise QPError(f"phase-one LP failed: {res.message}")
    return res.x


def _independent(rows: np.ndarray, candidate: np.ndarray) -> bool:
    if rows.shape[0] == 0:
        return np.linalg.norm(candidate) > 1e-12
    stacked = np.vstack([rows, candidate])
    return np.linalg.matrix_rank(stacked, tol=1e-10) == stacked.shape[0]


def _solve_kkt(H, g, Aw):
    """Equality-constrained step by the null-space method.

    Returns ``(p, lam, ray)``.  Normally ``p`` minimizes ``1/2 p'Hp + g'p``
    subject to ``Aw p = 0`` (exactly zero with ``n`` independent rows) and
    ``lam`` are the working-set multipliers.  When the reduced Hessian is
    singular along a descent direction, ``p`` is that zero-curvature
    direction and ``ray`` is True.  ``Aw`` must have full row rank.
    """
    n = H.shape[0]
    k = Aw.shape[0]
    Qf, Rf = np.linalg.qr(Aw.T, mode="complete")
    Y, Z = Qf[:, :k], Qf[:, k:]
    step = np.zeros(n)
    if k < n:
        Hz = Z.T @ H @ Z
        gz = Z.T @ g
        w, V = np.linalg.eigh(0.5 * (Hz + Hz.T))
        flat = w <= 1e-12 * max(1.0, abs(w).max())
        if np.any(flat):
            gflat = V[:, flat].T @ gz
            if np.linalg.norm(gflat) > 1e-12 * (1.0 + np.linalg.norm(g)):
                return -Z @ (V[:, flat] @ gflat), np.zeros(k), True
        inv = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, w))
        step = -Z @ (V @ (inv * (V.T @ gz)))
    lam = np.linalg.solve(Rf[:k, :k], -(Y.T @ (g + H @ step))) if k else np.zeros(0)
    return step, lam, False


def solve_qp(H, f=None, A_ineq=None, b_ineq=None, A_eq=None, b_eq=None,
             max_iter: int | None = None, feas_tol: float = 1e-10) -> QPResult:
    """Minimize ``1/2 x'Hx + f'x`` subject to linear (in)equalities.

    Multipliers follow the convention ``H x + f + A_ineq' lam_ineq +
    A_eq' lam_eq = 0`` with ``lam_ineq >= 0``.
    """
    H, f, A_ineq, b_ineq, A_eq, b_eq = _as_arrays(H, f, A_ineq, b_ineq, A_eq, b_eq)
    H = 0.5 * (H + H.T)
    n = H.shape[0]
    m, p = A_ineq.shape[0], A_eq.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + m + p) + 100

    row_scale = np.maximum(np.linalg.norm(A_ineq, axis=1), 1e-300)
    tol_rows = feas_tol * (1.0 + np.abs(b_ineq)) * np.maximum(row_scale, 1.0)

    if m == 0 and p == 0:
        x = np.zeros(n)
    else:
        x = _phase_one(A_ineq, b_ineq, A_eq, b_eq, n)

    # equalities are always in the working set
    eq_rows = []
    for r in range(p):
        if _independent(A_eq[eq_rows], A_eq[r]):
            eq_rows.append(r)
    working = []
    slack = b_ineq - A_ineq @ x
    for r in np.argsort(np.abs(slack)):
        if abs(slack[r]) > tol_rows[r]:
            break
        current = np.vstack([A_eq[eq_rows], A_ineq[working]])
        if len(eq_rows) + len(working) < n and _independent(current, A_ineq[r]):
            working.append(int(r))

    for it in range(1, max_iter + 1):
        Aw = np.vstack([A_eq[eq_rows], A_ineq[working]])
        g = H @ x + f
        step, lam_w, ray = _solve_kkt(H, g, Aw)
        if np.linalg.norm(step, np.inf) <= 1e-12 * (1.0 + np.linalg.norm(x, np.inf)):
            lam_ineq_w = lam_w[len(eq_rows):]
            if len(working) == 0 or lam_ineq_w.min() >= -1e-12:
                # polish: x is the exact minimizer on the working set
                lam_ineq = np.zeros(m)
                lam_ineq[working] = np.maximum(lam_ineq_w, 0.0)
                lam_eq = np.zeros(p)
                lam_eq[eq_rows] = lam_w[: len(eq_rows)]
                obj = float(0.5 * x @ H @ x + f @ x)
                return QPResult(x, lam_ineq, lam_eq, obj, it, sorted(working))
            # most negative multiplier, lowest row index on ties
            neg = lam_ineq_w.min()
            cand = [k for k, v in enumerate(lam_ineq_w) if v <= neg + 1e-12 * max(1.0, abs(neg))]
            drop = min(cand, key=lambda k: working[k])
            working.pop(drop)
            continue

        Ap = A_ineq @ step
        alpha = np.inf if ray else 1.0
        block = -1
        slack = b_ineq - A_ineq @ x
        in_w = np.zeros(m, dtype=bool)
        in_w[working] = True
        for r in np.flatnonzero((Ap > 1e-14) & ~in_w):
            a = max(slack[r], 0.0) / Ap[r]
            if a < alpha:
                alpha, block = a, int(r)
            elif a == alpha and block >= 0 and r < block:
                block = int(r)
        if not np.isfinite(alpha):
            raise QPUnboundedError("objective unbounded below on the feasible set")
        x = x + alpha * step
        if block >= 0:
            working.append(block)
    raise QPMaxIterError(f"active-set loop exceeded {max_iter} iterations")
