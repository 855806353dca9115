"""Dense primal-dual interior-point LP solver with active-set polishing.

Solves

    minimize    c^T x
    subject to  A x = b
                G x <= h

with ``x`` free.  Problem sizes in this package are small (a few hundred
variables), so everything is dense numpy.  After the interior-point phase
converges the optimal partition is read off the complementarity pairs and,
when the active constraint matrix allows it, the vertex solution and its
multipliers are recomputed exactly from the active set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LPSolution", "solve_lp", "LinfSolution", "min_linf_norm"]

_RANK_RTOL = 1e-9


@dataclass(frozen=True)
class LPSolution:
    """Result of :func:`solve_lp`.

    ``eq_sensitivity`` is the derivative of the optimal value with respect to
    ``b`` and ``ineq_multipliers`` are the (nonnegative) multipliers of
    ``G x <= h``.
    """

    status: str  # "optimal" | "max-iter"
    x: np.ndarray
    value: float
    eq_sensitivity: np.ndarray
    ineq_multipliers: np.ndarray
    active: np.ndarray
    dual_unique: bool
    primal_unique: bool
    iterations: int


def _rank(mat: np.ndarray) -> int:
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(sv > _RANK_RTOL * max(1.0, sv[0])))


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_lp(
    c: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    tol: float = 1e-11,
    max_iter: int = 100,
) -> LPSolution:
    """Mehrotra predictor-corrector on the KKT system of the LP above.

    ``A`` must have full row rank; callers reduce redundant equalities first.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, c.size)
    b = np.asarray(b, dtype=float).reshape(-1)
    G = np.asarray(G, dtype=float).reshape(-1, c.size)
    h = np.asarray(h, dtype=float).reshape(-1)
    nx, ne, ni = c.size, A.shape[0], G.shape[0]

    x = np.zeros(nx)
    y = np.zeros(ne)
    s = np.maximum(h - G @ x, 1.0)
    lam = np.ones(ni)

    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(c)
    hnorm = 1.0 + np.linalg.norm(h)
    kkt = np.zeros((nx + ne, nx + ne))
    reg = 1e-14

    status = "max-iter"
    it = 0
    for it in range(1, max_iter + 1):
        rd = c + A.T @ y + G.T @ lam
        rp = A @ x - b
        ri = G @ x + s - h
        mu = float(s @ lam) / max(ni, 1)
        gap = float(s @ lam) / (1.0 + abs(float(c @ x)))
        if (
            np.linalg.norm(rp) / bnorm < tol
            and np.linalg.norm(rd) / cnorm < tol
            and np.linalg.norm(ri) / hnorm < tol
            and gap < tol
        ):
            status = "optimal"
            break

        d = lam / s
        kkt[:nx, :nx] = G.T @ (d[:, None] * G)
        kkt[:nx, :nx] += reg * np.eye(nx)
        kkt[:nx, nx:] = A.T
        kkt[nx:, :nx] = A
        kkt[nx:, nx:] = -reg * np.eye(ne)
        lu_rhs_base = -rd

        def newton(rc: np.ndarray) -> tuple[np.ndarray, ...]:
            rhs = np.concatenate([lu_rhs_base - G.T @ ((rc + lam * ri) / s), -rp])
            sol = np.linalg.solve(kkt, rhs)
            dx, dy = sol[:nx], sol[nx:]
            dlam = (rc + lam * ri) / s + d * (G @ dx)
            ds = -ri - G @ dx
            return dx, dy, dlam, ds

        dx, dy, dlam, ds = newton(-s * lam)
        a_aff = min(_max_step(s, ds), _max_step(lam, dlam))
        mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / max(ni, 1)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, dlam, ds = newton(-s * lam - ds * dlam + sigma * mu)
        alpha = min(1.0, 0.995 * min(_max_step(s, ds), _max_step(lam, dlam)))
        x = x + alpha * dx
        y = y + alpha * dy
        lam = lam + alpha * dlam
        s = s + alpha * ds
        s = np.maximum(s, 1e-300)
        lam = np.maximum(lam, 1e-300)

    active = lam > s
    K = np.vstack([A, G[active]])
    rank_k = _rank(K)
    dual_unique = rank_k == K.shape[0]
    primal_unique = rank_k == nx
    if status == "optimal" and dual_unique:
        mult = np.linalg.lstsq(K.T, -c, rcond=None)[0]
        if np.all(mult[ne:] >= -1e-9):
            y = mult[:ne]
            lam = np.zeros(ni)
            lam[active] = np.maximum(mult[ne:], 0.0)
    if status == "optimal" and primal_unique:
        rhs = np.concatenate([b, h[active]])
        x_vertex = np.linalg.lstsq(K, rhs, rcond=None)[0]
        if np.linalg.norm(K @ x_vertex - rhs) <= 1e-9 * (1.0 + np.linalg.norm(rhs)) and np.all(
            G @ x_vertex <= h + 1e-9 * hnorm
        ):
            x = x_vertex
    return LPSolution(
        status=status,
        x=x,
        value=float(c @ x),
        eq_sensitivity=-y,
        ineq_multipliers=lam,
        active=active,
        dual_unique=bool(dual_unique),
        primal_unique=bool(primal_unique),
        iterations=it,
    )


@dataclass(frozen=True)
class LinfSolution:
    status: str  # "optimal" | "infeasible-equalities" | "unbounded-guard"
    value: float
    z: np.ndarray
    eq_sensitivity: np.ndarray
    degenerate: bool


def min_linf_norm(A: np.ndarray, b: np.ndarray, eq_tol: float = 1e-9) -> LinfSolution:
    """Solve ``min v  s.t.  A z = b, -v <= z_i <= v``.

    Zero columns of ``A`` are fixed at zero and redundant rows are removed
    through an SVD before the LP is handed to :func:`solve_lp`; the returned
    sensitivity is expressed for the original rows.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    nc, ng = A.shape
    if nc == 0:
        return LinfSolution("optimal", 0.0, np.zeros(ng), np.zeros(0), False)

    scale = np.abs(A).max() if A.size else 0.0
    keep = np.linalg.norm(A, axis=0) > 1e-13 * max(scale, 1.0) if ng else np.zeros(0, bool)
    Ak = A[:, keep]
    if Ak.shape[1] == 0:
        if np.all(np.abs(b) <= eq_tol * (1.0 + np.abs(b).max())):
            return LinfSolution("optimal", 0.0, np.zeros(ng), np.zeros(nc), True)
        return LinfSolution("infeasible-equalities", np.inf, np.zeros(ng), np.zeros(nc), True)

    U, sv, Vt = np.linalg.svd(Ak, full_matrices=False)
    r = int(np.sum(sv > _RANK_RTOL * sv[0]))
    U, sv, Vt = U[:, :r], sv[:r], Vt[:r]
    b_red = U.T @ b
    resid = b - U @ b_red
    if np.linalg.norm(resid) > eq_tol * (1.0 + np.linalg.norm(b)):
        return LinfSolution("infeasible-equalities", np.inf, np.zeros(ng), np.zeros(nc), True)
    A_red = sv[:, None] * Vt

    k = Ak.shape[1]
    # variables (z, v); rows z - v <= 0 and -z - v <= 0
    cost = np.zeros(k + 1)
    cost[-1] = 1.0
    eye = np.eye(k)
    ones = np.ones((k, 1))
    G = np.block([[eye, -ones], [-eye, -ones]])
    h = np.zeros(2 * k)
    Aeq = np.hstack([A_red, np.zeros((r, 1))])
    sol = solve_lp(cost, Aeq, b_red, G, h)

    z = np.zeros(ng)
    z[keep] = sol.x[:k]
    sens = U @ sol.eq_sensitivity
    status = "optimal" if sol.status == "optimal" else "unbounded-guard"
    degenerate = (not sol.dual_unique) or r < nc
    return LinfSolution(status, float(sol.x[-1]), z, sens, bool(degenerate))
