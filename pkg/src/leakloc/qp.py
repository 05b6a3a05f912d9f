"""Convex quadratic programs: ``min 0.5 x'Px + q'x`` s.t. ``A_eq x = b_eq``, ``A_in x <= b_in``.

Equality-only problems go straight to the KKT system.  With inequalities an
ADMM operator-splitting loop (the OSQP iteration) finds the active set
approximately, and a polishing phase solves the equality-constrained problem
on that set, swapping rows until the KKT conditions hold exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import Infeasible, SingularKKT, SolverDiverged


@dataclass
class QPDiagnostics:
    method: str
    iterations: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    objective: float = 0.0
    objective_trace: list[float] = field(default_factory=list)
    polished: bool = False
    active: list[int] = field(default_factory=list)
    multipliers_eq: np.ndarray | None = None
    multipliers_ineq: np.ndarray | None = None
    rho_updates: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method, "iterations": self.iterations,
            "primal_residual": self.primal_residual, "dual_residual": self.dual_residual,
            "objective": self.objective, "polished": self.polished,
            "n_active": len(self.active), "rho_updates": self.rho_updates,
            "objective_trace": self.objective_trace,
        }


def _as2d(A, n):
    if A is None:
        return np.zeros((0, n))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != n:
        raise ValueError(f"constraint matrix has {A.shape[1]} columns, expected {n}")
    return A


def _objective(P, q, x):
    return float(0.5 * x @ P @ x + q @ x)


def _reduce_equalities(A, b, tol=1e-10):
    """Drop redundant equality rows; raise Infeasible if they conflict."""
    if A.shape[0] == 0:
        return A, b
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    scale = max(s[0], 1.0)
    rank = int(np.sum(s > tol * scale))
    if rank == A.shape[0]:
        return A, b
    coeff = U.T @ b
    if np.any(np.abs(coeff[rank:]) > 1e-9 * max(1.0, np.abs(b).max())):
        raise Infeasible("equality constraints are inconsistent")
    # equivalent full-row-rank system spanning the same affine set
    return s[:rank, None] * Vt[:rank], coeff[:rank]


def kkt_solve(P, q, A, b):
    """Solve the equality-constrained QP through its KKT system.

    Returns ``(x, y)`` with stationarity ``Px + q + A'y = 0``.
    """
    n = P.shape[0]
    k = A.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([-q, b])
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            sol = sla.solve(K, rhs, assume_a="sym", check_finite=False)
        except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
            raise SingularKKT(f"KKT system is singular ({exc})") from None
    if not np.all(np.isfinite(sol)):
        raise SingularKKT("KKT solve produced non-finite values")
    return sol[:n], sol[n:]


def _stationarity(P, q, Ae, ye, Ai, yi, x):
    grad = P @ x + q
    g = grad + Ae.T @ ye + Ai.T @ yi
    scale = max(1.0, np.abs(grad).max(initial=0), np.abs(q).max(initial=0),
                np.abs(Ae.T @ ye).max(initial=0), np.abs(Ai.T @ yi).max(initial=0))
    return float(np.abs(g).max(initial=0.0) / scale)


def _polish(P, q, Ae, be, Ai, bi, x0, yi0, tol, max_swaps=None):
    """Active-set refinement started from the ADMM point."""
    m = Ai.shape[0]
    scale_b = max(1.0, np.abs(bi).max(initial=0))
    slack = bi - Ai @ x0
    active = (yi0 > 1e-7 * max(1.0, np.abs(yi0).max(initial=0))) | (slack < 1e-6 * scale_b)
    max_swaps = max_swaps or 3 * m + 10
    seen = set()
    for _ in range(max_swaps):
        key = active.tobytes()
        if key in seen:
            break
        seen.add(key)
        idx = np.flatnonzero(active)
        A = np.vstack([Ae, Ai[idx]])
        b = np.concatenate([be, bi[idx]])
        try:
            A_red, b_red = _reduce_equalities(A, b)
            if A_red.shape[0] != A.shape[0]:
                # degenerate active set: keep only independent rows
                raise SingularKKT("dependent active rows")
            x, y = kkt_solve(P, q, A, b)
        except (Infeasible, SingularKKT):
            # drop the active row least supported by the ADMM multipliers
            if idx.size == 0:
                return None
            active[idx[np.argmin(yi0[idx])]] = False
            continue
        ye, ya = y[: Ae.shape[0]], y[Ae.shape[0]:]
        viol = Ai @ x - bi
        worst_viol = np.argmax(np.where(active, -np.inf, viol)) if m else 0
        if m and not active[worst_viol] and viol[worst_viol] > tol * scale_b:
            active[worst_viol] = True
            continue
        if ya.size and ya.min() < -tol * max(1.0, np.abs(ya).max()):
            active[idx[np.argmin(ya)]] = False
            continue
        yi = np.zeros(m)
        yi[idx] = np.maximum(ya, 0.0)
        return x, ye, yi, idx.tolist()
    return None


def qp_solve(
    P,
    q=None,
    A_eq=None,
    b_eq=None,
    A_ineq=None,
    b_ineq=None,
    tol: float = 1e-8,
    max_iter: int = 20000,
    rho: float = 0.1,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    polish: bool = True,
):
    """Solve a convex QP; returns ``(x, QPDiagnostics)``.

    Raises :class:`Infeasible` for conflicting constraints,
    :class:`SingularKKT` when the equality-only KKT system is singular and
    :class:`SolverDiverged` when the iterative scheme cannot meet ``tol``.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n):
        raise ValueError("P must be square")
    P = 0.5 * (P + P.T)
    q = np.zeros(n) if q is None else np.asarray(q, dtype=float)
    Ae = _as2d(A_eq, n)
    be = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=float))
    Ai = _as2d(A_ineq, n)
    bi = np.zeros(0) if b_ineq is None else np.atleast_1d(np.asarray(b_ineq, dtype=float))
    if Ae.shape[0] != be.size or Ai.shape[0] != bi.size:
        raise ValueError("constraint matrix / vector lengths differ")

    Ae_r, be_r = _reduce_equalities(Ae, be)

    if Ai.shape[0] == 0:
        x, y_r = kkt_solve(P, q, Ae_r, be_r)
        # multipliers w.r.t. the caller's rows via least squares
        ye = np.linalg.lstsq(Ae.T, -(P @ x + q), rcond=None)[0] if Ae.shape[0] else np.zeros(0)
        diag = QPDiagnostics(
            "kkt", 1,
            primal_residual=float(np.abs(Ae @ x - be).max(initial=0.0)),
            dual_residual=_stationarity(P, q, Ae, ye, Ai, np.zeros(0), x),
            objective=_objective(P, q, x),
            multipliers_eq=ye,
            multipliers_ineq=np.zeros(0),
        )
        diag.objective_trace = [diag.objective]
        return x, diag

    return _admm(P, q, Ae, be, Ai, bi, tol, max_iter, rho, sigma, alpha, polish)


def _admm(P, q, Ae, be, Ai, bi, tol, max_iter, rho0, sigma, alpha, polish):
    n = P.shape[0]
    ke, ki = Ae.shape[0], Ai.shape[0]
    C = np.vstack([Ae, Ai])
    lo = np.concatenate([be, np.full(ki, -np.inf)])
    hi = np.concatenate([be, bi])
    k = ke + ki
    eq_rows = np.arange(k) < ke

    def rho_vec(r):
        return np.where(eq_rows, 1e3 * r, r)

    def factor(r):
        rv = rho_vec(r)
        K = np.zeros((n + k, n + k))
        K[:n, :n] = P + sigma * np.eye(n)
        K[:n, n:] = C.T
        K[n:, :n] = C
        K[n:, n:] = -np.diag(1.0 / rv)
        return sla.lu_factor(K, check_finite=False), rv

    rho = rho0
    lu, rv = factor(rho)
    x = np.zeros(n)
    z = np.clip(np.zeros(k), lo, hi)
    y = np.zeros(k)
    diag = QPDiagnostics("admm")
    loose = max(tol, 1e-5)
    final = None
    it = 0
    for it in range(1, max_iter + 1):
        rhs = np.concatenate([sigma * x - q, z - y / rv])
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        x_t, nu = sol[:n], sol[n:]
        z_t = z + (nu - y) / rv
        x_new = alpha * x_t + (1 - alpha) * x
        z_mix = alpha * z_t + (1 - alpha) * z
        z_new = np.clip(z_mix + y / rv, lo, hi)
        y_new = y + rv * (z_mix - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new
        if not np.all(np.isfinite(x)):
            raise SolverDiverged("ADMM iterates became non-finite")

        if it % 10 and it != max_iter:
            continue
        Cx = C @ x
        Px = P @ x
        r_prim = np.abs(Cx - z).max()
        r_dual = np.abs(Px + q + C.T @ y).max()
        diag.objective_trace.append(_objective(P, q, x))
        s_prim = max(np.abs(Cx).max(), np.abs(z).max(), 1.0)
        s_dual = max(np.abs(Px).max(), np.abs(C.T @ y).max(), np.abs(q).max(), 1.0)

        # primal infeasibility certificate (OSQP)
        ndy = np.abs(dy).max()
        if ndy > 1e-12:
            hi_f = np.where(np.isfinite(hi), hi, 0.0)
            lo_f = np.where(np.isfinite(lo), lo, 0.0)
            support = hi_f @ np.maximum(dy, 0) + lo_f @ np.minimum(dy, 0)
            if (np.abs(C.T @ dy).max() <= 1e-10 * ndy and support < -1e-10 * ndy
                    and np.all((dy <= 0) | np.isfinite(hi)) and np.all((dy >= 0) | np.isfinite(lo))):
                raise Infeasible("constraints admit no feasible point (ADMM certificate)")

        tight = r_prim <= tol * s_prim and r_dual <= tol * s_dual
        if polish and (r_prim <= loose * s_prim and r_dual <= loose * s_dual or tight):
            res = _polish(P, q, Ae, be, Ai, bi, x, y[ke:], tol)
            if res is not None:
                final = res
                diag.polished = True
                break
        if tight:
            final = (x, y[:ke], np.maximum(y[ke:], 0.0), np.flatnonzero(Ai @ x >= bi - tol).tolist())
            break
        # rebalance rho when residuals are far apart (deterministic schedule)
        if it % 50 == 0:
            ratio = np.sqrt((r_prim / s_prim) / max(r_dual / s_dual, 1e-30))
            if ratio > 5 or ratio < 0.2:
                rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                lu, rv = factor(rho)
                diag.rho_updates += 1

    if final is None:
        raise SolverDiverged(f"ADMM did not reach tolerance {tol} in {max_iter} iterations")
    x, ye, yi, active = final
    diag.iterations = it
    diag.active = list(active)
    diag.multipliers_eq, diag.multipliers_ineq = ye, yi
    diag.primal_residual = float(max(np.abs(Ae @ x - be).max(initial=0.0),
                                     np.maximum(Ai @ x - bi, 0.0).max(initial=0.0)))
    diag.dual_residual = _stationarity(P, q, Ae, ye, Ai, yi, x)
    diag.objective = _objective(P, q, x)
    diag.objective_trace.append(diag.objective)
    if diag.primal_residual > tol * max(1.0, np.abs(np.concatenate([be, bi])).max()):
        raise SolverDiverged(f"final primal residual {diag.primal_residual:.2e} exceeds {tol}")
    return x, diag
