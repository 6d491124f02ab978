"""Dense convex quadratic programming.

Solves min 0.5 x'Px + q'x subject to A x = b and G x <= h with a dual
active-set method (Goldfarb-Idnani): start at the unconstrained minimum,
repeatedly drive the most violated constraint to tightness with exact
primal/dual step lengths, dropping blocking constraints as their
multipliers hit zero. The method needs no feasible starting point,
terminates with near machine-precision KKT residuals on well-scaled
problems, certifies infeasibility via an unbounded dual step, and is
fully deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve


@dataclass(frozen=True)
class QuadraticProgram:
    """Dense QP data: symmetric PSD cost, optional equalities/inequalities."""

    cost_matrix: np.ndarray
    cost_vector: np.ndarray
    eq_matrix: np.ndarray = None
    eq_vector: np.ndarray = None
    ineq_matrix: np.ndarray = None
    ineq_vector: np.ndarray = None

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.cost_matrix, dtype=float))
        q = np.atleast_1d(np.asarray(self.cost_vector, dtype=float))
        n = q.size
        if p.shape != (n, n):
            raise ValueError(f"cost matrix shape {p.shape} does not match vector size {n}")
        if not np.allclose(p, p.T, rtol=0, atol=1e-10):
            raise ValueError("cost matrix must be symmetric")
        a = np.zeros((0, n)) if self.eq_matrix is None else np.atleast_2d(
            np.asarray(self.eq_matrix, dtype=float))
        b = np.zeros(0) if self.eq_vector is None else np.atleast_1d(
            np.asarray(self.eq_vector, dtype=float))
        g = np.zeros((0, n)) if self.ineq_matrix is None else np.atleast_2d(
            np.asarray(self.ineq_matrix, dtype=float))
        h = np.zeros(0) if self.ineq_vector is None else np.atleast_1d(
            np.asarray(self.ineq_vector, dtype=float))
        if a.shape != (b.size, n):
            raise ValueError(f"equality block shapes inconsistent: {a.shape} vs {b.size}")
        if g.shape != (h.size, n):
            raise ValueError(f"inequality block shapes inconsistent: {g.shape} vs {h.size}")
        object.__setattr__(self, "cost_matrix", p)
        object.__setattr__(self, "cost_vector", q)
        object.__setattr__(self, "eq_matrix", a)
        object.__setattr__(self, "eq_vector", b)
        object.__setattr__(self, "ineq_matrix", g)
        object.__setattr__(self, "ineq_vector", h)

    @property
    def n(self) -> int:
        return self.cost_vector.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.cost_matrix @ x + self.cost_vector @ x)

    def max_violation(self, x) -> float:
        """Largest constraint violation at ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.eq_vector.size:
            worst = float(np.max(np.abs(self.eq_matrix @ x - self.eq_vector)))
        if self.ineq_vector.size:
            worst = max(worst, float(np.max(self.ineq_matrix @ x - self.ineq_vector)))
        return worst


@dataclass
class QpSolution:
    """Primal solution with multipliers and solver diagnostics."""

    x: np.ndarray
    status: str  # "optimal" | "infeasible" | "max_iter"
    iterations: int
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    active: tuple
    kkt_residual: float
    most_violated: tuple | None = None  # ("eq"|"ineq", row index)
    solve_time: float = 0.0


def _chol_or_jitter(p: np.ndarray) -> np.ndarray:
    """Cholesky of the cost matrix, adding a small jitter if only PSD."""
    try:
        return np.linalg.cholesky(p)
    except np.linalg.LinAlgError:
        scale = max(float(np.trace(p)) / p.shape[0], 1.0)
        pj = p + (1e-10 * scale) * np.eye(p.shape[0])
        try:
            return np.linalg.cholesky(pj)
        except np.linalg.LinAlgError:
            raise ValueError("cost matrix is not positive semidefinite") from None


def _reduce_equalities(a: np.ndarray, b: np.ndarray):
    """Drop linearly dependent equality rows; detect inconsistency.

    Returns (a_red, b_red, kept_indices, inconsistent_row_or_None).
    """
    me = a.shape[0]
    if me == 0:
        return a, b, np.arange(0), None
    rank = np.linalg.matrix_rank(a, tol=1e-11 * max(1.0, float(np.abs(a).max())))
    if rank == me:
        return a, b, np.arange(me), None
    from scipy.linalg import qr

    _, _, piv = qr(a.T, mode="economic", pivoting=True)
    keep = np.sort(piv[:rank])
    a_red, b_red = a[keep], b[keep]
    x_ls, *_ = np.linalg.lstsq(a_red, b_red, rcond=None)
    resid = a @ x_ls - b
    bad = int(np.argmax(np.abs(resid)))
    if np.abs(resid[bad]) > 1e-8 * (1.0 + abs(b[bad])):
        return a_red, b_red, keep, bad
    return a_red, b_red, keep, None


def _kkt_residual(qp: QuadraticProgram, x, lam, mu) -> float:
    r = qp.cost_matrix @ x + qp.cost_vector
    if qp.eq_vector.size:
        r = r + qp.eq_matrix.T @ lam
    if qp.ineq_vector.size:
        r = r + qp.ineq_matrix.T @ mu
    worst = float(np.max(np.abs(r))) if r.size else 0.0
    if qp.eq_vector.size:
        worst = max(worst, float(np.max(np.abs(qp.eq_matrix @ x - qp.eq_vector))))
    if qp.ineq_vector.size:
        slack = qp.ineq_vector - qp.ineq_matrix @ x
        worst = max(worst, float(np.max(-slack)), float(np.max(-mu)))
        worst = max(worst, float(np.max(np.abs(mu * slack))))
    return worst


def _try_active_hint(qp: QuadraticProgram, hint, tol: float):
    """Single KKT solve on a hinted active set; None when the hint is stale."""
    n = qp.n
    g, h = qp.ineq_matrix, qp.ineq_vector
    a, b = qp.eq_matrix, qp.eq_vector
    idx = sorted({int(i) for i in hint if 0 <= int(i) < h.size})
    rows = np.vstack([a, g[idx]])
    rhs = np.concatenate([b, h[idx]])
    na = rows.shape[0]
    kkt = np.zeros((n + na, n + na))
    kkt[:n, :n] = qp.cost_matrix
    kkt[:n, n:] = rows.T
    kkt[n:, :n] = rows
    try:
        sol = np.linalg.solve(kkt, np.concatenate([-qp.cost_vector, rhs]))
    except np.linalg.LinAlgError:
        return None
    x = sol[:n]
    lam = sol[n: n + b.size]
    mu_act = sol[n + b.size:]
    if mu_act.size and float(np.min(mu_act)) < -1e-9:
        return None
    scale = 1.0 + (float(np.max(np.abs(h))) if h.size else 0.0)
    if h.size and float(np.max(g @ x - h)) > 1e-9 * scale:
        return None
    mu = np.zeros(h.size)
    mu[idx] = np.maximum(mu_act, 0.0)
    res = _kkt_residual(qp, x, lam, mu)
    if res > tol:
        return None
    return QpSolution(x=x, status="optimal", iterations=1, eq_multipliers=lam,
                      ineq_multipliers=mu, active=tuple(idx), kkt_residual=res)


class _DualActiveSet:
    """Goldfarb-Idnani iteration state over the internal ">=" normal form."""

    def __init__(self, p, q, chol, n_eq):
        self.p = p
        self.chol = chol
        self.n = q.size
        self.n_eq = n_eq  # ids below this are equalities (never dropped)
        self.x = cho_solve((chol, True), -q)
        self.ids: list[int] = []
        self.u = np.zeros(0)
        self.normals = np.zeros((0, self.n))
        self.signs: dict[int, float] = {}
        self.iterations = 0
        self.p_scale = max(float(np.trace(p)) / self.n, 1e-12)

    def _saddle(self, npl):
        na = len(self.ids)
        if na == 0:
            return cho_solve((self.chol, True), npl), np.zeros(0)
        kkt = np.zeros((self.n + na, self.n + na))
        kkt[: self.n, : self.n] = self.p
        kkt[: self.n, self.n:] = self.normals.T
        kkt[self.n:, : self.n] = self.normals
        rhs = np.concatenate([npl, np.zeros(na)])
        try:
            sol = np.linalg.solve(kkt, rhs)
            return sol[: self.n], sol[self.n:]
        except np.linalg.LinAlgError:
            r, *_ = np.linalg.lstsq(self.normals.T, npl, rcond=None)
            return np.zeros(self.n), r

    def register_tight(self, cid, npl, sign):
        self.ids.append(cid)
        self.u = np.append(self.u, 0.0)
        self.normals = np.vstack([self.normals, npl])
        self.signs[cid] = sign

    def enter(self, cid, npl, level, sign, max_iter):
        """Drive constraint npl'x >= level to tightness; returns a status."""
        slack = float(npl @ self.x) - level
        u_plus = 0.0
        while True:
            self.iterations += 1
            if self.iterations > max_iter:
                return "max_iter"
            z, r = self._saddle(npl)
            ztn = float(z @ npl)
            z_zero = ztn <= 1e-12 * (1.0 + float(npl @ npl)) / self.p_scale
            t1 = np.inf
            block = -1
            for pos, acid in enumerate(self.ids):
                if acid >= self.n_eq and r[pos] > 1e-13:
                    ratio = max(self.u[pos], 0.0) / r[pos]
                    if ratio < t1 - 1e-15:
                        t1, block = ratio, pos
            t2 = np.inf if z_zero else -slack / ztn
            t = min(t1, t2)
            if not np.isfinite(t):
                return "infeasible"
            if len(self.ids):
                self.u = self.u - t * r
            u_plus += t
            if not z_zero and t2 <= t1:
                self.x = self.x + t * z
                self.ids.append(cid)
                self.u = np.append(self.u, u_plus)
                self.normals = np.vstack([self.normals, npl])
                self.signs[cid] = sign
                return "ok"
            if block < 0:
                return "infeasible"
            if not z_zero:
                self.x = self.x + t * z
                slack = float(npl @ self.x) - level
            del self.ids[block]
            self.u = np.delete(self.u, block)
            self.normals = np.delete(self.normals, block, axis=0)


def solve_qp(qp: QuadraticProgram, tol: float = 1e-6, max_iter: int | None = None,
             active_hint=None) -> QpSolution:
    """Solve a dense convex QP.

    ``active_hint`` (optional inequality row indices) enables a one-shot warm
    start: if the hinted active set already satisfies the KKT conditions the
    solve reduces to a single linear system. Infeasibility is reported with
    the most violated constraint, never as a silent wrong answer.
    """
    t0 = time.perf_counter()
    n = qp.n
    mi = qp.ineq_vector.size
    if max_iter is None:
        max_iter = max(200, 10 * (n + mi))

    if active_hint is not None:
        warm = _try_active_hint(qp, active_hint, tol)
        if warm is not None:
            warm.solve_time = time.perf_counter() - t0
            return warm

    chol = _chol_or_jitter(qp.cost_matrix)
    a_eq, b_eq, eq_keep, bad_eq = _reduce_equalities(qp.eq_matrix, qp.eq_vector)
    g, h = qp.ineq_matrix, qp.ineq_vector
    me = b_eq.size
    state = _DualActiveSet(qp.cost_matrix, qp.cost_vector, chol, n_eq=me)

    def most_violated_at(x):
        if mi:
            viol = g @ x - h
            i = int(np.argmax(viol))
            if viol[i] > 0:
                return ("ineq", i)
        if qp.eq_vector.size:
            r = np.abs(qp.eq_matrix @ x - qp.eq_vector)
            j = int(np.argmax(r))
            if r[j] > 1e-9 * (1.0 + abs(qp.eq_vector[j])):
                return ("eq", j)
        return None

    def finish(status, most=None):
        lam = np.zeros(qp.eq_vector.size)
        mu = np.zeros(mi)
        for pos, cid in enumerate(state.ids):
            if cid < me:
                lam[eq_keep[cid]] = -state.signs[cid] * state.u[pos]
            else:
                mu[cid - me] = max(state.u[pos], 0.0)
        res = _kkt_residual(qp, state.x, lam, mu)
        if status == "optimal" and res > tol:
            status = "max_iter"
        if status != "optimal" and most is None:
            most = most_violated_at(state.x)
        return QpSolution(
            x=state.x, status=status, iterations=max(state.iterations, 1),
            eq_multipliers=lam, ineq_multipliers=mu,
            active=tuple(sorted(cid - me for cid in state.ids if cid >= me)),
            kkt_residual=res, most_violated=most,
            solve_time=time.perf_counter() - t0,
        )

    if bad_eq is not None:
        return finish("infeasible", ("eq", bad_eq))

    # equalities first: forced active, sign-free multipliers, never dropped
    for e in range(me):
        resid = float(a_eq[e] @ state.x - b_eq[e])
        if abs(resid) <= 1e-13 * (1.0 + abs(b_eq[e])):
            state.register_tight(e, a_eq[e].copy(), 1.0)
            continue
        sign = 1.0 if resid < 0 else -1.0
        outcome = state.enter(e, sign * a_eq[e], sign * b_eq[e], sign, max_iter)
        if outcome == "infeasible":
            return finish("infeasible", ("eq", int(eq_keep[e])))
        if outcome == "max_iter":
            return finish("max_iter")

    while True:
        if mi:
            viol = g @ state.x - h
            worst = int(np.argmax(viol))
            worst_v = float(viol[worst])
        else:
            worst = -1
            worst_v = -np.inf
        if worst < 0 or worst_v <= 1e-10 * (1.0 + abs(h[worst])):
            return finish("optimal")
        outcome = state.enter(me + worst, -g[worst], -h[worst], 1.0, max_iter)
        if outcome == "infeasible":
            return finish("infeasible", ("ineq", worst))
        if outcome == "max_iter":
            return finish("max_iter")
