"""Sequential quadratic programming for box-bounded nonlinear programs.

The solver iterates: quadratic objective model with damped L-BFGS
curvature, linearized inequality constraints (soft rows get slack
variables with an L1 penalty, hard rows enter the subproblem directly),
box bounds handled natively, merit-function backtracking for global
behavior. Everything is dense numpy; problem sizes stay in the hundreds
of variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class SqpError(RuntimeError):
    """Raised when a callback returns non-finite values."""


@dataclass(frozen=True)
class SqpConfig:
    max_iterations: int = 12
    step_tolerance: float = 1e-3
    memory: int = 10
    qp_max_iterations: int = 0
    damping: float = 1e-8

    def __post_init__(self):
        if self.max_iterations < 1 or self.memory < 1:
            raise ValueError("iteration and memory limits must be positive")
        if self.step_tolerance <= 0 or self.damping <= 0:
            raise ValueError("tolerances must be positive")
        if self.qp_max_iterations < 0:
            raise ValueError("QP iteration cap must be nonnegative")


@dataclass
class NlpProblem:
    """Nonlinear program with box bounds and (optionally) soft rows.

    `objective(u) -> (value, gradient)`; `constraints(u) -> (g, jacobian)`
    with feasibility meaning g <= 0. Rows where `soft` is True are
    penalized through slacks at weight `penalty`; the remaining rows are
    kept as hard linear constraints of each subproblem (they must be
    linear in u for that to be exact).
    """

    objective: Callable[[np.ndarray], tuple]
    lower: np.ndarray
    upper: np.ndarray
    constraints: Callable[[np.ndarray], tuple] | None = None
    soft: np.ndarray | None = None
    penalty: float = 10.0

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("bounds must be matching vectors")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bounds exceed upper bounds")
        if self.penalty <= 0:
            raise ValueError("penalty must be positive")
        if self.soft is not None:
            self.soft = np.asarray(self.soft, dtype=bool)

    @property
    def dim(self) -> int:
        return len(self.lower)


@dataclass(frozen=True)
class SqpResult:
    solution: np.ndarray
    objective: float
    violation_max: float
    iterations: int
    termination: str
    merit_history: tuple = ()
    trace: tuple = ()


class LbfgsCurvature:
    """Limited-memory quasi-Newton curvature with Powell damping.

    Keeps (s, y) pairs; `solve` applies the inverse approximation via the
    two-loop recursion, `matrix` materializes the direct approximation B
    through the compact representation. Damping rewrites y whenever the
    curvature s'y falls below both the relative floor and 0.2 s'Bs, so B
    stays positive definite.
    """

    def __init__(self, dim: int, memory: int = 10, damping: float = 1e-8):
        if dim < 1 or memory < 1:
            raise ValueError("dimension and memory must be positive")
        self.dim = dim
        self.memory = memory
        self.damping = damping
        self.s_list: list[np.ndarray] = []
        self.y_list: list[np.ndarray] = []
        self.sigma = 1.0
        self._cached: np.ndarray | None = None

    def update(self, s: np.ndarray, y: np.ndarray) -> None:
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        ns = np.linalg.norm(s)
        if ns <= 1e-14:
            return
        bs = self.matvec(s)
        sbs = float(s @ bs)
        sy = float(s @ y)
        floor = max(self.damping * ns * np.linalg.norm(y), 0.2 * sbs)
        if sy < floor and sbs > 0:
            theta = 0.8 * sbs / (sbs - sy)
            y = theta * y + (1.0 - theta) * bs
            sy = float(s @ y)
        if sy <= 1e-14:
            return
        self.s_list.append(s)
        self.y_list.append(y)
        if len(self.s_list) > self.memory:
            self.s_list.pop(0)
            self.y_list.pop(0)
        self.sigma = float(y @ y) / sy
        self._cached = None

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Two-loop recursion: action of the inverse approximation."""
        q = np.asarray(v, dtype=float).copy()
        alphas = []
        rhos = [1.0 / float(s @ y) for s, y in zip(self.s_list, self.y_list)]
        for s, y, rho in zip(reversed(self.s_list), reversed(self.y_list),
                             reversed(rhos)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        q /= self.sigma
        for (s, y, rho), a in zip(zip(self.s_list, self.y_list, rhos),
                                  reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return q

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix() @ v

    def matrix(self) -> np.ndarray:
        """Dense direct approximation B via the compact representation."""
        if self._cached is not None:
            return self._cached
        b = self.sigma * np.eye(self.dim)
        if self.s_list:
            s = np.column_stack(self.s_list)
            y = np.column_stack(self.y_list)
            sts = s.T @ s
            sty = s.T @ y
            dvec = np.diag(np.diag(sty))
            lmat = np.tril(sty, k=-1)
            middle = np.block([[self.sigma * sts, lmat],
                               [lmat.T, -dvec]])
            wide = np.hstack([self.sigma * s, y])
            try:
                b = b - wide @ np.linalg.solve(middle, wide.T)
            except np.linalg.LinAlgError:
                # degenerate pair set: fall back to recursive dense BFGS
                b = self.sigma * np.eye(self.dim)
                for si, yi in zip(self.s_list, self.y_list):
                    bs = b @ si
                    b = b - np.outer(bs, bs) / (si @ bs) \
                        + np.outer(yi, yi) / (yi @ si)
            b = 0.5 * (b + b.T)
        self._cached = b
        return b


def _eqp_step(q: np.ndarray, grad: np.ndarray, a: np.ndarray,
              work: list, unit_col: np.ndarray) -> tuple:
    """Newton step on the working set: minimize the quadratic model with
    every working row held at equality.

    Rows that bound a single coordinate pin it to zero motion, so the
    dense solve only covers the free coordinates plus the remaining
    general rows. Returns (dx, lam) with lam aligned to `work` order.
    """
    n = len(grad)
    if not work:
        try:
            dx = np.linalg.solve(q, -grad)
        except np.linalg.LinAlgError:
            dx, *_ = np.linalg.lstsq(q, -grad, rcond=None)
        return dx, np.empty(0)
    fixed_of: dict[int, int] = {}
    rest = []
    for pos, i in enumerate(work):
        j = int(unit_col[i])
        if j >= 0 and j not in fixed_of:
            fixed_of[j] = pos
        else:
            rest.append(pos)
    free = np.ones(n, dtype=bool)
    if fixed_of:
        free[list(fixed_of)] = False
    # rows whose support is entirely pinned are redundant here: they hold
    # automatically and carry a zero multiplier
    general = [pos for pos in rest if np.any(a[work[pos]][free])]
    g_rows = [work[pos] for pos in general]
    nf = int(free.sum())
    ng = len(g_rows)
    dx = np.zeros(n)
    lam_g = np.zeros(ng)
    if nf:
        ag = a[g_rows][:, free] if ng else np.zeros((0, nf))
        kkt = np.block([[q[np.ix_(free, free)], ag.T],
                        [ag, np.zeros((ng, ng))]])
        rhs = np.concatenate([-grad[free], np.zeros(ng)])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        dx[free] = sol[:nf]
        lam_g = sol[nf:]
    elif ng:
        lam_g, *_ = np.linalg.lstsq(a[g_rows].T, -(q @ dx + grad),
                                    rcond=None)
    resid = q @ dx + grad
    if ng:
        resid = resid + a[g_rows].T @ lam_g
    lam = np.zeros(len(work))
    for k, pos in enumerate(general):
        lam[pos] = lam_g[k]
    for j, pos in fixed_of.items():
        lam[pos] = -resid[j] / a[work[pos], j]
    return dx, lam


def solve_qp(q: np.ndarray, c: np.ndarray, a: np.ndarray, b: np.ndarray,
             x0: np.ndarray, max_iterations: int = 0,
             warm_active: tuple = ()) -> tuple:
    """Convex QP min 0.5 x'Qx + c'x s.t. a x <= b by primal active set.

    `x0` must be feasible. Returns (x, active, iterations, converged);
    when the iteration cap is hit, the best feasible point reached so far
    comes back with converged = False.
    """
    n = len(c)
    n_rows = len(b)
    if max_iterations <= 0:
        max_iterations = 10 * (n + n_rows) + 20
    x = np.asarray(x0, dtype=float).copy()
    work: list[int] = [i for i in warm_active
                       if 0 <= i < n_rows and abs(a[i] @ x - b[i]) <= 1e-9]
    nnz = np.count_nonzero(a, axis=1)
    unit_col = np.where(nnz == 1, np.argmax(a != 0, axis=1), -1)
    tol = 1e-10
    for it in range(1, max_iterations + 1):
        grad = q @ x + c
        nw = len(work)
        dx, lam = _eqp_step(q, grad, a, work, unit_col)
        if np.max(np.abs(dx), initial=0.0) <= tol:
            if nw == 0 or np.min(lam) >= -tol:
                return x, tuple(work), it, True
            work.pop(int(np.argmin(lam)))
            continue
        mask = np.ones(n_rows, dtype=bool)
        mask[work] = False
        adx = a[mask] @ dx
        rows = np.flatnonzero(mask)
        pos = adx > tol
        alpha = 1.0
        blocking = -1
        if np.any(pos):
            gaps = (b[rows[pos]] - a[rows[pos]] @ x) / adx[pos]
            j = int(np.argmin(gaps))
            if gaps[j] < alpha:
                alpha = max(gaps[j], 0.0)
                blocking = int(rows[pos][j])
        x = x + alpha * dx
        if blocking >= 0:
            work.append(blocking)
            if len(work) > n:
                work.pop(0)
    return x, tuple(work), max_iterations, False


def qp_subproblem(b_mat: np.ndarray, grad: np.ndarray, g_vals: np.ndarray,
                  g_jac: np.ndarray, soft: np.ndarray, penalty: float,
                  step_lower: np.ndarray, step_upper: np.ndarray,
                  max_iterations: int = 0, warm_active: tuple = ()) -> tuple:
    """One SQP step: quadratic model under linearized constraints.

    Soft rows receive one slack each (cost `penalty`, kept nonnegative) so
    the subproblem is always feasible; hard rows and the step box enter
    directly. Returns (step, active, iterations, converged).
    """
    d = len(grad)
    n_g = len(g_vals)
    soft_rows = np.flatnonzero(soft)
    hard_rows = np.flatnonzero(~soft)
    n_s = len(soft_rows)
    n_x = d + n_s

    q = np.zeros((n_x, n_x))
    q[:d, :d] = b_mat
    # tiny slack curvature keeps the QP strictly convex
    q[range(d, n_x), range(d, n_x)] = 1e-8 * max(1.0, penalty)
    c = np.concatenate([grad, np.full(n_s, penalty)])

    rows = []
    rhs = []
    for k, i in enumerate(soft_rows):
        row = np.zeros(n_x)
        row[:d] = g_jac[i]
        row[d + k] = -1.0
        rows.append(row)
        rhs.append(-g_vals[i])
    for i in hard_rows:
        row = np.zeros(n_x)
        row[:d] = g_jac[i]
        rows.append(row)
        # never ask the QP to repair pre-existing hard violation in one
        # step beyond feasibility at p = 0
        rhs.append(max(-g_vals[i], 0.0))
    slack_block = np.zeros((n_s, n_x))
    slack_block[range(n_s), range(d, n_x)] = -1.0
    box_up = np.zeros((d, n_x))
    box_up[:, :d] = np.eye(d)
    box_dn = -box_up.copy()
    a = np.vstack([np.array(rows).reshape(n_g, n_x) if n_g else
                   np.zeros((0, n_x)), slack_block, box_up, box_dn])
    b = np.concatenate([np.array(rhs, dtype=float), np.zeros(n_s),
                        step_upper, -step_lower])

    x0 = np.zeros(n_x)
    if n_s:
        x0[d:] = np.maximum(g_vals[soft_rows], 0.0)
    # most slacks sit at their bound in the solution as well as at x0, so
    # seeding them into the working set saves the active-set buildup
    seed = {n_g + k for k in range(n_s) if g_vals[soft_rows[k]] <= 0.0}
    seed.update(i for i in warm_active if 0 <= i < len(b))
    x, active, iters, converged = solve_qp(q, c, a, b, x0, max_iterations,
                                           tuple(sorted(seed)))
    return x[:d], active, iters, converged


def _eval_objective(problem: NlpProblem, u: np.ndarray) -> tuple:
    f, grad = problem.objective(u)
    grad = np.asarray(grad, dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(grad)):
        raise SqpError("objective callback returned non-finite values")
    return float(f), grad


def _eval_constraints(problem: NlpProblem, u: np.ndarray) -> tuple:
    if problem.constraints is None:
        return np.zeros(0), np.zeros((0, problem.dim)), np.zeros(0, dtype=bool)
    out = problem.constraints(u)
    # a callback may return (g, jac, soft) when its row set is dynamic
    if len(out) == 3:
        g, jac, soft = out
        soft = np.asarray(soft, dtype=bool)
    else:
        g, jac = out
        soft = problem.soft
    g = np.asarray(g, dtype=float)
    jac = np.asarray(jac, dtype=float)
    if not np.all(np.isfinite(g)) or not np.all(np.isfinite(jac)):
        raise SqpError("constraint callback returned non-finite values")
    if soft is None:
        soft = np.ones(len(g), dtype=bool)
    if len(soft) != len(g):
        raise SqpError("soft mask length does not match constraint count")
    return g, jac, soft


def _merit(f: float, g: np.ndarray, soft: np.ndarray, penalty: float) -> float:
    if len(g) == 0:
        return f
    return f + penalty * float(np.sum(np.maximum(g[soft], 0.0)))


def solve(problem: NlpProblem, u0: np.ndarray,
          cfg: SqpConfig = SqpConfig()) -> SqpResult:
    """Run the SQP iteration from u0 (projected into the box)."""
    u = np.clip(np.asarray(u0, dtype=float), problem.lower, problem.upper)
    f, grad = _eval_objective(problem, u)
    g, jac, soft = _eval_constraints(problem, u)
    curv = LbfgsCurvature(problem.dim, cfg.memory, cfg.damping)
    merit = _merit(f, g, soft, problem.penalty)
    merits = [merit]
    trace = []
    termination = "max_iter"
    iterations = 0
    warm: tuple = ()
    for it in range(1, cfg.max_iterations + 1):
        iterations = it
        step, warm, _, qp_ok = qp_subproblem(
            curv.matrix(), grad, g, jac, soft, problem.penalty,
            problem.lower - u, problem.upper - u,
            cfg.qp_max_iterations, warm)
        if not np.all(np.isfinite(step)):
            termination = "qp_failure"
            break
        step_norm = float(np.max(np.abs(step), initial=0.0))
        if step_norm <= cfg.step_tolerance:
            termination = "tolerance"
            trace.append((it, f, _violation(g), 0.0))
            break
        if not qp_ok and step_norm > 10.0 * max(
                np.max(problem.upper - problem.lower), 1.0):
            termination = "qp_failure"
            break
        descent = float(grad @ step) - problem.penalty * float(
            np.sum(np.maximum(g[soft], 0.0))) if len(g) else float(grad @ step)
        alpha = 1.0
        accepted = False
        while alpha >= 2.0 ** -12:
            u_try = np.clip(u + alpha * step, problem.lower, problem.upper)
            f_try, grad_try = _eval_objective(problem, u_try)
            g_try, jac_try, soft_try = _eval_constraints(problem, u_try)
            m_try = _merit(f_try, g_try, soft_try, problem.penalty)
            if m_try <= merit + 1e-4 * alpha * min(descent, 0.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            termination = "tolerance"
            trace.append((it, f, _violation(g), 0.0))
            break
        s_vec = u_try - u
        curv.update(s_vec, grad_try - grad)
        u, f, grad, g, jac, soft = u_try, f_try, grad_try, g_try, jac_try, soft_try
        merit = m_try
        merits.append(merit)
        moved = float(np.max(np.abs(s_vec), initial=0.0))
        trace.append((it, f, _violation(g), moved))
        if moved <= cfg.step_tolerance:
            termination = "tolerance"
            break
    return SqpResult(solution=u, objective=f, violation_max=_violation(g),
                     iterations=iterations, termination=termination,
                     merit_history=tuple(merits), trace=tuple(trace))


def _violation(g: np.ndarray) -> float:
    return float(np.max(np.maximum(g, 0.0), initial=0.0))
