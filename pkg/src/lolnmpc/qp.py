"""Dense convex QP solver.

Solves::

    min  0.5 x'Hx + g'x + 0.5 * sum_i w_i * dist(a_i'x, [ls_i, us_i])**2
    s.t. A_eq x = b_eq
         lb <= C x <= ub

with ``H`` positive definite. Hard rows are handled by the Goldfarb-Idnani
dual active-set method (Cholesky factor kept in product form and updated
with Givens rotations). Soft rows carry a squared-hinge penalty, which is the
slack formulation ``w s**2`` with the slacks eliminated; their activity is
resolved by an outer semismooth Newton loop around the hard solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exceptions import MaxIterations, QpInfeasible

STATUS_OPTIMAL = 0
STATUS_INFEASIBLE = 1
STATUS_MAX_ITER = 2
STATUS_NOT_PD = 3

STATUS_NAMES = {
    STATUS_OPTIMAL: "optimal",
    STATUS_INFEASIBLE: "infeasible",
    STATUS_MAX_ITER: "max_iterations",
    STATUS_NOT_PD: "hessian_not_pd",
}

_INF = 1e20


@njit(cache=True)
def _givens(a, b):
    """Return (c, s, r) with [c s; -s c] [a; b] = [r; 0]."""
    if b == 0.0:
        return 1.0, 0.0, a
    r = np.hypot(a, b)
    return a / r, b / r, r


@njit(cache=True)
def _add_constraint(J, R, d, q):
    """Zero d[q+1:] by rotations applied to columns of J; append column to R."""
    n = J.shape[0]
    for j in range(n - 1, q, -1):
        c, s, r = _givens(d[j - 1], d[j])
        if s == 0.0:
            continue
        d[j - 1] = r
        d[j] = 0.0
        for i in range(n):
            a = J[i, j - 1]
            b = J[i, j]
            J[i, j - 1] = c * a + s * b
            J[i, j] = -s * a + c * b
    for i in range(q + 1):
        R[i, q] = d[i]


@njit(cache=True)
def _drop_constraint(J, R, q, k):
    """Remove active column k from R (q active), restoring triangular form."""
    n = J.shape[0]
    for col in range(k, q - 1):
        for i in range(q):
            R[i, col] = R[i, col + 1]
    for i in range(q):
        R[i, q - 1] = 0.0
    for col in range(k, q - 1):
        c, s, r = _givens(R[col, col], R[col + 1, col])
        if s == 0.0:
            continue
        R[col, col] = r
        R[col + 1, col] = 0.0
        for jj in range(col + 1, q - 1):
            a = R[col, jj]
            b = R[col + 1, jj]
            R[col, jj] = c * a + s * b
            R[col + 1, jj] = -s * a + c * b
        for i in range(n):
            a = J[i, col]
            b = J[i, col + 1]
            J[i, col] = c * a + s * b
            J[i, col + 1] = -s * a + c * b


@njit(cache=True)
def goldfarb_idnani(L, g, Nt, b, meq, max_iter, tol):
    """Core dual active-set iteration.

    ``L`` is the lower Cholesky factor of H. Constraints are the rows of
    ``Nt``: ``Nt[i] @ x = b[i]`` for ``i < meq``, ``>= b[i]`` otherwise.
    Returns ``(x, lam, status, iterations)`` with ``lam >= 0`` on inequalities.
    """
    n = L.shape[0]
    m = Nt.shape[0]
    # J = L^{-T}
    Linv = np.linalg.inv(L)
    J = Linv.T.copy()
    R = np.zeros((n, n))
    # unconstrained minimizer
    x = -(J @ (J.T @ g))
    active = np.empty(n, dtype=np.int64)
    u = np.zeros(n)
    q = 0
    lam = np.zeros(m)
    is_active = np.zeros(m, dtype=np.bool_)
    sign = np.ones(m)
    it = 0
    d = np.empty(n)
    z = np.empty(n)
    r = np.empty(n)

    eq_done = 0
    while True:
        # choose constraint to add
        p = -1
        if eq_done < meq:
            p = eq_done
            eq_done += 1
            s_p = Nt[p] @ x - b[p]
            if s_p > 0.0:
                sign[p] = -1.0
            s_p = sign[p] * s_p
        else:
            worst = -tol
            for i in range(meq, m):
                if is_active[i]:
                    continue
                s = Nt[i] @ x - b[i]
                # scale by row norm for a fair pick
                nrm = np.sqrt(Nt[i] @ Nt[i])
                if nrm > 0.0:
                    s = s / nrm
                if s < worst:
                    worst = s
                    p = i
            if p < 0:
                for k in range(q):
                    lam[active[k]] = u[k] * sign[active[k]]
                return x, lam, 0, it
        u_p = 0.0
        npv = sign[p] * Nt[p]
        bp = sign[p] * b[p]
        while True:
            it += 1
            if it > max_iter:
                for k in range(q):
                    lam[active[k]] = u[k] * sign[active[k]]
                return x, lam, 2, it
            # d = J' n_p
            d[:] = J.T @ npv
            # z = J2 d2
            for i in range(n):
                acc = 0.0
                for j in range(q, n):
                    acc += J[i, j] * d[j]
                z[i] = acc
            # r = R^{-1} d1 (back substitution)
            for i in range(q - 1, -1, -1):
                acc = d[i]
                for j in range(i + 1, q):
                    acc -= R[i, j] * r[j]
                r[i] = acc / R[i, i]
            # dual step length
            t1 = np.inf
            l = -1
            for k in range(q):
                if active[k] >= meq and r[k] > 1e-14:
                    ratio = u[k] / r[k]
                    if ratio < t1:
                        t1 = ratio
                        l = k
            zn = z @ npv
            znorm = np.sqrt(z @ z)
            if znorm > 1e-12 and zn > 1e-14:
                t2 = -(npv @ x - bp) / zn
            else:
                t2 = np.inf
            t = min(t1, t2)
            if t == np.inf:
                for k in range(q):
                    lam[active[k]] = u[k] * sign[active[k]]
                return x, lam, 1, it
            if t2 == np.inf:
                for k in range(q):
                    u[k] -= t * r[k]
                u_p += t
                is_active[active[l]] = False
                for k in range(l, q - 1):
                    active[k] = active[k + 1]
                    u[k] = u[k + 1]
                _drop_constraint(J, R, q, l)
                q -= 1
                continue
            for i in range(n):
                x[i] += t * z[i]
            for k in range(q):
                u[k] -= t * r[k]
            u_p += t
            if t == t2:
                _add_constraint(J, R, d, q)
                active[q] = p
                u[q] = u_p
                is_active[p] = True
                q += 1
                break
            is_active[active[l]] = False
            for k in range(l, q - 1):
                active[k] = active[k + 1]
                u[k] = u[k + 1]
            _drop_constraint(J, R, q, l)
            q -= 1


@dataclass
class DenseQp:
    """Dense QP data; any constraint block may be ``None``."""

    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    C: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    C_soft: np.ndarray | None = None
    lb_soft: np.ndarray | None = None
    ub_soft: np.ndarray | None = None
    w_soft: np.ndarray | float | None = None

    @property
    def n(self) -> int:
        return self.g.shape[0]


@dataclass
class QpResult:
    x: np.ndarray
    lam_eq: np.ndarray
    lam: np.ndarray  # C rows, lower-active positive, upper-active negative
    slack: np.ndarray  # soft-row violations at the solution
    status: int
    iterations: int
    kkt: float = field(default=np.nan)

    @property
    def status_name(self) -> str:
        return STATUS_NAMES[self.status]

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OPTIMAL


def _stack_hard(qp: DenseQp):
    n = qp.n
    cols = []
    rhs = []
    meq = 0
    if qp.A_eq is not None and qp.A_eq.shape[0]:
        cols.append(qp.A_eq)
        rhs.append(qp.b_eq)
        meq = qp.A_eq.shape[0]
    m_c = 0
    lo_idx = hi_idx = np.empty(0, dtype=int)
    if qp.C is not None and qp.C.shape[0]:
        m_c = qp.C.shape[0]
        lb = np.full(m_c, -np.inf) if qp.lb is None else np.asarray(qp.lb, dtype=float)
        ub = np.full(m_c, np.inf) if qp.ub is None else np.asarray(qp.ub, dtype=float)
        lo_idx = np.flatnonzero(lb > -_INF)
        hi_idx = np.flatnonzero(ub < _INF)
        cols.append(qp.C[lo_idx])
        rhs.append(lb[lo_idx])
        cols.append(-qp.C[hi_idx])
        rhs.append(-ub[hi_idx])
    if cols:
        N = np.ascontiguousarray(np.vstack(cols))
        b = np.concatenate(rhs)
    else:
        N = np.zeros((0, n))
        b = np.zeros(0)
    return N, b, meq, m_c, lo_idx, hi_idx


def _soft_terms(qp: DenseQp, x: np.ndarray):
    """Active soft rows at x: returns (mask_lo, mask_hi)."""
    a = qp.C_soft @ x
    lo = qp.lb_soft if qp.lb_soft is not None else np.full(a.shape, -np.inf)
    hi = qp.ub_soft if qp.ub_soft is not None else np.full(a.shape, np.inf)
    return a < lo, a > hi


def solve_dense_qp(qp: DenseQp, max_iter: int = 2000, tol: float = 1e-11,
                   max_soft_iter: int = 30) -> QpResult:
    """Solve a :class:`DenseQp`; never raises on solver failure, check ``status``."""
    H = np.asarray(qp.H, dtype=float)
    g = np.asarray(qp.g, dtype=float)
    n = g.shape[0]
    N, b, meq, m_c, lo_idx, hi_idx = _stack_hard(qp)

    has_soft = qp.C_soft is not None and qp.C_soft.shape[0] > 0
    if has_soft:
        Cs = np.asarray(qp.C_soft, dtype=float)
        w = np.broadcast_to(np.asarray(qp.w_soft, dtype=float), (Cs.shape[0],))
        lo_s = qp.lb_soft if qp.lb_soft is not None else np.full(Cs.shape[0], -np.inf)
        hi_s = qp.ub_soft if qp.ub_soft is not None else np.full(Cs.shape[0], np.inf)
        act_lo = np.zeros(Cs.shape[0], dtype=bool)
        act_hi = np.zeros(Cs.shape[0], dtype=bool)

    total_it = 0
    for _ in range(max_soft_iter if has_soft else 1):
        Hk = H
        gk = g
        if has_soft and (act_lo.any() or act_hi.any()):
            act = act_lo | act_hi
            target = np.where(act_lo, lo_s, hi_s)
            Wa = Cs[act] * w[act, None]
            Hk = H + Cs[act].T @ Wa
            gk = g - Wa.T @ target[act]
        try:
            L = np.linalg.cholesky(Hk)
        except np.linalg.LinAlgError:
            return QpResult(np.zeros(n), np.zeros(meq), np.zeros(m_c), np.zeros(0),
                            STATUS_NOT_PD, total_it)
        x, lam_all, status, it = goldfarb_idnani(L, gk, N, b, meq, max_iter, tol)
        total_it += it
        if status != STATUS_OPTIMAL or not has_soft:
            break
        new_lo, new_hi = _soft_terms(qp, x)
        # rows sitting exactly on the boundary keep their previous activity
        a = Cs @ x
        on_lo = np.isclose(a, lo_s, rtol=0, atol=1e-12)
        on_hi = np.isclose(a, hi_s, rtol=0, atol=1e-12)
        new_lo = np.where(on_lo, act_lo, new_lo)
        new_hi = np.where(on_hi, act_hi, new_hi)
        if np.array_equal(new_lo, act_lo) and np.array_equal(new_hi, act_hi):
            break
        act_lo, act_hi = new_lo, new_hi
    else:
        status = STATUS_MAX_ITER

    lam_eq = lam_all[:meq].copy()
    lam = np.zeros(m_c)
    n_lo = lo_idx.size
    lam[lo_idx] += lam_all[meq : meq + n_lo]
    lam[hi_idx] -= lam_all[meq + n_lo :]
    if has_soft:
        a = Cs @ x
        slack = np.maximum(a - hi_s, 0.0) + np.maximum(lo_s - a, 0.0)
    else:
        slack = np.zeros(0)
    res = QpResult(x, lam_eq, lam, slack, status, total_it)
    res.kkt = kkt_residual(qp, res)
    return res


def kkt_residual(qp: DenseQp, res: QpResult) -> float:
    """Infinity norm of stationarity, primal feasibility and complementarity."""
    x = res.x
    grad = qp.H @ x + qp.g
    if qp.C_soft is not None and qp.C_soft.shape[0]:
        a = qp.C_soft @ x
        lo = qp.lb_soft if qp.lb_soft is not None else np.full(a.shape, -np.inf)
        hi = qp.ub_soft if qp.ub_soft is not None else np.full(a.shape, np.inf)
        w = np.broadcast_to(np.asarray(qp.w_soft, dtype=float), a.shape)
        viol = np.maximum(a - hi, 0.0) - np.maximum(lo - a, 0.0)
        grad = grad + qp.C_soft.T @ (w * viol)
    parts = [0.0]
    if qp.A_eq is not None and qp.A_eq.shape[0]:
        grad = grad - qp.A_eq.T @ res.lam_eq
        parts.append(np.max(np.abs(qp.A_eq @ x - qp.b_eq)))
    if qp.C is not None and qp.C.shape[0]:
        grad = grad - qp.C.T @ res.lam
        cx = qp.C @ x
        lb = qp.lb if qp.lb is not None else np.full(cx.shape, -np.inf)
        ub = qp.ub if qp.ub is not None else np.full(cx.shape, np.inf)
        parts.append(np.max(np.maximum(lb - cx, 0.0)))
        parts.append(np.max(np.maximum(cx - ub, 0.0)))
        lam_lo = np.maximum(res.lam, 0.0)
        lam_hi = np.maximum(-res.lam, 0.0)
        with np.errstate(invalid="ignore"):
            comp_lo = np.where(lam_lo > 0, lam_lo * (cx - lb), 0.0)
            comp_hi = np.where(lam_hi > 0, lam_hi * (ub - cx), 0.0)
        parts.append(np.max(np.abs(comp_lo)))
        parts.append(np.max(np.abs(comp_hi)))
    parts.append(np.max(np.abs(grad)))
    return float(max(parts))


def solve_or_raise(qp: DenseQp, **kwargs) -> QpResult:
    res = solve_dense_qp(qp, **kwargs)
    if res.status == STATUS_INFEASIBLE:
        raise QpInfeasible("hard constraints are inconsistent")
    if res.status == STATUS_MAX_ITER:
        raise MaxIterations(f"QP did not converge in {res.iterations} iterations")
    if res.status == STATUS_NOT_PD:
        raise QpInfeasible("Hessian is not positive definite")
    return res
