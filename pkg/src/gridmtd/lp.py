"""Dense two-phase simplex for small linear programs.

Problems are stated as ``min c^T x`` subject to ``row_lo <= A x <= row_hi``
and ``var_lo <= x <= var_hi`` (infinite bounds allowed) and rewritten into
standard equality form with nonnegative variables before pivoting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
OPT_TOL = 1e-9
DEGENERATE_SWITCH = 30  # consecutive degenerate pivots before Bland's rule


class LpError(RuntimeError):
    pass


class LpInfeasible(LpError):
    pass


class LpUnbounded(LpError):
    pass


class LpIterationLimit(LpError):
    pass


@dataclass(frozen=True)
class LpProblem:
    c: np.ndarray
    a: np.ndarray
    row_lo: np.ndarray
    row_hi: np.ndarray
    var_lo: np.ndarray
    var_hi: np.ndarray

    @classmethod
    def build(cls, c, a=None, row_lo=None, row_hi=None, var_lo=None, var_hi=None) -> "LpProblem":
        """Fill defaults: no rows, ``x >= 0``, and free rows on missing sides."""
        c = np.asarray(c, dtype=float)
        n = c.size
        a = np.zeros((0, n)) if a is None else np.atleast_2d(np.asarray(a, dtype=float))
        m = a.shape[0]
        row_lo = np.full(m, -np.inf) if row_lo is None else np.asarray(row_lo, dtype=float)
        row_hi = np.full(m, np.inf) if row_hi is None else np.asarray(row_hi, dtype=float)
        var_lo = np.zeros(n) if var_lo is None else np.asarray(var_lo, dtype=float)
        var_hi = np.full(n, np.inf) if var_hi is None else np.asarray(var_hi, dtype=float)
        p = cls(c, a, row_lo, row_hi, var_lo, var_hi)
        p.check()
        return p

    def check(self) -> None:
        m, n = self.a.shape
        if self.c.shape != (n,) or self.var_lo.shape != (n,) or self.var_hi.shape != (n,):
            raise ValueError("variable vectors do not match the constraint matrix")
        if self.row_lo.shape != (m,) or self.row_hi.shape != (m,):
            raise ValueError("row bounds do not match the constraint matrix")
        if np.any(self.row_lo > self.row_hi) or np.any(self.var_lo > self.var_hi):
            raise LpInfeasible("a lower bound exceeds its upper bound")
        if np.any(np.isnan(self.a)) or np.any(np.isnan(self.c)):
            raise ValueError("NaN in problem data")


@dataclass(frozen=True)
class LpResult:
    x: np.ndarray
    objective: float
    iterations: int


def _pivot(t: np.ndarray, i: int, j: int) -> None:
    t[i] /= t[i, j]
    col = t[:, j].copy()
    col[i] = 0.0
    t -= np.outer(col, t[i])


def _iterate(t: np.ndarray, basis: np.ndarray, allowed: np.ndarray, max_iter: int) -> int:
    """Pivot to optimality on tableau ``t`` (last row: reduced costs)."""
    m = t.shape[0] - 1
    degenerate = 0
    # relative to the cost scale, so round-off on free directions is not a ray
    tol = OPT_TOL * max(1.0, float(np.abs(t[-1, :-1]).max(initial=0.0)))
    for it in range(max_iter):
        r = t[-1, :-1]
        cand = np.flatnonzero((r < -tol) & allowed)
        if cand.size == 0:
            return it
        j = cand[0] if degenerate >= DEGENERATE_SWITCH else cand[np.argmin(r[cand])]
        col = t[:m, j]
        pos = col > PIVOT_TOL
        if not pos.any():
            raise LpUnbounded("objective is unbounded below")
        ratios = np.full(m, np.inf)
        ratios[pos] = t[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * (1.0 + abs(best)))
        i = ties[np.argmin(basis[ties])]
        degenerate = degenerate + 1 if best <= 1e-12 else 0
        _pivot(t, i, j)
        basis[i] = j
    raise LpIterationLimit(f"no optimum after {max_iter} pivots")


def _standard_form(p: LpProblem):
    """Return ``(A_eq, b, cost, recover)`` with ``A_eq y = b, y >= 0``.

    Also returns the index of a slack column that can start in the basis for
    each row (or -1).
    """
    m, n = p.a.shape
    # variable substitution x = shift + T y
    cols = []  # (var index, sign)
    shift = np.zeros(n)
    ub_rows = []  # (column index, width)
    for k in range(n):
        lo, hi = p.var_lo[k], p.var_hi[k]
        if np.isfinite(lo):
            shift[k] = lo
            cols.append((k, 1.0))
            if np.isfinite(hi):
                ub_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[k] = hi
            cols.append((k, -1.0))
        else:
            cols.append((k, 1.0))
            cols.append((k, -1.0))
    n_y = len(cols)
    t_map = np.zeros((n, n_y))
    for idx, (k, s) in enumerate(cols):
        t_map[k, idx] = s
    a_y = p.a @ t_map
    base = p.a @ shift

    rows, rhs, slack_sign = [], [], []
    for i in range(m):
        lo, hi = p.row_lo[i] - base[i], p.row_hi[i] - base[i]
        if np.isfinite(lo) and np.isfinite(hi) and hi - lo <= 1e-12 * (1 + abs(hi)):
            rows.append(a_y[i]); rhs.append(hi); slack_sign.append(0.0)
            continue
        if np.isfinite(hi):
            rows.append(a_y[i]); rhs.append(hi); slack_sign.append(1.0)
        if np.isfinite(lo):
            rows.append(a_y[i]); rhs.append(lo); slack_sign.append(-1.0)
    for col, width in ub_rows:
        e = np.zeros(n_y)
        e[col] = 1.0
        rows.append(e); rhs.append(width); slack_sign.append(1.0)

    m_eq = len(rows)
    n_slack = sum(1 for s in slack_sign if s != 0.0)
    a_eq = np.zeros((m_eq, n_y + n_slack))
    b = np.asarray(rhs, dtype=float)
    start = np.full(m_eq, -1)
    sc = n_y
    for i, (row, s) in enumerate(zip(rows, slack_sign)):
        a_eq[i, :n_y] = row
        if s != 0.0:
            a_eq[i, sc] = s
            sc += 1
    neg = b < 0
    a_eq[neg] *= -1.0
    b[neg] *= -1.0
    for i in range(m_eq):
        nz = np.flatnonzero(a_eq[i, n_y:] == 1.0)
        if nz.size:
            start[i] = n_y + nz[0]
    cost = np.concatenate([t_map.T @ p.c, np.zeros(n_slack)])
    const = float(p.c @ shift)
    return a_eq, b, cost, start, t_map, shift, const


def lp_solve(p: LpProblem, max_iter: int = 50_000) -> LpResult:
    """Minimise ``p``; raises LpInfeasible, LpUnbounded or LpIterationLimit."""
    p.check()
    a_eq, b, cost, start, t_map, shift, const = _standard_form(_equilibrated(p))
    m, n = a_eq.shape
    if m == 0:
        if np.any(cost < -OPT_TOL):
            raise LpUnbounded("objective is unbounded below")
        x = shift.copy()
        return LpResult(x, float(p.c @ x), 0)

    need_art = np.flatnonzero(start < 0)
    n_art = need_art.size
    t = np.zeros((m + 1, n + n_art + 1))
    t[:m, :n] = a_eq
    t[:m, -1] = b
    basis = start.copy()
    for k, i in enumerate(need_art):
        t[i, n + k] = 1.0
        basis[i] = n + k
    iters = 0

    if n_art:
        t[-1, :] = -t[need_art].sum(axis=0)
        t[-1, n:n + n_art] = 0.0
        allowed = np.ones(n + n_art, dtype=bool)
        iters += _iterate(t, basis, allowed, max_iter)
        if -t[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max()):
            raise LpInfeasible("no feasible point")
        # drive remaining artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= n:
                nz = np.flatnonzero(np.abs(t[i, :n]) > PIVOT_TOL)
                if nz.size:
                    _pivot(t, i, nz[0])
                    basis[i] = nz[0]
                else:
                    keep[i] = False  # redundant row
        rows = np.append(np.flatnonzero(keep), m)
        t = np.delete(t[rows], np.s_[n:n + n_art], axis=1)
        basis = basis[keep]
        m = basis.size

    t[-1, :] = 0.0
    t[-1, :n] = cost
    t[-1, -1] = 0.0
    cb = cost[basis]
    t[-1] -= cb @ t[:m]
    iters += _iterate(t, basis, np.ones(n, dtype=bool), max_iter - iters)

    y = np.zeros(n)
    y[basis] = t[:m, -1]
    # one refinement solve against the original columns
    if m:
        kept_rows = _rows_for_basis(a_eq, basis)
        try:
            yb = np.linalg.solve(a_eq[np.ix_(kept_rows, basis)], b[kept_rows])
            if np.all(yb >= -FEAS_TOL):
                y[basis] = np.maximum(yb, 0.0)
        except np.linalg.LinAlgError:
            pass
    x = shift + t_map @ y[:t_map.shape[1]]
    return LpResult(x, float(p.c @ x), iters)


def _equilibrated(p: LpProblem) -> LpProblem:
    """Same feasible set and minimiser with unit-max rows and cost.

    Absolute pivot and feasibility tolerances only make sense on a common
    scale; rows spanning many orders of magnitude otherwise mislead them.
    """
    scale = np.abs(p.a).max(axis=1, initial=0.0) if p.a.size else np.zeros(p.a.shape[0])
    scale[scale == 0.0] = 1.0
    c_scale = float(np.abs(p.c).max(initial=0.0)) or 1.0
    return LpProblem(p.c / c_scale, p.a / scale[:, None], p.row_lo / scale, p.row_hi / scale,
                     p.var_lo, p.var_hi)


def _rows_for_basis(a_eq: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Independent rows of the basis columns (redundant rows were dropped)."""
    sub = a_eq[:, basis]
    if sub.shape[0] == basis.size:
        return np.arange(sub.shape[0])
    _, _, piv = scipy.linalg.qr(sub.T, pivoting=True)
    return np.sort(piv[:basis.size])


def residual(p: LpProblem, x: np.ndarray) -> float:
    """Largest bound or row violation of ``x``."""
    ax = p.a @ x
    parts = [
        np.maximum(p.row_lo - ax, 0.0), np.maximum(ax - p.row_hi, 0.0),
        np.maximum(p.var_lo - x, 0.0), np.maximum(x - p.var_hi, 0.0),
    ]
    return float(max((v.max() if v.size else 0.0) for v in parts))
