"""Dense two-phase simplex for small standard-form LPs.

Solves ``min c.x  s.t.  A x = b, x >= 0`` with Bland's smallest-index rule,
which cannot cycle.  Phase one doubles as a feasibility oracle: when the
artificial objective stays positive its simplex multipliers form a Farkas
certificate ``y`` with ``y.A <= 0`` and ``y.b > 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-9
PIVOT_TOL = 1e-11


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float | None = None
    farkas: np.ndarray | None = None
    iterations: int = 0


@dataclass
class Feasibility:
    feasible: bool
    x: np.ndarray | None = None
    dual: np.ndarray | None = None


class _Tableau:
    """Rows ``0..m-1`` hold ``B^-1 [A | I | b]``; ``cost`` holds reduced costs."""

    def __init__(self, A: np.ndarray, b: np.ndarray):
        m, n = A.shape
        self.m, self.n = m, n
        self.T = np.zeros((m, n + m + 1))
        self.T[:, :n] = A
        self.T[:, n : n + m] = np.eye(m)
        self.T[:, -1] = b
        self.basis = list(range(n, n + m))
        self.rows = list(range(m))  # original row index of each tableau row
        self.cost = np.zeros(n + m + 1)
        self.iterations = 0

    def set_cost(self, c_full: np.ndarray) -> None:
        """Load a cost vector over all columns and price out the basis."""
        self.c_full = c_full
        cb = c_full[self.basis]
        self.cost = np.concatenate([c_full, [0.0]]) - cb @ self.T
        # last entry is then -c_B.x_B, i.e. minus the objective

    def pivot(self, r: int, j: int) -> None:
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.cost -= self.cost[j] * T[r]
        self.basis[r] = j
        self.iterations += 1

    def run(self, allowed: int, tol: float, max_iter: int) -> str:
        """Bland's rule over columns ``< allowed``."""
        T = self.T
        while True:
            if self.iterations > max_iter:
                raise LPError("simplex iteration limit reached")
            rc = self.cost[:allowed]
            candidates = np.flatnonzero(rc < -tol)
            if candidates.size == 0:
                return "optimal"
            j = int(candidates[0])
            col = T[:, j]
            mask = col > PIVOT_TOL
            if not mask.any():
                return "unbounded"
            ratios = np.full(self.m, np.inf)
            ratios[mask] = T[mask, -1] / col[mask]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
            r = min(ties, key=lambda i: self.basis[i])
            self.pivot(int(r), j)

    def solution(self) -> np.ndarray:
        x = np.zeros(self.n + self.m)
        for i, j in enumerate(self.basis):
            x[j] = self.T[i, -1]
        return x[: self.n]

    def drop_row(self, r: int) -> None:
        self.T = np.delete(self.T, r, axis=0)
        del self.basis[r]
        del self.rows[r]
        self.m -= 1


def _phase_one(A: np.ndarray, b: np.ndarray, tol: float, max_iter: int):
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A1 = A * sign[:, None]
    b1 = b * sign
    tab = _Tableau(A1, b1)
    c = np.concatenate([np.zeros(n), np.ones(m)])
    tab.set_cost(c)
    tab.run(n + m, tol, max_iter)
    infeas = -tab.cost[-1]
    scale = max(1.0, float(np.max(np.abs(b)))) if b.size else 1.0
    if infeas > tol * scale:
        # multipliers of the original rows, read off the artificial columns
        y1 = 1.0 - tab.cost[n : n + m]
        return tab, y1 * sign
    return tab, None


def _purge_artificials(tab: _Tableau, tol: float) -> None:
    n = tab.n
    r = 0
    while r < tab.m:
        if tab.basis[r] >= n:
            row = tab.T[r, :n]
            nz = np.flatnonzero(np.abs(row) > max(tol, PIVOT_TOL) * 1e-2)
            if nz.size:
                tab.pivot(r, int(nz[np.argmax(np.abs(row[nz]))]))
            else:
                tab.drop_row(r)
                continue
        r += 1


def solve_lp(c, A, b, tol: float = DEFAULT_TOL, max_iter: int = 50_000) -> LPResult:
    """Minimize ``c.x`` over ``{x >= 0 : A x = b}``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    m, n = A.shape
    if b.shape != (m,) or c.shape != (n,):
        raise ValueError(f"dimension mismatch: A {A.shape}, b {b.shape}, c {c.shape}")
    tab, farkas = _phase_one(A, b, tol, max_iter)
    if farkas is not None:
        return LPResult("infeasible", farkas=farkas, iterations=tab.iterations)
    _purge_artificials(tab, tol)
    c_full = np.concatenate([c, np.zeros(tab.T.shape[1] - 1 - n)])
    tab.set_cost(c_full)
    status = tab.run(n, tol, max_iter)
    if status == "unbounded":
        return LPResult("unbounded", iterations=tab.iterations)
    x = tab.solution()
    x[x < 0] = 0.0
    return LPResult("optimal", x=x, objective=float(c @ x), iterations=tab.iterations)


def linear_feasible(A, b, tol: float = DEFAULT_TOL) -> Feasibility:
    """Find ``x >= 0`` with ``A x = b`` or a dual vector proving none exists.

    On success ``||A x - b||_inf <= tol``.  On failure the returned ``dual``
    satisfies ``dual.A <= tol`` componentwise and ``dual.b > tol``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: A {A.shape}, b {b.shape}")
    res = solve_lp(np.zeros(A.shape[1]), A, b, tol=tol)
    if res.status == "infeasible":
        return Feasibility(False, dual=res.farkas)
    x = res.x
    if np.max(np.abs(A @ x - b), initial=0.0) > tol:
        # numerical drift in a long pivot sequence: polish on the active support
        x = _polish(A, b, x)
    return Feasibility(True, x=x)


def _polish(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    support = np.flatnonzero(x > 0)
    sol, *_ = np.linalg.lstsq(A[:, support], b, rcond=None)
    out = np.zeros_like(x)
    out[support] = np.maximum(sol, 0.0)
    return out
