"""
Linear programming for transport and oracle problems.

Two back ends share one entry point, `solve_lp`:
- SIMPLEX: a dense two-phase tableau simplex with Bland's anti-cycling rule,
  for the small coupling LPs (tens of variables).
- HIGHS: scipy's HiGHS solver, for the oracle LPs with thousands of columns.

Problems are stated as: minimise (or maximise) c @ x subject to
A_ub @ x <= b_ub, A_eq @ x = b_eq, x >= 0.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from loguru import logger
from scipy import optimize, sparse

from calsig.core.checks import InfeasibleError, SolverError, UnboundedError

FEAS_TOL = 1e-10
OPT_TOL = 1e-10
PIVOT_TOL = 1e-12
MAX_ITERATIONS = 50_000


class LpMethod(str, Enum):
    """LP back end."""
    SIMPLEX = "simplex"
    HIGHS = "highs"


@dataclass
class LpResult:
    """Optimal vertex and objective value."""
    x: np.ndarray
    objective: float
    iterations: int
    method: LpMethod


class DenseSimplex:
    """
    Two-phase tableau simplex with Bland's rule.

    The tableau holds one row per constraint plus the reduced-cost row last;
    the right-hand side is the last column. Phase 1 starts from an artificial
    basis and minimises the artificial sum.
    """

    def __init__(self, tol: float = PIVOT_TOL, max_iterations: int = MAX_ITERATIONS):
        self.tol = tol
        self.max_iterations = max_iterations
        self.iterations = 0

    def _pivot_col(self, T: np.ndarray, ncols: int) -> Optional[int]:
        """Lowest-index column with a negative reduced cost (Bland)."""
        reduced = T[-1, :ncols]
        candidates = np.flatnonzero(reduced < -OPT_TOL)
        return int(candidates[0]) if candidates.size else None

    def _pivot_row(self, T: np.ndarray, col: int, basis: list[int]) -> Optional[int]:
        """Minimum-ratio row; ties go to the lowest basic variable index (Bland)."""
        column = T[:-1, col]
        rows = np.flatnonzero(column > self.tol)
        if not rows.size:
            return None
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + FEAS_TOL * max(1.0, abs(best))]
        return int(min(tied, key=lambda r: basis[r]))

    def _pivot(self, T: np.ndarray, row: int, col: int, basis: list[int]) -> None:
        T[row] /= T[row, col]
        for r in range(T.shape[0]):
            if r != row and T[r, col] != 0.0:
                T[r] -= T[r, col] * T[row]
        basis[row] = col
        self.iterations += 1

    def _iterate(self, T: np.ndarray, basis: list[int], ncols: int) -> None:
        while True:
            if self.iterations >= self.max_iterations:
                raise SolverError(f"simplex exceeded {self.max_iterations} pivots")
            col = self._pivot_col(T, ncols)
            if col is None:
                return
            row = self._pivot_row(T, col, basis)
            if row is None:
                raise UnboundedError(f"column {col} is unbounded")
            self._pivot(T, row, col, basis)

    def solve(self, c: np.ndarray, A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
        """Minimise c @ x subject to A @ x = b, x >= 0."""
        m, nv = A.shape
        A = A.astype(float).copy()
        b = b.astype(float).copy()
        neg = b < 0
        A[neg] *= -1.0
        b[neg] *= -1.0

        # Phase 1
        T = np.zeros((m + 1, nv + m + 1))
        T[:m, :nv] = A
        T[:m, nv:nv + m] = np.eye(m)
        T[:m, -1] = b
        T[-1, :nv] = -A.sum(axis=0)
        T[-1, -1] = -b.sum()
        basis = list(range(nv, nv + m))
        self._iterate(T, basis, nv + m)
        if -T[-1, -1] > FEAS_TOL * max(1.0, float(b.sum())):
            raise InfeasibleError(f"phase 1 ended with infeasibility {-T[-1, -1]:.3e}")

        # Drive artificials out of the basis; drop redundant rows
        keep = []
        for r in range(m):
            if basis[r] >= nv:
                cols = np.flatnonzero(np.abs(T[r, :nv]) > self.tol)
                if cols.size:
                    self._pivot(T, r, int(cols[0]), basis)
                    keep.append(r)
            else:
                keep.append(r)
        T = np.vstack([T[keep][:, list(range(nv)) + [T.shape[1] - 1]], np.zeros(nv + 1)])
        basis = [basis[r] for r in keep]

        # Phase 2
        T[-1, :nv] = c
        for r, j in enumerate(basis):
            if T[-1, j] != 0.0:
                T[-1] -= T[-1, j] * T[r]
        self._iterate(T, basis, nv)

        x = np.zeros(nv)
        for r, j in enumerate(basis):
            x[j] = T[r, -1]
        return np.clip(x, 0.0, None), self.iterations


def _stack(
    nv: int,
    A_ub: Optional[np.ndarray],
    b_ub: Optional[np.ndarray],
    A_eq: Optional[np.ndarray],
    b_eq: Optional[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Equality form with one slack column per inequality row."""
    blocks = []
    rhs = []
    n_ub = 0 if A_ub is None else A_ub.shape[0]
    if n_ub:
        blocks.append(np.hstack([np.asarray(A_ub, dtype=float), np.eye(n_ub)]))
        rhs.append(np.asarray(b_ub, dtype=float))
    if A_eq is not None and A_eq.shape[0]:
        blocks.append(np.hstack([np.asarray(A_eq, dtype=float), np.zeros((A_eq.shape[0], n_ub))]))
        rhs.append(np.asarray(b_eq, dtype=float))
    if not blocks:
        return np.zeros((0, nv)), np.zeros(0)
    return np.vstack(blocks), np.concatenate(rhs)


def solve_lp(
    c: np.ndarray,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    method: LpMethod = LpMethod.SIMPLEX,
    maximize: bool = False,
) -> LpResult:
    """Solve an LP in inequality/equality form over x >= 0."""
    c = np.asarray(c, dtype=float)
    cost = -c if maximize else c
    nv = c.size

    if method == LpMethod.HIGHS:
        res = optimize.linprog(
            cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
            bounds=(0, None), method="highs",
        )
        if res.status == 2:
            raise InfeasibleError(res.message)
        if res.status == 3:
            raise UnboundedError(res.message)
        if res.status != 0:
            raise SolverError(res.message)
        value = float(res.fun)
        logger.debug("highs: {} variables, objective {}", nv, value)
        return LpResult(
            x=np.asarray(res.x), objective=-value if maximize else value,
            iterations=int(getattr(res, "nit", 0)), method=method,
        )

    if sparse.issparse(A_ub):
        A_ub = A_ub.toarray()
    if sparse.issparse(A_eq):
        A_eq = A_eq.toarray()
    A, b = _stack(nv, A_ub, b_ub, A_eq, b_eq)
    full_cost = np.concatenate([cost, np.zeros(A.shape[1] - nv)])
    x, iterations = DenseSimplex().solve(full_cost, A, b)
    x = x[:nv]
    value = float(cost @ x)
    logger.debug("simplex: {} variables, {} pivots, objective {}", nv, iterations, value)
    return LpResult(
        x=x, objective=-value if maximize else value, iterations=iterations, method=method
    )
