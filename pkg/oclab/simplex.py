"""Small dense two-phase simplex with Bland's rule.

Solves ``min c.x`` subject to ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``x >= 0``
and reports the constraint duals so callers can certify optimality.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import List, Literal, Optional

import numpy as np

from . import config
from .errors import ConvergenceError, DimensionMismatchError

logger = logging.getLogger(__name__)

LpStatus = Literal["optimal", "infeasible", "unbounded"]


@dataclass(frozen=True, eq=False)
class LinearProgramResult:
    status: LpStatus
    x: np.ndarray
    objective: float
    duals_eq: np.ndarray
    duals_ub: np.ndarray  # nonpositive at optimality
    pivots: int
    dual_residual: float


class _Tableau:
    def __init__(self, matrix: np.ndarray, rhs: np.ndarray, basis: List[int], pivot_eps: float) -> None:
        self.matrix = matrix
        self.rhs = rhs
        self.basis = basis
        self.pivot_eps = pivot_eps
        self.pivots = 0

    def pivot(self, row: int, col: int) -> None:
        self.rhs[row] /= self.matrix[row, col]
        self.matrix[row] /= self.matrix[row, col]
        factors = self.matrix[:, col].copy()
        factors[row] = 0.0
        self.matrix -= np.outer(factors, self.matrix[row])
        self.rhs -= factors * self.rhs[row]
        self.rhs[(self.rhs < 0.0) & (self.rhs > -self.pivot_eps)] = 0.0
        self.basis[row] = col
        self.pivots += 1

    def reduced_costs(self, cost: np.ndarray) -> np.ndarray:
        return cost - cost[self.basis] @ self.matrix

    def run(self, cost: np.ndarray, allowed: np.ndarray, opt_tol: float, max_pivots: int) -> LpStatus:
        """Primal simplex: smallest eligible index enters, ratio ties leave by smallest basic index."""

        while True:
            reduced = self.reduced_costs(cost)
            reduced[~allowed] = 0.0
            reduced[self.basis] = 0.0
            candidates = np.flatnonzero(reduced < -opt_tol)
            if candidates.size == 0:
                return "optimal"
            if self.pivots >= max_pivots:
                raise ConvergenceError(f"simplex exceeded {max_pivots} pivots")
            col = int(candidates[0])
            column = self.matrix[:, col]
            rows = np.flatnonzero(column > self.pivot_eps)
            if rows.size == 0:
                return "unbounded"
            ratios = self.rhs[rows] / column[rows]
            best = ratios.min()
            tied = rows[ratios <= best + self.pivot_eps]
            row = int(min(tied, key=lambda r: self.basis[r]))
            self.pivot(row, col)


def solve_lp(
    c: np.ndarray,
    a_eq: Optional[np.ndarray] = None,
    b_eq: Optional[np.ndarray] = None,
    a_ub: Optional[np.ndarray] = None,
    b_ub: Optional[np.ndarray] = None,
    pivot_eps: float = config.LP_PIVOT_EPS,
    opt_tol: float = config.LP_OPT_TOL,
    max_pivots: int = config.LP_MAX_PIVOTS,
) -> LinearProgramResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    a_ub = np.zeros((0, n)) if a_ub is None else np.atleast_2d(np.asarray(a_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    if a_eq.shape[1] != n or a_ub.shape[1] != n or a_eq.shape[0] != b_eq.size or a_ub.shape[0] != b_ub.size:
        raise DimensionMismatchError("constraint blocks do not match the cost vector")

    m_eq, m_ub = a_eq.shape[0], a_ub.shape[0]
    m = m_eq + m_ub
    structural = np.vstack(
        [
            np.hstack([a_eq, np.zeros((m_eq, m_ub))]),
            np.hstack([a_ub, np.eye(m_ub)]),
        ]
    )
    rhs = np.concatenate([b_eq, b_ub])
    sign = np.where(rhs < 0.0, -1.0, 1.0)
    structural = structural * sign[:, None]
    rhs = rhs * sign
    width = n + m_ub

    # Slacks with a +1 coefficient start in the basis; every other row gets an artificial.
    basis: List[int] = []
    artificial_rows = []
    for i in range(m):
        if i >= m_eq and sign[i] > 0:
            basis.append(n + (i - m_eq))
        else:
            basis.append(-1)
            artificial_rows.append(i)
    artificials = np.zeros((m, len(artificial_rows)))
    for k, i in enumerate(artificial_rows):
        artificials[i, k] = 1.0
        basis[i] = width + k
    initial_basis = list(basis)
    matrix = np.hstack([structural, artificials])
    total = matrix.shape[1]
    tableau = _Tableau(matrix, rhs.copy(), basis, pivot_eps)

    is_artificial = np.zeros(total, dtype=bool)
    is_artificial[width:] = True
    if artificial_rows:
        phase_one = np.where(is_artificial, 1.0, 0.0)
        tableau.run(phase_one, np.ones(total, dtype=bool), opt_tol, max_pivots)
        infeasibility = float(phase_one[tableau.basis] @ tableau.rhs)
        if infeasibility > config.MARGINAL_TOL * max(1.0, float(np.abs(rhs).max())):
            logger.info("phase one ended with infeasibility %.3g", infeasibility)
            return LinearProgramResult(
                "infeasible", np.zeros(n), float("inf"), np.zeros(m_eq), np.zeros(m_ub), tableau.pivots, float("inf")
            )
        for row, var in enumerate(list(tableau.basis)):
            if not is_artificial[var]:
                continue
            entries = np.flatnonzero(np.abs(tableau.matrix[row, :width]) > pivot_eps)
            if entries.size:
                tableau.pivot(row, int(entries[0]))
            # otherwise the row is redundant and its artificial stays basic at zero

    cost = np.concatenate([c, np.zeros(total - n)])
    status = tableau.run(cost, ~is_artificial, opt_tol, max_pivots)
    if status == "unbounded":
        return LinearProgramResult(
            "unbounded", np.zeros(n), float("-inf"), np.zeros(m_eq), np.zeros(m_ub), tableau.pivots, float("inf")
        )

    solution = np.zeros(total)
    solution[tableau.basis] = tableau.rhs
    x = np.clip(solution[:n], 0.0, None)
    duals = sign * (cost[tableau.basis] @ tableau.matrix[:, initial_basis])
    original = np.vstack([np.hstack([a_eq, np.zeros((m_eq, m_ub))]), np.hstack([a_ub, np.eye(m_ub)])])
    reduced = np.concatenate([c, np.zeros(m_ub)]) - duals @ original
    residual = max(0.0, -float(reduced.min())) if reduced.size else 0.0
    logger.debug("simplex optimal after %d pivots, dual residual %.3g", tableau.pivots, residual)
    return LinearProgramResult("optimal", x, float(c @ x), duals[:m_eq], duals[m_eq:], tableau.pivots, residual)


__all__ = ["LinearProgramResult", "solve_lp"]
