"""Optimal randomized quantizers as linear programs over deterministic columns.

Every M-level map ``q: X -> Y`` contributes one column carrying its distortion
``L(q)`` and output law. A randomized quantizer is a probability vector over
the columns, so (P1) (exact output law psi) and (P3) (output law inside the
closed Prokhorov ball of radius delta around psi) are small dense LPs.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from scipy import stats

from . import config
from .core import (
    Alphabet,
    DeterministicQuantizer,
    DistortionMatrix,
    FiniteMixtureQuantizer,
    Pmf,
    distortion,
    mixture_joint,
)
from .errors import CapExceededError, DimensionMismatchError
from .simplex import solve_lp
from .transport import label_metric, ot_solve, prokhorov_distance
from .utils import parallel_map, stream_rng

logger = logging.getLogger(__name__)

CellShape = Literal["all", "interval"]

_ENUMERATION_BLOCK = 1_000_000


@dataclass(frozen=True, eq=False)
class QuantizerColumn:
    quantizer: DeterministicQuantizer
    output_pmf: Pmf
    cost: float


@dataclass(frozen=True, eq=False)
class ColumnPool:
    """Column data in array form: one row per deterministic map."""

    maps: np.ndarray  # (columns, |X|)
    outputs: np.ndarray  # (columns, |Y|)
    costs: np.ndarray  # (columns,)
    y_alphabet: Alphabet
    level_budget: int

    @property
    def size(self) -> int:
        return int(self.maps.shape[0])

    def quantizer(self, index: int) -> DeterministicQuantizer:
        return DeterministicQuantizer(tuple(self.maps[index]), self.level_budget, self.y_alphabet)

    def columns(self) -> List[QuantizerColumn]:
        return [
            QuantizerColumn(self.quantizer(i), Pmf.from_weights(self.y_alphabet, self.outputs[i]), float(self.costs[i]))
            for i in range(self.size)
        ]


def _pool_from_maps(maps: np.ndarray, mu: Pmf, y_alphabet: Alphabet, rho: DistortionMatrix, M: int) -> ColumnPool:
    maps = np.asarray(maps, dtype=np.int64).reshape(-1, mu.size)
    outputs = np.zeros((maps.shape[0], y_alphabet.size))
    costs = np.zeros(maps.shape[0])
    rows = np.arange(maps.shape[0])
    for x in range(mu.size):
        outputs[rows, maps[:, x]] += mu.mass[x]
        costs += mu.mass[x] * rho.cost[x, maps[:, x]]
    return ColumnPool(maps, outputs, costs, y_alphabet, M)


def column_pool(
    mu: Pmf,
    y_alphabet: Alphabet,
    rho: DistortionMatrix,
    M: int,
    cell_shape: CellShape = "all",
    cap: int = config.ENUMERATION_CAP,
) -> ColumnPool:
    """All maps with at most M outputs (``all``) or at most M contiguous cells (``interval``)."""

    x_size, y_size = mu.size, y_alphabet.size
    rho.check(x_size, y_size)
    if M < 1:
        raise ValueError("level budget must be positive")
    if cell_shape not in ("all", "interval"):
        raise ValueError(f"unknown cell shape {cell_shape!r}")
    total = y_size**x_size
    if total > cap:
        raise CapExceededError(f"{total} candidate maps exceed the enumeration cap {cap}")

    kept = []
    for start in range(0, total, _ENUMERATION_BLOCK):
        codes = np.arange(start, min(total, start + _ENUMERATION_BLOCK))
        maps = np.stack(np.unravel_index(codes, (y_size,) * x_size), axis=1)
        ordered = np.sort(maps, axis=1)
        distinct = 1 + (np.diff(ordered, axis=1) != 0).sum(axis=1)
        keep = distinct <= M
        if cell_shape == "interval":
            runs = 1 + (np.diff(maps, axis=1) != 0).sum(axis=1)
            keep &= runs == distinct
        kept.append(maps[keep])
    pool = _pool_from_maps(np.concatenate(kept), mu, y_alphabet, rho, M)
    logger.debug("enumerated %d %s-cell columns (|X|=%d, |Y|=%d, M=%d)", pool.size, cell_shape, x_size, y_size, M)
    return pool


def enumerate_quantizers(
    mu: Pmf,
    y_alphabet: Alphabet,
    rho: DistortionMatrix,
    M: int,
    cell_shape: CellShape = "all",
) -> List[QuantizerColumn]:
    return column_pool(mu, y_alphabet, rho, M, cell_shape).columns()


def pool_from_quantizers(
    quantizers: Sequence[DeterministicQuantizer], mu: Pmf, rho: DistortionMatrix
) -> ColumnPool:
    """Explicit column pool, e.g. to study which maps a budget really needs."""

    if not quantizers:
        raise ValueError("column pool must be nonempty")
    head = quantizers[0]
    maps = np.array([q.mapping for q in quantizers], dtype=np.int64)
    if maps.shape[1] != mu.size:
        raise DimensionMismatchError("quantizers do not act on the source alphabet")
    return _pool_from_maps(maps, mu, head.y_alphabet, rho, head.level_budget)


# ----------------------------------------------------------------------
# Linear programs
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class LpSolution:
    status: Literal["optimal", "infeasible"]
    mixture: Optional[FiniteMixtureQuantizer]
    objective: float
    duals: np.ndarray
    dual_residual: float
    pivots: int
    columns: int
    boundary: bool = False

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"

    def output_pmf(self, mu: Pmf) -> Pmf:
        if self.mixture is None:
            raise ValueError("infeasible solutions carry no mixture")
        return mixture_joint(self.mixture, mu).y_marginal()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "objective": self.objective,
            "dual_residual": self.dual_residual,
            "pivots": self.pivots,
            "columns": self.columns,
            "boundary": self.boundary,
            "mixture": self.mixture.to_records() if self.mixture is not None else [],
        }


def _solution(result, pool: ColumnPool, mu: Pmf, rho: DistortionMatrix, boundary: bool = False) -> LpSolution:
    if result.status != "optimal":
        logger.info("mixture LP is %s over %d columns", result.status, pool.size)
        return LpSolution("infeasible", None, math.inf, np.zeros(0), math.inf, result.pivots, pool.size)
    chosen = np.flatnonzero(result.x > config.DEGENERACY_EPS)
    mixture = FiniteMixtureQuantizer.from_weights(result.x[chosen], [pool.quantizer(i) for i in chosen])
    objective = distortion(mixture_joint(mixture, mu), rho)
    if result.dual_residual > config.LP_DUAL_TOL:
        logger.warning("mixture LP dual residual %.3g exceeds %.3g", result.dual_residual, config.LP_DUAL_TOL)
    duals = np.concatenate([result.duals_eq, result.duals_ub])
    return LpSolution("optimal", mixture, objective, duals, result.dual_residual, result.pivots, pool.size, boundary)


def solve_p1(
    mu: Pmf,
    psi: Pmf,
    rho: DistortionMatrix,
    M: int,
    cell_shape: CellShape = "all",
    pool: Optional[ColumnPool] = None,
) -> LpSolution:
    """Cheapest mixture of M-level maps whose output law is exactly psi."""

    pool = pool if pool is not None else column_pool(mu, psi.alphabet, rho, M, cell_shape)
    a_eq = np.vstack([pool.outputs.T, np.ones((1, pool.size))])
    b_eq = np.concatenate([psi.mass, [1.0]])
    solution = _solution(solve_lp(pool.costs, a_eq, b_eq), pool, mu, rho)
    if solution.is_optimal:
        achieved = solution.output_pmf(mu)
        gap = float(np.abs(achieved.mass - psi.mass).max())
        if gap > config.MARGINAL_TOL:
            logger.warning("P1 output law misses psi by %.3g", gap)
    return solution


def _subset_masks(size: int) -> np.ndarray:
    """Every nonempty proper subset of ``range(size)`` as a boolean row."""

    codes = np.arange(1, 2**size - 1)
    return ((codes[:, None] >> np.arange(size)[None, :]) & 1).astype(bool)


def strassen_rows(psi: Pmf, delta: float, metric: np.ndarray):
    """Closed-ball blow-up constraints ``A_ub w <= b_ub`` in terms of column output laws.

    Returns ``(masks, covers, b_direct, b_reverse)``: the direct family bounds
    ``out(A) <= psi(A^delta) + delta`` and the reverse family bounds
    ``-out(A^delta) <= delta - psi(A)``.
    """

    masks = _subset_masks(psi.size)
    near = metric <= delta
    covers = (masks.astype(np.int64) @ near.astype(np.int64)) > 0
    b_direct = covers.astype(float) @ psi.mass + delta
    b_reverse = delta - masks.astype(float) @ psi.mass
    return masks, covers, b_direct, b_reverse


def solve_p3(
    mu: Pmf,
    psi: Pmf,
    rho: DistortionMatrix,
    M: int,
    delta: float,
    metric: Optional[np.ndarray] = None,
    cell_shape: CellShape = "all",
    pool: Optional[ColumnPool] = None,
) -> LpSolution:
    """Cheapest mixture whose output law lies in the closed Prokhorov ball of radius delta."""

    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if psi.size > config.PROKHOROV_MAX_SUPPORT:
        raise CapExceededError(f"|Y|={psi.size} is too large for subset constraints")
    metric = label_metric(psi.alphabet) if metric is None else np.asarray(metric, dtype=float)
    pool = pool if pool is not None else column_pool(mu, psi.alphabet, rho, M, cell_shape)
    masks, covers, b_direct, b_reverse = strassen_rows(psi, delta, metric)

    direct = b_direct < 1.0  # rows with b >= 1 can never bind
    reverse = b_reverse < 0.0
    a_ub = np.vstack(
        [
            (pool.outputs @ masks[direct].T.astype(float)).T,
            -(pool.outputs @ covers[reverse].T.astype(float)).T,
        ]
    )
    b_ub = np.concatenate([b_direct[direct], b_reverse[reverse]])
    a_eq = np.ones((1, pool.size))
    result = solve_lp(pool.costs, a_eq, np.ones(1), a_ub, b_ub)

    boundary = False
    if result.status == "optimal" and b_ub.size:
        slack = b_ub - a_ub @ result.x
        boundary = bool(np.any(slack <= config.MARGINAL_TOL))
        if boundary:
            logger.info("P3 optimum sits on the boundary of the closed ball (delta=%g)", delta)
    logger.debug("P3 with %d active subset rows out of %d", b_ub.size, 2 * masks.shape[0])
    return _solution(result, pool, mu, rho, boundary)


# ----------------------------------------------------------------------
# Experiments and cross-checks
# ----------------------------------------------------------------------
@dataclass
class RandomizationTable:
    sizes: List[int]
    l_error_mean: List[float]
    l_error_stderr: List[float]
    prokhorov_mean: List[float]
    prokhorov_stderr: List[float]
    target_cost: float
    slope: float

    def to_rows(self) -> List[List[float]]:
        return [
            [n, e, es, p, ps]
            for n, e, es, p, ps in zip(
                self.sizes, self.l_error_mean, self.l_error_stderr, self.prokhorov_mean, self.prokhorov_stderr
            )
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target_cost": self.target_cost,
            "slope": self.slope,
            "rows": [
                {"size": r[0], "l_error_mean": r[1], "l_error_stderr": r[2], "prokhorov_mean": r[3], "prokhorov_stderr": r[4]}
                for r in self.to_rows()
            ],
        }


def finite_randomization_experiment(
    target: FiniteMixtureQuantizer,
    mu: Pmf,
    rho: DistortionMatrix,
    sizes: Sequence[int],
    trials: int = 200,
    seed: int = config.DEFAULT_SEED,
    metric: Optional[np.ndarray] = None,
    threads: Optional[int] = None,
) -> RandomizationTable:
    """Empirical mixtures of n i.i.d. draws from ``target`` against the target itself."""

    pool = pool_from_quantizers(target.quantizers, mu, rho)
    weights = np.asarray(target.weights)
    target_cost = float(weights @ pool.costs)
    target_output = Pmf.from_weights(target.y_alphabet, weights @ pool.outputs)
    metric = label_metric(target.y_alphabet) if metric is None else metric

    def run(task):
        index, n = task
        rng = stream_rng(seed, index)
        empirical = rng.multinomial(int(n), weights, size=trials) / float(n)
        errors = np.abs(empirical @ pool.costs - target_cost)
        distances = np.array(
            [
                prokhorov_distance(Pmf.from_weights(target.y_alphabet, row @ pool.outputs), target_output, metric).distance
                for row in empirical
            ]
        )
        return errors, distances

    outcomes = parallel_map(run, list(enumerate(sizes)), threads)
    root = math.sqrt(trials)
    errors = [o[0] for o in outcomes]
    distances = [o[1] for o in outcomes]
    l_mean = [float(e.mean()) for e in errors]
    slope = math.nan
    if len(sizes) >= 2 and all(v > 0.0 for v in l_mean):
        slope = float(stats.linregress(np.log(sizes), np.log(l_mean)).slope)
    return RandomizationTable(
        sizes=[int(n) for n in sizes],
        l_error_mean=l_mean,
        l_error_stderr=[float(e.std(ddof=1) / root) if trials > 1 else 0.0 for e in errors],
        prokhorov_mean=[float(d.mean()) for d in distances],
        prokhorov_stderr=[float(d.std(ddof=1) / root) if trials > 1 else 0.0 for d in distances],
        target_cost=target_cost,
        slope=slope,
    )


@dataclass(frozen=True)
class BridgeReport:
    p1_objective: float
    ot_cost: float
    gap: float
    equality_expected: bool
    passed: bool


def p1_vs_ot_check(mu: Pmf, psi: Pmf, rho: DistortionMatrix, M: int, tol: float = 1e-8) -> BridgeReport:
    """P1 never beats optimal transport, and matches it once M >= |Y|."""

    p1 = solve_p1(mu, psi, rho, M)
    ot = ot_solve(mu, psi, rho).cost
    gap = p1.objective - ot
    expected = M >= psi.size
    passed = p1.is_optimal and gap >= -tol and (not expected or abs(gap) <= tol)
    return BridgeReport(p1.objective, ot, gap, expected, passed)


@dataclass(frozen=True)
class IntervalReport:
    all_objective: float
    interval_objective: float
    gap: float


def interval_vs_all(mu: Pmf, psi: Pmf, rho: DistortionMatrix, M: int) -> IntervalReport:
    """Price of restricting P1 to quantizers with interval cells; reported, never asserted zero."""

    full = solve_p1(mu, psi, rho, M, "all")
    interval = solve_p1(mu, psi, rho, M, "interval")
    return IntervalReport(full.objective, interval.objective, interval.objective - full.objective)


__all__ = [
    "QuantizerColumn",
    "ColumnPool",
    "column_pool",
    "enumerate_quantizers",
    "pool_from_quantizers",
    "LpSolution",
    "solve_p1",
    "strassen_rows",
    "solve_p3",
    "RandomizationTable",
    "finite_randomization_experiment",
    "BridgeReport",
    "p1_vs_ot_check",
    "IntervalReport",
    "interval_vs_all",
]
