"""Exact discrete optimal transport, coupling samplers and distances between pmfs."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
import logging
import math
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr

from . import config
from .core import Alphabet, DistortionMatrix, JointPmf, Pmf, distortion
from .errors import CapExceededError, ConvergenceError, DimensionMismatchError, InvalidDistributionError

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class TransportResult:
    """Optimal coupling together with the dual certificate of the final basis."""

    coupling: JointPmf
    cost: float
    pivots: int
    row_potentials: np.ndarray
    col_potentials: np.ndarray
    dual_residual: float

    def to_dict(self) -> Dict[str, object]:
        return {
            "cost": self.cost,
            "pivots": self.pivots,
            "dual_residual": self.dual_residual,
            "coupling": self.coupling.to_dict(),
        }


@dataclass(frozen=True)
class ProkhorovResult:
    distance: float
    witness_set: int  # bitmask over alphabet indices
    witness_side: str  # which measure sits on the left of the violated inequality

    def witness_indices(self) -> List[int]:
        return [i for i in range(self.witness_set.bit_length()) if self.witness_set >> i & 1]


# ----------------------------------------------------------------------
# Transportation simplex
# ----------------------------------------------------------------------
def _northwest_corner(supply: np.ndarray, demand: np.ndarray) -> Tuple[np.ndarray, List[Cell]]:
    """Staircase basic solution; on sorted supports it is the comonotone coupling."""

    m, n = supply.size, demand.size
    s = supply.astype(float).copy()
    d = demand.astype(float).copy()
    flow = np.zeros((m, n))
    basis: List[Cell] = []
    i = j = 0
    while True:
        amount = max(0.0, min(s[i], d[j]))
        flow[i, j] = amount
        basis.append((i, j))
        s[i] -= amount
        d[j] -= amount
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif s[i] <= d[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _adjacency(basis: Sequence[Cell], m: int, n: int) -> List[List[int]]:
    adj: List[List[int]] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    return adj


def _potentials(adj: List[List[int]], cost: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray]:
    # u_i + v_j = c_ij on every basic cell, anchored at u_0 = 0
    pot = np.full(len(adj), np.nan)
    pot[0] = 0.0
    stack = [0]
    while stack:
        node = stack.pop()
        for other in adj[node]:
            if not np.isnan(pot[other]):
                continue
            if node < m:
                pot[other] = cost[node, other - m] - pot[node]
            else:
                pot[other] = cost[other, node - m] - pot[node]
            stack.append(other)
    if np.any(np.isnan(pot)):
        raise ConvergenceError("transport basis is not a spanning tree")
    return pot[:m], pot[m:]


def _tree_path(adj: List[List[int]], start: int, goal: int) -> List[int]:
    parent: Dict[int, int] = {start: -1}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for other in adj[node]:
            if other not in parent:
                parent[other] = node
                queue.append(other)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    path.reverse()
    return path


def network_simplex(
    supply: np.ndarray,
    demand: np.ndarray,
    cost: np.ndarray,
    max_pivots: int = config.OT_MAX_PIVOTS,
) -> Tuple[np.ndarray, int, np.ndarray, np.ndarray]:
    """Primal simplex on the bipartite transportation polytope.

    Entering cells follow the most negative reduced cost; after a streak of
    degenerate pivots the rule switches to Bland's (smallest index) until a
    pivot makes progress again. Returns ``(flow, pivots, u, v)``.
    """

    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    cost = np.asarray(cost, dtype=float)
    m, n = supply.size, demand.size
    if cost.shape != (m, n):
        raise DimensionMismatchError(f"cost has shape {cost.shape}, expected {(m, n)}")
    total = float(supply.sum())
    if total <= 0.0 or float(demand.sum()) <= 0.0:
        raise InvalidDistributionError("transport marginals have zero total mass")
    if abs(total - float(demand.sum())) > config.MARGINAL_TOL:
        raise InvalidDistributionError("transport marginals carry different total mass")

    flow, basis = _northwest_corner(supply, demand)
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    adj = _adjacency(basis, m, n)
    eps = config.DEGENERACY_EPS * max(1.0, float(np.abs(cost).max()))

    pivots = 0
    streak = 0
    while True:
        u, v = _potentials(adj, cost, m)
        reduced = cost - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        if reduced.min() >= -eps:
            break
        if pivots >= max_pivots:
            raise ConvergenceError(f"transport simplex exceeded {max_pivots} pivots")
        # Bland pricing once a run of zero-step pivots gets long
        if streak >= config.DEGENERATE_STREAK:
            flat = int(np.flatnonzero(reduced.ravel() < -eps)[0])
        else:
            flat = int(np.argmin(reduced))
        enter = (flat // n, flat % n)

        path = _tree_path(adj, enter[0], m + enter[1])
        cells = [
            (a, b - m) if a < m else (b, a - m)
            for a, b in zip(path[:-1], path[1:])
        ]
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[c] for c in minus)
        leave = min((c for c in minus if flow[c] <= theta + eps), key=lambda c: c[0] * n + c[1])

        flow[enter] += theta
        for c in plus:
            flow[c] += theta
        for c in minus:
            flow[c] -= theta
        flow[leave] = 0.0

        in_basis[leave] = False
        in_basis[enter] = True
        adj[leave[0]].remove(m + leave[1])
        adj[m + leave[1]].remove(leave[0])
        adj[enter[0]].append(m + enter[1])
        adj[m + enter[1]].append(enter[0])

        pivots += 1
        streak = streak + 1 if theta <= eps else 0

    flow[flow < 0.0] = 0.0
    logger.debug("transport simplex finished after %d pivots (%dx%d)", pivots, m, n)
    return flow, pivots, u, v


def _dual_residual(cost: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    return max(0.0, -float((cost - u[:, None] - v[None, :]).min()))


def ot_solve(mu: Pmf, psi: Pmf, rho: DistortionMatrix) -> TransportResult:
    """Optimal coupling of ``mu`` and ``psi`` for the cost ``rho``."""

    rho.check(mu.size, psi.size)
    flow, pivots, u, v = network_simplex(mu.mass, psi.mass, rho.cost)
    coupling = JointPmf.from_weights(mu.alphabet, psi.alphabet, flow)
    residual = _dual_residual(rho.cost, u, v)
    if residual > config.DUAL_TOL:
        logger.warning("transport dual residual %.3g exceeds %.3g", residual, config.DUAL_TOL)
    return TransportResult(coupling, distortion(coupling, rho), pivots, u, v, residual)


def quantile_coupling_1d(mu: Pmf, psi: Pmf) -> TransportResult:
    """Comonotone coupling; optimal for squared error on the real line."""

    flow, basis = _northwest_corner(mu.mass, psi.mass)
    rho = DistortionMatrix.squared_error(mu.alphabet, psi.alphabet)
    coupling = JointPmf.from_weights(mu.alphabet, psi.alphabet, flow)
    u, v = _potentials(_adjacency(basis, mu.size, psi.size), rho.cost, mu.size)
    return TransportResult(coupling, distortion(coupling, rho), 0, u, v, _dual_residual(rho.cost, u, v))


def product_cost(mu: Pmf, psi: Pmf, rho: DistortionMatrix) -> float:
    """E[rho] under mu x psi, the cost of the independent coupling."""

    rho.check(mu.size, psi.size)
    return float(mu.mass @ rho.cost @ psi.mass)


# ----------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------
def sample_rows(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row of a nonnegative weight matrix (rows need not sum to 1)."""

    w = np.atleast_2d(np.asarray(weights, dtype=float))
    totals = w.sum(axis=1)
    if np.any(totals <= 0.0):
        raise InvalidDistributionError("cannot sample from a zero-mass row")
    cdf = np.cumsum(w, axis=1) / totals[:, None]
    u = rng.random(w.shape[0])
    index = (cdf <= u[:, None]).sum(axis=1)
    last_positive = w.shape[1] - 1 - np.argmax(w[:, ::-1] > 0.0, axis=1)
    return np.minimum(index, last_positive)


def coupling_sampler(t: TransportResult, x: int, rng: np.random.Generator) -> int:
    """Draw y from the coupling's conditional law given x."""

    row = t.coupling.mass[x]
    if row.sum() <= 0.0:
        raise InvalidDistributionError(f"source point {x} carries no mass")
    return int(sample_rows(row[None, :], rng)[0])


def coupling_rows(joint: JointPmf) -> List[Tuple[float, float, float]]:
    """``(x_label, y_label, mass)`` for every cell with positive mass."""

    rows = []
    for i, j in zip(*np.nonzero(joint.mass > 0.0)):
        rows.append((joint.x_alphabet.points[i], joint.y_alphabet.points[j], float(joint.mass[i, j])))
    return rows


# ----------------------------------------------------------------------
# Distances
# ----------------------------------------------------------------------
def label_metric(alphabet: Alphabet) -> np.ndarray:
    x = alphabet.array()
    return np.abs(x[:, None] - x[None, :])


def _max_violation(
    left: np.ndarray, right: np.ndarray, metric: np.ndarray, alpha: float, closed: bool
) -> Tuple[float, int]:
    """max over A within supp(left) of left(A) - right(A^alpha) - alpha, with its bitmask."""

    support = np.flatnonzero(left > 0.0)
    near = metric <= alpha if closed else metric < alpha
    covers = np.zeros((1, left.size), dtype=bool)
    masses = np.zeros(1)
    for e in support:
        covers = np.vstack([covers, covers | near[e]])
        masses = np.concatenate([masses, masses + left[e]])
    slack = masses - covers.astype(float) @ right - alpha
    slack[0] = -np.inf
    best = int(np.argmax(slack))
    mask = 0
    for bit, e in enumerate(support):
        if best >> bit & 1:
            mask |= 1 << int(e)
    return float(slack[best]), mask


def strassen_feasible(
    a: Pmf,
    b: Pmf,
    alpha: float,
    metric: Optional[np.ndarray] = None,
    closed: bool = False,
    tol: float = config.DEGENERACY_EPS,
) -> Tuple[bool, int, str]:
    """Check both blow-up inequality families at radius ``alpha``.

    ``closed`` uses ``{d <= alpha}`` neighbourhoods instead of ``{d < alpha}``.
    """

    metric = label_metric(a.alphabet) if metric is None else np.asarray(metric, dtype=float)
    for side, left, right in (("a", a, b), ("b", b, a)):
        violation, mask = _max_violation(left.mass, right.mass, metric, alpha, closed)
        if violation > tol:
            return False, mask, side
    return True, 0, ""


def prokhorov_distance(
    a: Pmf,
    b: Pmf,
    metric: Optional[np.ndarray] = None,
    tol: float = config.PROKHOROV_TOL,
) -> ProkhorovResult:
    """Prokhorov distance by subset enumeration and bisection on the radius.

    The returned distance is the upper end of the final bracket, i.e. a radius
    at which both inequality families hold.
    """

    if a.alphabet != b.alphabet:
        raise DimensionMismatchError("Prokhorov distance needs a common alphabet")
    metric = label_metric(a.alphabet) if metric is None else np.asarray(metric, dtype=float)
    if metric.shape != (a.size, a.size):
        raise DimensionMismatchError(f"metric has shape {metric.shape}")
    largest = max(a.support().size, b.support().size)
    if largest > config.PROKHOROV_MAX_SUPPORT:
        raise CapExceededError(f"support of size {largest} is too large for subset enumeration")
    if np.array_equal(a.mass, b.mass):
        return ProkhorovResult(0.0, 0, "")

    lo, hi = 0.0, 1.0
    witness, side = 0, ""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, mask, where = strassen_feasible(a, b, mid, metric)
        if ok:
            hi = mid
        else:
            lo, witness, side = mid, mask, where
    return ProkhorovResult(hi, witness, side)


def tv_distance(a: Pmf, b: Pmf) -> float:
    if a.size != b.size:
        raise DimensionMismatchError("pmfs live on alphabets of different size")
    return 0.5 * float(np.abs(a.mass - b.mass).sum())


def kl_divergence(a: Pmf, b: Pmf, units: Literal["nats", "bits"] = "nats") -> float:
    """KL(a || b); ``inf`` when ``a`` is not absolutely continuous w.r.t. ``b``."""

    if a.size != b.size:
        raise DimensionMismatchError("pmfs live on alphabets of different size")
    nats = float(np.sum(rel_entr(a.mass, b.mass)))
    if units == "nats":
        return nats
    if units == "bits":
        return nats / math.log(2.0)
    raise ValueError(f"unknown information unit {units!r}")


__all__ = [
    "TransportResult",
    "ProkhorovResult",
    "network_simplex",
    "ot_solve",
    "quantile_coupling_1d",
    "product_cost",
    "sample_rows",
    "coupling_sampler",
    "coupling_rows",
    "label_metric",
    "strassen_feasible",
    "prokhorov_distance",
    "tv_distance",
    "kl_divergence",
]
