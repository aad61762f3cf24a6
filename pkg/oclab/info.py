"""Information functionals under an output-distribution constraint.

``I_m(mu || psi, D)`` is the smallest mutual information over couplings of
``mu`` and ``psi`` with expected distortion at most ``D``. The Lagrangian
``I(v) + beta * E_v[rho]`` over fixed marginals is an entropic transport
problem, so every interior point comes from a log-domain Sinkhorn solve and a
bisection on ``beta``. Rates are reported in bits; internals use nats.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import entr, logsumexp, rel_entr

from . import config
from .core import Alphabet, DistortionMatrix, JointPmf, Pmf, distortion, product_joint
from .simplex import solve_lp
from .transport import TransportResult, ot_solve, product_cost
from .utils import parallel_map

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)

IminStatus = Literal["infeasible", "product", "interior", "floor"]


def entropy_bits(p: Pmf | np.ndarray) -> float:
    mass = p.mass if isinstance(p, Pmf) else np.asarray(p, dtype=float)
    return float(entr(mass).sum()) / LN2


def mutual_information(v: JointPmf) -> float:
    """I(X;Y) in bits; zero-mass cells contribute nothing."""

    px = v.mass.sum(axis=1)
    py = v.mass.sum(axis=0)
    return float(rel_entr(v.mass, np.outer(px, py)).sum()) / LN2


# ----------------------------------------------------------------------
# Sinkhorn
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SinkhornResult:
    coupling: JointPmf
    beta: float
    iterations: int
    residual: float
    converged: bool

    @property
    def information_bits(self) -> float:
        return mutual_information(self.coupling)


def _sinkhorn(
    log_kernel: np.ndarray, a: np.ndarray, b: np.ndarray, tol: float, max_iter: int
) -> Tuple[np.ndarray, int, float, bool]:
    """Scale ``exp(log_kernel)`` to row sums ``a`` and column sums ``b``."""

    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        f = log_a - logsumexp(log_kernel + g[None, :], axis=1)
        g = log_b - logsumexp(log_kernel + f[:, None], axis=0)
        log_plan = log_kernel + f[:, None] + g[None, :]
        residual = float(np.abs(np.exp(logsumexp(log_plan, axis=1)) - a).sum())
        if residual <= tol:
            return np.exp(log_plan), iteration, residual, True
    return np.exp(log_kernel + f[:, None] + g[None, :]), max_iter, residual, False


def _scaled_coupling(
    mu: Pmf,
    psi: Pmf,
    log_kernel: np.ndarray,
    rows: np.ndarray,
    cols: np.ndarray,
    beta: float,
    tol: float,
    max_iter: int,
) -> SinkhornResult:
    plan, iterations, residual, converged = _sinkhorn(log_kernel, mu.mass[rows], psi.mass[cols], tol, max_iter)
    if not converged:
        logger.warning("Sinkhorn stopped at residual %.3g after %d iterations (beta=%g)", residual, iterations, beta)
    mass = np.zeros((mu.size, psi.size))
    mass[np.ix_(rows, cols)] = plan
    return SinkhornResult(JointPmf.from_weights(mu.alphabet, psi.alphabet, mass), beta, iterations, residual, converged)


def lagrangian_coupling(
    mu: Pmf,
    psi: Pmf,
    rho: DistortionMatrix,
    beta: float,
    tol: float = config.SINKHORN_TOL,
    max_iter: int = config.SINKHORN_MAX_ITER,
) -> SinkhornResult:
    """Minimizer of ``I(v) + beta * E_v[rho]`` over couplings of ``mu`` and ``psi``.

    Zero-mass points are dropped before scaling the kernel
    ``mu(x) psi(y) exp(-beta rho(x, y))`` and come back as zero rows/columns.
    """

    if beta < 0:
        raise ValueError("beta must be nonnegative")
    rho.check(mu.size, psi.size)
    rows, cols = mu.support(), psi.support()
    log_kernel = (
        np.log(mu.mass[rows])[:, None]
        + np.log(psi.mass[cols])[None, :]
        - beta * rho.cost[np.ix_(rows, cols)]
    )
    return _scaled_coupling(mu, psi, log_kernel, rows, cols, beta, tol, max_iter)


def _used_cells(face: np.ndarray, a: np.ndarray, b: np.ndarray, plan: np.ndarray) -> np.ndarray:
    """Cells of ``face`` that carry mass in at least one plan with marginals ``a``, ``b``.

    A face cell outside the known plan is kept when the plan maximizing its own
    mass inside the face gives it more than ``MARGINAL_TOL``.
    """

    cells = np.argwhere(face)
    a_eq = np.zeros((a.size + b.size, cells.shape[0]))
    a_eq[cells[:, 0], np.arange(cells.shape[0])] = 1.0
    a_eq[a.size + cells[:, 1], np.arange(cells.shape[0])] = 1.0
    b_eq = np.concatenate([a, b])
    used = face & (plan > config.MARGINAL_TOL)
    for k, (i, j) in enumerate(cells):
        if used[i, j]:
            continue
        objective = np.zeros(cells.shape[0])
        objective[k] = -1.0
        result = solve_lp(objective, a_eq, b_eq)
        if result.status == "optimal" and -result.objective > config.MARGINAL_TOL:
            positive = cells[result.x > config.MARGINAL_TOL]
            used[positive[:, 0], positive[:, 1]] = True
    dropped = int(face.sum() - used.sum())
    if dropped:
        logger.debug("optimal face: %d zero-reduced-cost cells carry no optimal mass", dropped)
    return used


def floor_coupling(
    mu: Pmf,
    psi: Pmf,
    rho: DistortionMatrix,
    transport: Optional[TransportResult] = None,
    tol: float = config.SINKHORN_TOL,
    max_iter: int = config.SINKHORN_MAX_ITER,
) -> SinkhornResult:
    """The ``beta -> inf`` limit: least-informative coupling among the optimal transport plans.

    Optimal plans are the couplings supported on cells of zero reduced cost
    under the transport duals. The kernel is restricted to the cells of that
    face that some optimal plan actually uses.
    """

    t = transport if transport is not None else ot_solve(mu, psi, rho)
    reduced = rho.cost - t.row_potentials[:, None] - t.col_potentials[None, :]
    eps = max(config.DUAL_TOL, t.dual_residual) * max(1.0, float(np.abs(rho.cost).max()))
    rows, cols = mu.support(), psi.support()
    face = reduced[np.ix_(rows, cols)] <= eps
    face = _used_cells(face, mu.mass[rows], psi.mass[cols], t.coupling.mass[np.ix_(rows, cols)])
    log_kernel = np.where(
        face,
        np.log(mu.mass[rows])[:, None] + np.log(psi.mass[cols])[None, :],
        -np.inf,
    )
    return _scaled_coupling(mu, psi, log_kernel, rows, cols, math.inf, tol, max_iter)


# ----------------------------------------------------------------------
# Constrained minimum mutual information
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class IminResult:
    """Value of ``I_m`` at one distortion level together with its coupling."""

    bits: float
    distortion: float
    beta: float
    status: IminStatus
    coupling: Optional[JointPmf] = None
    flagged: bool = False
    converged: bool = True

    @property
    def is_feasible(self) -> bool:
        return self.status != "infeasible"

    def to_dict(self) -> Dict[str, object]:
        return {
            "D": self.distortion,
            "I_bits": self.bits,
            "beta": self.beta,
            "status": self.status,
            "flagged": self.flagged,
            "converged": self.converged,
        }


@dataclass
class ImCurve:
    samples: List[Tuple[float, float, float]]  # (beta, D, I_bits)
    feasible_d_min: float
    zero_i_d_max: float

    def _finite(self) -> List[Tuple[float, float, float]]:
        return sorted((s for s in self.samples if math.isfinite(s[2])), key=lambda s: s[1])

    def is_monotone(self, tol: float = 1e-9) -> bool:
        """I nonincreasing in D."""

        points = self._finite()
        return all(b[2] <= a[2] + tol for a, b in zip(points, points[1:]))

    def is_convex(self, tol: float = 1e-6) -> bool:
        """Every sample lies on or below the chord through its neighbours."""

        points = self._finite()
        for left, mid, right in zip(points, points[1:], points[2:]):
            span = right[1] - left[1]
            if span <= 0.0:
                continue
            chord = left[2] + (right[2] - left[2]) * (mid[1] - left[1]) / span
            if mid[2] > chord + tol:
                return False
        return True

    def to_rows(self) -> List[Tuple[float, float, float]]:
        return list(self.samples)

    def to_dict(self) -> Dict[str, object]:
        return {
            "feasibleDMin": self.feasible_d_min,
            "zeroIDMax": self.zero_i_d_max,
            "samples": [{"beta": b, "D": d, "I_bits": i} for b, d, i in self.samples],
        }


class ConstrainedInformation:
    """``I_m(mu || psi, .)`` and its inverse for one fixed triple (mu, psi, rho).

    The transport floor and the product ceiling are computed once and shared
    by every query.
    """

    def __init__(
        self,
        mu: Pmf,
        psi: Pmf,
        rho: DistortionMatrix,
        sinkhorn_tol: float = config.SINKHORN_TOL,
        distortion_tol: float = config.DISTORTION_TOL,
        rate_tol: float = config.RATE_TOL,
    ) -> None:
        rho.check(mu.size, psi.size)
        self.mu = mu
        self.psi = psi
        self.rho = rho
        self.sinkhorn_tol = sinkhorn_tol
        self.distortion_tol = distortion_tol
        self.rate_tol = rate_tol
        self.transport = ot_solve(mu, psi, rho)
        self.d_min = self.transport.cost
        self.d_max = product_cost(mu, psi, rho)
        self.degenerate = mu.is_point_mass or psi.is_point_mass
        self._floor: Optional[SinkhornResult] = None

    # Couplings --------------------------------------------------------
    def coupling_at(self, beta: float) -> SinkhornResult:
        return lagrangian_coupling(self.mu, self.psi, self.rho, beta, tol=self.sinkhorn_tol)

    def floor(self) -> SinkhornResult:
        if self._floor is None:
            self._floor = floor_coupling(self.mu, self.psi, self.rho, self.transport, tol=self.sinkhorn_tol)
        return self._floor

    @property
    def floor_bits(self) -> float:
        if self.degenerate:
            return 0.0
        return self.floor().information_bits

    def _cost(self, result: SinkhornResult) -> float:
        return distortion(result.coupling, self.rho)

    def _product(self, D: float) -> IminResult:
        return IminResult(0.0, D, 0.0, "product", product_joint(self.mu, self.psi))

    def _floor_result(self, D: float) -> IminResult:
        floor = self.floor()
        logger.info("D=%g sits at the transport floor %g; reporting the entropic limit", D, self.d_min)
        return IminResult(
            floor.information_bits, D, math.inf, "floor", floor.coupling, flagged=True, converged=floor.converged
        )

    # Queries ----------------------------------------------------------
    def i_min(self, D: float) -> IminResult:
        if D < self.d_min - config.DEGENERACY_EPS:
            return IminResult(math.inf, D, math.nan, "infeasible")
        if self.degenerate or D >= self.d_max:
            return self._product(D)
        if D - self.d_min <= self.distortion_tol:
            return self._floor_result(D)

        lo, hi = 0.0, 1.0
        upper = self.coupling_at(hi)
        while self._cost(upper) > D and hi < config.BETA_CAP:
            lo, hi = hi, hi * 2.0
            upper = self.coupling_at(hi)
        if self._cost(upper) > D:
            logger.warning("beta reached its cap %g without meeting D=%g", hi, D)
            return self._floor_result(D)

        best = upper
        for _ in range(config.BISECTION_MAX_STEPS):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            trial = self.coupling_at(mid)
            cost = self._cost(trial)
            if cost > D:
                lo = mid
            else:
                hi, best = mid, trial
            if abs(cost - D) <= self.distortion_tol:
                best = trial
                break
        logger.debug("i_min(D=%g) settled at beta=%g", D, best.beta)
        return IminResult(best.information_bits, D, best.beta, "interior", best.coupling, converged=best.converged)

    def d_curve(self, rate_bits: float) -> float:
        """Distortion-rate function ``D(mu, psi, R)``, the inverse of :meth:`i_min`."""

        if rate_bits < 0:
            raise ValueError("rate must be nonnegative")
        if rate_bits == 0.0 or self.degenerate:
            return self.d_max
        if rate_bits >= self.floor_bits - self.rate_tol:
            return self.d_min

        lo, hi = 0.0, 1.0
        upper = self.coupling_at(hi)
        while upper.information_bits < rate_bits and hi < config.BETA_CAP:
            lo, hi = hi, hi * 2.0
            upper = self.coupling_at(hi)
        if upper.information_bits < rate_bits:
            return self.d_min

        best = upper
        for _ in range(config.BISECTION_MAX_STEPS):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            trial = self.coupling_at(mid)
            bits = trial.information_bits
            if bits < rate_bits:
                lo = mid
            else:
                hi, best = mid, trial
            if abs(bits - rate_bits) <= self.rate_tol:
                best = trial
                break
        return self._cost(best)

    def curve(self, betas: Sequence[float], threads: Optional[int] = None) -> ImCurve:
        """Sample ``(beta, D, I)`` along the Lagrangian path, merged in beta order."""

        ordered = sorted(float(b) for b in betas)
        results = parallel_map(self.coupling_at, ordered, threads)
        samples = [(r.beta, self._cost(r), r.information_bits) for r in results]
        return ImCurve(samples, self.d_min, self.d_max)

    def sweep(self, levels: Sequence[float], threads: Optional[int] = None) -> ImCurve:
        """Evaluate ``I_m`` on a grid of distortion levels."""

        results = parallel_map(self.i_min, [float(d) for d in levels], threads)
        samples = [(r.beta, r.distortion, r.bits) for r in results]
        return ImCurve(samples, self.d_min, self.d_max)


def i_min(mu: Pmf, psi: Pmf, rho: DistortionMatrix, D: float) -> IminResult:
    return ConstrainedInformation(mu, psi, rho).i_min(D)


def d_curve(mu: Pmf, psi: Pmf, rho: DistortionMatrix, rate_bits: float) -> float:
    return ConstrainedInformation(mu, psi, rho).d_curve(rate_bits)


def im_curve(
    mu: Pmf,
    psi: Pmf,
    rho: DistortionMatrix,
    betas: Optional[Sequence[float]] = None,
    points: int = 25,
    threads: Optional[int] = None,
) -> ImCurve:
    if betas is None:
        betas = [0.0, *np.geomspace(1.0 / 16.0, 256.0, points - 1)]
    return ConstrainedInformation(mu, psi, rho).curve(betas, threads)


# ----------------------------------------------------------------------
# Unconstrained distortion-rate function
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class BlahutArimotoResult:
    output: Pmf
    conditional: np.ndarray
    distortion: float
    rate_bits: float
    beta: float
    iterations: int
    converged: bool


def blahut_arimoto(
    mu: Pmf,
    rho: DistortionMatrix,
    beta: float,
    y_alphabet: Optional[Alphabet] = None,
    tol: float = config.BA_TOL,
    max_iter: int = config.BA_MAX_ITER,
) -> BlahutArimotoResult:
    """Log-domain Blahut-Arimoto at slope ``-beta``; the output law is free."""

    y_size = rho.shape[1]
    rho.check(mu.size, y_size)
    if y_alphabet is None:
        y_alphabet = mu.alphabet if y_size == mu.size else None
    rows = mu.support()
    log_px = np.log(mu.mass[rows])
    cost = rho.cost[rows]
    log_q = np.full(y_size, -math.log(y_size))
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        log_cond = log_q[None, :] - beta * cost
        log_cond -= logsumexp(log_cond, axis=1, keepdims=True)
        new_log_q = logsumexp(log_px[:, None] + log_cond, axis=0)
        change = float(np.abs(np.exp(new_log_q) - np.exp(log_q)).max())
        log_q = new_log_q
        if change < tol:
            converged = True
            break
    log_cond = log_q[None, :] - beta * cost
    log_cond -= logsumexp(log_cond, axis=1, keepdims=True)
    cond = np.exp(log_cond)
    px = mu.mass[rows]
    q = np.exp(log_q)
    dist = float(np.sum(px[:, None] * cond * cost))
    rate = float(np.sum(px[:, None] * rel_entr(cond, q[None, :]))) / LN2
    full = np.zeros((mu.size, y_size))
    full[rows] = cond
    alphabet = y_alphabet if y_alphabet is not None else Alphabet.range(y_size)
    return BlahutArimotoResult(Pmf.from_weights(alphabet, q), full, dist, max(rate, 0.0), beta, iteration, converged)


def d_classic(mu: Pmf, rho: DistortionMatrix, rate_bits: float, beta_cap: float = 2.0**20) -> float:
    """``D(mu, R) = inf_psi D(mu, psi, R)`` by bisection on the Blahut-Arimoto slope."""

    if rate_bits < 0:
        raise ValueError("rate must be nonnegative")
    best_constant = float((mu.mass @ rho.cost).min())
    if rate_bits == 0.0:
        return best_constant
    lo, hi = 0.0, 1.0
    upper = blahut_arimoto(mu, rho, hi)
    while upper.rate_bits < rate_bits and hi < beta_cap:
        lo, hi = hi, hi * 2.0
        upper = blahut_arimoto(mu, rho, hi)
    if upper.rate_bits < rate_bits:
        return upper.distortion
    best = upper
    for _ in range(config.BISECTION_MAX_STEPS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        trial = blahut_arimoto(mu, rho, mid)
        if trial.rate_bits < rate_bits:
            lo = mid
        else:
            hi, best = mid, trial
        if abs(trial.rate_bits - rate_bits) <= 1e-9:
            best = trial
            break
    return best.distortion


# ----------------------------------------------------------------------
# Converse
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class RateDistortionPoint:
    rate_bits: float
    distortion: float
    n: Optional[int] = None
    source: Literal["analytic", "simulated"] = "analytic"
    stderr: float = 0.0

    def __post_init__(self) -> None:
        if self.rate_bits < 0 or self.distortion < 0:
            raise ValueError("rate and distortion must be nonnegative")
        if self.stderr < 0:
            raise ValueError("standard error must be nonnegative")


@dataclass(frozen=True)
class ConverseCheck:
    passed: bool
    margin: float
    bound: float
    tolerance: float


def converse_check(
    point: RateDistortionPoint,
    mu: Pmf,
    psi: Pmf,
    rho: DistortionMatrix,
    info: Optional[ConstrainedInformation] = None,
) -> ConverseCheck:
    """A scheme with output law psi at rate R cannot beat ``D(mu, psi, R)``."""

    info = info if info is not None else ConstrainedInformation(mu, psi, rho)
    bound = info.d_curve(point.rate_bits)
    tolerance = config.SIGMA_GATE * point.stderr if point.source == "simulated" else 1e-9
    margin = point.distortion - bound
    return ConverseCheck(margin >= -tolerance, margin, bound, tolerance)


# ----------------------------------------------------------------------
# i.i.d. codebooks
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class IidCodebookRate:
    """Rate of an i.i.d.-psi codebook at distortion D and the output type it favours."""

    rate_bits: float
    favorite_type: Pmf
    coupling: Optional[JointPmf]
    beta: float


def _tilted(mu: Pmf, psi: Pmf, rho: DistortionMatrix, beta: float) -> Tuple[JointPmf, float, float]:
    cols = psi.support()
    log_cond = np.log(psi.mass[cols])[None, :] - beta * rho.cost[:, cols]
    log_cond -= logsumexp(log_cond, axis=1, keepdims=True)
    mass = np.zeros((mu.size, psi.size))
    mass[:, cols] = mu.mass[:, None] * np.exp(log_cond)
    joint = JointPmf.from_weights(mu.alphabet, psi.alphabet, mass)
    rate = float(rel_entr(joint.mass, np.outer(mu.mass, psi.mass)).sum()) / LN2
    return joint, distortion(joint, rho), rate


def iid_codebook_rate(mu: Pmf, psi: Pmf, rho: DistortionMatrix, D: float) -> IidCodebookRate:
    """``min KL(v || mu x psi)`` over joints with x-marginal mu and ``E_v[rho] <= D``.

    The minimizer tilts psi row by row, ``v(y|x) ~ psi(y) exp(-beta rho(x, y))``;
    its y-marginal is the favourite type.
    """

    rho.check(mu.size, psi.size)
    cols = psi.support()
    floor = float(mu.mass @ rho.cost[:, cols].min(axis=1))
    if D < floor - config.DEGENERACY_EPS:
        return IidCodebookRate(math.inf, psi, None, math.nan)
    if D >= product_cost(mu, psi, rho):
        return IidCodebookRate(0.0, psi, product_joint(mu, psi), 0.0)
    lo, hi = 0.0, 1.0
    joint, cost, rate = _tilted(mu, psi, rho, hi)
    while cost > D and hi < config.BETA_CAP:
        lo, hi = hi, hi * 2.0
        joint, cost, rate = _tilted(mu, psi, rho, hi)
    best = (joint, cost, rate, hi)
    for _ in range(config.BISECTION_MAX_STEPS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or abs(best[1] - D) <= config.DISTORTION_TOL:
            break
        joint, cost, rate = _tilted(mu, psi, rho, mid)
        if cost > D:
            lo = mid
        else:
            hi, best = mid, (joint, cost, rate, mid)
    joint, _, rate, beta = best
    return IidCodebookRate(rate, joint.y_marginal(), joint, beta)


__all__ = [
    "entropy_bits",
    "mutual_information",
    "SinkhornResult",
    "lagrangian_coupling",
    "floor_coupling",
    "IminResult",
    "ImCurve",
    "ConstrainedInformation",
    "i_min",
    "d_curve",
    "im_curve",
    "BlahutArimotoResult",
    "blahut_arimoto",
    "d_classic",
    "RateDistortionPoint",
    "ConverseCheck",
    "converse_check",
    "IidCodebookRate",
    "iid_codebook_rate",
]
