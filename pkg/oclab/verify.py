"""Named invariant checks run by ``oclab verify``.

Each check returns the worst observed value of its metric and compares it to a
tolerance; tolerances can be overridden per check, which is how a broken
invariant is simulated.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import config
from .coding import SimConfig, encoder_outputs, lemma2_uniformity_test, marton_bound, marton_coupling_batch, marton_coupling_law, simulate_finite
from .core import Alphabet, DistortionMatrix, Pmf
from .errors import ConfigError
from .info import ConstrainedInformation, entropy_bits
from .optquant import p1_vs_ot_check, solve_p1
from .transport import kl_divergence, product_cost, tv_distance
from .typeclass import NType, closest_ntype, normalized_type_kl, type_class_info
from .utils import stream_rng

logger = logging.getLogger(__name__)

CheckFn = Callable[[float, int], Tuple[float, str]]


@dataclass(frozen=True)
class Check:
    name: str
    description: str
    tolerance: float
    metric: CheckFn  # returns (worst value, detail); passes when value <= tolerance


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str


@dataclass
class SuiteReport:
    outcomes: List[CheckOutcome]

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes)

    def failures(self) -> List[str]:
        return [o.name for o in self.outcomes if not o.passed]

    def to_rows(self) -> List[List[object]]:
        return [[o.name, o.passed, o.value, o.tolerance, o.detail] for o in self.outcomes]

    def to_dict(self) -> Dict[str, object]:
        return {
            "passed": self.passed,
            "checks": [
                {"name": o.name, "passed": o.passed, "value": o.value, "tolerance": o.tolerance, "detail": o.detail}
                for o in self.outcomes
            ],
        }


# ----------------------------------------------------------------------
# Instances
# ----------------------------------------------------------------------
BINARY = Alphabet((0.0, 1.0))


def _binary_entropy(p: float) -> float:
    return entropy_bits(np.array([p, 1.0 - p]))


def _random_pmf(rng: np.random.Generator, size: int) -> Pmf:
    return Pmf.from_weights(Alphabet.range(size), rng.dirichlet(np.ones(size)) + 0.05)


def _random_instance(rng: np.random.Generator, x_size: int, y_size: int) -> Tuple[Pmf, Pmf, DistortionMatrix]:
    return _random_pmf(rng, x_size), _random_pmf(rng, y_size), DistortionMatrix(rng.random((x_size, y_size)))


# ----------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------
def _imin_closed_form(tol: float, seed: int) -> Tuple[float, str]:
    mu = Pmf.uniform(BINARY)
    info = ConstrainedInformation(mu, mu, DistortionMatrix.hamming(BINARY, BINARY))
    worst = 0.0
    for D in np.arange(1, 10) * 0.05:
        worst = max(worst, abs(info.i_min(float(D)).bits - (1.0 - _binary_entropy(float(D)))))
    return worst, "max |I_m - (1 - h(D))| in bits over D = 0.05..0.45"


def _imin_shape(tol: float, seed: int) -> Tuple[float, str]:
    rng = stream_rng(seed, 1)
    worst = 0.0
    for _ in range(3):
        info = ConstrainedInformation(*_random_instance(rng, 3, 3))
        levels = np.linspace(info.d_min, info.d_max, 12)[1:-1]
        curve = info.sweep(levels)
        points = sorted((s for s in curve.samples if math.isfinite(s[2])), key=lambda s: s[1])
        for a, b in zip(points, points[1:]):
            worst = max(worst, b[2] - a[2])
        for left, mid, right in zip(points, points[1:], points[2:]):
            chord = left[2] + (right[2] - left[2]) * (mid[1] - left[1]) / (right[1] - left[1])
            worst = max(worst, mid[2] - chord)
    return worst, "largest increase or chord violation of I_m on interior grids"


def _inverse_consistency(tol: float, seed: int) -> Tuple[float, str]:
    rng = stream_rng(seed, 2)
    worst = 0.0
    for _ in range(3):
        info = ConstrainedInformation(*_random_instance(rng, 3, 3))
        for fraction in (0.25, 0.5, 0.75):
            D = info.d_min + fraction * (info.d_max - info.d_min)
            worst = max(worst, abs(info.d_curve(info.i_min(D).bits) - D))
    return worst, "max |D(R(D)) - D| at interior points"


def _lp_ot_bridge(tol: float, seed: int) -> Tuple[float, str]:
    rng = stream_rng(seed, 3)
    worst = 0.0
    for _ in range(5):
        mu, psi, rho = _random_instance(rng, 3, 3)
        report = p1_vs_ot_check(mu, psi, rho, psi.size, tol=math.inf)
        worst = max(worst, abs(report.gap))
        single = solve_p1(mu, psi, rho, 1)
        worst = max(worst, abs(single.objective - product_cost(mu, psi, rho)))
    return worst, "max |P1 - OT| with M >= |Y| and |P1(M=1) - E_{mu x psi} rho|"


def _type_kl_sequence(tol: float, seed: int) -> Tuple[float, str]:
    psi = Pmf.uniform(BINARY)
    values = [normalized_type_kl(psi, n) for n in (4, 8, 16, 32, 64, 128)]
    worst = abs(values[0] - 0.25 * math.log2(16.0 / 6.0))
    worst = max(worst, max(b - a for a, b in zip(values, values[1:])))
    for n in (4, 8, 16, 32, 64, 128):
        info = type_class_info(closest_ntype(psi, n), psi)
        upper = info.kl_to_target_bits + psi.size * math.log2(n + 1) / n
        worst = max(worst, info.kl_to_target_bits - info.normalized_kl_bits, info.normalized_kl_bits - upper)
    return worst, "closed-form value, monotone decrease and sandwich of the normalized class divergence"


def _type_uniformity(tol: float, seed: int) -> Tuple[float, str]:
    t = NType(BINARY, (2, 2))
    outputs = encoder_outputs(Pmf.uniform(BINARY), t, DistortionMatrix.hamming(BINARY, BINARY), 1.0, 20_000, seed)
    p = lemma2_uniformity_test(outputs, t)
    return config.CHI2_ALPHA - p, "alpha minus chi-square p-value of encoder outputs on T_4((2,2))"


def _marton(tol: float, seed: int) -> Tuple[float, str]:
    psi = Pmf.uniform(BINARY)
    worst = -math.inf
    for n in (4, 8, 16):
        xhat, y = marton_coupling_batch(closest_ntype(psi, n), psi, stream_rng(seed, 4, n), 100_000)
        mismatch = (xhat != y).mean(axis=1)
        stderr = mismatch.std(ddof=1) / math.sqrt(mismatch.size)
        worst = max(worst, mismatch.mean() - marton_bound(psi, n) - config.SIGMA_GATE * stderr)
    exact = marton_coupling_law(NType(BINARY, (1, 1)), psi)
    marginal: Dict[Tuple[int, ...], float] = {}
    for (_, ys), prob in exact.items():
        marginal[ys] = marginal.get(ys, 0.0) + prob
    worst = max(worst, max(abs(v - 0.25) for v in marginal.values()))
    return worst, "mismatch minus bound and 3 sigma; exact y-marginal error at n=2"


def _converse(tol: float, seed: int) -> Tuple[float, str]:
    mu = Pmf.uniform(BINARY)
    rate = 1.0 - _binary_entropy(0.25) + 0.25
    cfg = SimConfig(rate, (4, 8), 2_000, mu=mu, psi=mu, rho=DistortionMatrix.hamming(BINARY, BINARY), seed=seed)
    result = simulate_finite(cfg)
    worst = max(-r.converse_margin - config.SIGMA_GATE * r.distortion_stderr for r in result.records)
    return worst, "largest shortfall below D(mu, psi, R) beyond 3 sigma"


def _pinsker(tol: float, seed: int) -> Tuple[float, str]:
    rng = stream_rng(seed, 5)
    worst = -math.inf
    for _ in range(50):
        a, b = _random_pmf(rng, 4), _random_pmf(rng, 4)
        worst = max(worst, tv_distance(a, b) - math.sqrt(kl_divergence(a, b) / 2.0))
    return worst, "max TV - sqrt(KL/2) over random pairs"


CHECKS: Dict[str, Check] = {
    c.name: c
    for c in (
        Check("imin_closed_form", "binary I_m equals 1 - h(D)", 1e-3, _imin_closed_form),
        Check("imin_shape", "I_m nonincreasing and convex in D", 1e-6, _imin_shape),
        Check("inverse_consistency", "D(mu, psi, .) inverts I_m", 1e-4, _inverse_consistency),
        Check("lp_ot_bridge", "P1 equals OT for M >= |Y| and the product cost for M = 1", 1e-8, _lp_ot_bridge),
        Check("type_kl_sequence", "normalized class divergence decreases inside its bounds", 1e-9, _type_kl_sequence),
        Check("type_uniformity", "encoder outputs are uniform on the type class", 0.0, _type_uniformity),
        Check("marton_bound", "sequential coupling meets its transport bound", 1e-12, _marton),
        Check("converse", "simulated points sit above the distortion-rate curve", 0.0, _converse),
        Check("pinsker", "TV <= sqrt(KL / 2)", 1e-12, _pinsker),
    )
}


def run_check(check: Check, tolerance: float, seed: int) -> CheckOutcome:
    value, detail = check.metric(tolerance, seed)
    passed = bool(value <= tolerance)
    if passed:
        logger.info("%s passed (%.3g <= %.3g)", check.name, value, tolerance)
    else:
        logger.warning("%s FAILED (%.3g > %.3g)", check.name, value, tolerance)
    return CheckOutcome(check.name, passed, float(value), float(tolerance), detail)


def run_suite(
    names: Optional[Sequence[str]] = None,
    tolerances: Optional[Mapping[str, float]] = None,
    seed: int = config.DEFAULT_SEED,
) -> SuiteReport:
    """Run the selected checks (all when ``names`` is None) in registry order."""

    overrides = dict(tolerances or {})
    unknown = sorted((set(names or []) | set(overrides)) - set(CHECKS))
    if unknown:
        raise ConfigError(f"unknown checks: {', '.join(unknown)}")
    selected = list(CHECKS) if names is None else [name for name in CHECKS if name in set(names)]
    if not selected:
        logger.warning("empty check selection; nothing to verify")
    outcomes = [run_check(CHECKS[name], overrides.get(name, CHECKS[name].tolerance), seed) for name in selected]
    return SuiteReport(outcomes)


__all__ = ["Check", "CheckOutcome", "SuiteReport", "CHECKS", "run_check", "run_suite"]
