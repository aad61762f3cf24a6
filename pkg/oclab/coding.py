"""Random coding on type classes followed by an output-law-preserving coupling.

One trial of the finite scheme::

    X^n ~ mu^n  ->  nearest codeword X^n_hat (uniform on T_n(psi_n))  ->  coupling  ->  Y^n ~ psi^n

The codebook is the common randomness shared by encoder and decoder; the
coupling randomness is private to the decoder. Trials are grouped into chunks
whose size depends only on the configuration, each chunk drawing from its own
``(seed, n, chunk)`` stream, so results do not depend on the thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats

from . import config
from .core import Alphabet, DistortionMatrix, Pmf
from .errors import CapExceededError, ConfigError, DimensionMismatchError, InvalidDistributionError
from .info import ConstrainedInformation, RateDistortionPoint, converse_check, iid_codebook_rate
from .transport import network_simplex, sample_rows
from .typeclass import (
    NType,
    closest_ntype,
    closest_ntype_is_tied,
    conditional_remaining,
    multinomial_coefficient,
    enumerate_type_class,
    normalized_type_kl,
    sample_uniform_type_class,
    sequence_rank,
)
from .utils import parallel_map, stream_rng

logger = logging.getLogger(__name__)

TieRule = Literal["first", "last"]
CouplingMode = Literal["auto", "exact", "marton"]
SimMode = Literal["finite", "continuous"]

SUMMARY_COLUMNS = (
    "n",
    "rate_bits",
    "distortion_mean",
    "distortion_stderr",
    "marginal_chi2_p",
    "uniformity_chi2_p",
    "marton_bound",
    "marton_observed",
    "converse_margin",
)
CONTINUOUS_COLUMNS = ("step_a", "step_b", "step_c", "triangle_bound")
IID_COLUMNS = ("codeword_type_l1", "favorite_type_l1")


# ----------------------------------------------------------------------
# Codebooks and encoding
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Codebook:
    words: np.ndarray  # (count, n) reproduction indices
    rate_bits: float
    ntype: Optional[NType] = None

    def __post_init__(self) -> None:
        words = np.array(self.words, dtype=np.int64)
        if words.ndim != 2 or words.shape[0] < 1:
            raise DimensionMismatchError("codebook words must form a nonempty (count, n) array")
        if self.ntype is not None:
            expected = np.asarray(self.ntype.counts)
            counts = np.stack([np.bincount(w, minlength=self.ntype.size) for w in words])
            if words.shape[1] != self.ntype.n or np.any(counts != expected):
                raise InvalidDistributionError("codeword outside the type class")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @property
    def count(self) -> int:
        return int(self.words.shape[0])

    @property
    def n(self) -> int:
        return int(self.words.shape[1])

    @property
    def effective_rate(self) -> float:
        return math.log2(self.count) / self.n


def codeword_count(n: int, rate_bits: float, cap: int = config.CODEBOOK_CAP) -> int:
    """``ceil(2^{nR})``, refused above ``cap``."""

    exponent = n * rate_bits
    if exponent > math.log2(cap) + 1e-9:
        raise CapExceededError(f"2^{exponent:.3f} codewords exceed the cap {cap}")
    return max(1, math.ceil(2.0**exponent - 1e-9))


def generate_codebook(
    t: NType, rate_bits: float, rng: np.random.Generator, cap: int = config.CODEBOOK_CAP
) -> Codebook:
    count = codeword_count(t.n, rate_bits, cap)
    return Codebook(sample_uniform_type_class(t, rng, size=count), rate_bits, t)


def generate_iid_codebook(
    psi: Pmf, n: int, rate_bits: float, rng: np.random.Generator, cap: int = config.CODEBOOK_CAP
) -> Codebook:
    count = codeword_count(n, rate_bits, cap)
    return Codebook(rng.choice(psi.size, size=(count, n), p=psi.mass), rate_bits)


def nn_encode_batch(
    sources: np.ndarray, words: np.ndarray, cost: np.ndarray, tie_rule: TieRule = "first"
) -> np.ndarray:
    """Nearest codeword index per source row.

    ``words`` is either one shared ``(count, n)`` book or a ``(trials, count, n)``
    stack with a fresh book per row.
    """

    xs = np.atleast_2d(sources)
    book = words if words.ndim == 3 else words[None, :, :]
    per_letter = cost[xs[:, None, :], book].mean(axis=2)
    best = per_letter.min(axis=1, keepdims=True)
    hits = per_letter <= best + config.DEGENERACY_EPS * np.maximum(1.0, best)
    if tie_rule == "first":
        return np.argmax(hits, axis=1)
    if tie_rule == "last":
        return hits.shape[1] - 1 - np.argmax(hits[:, ::-1], axis=1)
    raise ValueError(f"unknown tie rule {tie_rule!r}")


def nn_encode(x: Sequence[int] | np.ndarray, cb: Codebook, rho: DistortionMatrix) -> Tuple[int, np.ndarray]:
    """Smallest index achieving the minimum per-letter distortion, and its word."""

    seq = np.asarray(x, dtype=np.int64)
    if seq.size != cb.n:
        raise DimensionMismatchError(f"source of length {seq.size}, codewords of length {cb.n}")
    index = int(nn_encode_batch(seq[None, :], cb.words, rho.cost)[0])
    return index, cb.words[index]


# ----------------------------------------------------------------------
# Sequential maximal coupling
# ----------------------------------------------------------------------
def _draw(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # rows with no mass are never used; give them a dummy law to keep the stream aligned
    safe = np.where(weights.sum(axis=1, keepdims=True) > 0.0, weights, 1.0)
    return sample_rows(safe, rng)


def _overlap(remaining: np.ndarray, psi: np.ndarray, left: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = remaining / float(left)
    m = np.minimum(p, psi[None, :])
    return p, m, m.sum(axis=1)


def marton_coupling_batch(
    t: NType, psi: Pmf, rng: np.random.Generator, runs: int
) -> Tuple[np.ndarray, np.ndarray]:
    """``runs`` independent draws of ``(X_hat^n, Y^n)`` from the sequential coupling."""

    if psi.alphabet != t.alphabet:
        raise DimensionMismatchError("type and target must share an alphabet")
    n, k = t.n, t.size
    remaining = np.tile(np.asarray(t.counts, dtype=float), (runs, 1))
    xhat = np.empty((runs, n), dtype=np.int64)
    y = np.empty((runs, n), dtype=np.int64)
    rows = np.arange(runs)
    for i in range(n):
        p, m, w = _overlap(remaining, psi.mass, n - i)
        same = rng.random(runs) < w
        common = _draw(m, rng)
        x_rest = _draw(p - m, rng)
        y_rest = _draw(psi.mass[None, :] - m, rng)
        xhat[:, i] = np.where(same, common, x_rest)
        y[:, i] = np.where(same, common, y_rest)
        remaining[rows, xhat[:, i]] -= 1.0
    return xhat, y


def marton_coupling(t: NType, psi: Pmf, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    xhat, y = marton_coupling_batch(t, psi, rng, 1)
    return xhat[0], y[0]


def marton_channel(t: NType, psi: Pmf, xhat: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Y^n`` given the realized class members ``xhat`` (one per row).

    Coordinate i keeps ``y = x_hat_i`` with probability ``m(x_hat_i) / p(x_hat_i)``
    and otherwise draws from the residual of psi; with ``xhat`` uniform on the
    class this reproduces the sequential coupling exactly.
    """

    xs = np.atleast_2d(np.asarray(xhat, dtype=np.int64))
    runs, n = xs.shape
    if n != t.n:
        raise DimensionMismatchError(f"sequences of length {n}, type has n={t.n}")
    remaining = np.tile(np.asarray(t.counts, dtype=float), (runs, 1))
    y = np.empty_like(xs)
    rows = np.arange(runs)
    for i in range(n):
        p, m, _ = _overlap(remaining, psi.mass, n - i)
        a = xs[:, i]
        keep = rng.random(runs) < m[rows, a] / p[rows, a]
        y_rest = _draw(psi.mass[None, :] - m, rng)
        y[:, i] = np.where(keep, a, y_rest)
        remaining[rows, a] -= 1.0
    return y


def marton_coupling_law(t: NType, psi: Pmf) -> Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], float]:
    """Exact law of the sequential coupling, enumerated over every branch."""

    if t.n > 12:
        raise CapExceededError("exact coupling law is limited to n <= 12")
    law: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], float] = {}

    def walk(prefix: np.ndarray, xs: Tuple[int, ...], ys: Tuple[int, ...], prob: float) -> None:
        if len(xs) == t.n:
            law[(xs, ys)] = law.get((xs, ys), 0.0) + prob
            return
        p = conditional_remaining(t, prefix).mass
        m = np.minimum(p, psi.mass)
        w = float(m.sum())
        for a in range(t.size):
            if p[a] == 0.0:
                continue
            step = prefix.copy()
            step[a] += 1
            for b in range(t.size):
                if a == b:
                    weight = m[a]
                elif w < 1.0:
                    weight = (p[a] - m[a]) * (psi.mass[b] - m[b]) / (1.0 - w)
                else:
                    weight = 0.0
                if weight > 0.0:
                    walk(step, xs + (a,), ys + (b,), prob * weight)

    walk(np.zeros(t.size, dtype=np.int64), (), (), 1.0)
    return law


def marton_bound(psi: Pmf, n: int) -> float:
    """``sqrt(KL_nats(uniform on T_n(psi_n) || psi^n) / (2n))``."""

    return math.sqrt(max(normalized_type_kl(psi, n), 0.0) * math.log(2.0) / 2.0)


# ----------------------------------------------------------------------
# Exact coupling on the product space
# ----------------------------------------------------------------------
class ExactProductCoupling:
    """Optimal coupling of the uniform class law and ``psi^n`` under the per-letter average ``rho_n``.

    ``rho`` is a letter cost on the output alphabet (``|Y| x |Y|``); Hamming when omitted.
    """

    def __init__(self, t: NType, psi: Pmf, rho: Optional[DistortionMatrix] = None) -> None:
        self.t = t
        self.psi = psi
        k, n = t.size, t.n
        if rho is None:
            rho = DistortionMatrix.hamming(psi.alphabet, psi.alphabet)
        if rho.cost.shape != (k, k):
            raise DimensionMismatchError(f"letter cost of shape {rho.cost.shape} is not {k} x {k}")
        self.members = enumerate_type_class(t, cap=config.EXACT_COUPLING_CAP)
        if self.members.shape[0] * k**n > config.EXACT_COUPLING_CAP:
            raise CapExceededError("product space too large for an exact coupling")
        self.outputs = np.stack(np.unravel_index(np.arange(k**n), (k,) * n), axis=1)
        demand = np.prod(psi.mass[self.outputs], axis=1)
        supply = np.full(self.members.shape[0], 1.0 / self.members.shape[0])
        cost = rho.cost[self.members[:, None, :], self.outputs[None, :, :]].mean(axis=2)
        self.flow, pivots, _, _ = network_simplex(supply, demand, cost)
        self.cost = float(np.sum(self.flow * cost))
        logger.info("exact product coupling for n=%d: %d x %d cells, %d pivots", n, *cost.shape, pivots)

    def sample(self, xhat: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ranks = sequence_rank(xhat, self.t)
        return self.outputs[sample_rows(self.flow[ranks], rng)]


# ----------------------------------------------------------------------
# Continuous sources
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Density:
    """Gaussian (loc=mean, scale=std), uniform (loc=low, scale=width) or point mass at loc."""

    family: Literal["gaussian", "uniform", "point"]
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in ("gaussian", "uniform", "point"):
            raise ConfigError(f"unknown density family {self.family!r}")
        if self.family != "point" and not self.scale > 0:
            raise ConfigError("density scale must be positive")

    @classmethod
    def gaussian(cls, mean: float = 0.0, std: float = 1.0) -> "Density":
        return cls("gaussian", mean, std)

    @classmethod
    def uniform(cls, low: float, high: float) -> "Density":
        return cls("uniform", low, high - low)

    @classmethod
    def point(cls, at: float) -> "Density":
        return cls("point", at, 0.0)

    def _frozen(self):
        if self.family == "gaussian":
            return stats.norm(loc=self.loc, scale=self.scale)
        return stats.uniform(loc=self.loc, scale=self.scale)

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        if self.family == "point":
            return (np.asarray(x, dtype=float) >= self.loc).astype(float)
        return self._frozen().cdf(x)

    def ppf(self, u: np.ndarray | float) -> np.ndarray:
        if self.family == "point":
            return np.full(np.shape(u), self.loc)
        return self._frozen().ppf(u)

    def pdf(self, x: float) -> float:
        return float(self._frozen().pdf(x))

    def support(self) -> Tuple[float, float]:
        if self.family == "gaussian":
            return (-math.inf, math.inf)
        if self.family == "uniform":
            return (self.loc, self.loc + self.scale)
        return (self.loc, self.loc)

    def sample(self, rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
        return self.ppf(rng.random(shape))

    def to_dict(self) -> Dict[str, Any]:
        if self.family == "gaussian":
            return {"family": "gaussian", "mean": self.loc, "std": self.scale}
        if self.family == "uniform":
            return {"family": "uniform", "low": self.loc, "high": self.loc + self.scale}
        return {"family": "point", "at": self.loc}


def _check_grid(k: float, levels: int) -> None:
    if not k > 0:
        raise ConfigError("discretization range k must be positive")
    if levels < 1:
        raise ConfigError("at least one discretization level is required")


def grid_labels(k: float, levels: int) -> np.ndarray:
    _check_grid(k, levels)
    width = 2.0 * k / levels
    return -k + (np.arange(levels) + 0.5) * width


def grid_edges(k: float, levels: int) -> np.ndarray:
    """Interior cell boundaries; the outer cells extend to infinity."""

    _check_grid(k, levels)
    return -k + np.arange(1, levels) * (2.0 * k / levels)


def cell_index(x: np.ndarray, k: float, levels: int) -> np.ndarray:
    width = 2.0 * k / levels
    return np.clip(np.floor((np.asarray(x, dtype=float) + k) / width), 0, levels - 1).astype(np.int64)


def discretize(density: Density, k: float, levels: int) -> Pmf:
    """Uniform L-cell quantizer on [-k, k] applied to ``density``; outer cells absorb the tails."""

    labels = grid_labels(k, levels)
    cdf = np.concatenate([[0.0], density.cdf(grid_edges(k, levels)), [1.0]])
    return Pmf.from_weights(Alphabet(tuple(labels)), np.diff(cdf))


def discretization_cost(density: Density, k: float, levels: int) -> float:
    """E[(X - q(X))^2] for the grid quantizer, by quadrature per cell."""

    labels = grid_labels(k, levels)
    if density.family == "point":
        return float((density.loc - labels[cell_index(density.loc, k, levels)]) ** 2)
    bounds = np.concatenate([[-math.inf], grid_edges(k, levels), [math.inf]])
    low, high = density.support()
    total = 0.0
    for label, a, b in zip(labels, bounds[:-1], bounds[1:]):
        a, b = max(a, low), min(b, high)
        if a >= b:
            continue
        value, _ = integrate.quad(lambda x: (x - label) ** 2 * density.pdf(x), a, b)
        total += value
    return total


def _lift(target: Density, cells: np.ndarray, k: float, levels: int, rng: np.random.Generator) -> np.ndarray:
    """Quantile coupling of psi_k back to psi: uniform position inside each cell's CDF interval."""

    cdf = np.concatenate([[0.0], target.cdf(grid_edges(k, levels)), [1.0]])
    lower, upper = cdf[cells], cdf[cells + 1]
    return target.ppf(lower + (upper - lower) * rng.random(cells.shape))


# ----------------------------------------------------------------------
# Configuration and results
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SimConfig:
    rate_bits: float
    n_list: Tuple[int, ...]
    trials: int
    mu: Optional[Pmf] = None
    psi: Optional[Pmf] = None
    rho: Optional[DistortionMatrix] = None
    seed: int = config.DEFAULT_SEED
    mode: SimMode = "finite"
    source: Optional[Density] = None
    target: Optional[Density] = None
    k: float = 4.0
    levels: int = 16
    coupling: CouplingMode = "auto"
    tie_rule: TieRule = "first"
    fixed_codebook: bool = False
    codebook_cap: int = config.CODEBOOK_CAP
    threads: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        if not self.rate_bits > 0:
            raise ConfigError("rate must be positive")
        if self.trials < 1:
            raise ConfigError("at least one trial is required")
        if not self.n_list or min(self.n_list) < 1:
            raise ConfigError("block lengths must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.coupling not in ("auto", "exact", "marton"):
            raise ConfigError(f"unknown coupling {self.coupling!r}")
        if self.tie_rule not in ("first", "last"):
            raise ConfigError(f"unknown tie rule {self.tie_rule!r}")
        if self.mode == "finite":
            if self.mu is None or self.psi is None or self.rho is None:
                raise ConfigError("finite mode needs mu, psi and rho")
            self.rho.check(self.mu.size, self.psi.size)
        elif self.mode == "continuous":
            if self.source is None or self.target is None:
                raise ConfigError("continuous mode needs source and target densities")
            _check_grid(self.k, self.levels)
        else:
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass
class BlockRecord:
    """Summary of all trials at one block length."""

    n: int
    codewords: int
    rate_bits: float
    trials: int
    distortion_mean: float
    distortion_stderr: float
    output_pmf: List[List[float]]
    marginal_chi2_p: float
    pair_chi2_p: float = math.nan
    uniformity_chi2_p: float = math.nan
    marton_bound: float = math.nan
    marton_observed: float = math.nan
    marton_stderr: float = math.nan
    converse_margin: float = math.nan
    converse_passed: Optional[bool] = None
    coupling: str = "none"
    ntype: Optional[Tuple[int, ...]] = None
    type_tied: bool = False
    codeword_type_l1: float = math.nan
    favorite_type_l1: float = math.nan
    step_a: float = math.nan
    step_b: float = math.nan
    step_c: float = math.nan
    triangle_bound: float = math.nan

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class SimResult:
    scheme: Literal["type-class", "iid", "continuous"]
    seed: int
    rate_bits: float
    records: List[BlockRecord] = field(default_factory=list)

    @property
    def columns(self) -> Tuple[str, ...]:
        if self.scheme == "continuous":
            return SUMMARY_COLUMNS + CONTINUOUS_COLUMNS
        if self.scheme == "iid":
            return SUMMARY_COLUMNS + IID_COLUMNS
        return SUMMARY_COLUMNS

    def to_rows(self) -> List[List[Any]]:
        return [[getattr(r, c) for c in self.columns] for r in self.records]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "rate_bits": self.rate_bits,
            "records": [r.to_dict() for r in self.records],
        }


# ----------------------------------------------------------------------
# Statistics
# ----------------------------------------------------------------------
def _stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def marginal_chi2(outputs: np.ndarray, psi: Pmf) -> float:
    """Bonferroni-adjusted chi-square p-value of every coordinate against psi."""

    support = psi.support()
    if support.size < 2 or outputs.shape[0] < 2:
        return 1.0
    trials, n = outputs.shape
    smallest = 1.0
    for i in range(n):
        observed = np.bincount(outputs[:, i], minlength=psi.size)
        if np.any(np.delete(observed, support) > 0):
            return 0.0
        result = stats.chisquare(observed[support], trials * psi.mass[support])
        smallest = min(smallest, float(result.pvalue))
    return min(1.0, smallest * n)


def pair_independence_chi2(outputs: np.ndarray, psi: Pmf) -> float:
    """Independence test on coordinate pairs (0, 1) and (0, n-1), Bonferroni-adjusted."""

    trials, n = outputs.shape
    if n < 2 or psi.support().size < 2 or trials < 2:
        return 1.0
    pairs = sorted({(0, 1), (0, n - 1)})
    smallest = 1.0
    for i, j in pairs:
        table = np.zeros((psi.size, psi.size))
        np.add.at(table, (outputs[:, i], outputs[:, j]), 1.0)
        table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
        if min(table.shape) < 2:
            continue
        result = stats.chi2_contingency(table, correction=False)
        smallest = min(smallest, float(result[1]))
    return min(1.0, smallest * len(pairs))


def lemma2_uniformity_test(samples: np.ndarray, t: NType) -> float:
    """Chi-square p-value of encoder outputs against the uniform law on the class."""

    size = multinomial_coefficient(t.counts)
    if size > config.UNIFORMITY_CLASS_CAP:
        raise CapExceededError(f"type class of size {size} is too large to tabulate")
    if size == 1:
        return 1.0
    ranks = sequence_rank(samples, t)
    observed = np.bincount(ranks, minlength=size)
    return float(stats.chisquare(observed).pvalue)


# ----------------------------------------------------------------------
# Pipelines
# ----------------------------------------------------------------------
@dataclass
class _Chunk:
    distortion: np.ndarray
    xhat: np.ndarray
    y: np.ndarray
    mismatch: Optional[np.ndarray] = None
    step_a: Optional[np.ndarray] = None
    step_b: Optional[np.ndarray] = None
    step_c: Optional[np.ndarray] = None


def _chunk_sizes(trials: int, cells_per_trial: int) -> List[int]:
    size = max(1, min(config.CHUNK_TRIALS, config.CHUNK_CELL_BUDGET // max(1, cells_per_trial)))
    sizes = [size] * (trials // size)
    if trials % size:
        sizes.append(trials % size)
    return sizes


class _TypeClassBlock:
    """Everything the type-class scheme needs at one block length."""

    def __init__(self, cfg: SimConfig, mu: Pmf, psi: Pmf, rho: DistortionMatrix, n: int) -> None:
        self.cfg = cfg
        self.mu, self.psi, self.rho, self.n = mu, psi, rho, n
        self.t = closest_ntype(psi, n)
        self.tied = closest_ntype_is_tied(psi, n)
        self.count = codeword_count(n, cfg.rate_bits, cfg.codebook_cap)
        class_size = multinomial_coefficient(self.t.counts)
        exact_fits = class_size * psi.size**n <= config.EXACT_COUPLING_CAP
        if cfg.coupling == "exact" and not exact_fits:
            raise CapExceededError(f"exact coupling at n={n} exceeds the product-space cap")
        use_exact = cfg.coupling == "exact" or (cfg.coupling == "auto" and exact_fits)
        # codewords and outputs share an alphabet only when the source does too
        letter_cost = rho if mu.alphabet == psi.alphabet else None
        self.exact = ExactProductCoupling(self.t, psi, letter_cost) if use_exact else None
        self.shared: Optional[np.ndarray] = None
        if cfg.fixed_codebook:
            self.shared = generate_codebook(self.t, cfg.rate_bits, stream_rng(cfg.seed, n, 2**32), cfg.codebook_cap).words

    @property
    def coupling_name(self) -> str:
        return "exact-ot" if self.exact is not None else "marton"

    def run(self, sources: np.ndarray, rng: np.random.Generator) -> _Chunk:
        trials = sources.shape[0]
        if self.shared is not None:
            words = self.shared
            index = nn_encode_batch(sources, words, self.rho.cost, self.cfg.tie_rule)
            xhat = words[index]
        else:
            words = sample_uniform_type_class(self.t, rng, size=trials * self.count).reshape(trials, self.count, self.n)
            index = nn_encode_batch(sources, words, self.rho.cost, self.cfg.tie_rule)
            xhat = words[np.arange(trials), index]
        if self.exact is not None:
            y = self.exact.sample(xhat, rng)
        else:
            y = marton_channel(self.t, self.psi, xhat, rng)
        distortion = self.rho.cost[sources, y].mean(axis=1)
        return _Chunk(distortion, xhat, y, mismatch=(xhat != y).mean(axis=1))


def _run_chunks(cfg: SimConfig, n: int, cells: int, job) -> List[_Chunk]:
    sizes = _chunk_sizes(cfg.trials, cells)
    tasks = list(enumerate(sizes))
    return parallel_map(lambda task: job(task[1], stream_rng(cfg.seed, n, task[0])), tasks, cfg.threads)


def _merge(chunks: List[_Chunk], name: str) -> Optional[np.ndarray]:
    parts = [getattr(c, name) for c in chunks]
    if any(p is None for p in parts):
        return None
    return np.concatenate(parts, axis=0)


def _type_class_record(
    block: _TypeClassBlock, chunks: List[_Chunk], info: Optional[ConstrainedInformation]
) -> BlockRecord:
    n, psi = block.n, block.psi
    distortion = _merge(chunks, "distortion")
    y = _merge(chunks, "y")
    xhat = _merge(chunks, "xhat")
    mismatch = _merge(chunks, "mismatch")
    trials = distortion.size
    rate = math.log2(block.count) / n
    output_pmf = [list(np.bincount(y[:, i], minlength=psi.size) / trials) for i in range(n)]
    record = BlockRecord(
        n=n,
        codewords=block.count,
        rate_bits=rate,
        trials=trials,
        distortion_mean=float(distortion.mean()),
        distortion_stderr=_stderr(distortion),
        output_pmf=output_pmf,
        marginal_chi2_p=marginal_chi2(y, psi),
        pair_chi2_p=pair_independence_chi2(y, psi),
        marton_bound=marton_bound(psi, n),
        marton_observed=float(mismatch.mean()),
        marton_stderr=_stderr(mismatch),
        coupling=block.coupling_name,
        ntype=block.t.counts,
        type_tied=block.tied,
        codeword_type_l1=float(np.abs(block.t.pmf().mass - psi.mass).sum()),
    )
    if multinomial_coefficient(block.t.counts) <= config.UNIFORMITY_CLASS_CAP:
        record.uniformity_chi2_p = lemma2_uniformity_test(xhat, block.t)
    if info is not None:
        point = RateDistortionPoint(rate, record.distortion_mean, n, "simulated", record.distortion_stderr)
        check = converse_check(point, block.mu, psi, block.rho, info)
        record.converse_margin = check.margin
        record.converse_passed = check.passed
    logger.info(
        "n=%d: %d codewords, distortion %.5f +/- %.5f (%s coupling)",
        n, block.count, record.distortion_mean, record.distortion_stderr, block.coupling_name,
    )
    return record


def simulate_finite(cfg: SimConfig) -> SimResult:
    """Type-class random coding followed by an output-law-preserving coupling."""

    if cfg.mode != "finite":
        raise ConfigError("simulate_finite needs mode='finite'")
    mu, psi, rho = cfg.mu, cfg.psi, cfg.rho
    info = ConstrainedInformation(mu, psi, rho)
    result = SimResult("type-class", cfg.seed, cfg.rate_bits)
    for n in cfg.n_list:
        block = _TypeClassBlock(cfg, mu, psi, rho, n)

        def job(size: int, rng: np.random.Generator, block: _TypeClassBlock = block) -> _Chunk:
            sources = rng.choice(mu.size, size=(size, block.n), p=mu.mass)
            return block.run(sources, rng)

        chunks = _run_chunks(cfg, n, block.count * n, job)
        result.records.append(_type_class_record(block, chunks, info))
    return result


def simulate_iid_codebook(cfg: SimConfig) -> SimResult:
    """Same source and encoder, but codewords drawn i.i.d. psi and no coupling."""

    if cfg.mode != "finite":
        raise ConfigError("simulate_iid_codebook needs mode='finite'")
    mu, psi, rho = cfg.mu, cfg.psi, cfg.rho
    result = SimResult("iid", cfg.seed, cfg.rate_bits)
    for n in cfg.n_list:
        count = codeword_count(n, cfg.rate_bits, cfg.codebook_cap)
        shared = None
        if cfg.fixed_codebook:
            shared = generate_iid_codebook(psi, n, cfg.rate_bits, stream_rng(cfg.seed, n, 2**32), cfg.codebook_cap).words

        def job(size: int, rng: np.random.Generator, n: int = n, count: int = count, shared=shared) -> _Chunk:
            sources = rng.choice(mu.size, size=(size, n), p=mu.mass)
            if shared is None:
                words = rng.choice(psi.size, size=(size, count, n), p=psi.mass)
                y = words[np.arange(size), nn_encode_batch(sources, words, rho.cost, cfg.tie_rule)]
            else:
                y = shared[nn_encode_batch(sources, shared, rho.cost, cfg.tie_rule)]
            return _Chunk(rho.cost[sources, y].mean(axis=1), y, y)

        chunks = _run_chunks(cfg, n, count * n, job)
        distortion = _merge(chunks, "distortion")
        y = _merge(chunks, "y")
        trials = distortion.size
        types = np.stack([np.bincount(row, minlength=psi.size) for row in y]) / n
        mean_l1 = float(np.abs(types - psi.mass[None, :]).sum(axis=1).mean())
        favorite = iid_codebook_rate(mu, psi, rho, float(distortion.mean())).favorite_type
        record = BlockRecord(
            n=n,
            codewords=count,
            rate_bits=math.log2(count) / n,
            trials=trials,
            distortion_mean=float(distortion.mean()),
            distortion_stderr=_stderr(distortion),
            output_pmf=[list(np.bincount(y[:, i], minlength=psi.size) / trials) for i in range(n)],
            marginal_chi2_p=marginal_chi2(y, psi),
            pair_chi2_p=pair_independence_chi2(y, psi),
            codeword_type_l1=mean_l1,
            favorite_type_l1=float(np.abs(favorite.mass - psi.mass).sum()),
        )
        result.records.append(record)
    return result


def simulate_continuous(cfg: SimConfig) -> SimResult:
    """Discretize, run the finite scheme on the grid, and lift back to the target law."""

    if cfg.mode != "continuous":
        raise ConfigError("simulate_continuous needs mode='continuous'")
    source, target, k, levels = cfg.source, cfg.target, cfg.k, cfg.levels
    mu_k = discretize(source, k, levels)
    psi_k = discretize(target, k, levels)
    rho = DistortionMatrix.squared_error(mu_k.alphabet, psi_k.alphabet)
    labels = mu_k.alphabet.array()
    info = ConstrainedInformation(mu_k, psi_k, rho)
    result = SimResult("continuous", cfg.seed, cfg.rate_bits)
    for n in cfg.n_list:
        block = _TypeClassBlock(cfg, mu_k, psi_k, rho, n)

        def job(size: int, rng: np.random.Generator, block: _TypeClassBlock = block) -> _Chunk:
            x = source.sample(rng, (size, block.n))
            cells = cell_index(x, k, levels)
            inner = block.run(cells, rng)
            y = _lift(target, inner.y, k, levels, rng)
            inner.step_a = ((x - labels[cells]) ** 2).mean(axis=1)
            inner.step_b = inner.distortion
            inner.step_c = ((labels[inner.y] - y) ** 2).mean(axis=1)
            inner.distortion = ((x - y) ** 2).mean(axis=1)
            return inner

        chunks = _run_chunks(cfg, n, block.count * n, job)
        # converse and chi-square checks concern the grid stage
        grid = [_Chunk(c.step_b, c.xhat, c.y, c.mismatch) for c in chunks]
        record = _type_class_record(block, grid, info)
        end_to_end = _merge(chunks, "distortion")
        steps = [float(_merge(chunks, name).mean()) for name in ("step_a", "step_b", "step_c")]
        record.step_a, record.step_b, record.step_c = steps
        record.triangle_bound = sum(math.sqrt(s) for s in steps) ** 2
        record.distortion_mean = float(end_to_end.mean())
        record.distortion_stderr = _stderr(end_to_end)
        result.records.append(record)
    return result


def simulate(cfg: SimConfig) -> SimResult:
    if cfg.mode == "continuous":
        return simulate_continuous(cfg)
    return simulate_finite(cfg)


def encoder_outputs(
    mu: Pmf,
    t: NType,
    rho: DistortionMatrix,
    rate_bits: float,
    trials: int,
    seed: int = config.DEFAULT_SEED,
    tie_rule: TieRule = "first",
    threads: Optional[int] = None,
) -> np.ndarray:
    """Encoder outputs ``X_hat^n`` of independent trials, fresh codebook each time."""

    cfg = SimConfig(
        rate_bits, (t.n,), trials, mu=mu, psi=t.pmf(), rho=rho, seed=seed, tie_rule=tie_rule, threads=threads
    )
    count = codeword_count(t.n, rate_bits)

    def job(size: int, rng: np.random.Generator) -> _Chunk:
        sources = rng.choice(mu.size, size=(size, t.n), p=mu.mass)
        words = sample_uniform_type_class(t, rng, size=size * count).reshape(size, count, t.n)
        xhat = words[np.arange(size), nn_encode_batch(sources, words, rho.cost, tie_rule)]
        return _Chunk(np.zeros(size), xhat, xhat)

    return _merge(_run_chunks(cfg, t.n, count * t.n, job), "xhat")


__all__ = [
    "SUMMARY_COLUMNS",
    "Codebook",
    "codeword_count",
    "generate_codebook",
    "generate_iid_codebook",
    "nn_encode",
    "nn_encode_batch",
    "marton_coupling",
    "marton_coupling_batch",
    "marton_channel",
    "marton_coupling_law",
    "marton_bound",
    "ExactProductCoupling",
    "Density",
    "grid_labels",
    "grid_edges",
    "cell_index",
    "discretize",
    "discretization_cost",
    "SimConfig",
    "BlockRecord",
    "SimResult",
    "marginal_chi2",
    "pair_independence_chi2",
    "lemma2_uniformity_test",
    "simulate_finite",
    "simulate_iid_codebook",
    "simulate_continuous",
    "simulate",
    "encoder_outputs",
]
