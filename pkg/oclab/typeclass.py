"""Method-of-types helpers: n-types, type classes and uniform draws from a class."""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from . import config
from .core import Alphabet, Pmf
from .errors import CapExceededError, DimensionMismatchError, InvalidDistributionError
from .info import entropy_bits
from .transport import kl_divergence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NType:
    """Count vector of a length-n sequence over ``alphabet``."""

    alphabet: Alphabet
    counts: Tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != self.alphabet.size:
            raise DimensionMismatchError(f"{len(counts)} counts for an alphabet of size {self.alphabet.size}")
        if any(c < 0 for c in counts):
            raise InvalidDistributionError("type counts must be nonnegative")
        if sum(counts) < 1:
            raise InvalidDistributionError("a type needs block length n >= 1")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def size(self) -> int:
        return len(self.counts)

    def pmf(self) -> Pmf:
        return Pmf(self.alphabet, np.asarray(self.counts, dtype=float) / self.n)

    def canonical(self) -> np.ndarray:
        """The sorted representative: each index repeated by its count."""

        return np.repeat(np.arange(self.size), self.counts)

    def contains(self, sequence: Sequence[int] | np.ndarray) -> bool:
        seq = np.asarray(sequence, dtype=np.int64)
        if seq.size != self.n:
            return False
        return tuple(np.bincount(seq, minlength=self.size)) == self.counts

    def to_dict(self) -> dict:
        return {"alphabet": list(self.alphabet.points), "counts": list(self.counts), "n": self.n}


def type_of(sequence: Sequence[int] | np.ndarray, alphabet: Alphabet) -> NType:
    seq = np.asarray(sequence, dtype=np.int64)
    return NType(alphabet, tuple(np.bincount(seq, minlength=alphabet.size)))


# ----------------------------------------------------------------------
# Closest type
# ----------------------------------------------------------------------
def _rounding(psi: Pmf, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    scaled = n * psi.mass
    base = np.floor(scaled + 1e-9).astype(np.int64)
    base[psi.mass == 0.0] = 0
    fraction = np.clip(scaled - base, 0.0, None)
    fraction[psi.mass == 0.0] = -1.0
    order = np.array(sorted(range(psi.size), key=lambda y: (-fraction[y], y)), dtype=np.int64)
    return base, fraction, order, int(n - base.sum())


def closest_ntype(psi: Pmf, n: int) -> NType:
    """Closest n-type in l1 among those absolutely continuous w.r.t. ``psi``.

    Largest-remainder rounding; equal remainders favour smaller labels.
    """

    if n < 1:
        raise ValueError("block length must be at least 1")
    base, _, order, remaining = _rounding(psi, n)
    counts = base.copy()
    counts[order[:remaining]] += 1
    return NType(psi.alphabet, tuple(counts))


def closest_ntype_is_tied(psi: Pmf, n: int) -> bool:
    """True when another n-type sits at the same l1 distance from ``psi``."""

    if n < 1:
        raise ValueError("block length must be at least 1")
    _, fraction, order, remaining = _rounding(psi, n)
    if remaining <= 0 or remaining >= order.size:
        return False
    last_in, first_out = fraction[order[remaining - 1]], fraction[order[remaining]]
    return bool(first_out > 0.0 and abs(last_in - first_out) <= config.DEGENERACY_EPS)


# ----------------------------------------------------------------------
# Class sizes and enumeration
# ----------------------------------------------------------------------
def multinomial_coefficient(counts: Sequence[int]) -> int:
    value = math.factorial(sum(counts))
    for c in counts:
        value //= math.factorial(c)
    return value


def type_class_log_size(t: NType) -> float:
    """log2 |T_n(t)|; exact big-integer path up to the configured block length."""

    if t.n <= config.TYPE_CLASS_EXACT_MAX_N:
        return math.log2(multinomial_coefficient(t.counts))
    counts = np.asarray(t.counts, dtype=float)
    return float(gammaln(t.n + 1.0) - gammaln(counts + 1.0).sum()) / math.log(2.0)


def _arrangements(remaining: List[int], length: int) -> Iterator[Tuple[int, ...]]:
    if length == 0:
        yield ()
        return
    for y, count in enumerate(remaining):
        if count == 0:
            continue
        remaining[y] -= 1
        for tail in _arrangements(remaining, length - 1):
            yield (y, *tail)
        remaining[y] += 1


def enumerate_type_class(t: NType, cap: int = config.UNIFORMITY_CLASS_CAP) -> np.ndarray:
    """All sequences of the class in lexicographic order, one per row."""

    size = multinomial_coefficient(t.counts)
    if size > cap:
        raise CapExceededError(f"type class has {size} members, cap is {cap}")
    return np.array(list(_arrangements(list(t.counts), t.n)), dtype=np.int64).reshape(size, t.n)


def sequence_rank(sequences: np.ndarray, t: NType) -> np.ndarray:
    """Lexicographic rank of each row within the class of ``t``."""

    members = enumerate_type_class(t)
    rows = np.atleast_2d(np.asarray(sequences, dtype=np.int64))
    if rows.shape[1] != t.n:
        raise DimensionMismatchError(f"sequences of length {rows.shape[1]}, type has n={t.n}")
    if t.n * math.log2(max(t.size, 2)) >= 62:
        lookup = {tuple(row): rank for rank, row in enumerate(members.tolist())}
        try:
            return np.array([lookup[tuple(row)] for row in rows.tolist()], dtype=np.int64)
        except KeyError as exc:
            raise InvalidDistributionError("sequence does not belong to the type class") from exc
    # lexicographic order of the members is increasing order of their base-|Y| codes
    powers = t.size ** np.arange(t.n - 1, -1, -1, dtype=np.int64)
    member_codes = members @ powers
    codes = rows @ powers
    ranks = np.minimum(np.searchsorted(member_codes, codes), member_codes.size - 1)
    if np.any(member_codes[ranks] != codes):
        raise InvalidDistributionError("sequence does not belong to the type class")
    return ranks


# ----------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------
def sample_uniform_type_class(t: NType, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Uniform member(s) of the class: random permutations of the canonical sequence."""

    canonical = t.canonical()
    if size is None:
        return rng.permutation(canonical)
    return rng.permuted(np.tile(canonical, (size, 1)), axis=1)


def conditional_remaining(t: NType, prefix_counts: Sequence[int] | np.ndarray) -> Pmf:
    """Law of the next symbol of a uniform class member given the counts seen so far."""

    prefix = np.asarray(prefix_counts, dtype=np.int64)
    if prefix.shape != (t.size,):
        raise DimensionMismatchError(f"prefix counts of shape {prefix.shape}, expected {(t.size,)}")
    remaining = np.asarray(t.counts, dtype=np.int64) - prefix
    if np.any(remaining < 0):
        raise InvalidDistributionError("prefix is not compatible with the type")
    if remaining.sum() == 0:
        raise InvalidDistributionError("prefix exhausts the type")
    return Pmf(t.alphabet, remaining / remaining.sum())


# ----------------------------------------------------------------------
# Divergences
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class TypeClassInfo:
    ntype: NType
    log_size_bits: float
    entropy_bits: float
    kl_to_target_bits: float

    def size_bounds(self) -> Tuple[float, float]:
        n = self.ntype.n
        upper = n * self.entropy_bits
        return upper - self.ntype.size * math.log2(n + 1), upper

    def satisfies_size_bounds(self, tol: float = 1e-9) -> bool:
        lower, upper = self.size_bounds()
        return lower - tol <= self.log_size_bits <= upper + tol

    @property
    def normalized_kl_bits(self) -> float:
        n = self.ntype.n
        return (n * (self.entropy_bits + self.kl_to_target_bits) - self.log_size_bits) / n


def type_class_info(t: NType, psi: Pmf) -> TypeClassInfo:
    return TypeClassInfo(
        ntype=t,
        log_size_bits=type_class_log_size(t),
        entropy_bits=entropy_bits(t.pmf()),
        kl_to_target_bits=kl_divergence(t.pmf(), psi, units="bits"),
    )


def normalized_type_kl(psi: Pmf, n: int) -> float:
    """(1/n) KL(uniform law on T_n(psi_n) || psi^n) in bits, psi_n the closest n-type."""

    return type_class_info(closest_ntype(psi, n), psi).normalized_kl_bits


__all__ = [
    "NType",
    "type_of",
    "closest_ntype",
    "closest_ntype_is_tied",
    "multinomial_coefficient",
    "type_class_log_size",
    "enumerate_type_class",
    "sequence_rank",
    "sample_uniform_type_class",
    "conditional_remaining",
    "TypeClassInfo",
    "type_class_info",
    "normalized_type_kl",
]
