"""Finite-alphabet distributions, distortion tables and randomized quantizer models.

Three equivalent descriptions of a randomized quantizer live here:

* Model 1: an encoder/decoder pair driven by common randomness ``Z``.
* Model 2: a joint map ``q(x, z)`` with ``Z ~ nu``.
* Model 3: a finite mixture of deterministic quantizers, i.e. a mixture of the
  joint measures ``mu(dx) delta_{q(x)}(dy)``.

Every conversion between them preserves the induced joint law of ``(X, Y)``.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Any, Dict, List, Literal, Mapping, Sequence, Tuple

import numpy as np

from . import config
from .errors import DimensionMismatchError, InvalidDistributionError, InvalidQuantizerError

logger = logging.getLogger(__name__)

DitherMode = Literal["subtractive", "nonsubtractive"]


def _frozen(values: Any, dtype: type = float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


# ----------------------------------------------------------------------
# Value types
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Alphabet:
    """Ordered, duplicate-free set of real labels."""

    points: Tuple[float, ...]

    def __post_init__(self) -> None:
        points = tuple(float(p) for p in self.points)
        if not points:
            raise InvalidDistributionError("alphabet must be nonempty")
        if not all(math.isfinite(p) for p in points):
            raise InvalidDistributionError("alphabet labels must be finite")
        if any(b <= a for a, b in zip(points, points[1:])):
            raise InvalidDistributionError("alphabet labels must be strictly increasing")
        object.__setattr__(self, "points", points)

    @classmethod
    def range(cls, size: int) -> "Alphabet":
        return cls(tuple(float(i) for i in range(size)))

    @property
    def size(self) -> int:
        return len(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def array(self) -> np.ndarray:
        return np.array(self.points, dtype=float)

    def index_of(self, label: float) -> int:
        try:
            return self.points.index(float(label))
        except ValueError as exc:
            raise DimensionMismatchError(f"label {label!r} not in alphabet") from exc


@dataclass(frozen=True, eq=False)
class Pmf:
    """Probability mass function over a finite alphabet."""

    alphabet: Alphabet
    mass: np.ndarray

    def __post_init__(self) -> None:
        mass = np.array(self.mass, dtype=float)
        if mass.ndim != 1 or mass.shape[0] != self.alphabet.size:
            raise DimensionMismatchError(
                f"mass of shape {mass.shape} does not match alphabet of size {self.alphabet.size}"
            )
        if not np.all(np.isfinite(mass)) or np.any(mass < 0.0):
            raise InvalidDistributionError("probabilities must be finite and nonnegative")
        total = float(mass.sum())
        if abs(total - 1.0) > config.PROB_TOL:
            raise InvalidDistributionError(f"probabilities sum to {total!r}, not 1")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_weights(cls, alphabet: Alphabet, weights: Sequence[float] | np.ndarray) -> "Pmf":
        """Normalize nonnegative weights; round-off negatives are clipped to zero."""

        w = np.array(weights, dtype=float)
        if np.any(w < -config.MARGINAL_TOL):
            raise InvalidDistributionError("weights must be nonnegative")
        w = np.where(w < 0.0, 0.0, w)
        total = float(w.sum())
        if total <= 0.0:
            raise InvalidDistributionError("weights have zero total mass")
        return cls(alphabet, w / total)

    @classmethod
    def uniform(cls, alphabet: Alphabet) -> "Pmf":
        return cls(alphabet, np.full(alphabet.size, 1.0 / alphabet.size))

    @classmethod
    def point_mass(cls, alphabet: Alphabet, index: int) -> "Pmf":
        mass = np.zeros(alphabet.size)
        mass[index] = 1.0
        return cls(alphabet, mass)

    @property
    def size(self) -> int:
        return self.alphabet.size

    def __getitem__(self, index: int) -> float:
        return float(self.mass[index])

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.mass > 0.0)

    @property
    def is_point_mass(self) -> bool:
        return self.support().size == 1

    def expectation(self, values: Sequence[float] | np.ndarray) -> float:
        return float(np.dot(self.mass, np.asarray(values, dtype=float)))

    def allclose(self, other: "Pmf", atol: float = config.MARGINAL_TOL) -> bool:
        return self.alphabet == other.alphabet and bool(np.allclose(self.mass, other.mass, rtol=0.0, atol=atol))

    def to_dict(self) -> Dict[str, Any]:
        return {"alphabet": list(self.alphabet.points), "mass": [float(m) for m in self.mass]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Pmf":
        return cls(Alphabet(tuple(data["alphabet"])), np.asarray(data["mass"], dtype=float))


@dataclass(frozen=True, eq=False)
class JointPmf:
    """Probability matrix on X x Y, rows indexed by X."""

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    mass: np.ndarray

    def __post_init__(self) -> None:
        mass = np.array(self.mass, dtype=float)
        expected = (self.x_alphabet.size, self.y_alphabet.size)
        if mass.shape != expected:
            raise DimensionMismatchError(f"joint mass has shape {mass.shape}, expected {expected}")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0.0):
            raise InvalidDistributionError("joint probabilities must be finite and nonnegative")
        total = float(mass.sum())
        if abs(total - 1.0) > config.PROB_TOL:
            raise InvalidDistributionError(f"joint probabilities sum to {total!r}, not 1")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_weights(cls, x_alphabet: Alphabet, y_alphabet: Alphabet, weights: np.ndarray) -> "JointPmf":
        """Clip solver round-off below zero and renormalize."""

        w = np.array(weights, dtype=float)
        if np.any(w < -config.MARGINAL_TOL):
            raise InvalidDistributionError("joint weights must be nonnegative")
        w = np.where(w < 0.0, 0.0, w)
        total = float(w.sum())
        if total <= 0.0:
            raise InvalidDistributionError("joint weights have zero total mass")
        return cls(x_alphabet, y_alphabet, w / total)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.x_alphabet.size, self.y_alphabet.size)

    def x_marginal(self) -> Pmf:
        return Pmf(self.x_alphabet, self.mass.sum(axis=1))

    def y_marginal(self) -> Pmf:
        return Pmf(self.y_alphabet, self.mass.sum(axis=0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x_alphabet": list(self.x_alphabet.points),
            "y_alphabet": list(self.y_alphabet.points),
            "shape": list(self.shape),
            "mass": [float(m) for m in self.mass.ravel()],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "JointPmf":
        rows, cols = data["shape"]
        mass = np.asarray(data["mass"], dtype=float).reshape(rows, cols)
        return cls(Alphabet(tuple(data["x_alphabet"])), Alphabet(tuple(data["y_alphabet"])), mass)


@dataclass(frozen=True, eq=False)
class DistortionMatrix:
    """Per-letter distortion rho(x, y) as an |X| x |Y| table."""

    cost: np.ndarray

    def __post_init__(self) -> None:
        cost = np.array(self.cost, dtype=float)
        if cost.ndim != 2:
            raise DimensionMismatchError("distortion table must be two-dimensional")
        if not np.all(np.isfinite(cost)) or np.any(cost < 0.0):
            raise InvalidDistributionError("distortions must be finite and nonnegative")
        cost.setflags(write=False)
        object.__setattr__(self, "cost", cost)

    @classmethod
    def hamming(cls, x_alphabet: Alphabet, y_alphabet: Alphabet) -> "DistortionMatrix":
        x, y = x_alphabet.array(), y_alphabet.array()
        return cls((x[:, None] != y[None, :]).astype(float))

    @classmethod
    def squared_error(cls, x_alphabet: Alphabet, y_alphabet: Alphabet) -> "DistortionMatrix":
        x, y = x_alphabet.array(), y_alphabet.array()
        return cls((x[:, None] - y[None, :]) ** 2)

    @classmethod
    def power(cls, x_alphabet: Alphabet, y_alphabet: Alphabet, p: float) -> "DistortionMatrix":
        """rho = |x - y|^p."""

        if p <= 0:
            raise InvalidDistributionError("distortion exponent must be positive")
        x, y = x_alphabet.array(), y_alphabet.array()
        return cls(np.abs(x[:, None] - y[None, :]) ** p)

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.cost.shape[0]), int(self.cost.shape[1]))

    def check(self, x_size: int, y_size: int) -> None:
        if self.shape != (x_size, y_size):
            raise DimensionMismatchError(f"distortion table has shape {self.shape}, expected {(x_size, y_size)}")

    def to_dict(self) -> List[List[float]]:
        return [[float(c) for c in row] for row in self.cost]

    @classmethod
    def from_dict(cls, rows: Sequence[Sequence[float]]) -> "DistortionMatrix":
        return cls(np.asarray(rows, dtype=float))


@dataclass(frozen=True)
class DeterministicQuantizer:
    """An M-level map from source indices to indices of ``y_alphabet``."""

    mapping: Tuple[int, ...]
    level_budget: int
    y_alphabet: Alphabet

    def __post_init__(self) -> None:
        mapping = tuple(int(y) for y in self.mapping)
        if not mapping:
            raise InvalidQuantizerError("quantizer map must be nonempty")
        if self.level_budget < 1:
            raise InvalidQuantizerError("level budget must be positive")
        if min(mapping) < 0 or max(mapping) >= self.y_alphabet.size:
            raise DimensionMismatchError("quantizer output index outside the reproduction alphabet")
        if len(set(mapping)) > self.level_budget:
            raise InvalidQuantizerError(
                f"map uses {len(set(mapping))} outputs but the budget is {self.level_budget}"
            )
        object.__setattr__(self, "mapping", mapping)

    @property
    def x_size(self) -> int:
        return len(self.mapping)

    @property
    def levels(self) -> int:
        return len(set(self.mapping))

    def __call__(self, x: int) -> int:
        return self.mapping[x]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "map": list(self.mapping),
            "level_budget": self.level_budget,
            "y_alphabet": list(self.y_alphabet.points),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DeterministicQuantizer":
        return cls(tuple(data["map"]), int(data["level_budget"]), Alphabet(tuple(data["y_alphabet"])))


@dataclass(frozen=True, eq=False)
class Model2Quantizer:
    """Joint map ``table[x, z]`` (a Y index) with randomizer ``Z ~ nu``."""

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    z_alphabet: Alphabet
    table: np.ndarray
    nu: Pmf
    level_budget: int

    def __post_init__(self) -> None:
        table = np.array(self.table, dtype=np.int64)
        if table.shape != (self.x_alphabet.size, self.z_alphabet.size):
            raise DimensionMismatchError(f"table has shape {table.shape}")
        if self.nu.alphabet != self.z_alphabet:
            raise DimensionMismatchError("nu must live on the randomizer alphabet")
        if table.min() < 0 or table.max() >= self.y_alphabet.size:
            raise DimensionMismatchError("table entry outside the reproduction alphabet")
        for z in range(table.shape[1]):
            if np.unique(table[:, z]).size > self.level_budget:
                raise InvalidQuantizerError(f"column {z} exceeds the level budget {self.level_budget}")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    def column(self, z: int) -> DeterministicQuantizer:
        return DeterministicQuantizer(tuple(self.table[:, z]), self.level_budget, self.y_alphabet)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x_alphabet": list(self.x_alphabet.points),
            "y_alphabet": list(self.y_alphabet.points),
            "z_alphabet": list(self.z_alphabet.points),
            "table": self.table.tolist(),
            "nu": self.nu.to_dict(),
            "level_budget": self.level_budget,
        }


@dataclass(frozen=True, eq=False)
class Model1Code:
    """Encoder ``X x Z -> {1..M}`` and decoder ``{1..M} x Z -> Y`` sharing ``Z ~ nu``."""

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    z_alphabet: Alphabet
    encoder: np.ndarray
    decoder: np.ndarray
    nu: Pmf

    def __post_init__(self) -> None:
        encoder = np.array(self.encoder, dtype=np.int64)
        decoder = np.array(self.decoder, dtype=np.int64)
        if encoder.shape != (self.x_alphabet.size, self.z_alphabet.size):
            raise DimensionMismatchError(f"encoder has shape {encoder.shape}")
        if decoder.ndim != 2 or decoder.shape[1] != self.z_alphabet.size or decoder.shape[0] < 1:
            raise DimensionMismatchError(f"decoder has shape {decoder.shape}")
        if self.nu.alphabet != self.z_alphabet:
            raise DimensionMismatchError("nu must live on the randomizer alphabet")
        if encoder.min() < 1 or encoder.max() > decoder.shape[0]:
            raise DimensionMismatchError("encoder index out of decoder range")
        if decoder.min() < 0 or decoder.max() >= self.y_alphabet.size:
            raise DimensionMismatchError("decoder entry outside the reproduction alphabet")
        encoder.setflags(write=False)
        decoder.setflags(write=False)
        object.__setattr__(self, "encoder", encoder)
        object.__setattr__(self, "decoder", decoder)

    @property
    def level_budget(self) -> int:
        return int(self.decoder.shape[0])


@dataclass(frozen=True, eq=False)
class FiniteMixtureQuantizer:
    """Finitely supported mixture of deterministic quantizers (a Model 3 object)."""

    weights: np.ndarray
    quantizers: Tuple[DeterministicQuantizer, ...]

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=float)
        quantizers = tuple(self.quantizers)
        if not quantizers or weights.shape != (len(quantizers),):
            raise DimensionMismatchError("one weight per quantizer is required")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
            raise InvalidDistributionError("mixture weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > config.PROB_TOL:
            raise InvalidDistributionError("mixture weights must sum to 1")
        head = quantizers[0]
        for q in quantizers[1:]:
            if q.x_size != head.x_size or q.y_alphabet != head.y_alphabet or q.level_budget != head.level_budget:
                raise DimensionMismatchError("mixture components must share alphabets and budget")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "quantizers", quantizers)

    @classmethod
    def from_weights(
        cls, weights: Sequence[float] | np.ndarray, quantizers: Sequence[DeterministicQuantizer]
    ) -> "FiniteMixtureQuantizer":
        w = np.array(weights, dtype=float)
        w = np.where(w < 0.0, 0.0, w)
        return cls(w / w.sum(), tuple(quantizers))

    @property
    def x_size(self) -> int:
        return self.quantizers[0].x_size

    @property
    def y_alphabet(self) -> Alphabet:
        return self.quantizers[0].y_alphabet

    @property
    def level_budget(self) -> int:
        return self.quantizers[0].level_budget

    def to_records(self) -> List[Dict[str, Any]]:
        return [{"weight": float(w), "map": list(q.mapping)} for w, q in zip(self.weights, self.quantizers)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "level_budget": self.level_budget,
            "y_alphabet": list(self.y_alphabet.points),
            "components": self.to_records(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FiniteMixtureQuantizer":
        y_alphabet = Alphabet(tuple(data["y_alphabet"]))
        budget = int(data["level_budget"])
        records = data["components"]
        quantizers = tuple(DeterministicQuantizer(tuple(r["map"]), budget, y_alphabet) for r in records)
        return cls(np.asarray([r["weight"] for r in records], dtype=float), quantizers)


# ----------------------------------------------------------------------
# Induced joints and distortion
# ----------------------------------------------------------------------
def induced_joint(q: DeterministicQuantizer, mu: Pmf) -> JointPmf:
    """Joint law of ``(X, q(X))`` for ``X ~ mu``."""

    if q.x_size != mu.size:
        raise DimensionMismatchError(f"quantizer acts on {q.x_size} points, mu has {mu.size}")
    mass = np.zeros((mu.size, q.y_alphabet.size))
    mass[np.arange(mu.size), np.asarray(q.mapping)] = mu.mass
    return JointPmf(mu.alphabet, q.y_alphabet, mass)


def mixture_joint(m: FiniteMixtureQuantizer, mu: Pmf) -> JointPmf:
    """Convex combination of the component joints, accumulated in component order."""

    if m.x_size != mu.size:
        raise DimensionMismatchError(f"mixture acts on {m.x_size} points, mu has {mu.size}")
    rows = np.arange(mu.size)
    mass = np.zeros((mu.size, m.y_alphabet.size))
    for weight, q in zip(m.weights, m.quantizers):
        mass[rows, np.asarray(q.mapping)] += weight * mu.mass
    return JointPmf(mu.alphabet, m.y_alphabet, mass)


def product_joint(mu: Pmf, psi: Pmf) -> JointPmf:
    """mu x psi, the joint of the 1-level randomized quantizer ``q(x, z) = z``."""

    return JointPmf(mu.alphabet, psi.alphabet, np.outer(mu.mass, psi.mass))


def distortion(v: JointPmf, rho: DistortionMatrix) -> float:
    rho.check(*v.shape)
    return float(np.sum(v.mass * rho.cost))


def output_marginal(v: JointPmf) -> Pmf:
    return v.y_marginal()


# ----------------------------------------------------------------------
# Model conversions
# ----------------------------------------------------------------------
def model2_joint(m2: Model2Quantizer, mu: Pmf) -> JointPmf:
    """Tally the law of ``(X, q(X, Z))`` over the finite product space."""

    if mu.alphabet != m2.x_alphabet:
        raise DimensionMismatchError("mu must live on the quantizer's source alphabet")
    mass = np.zeros((m2.x_alphabet.size, m2.y_alphabet.size))
    for z in range(m2.z_alphabet.size):
        for x in range(m2.x_alphabet.size):
            mass[x, m2.table[x, z]] += m2.nu.mass[z] * mu.mass[x]
    return JointPmf(m2.x_alphabet, m2.y_alphabet, mass)


def model2_to_model3(m2: Model2Quantizer) -> FiniteMixtureQuantizer:
    quantizers = tuple(m2.column(z) for z in range(m2.z_alphabet.size))
    return FiniteMixtureQuantizer(m2.nu.mass, quantizers)


def model1_to_model2(m1: Model1Code) -> Model2Quantizer:
    if m1.encoder.min() < 1 or m1.encoder.max() > m1.level_budget:
        raise DimensionMismatchError("encoder index out of decoder range")
    table = np.empty(m1.encoder.shape, dtype=np.int64)
    for z in range(m1.z_alphabet.size):
        table[:, z] = m1.decoder[m1.encoder[:, z] - 1, z]
    return Model2Quantizer(m1.x_alphabet, m1.y_alphabet, m1.z_alphabet, table, m1.nu, m1.level_budget)


def model2_to_model1(m2: Model2Quantizer) -> Model1Code:
    """Split ``q(x, z)`` into encoder and decoder.

    Indices are handed out per column in order of first appearance over x;
    unused decoder rows repeat the column's first output.
    """

    x_size, z_size = m2.table.shape
    encoder = np.zeros((x_size, z_size), dtype=np.int64)
    decoder = np.zeros((m2.level_budget, z_size), dtype=np.int64)
    for z in range(z_size):
        slots: Dict[int, int] = {}
        for x in range(x_size):
            y = int(m2.table[x, z])
            if y not in slots:
                slots[y] = len(slots) + 1
            encoder[x, z] = slots[y]
        outputs = list(slots)
        decoder[: len(outputs), z] = outputs
        decoder[len(outputs) :, z] = outputs[0]
    return Model1Code(m2.x_alphabet, m2.y_alphabet, m2.z_alphabet, encoder, decoder, m2.nu)


# ----------------------------------------------------------------------
# Dithered uniform quantizer
# ----------------------------------------------------------------------
def uniform_levels(levels: int, step: float) -> np.ndarray:
    """Reconstruction points of a ``levels``-point uniform quantizer centred at 0."""

    return (np.arange(levels) - (levels - 1) / 2.0) * step


def nearest_level(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Index of the nearest grid point; ties go to the smaller label."""

    gaps = np.abs(np.asarray(values, dtype=float)[..., None] - grid)
    closest = gaps.min(axis=-1, keepdims=True)
    return np.argmax(gaps <= closest + config.DEGENERACY_EPS, axis=-1)


def dither_demo(
    x_alphabet: Alphabet,
    levels: int,
    step: float,
    z_alphabet: Alphabet,
    nu: Pmf,
    mode: DitherMode = "subtractive",
) -> Model2Quantizer:
    """Dithered uniform quantizer ``q_u(x + z) - z`` (subtractive) or ``q_u(x + z)``."""

    if step <= 0:
        raise InvalidQuantizerError("step must be positive")
    if levels < 1:
        raise InvalidQuantizerError("at least one level is required")
    if mode not in ("subtractive", "nonsubtractive"):
        raise InvalidQuantizerError(f"unknown dither mode {mode!r}")
    grid = uniform_levels(levels, step)
    low, high = grid[0] - step / 2.0, grid[-1] + step / 2.0
    x = x_alphabet.array()
    if np.any(x < low - config.DEGENERACY_EPS) or np.any(x > high + config.DEGENERACY_EPS):
        raise InvalidQuantizerError(f"source labels fall outside the quantizer range [{low}, {high}]")
    z = z_alphabet.array()
    index = nearest_level(x[:, None] + z[None, :], grid)
    if mode == "nonsubtractive":
        y_alphabet = Alphabet(tuple(grid))
        table = index
    else:
        outputs = np.round(grid[index] - z[None, :], 12) + 0.0
        labels = np.unique(outputs)
        y_alphabet = Alphabet(tuple(labels))
        table = np.searchsorted(labels, outputs)
    logger.debug("dither table (%s) with %d output labels", mode, y_alphabet.size)
    return Model2Quantizer(x_alphabet, y_alphabet, z_alphabet, table, nu, levels)


__all__ = [
    "Alphabet",
    "Pmf",
    "JointPmf",
    "DistortionMatrix",
    "DeterministicQuantizer",
    "Model2Quantizer",
    "Model1Code",
    "FiniteMixtureQuantizer",
    "induced_joint",
    "mixture_joint",
    "product_joint",
    "distortion",
    "output_marginal",
    "model2_joint",
    "model2_to_model3",
    "model1_to_model2",
    "model2_to_model1",
    "uniform_levels",
    "nearest_level",
    "dither_demo",
]
