from __future__ import annotations

from fractions import Fraction
import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest
from scipy import stats

from oclab.core import Alphabet, Pmf
from oclab.errors import CapExceededError, DimensionMismatchError, InvalidDistributionError
from oclab.typeclass import (
    NType,
    closest_ntype,
    closest_ntype_is_tied,
    conditional_remaining,
    enumerate_type_class,
    multinomial_coefficient,
    normalized_type_kl,
    sample_uniform_type_class,
    sequence_rank,
    type_class_info,
    type_class_log_size,
    type_of,
)


def test_ntype_validation(binary):
    with pytest.raises(DimensionMismatchError):
        NType(binary, (1, 2, 3))
    with pytest.raises(InvalidDistributionError):
        NType(binary, (-1, 2))
    with pytest.raises(InvalidDistributionError):
        NType(binary, (0, 0))


def test_type_of_and_membership(binary):
    t = type_of([0, 1, 1], binary)
    assert t.counts == (1, 2) and t.n == 3
    assert t.contains([1, 0, 1])
    assert not t.contains([0, 0, 1])
    assert not t.contains([0, 1])
    assert_array_equal(t.canonical(), [0, 1, 1])
    assert_allclose(t.pmf().mass, [1 / 3, 2 / 3])


# ----------------------------------------------------------------------
# Closest type
# ----------------------------------------------------------------------
def test_closest_type_rounds_by_largest_remainder(binary):
    assert closest_ntype(Pmf(binary, np.array([0.7, 0.3])), 4).counts == (3, 1)
    assert closest_ntype(Pmf.uniform(binary), 8).counts == (4, 4)


def test_closest_type_stays_inside_the_support():
    psi = Pmf(Alphabet.range(3), np.array([0.0, 0.5, 0.5]))
    t = closest_ntype(psi, 3)
    assert t.counts == (0, 2, 1)
    assert closest_ntype_is_tied(psi, 3)


def test_tie_detection(uniform_binary):
    assert closest_ntype(uniform_binary, 3).counts == (2, 1)
    assert closest_ntype_is_tied(uniform_binary, 3)
    assert not closest_ntype_is_tied(uniform_binary, 4)
    with pytest.raises(ValueError):
        closest_ntype(uniform_binary, 0)


# ----------------------------------------------------------------------
# Sizes and enumeration
# ----------------------------------------------------------------------
def test_class_sizes(binary):
    assert multinomial_coefficient((2, 2)) == 6
    assert multinomial_coefficient((1, 2, 3)) == 60
    assert type_class_log_size(NType(binary, (2, 2))) == pytest.approx(math.log2(6.0))
    assert type_class_log_size(NType(binary, (4, 0))) == 0.0
    assert type_class_log_size(NType(binary, (3, 1))) == pytest.approx(2.0)


def test_large_block_lengths_use_log_gamma(binary):
    t = NType(binary, (1001, 1000))
    assert type_class_log_size(t) == pytest.approx(math.log2(math.comb(2001, 1000)), rel=1e-12)


def test_enumeration_is_lexicographic(binary):
    members = enumerate_type_class(NType(binary, (2, 1)))
    assert_array_equal(members, [[0, 0, 1], [0, 1, 0], [1, 0, 0]])
    assert_array_equal(sequence_rank(members[::-1], NType(binary, (2, 1))), [2, 1, 0])


def test_rank_rejects_outsiders(binary):
    t = NType(binary, (2, 2))
    with pytest.raises(InvalidDistributionError):
        sequence_rank(np.array([[0, 0, 0, 1]]), t)
    with pytest.raises(DimensionMismatchError):
        sequence_rank(np.array([[0, 1]]), t)


def test_enumeration_cap(binary):
    with pytest.raises(CapExceededError):
        enumerate_type_class(NType(binary, (10, 10)))


def test_enumeration_over_three_letters():
    t = NType(Alphabet.range(3), (1, 1, 2))
    members = enumerate_type_class(t)
    assert members.shape == (12, 4)
    assert len({tuple(row) for row in members.tolist()}) == 12
    assert all(t.contains(row) for row in members)


# ----------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------
def test_uniform_sampling_covers_the_class(binary, rng):
    t = NType(binary, (2, 2))
    draws = sample_uniform_type_class(t, rng, size=60_000)
    assert all(np.bincount(row, minlength=2).tolist() == [2, 2] for row in draws[:100])
    counts = np.bincount(sequence_rank(draws, t), minlength=6)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_single_draw_is_a_member(rng):
    t = NType(Alphabet.range(3), (2, 0, 3))
    assert t.contains(sample_uniform_type_class(t, rng))


def test_conditional_remaining(binary):
    t = NType(binary, (2, 2))
    assert_allclose(conditional_remaining(t, [1, 0]).mass, [1 / 3, 2 / 3])
    assert_allclose(conditional_remaining(t, [2, 1]).mass, [0.0, 1.0])
    with pytest.raises(InvalidDistributionError):
        conditional_remaining(t, [3, 0])
    with pytest.raises(InvalidDistributionError):
        conditional_remaining(t, [2, 2])
    with pytest.raises(DimensionMismatchError):
        conditional_remaining(t, [1])


def test_sequential_conditionals_multiply_to_the_uniform_law():
    t = NType(Alphabet.range(3), (2, 3, 1))
    members = enumerate_type_class(t)
    assert members.shape[0] == 60
    for member in members:
        prefix = np.zeros(3, dtype=np.int64)
        prob = Fraction(1)
        for symbol in member:
            step = conditional_remaining(t, prefix).mass[symbol]
            prob *= Fraction(float(step)).limit_denominator(t.n)
            prefix[symbol] += 1
        assert prob == Fraction(1, multinomial_coefficient(t.counts))


# ----------------------------------------------------------------------
# Divergences
# ----------------------------------------------------------------------
def test_normalized_kl_closed_form(uniform_binary):
    assert normalized_type_kl(uniform_binary, 4) == pytest.approx(0.25 * math.log2(16.0 / 6.0), abs=1e-12)
    assert normalized_type_kl(uniform_binary, 4) == pytest.approx(0.35376, abs=1e-5)


def test_normalized_kl_decreases_with_block_length(uniform_binary):
    values = [normalized_type_kl(uniform_binary, n) for n in (4, 8, 16, 32, 64)]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] < 0.06


def test_normalized_kl_of_a_point_mass(binary):
    assert normalized_type_kl(Pmf.point_mass(binary, 1), 16) == 0.0


@pytest.mark.parametrize("n", [4, 7, 16, 50])
def test_size_bounds_and_divergence_sandwich(n):
    psi = Pmf(Alphabet.range(3), np.array([0.2, 0.3, 0.5]))
    info = type_class_info(closest_ntype(psi, n), psi)
    assert info.satisfies_size_bounds()
    assert info.kl_to_target_bits - 1e-12 <= info.normalized_kl_bits
    assert info.normalized_kl_bits <= info.kl_to_target_bits + 3 * math.log2(n + 1) / n
