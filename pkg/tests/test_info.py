from __future__ import annotations

import math

import numpy as np
from numpy.testing import assert_allclose
import pytest
from scipy.optimize import brentq

from oclab.core import Alphabet, DistortionMatrix, JointPmf, Pmf
from oclab.info import (
    ConstrainedInformation,
    RateDistortionPoint,
    blahut_arimoto,
    converse_check,
    d_classic,
    d_curve,
    entropy_bits,
    floor_coupling,
    i_min,
    iid_codebook_rate,
    im_curve,
    lagrangian_coupling,
    mutual_information,
)
from oclab.transport import ot_solve


def h(p: float) -> float:
    return entropy_bits(np.array([p, 1.0 - p]))


def h_inverse(bits: float) -> float:
    return brentq(lambda p: h(p) - bits, 1e-12, 0.5)


# ----------------------------------------------------------------------
# Basic functionals
# ----------------------------------------------------------------------
def test_entropy_and_mutual_information(binary):
    assert entropy_bits(Pmf.uniform(Alphabet.range(4))) == pytest.approx(2.0)
    assert entropy_bits(Pmf.point_mass(binary, 1)) == 0.0
    bsc = JointPmf(binary, binary, 0.5 * np.array([[0.89, 0.11], [0.11, 0.89]]))
    assert mutual_information(bsc) == pytest.approx(1.0 - h(0.11), abs=1e-12)
    assert mutual_information(bsc) == pytest.approx(0.5, abs=1e-3)
    product = JointPmf(binary, binary, np.outer([0.3, 0.7], [0.6, 0.4]))
    assert mutual_information(product) == pytest.approx(0.0, abs=1e-15)


def test_zero_beta_gives_the_product_coupling(make_instance):
    mu, psi, rho = make_instance(11, 3, 4)
    result = lagrangian_coupling(mu, psi, rho, 0.0)
    assert_allclose(result.coupling.mass, np.outer(mu.mass, psi.mass), atol=1e-12)
    with pytest.raises(ValueError):
        lagrangian_coupling(mu, psi, rho, -1.0)


def test_lagrangian_coupling_keeps_both_marginals(make_instance):
    mu, psi, rho = make_instance(12, 4, 3)
    result = lagrangian_coupling(mu, psi, rho, 5.0)
    assert result.converged
    assert_allclose(result.coupling.x_marginal().mass, mu.mass, atol=1e-9)
    assert_allclose(result.coupling.y_marginal().mass, psi.mass, atol=1e-9)


def test_lagrangian_coupling_beats_other_couplings(make_instance):
    mu, psi, rho = make_instance(13, 3, 4)
    beta = 3.0
    plan = lagrangian_coupling(mu, psi, rho, beta).coupling

    def objective(v: JointPmf) -> float:
        return mutual_information(v) * math.log(2.0) + beta * float(np.sum(v.mass * rho.cost))

    best = objective(plan)
    rng = np.random.default_rng(13)
    for _ in range(100):
        vertex = ot_solve(mu, psi, DistortionMatrix(rng.random((3, 4)))).coupling.mass
        weight = rng.random()
        other = JointPmf(mu.alphabet, psi.alphabet, weight * plan.mass + (1.0 - weight) * vertex)
        assert best <= objective(other) + 1e-8


def test_floor_coupling_on_a_tied_cost_face():
    three = Alphabet.range(3)
    mu = Pmf.uniform(three)
    psi = Pmf(three, np.array([1.0 / 3.0, 0.5, 1.0 / 6.0]))
    rho = DistortionMatrix(np.array([[1.0, 2.0, 2.0], [1.0, 1.0, 0.0], [1.0, 1.0, 2.0]]))
    floor = floor_coupling(mu, psi, rho)
    assert floor.converged and floor.iterations < 1000
    expected = np.array([[1.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.0, 1.0, 0.0]]) / 3.0
    assert_allclose(floor.coupling.mass, expected, atol=1e-9)
    info = ConstrainedInformation(mu, psi, rho)
    result = info.i_min(info.d_min)
    assert result.status == "floor" and result.converged
    assert result.bits == pytest.approx(mutual_information(JointPmf(three, three, expected)), abs=1e-8)


# ----------------------------------------------------------------------
# I_m on the binary benchmark
# ----------------------------------------------------------------------
@pytest.mark.parametrize("D", [0.05, 0.1, 0.25, 0.4])
def test_binary_imin_closed_form(uniform_binary, hamming, D):
    result = i_min(uniform_binary, uniform_binary, hamming, D)
    assert result.status == "interior"
    assert result.bits == pytest.approx(1.0 - h(D), abs=1e-4)
    assert result.beta > 0.0


def test_binary_imin_reference_value(uniform_binary, hamming):
    assert i_min(uniform_binary, uniform_binary, hamming, 0.25).bits == pytest.approx(0.18872, abs=1e-4)


def test_binary_imin_edges(uniform_binary, hamming):
    info = ConstrainedInformation(uniform_binary, uniform_binary, hamming)
    ceiling = info.i_min(0.5)
    assert ceiling.bits == 0.0 and ceiling.beta == 0.0 and ceiling.status == "product"
    floor = info.i_min(0.0)
    assert floor.status == "floor" and floor.flagged and math.isinf(floor.beta)
    assert floor.bits == pytest.approx(1.0, abs=1e-9)
    below = info.i_min(-0.1)
    assert math.isinf(below.bits) and math.isnan(below.beta) and not below.is_feasible


def test_infeasible_below_the_transport_floor(uniform_binary, skewed_binary, hamming):
    info = ConstrainedInformation(uniform_binary, skewed_binary, hamming)
    assert info.d_min == pytest.approx(0.25)
    assert info.d_max == pytest.approx(0.5)
    assert info.i_min(0.2).status == "infeasible"
    assert info.i_min(0.3).is_feasible


def test_point_mass_output_needs_no_information(uniform_binary, binary, hamming):
    psi = Pmf.point_mass(binary, 0)
    result = i_min(uniform_binary, psi, hamming, 0.5)
    assert result.bits == 0.0
    assert d_curve(uniform_binary, psi, hamming, 3.0) == pytest.approx(0.5)


def test_interior_coupling_meets_the_distortion_level(make_instance):
    mu, psi, rho = make_instance(21, 3, 3)
    info = ConstrainedInformation(mu, psi, rho)
    D = info.d_min + 0.4 * (info.d_max - info.d_min)
    result = info.i_min(D)
    cost = float(np.sum(result.coupling.mass * rho.cost))
    assert cost <= D + 1e-6
    assert cost == pytest.approx(D, abs=1e-6)


# ----------------------------------------------------------------------
# Curve shape and the inverse
# ----------------------------------------------------------------------
@pytest.mark.parametrize("seed", range(3))
def test_curve_is_monotone_and_convex(make_instance, seed):
    mu, psi, rho = make_instance(30 + seed, 3, 4)
    curve = im_curve(mu, psi, rho, betas=[0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
    assert curve.is_monotone()
    assert curve.is_convex()
    distortions = [d for _, d, _ in curve.samples]
    assert all(b <= a + 1e-12 for a, b in zip(distortions, distortions[1:]))


def test_sweep_matches_pointwise_queries(make_instance):
    mu, psi, rho = make_instance(40, 3, 3)
    info = ConstrainedInformation(mu, psi, rho)
    levels = np.linspace(info.d_min, info.d_max, 6)[1:-1]
    swept = info.sweep(levels, threads=2)
    assert [s[2] for s in swept.samples] == pytest.approx([info.i_min(float(d)).bits for d in levels])


def test_binary_distortion_rate(uniform_binary, hamming):
    assert d_curve(uniform_binary, uniform_binary, hamming, 0.5) == pytest.approx(0.1100, abs=1e-4)
    assert d_curve(uniform_binary, uniform_binary, hamming, 0.5) == pytest.approx(h_inverse(0.5), abs=1e-5)
    assert d_curve(uniform_binary, uniform_binary, hamming, 0.0) == pytest.approx(0.5)
    assert d_curve(uniform_binary, uniform_binary, hamming, 2.0) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        d_curve(uniform_binary, uniform_binary, hamming, -0.1)


def test_inverse_round_trip(make_instance):
    mu, psi, rho = make_instance(41, 3, 3)
    info = ConstrainedInformation(mu, psi, rho)
    for fraction in (0.2, 0.5, 0.8):
        D = info.d_min + fraction * (info.d_max - info.d_min)
        assert info.d_curve(info.i_min(D).bits) == pytest.approx(D, abs=1e-4)


# ----------------------------------------------------------------------
# Free output law
# ----------------------------------------------------------------------
def test_classic_distortion_rate_for_a_fair_bit(uniform_binary, hamming):
    assert d_classic(uniform_binary, hamming, 0.5) == pytest.approx(0.11, abs=1e-3)
    assert d_classic(uniform_binary, hamming, 0.0) == pytest.approx(0.5)


def test_classic_rate_zero_uses_the_best_constant(skewed_binary, hamming):
    assert d_classic(skewed_binary, hamming, 0.0) == pytest.approx(0.25)


def test_free_output_never_loses_to_a_fixed_one(make_instance):
    mu, psi, rho = make_instance(50, 3, 3)
    for rate in (0.1, 0.3):
        assert d_classic(mu, rho, rate) <= d_curve(mu, psi, rho, rate) + 1e-6


def test_blahut_arimoto_on_a_fair_bit(uniform_binary, hamming):
    result = blahut_arimoto(uniform_binary, hamming, math.log(0.89 / 0.11))
    assert result.converged
    assert result.distortion == pytest.approx(0.11, abs=1e-6)
    assert result.rate_bits == pytest.approx(1.0 - h(0.11), abs=1e-6)
    assert_allclose(result.output.mass, [0.5, 0.5], atol=1e-9)


# ----------------------------------------------------------------------
# Converse and i.i.d. codebooks
# ----------------------------------------------------------------------
def test_converse_accepts_points_above_the_curve(uniform_binary, hamming):
    ok = converse_check(RateDistortionPoint(0.5, 0.2), uniform_binary, uniform_binary, hamming)
    assert ok.passed and ok.margin > 0.0
    assert ok.bound == pytest.approx(h_inverse(0.5), abs=1e-5)


def test_converse_rejects_points_below_the_curve(uniform_binary, hamming):
    bad = converse_check(RateDistortionPoint(0.5, 0.05), uniform_binary, uniform_binary, hamming)
    assert not bad.passed


def test_simulated_points_get_a_sigma_allowance(uniform_binary, hamming):
    point = RateDistortionPoint(0.5, 0.105, n=8, source="simulated", stderr=0.01)
    check = converse_check(point, uniform_binary, uniform_binary, hamming)
    assert check.tolerance == pytest.approx(0.03)
    assert check.passed


def test_rate_distortion_point_validation():
    with pytest.raises(ValueError):
        RateDistortionPoint(-0.1, 0.2)
    with pytest.raises(ValueError):
        RateDistortionPoint(0.1, 0.2, stderr=-1.0)


def test_iid_codebook_rate_on_the_binary_benchmark(uniform_binary, hamming):
    result = iid_codebook_rate(uniform_binary, uniform_binary, hamming, 0.25)
    assert result.rate_bits == pytest.approx(1.0 - h(0.25), abs=1e-5)
    assert_allclose(result.favorite_type.mass, [0.5, 0.5], atol=1e-9)


def test_iid_codebook_rate_edges(uniform_binary, hamming):
    assert iid_codebook_rate(uniform_binary, uniform_binary, hamming, 0.6).rate_bits == 0.0
    assert math.isinf(iid_codebook_rate(uniform_binary, uniform_binary, hamming, -0.1).rate_bits)


def test_iid_codebook_rate_decreases_with_distortion(uniform_binary, skewed_binary, hamming):
    rates = [iid_codebook_rate(uniform_binary, skewed_binary, hamming, D).rate_bits for D in (0.3, 0.35, 0.4, 0.45)]
    assert all(b <= a + 1e-9 for a, b in zip(rates, rates[1:]))
    assert rates[-1] >= 0.0
