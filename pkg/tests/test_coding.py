from __future__ import annotations

import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest
from scipy.optimize import linprog

from oclab import config
from oclab.coding import (
    IID_COLUMNS,
    SUMMARY_COLUMNS,
    Codebook,
    Density,
    ExactProductCoupling,
    SimConfig,
    codeword_count,
    discretization_cost,
    discretize,
    encoder_outputs,
    generate_codebook,
    generate_iid_codebook,
    grid_labels,
    lemma2_uniformity_test,
    marginal_chi2,
    marton_bound,
    marton_channel,
    marton_coupling_batch,
    marton_coupling_law,
    nn_encode,
    nn_encode_batch,
    simulate,
    simulate_finite,
    simulate_iid_codebook,
)
from oclab.core import Alphabet, DistortionMatrix, Pmf
from oclab.errors import CapExceededError, ConfigError, DimensionMismatchError, InvalidDistributionError
from oclab.typeclass import NType, sample_uniform_type_class


# ----------------------------------------------------------------------
# Codebooks and the encoder
# ----------------------------------------------------------------------
def test_codeword_count():
    assert codeword_count(4, 1.0) == 16
    assert codeword_count(4, 0.4387) == 4
    assert codeword_count(8, 0.125) == 2
    with pytest.raises(CapExceededError):
        codeword_count(30, 1.0)


def test_type_class_codebook(binary, rng):
    t = NType(binary, (2, 2))
    cb = generate_codebook(t, 1.0, rng)
    assert cb.count == 16 and cb.n == 4
    assert all(t.contains(w) for w in cb.words)
    assert cb.effective_rate == pytest.approx(1.0)
    with pytest.raises(InvalidDistributionError):
        Codebook(np.array([[0, 0, 0, 1]]), 1.0, t)


def test_iid_codebook_shape(uniform_binary, rng):
    cb = generate_iid_codebook(uniform_binary, 6, 0.5, rng)
    assert cb.words.shape == (8, 6)
    assert cb.ntype is None


def test_nearest_neighbour_ties(hamming):
    words = np.array([[0, 0], [1, 1], [0, 1]])
    assert nn_encode_batch(np.array([[0, 1]]), words[:2], hamming.cost, "first")[0] == 0
    assert nn_encode_batch(np.array([[0, 1]]), words[:2], hamming.cost, "last")[0] == 1
    assert nn_encode_batch(np.array([[0, 1]]), words, hamming.cost)[0] == 2
    with pytest.raises(ValueError):
        nn_encode_batch(np.array([[0, 1]]), words, hamming.cost, "middle")


def test_nn_encode_returns_the_word(hamming):
    cb = Codebook(np.array([[1, 1, 0], [0, 0, 1]]), 1.0 / 3.0)
    index, word = nn_encode([0, 0, 0], cb, hamming)
    assert index == 1
    assert_array_equal(word, [0, 0, 1])
    with pytest.raises(DimensionMismatchError):
        nn_encode([0, 0], cb, hamming)


def test_per_trial_codebooks(hamming):
    books = np.array([[[0, 0], [1, 1]], [[1, 1], [0, 0]]])
    assert_array_equal(nn_encode_batch(np.array([[0, 0], [0, 0]]), books, hamming.cost), [0, 1])


def test_encoder_outputs_are_uniform_on_the_class(binary, uniform_binary, hamming):
    t = NType(binary, (2, 2))
    outputs = encoder_outputs(uniform_binary, t, hamming, 1.0, 6000, seed=3)
    assert outputs.shape == (6000, 4)
    assert lemma2_uniformity_test(outputs, t) > 1e-3


def test_uniformity_test_cap(binary):
    with pytest.raises(CapExceededError):
        lemma2_uniformity_test(np.zeros((1, 16), dtype=np.int64), NType(binary, (8, 8)))


# ----------------------------------------------------------------------
# Couplings
# ----------------------------------------------------------------------
def test_marton_bound_reference_value(uniform_binary):
    assert marton_bound(uniform_binary, 4) == pytest.approx(0.3501, abs=1e-4)
    assert marton_bound(uniform_binary, 64) < marton_bound(uniform_binary, 4)


def test_exact_law_at_block_length_two(binary, uniform_binary):
    law = marton_coupling_law(NType(binary, (1, 1)), uniform_binary)
    assert sum(law.values()) == pytest.approx(1.0)
    y_marginal: dict = {}
    x_marginal: dict = {}
    for (xs, ys), prob in law.items():
        y_marginal[ys] = y_marginal.get(ys, 0.0) + prob
        x_marginal[xs] = x_marginal.get(xs, 0.0) + prob
    assert y_marginal == pytest.approx({(0, 0): 0.25, (0, 1): 0.25, (1, 0): 0.25, (1, 1): 0.25})
    assert x_marginal == pytest.approx({(0, 1): 0.5, (1, 0): 0.5})
    mismatch = sum(p * sum(a != b for a, b in zip(xs, ys)) / 2 for (xs, ys), p in law.items())
    assert mismatch == pytest.approx(0.25)


def test_exact_law_size_cap(binary, uniform_binary):
    with pytest.raises(CapExceededError):
        marton_coupling_law(NType(binary, (7, 6)), uniform_binary)


def test_sequential_coupling_hits_the_target(binary, uniform_binary, rng):
    t = NType(binary, (3, 1))
    xhat, y = marton_coupling_batch(t, uniform_binary, rng, 20_000)
    assert all(t.contains(row) for row in xhat[:200])
    assert marginal_chi2(y, uniform_binary) > 1e-3


@pytest.mark.parametrize("n", [4, 8, 16])
def test_sequential_mismatch_stays_under_the_bound(binary, uniform_binary, n):
    xhat, y = marton_coupling_batch(NType(binary, (n // 2, n // 2)), uniform_binary, np.random.default_rng(n), 100_000)
    mismatch = (xhat != y).mean(axis=1)
    stderr = mismatch.std(ddof=1) / math.sqrt(mismatch.size)
    assert mismatch.mean() <= marton_bound(uniform_binary, n) + 3.0 * stderr
    assert marginal_chi2(y, uniform_binary) > 1e-3


def test_channel_after_uniform_members(binary, uniform_binary, rng):
    t = NType(binary, (2, 2))
    xhat = sample_uniform_type_class(t, rng, size=20_000)
    y = marton_channel(t, uniform_binary, xhat, rng)
    assert marginal_chi2(y, uniform_binary) > 1e-3
    observed = (xhat != y).mean()
    assert observed <= marton_bound(uniform_binary, 4) + 3 * (xhat != y).mean(axis=1).std() / math.sqrt(20_000)


def test_exact_product_coupling(binary, uniform_binary, rng):
    coupling = ExactProductCoupling(NType(binary, (1, 1)), uniform_binary)
    assert coupling.cost == pytest.approx(0.25)
    xhat = sample_uniform_type_class(coupling.t, rng, size=20_000)
    y = coupling.sample(xhat, rng)
    assert marginal_chi2(y, uniform_binary) > 1e-3


def test_exact_product_coupling_minimizes_the_letter_cost():
    alphabet = Alphabet((0.0, 1.0, 5.0))
    psi = Pmf(alphabet, np.array([0.2, 0.3, 0.5]))
    rho = DistortionMatrix.squared_error(alphabet, alphabet)
    t = NType(alphabet, (0, 1, 1))
    coupling = ExactProductCoupling(t, psi, rho)
    cost = rho.cost[coupling.members[:, None, :], coupling.outputs[None, :, :]].mean(axis=2)
    rows, cols = cost.shape
    supply = np.full(rows, 1.0 / rows)
    demand = np.prod(psi.mass[coupling.outputs], axis=1)
    oracle = linprog(
        cost.ravel(),
        A_eq=np.vstack([np.kron(np.eye(rows), np.ones(cols)), np.kron(np.ones(rows), np.eye(cols))]),
        b_eq=np.concatenate([supply, demand]),
        bounds=(0, None),
        method="highs",
    )
    assert coupling.cost == pytest.approx(oracle.fun, abs=1e-9)
    assert_allclose(coupling.flow.sum(axis=1), supply, atol=1e-9)
    assert_allclose(coupling.flow.sum(axis=0), demand, atol=1e-9)
    hamming_plan = ExactProductCoupling(t, psi).flow
    assert np.sum(hamming_plan * cost) >= coupling.cost - 1e-9
    with pytest.raises(DimensionMismatchError):
        ExactProductCoupling(t, psi, DistortionMatrix(np.zeros((3, 2))))


# ----------------------------------------------------------------------
# Continuous sources
# ----------------------------------------------------------------------
def test_density_validation():
    with pytest.raises(ConfigError):
        Density("cauchy")
    with pytest.raises(ConfigError):
        Density.gaussian(0.0, 0.0)
    assert Density.uniform(-1.0, 1.0).to_dict() == {"family": "uniform", "low": -1.0, "high": 1.0}


def test_discretize_uniform():
    p = discretize(Density.uniform(-1.0, 1.0), 1.0, 2)
    assert p.alphabet.points == (-0.5, 0.5)
    assert_allclose(p.mass, [0.5, 0.5])
    assert discretization_cost(Density.uniform(-1.0, 1.0), 1.0, 2) == pytest.approx(1.0 / 12.0, abs=1e-9)


def test_discretize_gaussian_second_moment():
    p = discretize(Density.gaussian(), 4.0, 16)
    second = float(p.mass @ p.alphabet.array() ** 2)
    assert 1.0 < second < 1.025
    assert_allclose(grid_labels(4.0, 16)[[0, -1]], [-3.75, 3.75])


def test_single_level_is_a_point_mass():
    p = discretize(Density.gaussian(), 2.0, 1)
    assert p.alphabet.points == (0.0,)
    assert_allclose(p.mass, [1.0])


def test_point_density_cost():
    assert discretization_cost(Density.point(0.3), 1.0, 2) == pytest.approx(0.04)
    with pytest.raises(ConfigError):
        discretize(Density.point(0.0), 0.0, 4)


# ----------------------------------------------------------------------
# Simulations
# ----------------------------------------------------------------------
def test_sim_config_validation(uniform_binary, hamming):
    with pytest.raises(ConfigError):
        SimConfig(0.0, (4,), 10, mu=uniform_binary, psi=uniform_binary, rho=hamming)
    with pytest.raises(ConfigError):
        SimConfig(0.5, (4,), 0, mu=uniform_binary, psi=uniform_binary, rho=hamming)
    with pytest.raises(ConfigError):
        SimConfig(0.5, (4,), 10, mu=uniform_binary)
    with pytest.raises(ConfigError):
        SimConfig(0.5, (4,), 10, mode="continuous")
    with pytest.raises(ConfigError):
        SimConfig(0.5, (4,), 10, mu=uniform_binary, psi=uniform_binary, rho=hamming, tie_rule="middle")


def test_results_do_not_depend_on_threads(uniform_binary, hamming):
    base = dict(mu=uniform_binary, psi=uniform_binary, rho=hamming, seed=7)
    one = simulate(SimConfig(0.5, (4, 6), 2500, threads=1, **base))
    four = simulate(SimConfig(0.5, (4, 6), 2500, threads=4, **base))
    assert one.to_rows() == four.to_rows()
    assert one.columns == SUMMARY_COLUMNS


def test_binary_benchmark_respects_output_law_and_converse(uniform_binary, hamming):
    result = simulate(SimConfig(0.4387, (4, 8), 2000, mu=uniform_binary, psi=uniform_binary, rho=hamming))
    assert [r.n for r in result.records] == [4, 8]
    assert [r.coupling for r in result.records] == ["exact-ot", "exact-ot"]
    for record in result.records:
        assert record.marginal_chi2_p > 1e-3
        assert record.converse_passed
        assert 0.0 < record.distortion_mean < 0.5
        assert record.ntype == (record.n // 2, record.n // 2)


def test_binary_benchmark_trend_over_block_lengths(uniform_binary, hamming):
    cfg = SimConfig(0.4387, (4, 8, 12, 16), 10_000, mu=uniform_binary, psi=uniform_binary, rho=hamming, seed=42)
    records = simulate_finite(cfg).records
    assert [r.n for r in records] == [4, 8, 12, 16]
    rises = 0
    for shorter, longer in zip(records, records[1:]):
        # the gap to D=0.25 is the distortion shifted by a constant
        rise = longer.distortion_mean - shorter.distortion_mean
        if rise > 0.0:
            rises += 1
            assert rise <= 3.0 * math.hypot(shorter.distortion_stderr, longer.distortion_stderr)
    assert rises <= 1
    for record in records:
        assert record.marginal_chi2_p > config.CHI2_ALPHA
        assert record.pair_chi2_p > 1e-3
        assert record.converse_passed


def test_marton_coupling_at_longer_blocks(uniform_binary, hamming):
    cfg = SimConfig(0.5, (12,), 300, mu=uniform_binary, psi=uniform_binary, rho=hamming, coupling="marton")
    record = simulate(cfg).records[0]
    assert record.coupling == "marton"
    assert record.codewords == 64
    assert record.marton_observed <= record.marton_bound + 3 * record.marton_stderr


def test_exact_coupling_refuses_large_products(uniform_binary, hamming):
    cfg = SimConfig(0.25, (16,), 10, mu=uniform_binary, psi=uniform_binary, rho=hamming, coupling="exact")
    with pytest.raises(CapExceededError):
        simulate(cfg)


def test_point_masses_cost_nothing(binary, hamming):
    point = Pmf.point_mass(binary, 0)
    record = simulate(SimConfig(0.5, (4,), 200, mu=point, psi=point, rho=hamming)).records[0]
    assert record.distortion_mean == 0.0
    assert record.uniformity_chi2_p == 1.0
    assert record.converse_passed


def test_fixed_codebook_is_shared_across_trials(uniform_binary, hamming):
    cfg = SimConfig(0.5, (4,), 500, mu=uniform_binary, psi=uniform_binary, rho=hamming, fixed_codebook=True)
    record = simulate(cfg).records[0]
    assert record.trials == 500
    assert record.codewords == 4


def test_iid_scheme(uniform_binary, skewed_binary, hamming):
    cfg = SimConfig(0.5, (4, 8), 1000, mu=uniform_binary, psi=skewed_binary, rho=hamming)
    result = simulate_iid_codebook(cfg)
    assert result.scheme == "iid"
    assert result.columns == SUMMARY_COLUMNS + IID_COLUMNS
    for record in result.records:
        assert 0.0 <= record.distortion_mean <= 1.0
        assert record.codeword_type_l1 > 0.0
        assert math.isfinite(record.favorite_type_l1)


def test_continuous_point_masses():
    cfg = SimConfig(
        0.5,
        (2,),
        50,
        mode="continuous",
        source=Density.point(0.3),
        target=Density.point(0.3),
        k=1.0,
        levels=15,
    )
    record = simulate(cfg).records[0]
    assert record.distortion_mean == pytest.approx(0.0, abs=1e-24)
    assert record.step_a == pytest.approx((0.3 - (-1.0 + 9.5 * 2.0 / 15.0)) ** 2)


def test_continuous_gaussian_triangle_bound():
    cfg = SimConfig(
        1.0,
        (4,),
        500,
        mode="continuous",
        source=Density.gaussian(),
        target=Density.gaussian(),
        k=3.0,
        levels=4,
    )
    result = simulate(cfg)
    record = result.records[0]
    assert result.scheme == "continuous"
    assert record.distortion_mean <= record.triangle_bound + 1e-12
    assert record.step_a > 0.0 and record.step_c > 0.0
