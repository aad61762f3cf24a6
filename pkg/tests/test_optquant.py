from __future__ import annotations

import numpy as np
from numpy.testing import assert_allclose
import pytest

from oclab.core import Alphabet, DeterministicQuantizer, DistortionMatrix, FiniteMixtureQuantizer, Pmf
from oclab.errors import CapExceededError
from oclab.optquant import (
    column_pool,
    enumerate_quantizers,
    finite_randomization_experiment,
    interval_vs_all,
    p1_vs_ot_check,
    pool_from_quantizers,
    solve_p1,
    solve_p3,
)
from oclab.transport import ot_solve, product_cost, prokhorov_distance


# ----------------------------------------------------------------------
# Column enumeration
# ----------------------------------------------------------------------
def test_binary_pool_sizes(binary, uniform_binary, hamming):
    assert len(enumerate_quantizers(uniform_binary, binary, hamming, 2)) == 4
    constants = enumerate_quantizers(uniform_binary, binary, hamming, 1)
    assert sorted(c.quantizer.mapping for c in constants) == [(0, 0), (1, 1)]
    assert all(c.cost == pytest.approx(0.5) for c in constants)


def test_interval_cells_drop_split_maps(binary):
    mu = Pmf.uniform(Alphabet.range(3))
    rho = DistortionMatrix(np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]]))
    pool = column_pool(mu, binary, rho, 2, "interval")
    assert pool.size == 6
    assert sorted(map(tuple, pool.maps.tolist())) == [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 0, 0), (1, 1, 0), (1, 1, 1)]
    assert column_pool(mu, binary, rho, 2).size == 8


def test_pool_columns_carry_output_laws(binary, skewed_binary, hamming):
    columns = {c.quantizer.mapping: c for c in enumerate_quantizers(skewed_binary, binary, hamming, 2)}
    assert_allclose(columns[(1, 0)].output_pmf.mass, [0.75, 0.25])
    assert columns[(1, 0)].cost == pytest.approx(1.0)
    assert columns[(0, 1)].cost == 0.0


def test_enumeration_guards(uniform_binary, binary, hamming):
    with pytest.raises(CapExceededError):
        column_pool(uniform_binary, binary, hamming, 2, cap=3)
    with pytest.raises(ValueError):
        column_pool(uniform_binary, binary, hamming, 0)
    with pytest.raises(ValueError):
        column_pool(uniform_binary, binary, hamming, 2, "voronoi")
    with pytest.raises(ValueError):
        pool_from_quantizers([], uniform_binary, hamming)


# ----------------------------------------------------------------------
# P1
# ----------------------------------------------------------------------
def test_p1_binary_benchmark(uniform_binary, skewed_binary, hamming):
    solution = solve_p1(uniform_binary, skewed_binary, hamming, 2)
    assert solution.is_optimal
    assert solution.objective == pytest.approx(0.25, abs=1e-12)
    assert_allclose(solution.output_pmf(uniform_binary).mass, skewed_binary.mass, atol=1e-9)
    assert solution.mixture.weights.sum() == pytest.approx(1.0)


def test_p1_single_level_is_the_product_cost(uniform_binary, skewed_binary, hamming):
    solution = solve_p1(uniform_binary, skewed_binary, hamming, 1)
    assert solution.objective == pytest.approx(product_cost(uniform_binary, skewed_binary, hamming))
    assert solution.objective == pytest.approx(0.5)


def test_p1_infeasible_pool(binary, uniform_binary, hamming):
    pool = pool_from_quantizers([DeterministicQuantizer((0, 0), 1, binary)], uniform_binary, hamming)
    solution = solve_p1(uniform_binary, uniform_binary, hamming, 1, pool=pool)
    assert solution.status == "infeasible"
    assert solution.mixture is None
    assert solution.to_dict()["mixture"] == []
    with pytest.raises(ValueError):
        solution.output_pmf(uniform_binary)


@pytest.mark.parametrize("seed", range(4))
def test_p1_sits_between_transport_and_product(make_instance, seed):
    mu, psi, rho = make_instance(200 + seed, 3, 3)
    ot = ot_solve(mu, psi, rho).cost
    assert solve_p1(mu, psi, rho, 3).objective == pytest.approx(ot, abs=1e-8)
    restricted = solve_p1(mu, psi, rho, 2).objective
    assert ot - 1e-9 <= restricted <= product_cost(mu, psi, rho) + 1e-9
    assert solve_p1(mu, psi, rho, 1).objective == pytest.approx(product_cost(mu, psi, rho), abs=1e-9)


def test_p1_dict_lists_the_mixture(uniform_binary, skewed_binary, hamming):
    payload = solve_p1(uniform_binary, skewed_binary, hamming, 2).to_dict()
    assert payload["status"] == "optimal"
    assert payload["columns"] == 4
    assert sum(r["weight"] for r in payload["mixture"]) == pytest.approx(1.0)


# ----------------------------------------------------------------------
# P3
# ----------------------------------------------------------------------
def test_p3_radius_zero_is_p1(make_instance):
    mu, psi, rho = make_instance(300, 3, 3)
    assert solve_p3(mu, psi, rho, 2, 0.0).objective == pytest.approx(solve_p1(mu, psi, rho, 2).objective, abs=1e-9)


def test_p3_is_monotone_in_the_radius(make_instance):
    mu, psi, rho = make_instance(301, 3, 3)
    values = [solve_p3(mu, psi, rho, 2, d).objective for d in (0.0, 0.05, 0.1, 0.25, 0.5, 1.0)]
    assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))


def test_p3_wide_ball_picks_the_cheapest_map(make_instance):
    mu, psi, rho = make_instance(302, 3, 3)
    pool = column_pool(mu, psi.alphabet, rho, 2)
    solution = solve_p3(mu, psi, rho, 2, 1.0, pool=pool)
    assert solution.objective == pytest.approx(pool.costs.min(), abs=1e-12)
    assert not solution.boundary


def test_p3_output_stays_inside_the_ball(uniform_binary, skewed_binary, hamming):
    for delta in (0.1, 0.2):
        solution = solve_p3(uniform_binary, skewed_binary, hamming, 2, delta)
        assert solution.boundary
        output = solution.output_pmf(uniform_binary)
        assert prokhorov_distance(output, skewed_binary).distance <= delta + 1e-8
        assert solution.objective <= 0.25 + 1e-12
    assert solve_p3(uniform_binary, skewed_binary, hamming, 2, 0.1).objective == pytest.approx(0.15, abs=1e-9)


def test_p3_rejects_negative_radius(uniform_binary, hamming):
    with pytest.raises(ValueError):
        solve_p3(uniform_binary, uniform_binary, hamming, 2, -0.1)


# ----------------------------------------------------------------------
# Cross-checks and experiments
# ----------------------------------------------------------------------
def test_bridge_report(make_instance):
    mu, psi, rho = make_instance(400, 3, 3)
    assert p1_vs_ot_check(mu, psi, rho, 3).passed
    partial = p1_vs_ot_check(mu, psi, rho, 2)
    assert partial.passed and not partial.equality_expected and partial.gap >= -1e-8


def test_interval_restriction_never_helps(make_instance):
    mu, psi, rho = make_instance(401, 4, 3)
    report = interval_vs_all(mu, psi, rho, 2)
    assert report.gap >= -1e-9


def test_randomization_error_shrinks_like_root_n(binary, skewed_binary, hamming):
    target = FiniteMixtureQuantizer(
        np.array([0.5, 0.5]),
        (DeterministicQuantizer((0, 1), 2, binary), DeterministicQuantizer((1, 0), 2, binary)),
    )
    table = finite_randomization_experiment(target, skewed_binary, hamming, [10, 40, 160, 640], trials=200, seed=5)
    assert table.target_cost == pytest.approx(0.5)
    assert table.slope == pytest.approx(-0.5, abs=0.15)
    assert table.prokhorov_mean[-1] < table.prokhorov_mean[0]
    assert len(table.to_rows()) == 4
