"""Neighborhood filter and Heaviside projection contracts."""

import numpy as np
import pytest

from hitop.errors import ParameterError
from hitop.filters import (
    RminMap,
    build_neighborhoods,
    chain_gradient,
    density_filter,
    heaviside_derivative,
    heaviside_project,
)


def enumerate_neighbors(nely, nelx, r, c, rmin):
    """Oracle: brute-force integer offsets with centroid distance <= rmin."""
    out = []
    for rr in range(nely):
        for cc in range(nelx):
            if np.hypot(rr - r, cc - c) <= rmin:
                out.append(rr * nelx + cc)
    return sorted(out)


class TestNeighborhoods:
    def test_interior_count_rmin2(self):
        table = build_neighborhoods(9, 9, RminMap.uniform(9, 9, 2.0))
        e = 4 * 9 + 4
        expected = enumerate_neighbors(9, 9, 4, 4, 2.0)
        assert len(expected) == 13
        assert table.members(e).tolist() == expected

    def test_corner_count_rmin2(self):
        table = build_neighborhoods(9, 9, RminMap.uniform(9, 9, 2.0))
        expected = enumerate_neighbors(9, 9, 0, 0, 2.0)
        assert len(expected) == 6
        assert table.members(0).tolist() == expected

    def test_rmin1_filter_is_identity(self):
        table = build_neighborhoods(5, 5, RminMap.uniform(5, 5, 1.0))
        e = 2 * 5 + 2
        w = table.member_weights(e)
        m = table.members(e)
        # only the self weight is positive (H_ee = 1); boundary members are 0
        assert w[m == e] == pytest.approx([1.0])
        assert np.all(w[m != e] == 0.0)
        rng = np.random.default_rng(0)
        x = rng.random(25)
        np.testing.assert_allclose(density_filter(x, table), x, atol=1e-15)

    def test_weights_match_definition(self):
        rmap = RminMap.uniform(6, 6, 2.5)
        table = build_neighborhoods(6, 6, rmap)
        e = 3 * 6 + 3
        for i, w in zip(table.members(e), table.member_weights(e)):
            d = np.hypot(i // 6 - 3, i % 6 - 3)
            assert w == pytest.approx(2.5 - d, abs=1e-12)

    def test_invalid_rmin(self):
        with pytest.raises(ParameterError):
            RminMap.uniform(4, 4, 0.5)
        with pytest.raises(ParameterError):
            RminMap(np.full((4, 4), np.inf))


class TestDensityFilter:
    def test_constant_field_is_fixed_point(self):
        table = build_neighborhoods(7, 9, RminMap.uniform(7, 9, 2.4))
        x = np.full(63, 0.4)
        np.testing.assert_allclose(density_filter(x, table), 0.4, atol=1e-15)

    def test_single_solid_center_hand_value(self):
        # 3x3 grid, rmin = 1.5: center weight 1.5, cardinals 0.5,
        # diagonals 1.5 - sqrt(2)
        table = build_neighborhoods(3, 3, RminMap.uniform(3, 3, 1.5))
        x = np.zeros(9)
        x[4] = 1.0
        expected = 1.5 / (1.5 + 4 * 0.5 + 4 * (1.5 - np.sqrt(2)))
        xt = density_filter(x, table)
        assert xt[4] == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.390, abs=5e-4)

    def test_zeros_map_to_zeros(self):
        table = build_neighborhoods(5, 5, RminMap.uniform(5, 5, 2.0))
        np.testing.assert_array_equal(density_filter(np.zeros(25), table),
                                      np.zeros(25))

    def test_range_contraction(self):
        # row-stochastic weights: filtering cannot extend the value range
        rng = np.random.default_rng(1)
        table = build_neighborhoods(8, 8, RminMap.uniform(8, 8, 2.2))
        x = rng.random(64)
        xt = density_filter(x, table)
        assert xt.max() <= x.max() + 1e-12
        assert xt.min() >= x.min() - 1e-12

    def test_transpose_is_adjoint(self):
        rng = np.random.default_rng(2)
        table = build_neighborhoods(6, 5, RminMap.uniform(6, 5, 1.8))
        x, y = rng.random(30), rng.random(30)
        lhs = y @ table.apply(x)
        rhs = table.apply_transpose(y) @ x
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestHeaviside:
    def test_symmetry_point(self):
        assert heaviside_project(np.array([0.5]), 25.0, 0.5)[0] == pytest.approx(
            0.5, abs=1e-15)

    def test_endpoints(self):
        xb = heaviside_project(np.array([0.0, 1.0]), 25.0, 0.5)
        assert xb[0] == pytest.approx(0.0, abs=1e-15)
        assert xb[1] == pytest.approx(1.0, abs=1e-15)

    def test_strictly_increasing(self):
        xt = np.linspace(0, 1, 101)
        xb = heaviside_project(xt, 25.0, 0.5)
        assert np.all(np.diff(xb) > 0)

    def test_derivative_matches_finite_difference(self):
        xt = np.linspace(0.05, 0.95, 19)
        h = 1e-7
        fd = (heaviside_project(xt + h) - heaviside_project(xt - h)) / (2 * h)
        # atol floor: central differences bottom out near machine noise in
        # the flat tanh tails
        np.testing.assert_allclose(heaviside_derivative(xt), fd, rtol=1e-5,
                                   atol=1e-8)

    def test_parameter_validation(self):
        with pytest.raises(ParameterError):
            heaviside_project(np.array([0.5]), beta=0.0)
        with pytest.raises(ParameterError):
            heaviside_project(np.array([0.5]), eta=1.0)


class TestChainGradient:
    def test_identity_filter_reduces_to_projection(self):
        table = build_neighborhoods(4, 4, RminMap.uniform(4, 4, 1.0))
        rng = np.random.default_rng(3)
        d = rng.random(16)
        xt = rng.random(16)
        dp = heaviside_derivative(xt)
        np.testing.assert_allclose(chain_gradient(d, dp, table), d * dp,
                                   atol=1e-14)

    def test_near_linear_projection_scales_transpose(self):
        table = build_neighborhoods(5, 5, RminMap.uniform(5, 5, 2.0))
        rng = np.random.default_rng(4)
        d = rng.random(25)
        xt = rng.random(25)
        beta = 1e-6
        dp = heaviside_derivative(xt, beta=beta)
        got = chain_gradient(d, dp, table)
        scale = dp.mean()
        np.testing.assert_allclose(got, scale * table.apply_transpose(d),
                                   rtol=1e-5)
