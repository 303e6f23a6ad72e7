import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpht.core import GaussianSpec, ProductSpec, RngHandle, pm1, real, sample_product
from dpht.statistic import (in_set_C, moments_gaussian, moments_product,
                            nonprivate_uniformity_test, row_inner_products, statistic_T)


def exact_product_moments(p, n):
    """Mean and variance of T by enumerating every n x d sign matrix (Fractions)."""
    d = len(p)
    prob_plus = [(1 + Fraction(pi)) / 2 for pi in p]
    m1 = m2 = Fraction(0)
    for cells in itertools.product([1, -1], repeat=n * d):
        w = Fraction(1)
        for k, v in enumerate(cells):
            q = prob_plus[k % d]
            w *= q if v == 1 else 1 - q
        if w == 0:
            continue
        cs = [sum(cells[j * d + i] for j in range(n)) for i in range(d)]
        t = sum(c * c for c in cs) - n * d
        m1 += w * t
        m2 += w * t * t
    return m1, m2 - m1 * m1


pm1_matrix = st.integers(1, 5).flatmap(
    lambda n: st.integers(1, 5).flatmap(
        lambda d: st.lists(st.lists(st.sampled_from([-1, 1]), min_size=d, max_size=d),
                           min_size=n, max_size=n)))


class TestStatistic:
    def test_single_row(self):
        assert statistic_T(pm1([[1, -1, 1]])).value == 0

    def test_direct_values(self):
        assert statistic_T(pm1([[1], [1]])).value == 2
        s = statistic_T(pm1([[1, -1], [-1, -1]]))
        assert s.colsum.tolist() == [0, -2] and s.value == 0
        assert statistic_T(pm1([[1, 1], [1, 1], [-1, 1]])).value == 1 + 9 - 6

    def test_real_rejected(self):
        with pytest.raises(TypeError):
            statistic_T(real([[0.5]]))

    @settings(max_examples=200, deadline=None)
    @given(pm1_matrix)
    def test_range_and_identity(self, rows):
        X = pm1(rows)
        n, d = X.n, X.d
        s = statistic_T(X)
        assert isinstance(s.value, int)
        assert s.value == int(s.colsum @ s.colsum) - n * d
        assert -n * d <= s.value <= d * (n * n - n)
        assert (s.value == -n * d) == bool(np.all(s.colsum == 0))
        assert (s.value == d * (n * n - n)) == bool(np.all(np.abs(s.colsum) == n))


class TestInSet:
    def test_single_row(self):
        X = pm1([[1, -1, 1]])
        assert in_set_C(X, 3) == (True, 3)
        assert in_set_C(X, 2)[0] is False

    def test_all_ones(self):
        X = pm1(np.ones((3, 2)))
        assert in_set_C(X, 5) == (False, 6)
        assert in_set_C(X, 6) == (True, 6)

    @settings(max_examples=100, deadline=None)
    @given(pm1_matrix)
    def test_full_domain(self, rows):
        X = pm1(rows)
        assert in_set_C(X, X.n * X.d)[0]

    @settings(max_examples=100, deadline=None)
    @given(pm1_matrix)
    def test_row_identity(self, rows):
        # for PM1 data, T = sum_j <x_j, Xbar> - n d
        X = pm1(rows)
        assert int(row_inner_products(X).sum()) - X.n * X.d == statistic_T(X).value


class TestMoments:
    def test_zero_mean(self):
        assert moments_product(ProductSpec([0, 0, 0]), 5) == (0.0, 2 * 5 * 4 * 3)

    def test_all_ones(self):
        m, v = moments_product(ProductSpec([1, 1]), 4)
        assert m == 4 * 3 * 2 and v == 0

    def test_small_case(self):
        assert moments_product(ProductSpec([0.5]), 2) == pytest.approx((0.5, 3.75))
        m, v = exact_product_moments([Fraction(1, 2)], 2)
        assert (m, v) == (Fraction(1, 2), Fraction(15, 4))

    @pytest.mark.parametrize("p", [[0.5, -0.5], [1.0, 0.0], [-1.0, 0.5]])
    def test_against_enumeration(self, p):
        for n in (1, 2, 3):
            m, v = moments_product(ProductSpec(p), n)
            em, ev = exact_product_moments([Fraction(x).limit_denominator() for x in p], n)
            assert m == pytest.approx(float(em), abs=1e-12)
            assert v == pytest.approx(float(ev), abs=1e-12)

    def test_gaussian_formulas(self):
        assert moments_gaussian(GaussianSpec([0, 0, 0]), 4) == (0.0, 2 * 16 * 3)
        assert moments_gaussian(GaussianSpec([1.0]), 1) == (1.0, 6.0)

    def test_gaussian_monte_carlo_mean(self):
        n, d, T = 10, 5, 10**5
        x = RngHandle(11).gen.standard_normal((T, n, d)).sum(axis=1)
        t = (x * x).sum(axis=1) - n * d
        assert abs(t.mean()) <= 4 * math.sqrt(2 * n * n * d / T)


class TestConcentration:
    def test_row_inner_product_bound(self):
        # uniform data: every row satisfies |<x, Xbar>| <= ||Xbar||^2/n + sqrt(2) ||Xbar|| sqrt(ln 1/beta)
        n, d, beta, T = 100, 20, 1e-3, 10**4
        x = np.where(RngHandle(12).gen.random((T, n, d)) < 0.5, 1, -1).astype(np.int64)
        s = x.sum(axis=1)
        inner = np.abs(np.einsum("tnd,td->tn", x, s))
        norm = np.linalg.norm(s, axis=1)
        bound = norm**2 / n + math.sqrt(2) * norm * math.sqrt(math.log(1 / beta))
        frac = np.mean((inner > bound[:, None]).any(axis=1))
        assert frac <= 2 * n * beta + 3 * math.sqrt(0.2 * 0.8 / T)


class TestNonPrivate:
    def test_single_row_accepts(self):
        for a in (0.1, 1.0, 2.0):
            assert not nonprivate_uniformity_test(pm1([[1, 1]]), a).rejected

    def test_all_ones_rejects(self):
        out = nonprivate_uniformity_test(pm1(np.ones((10, 4))), 0.5)
        assert out.rejected and out.trace["statistic"] == 360
        assert out.trace["threshold"] == pytest.approx(5.625)
        assert out.trace["private"] is False

    def test_uniform_type_one(self):
        rej = sum(nonprivate_uniformity_test(
            sample_product(ProductSpec(np.zeros(50)), 500, RngHandle(13, t)), 0.5).rejected
            for t in range(2000))
        assert rej / 2000 <= 1 / 3 + 0.05

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            nonprivate_uniformity_test(pm1([[1]]), 0.0)
