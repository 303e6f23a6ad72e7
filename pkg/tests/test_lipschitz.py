import math

import mpmath
import numpy as np
import pytest

from dpht.core import ProductSpec, RngHandle, pm1, sample_product
from dpht.harness import all_datasets, neighbor_index_pairs
from dpht.lipschitz_tester import (ExtensionMode, _domain, build_delta_schedule, dataset_from_index,
                                   dataset_index, delta_star, extension_table, halving_regime,
                                   lipschitz_extension_test, lipschitz_reject_count,
                                   mcshane_whitney_extend, round_cap, uniformity_test_lipschitz)
from dpht.statistic import in_set_C, statistic_T


def mp_schedule(n, d, eps, beta):
    """Independent re-evaluation of the schedule recursion at 50 digits."""
    mpmath.mp.dps = 50
    n, d, eps = mpmath.mpf(n), mpmath.mpf(d), mpmath.mpf(eps)
    L = mpmath.log(1 / mpmath.mpf(beta))
    k0 = max(1, int(mpmath.ceil(mpmath.log(n * d, 2))))
    ds0 = 100 * max(d, mpmath.sqrt(n * d), L / (eps / k0)) * L
    M = max(1, int(mpmath.ceil(mpmath.log(n * d / ds0, 2))) + 2)
    ep = eps / M
    ds = 100 * max(d, mpmath.sqrt(n * d), L / ep) * L
    deltas = [n * d]
    for _ in range(M - 1):
        if deltas[-1] <= ds:
            break
        D = deltas[-1]
        deltas.append(11 * (d + mpmath.sqrt(n * d) + D / (n * ep) + mpmath.sqrt(D / ep)) * L)
    return [float(x) for x in deltas], float(ds), M


class TestSchedule:
    def test_immediate_exit(self):
        s = build_delta_schedule(10, 5, 1.0, 0.01)
        assert s.deltas == (50.0,) and s.rounds == 1

    def test_worked_example_matches_high_precision(self):
        n, d, eps = 10**4, 100, 1.0
        beta = 1 / (10 * n)
        s = build_delta_schedule(n, d, eps, beta)
        ref, ds, M = mp_schedule(n, d, eps, beta)
        assert s.deltas[0] == 10**6
        assert s.cap == M and s.delta_star == pytest.approx(ds, rel=1e-12)
        assert len(s.deltas) == len(ref)
        for a, b in zip(s.deltas, ref):
            assert a == pytest.approx(b, rel=1e-12)

    @pytest.mark.parametrize("n,d,eps", [(10**6, 10, 1.0), (10**7, 100, 0.5), (10**8, 1000, 2.0),
                                         (3 * 10**6, 30, 1.0)])
    def test_against_high_precision(self, n, d, eps):
        beta = 1 / (10 * n)
        ref, ds, M = mp_schedule(n, d, eps, beta)
        s = build_delta_schedule(n, d, eps, beta)
        assert s.cap == M and np.allclose(s.deltas, ref, rtol=1e-12)

    def test_cap_bounds_rounds(self):
        for n in (10, 100, 10**4, 10**6):
            for d in (1, 10, 1000):
                for eps in (0.1, 1.0, 5.0):
                    s = build_delta_schedule(n, d, eps, 1 / (10 * n))
                    assert 1 <= s.rounds <= s.cap == round_cap(n, d, eps, 1 / (10 * n))
                    assert s.eps_prime == pytest.approx(eps / s.cap)

    def test_halving_can_fail_outside_regime(self):
        # with n eps' small the Delta/(n eps') term alone exceeds 1/2
        n, d, eps = 2000, 2000, 0.05
        s = build_delta_schedule(n, d, eps, 1 / (10 * n))
        assert not halving_regime(n, d, eps)
        ratios = [b / a for a, b in zip(s.deltas, s.deltas[1:])]
        assert ratios and max(ratios) > 0.5

    def test_delta_star_formula(self):
        L = math.log(100)
        assert delta_star(10, 4, 0.5, 0.01) == pytest.approx(100 * max(4, math.sqrt(40), L / 0.5) * L)


class TestExtension:
    def test_full_domain_is_identity(self):
        for k in range(16):
            X = dataset_from_index(k, 2, 2)
            assert mcshane_whitney_extend(X, 4) == statistic_T(X).value

    def test_agrees_in_set(self):
        for k in range(64):
            X = dataset_from_index(k, 2, 3)
            for delta in range(7):
                if in_set_C(X, delta)[0]:
                    assert mcshane_whitney_extend(X, delta) == statistic_T(X).value

    def test_lipschitz_n2_d2_delta2(self):
        tab = extension_table(2, 2, 2)
        for a, b in neighbor_index_pairs(2, 2):
            assert abs(tab[a] - tab[b]) <= 8

    def test_table_matches_pointwise(self):
        tab = extension_table(3, 2, 3)
        for k in range(0, 64, 5):
            assert tab[k] == mcshane_whitney_extend(dataset_from_index(k, 3, 2), 3)

    def test_empty_set_gives_zero(self):
        # n=1: <x, x> = d, so C(Delta) is empty for Delta < d
        assert mcshane_whitney_extend(pm1([[1, 1, 1]]), 2) == 0.0

    def test_index_roundtrip(self):
        for k in range(64):
            assert dataset_index(dataset_from_index(k, 3, 2)) == k

    def test_domain_too_large(self):
        with pytest.raises(ValueError):
            _domain(5, 4)

    def test_domain_tables(self):
        codes, T, mi = _domain(2, 2)
        for k in range(16):
            X = dataset_from_index(k, 2, 2)
            assert T[k] == statistic_T(X).value
            assert mi[k] == in_set_C(X, 0)[1]


class TestExtensionTest:
    def test_noiseless_zero_statistic_accepts(self):
        X = pm1([[1, 1], [-1, -1]])
        out = lipschitz_extension_test(X, 1.0, 4, 0.05, ExtensionMode.EXACT, RngHandle(0), noiseless=True)
        assert not out.rejected and out.trace["z"] == statistic_T(X).value

    def test_noiseless_all_ones(self):
        # threshold is 10 n sqrt(d) + 4 Delta ln(1/beta)/eps
        X = pm1(np.ones((4, 4)))
        out = lipschitz_extension_test(X, 10.0, 16, 0.5, ExtensionMode.SHORTCUT, RngHandle(0), noiseless=True)
        assert out.trace["z"] == 48 and not out.rejected
        X = pm1(np.ones((10, 4)))
        out = lipschitz_extension_test(X, 10.0, 40, 0.5, ExtensionMode.SHORTCUT, RngHandle(0), noiseless=True)
        assert out.trace["threshold"] == pytest.approx(200 + 16 * math.log(2))
        assert out.trace["z"] == 360 and out.rejected

    def test_uniform_accepts_at_delta_star(self):
        n, d, eps = 200, 20, 1.0
        beta = 1 / (10 * n)
        ds = delta_star(n, d, eps, beta)
        acc = sum(not lipschitz_extension_test(
            sample_product(ProductSpec(np.zeros(d)), n, RngHandle(1, t, (0,))),
            eps, ds, beta, ExtensionMode.SHORTCUT, RngHandle(1, t, (1,))).rejected for t in range(2000))
        assert acc / 2000 >= 1 - beta - 1 / 50 - 3 * math.sqrt(0.03 * 0.97 / 2000)

    def test_shortcut_flags_out_of_set(self):
        X = pm1(np.ones((4, 2)))
        out = lipschitz_extension_test(X, 1.0, 3, 0.1, ExtensionMode.SHORTCUT, RngHandle(0))
        assert out.trace["shortcut_out_of_set"] is True and out.trace["private"] is False

    def test_exact_infeasible(self):
        with pytest.raises(ValueError):
            lipschitz_extension_test(pm1(np.ones((5, 4))), 1.0, 3, 0.1, ExtensionMode.EXACT, RngHandle(0))


class TestFullTester:
    def test_single_row_accepts(self):
        out = uniformity_test_lipschitz(pm1([[1, -1]]), 1.0, 0.5, ExtensionMode.EXACT, RngHandle(0),
                                        noiseless=True)
        assert not out.rejected and out.trace["final_z"] == 0

    def test_trace_records_rounds(self):
        X = sample_product(ProductSpec(np.zeros(30)), 3000, RngHandle(2))
        out = uniformity_test_lipschitz(X, 0.05, 0.5, ExtensionMode.SHORTCUT, RngHandle(3))
        s = build_delta_schedule(3000, 30, 0.05, 1 / 30000)
        assert out.trace["round_deltas"] == list(s.deltas[:-1])
        assert out.trace["cap"] == s.cap

    def test_deterministic(self):
        X = sample_product(ProductSpec([0.2, 0.0]), 50, RngHandle(4))
        a = uniformity_test_lipschitz(X, 1.0, 0.5, ExtensionMode.SHORTCUT, RngHandle(5))
        b = uniformity_test_lipschitz(X, 1.0, 0.5, ExtensionMode.SHORTCUT, RngHandle(5))
        assert a.trace == b.trace

    def test_batched_counter_matches_scalar(self):
        # both estimate the same reject probability on each dataset
        T = 4000
        for X in all_datasets(2, 2)[::5]:
            k_vec = lipschitz_reject_count(X, 1.0, 1.0, T, RngHandle(6))
            k_sc = sum(uniformity_test_lipschitz(X, 1.0, 1.0, ExtensionMode.EXACT, RngHandle(7, t)).rejected
                       for t in range(T))
            assert abs(k_vec - k_sc) / T <= 4 * math.sqrt(0.25 * 2 / T)
