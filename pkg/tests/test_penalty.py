import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_policy
from epqlab.dataset import BehaviorEstimate, compute_returns, generate_dataset
from epqlab.errors import ConfigurationError, DegenerateGeometryError, SupportError
from epqlab.mdp import QFunction, TabularPolicy, pendulum_mdp, random_mdp
from epqlab.penalty import (PenaltyConfig, adaptation_factor, adaptation_factors, adaptive_amount,
                            average_penalties, average_penalty_cql, average_penalty_epq,
                            build_cluster_index, clip_weight, exclusive_penalty, penalty_table,
                            is_weight_clustered, is_weight_exact, is_weight_table,
                            pair_return_scores, penalty_term, prioritized_behavior, rho)
from oracles import (EXP_M1, EXP_M2, HALF_ONE_PLUS_EXP_M1, brute_force_clusters, chi2_penalty,
                     mean_nearest_distance)


def _beta(*rows):
    """Behavior estimate with the given rows (as probabilities over 1000 counts)."""
    counts = np.rint(np.array(rows, dtype=float) * 1000).astype(int)
    return BehaviorEstimate(counts)


class TestConfig:
    def test_defaults(self):
        cfg = PenaltyConfig()
        assert (cfg.alpha, cfg.c_min, cfg.epsilon_radius, cfg.zeta) == (20.0, 0.2, 2.0, 2.0)
        assert cfg.tau(4) == pytest.approx(2 * math.log(0.25))

    @pytest.mark.parametrize("kw", [dict(alpha=-1), dict(c_min=0), dict(c_min=1.5),
                                    dict(zeta=0), dict(epsilon_radius=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            PenaltyConfig(**kw)

    def test_rho(self):
        assert rho(41) == math.log(1 / 41)


class TestAdaptiveAmount:
    def test_boundary(self):
        assert adaptive_amount(-2.0, -2.0) == 1.0

    def test_clipped(self):
        assert adaptive_amount(-5.0, -2.0) == 1.0

    def test_above(self):
        assert adaptive_amount(-1.0, -2.0) == pytest.approx(EXP_M1, rel=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-30, 0), st.floats(-30, 5), st.floats(1e-3, 5))
    def test_monotone(self, log_beta, tau, step):
        x = adaptive_amount(log_beta, tau)
        assert 0 < x <= 1
        if log_beta <= tau:
            assert x == 1.0
        elif log_beta - tau > 1e-12:
            assert x < 1.0
            assert adaptive_amount(log_beta + step, tau) < x


class TestAdaptationFactor:
    def test_no_adaptation(self):
        beta = _beta([0.5, 0.5])
        assert adaptation_factor(TabularPolicy([[0.5, 0.5]]), beta, 0, math.log(0.5)) == 1.0

    def test_two_actions(self):
        # x = (1, e^-1): log beta_1 = tau, log beta_2 = tau + 1
        counts = np.array([[1000, int(round(1000 * math.e))]])
        beta = BehaviorEstimate(counts)
        tau = math.log(beta.row(0)[0])
        got = adaptation_factor(TabularPolicy([[0.5, 0.5]]), beta, 0, tau)
        assert got == pytest.approx(HALF_ONE_PLUS_EXP_M1, abs=2e-4)  # count rounding of e
        exact = 0.5 * (1 + math.exp(tau - math.log(beta.row(0)[1])))
        assert got == pytest.approx(exact, rel=1e-14)

    def test_point_mass(self):
        beta = _beta([0.5, 0.5])
        tau = math.log(0.5) - 2
        got = adaptation_factor(TabularPolicy([[1.0, 0.0]]), beta, 0, tau)
        assert got == pytest.approx(EXP_M2, rel=1e-14)

    def test_support_error_names_action(self):
        beta = _beta([1.0, 0.0])
        with pytest.raises(SupportError, match="action 1"):
            adaptation_factor(TabularPolicy([[0.5, 0.5]]), beta, 0, -1.0)

    def test_unsupported_allowed(self):
        beta = _beta([1.0, 0.0])
        assert adaptation_factor(TabularPolicy([[0.5, 0.5]]), beta, 0, -1.0,
                                 allow_unsupported=True) == pytest.approx(0.5 + 0.5 * math.exp(-1))

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            beta = BehaviorEstimate(rng.integers(1, 50, size=(1, 6)))
            pi = random_policy(rng, 1, 6)
            grid = [c * rho(6) for c in (0.2, 0.5, 1.0, 2.0, 5.0, 10.0)]
            f = [adaptation_factor(pi, beta, 0, t) for t in grid]
            assert all(b <= a for a, b in zip(f, f[1:]))


class TestPenaltyTerm:
    def test_identity(self):
        assert penalty_term(TabularPolicy([[0.75, 0.25]]), _beta([0.75, 0.25]), 0, 1) == 0.0

    def test_ratio(self):
        assert penalty_term(TabularPolicy([[0.5, 0.5]]), _beta([0.75, 0.25]), 0, 1) == 1.0

    def test_zero_mean_under_behavior(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            beta = BehaviorEstimate(rng.integers(1, 30, size=(1, 5)))
            pi = random_policy(rng, 1, 5)
            total = sum(beta.row(0)[a] * penalty_term(pi, beta, 0, a) for a in range(5))
            assert abs(total) < 1e-12

    def test_off_support(self):
        with pytest.raises(SupportError):
            penalty_term(TabularPolicy([[0.5, 0.5]]), _beta([1.0, 0.0]), 0, 1)

    def test_sign(self):
        beta = _beta([0.5, 0.5])
        pi = TabularPolicy([[0.7, 0.3]])
        assert penalty_term(pi, beta, 0, 0) > 0 > penalty_term(pi, beta, 0, 1)


class TestExclusivePenalty:
    def test_factor_one_is_cql(self):
        beta = _beta([0.2, 0.8])
        pi = TabularPolicy([[0.6, 0.4]])
        for a in range(2):
            assert exclusive_penalty(pi, beta, 0, a, math.inf) == penalty_term(pi, beta, 0, a)

    def test_equal_policy(self):
        beta = _beta([0.2, 0.3, 0.5])
        pi = TabularPolicy(beta.probs)
        assert all(exclusive_penalty(pi, beta, 0, a, -1.0) == 0.0 for a in range(3))

    def test_bounded_by_cql_fuzz(self):
        # 100000 (state, policy) draws split over 100 thresholds
        rng = np.random.default_rng(2)
        for tau in rng.uniform(-6, 0.5, size=100):
            beta = BehaviorEstimate(rng.integers(1, 100, size=(1000, 4)))
            pi = TabularPolicy(rng.dirichlet(np.ones(4), 1000))
            epq, _ = penalty_table(pi, beta, tau)
            cql, _ = penalty_table(pi, beta, math.inf)
            assert np.all(np.abs(epq) <= np.abs(cql) * (1 + 1e-15))


class TestPrioritized:
    def test_equal_scores(self):
        beta = _beta([0.25, 0.75])
        np.testing.assert_allclose(prioritized_behavior(beta, [[3.0, 3.0]], 0), beta.row(0))

    def test_temperature_limit(self):
        beta = _beta([0.25, 0.75])
        out = prioritized_behavior(beta, [[5.0, -5.0]], 0, zeta=1e12)
        assert np.max(np.abs(out - beta.row(0))) < 1e-9

    def test_scalar(self):
        out = prioritized_behavior(_beta([0.5, 0.5]), [[math.log(2), 0.0]], 0)
        np.testing.assert_allclose(out, [2 / 3, 1 / 3], rtol=1e-15)

    def test_support_unchanged(self):
        out = prioritized_behavior(_beta([0.5, 0.0, 0.5]), [[0.0, 100.0, 1.0]], 0)
        assert out[1] == 0.0

    def test_empty_support(self):
        with pytest.raises(SupportError):
            prioritized_behavior(BehaviorEstimate(np.zeros((1, 2), int)), [[0.0, 0.0]], 0)

    def test_overflow_guard(self):
        out = prioritized_behavior(_beta([0.5, 0.5]), [[2000.0, 1999.0]], 0)
        assert np.all(np.isfinite(out)) and out[0] > out[1]


class TestISWeights:
    def test_equal_q(self):
        beta = _beta([0.3, 0.7])
        assert is_weight_exact(beta, QFunction([[1.0, 1.0]]), 0, 1) == pytest.approx(1.0, abs=1e-15)

    def test_scalar(self):
        beta = _beta([0.5, 0.5])
        q = [[math.log(2), 0.0]]
        assert is_weight_exact(beta, q, 0, 0) == pytest.approx(4 / 3, rel=1e-15)
        assert is_weight_exact(beta, q, 0, 1) == pytest.approx(2 / 3, rel=1e-15)

    def test_normalization(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            beta = BehaviorEstimate(rng.integers(0, 20, size=(3, 5)) + np.eye(3, 5, dtype=int))
            q = rng.normal(size=(3, 5)) * 5
            w = is_weight_table(beta, q)
            assert np.all(np.abs(np.nansum(beta.probs * w, axis=1) - 1) < 1e-12)

    def test_off_support(self):
        with pytest.raises(SupportError):
            is_weight_exact(_beta([1.0, 0.0]), [[0.0, 0.0]], 0, 1)

    def test_clip(self):
        assert clip_weight(0.0, 0.2) == 0.2
        assert clip_weight(1.5, 0.2) == 1.5

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 100), st.floats(0, 100), st.floats(0.01, 1))
    def test_clip_monotone(self, w1, w2, c):
        lo, hi = sorted((w1, w2))
        assert clip_weight(lo, c) <= clip_weight(hi, c)
        assert clip_weight(lo, c) >= c


class TestClusters:
    def test_exact_match_radius(self, small_dataset):
        idx = build_cluster_index(small_dataset, 0.5)
        for i in range(0, len(small_dataset), 37):
            members = idx.members(i)
            assert np.all(small_dataset.state[members] == small_dataset.state[i])
            assert i in members

    def test_huge_radius(self, small_dataset):
        idx = build_cluster_index(small_dataset, 1e6)
        assert np.all(idx.cluster_sizes() == len(small_dataset))

    def test_pendulum_brute_force(self):
        mdp = pendulum_mdp(9, 9, 5)
        ds = generate_dataset(mdp, TabularPolicy.uniform(mdp.n_states, 5), 3, 60, 0)
        idx = build_cluster_index(ds, 2.0, coords=mdp.state_coords)
        distinct = np.unique(ds.state)
        assert idx.d_bar_closest == pytest.approx(
            mean_nearest_distance(mdp.state_coords[distinct]), rel=1e-12)
        ref = brute_force_clusters(mdp.state_coords, ds.state, idx.radius)
        for i in range(len(ds)):
            assert idx.members(i).tolist() == ref[i]

    def test_symmetric(self):
        mdp = pendulum_mdp(9, 9, 5)
        ds = generate_dataset(mdp, TabularPolicy.uniform(mdp.n_states, 5), 3, 60, 1)
        idx = build_cluster_index(ds, 3.0, coords=mdp.state_coords)
        np.testing.assert_array_equal(idx.neighbors, idx.neighbors.T)
        assert np.all(np.diag(idx.neighbors))

    def test_degenerate(self):
        ds = generate_dataset(random_mdp(1, 2, 0), TabularPolicy.uniform(1, 2), 2, 5, 0)
        with pytest.raises(DegenerateGeometryError):
            build_cluster_index(ds, 2.0)

    def test_equal_returns(self, small_dataset):
        from dataclasses import replace
        flat = replace(small_dataset, returns=np.full(len(small_dataset), 3.0))
        w = is_weight_clustered(flat, build_cluster_index(flat, 2.0), 2.0)
        np.testing.assert_allclose(w, 1.0, rtol=1e-15)

    def test_singleton(self):
        mdp = random_mdp(4, 2, 0)
        ds = compute_returns(generate_dataset(mdp, TabularPolicy.uniform(4, 2), 1, 3, 2))
        coords = np.arange(4, dtype=float)[:, None] * 10.0
        idx = build_cluster_index(ds, 1e-3, coords=coords)
        w = is_weight_clustered(ds, idx, 2.0)
        singles = idx.cluster_sizes() == 1
        np.testing.assert_array_equal(w[singles], 1.0)

    def test_large_returns_stable(self, small_dataset):
        from dataclasses import replace
        big = replace(small_dataset, returns=small_dataset.returns * 1000 - 5000)
        w = is_weight_clustered(big, build_cluster_index(big, 0.5), 2.0)
        assert np.all(np.isfinite(w))

    def test_matches_exact_weights(self, small_dataset, small_behavior):
        zeta = 2.0
        w = is_weight_clustered(small_dataset, build_cluster_index(small_dataset, 0.5), zeta)
        table = is_weight_table(small_behavior, pair_return_scores(small_dataset, zeta), zeta)
        rows = small_dataset.state * 3 + small_dataset.action
        pair_mean = np.bincount(rows, w, 15) / np.bincount(rows, minlength=15)
        assert np.nanmax(np.abs(pair_mean - table.ravel())) < 1e-10


class TestAveragePenalty:
    def test_equal_policy(self):
        beta = _beta([0.3, 0.7])
        pi = TabularPolicy(beta.probs)
        assert average_penalty_cql(pi, beta, 0) == 0.0
        assert average_penalty_epq(pi, beta, 0, -1.0) == 0.0

    def test_scalar(self):
        beta = _beta([0.5, 0.5])
        pi = TabularPolicy([[0.9, 0.1]])
        assert average_penalty_cql(pi, beta, 0) == pytest.approx(0.64, rel=1e-14)
        assert average_penalty_epq(pi, beta, 0, 0.0) == pytest.approx(0.64, rel=1e-14)
        assert chi2_penalty([0.9, 0.1], [0.5, 0.5]) == pytest.approx(0.64, rel=1e-14)

    def test_product(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            beta = BehaviorEstimate(rng.integers(1, 30, size=(1, 4)))
            pi = random_policy(rng, 1, 4)
            tau = rng.uniform(-4, 0)
            assert average_penalty_epq(pi, beta, 0, tau) == pytest.approx(
                adaptation_factor(pi, beta, 0, tau) * average_penalty_cql(pi, beta, 0), rel=1e-14)

    def test_expectation_form(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            beta = BehaviorEstimate(rng.integers(1, 30, size=(1, 4)))
            pi = random_policy(rng, 1, 4)
            ref = chi2_penalty(pi.probs[0], beta.row(0))
            assert average_penalty_cql(pi, beta, 0) == pytest.approx(ref, abs=1e-12)

    def test_vectorized_matches_scalar(self, small_behavior):
        rng = np.random.default_rng(10)
        pi = random_policy(rng, 5, 3)
        epq, cql = average_penalties(pi, small_behavior, -1.5)
        for s in range(5):
            assert epq[s] == pytest.approx(average_penalty_epq(pi, small_behavior, s, -1.5), rel=1e-13)
            assert cql[s] == pytest.approx(average_penalty_cql(pi, small_behavior, s), rel=1e-13)

    def test_unvisited_is_nan(self):
        beta = BehaviorEstimate(np.array([[1, 1], [0, 0]]))
        f = adaptation_factors(TabularPolicy.uniform(2, 2), beta, 0.0)
        assert f[0] == 1.0 and np.isnan(f[1])
