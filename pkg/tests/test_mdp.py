import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import one_state_mdp, random_policy
from epqlab.errors import ConfigurationError, OfflineAccessError
from epqlab.mdp import (Mdp, QFunction, TabularPolicy, bellman_apply, exact_q, greedy_policy,
                        load_mdp, monte_carlo_q, optimal_q, pendulum_mdp, pendulum_state_index,
                        random_mdp, sample_episode, save_mdp)
from oracles import dense_bellman, value_iteration_q


class TestBellmanApply:
    def test_zero_bootstrap(self):
        mdp = one_state_mdp(1.0, 0.5)
        out = bellman_apply(mdp, TabularPolicy.uniform(1, 1), QFunction([[0.0]]))
        assert out.values[0, 0] == 1.0

    def test_fixed_point(self, small_mdp):
        pi = TabularPolicy.uniform(5, 3)
        q = exact_q(small_mdp, pi)
        assert np.max(np.abs(bellman_apply(small_mdp, pi, q).values - q.values)) < 1e-10

    def test_two_state_chain(self):
        P = np.zeros((2, 1, 2))
        P[0, 0, 1] = P[1, 0, 0] = 1.0
        mdp = Mdp(P, [[1.0], [0.0]], 0.9)
        pi = TabularPolicy.uniform(2, 1)
        out = bellman_apply(mdp, pi, QFunction(np.zeros((2, 1))))
        np.testing.assert_array_equal(out.values[:, 0], [1.0, 0.0])
        np.testing.assert_allclose(out.values, dense_bellman(P, mdp.reward, 0.9, pi.probs,
                                                             np.zeros((2, 1))))

    def test_matches_dense_oracle(self, small_mdp):
        rng = np.random.default_rng(3)
        pi = random_policy(rng, 5, 3)
        q = rng.normal(size=(5, 3))
        np.testing.assert_allclose(
            bellman_apply(small_mdp, pi, q).values,
            dense_bellman(small_mdp.transition, small_mdp.reward, 0.9, pi.probs, q), atol=1e-13)

    def test_shape_mismatch(self, small_mdp):
        with pytest.raises(ConfigurationError):
            bellman_apply(small_mdp, TabularPolicy.uniform(4, 3), np.zeros((5, 3)))

    def test_contraction(self):
        rng = np.random.default_rng(11)
        for seed in range(20):
            mdp = random_mdp(6, 3, seed)
            pi = random_policy(rng, 6, 3)
            q1, q2 = rng.normal(size=(2, 6, 3)) * 10
            lhs = np.max(np.abs(bellman_apply(mdp, pi, q1).values - bellman_apply(mdp, pi, q2).values))
            assert lhs <= mdp.discount * np.max(np.abs(q1 - q2)) + 1e-12


class TestExactQ:
    def test_geometric_series(self):
        assert exact_q(one_state_mdp(1.0, 0.5), TabularPolicy.uniform(1, 1)).values[0, 0] == pytest.approx(2.0, abs=1e-14)

    def test_zero_reward(self):
        mdp = Mdp(random_mdp(4, 2, 0).transition, np.zeros((4, 2)), 0.9)
        assert np.all(exact_q(mdp, TabularPolicy.uniform(4, 2)).values == 0.0)

    def test_value_iteration_oracle(self, small_mdp):
        pi = TabularPolicy.uniform(5, 3)
        vi = value_iteration_q(small_mdp.transition, small_mdp.reward, 0.9, pi.probs)
        assert np.max(np.abs(exact_q(small_mdp, pi).values - vi)) < 1e-8

    def test_fixed_point_fuzz(self):
        rng = np.random.default_rng(5)
        for seed in range(100):
            S, A = rng.integers(1, 8), rng.integers(1, 5)
            mdp = random_mdp(S, A, seed, discount=rng.uniform(0, 0.99))
            pi = random_policy(rng, S, A)
            q = exact_q(mdp, pi)
            assert np.max(np.abs(bellman_apply(mdp, pi, q).values - q.values)) < 1e-10

    def test_optimal_dominates(self, small_mdp):
        qstar = optimal_q(small_mdp)
        v_star = qstar.values.max(axis=1)
        for seed in range(5):
            pi = random_policy(np.random.default_rng(seed), 5, 3)
            assert np.all(exact_q(small_mdp, pi).state_values(pi) <= v_star + 1e-10)


class TestSampling:
    def test_seeded(self, small_mdp):
        pi = TabularPolicy.uniform(5, 3)
        a, b = sample_episode(small_mdp, pi, 30, 4), sample_episode(small_mdp, pi, 30, 4)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.actions, b.actions)

    def test_deterministic_mdp_ignores_seed(self):
        P = np.zeros((3, 2, 3))
        for s in range(3):
            P[s, 0, (s + 1) % 3] = P[s, 1, s] = 1.0
        mdp = Mdp(P, np.ones((3, 2)), 0.9, [1.0, 0.0, 0.0])
        pi = TabularPolicy.deterministic([0, 0, 0], 2)
        runs = [sample_episode(mdp, pi, 10, seed).states for seed in range(5)]
        for r in runs:
            np.testing.assert_array_equal(r, runs[0])

    def test_action_frequency(self):
        mdp = random_mdp(3, 2, 1)
        ep = sample_episode(mdp, TabularPolicy.uniform(3, 2), 10000, 0)
        assert abs(np.mean(ep.actions == 0) - 0.5) < 0.02

    def test_rewards_match_table(self, small_mdp):
        ep = sample_episode(small_mdp, TabularPolicy.uniform(5, 3), 200, 9)
        np.testing.assert_array_equal(ep.rewards, small_mdp.reward[ep.states, ep.actions])
        assert np.all(small_mdp.transition[ep.states, ep.actions, ep.next_states] > 0)
        np.testing.assert_array_equal(ep.next_states[:-1], ep.states[1:])


class TestMonteCarlo:
    def test_geometric(self):
        est = monte_carlo_q(one_state_mdp(1.0, 0.5), TabularPolicy.uniform(1, 1), 0, 0, 10, 60, 0)
        assert abs(est.mean - 2.0) <= est.truncation_bound + 1e-15

    def test_gamma_zero(self, small_mdp):
        mdp = Mdp(small_mdp.transition, small_mdp.reward, 0.0)
        pi = TabularPolicy.uniform(5, 3)
        assert monte_carlo_q(mdp, pi, 2, 1, 1, 5, 0).mean == mdp.reward[2, 1]
        # averaging identical returns only adds summation round-off
        assert monte_carlo_q(mdp, pi, 2, 1, 100, 5, 0).mean == pytest.approx(mdp.reward[2, 1], rel=1e-14)

    def test_matches_exact(self, small_mdp):
        pi = TabularPolicy.uniform(5, 3)
        est = monte_carlo_q(small_mdp, pi, 0, 0, 50000, 200, 1, tolerance=1e-6)
        assert abs(est.mean - exact_q(small_mdp, pi).values[0, 0]) < 3 * est.stderr

    def test_error_shrinks(self, small_mdp):
        pi = TabularPolicy.uniform(5, 3)
        truth = exact_q(small_mdp, pi).values[1, 2]
        errs = [np.mean([abs(monte_carlo_q(small_mdp, pi, 1, 2, n, 150, seed).mean - truth)
                         for seed in range(5)]) for n in (100, 10000)]
        assert errs[1] < errs[0]

    def test_horizon_check(self, small_mdp):
        with pytest.raises(ConfigurationError):
            monte_carlo_q(small_mdp, TabularPolicy.uniform(5, 3), 0, 0, 10, 5, 0, tolerance=1e-6)


class TestInstances:
    def test_random_seeded(self):
        a, b = random_mdp(6, 3, 12), random_mdp(6, 3, 12)
        assert a.transition.tobytes() == b.transition.tobytes()
        assert a.reward.tobytes() == b.reward.tobytes()

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 2**31))
    def test_random_invariants(self, S, A, seed):
        mdp = random_mdp(S, A, seed)
        assert np.all(np.abs(mdp.transition.sum(axis=2) - 1) <= 1e-12)
        assert np.all(np.abs(mdp.reward) <= 1.0)

    def test_random_fuzz_thousand(self):
        for seed in range(1000):
            random_mdp(4, 3, seed)  # constructor validates every invariant

    def test_random_rejects_empty(self):
        with pytest.raises(ConfigurationError):
            random_mdp(0, 2, 1)

    def test_pendulum_equilibrium(self):
        mdp = pendulum_mdp()
        s = pendulum_state_index(21, 21, np.pi, 0.0)
        zero = int(np.argmin(np.abs(mdp.action_values)))
        assert mdp.action_values[zero] == 0.0
        assert mdp.transition[s, zero, s] == 1.0

    def test_pendulum_bounds(self):
        mdp = pendulum_mdp(7, 7, 5)
        assert mdp.action_values[0] == -2.0 and mdp.action_values[-1] == 2.0
        assert np.all(np.abs(mdp.reward) <= mdp.r_max)

    def test_pendulum_rejects_small(self):
        with pytest.raises(ConfigurationError):
            pendulum_mdp(1, 5, 5)

    def test_pendulum_greedy_beats_uniform(self):
        mdp = pendulum_mdp(11, 11, 5)
        upright = pendulum_state_index(11, 11, 0.0, 0.0)
        uniform = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
        greedy = greedy_policy(optimal_q(mdp))
        v_g = exact_q(mdp, greedy).state_values(greedy)[upright]
        v_u = exact_q(mdp, uniform).state_values(uniform)[upright]
        assert v_g > v_u


class TestInvariants:
    def test_bad_rows(self):
        with pytest.raises(ConfigurationError):
            Mdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), 0.9)

    def test_reward_bound(self):
        with pytest.raises(ConfigurationError):
            Mdp(np.ones((1, 1, 1)), [[2.0]], 0.9, r_max=1.0)

    def test_discount_range(self):
        with pytest.raises(ConfigurationError):
            Mdp(np.ones((1, 1, 1)), [[0.0]], 1.0)

    def test_policy_rows(self):
        with pytest.raises(ConfigurationError):
            TabularPolicy([[0.5, 0.6]])

    def test_state_values(self):
        q = QFunction([[1.0, 3.0]])
        assert q.state_values(TabularPolicy([[0.25, 0.75]]))[0] == 2.5

    def test_sealed(self, small_mdp):
        with small_mdp.sealed():
            with pytest.raises(OfflineAccessError):
                small_mdp.transition
        assert small_mdp.transition.shape == (5, 3, 5)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        mdp = pendulum_mdp(5, 5, 3)
        save_mdp(mdp, tmp_path / "m.txt")
        back = load_mdp(tmp_path / "m.txt")
        assert back.transition.tobytes() == mdp.transition.tobytes()
        assert back.reward.tobytes() == mdp.reward.tobytes()
        assert back.discount == mdp.discount and back.r_max == mdp.r_max
        np.testing.assert_array_equal(back.state_coords, mdp.state_coords)

    def test_text_is_self_describing(self, tmp_path):
        save_mdp(random_mdp(2, 2, 0), tmp_path / "m.txt")
        text = (tmp_path / "m.txt").read_text()
        assert text.startswith("epqlab-mdp 1")
        assert "n_states 2" in text and "transition" in text
