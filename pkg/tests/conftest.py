import numpy as np
import pytest

from epqlab.dataset import compute_returns, estimate_behavior, generate_dataset
from epqlab.mdp import Mdp, TabularPolicy, random_mdp


@pytest.fixture
def small_mdp():
    return random_mdp(5, 3, 7)


@pytest.fixture
def small_dataset(small_mdp):
    return compute_returns(generate_dataset(small_mdp, TabularPolicy.uniform(5, 3), 20, 50, 0))


@pytest.fixture
def small_behavior(small_dataset):
    return estimate_behavior(small_dataset)


def one_state_mdp(reward=1.0, gamma=0.5, n_actions=1):
    return Mdp(np.ones((1, n_actions, 1)), np.full((1, n_actions), reward), gamma)


def random_policy(rng, n_states, n_actions):
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), n_states))


def narrow_instance(seed=7, width=3, n_episodes=20, horizon=100):
    """Random MDP with 9 actions whose data only covers the middle ``width`` actions."""
    mdp = random_mdp(10, 9, seed)
    lo = (9 - width) // 2
    probs = np.zeros((10, 9))
    probs[:, lo:lo + width] = 1.0 / width
    dataset = compute_returns(generate_dataset(mdp, TabularPolicy(probs), n_episodes, horizon, 0))
    return mdp, dataset


# one (criterion, passed, detail) entry per acceptance check, printed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
