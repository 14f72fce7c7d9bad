"""Bias measurement, closed-form penalized fixed points, alpha thresholds,
underestimation certificates and the pendulum bias scenarios."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .dataset import BehaviorEstimate, OfflineDataset, estimate_behavior
from .errors import ConfigurationError, DomainError
from .learner import LearnerConfig, TrainedAgent, solve_exact
from .mdp import (Mdp, TabularPolicy, _probs, exact_q, horizon_for_tolerance, monte_carlo_v,
                  pendulum_mdp, pendulum_state_index, policy_transition)
from .penalty import PenaltyConfig, average_penalties

BIAS_COLUMNS = ("state", "bias", "squared_bias", "mc_bias", "mc_stderr", "alpha", "tau", "mode")
CERTIFICATE_COLUMNS = ("state", "margin", "alpha_used", "alpha_threshold", "xi_max", "delta",
                       "passed")
SCENARIO_COLUMNS = ("alpha", "tau", "bias", "squared_bias", "stderr")
SCENARIO_ACTION_COLUMNS = ("alpha", "tau", "action", "torque", "q_bias")


@dataclass(frozen=True)
class BiasReport:
    """Per-state bias E_pi[Q_hat] - E_pi[Q^pi] under the exact oracle, with an optional Monte-Carlo cross-check."""

    states: np.ndarray
    bias: np.ndarray
    mc_bias: np.ndarray
    mc_stderr: np.ndarray
    alpha: float
    tau: float
    mode: str
    action_bias: np.ndarray | None = None  # per-action Q bias at the first reported state

    @property
    def squared_bias(self) -> float:
        return float(np.mean(self.bias ** 2))

    def rows(self):
        for i, s in enumerate(self.states):
            yield dict(state=int(s), bias=float(self.bias[i]), squared_bias=self.squared_bias,
                       mc_bias=float(self.mc_bias[i]), mc_stderr=float(self.mc_stderr[i]),
                       alpha=self.alpha, tau=self.tau, mode=self.mode)


def measure_bias(agent: TrainedAgent, mdp: Mdp, n_rollouts=0, seed=0, states=None,
                 mc_tolerance=1e-3) -> BiasReport:
    """Bias of the agent's value estimate for its own policy.

    The exact oracle solves for Q^pi directly; with ``n_rollouts > 0`` the
    Monte-Carlo estimate of V^pi (truncated at a horizon whose truncation
    error is below ``mc_tolerance``) is reported alongside.
    """
    states = np.arange(mdp.n_states) if states is None else np.asarray(states, dtype=np.int64)
    policy = agent.policy
    q_hat = agent.q.values
    q_true = exact_q(mdp, policy).values
    v_hat = np.sum(_probs(policy) * q_hat, axis=1)[states]
    v_true = np.sum(_probs(policy) * q_true, axis=1)[states]
    mc_bias = np.full(states.size, np.nan)
    mc_err = np.full(states.size, np.nan)
    if n_rollouts > 0:
        horizon = horizon_for_tolerance(mdp.discount, mdp.r_max, mc_tolerance)
        mean, mc_err = monte_carlo_v(mdp, policy, states, n_rollouts, horizon, seed)
        mc_bias = v_hat - mean
    pen = agent.config.penalty
    return BiasReport(states, v_hat - v_true, mc_bias, mc_err, pen.alpha,
                      agent.meta.get("tau", pen.tau(mdp.n_actions)), agent.config.mode,
                      q_hat[states[0]] - q_true[states[0]])


class ClosedForm(NamedTuple):
    values: np.ndarray
    resolvent: np.ndarray
    resolvent_row_sums: np.ndarray


def fixed_point_closed_form(mdp: Mdp, policy, per_state_penalty, alpha, xi=None) -> ClosedForm:
    """V_inf = V^pi + (I - gamma P^pi)^{-1} (-alpha * Delta + E_pi[xi]).

    The resolvent is returned with its row sums; it is entrywise
    nonnegative (a nonsingular M-matrix inverse), which is what makes a
    nonnegative average penalty push every state value down.
    """
    if not mdp.discount < 1:
        raise DomainError("closed form needs discount < 1")
    system = np.eye(mdp.n_states) - mdp.discount * policy_transition(mdp, policy)
    try:
        resolvent = np.linalg.inv(system)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"singular evaluation system: {exc}") from exc
    shift = -alpha * np.nan_to_num(np.asarray(per_state_penalty, dtype=np.float64))
    if xi is not None:
        shift = shift + np.sum(_probs(policy) * np.broadcast_to(xi, _probs(policy).shape), axis=1)
    v_pi = exact_q(mdp, policy).state_values(policy)
    return ClosedForm(v_pi + resolvent @ shift, resolvent, resolvent.sum(axis=1))


def threshold_from_penalties(deltas, xi_max) -> float:
    """Smallest alpha with alpha * min_s Delta(s) >= max xi; 0 if xi == 0, inf if some Delta == 0."""
    if xi_max <= 0:
        return 0.0
    low = float(np.min(deltas))
    if low <= 0:
        return math.inf
    return float(xi_max) / low


def alpha_threshold(policy, behavior: BehaviorEstimate, penalty: PenaltyConfig, xi,
                    states=None) -> float:
    """Alpha above which penalized sweeps cannot overestimate, given a per-pair error bound ``xi``.

    Uses the exclusive average penalty at the visited states (or ``states``).
    """
    epq, _ = average_penalties(policy, behavior, penalty.tau(behavior.n_actions))
    states = np.flatnonzero(behavior.visited) if states is None else np.asarray(states)
    return threshold_from_penalties(epq[states], float(np.max(xi)))


@dataclass(frozen=True)
class UnderestimationCertificate:
    states: np.ndarray
    margins: np.ndarray           # V^pi(s) - V_hat(s)
    alpha_used: float
    alpha_threshold: float
    xi_max: float
    delta: float = 0.0            # failure probability; exact sweeps make it 0
    passed: bool | None = None    # None when alpha is below the threshold
    warning: str = ""
    agent: TrainedAgent | None = field(default=None, repr=False, compare=False)

    def rows(self):
        for s, m in zip(self.states, self.margins):
            yield dict(state=int(s), margin=float(m), alpha_used=self.alpha_used,
                       alpha_threshold=self.alpha_threshold, xi_max=self.xi_max,
                       delta=self.delta, passed="" if self.passed is None else int(self.passed))


def verify_underestimation(dataset: OfflineDataset, mdp: Mdp, config: LearnerConfig, xi=0.0,
                           policy=None, tol=1e-8) -> UnderestimationCertificate:
    """Train with exact sweeps under ``mdp`` (perturbed by ``xi``) and compare V_hat with V^pi.

    ``policy`` fixes the evaluated policy; otherwise the Boltzmann policy is
    improved alongside the sweeps.  Margins are checked at every state that
    appears in the dataset.
    """
    if not config.exact:
        config = replace(config, mode=config.method + "-exact")
    behavior = estimate_behavior(dataset)
    xi_arr = np.broadcast_to(np.asarray(xi, dtype=np.float64), (mdp.n_states, mdp.n_actions))
    agent = solve_exact(behavior, mdp, config, fixed_policy=policy,
                        xi=xi_arr if np.any(xi_arr) else None)
    states = np.unique(dataset.state)
    v_true = exact_q(mdp, agent.policy).state_values(agent.policy)[states]
    v_hat = agent.q.state_values(agent.policy)[states]
    margins = v_true - v_hat
    pen = config.penalty
    xi_max = float(np.max(xi_arr))
    if config.method == "cql":
        _, deltas = average_penalties(agent.policy, behavior, math.inf)
        threshold = threshold_from_penalties(deltas[states], xi_max)
    else:
        threshold = alpha_threshold(agent.policy, behavior, pen, xi_arr, states)
    if agent.status != "converged":
        return UnderestimationCertificate(states, margins, pen.alpha, threshold, xi_max,
                                          passed=None, warning=f"training {agent.status}",
                                          agent=agent)
    if pen.alpha < threshold:
        return UnderestimationCertificate(
            states, margins, pen.alpha, threshold, xi_max, passed=None,
            warning=f"alpha {pen.alpha} is below the threshold {threshold}; no guarantee applies",
            agent=agent)
    return UnderestimationCertificate(states, margins, pen.alpha, threshold, xi_max,
                                      passed=bool(np.all(margins >= -tol)), agent=agent)


# ---------------------------------------------------------------------------
# pendulum bias scenarios

SCENARIOS = {
    # name: (behavior mixture [(weight, mean, std) or ("uniform",)], policy (mean, std))
    "case_a": ([("uniform",)], (0.0, 0.2)),
    "case_b": ([(0.5, -1.0, 0.3), (0.5, 1.0, 0.3)], (1.0, 0.2)),
    "case_c": ([(0.5, -1.0, 0.3), (0.5, 1.0, 0.3)], (0.0, 0.2)),
}


@dataclass(frozen=True)
class ScenarioSetup:
    """Grid, probe state and the behavior/policy pair used by one scenario."""

    n_angle_bins: int = 11
    n_velocity_bins: int = 11
    n_action_bins: int = 41
    n_behavior_samples: int = 10000
    discount: float = 0.99


def _normal_cdf(x):
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(x) / math.sqrt(2.0)))


def _bin_edges(torques):
    mid = 0.5 * (torques[1:] + torques[:-1])
    return np.concatenate([[-np.inf], mid, [np.inf]])


def policy_row(torques, mean, std) -> np.ndarray:
    """Normal density integrated over the torque bins (outer bins absorb the tails)."""
    edges = _bin_edges(torques)
    mass = np.diff(_normal_cdf((edges - mean) / std))
    return mass / mass.sum()


def behavior_counts(torques, mixture, n_samples, seed) -> np.ndarray:
    """Histogram of ``n_samples`` draws from the mixture, clipped to the torque range."""
    rng = np.random.default_rng(seed)
    lo, hi = torques[0], torques[-1]
    if mixture[0][0] == "uniform":
        draws = rng.uniform(lo, hi, n_samples)
    else:
        weights = np.array([m[0] for m in mixture])
        comp = rng.choice(len(mixture), size=n_samples, p=weights / weights.sum())
        means = np.array([m[1] for m in mixture])[comp]
        stds = np.array([m[2] for m in mixture])[comp]
        draws = rng.normal(means, stds)
    edges = _bin_edges(torques)
    bins = np.searchsorted(edges, np.clip(draws, lo, hi), side="right") - 1
    return np.bincount(bins, minlength=torques.size)


def scenario_problem(name: str, seed: int = 0, setup: ScenarioSetup = ScenarioSetup()):
    """Pendulum MDP, behavior estimate, fixed policy and probe state for one scenario.

    Only the probe (hanging rest) state uses the named distributions; at
    every other state the policy and the behavior estimate are exactly
    uniform, so the penalty vanishes there.
    """
    if name not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    mixture, (mean, std) = SCENARIOS[name]
    mdp = pendulum_mdp(setup.n_angle_bins, setup.n_velocity_bins, setup.n_action_bins,
                       discount=setup.discount)
    probe = pendulum_state_index(setup.n_angle_bins, setup.n_velocity_bins, np.pi, 0.0)
    torques = mdp.action_values
    counts = np.ones((mdp.n_states, mdp.n_actions), dtype=np.int64)
    counts[probe] = behavior_counts(torques, mixture, setup.n_behavior_samples, seed)
    behavior = BehaviorEstimate(counts)
    probs = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    probs[probe] = policy_row(torques, mean, std)
    policy = behavior.restrict(TabularPolicy(probs))
    return mdp, behavior, policy, probe


def run_scenario(name: str, method: str, alpha: float, tau_ratio: float = 2.0, seed: int = 0,
                 setup: ScenarioSetup = ScenarioSetup(), config: LearnerConfig | None = None,
                 n_rollouts: int = 0) -> BiasReport:
    """Evaluate the scenario's fixed policy with exact penalized sweeps and report the probe-state bias."""
    if alpha < 0:
        raise ConfigurationError("alpha must be >= 0")
    method = method.lower()
    if method not in ("cql", "epq"):
        raise ConfigurationError("method must be 'cql' or 'epq'")
    mdp, behavior, policy, probe = scenario_problem(name, seed, setup)
    base = config or LearnerConfig()
    pen = replace(base.penalty, alpha=float(alpha), tau_ratio=float(tau_ratio), tau_value=None)
    cfg = replace(base, mode=f"{method}-exact", penalty=pen)
    agent = solve_exact(behavior, mdp, cfg, fixed_policy=policy)
    if agent.status != "converged":
        raise DomainError(f"scenario {name} did not converge ({agent.status})")
    return measure_bias(agent, mdp, n_rollouts=n_rollouts, seed=seed, states=[probe])


# ---------------------------------------------------------------------------
# CSV output

def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        out.writeheader()
        for row in rows:
            out.writerow({k: _cell(row[k]) for k in columns})


def _cell(x):
    if isinstance(x, float):
        return repr(x)
    return x
