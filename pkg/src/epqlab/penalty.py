"""Exclusive penalty, prioritized behavior distribution and importance-sampling weights.

Symbols follow the usual EPQ notation: ``beta`` is the count-based behavior
estimate, ``tau`` the log-probability threshold, ``x`` the per-action adaptive
amount and ``f`` its policy average (the penalty adaptation factor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import BehaviorEstimate, OfflineDataset, compute_returns
from .errors import ConfigurationError, DegenerateGeometryError, SupportError
from .mdp import _probs, _values


def rho(n_actions: int) -> float:
    """Log-density of the uniform distribution over ``n_actions`` actions (negative)."""
    return math.log(1.0 / n_actions)


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty hyperparameters.

    The threshold is ``tau_ratio * rho(n_actions)`` unless ``tau_value``
    overrides it with an absolute log-probability (``inf`` disables
    adaptation entirely, giving the CQL penalty).
    """

    alpha: float = 20.0
    tau_ratio: float = 2.0
    tau_value: float | None = None
    c_min: float = 0.2
    epsilon_radius: float = 2.0
    zeta: float = 2.0
    use_pd: bool = True

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.c_min <= 1:
            raise ConfigurationError(f"c_min must lie in (0, 1], got {self.c_min}")
        if not self.zeta > 0:
            raise ConfigurationError(f"zeta must be > 0, got {self.zeta}")
        if not self.epsilon_radius > 0:
            raise ConfigurationError(f"epsilon_radius must be > 0, got {self.epsilon_radius}")
        if self.tau_value is not None and math.isnan(self.tau_value):
            raise ConfigurationError("tau_value is NaN")

    def tau(self, n_actions: int) -> float:
        if self.tau_value is not None:
            return float(self.tau_value)
        return self.tau_ratio * rho(n_actions)


# ---------------------------------------------------------------------------
# adaptation factor and exclusive penalty

def adaptive_amount(log_beta, tau):
    """x = min(1, exp(-(log_beta - tau))); exactly 1 whenever log_beta <= tau."""
    log_beta = np.asarray(log_beta, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        x = np.where(log_beta <= tau, 1.0, np.exp(np.minimum(tau - log_beta, 0.0)))
    return x if x.ndim else float(x)


def _support_check(pi_row, beta_row, state):
    bad = np.flatnonzero((pi_row > 0) & ~(beta_row > 0))
    if bad.size:
        raise SupportError(f"policy puts mass on action {int(bad[0])} at state {state}, "
                           "which has no data")


def adaptation_factor(policy, behavior: BehaviorEstimate, state, tau,
                      allow_unsupported=False) -> float:
    """f(s) = E_{a~pi}[x(a)], computed exactly over the action set.

    With ``allow_unsupported`` an action without data gets x = 1 (its
    log-probability is -inf, always below the threshold) instead of raising.
    """
    pi_row = _probs(policy)[state]
    beta_row = behavior.row(state)
    if not allow_unsupported:
        _support_check(pi_row, beta_row, state)
    with np.errstate(divide="ignore"):
        x = adaptive_amount(np.log(beta_row), tau)
    return float(np.sum(pi_row * x))


def adaptation_factors(policy, behavior: BehaviorEstimate, tau, allow_unsupported=False):
    """f(s) for every state; NaN where the state was never visited (and no floor is set)."""
    probs = _probs(policy)
    beta = behavior.probs
    visited = ~np.isnan(beta[:, 0])
    out = np.full(behavior.n_states, np.nan)
    if not visited.any():
        return out
    pi_v, beta_v = probs[visited], beta[visited]
    if not allow_unsupported and np.any((pi_v > 0) & ~(beta_v > 0)):
        state = int(np.flatnonzero(visited)[np.flatnonzero(((pi_v > 0) & ~(beta_v > 0)).any(axis=1))[0]])
        _support_check(probs[state], beta[state], state)
    with np.errstate(divide="ignore"):
        x = adaptive_amount(np.log(beta_v), tau)
    out[visited] = np.sum(pi_v * x, axis=1)
    return out


def penalty_term(policy, behavior: BehaviorEstimate, state, action) -> float:
    """pi(a|s) / beta(a|s) - 1; positive exactly when the policy outweighs the data."""
    beta = behavior.row(state)[action]
    if not beta > 0:
        raise SupportError(f"no data for action {action} at state {state}")
    return float(_probs(policy)[state, action] / beta - 1.0)


def exclusive_penalty(policy, behavior: BehaviorEstimate, state, action, tau) -> float:
    """P_tau(s, a) = f(s) * (pi/beta - 1)."""
    return (adaptation_factor(policy, behavior, state, tau)
            * penalty_term(policy, behavior, state, action))


def penalty_table(policy, behavior: BehaviorEstimate, tau, prioritized=None):
    """Per-pair penalty on every supported pair, 0 elsewhere.

    ``tau=inf`` gives CQL's per-pair penalty pi/beta - 1.  When ``prioritized``
    (a table of beta^Q rows) is given, the denominator switches to beta^Q while
    the adaptation factor keeps using beta.  Returns ``(table, mask)``.
    """
    probs = _probs(policy)
    beta = behavior.probs
    mask = np.nan_to_num(beta) > 0
    f = adaptation_factors(policy, behavior, tau)
    denom = beta if prioritized is None else prioritized
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(mask, probs / np.where(mask, denom, 1.0) - 1.0, 0.0)
    table = np.where(mask, np.nan_to_num(f)[:, None] * term, 0.0)
    return table, mask


# ---------------------------------------------------------------------------
# average penalties

def _chi2_rows(probs, beta):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(beta > 0, (probs - beta) ** 2 / np.where(beta > 0, beta, 1.0), 0.0)
    return terms.sum(axis=-1)


def average_penalty_cql(policy, behavior: BehaviorEstimate, state) -> float:
    """Delta_CQL(s) = E_{a~pi}[pi/beta - 1] = sum_a (pi - beta)^2 / beta >= 0."""
    pi_row = _probs(policy)[state]
    beta_row = behavior.row(state)
    _support_check(pi_row, beta_row, state)
    return float(_chi2_rows(pi_row, beta_row))


def average_penalty_epq(policy, behavior: BehaviorEstimate, state, tau) -> float:
    """Delta_EPQ(s) = f(s) * Delta_CQL(s)."""
    return (adaptation_factor(policy, behavior, state, tau)
            * average_penalty_cql(policy, behavior, state))


def average_penalties(policy, behavior: BehaviorEstimate, tau, prioritized=None):
    """Vectorized (Delta_EPQ, Delta_CQL) over states; NaN at unvisited states.

    With ``prioritized`` the chi-square is taken against beta^Q instead of beta.
    """
    probs = _probs(policy)
    beta = behavior.probs
    f = adaptation_factors(policy, behavior, tau)
    ref = beta if prioritized is None else prioritized
    cql = np.where(np.isnan(f), np.nan, _chi2_rows(probs, np.nan_to_num(ref)))
    return f * cql, cql


# ---------------------------------------------------------------------------
# prioritized dataset and IS weights

def _softmax_on_support(logits, mask):
    logits = np.where(mask, logits, -np.inf)
    top = np.max(logits, axis=-1, keepdims=True)
    e = np.where(mask, np.exp(logits - top), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def prioritized_behavior(behavior: BehaviorEstimate, scores, state, zeta=1.0) -> np.ndarray:
    """beta^Q(.|s) proportional to beta(.|s) * exp(score/zeta), on the data support only.

    ``scores`` is a (S, A) table in reward units: live Q values (zeta=1), or the
    per-pair soft-mean returns from :func:`pair_return_scores` (zeta = the
    return temperature).
    """
    beta = behavior.row(state)
    mask = beta > 0
    if not mask.any():
        raise SupportError(f"state {state} has empty support")
    score = np.asarray(_values(scores)[state], dtype=np.float64)
    with np.errstate(divide="ignore"):
        logits = np.log(np.where(mask, beta, 1.0)) + np.where(mask, score, 0.0) / zeta
    return _softmax_on_support(logits, mask)


def prioritized_table(behavior: BehaviorEstimate, scores, zeta=1.0) -> np.ndarray:
    """beta^Q rows for every visited state (NaN rows for unvisited states)."""
    beta = behavior.probs
    out = np.full_like(beta, np.nan)
    for s in np.flatnonzero(~np.isnan(beta[:, 0])):
        out[s] = prioritized_behavior(behavior, scores, s, zeta)
    return out


def is_weight_exact(behavior: BehaviorEstimate, scores, state, action, zeta=1.0) -> float:
    """w(s,a) = exp(score(s,a)/zeta) / E_{a'~beta}[exp(score(s,a')/zeta)] = beta^Q / beta."""
    beta = behavior.row(state)
    if not beta[action] > 0:
        raise SupportError(f"no data for action {action} at state {state}")
    pq = prioritized_behavior(behavior, scores, state, zeta)
    return float(pq[action] / beta[action])


def is_weight_table(behavior: BehaviorEstimate, scores, zeta=1.0) -> np.ndarray:
    """Exact IS weights for all supported pairs, NaN elsewhere."""
    beta = behavior.probs
    pq = prioritized_table(behavior, scores, zeta)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.nan_to_num(beta) > 0, pq / beta, np.nan)


def pair_return_scores(dataset: OfflineDataset, zeta) -> np.ndarray:
    """Per-pair soft mean of returns, zeta * log mean exp(G/zeta); -inf where there is no data.

    With these scores, exp(score/zeta) is exactly the mean of exp(G/zeta) over
    the pair's transitions, which ties the exact and clustered weights together.
    """
    ds = compute_returns(dataset)
    S, A = ds.n_states, ds.n_actions
    rows = ds.state * A + ds.action
    top = np.full(S * A, -np.inf)
    np.maximum.at(top, rows, ds.returns)
    e = np.exp((ds.returns - top[rows]) / zeta)
    sums = np.bincount(rows, weights=e, minlength=S * A)
    counts = np.bincount(rows, minlength=S * A)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(counts > 0, top + zeta * np.log(sums / np.maximum(counts, 1)), -np.inf)
    return scores.reshape(S, A)


def clip_weight(w, c_min):
    """max(c_min, w)."""
    return np.maximum(c_min, w)


# ---------------------------------------------------------------------------
# clustering

@dataclass(frozen=True)
class ClusterIndex:
    """Radius clusters over dataset states.

    A transition's cluster is every transition whose state lies within
    ``radius = epsilon * d_bar_closest`` of its own state; membership depends
    only on states, so it is stored as a neighbour matrix over the distinct
    visited states.
    """

    distinct_states: np.ndarray   # (M,) sorted state indices present in the dataset
    neighbors: np.ndarray         # (M, M) bool, symmetric, True on the diagonal
    transition_slot: np.ndarray   # (N,) position of each transition's state in distinct_states
    d_bar_closest: float
    radius: float
    metric: str

    def members(self, i) -> np.ndarray:
        """Indices of the transitions in transition ``i``'s cluster (including ``i``)."""
        near = self.neighbors[self.transition_slot[i]]
        return np.flatnonzero(near[self.transition_slot])

    def cluster_sizes(self) -> np.ndarray:
        per_slot = np.bincount(self.transition_slot, minlength=self.distinct_states.size)
        return (self.neighbors @ per_slot)[self.transition_slot]


def state_distances(coords) -> np.ndarray:
    """Pairwise Euclidean distances between rows of ``coords``."""
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def build_cluster_index(dataset: OfflineDataset, epsilon_radius, coords=None,
                        metric=None) -> ClusterIndex:
    """Radius clusters with radius epsilon * (mean distance from each state to its nearest other state).

    ``metric="euclidean"`` needs ``coords`` (S, d); ``metric="discrete"`` uses
    d(s, s') = 0 if s == s' else 1.  The default is euclidean when coordinates
    are given.
    """
    if metric is None:
        metric = "discrete" if coords is None else "euclidean"
    distinct, slot = np.unique(dataset.state, return_inverse=True)
    if distinct.size < 2:
        raise DegenerateGeometryError("clustering needs at least two distinct states")
    if metric == "euclidean":
        if coords is None:
            raise ConfigurationError("euclidean clustering needs state coordinates")
        dist = state_distances(np.asarray(coords, dtype=np.float64)[distinct])
    elif metric == "discrete":
        dist = 1.0 - np.eye(distinct.size)
    else:
        raise ConfigurationError(f"unknown metric {metric!r}")
    off = dist + np.diag(np.full(distinct.size, np.inf))
    d_bar = float(np.mean(off.min(axis=1)))
    if not d_bar > 0:
        raise DegenerateGeometryError("all dataset states coincide")
    radius = float(epsilon_radius) * d_bar
    return ClusterIndex(distinct, dist <= radius, slot.astype(np.int64), d_bar, radius, metric)


def is_weight_clustered(dataset: OfflineDataset, index: ClusterIndex, zeta) -> np.ndarray:
    """Per-transition w_i = exp(G_i/zeta) / mean_{j in C_i} exp(G_j/zeta).

    Evaluated with a per-cluster max shift so large |G|/zeta cannot overflow.
    """
    ds = compute_returns(dataset)
    g, slot = ds.returns, index.transition_slot
    m = index.distinct_states.size
    top = np.full(m, -np.inf)
    np.maximum.at(top, slot, g)
    own = np.bincount(slot, weights=np.exp((g - top[slot]) / zeta), minlength=m)
    count = np.bincount(slot, minlength=m).astype(np.float64)
    cluster_top = np.where(index.neighbors, top[None, :], -np.inf).max(axis=1)
    scale = np.where(index.neighbors, np.exp((top[None, :] - cluster_top[:, None]) / zeta), 0.0)
    cluster_sum = scale @ own
    cluster_count = index.neighbors.astype(np.float64) @ count
    mean = cluster_sum / cluster_count
    return np.exp((g - cluster_top[slot]) / zeta) / mean[slot]
