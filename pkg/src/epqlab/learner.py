"""Training engines: exact penalized sweeps, the sampled weighted loss, and the full training loop.

Two families of modes share one entry point, :func:`train`:

* ``*-exact`` runs synchronous penalized Bellman sweeps against an explicit
  model (the data-estimated MDP by default, or a true MDP for oracle checks)
  until successive sweeps differ by less than ``convergence_tol``.
* ``*-sampled`` runs minibatch gradient steps on the weighted loss, using only
  the offline dataset, for a fixed step budget.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .dataset import OfflineDataset, compute_returns, empirical_mdp, estimate_behavior
from .errors import ConfigurationError, FormatError, SupportError
from .mdp import Mdp, QFunction, TabularPolicy, _probs, _values, bellman_apply
from .penalty import (PenaltyConfig, adaptation_factors, build_cluster_index, clip_weight,
                      is_weight_clustered, is_weight_table, pair_return_scores, penalty_table)

MODES = ("epq-exact", "epq-sampled", "cql-exact", "cql-sampled")
METRIC_COLUMNS = ("step", "loss", "mean_abs_penalty", "mean_f", "mean_w", "dq_sup")
DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class LearnerConfig:
    """Training hyperparameters; sampled-mode defaults mirror the deep-RL setup where they transfer."""

    mode: str = "epq-exact"
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    q_step_size: float = 0.01
    policy_temperature: float = 0.5
    policy_step_size: float = 0.03
    ema_rate: float = 0.005
    batch_size: int = 256
    n_action_samples: int = 10
    max_gradient_steps: int = 20000
    convergence_tol: float = 1e-10
    sampled_tol: float = 0.05
    seed: int = 0
    q_steps_per_policy_step: int = 1
    optimizer: str = "adam"
    q_model: str = "table"
    weight_source: str = "clustered"
    penalty_target: str = "logsumexp"
    lse_estimator: str = "exact"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.q_step_size > 0:
            raise ConfigurationError("q_step_size must be > 0")
        if not self.policy_temperature > 0:
            raise ConfigurationError("policy_temperature must be > 0")
        if not 0 < self.policy_step_size <= 1:
            raise ConfigurationError("policy_step_size must lie in (0, 1]")
        if not 0 < self.ema_rate <= 1:
            raise ConfigurationError("ema_rate must lie in (0, 1]")
        if self.n_action_samples < 1:
            raise ConfigurationError("n_action_samples must be >= 1")
        if self.batch_size < 1 or self.max_gradient_steps < 1 or self.q_steps_per_policy_step < 1:
            raise ConfigurationError("batch_size, max_gradient_steps and "
                                     "q_steps_per_policy_step must be >= 1")
        choices = dict(optimizer=("adam", "sgd"), q_model=("table", "quadratic"),
                       weight_source=("clustered", "exact", "none"),
                       penalty_target=("logsumexp", "policy"),
                       lse_estimator=("exact", "sampled"))
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigurationError(f"{name} must be one of {allowed}")

    @property
    def method(self) -> str:
        return self.mode.split("-")[0]

    @property
    def exact(self) -> bool:
        return self.mode.endswith("exact")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LearnerConfig":
        data = dict(data)
        data["penalty"] = PenaltyConfig(**data.get("penalty", {}))
        return cls(**data)


@dataclass
class TrainedAgent:
    q: QFunction
    target_q: QFunction
    policy: TabularPolicy
    history: dict
    status: str
    config: LearnerConfig
    steps: int
    guard_bound: float
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# small building blocks

def policy_improve(q, temperature, mask=None) -> TabularPolicy:
    """Boltzmann policy pi proportional to exp(Q / temperature), optionally restricted to ``mask``.

    This is the closed-form maximizer of E_pi[Q] + temperature * H(pi).
    """
    if not temperature > 0:
        raise ConfigurationError("temperature must be > 0")
    logits = _values(q) / temperature
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        logits = np.where(mask, logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    return TabularPolicy(e / e.sum(axis=1, keepdims=True))


def _policy_step(policy, q, config, mask):
    """Move the policy a fraction ``policy_step_size`` of the way to the Boltzmann policy of ``q``."""
    target = policy_improve(q, config.policy_temperature, mask)
    if policy is None or config.policy_step_size == 1.0:
        return target
    eta = config.policy_step_size
    return TabularPolicy((1.0 - eta) * policy.probs + eta * target.probs)


def ema_update(target_q, q, rate) -> QFunction:
    """target' = (1 - rate) * target + rate * q."""
    if not 0 < rate <= 1:
        raise ConfigurationError("rate must lie in (0, 1]")
    return QFunction((1.0 - rate) * _values(target_q) + rate * _values(q))


def _soft_rows(q, temperature, mask=None):
    """temperature * logsumexp(Q/temperature) per row and its gradient (the Boltzmann policy)."""
    logits = q / temperature
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    total = e.sum(axis=1, keepdims=True)
    return temperature * (top[:, 0] + np.log(total[:, 0])), e / total


def log_sum_exp_estimate(q, state, policy, n_samples, seed, return_grad=False):
    """Sampled estimate of log sum_a exp Q(s, a).

    Half the samples come from the policy, half from the uniform proposal;
    every sample is importance-corrected by the mixture density
    0.5*pi + 0.5*uniform (computed from log pi and log rho_d), which keeps the
    estimate unbiased in the exp domain even when pi is a point mass.
    """
    if n_samples < 2:
        raise ConfigurationError("n_samples must be >= 2")
    row = np.asarray(_values(q)[state], dtype=np.float64)
    pi = _probs(policy)[state]
    n_actions = row.size
    rng = np.random.default_rng(seed)
    n_pi = n_samples // 2
    cum = np.cumsum(pi)
    cum[-1] = 1.0
    from_pi = np.minimum(np.searchsorted(cum, rng.random(n_pi), side="right"), n_actions - 1)
    from_uniform = rng.integers(n_actions, size=n_samples - n_pi)
    actions = np.concatenate([from_pi, from_uniform])
    with np.errstate(divide="ignore"):
        log_mix = np.logaddexp(np.log(0.5) + np.log(pi[actions]),
                               np.log(0.5) - math.log(n_actions))
    terms = row[actions] - log_mix
    top = terms.max()
    e = np.exp(terms - top)
    value = float(top + math.log(e.sum()) - math.log(n_samples))
    if not return_grad:
        return value
    grad = np.bincount(actions, weights=e / e.sum(), minlength=n_actions)
    return value, grad


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m, self.v = np.zeros_like(params), np.zeros_like(params)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grad):
        return params - self.lr * grad


def action_basis(n_actions, q_model) -> np.ndarray:
    """Features psi(a) so that Q(s, a) = theta[s] . psi(a).

    "table" is the identity (one parameter per pair); "quadratic" uses
    (1, u, u^2) over the normalized action coordinate u in [-1, 1], which
    extrapolates Q to actions the data never shows.
    """
    if q_model == "table":
        return np.eye(n_actions)
    u = np.linspace(-1.0, 1.0, n_actions) if n_actions > 1 else np.zeros(1)
    return np.stack([np.ones_like(u), u, u * u], axis=1)


# ---------------------------------------------------------------------------
# exact sweeps

def epq_exact_iterate(q, model: Mdp, policy, behavior, penalty: PenaltyConfig, xi=None) -> QFunction:
    """One synchronous sweep Q' = B^pi Q - alpha * P_tau (+ xi).

    The Bellman operator is ``model``'s.  Pairs without data, and states
    never visited, receive the plain backup.
    """
    table, _ = penalty_table(policy, behavior, penalty.tau(behavior.n_actions))
    return _sweep(q, model, policy, penalty.alpha * table, xi)


def cql_exact_iterate(q, model: Mdp, policy, behavior, alpha, xi=None) -> QFunction:
    """One sweep with the unadapted per-pair penalty pi/beta - 1."""
    return _sweep(q, model, policy, alpha * cql_penalty_table(policy, behavior), xi)


def cql_penalty_table(policy, behavior) -> np.ndarray:
    probs = _probs(policy)
    beta = np.nan_to_num(behavior.probs)
    mask = beta > 0
    visited = behavior.visited if behavior.floor is None else np.ones(behavior.n_states, bool)
    bad = visited[:, None] & (probs > 0) & ~mask
    if bad.any():
        s, a = np.argwhere(bad)[0]
        raise SupportError(f"policy puts mass on action {a} at state {s}, which has no data")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mask, probs / np.where(mask, beta, 1.0) - 1.0, 0.0)


def _sweep(q, model, policy, scaled_penalty, xi):
    out = bellman_apply(model, policy, q).values - scaled_penalty
    if xi is not None:
        out = out + xi
    return QFunction(out)


# ---------------------------------------------------------------------------
# sampled loss

@dataclass(frozen=True)
class Batch:
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    terminal: np.ndarray

    @classmethod
    def from_dataset(cls, dataset: OfflineDataset, index=None) -> "Batch":
        index = slice(None) if index is None else index
        return cls(dataset.state[index], dataset.action[index], dataset.reward[index],
                   dataset.next_state[index], dataset.terminal[index])


def bellman_targets(target_q, batch: Batch, policy, gamma) -> np.ndarray:
    """y = r + gamma * (1 - terminal) * sum_a' pi(a'|s') Q_target(s', a')."""
    v_next = np.sum(_probs(policy)[batch.next_state] * _values(target_q)[batch.next_state], axis=1)
    return batch.reward + gamma * np.where(batch.terminal, 0.0, v_next)


def _soft_value(q, policy, config: LearnerConfig, mask, batch_states, rng):
    """Per-state soft value and its gradient rows, as used by the penalty term."""
    if config.penalty_target == "policy":
        probs = _probs(policy)
        return np.sum(probs * q, axis=1), probs
    if config.lse_estimator == "exact":
        return _soft_rows(q, config.policy_temperature, mask)
    temp = config.policy_temperature
    value = np.zeros(q.shape[0])
    grad = np.zeros_like(q)
    for s in np.unique(batch_states):
        row = q[s] / temp if mask is None else np.where(mask[s], q[s] / temp, -1e300)
        v, g = log_sum_exp_estimate(row[None, :], 0, _probs(policy)[s][None, :],
                                    config.n_action_samples, rng.integers(2**63), True)
        value[s], grad[s] = temp * v, g
    return value, grad


def epq_sampled_loss(q, target_q, batch: Batch, policy, behavior, weights,
                     penalty: PenaltyConfig, config: LearnerConfig, *, gamma,
                     mask=None, rng=None, backend=None):
    """Weighted loss of one batch and its gradient with respect to every Q entry.

    loss = mean_i[ 0.5 * c_i * (Q(s_i,a_i) - y_i)^2 + p_i * (V_soft(s_i) - Q(s_i,a_i)) ]

    EPQ: c_i = max(c_min, w_i), p_i = alpha * w_i * f(s_i) (without
    prioritization c_i = 1 and p_i = alpha * f(s_i)).  CQL: c_i = 1,
    p_i = alpha.  ``weights`` are per-transition IS weights for the batch.
    Returns ``(loss, grad, info)``.
    """
    qv = np.asarray(_values(q), dtype=np.float64)
    n = len(batch.state)
    y = bellman_targets(target_q, batch, policy, gamma)
    if config.method == "cql":
        f_batch = np.ones(n)
        w = np.ones(n)
        bellman_w = np.ones(n)
        coef = np.full(n, penalty.alpha)
    else:
        f = adaptation_factors(policy, behavior, penalty.tau(behavior.n_actions),
                               allow_unsupported=True)
        f_batch = f[batch.state]
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        if penalty.use_pd:
            bellman_w = clip_weight(w, penalty.c_min)
            coef = penalty.alpha * w * f_batch
        else:
            bellman_w = np.ones(n)
            coef = penalty.alpha * f_batch
    rng = np.random.default_rng(0) if rng is None else rng
    soft, soft_grad = _soft_value(qv, policy, config, mask, batch.state, rng)
    loss, grad = kernels.batch_loss_grad(qv, batch.state, batch.action, y, bellman_w, coef,
                                         soft, soft_grad, backend=backend)
    gap = soft[batch.state] - qv[batch.state, batch.action]
    info = dict(mean_abs_penalty=float(np.mean(np.abs(coef * gap))),
                mean_f=float(np.mean(f_batch)), mean_w=float(np.mean(w)))
    return loss, grad, info


def expanded_loss(q, target_q, dataset: OfflineDataset, policy, weights, factors, alpha, *,
                  backend=None):
    """Full-batch loss with the penalty expanded into separate terms.

    mean_i[ 0.5 * w_i * (Q_i - y_i)^2 + alpha * w_i * f(s_i) * (E_pi[Q(s_i, .)] - Q_i) ]
    with unclipped weights.  Returns ``(loss, grad)``.
    """
    batch = Batch.from_dataset(dataset)
    qv = np.asarray(_values(q), dtype=np.float64)
    probs = _probs(policy)
    y = bellman_targets(target_q, batch, policy, dataset.gamma)
    w = np.asarray(weights, dtype=np.float64)
    coef = alpha * w * np.asarray(factors)[batch.state]
    return kernels.batch_loss_grad(qv, batch.state, batch.action, y, w, coef,
                                   np.sum(probs * qv, axis=1), probs, backend=backend)


def compact_loss(q, target_q, dataset: OfflineDataset, policy, prioritized, weights, factors,
                 alpha):
    """Full-batch squared error against the penalized target under the prioritized data.

    mean_i[ w_i * 0.5 * (Q_i - (y_i - alpha * f(s_i) * (pi/beta^Q - 1)))^2 ]

    Reweighting dataset transitions by w_i = beta^Q / beta turns the data
    average into an expectation under beta^Q.  Returns ``(loss, grad)``.
    """
    batch = Batch.from_dataset(dataset)
    qv = np.asarray(_values(q), dtype=np.float64)
    s, a = batch.state, batch.action
    y = bellman_targets(target_q, batch, policy, dataset.gamma)
    pen = np.asarray(factors)[s] * (_probs(policy)[s, a] / prioritized[s, a] - 1.0)
    resid = qv[s, a] - (y - alpha * pen)
    w = np.asarray(weights, dtype=np.float64)
    n = len(s)
    loss = float(np.sum(0.5 * w * resid * resid)) / n
    grad = np.bincount(s * qv.shape[1] + a, weights=w * resid / n,
                       minlength=qv.size).reshape(qv.shape)
    return loss, grad


# ---------------------------------------------------------------------------
# training loop

def transition_weights(dataset: OfflineDataset, config: LearnerConfig, behavior,
                       state_coords=None) -> np.ndarray:
    """Per-transition IS weights from regularized empirical returns."""
    zeta = config.penalty.zeta
    if config.method == "cql" or config.weight_source == "none":
        return np.ones(len(dataset))
    if config.weight_source == "exact":
        table = is_weight_table(behavior, pair_return_scores(dataset, zeta), zeta)
        return table[dataset.state, dataset.action]
    index = build_cluster_index(dataset, config.penalty.epsilon_radius, coords=state_coords)
    return is_weight_clustered(dataset, index, zeta)


def _history():
    return {name: [] for name in METRIC_COLUMNS}


def _record(history, step, loss, info, dq):
    history["step"].append(step)
    history["loss"].append(float(loss))
    history["mean_abs_penalty"].append(info["mean_abs_penalty"])
    history["mean_f"].append(info["mean_f"])
    history["mean_w"].append(info["mean_w"])
    history["dq_sup"].append(float(dq))


def train(dataset: OfflineDataset, config: LearnerConfig, *, model: Mdp | None = None,
          fixed_policy=None, state_coords=None, xi=None, initial_q=None) -> TrainedAgent:
    """Run the configured training mode on ``dataset``.

    ``model`` supplies the Bellman operator for exact modes (default: the
    count-based model estimated from the dataset).  ``fixed_policy`` skips
    policy improvement and evaluates that policy instead; in tabular mode it
    is projected onto the data support.  ``xi`` adds a per-pair perturbation to
    every exact sweep.
    """
    behavior = estimate_behavior(dataset)
    r_bound = float(np.max(np.abs(dataset.reward)))
    if model is not None:
        r_bound = max(r_bound, model.r_max)
        if (model.n_states, model.n_actions) != (dataset.n_states, dataset.n_actions):
            raise ConfigurationError("model and dataset dimensions differ")
    guard = DIVERGENCE_FACTOR * max(r_bound, 1e-12) / (1.0 - dataset.gamma)
    if config.exact:
        model = empirical_mdp(dataset) if model is None else model
        return solve_exact(behavior, model, config, fixed_policy=fixed_policy, xi=xi,
                           initial_q=initial_q, guard=guard)
    return _train_sampled(dataset, config, behavior, fixed_policy, state_coords, guard, initial_q)


def _support_mask(behavior):
    return np.where(behavior.visited[:, None], behavior.effective_support(), True)


def solve_exact(behavior, model: Mdp, config: LearnerConfig, *, fixed_policy=None, xi=None,
                initial_q=None, guard=None) -> TrainedAgent:
    """Exact penalized sweeps under ``model`` with the penalty built from ``behavior``.

    Runs until successive sweeps differ by less than ``convergence_tol`` in
    sup-norm, the sweep budget runs out, or the divergence guard trips.
    """
    n_states, n_actions = behavior.n_states, behavior.n_actions
    if guard is None:
        guard = DIVERGENCE_FACTOR * max(model.r_max, 1e-12) / (1.0 - model.discount)
    mask = _support_mask(behavior)
    q = np.zeros((n_states, n_actions)) if initial_q is None else _values(initial_q)
    q = QFunction(q)
    pen = config.penalty
    tau = pen.tau(n_actions)
    counts = behavior.counts
    policy = None if fixed_policy is None else TabularPolicy(_probs(fixed_policy)).restricted(mask)
    history = _history()
    status = "budget_exhausted"
    penalty_scaled = factors = None
    visited_steps = behavior.state_counts / behavior.state_counts.sum()
    step = 0
    for step in range(1, config.max_gradient_steps + 1):
        if fixed_policy is None or penalty_scaled is None:
            if fixed_policy is None:
                policy = _policy_step(policy, q, config, mask)
            if config.method == "cql":
                penalty_scaled = pen.alpha * cql_penalty_table(policy, behavior)
                factors = np.ones(n_states)
            else:
                table, _ = penalty_table(policy, behavior, tau)
                penalty_scaled = pen.alpha * table
                factors = np.nan_to_num(adaptation_factors(policy, behavior, tau), nan=1.0)
            # the penalized operator is a contraction on reward r - alpha*P (+ xi),
            # so its fixed point may legitimately exceed the reward-only bound
            shift = float(np.max(np.abs(penalty_scaled)))
            if xi is not None:
                shift += float(np.max(np.abs(xi)))
            active_guard = guard + DIVERGENCE_FACTOR * shift / (1.0 - model.discount)
        new = _sweep(q, model, policy, penalty_scaled, xi)
        diff = new.values - q.values
        dq = float(np.max(np.abs(diff)))
        info = dict(
            mean_abs_penalty=float(np.sum(counts * np.abs(penalty_scaled)) / counts.sum()),
            mean_f=float(np.sum(visited_steps * factors)), mean_w=1.0)
        _record(history, step, 0.5 * float(np.mean(diff * diff)), info, dq)
        if np.max(np.abs(new.values)) > active_guard:
            status = "diverged"
            break
        q = new
        if dq < config.convergence_tol:
            status = "converged"
            break
    return TrainedAgent(q=q, target_q=q, policy=policy, history=_finish(history), status=status,
                        config=config, steps=step, guard_bound=active_guard,
                        meta=dict(n_states=n_states, n_actions=n_actions,
                                  gamma=model.discount, tau=tau))


def _train_sampled(dataset, config, behavior, fixed_policy, state_coords, guard, initial_q):
    rng = np.random.default_rng(config.seed)
    S, A = dataset.n_states, dataset.n_actions
    dataset = compute_returns(dataset)
    psi = action_basis(A, config.q_model)
    restrict = config.q_model == "table"
    mask = _support_mask(behavior) if restrict else None
    theta = np.zeros((S, psi.shape[1]))
    if initial_q is not None:
        theta = np.linalg.lstsq(psi, _values(initial_q).T, rcond=None)[0].T
    theta_target = theta.copy()
    opt = (_Adam if config.optimizer == "adam" else _Sgd)(config.q_step_size)
    weights = transition_weights(dataset, config, behavior, state_coords)
    pen = config.penalty
    policy = None
    if fixed_policy is not None:
        policy = TabularPolicy(_probs(fixed_policy))
        if restrict:
            policy = policy.restricted(mask)
    history = _history()
    status = "budget_exhausted"
    window = max(1, config.max_gradient_steps // 10)
    snapshot = None
    q = theta @ psi.T
    step = 0
    for step in range(1, config.max_gradient_steps + 1):
        if fixed_policy is None and (step - 1) % config.q_steps_per_policy_step == 0:
            policy = _policy_step(policy, q, config, mask)
        idx = rng.integers(len(dataset), size=config.batch_size)
        batch = Batch.from_dataset(dataset, idx)
        loss, grad_q, info = epq_sampled_loss(
            q, theta_target @ psi.T, batch, policy, behavior, weights[idx], pen, config,
            gamma=dataset.gamma, mask=mask, rng=rng)
        theta = opt.step(theta, grad_q @ psi)
        new_q = theta @ psi.T
        dq = float(np.max(np.abs(new_q - q))) if np.all(np.isfinite(new_q)) else math.inf
        _record(history, step, loss, info, dq)
        if not np.all(np.isfinite(new_q)) or np.max(np.abs(new_q)) > guard:
            status = "diverged"
            break
        q = new_q
        theta_target = (1.0 - config.ema_rate) * theta_target + config.ema_rate * theta
        if step == config.max_gradient_steps - window:
            snapshot = theta_target @ psi.T
    target = theta_target @ psi.T
    if status != "diverged" and snapshot is not None:
        drift = np.max(np.abs(target - snapshot)) / max(1.0, np.max(np.abs(target)))
        if drift < config.sampled_tol:
            status = "converged"
    return TrainedAgent(q=QFunction(q), target_q=QFunction(target), policy=policy,
                        history=_finish(history), status=status, config=config, steps=step,
                        guard_bound=guard,
                        meta=dict(n_states=S, n_actions=A, gamma=dataset.gamma,
                                  tau=pen.tau(A)))


def _finish(history):
    return {k: np.asarray(v, dtype=np.int64 if k == "step" else np.float64)
            for k, v in history.items()}


# ---------------------------------------------------------------------------
# persistence

def write_metrics(agent: TrainedAgent, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(METRIC_COLUMNS)
        h = agent.history
        for i in range(len(h["step"])):
            out.writerow([int(h["step"][i])] + [repr(float(h[c][i])) for c in METRIC_COLUMNS[1:]])


AGENT_FORMAT = "epqlab-agent"


def save_agent(agent: TrainedAgent, path) -> None:
    doc = dict(format=AGENT_FORMAT, version=1, status=agent.status, steps=agent.steps,
               guard_bound=agent.guard_bound, config=agent.config.to_dict(), meta=agent.meta,
               q=agent.q.values.tolist(), target_q=agent.target_q.values.tolist(),
               policy=agent.policy.probs.tolist())
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_agent(path) -> TrainedAgent:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != AGENT_FORMAT or doc.get("version") != 1:
        raise FormatError(f"{path} is not a version-1 {AGENT_FORMAT} file")
    return TrainedAgent(q=QFunction(doc["q"]), target_q=QFunction(doc["target_q"]),
                        policy=TabularPolicy(doc["policy"]), history=_finish(_history()),
                        status=doc["status"], config=LearnerConfig.from_dict(doc["config"]),
                        steps=doc["steps"], guard_bound=doc["guard_bound"], meta=doc["meta"])


def with_mode(config: LearnerConfig, mode: str, **changes) -> LearnerConfig:
    return replace(config, mode=mode, **changes)
