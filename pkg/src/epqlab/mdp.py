"""Finite MDPs, exact policy evaluation, trajectory sampling and benchmark instances."""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DomainError, FormatError, OfflineAccessError, ParseError
from .kernels import Simulator

PROB_TOL = 1e-12


class Mdp:
    """Finite MDP with dense transition ``P[s, a, s']`` and reward ``R[s, a]`` tensors.

    ``state_coords`` optionally embeds states in a metric space (used for
    clustering); ``action_values`` carries the physical action grid when there
    is one.  Arrays are copied and made read-only on construction.

    ``sealed()`` turns any read of the true dynamics into an
    :class:`OfflineAccessError`; tests wrap training in it to audit the
    offline contract.
    """

    def __init__(self, transition, reward, discount, initial_state_dist=None, *,
                 r_max=None, state_coords=None, action_values=None, name="", meta=None):
        transition = np.array(transition, dtype=np.float64)
        reward = np.array(reward, dtype=np.float64)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {transition.shape}")
        n_states, n_actions, _ = transition.shape
        if n_states < 1 or n_actions < 1:
            raise ConfigurationError("need at least one state and one action")
        if reward.shape != (n_states, n_actions):
            raise ConfigurationError(f"reward shape {reward.shape} != {(n_states, n_actions)}")
        if not 0.0 <= discount < 1.0:
            raise ConfigurationError(f"discount must lie in [0, 1), got {discount}")
        if np.any(transition < 0) or np.any(np.abs(transition.sum(axis=2) - 1.0) > PROB_TOL):
            raise ConfigurationError("transition rows must be nonnegative and sum to 1")
        if not np.all(np.isfinite(reward)):
            raise ConfigurationError("rewards must be finite")
        if initial_state_dist is None:
            initial_state_dist = np.full(n_states, 1.0 / n_states)
        initial_state_dist = np.array(initial_state_dist, dtype=np.float64)
        if (initial_state_dist.shape != (n_states,) or np.any(initial_state_dist < 0)
                or abs(initial_state_dist.sum() - 1.0) > PROB_TOL):
            raise ConfigurationError("initial_state_dist must be a probability vector over states")
        bound = float(np.abs(reward).max())
        r_max = bound if r_max is None else float(r_max)
        if bound > r_max:
            raise ConfigurationError(f"|R| reaches {bound} > declared r_max {r_max}")
        for arr in (transition, reward, initial_state_dist):
            arr.flags.writeable = False
        if state_coords is not None:
            state_coords = np.array(state_coords, dtype=np.float64)
            if state_coords.ndim != 2 or state_coords.shape[0] != n_states:
                raise ConfigurationError("state_coords must have shape (S, d)")
            state_coords.flags.writeable = False
        if action_values is not None:
            action_values = np.array(action_values, dtype=np.float64)
            if action_values.shape != (n_actions,):
                raise ConfigurationError("action_values must have shape (A,)")
            action_values.flags.writeable = False
        self._transition = transition
        self._reward = reward
        self.discount = float(discount)
        self.initial_state_dist = initial_state_dist
        self.r_max = r_max
        self.state_coords = state_coords
        self.action_values = action_values
        self.name = name
        self.meta = dict(meta or {})
        self._sealed = 0

    @property
    def n_states(self) -> int:
        return self._transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self._transition.shape[1]

    @property
    def transition(self) -> np.ndarray:
        if self._sealed:
            raise OfflineAccessError(f"transition of sealed Mdp {self.name!r} was read")
        return self._transition

    @property
    def reward(self) -> np.ndarray:
        if self._sealed:
            raise OfflineAccessError(f"reward of sealed Mdp {self.name!r} was read")
        return self._reward

    @contextlib.contextmanager
    def sealed(self):
        self._sealed += 1
        try:
            yield self
        finally:
            self._sealed -= 1

    def value_bound(self) -> float:
        """Largest possible |Q| for any policy: r_max / (1 - gamma)."""
        return self.r_max / (1.0 - self.discount)

    def __repr__(self):
        return (f"Mdp(name={self.name!r}, n_states={self.n_states}, "
                f"n_actions={self.n_actions}, discount={self.discount})")


@dataclass(frozen=True)
class TabularPolicy:
    """Per-state action distribution ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ConfigurationError("policy probs must be a (S, A) matrix")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_TOL):
            raise ConfigurationError("policy rows must be nonnegative and sum to 1")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self):
        return self.probs.shape[0]

    @property
    def n_actions(self):
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions):
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    def restricted(self, mask):
        """Zero out actions where ``mask`` is False and renormalize.

        Rows with no allowed mass fall back to uniform over the allowed
        actions, and rows with no allowed action at all are left unchanged.
        """
        mask = np.asarray(mask, dtype=bool)
        probs = np.where(mask, self.probs, 0.0)
        total = probs.sum(axis=1, keepdims=True)
        allowed = mask.sum(axis=1, keepdims=True)
        fallback = np.where(mask, 1.0 / np.maximum(allowed, 1), 0.0)
        probs = np.where(total > 0, probs / np.where(total > 0, total, 1.0), fallback)
        probs = np.where(allowed > 0, probs, self.probs)
        return TabularPolicy(probs)


@dataclass(frozen=True)
class QFunction:
    """Dense action-value table ``values[s, a]``."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ConfigurationError("Q values must be a (S, A) matrix")
        if not np.all(np.isfinite(values)):
            raise DomainError("Q values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def state_values(self, policy) -> np.ndarray:
        """V(s) = sum_a pi(a|s) Q(s, a)."""
        return np.sum(_probs(policy) * self.values, axis=1)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.terminals is None:
            object.__setattr__(self, "terminals", np.zeros(len(self.states), dtype=bool))

    def __len__(self):
        return len(self.states)


class MonteCarloEstimate(NamedTuple):
    mean: float
    stderr: float
    truncation_bound: float
    n_rollouts: int


def _probs(policy):
    return policy.probs if isinstance(policy, TabularPolicy) else np.asarray(policy, dtype=np.float64)


def _values(q):
    return q.values if isinstance(q, QFunction) else np.asarray(q, dtype=np.float64)


def _check_shapes(mdp, policy=None, q=None):
    shape = (mdp.n_states, mdp.n_actions)
    if policy is not None and _probs(policy).shape != shape:
        raise ConfigurationError(f"policy shape {_probs(policy).shape} != {shape}")
    if q is not None and _values(q).shape != shape:
        raise ConfigurationError(f"Q shape {_values(q).shape} != {shape}")


def policy_transition(mdp: Mdp, policy) -> np.ndarray:
    """State-to-state matrix P^pi[s, s'] = sum_a pi(a|s) P[s, a, s']."""
    return np.einsum("sa,sap->sp", _probs(policy), mdp.transition)


def bellman_apply(mdp: Mdp, policy, q) -> QFunction:
    """(B^pi Q)(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) sum_a' pi(a'|s') Q(s',a')."""
    _check_shapes(mdp, policy, q)
    v = np.sum(_probs(policy) * _values(q), axis=1)
    return QFunction(mdp.reward + mdp.discount * (mdp.transition @ v))


def exact_q(mdp: Mdp, policy) -> QFunction:
    """Q^pi by a direct linear solve.

    Solves the state-value system (I - gamma P^pi) V = R^pi and lifts it with
    Q = R + gamma P V, which is the same fixed point as solving the
    (S*A)-dimensional system for Q directly.
    """
    _check_shapes(mdp, policy)
    if mdp.discount >= 1.0:
        raise DomainError("exact evaluation needs discount < 1")
    probs = _probs(policy)
    system = np.eye(mdp.n_states) - mdp.discount * policy_transition(mdp, policy)
    try:
        v = np.linalg.solve(system, np.sum(probs * mdp.reward, axis=1))
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"singular evaluation system: {exc}") from exc
    return QFunction(mdp.reward + mdp.discount * (mdp.transition @ v))


def optimal_q(mdp: Mdp, max_iter=1000) -> QFunction:
    """Optimal action values by policy iteration (lowest-index tie breaking)."""
    actions = np.zeros(mdp.n_states, dtype=np.int64)
    for _ in range(max_iter):
        q = exact_q(mdp, TabularPolicy.deterministic(actions, mdp.n_actions)).values
        best = q.max(axis=1, keepdims=True)
        # keep the incumbent action on near-ties so the loop terminates
        keep = q[np.arange(mdp.n_states), actions] >= best[:, 0] - 1e-12
        greedy = np.argmax(q >= best - 1e-12, axis=1)
        new = np.where(keep, actions, greedy)
        if np.array_equal(new, actions):
            return QFunction(q)
        actions = new
    raise DomainError("policy iteration did not terminate")


def greedy_policy(q, n_actions=None) -> TabularPolicy:
    """Deterministic argmax policy; the lowest action index wins ties."""
    values = _values(q)
    return TabularPolicy.deterministic(np.argmax(values, axis=1), values.shape[1])


def horizon_for_tolerance(discount, r_max, tol) -> int:
    """Smallest H with gamma^H * r_max / (1 - gamma) < tol."""
    if discount == 0.0 or r_max == 0.0:
        return 1
    bound = r_max / (1.0 - discount)
    if bound < tol:
        return 1
    return int(math.floor(math.log(tol / bound) / math.log(discount))) + 1


def truncation_bound(discount, r_max, horizon) -> float:
    return discount ** horizon * r_max / (1.0 - discount)


def _cdf_pick(probs, u):
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    k = int(np.sum(cum <= u))
    while probs[k] == 0.0:  # land on a positive-probability entry
        k += 1
    return k


def sample_episode(mdp: Mdp, policy, horizon: int, seed: int) -> Trajectory:
    """One trajectory of ``horizon`` steps from the initial state distribution."""
    _check_shapes(mdp, policy)
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random(2)
    probs = _probs(policy)
    s0 = _cdf_pick(mdp.initial_state_dist, u[0])
    a0 = _cdf_pick(probs[s0], u[1])
    sim = Simulator(mdp.transition, mdp.reward, probs)
    s, a, r, sn = sim.trace([s0], [a0], horizon, rng)
    return Trajectory(s[0], a[0], r[0], sn[0])


def monte_carlo_q(mdp: Mdp, policy, state, action, n_rollouts, horizon, seed,
                  tolerance=None) -> MonteCarloEstimate:
    """Mean truncated return G_0 over ``n_rollouts`` rollouts starting at (state, action).

    If ``tolerance`` is given, the horizon must make the truncation bound
    gamma^H r_max / (1 - gamma) smaller than it.
    """
    _check_shapes(mdp, policy)
    bound = truncation_bound(mdp.discount, mdp.r_max, horizon)
    if tolerance is not None and bound >= tolerance:
        raise ConfigurationError(
            f"horizon {horizon} leaves truncation error {bound:.3g} >= {tolerance}")
    rng = np.random.default_rng(seed)
    sim = Simulator(mdp.transition, mdp.reward, _probs(policy))
    g = sim.returns(np.full(n_rollouts, state), np.full(n_rollouts, action),
                    horizon, mdp.discount, rng)
    stderr = float(g.std(ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else float("nan")
    return MonteCarloEstimate(float(g.mean()), stderr, bound, n_rollouts)


def monte_carlo_v(mdp: Mdp, policy, states, n_rollouts, horizon, seed):
    """Per-state mean and standard error of G_0 with the first action drawn from the policy."""
    states = np.asarray(states, dtype=np.int64)
    rng = np.random.default_rng(seed)
    sim = Simulator(mdp.transition, mdp.reward, _probs(policy))
    start = np.repeat(states, n_rollouts)
    first = sim.first_actions(start, rng.random(start.size))
    g = sim.returns(start, first, horizon, mdp.discount, rng).reshape(states.size, n_rollouts)
    stderr = g.std(axis=1, ddof=1) / math.sqrt(n_rollouts) if n_rollouts > 1 else np.full(states.size, np.nan)
    return g.mean(axis=1), stderr


def random_mdp(n_states: int, n_actions: int, seed: int, discount: float = 0.9) -> Mdp:
    """Dirichlet(1) transition rows, uniform rewards in [-1, 1], one-hot state coordinates."""
    if n_states < 1 or n_actions < 1:
        raise ConfigurationError("n_states and n_actions must be >= 1")
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    # renormalize in place so row sums are 1 to the last ulp
    transition /= transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return Mdp(transition, reward, discount, r_max=1.0,
               state_coords=np.eye(n_states),
               action_values=np.linspace(-1.0, 1.0, n_actions) if n_actions > 1 else np.zeros(1),
               name=f"random-{n_states}x{n_actions}-seed{seed}",
               meta={"kind": "random", "seed": seed})


# classic pendulum constants
_G, _MASS, _LENGTH, _DT = 10.0, 1.0, 1.0, 0.05
MAX_SPEED, MAX_TORQUE = 8.0, 2.0


def _angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


def pendulum_mdp(n_angle_bins: int = 21, n_velocity_bins: int = 21, n_action_bins: int = 17,
                 discount: float = 0.99) -> Mdp:
    """Discretized swing-up pendulum.

    Angle 0 is upright.  Angle bin centers are ``-pi + 2*pi*i/n`` so bin 0 is
    the hanging position; velocity centers span [-8, 8] and torques span
    [-2, 2].  Each bin center is pushed through one step of the continuous
    dynamics and the successor is spread over the neighbouring bins with
    bilinear (angle-periodic) interpolation weights.  Reward is the negative
    quadratic cost ``theta^2 + 0.1*thetadot^2 + 0.001*u^2``.
    """
    if min(n_angle_bins, n_velocity_bins, n_action_bins) < 2:
        raise ConfigurationError("all bin counts must be >= 2")
    angles = -np.pi + 2 * np.pi * np.arange(n_angle_bins) / n_angle_bins
    velocities = np.linspace(-MAX_SPEED, MAX_SPEED, n_velocity_bins)
    torques = np.linspace(-MAX_TORQUE, MAX_TORQUE, n_action_bins)
    n_states = n_angle_bins * n_velocity_bins
    th = np.repeat(angles, n_velocity_bins)
    thdot = np.tile(velocities, n_angle_bins)

    transition = np.zeros((n_states, n_action_bins, n_states))
    reward = np.zeros((n_states, n_action_bins))
    angle_step = 2 * np.pi / n_angle_bins
    vel_step = velocities[1] - velocities[0]
    rows = np.arange(n_states)
    for k, u in enumerate(torques):
        reward[:, k] = -(_angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)
        new_thdot = thdot + (3 * _G / (2 * _LENGTH) * np.sin(th)
                             + 3.0 / (_MASS * _LENGTH ** 2) * u) * _DT
        new_thdot = np.clip(new_thdot, -MAX_SPEED, MAX_SPEED)
        new_th = th + new_thdot * _DT

        pos = ((new_th + np.pi) % (2 * np.pi)) / angle_step
        i0 = np.floor(pos).astype(np.int64) % n_angle_bins
        wa = pos - np.floor(pos)
        i1 = (i0 + 1) % n_angle_bins
        vpos = np.clip((new_thdot + MAX_SPEED) / vel_step, 0.0, n_velocity_bins - 1)
        j0 = np.minimum(np.floor(vpos).astype(np.int64), n_velocity_bins - 2)
        wv = vpos - j0
        for ii, wi in ((i0, 1.0 - wa), (i1, wa)):
            for jj, wj in ((j0, 1.0 - wv), (j0 + 1, wv)):
                np.add.at(transition[:, k, :], (rows, ii * n_velocity_bins + jj), wi * wj)
    # drop round-off mass (e.g. sin(pi) != 0) so equilibria map exactly onto themselves
    transition[transition < 1e-12] = 0.0
    transition /= transition.sum(axis=2, keepdims=True)

    r_max = np.pi ** 2 + 0.1 * MAX_SPEED ** 2 + 0.001 * MAX_TORQUE ** 2
    coords = np.column_stack([np.cos(th), np.sin(th), thdot])
    start = np.zeros(n_states)
    start[pendulum_state_index(n_angle_bins, n_velocity_bins, np.pi, 0.0)] = 1.0
    return Mdp(transition, reward, discount, start, r_max=r_max, state_coords=coords,
               action_values=torques,
               name=f"pendulum-{n_angle_bins}x{n_velocity_bins}x{n_action_bins}",
               meta={"kind": "pendulum", "angles": angles, "velocities": velocities,
                     "n_angle_bins": n_angle_bins, "n_velocity_bins": n_velocity_bins})


def pendulum_state_index(n_angle_bins, n_velocity_bins, angle, velocity) -> int:
    """Index of the bin whose center is nearest to (angle, velocity)."""
    angle_step = 2 * np.pi / n_angle_bins
    i = int(np.round(((angle + np.pi) % (2 * np.pi)) / angle_step)) % n_angle_bins
    velocities = np.linspace(-MAX_SPEED, MAX_SPEED, n_velocity_bins)
    j = int(np.argmin(np.abs(velocities - velocity)))
    return i * n_velocity_bins + j


# ---------------------------------------------------------------------------
# text serialization

MDP_FORMAT = "epqlab-mdp"
MDP_VERSION = 1


def _fmt(x):
    return format(float(x), ".17g")


def save_mdp(mdp: Mdp, path) -> None:
    """Write a self-describing, diffable text file (row-major, 17 significant digits)."""
    lines = [f"{MDP_FORMAT} {MDP_VERSION}",
             f"name {mdp.name or '-'}",
             f"n_states {mdp.n_states}",
             f"n_actions {mdp.n_actions}",
             f"discount {_fmt(mdp.discount)}",
             f"r_max {_fmt(mdp.r_max)}",
             "initial " + " ".join(_fmt(x) for x in mdp.initial_state_dist)]
    if mdp.action_values is not None:
        lines.append("action_values " + " ".join(_fmt(x) for x in mdp.action_values))
    if mdp.state_coords is not None:
        lines.append(f"state_coords {mdp.state_coords.shape[1]}")
        lines.extend(" ".join(_fmt(x) for x in row) for row in mdp.state_coords)
    lines.append("transition")
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(f"{s} {a} " + " ".join(_fmt(x) for x in mdp.transition[s, a]))
    lines.append("reward")
    for s in range(mdp.n_states):
        lines.append(f"{s} " + " ".join(_fmt(x) for x in mdp.reward[s]))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mdp(path) -> Mdp:
    lines = Path(path).read_text().splitlines()
    pos = 0

    def take(key=None):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError("unexpected end of file", pos + 1)
        parts = lines[pos].split()
        pos += 1
        if key is not None and (not parts or parts[0] != key):
            raise ParseError(f"expected {key!r}", pos)
        return parts

    def floats(parts, n):
        if len(parts) != n:
            raise ParseError(f"expected {n} values, got {len(parts)}", pos)
        try:
            return [float(x) for x in parts]
        except ValueError as exc:
            raise ParseError(str(exc), pos) from exc

    head = take()
    if len(head) != 2 or head[0] != MDP_FORMAT:
        raise FormatError(f"not an {MDP_FORMAT} file")
    if head[1] != str(MDP_VERSION):
        raise FormatError(f"unsupported {MDP_FORMAT} version {head[1]}")
    name = take("name")[1]
    try:
        n_states = int(take("n_states")[1])
        n_actions = int(take("n_actions")[1])
        discount = float(take("discount")[1])
        r_max = float(take("r_max")[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(str(exc), pos) from exc
    initial = floats(take("initial")[1:], n_states)
    action_values = coords = None
    parts = take()
    if parts and parts[0] == "action_values":
        action_values = floats(parts[1:], n_actions)
        parts = take()
    if parts and parts[0] == "state_coords":
        dim = int(parts[1])
        coords = [floats(take(), dim) for _ in range(n_states)]
        parts = take()
    if parts != ["transition"]:
        raise ParseError("expected 'transition'", pos)
    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            row = take()
            if row[:2] != [str(s), str(a)]:
                raise ParseError(f"expected transition row for ({s}, {a})", pos)
            transition[s, a] = floats(row[2:], n_states)
    take("reward")
    reward = np.zeros((n_states, n_actions))
    for s in range(n_states):
        row = take()
        if row[:1] != [str(s)]:
            raise ParseError(f"expected reward row for state {s}", pos)
        reward[s] = floats(row[1:], n_actions)
    take("end")
    return Mdp(transition, reward, discount, initial, r_max=r_max, state_coords=coords,
               action_values=action_values, name="" if name == "-" else name)
