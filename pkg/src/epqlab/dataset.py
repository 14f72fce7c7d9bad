"""Offline datasets: generation, discounted returns, count-based behavior estimates, file I/O."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, ParseError, SupportError
from .kernels import Simulator, sparse_cdf
from .mdp import Mdp, TabularPolicy, _probs

DATASET_FORMAT = "epqlab-dataset"
DATASET_VERSION = 1
FIELDS = ("episode", "step", "s", "a", "r", "s_next", "terminal")


@dataclass(frozen=True)
class OfflineDataset:
    """Flat transition arrays, episode-major, plus lazily computed returns.

    Only this object (never the generating Mdp) is available to training code.
    """

    episode: np.ndarray
    step: np.ndarray
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    terminal: np.ndarray
    gamma: float
    n_states: int
    n_actions: int
    seed: int = -1
    returns: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.state)
        arrays = dict(episode=np.int64, step=np.int64, state=np.int64, action=np.int64,
                      reward=np.float64, next_state=np.int64, terminal=bool)
        for name, dtype in arrays.items():
            arr = np.array(getattr(self, name), dtype=dtype)
            if arr.shape != (n,):
                raise ConfigurationError(f"{name} must have length {n}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if n == 0:
            raise ConfigurationError("dataset is empty")
        if (self.state.min() < 0 or self.state.max() >= self.n_states
                or self.next_state.min() < 0 or self.next_state.max() >= self.n_states
                or self.action.min() < 0 or self.action.max() >= self.n_actions):
            raise ConfigurationError("state or action index out of range")
        same = self.episode[1:] == self.episode[:-1]
        if np.any(self.episode[1:] < self.episode[:-1]):
            raise ConfigurationError("episodes must be stored contiguously in order")
        if np.any(self.next_state[:-1][same] != self.state[1:][same]):
            raise ConfigurationError("next_state must equal the following state within an episode")
        if self.returns is not None:
            ret = np.array(self.returns, dtype=np.float64)
            ret.flags.writeable = False
            object.__setattr__(self, "returns", ret)

    def __len__(self):
        return len(self.state)

    @property
    def n_episodes(self) -> int:
        return int(np.unique(self.episode).size)

    def coverage(self) -> float:
        """Fraction of all (s, a) pairs that appear at least once."""
        seen = np.zeros((self.n_states, self.n_actions), dtype=bool)
        seen[self.state, self.action] = True
        return float(seen.mean())


@dataclass(frozen=True)
class BehaviorEstimate:
    """Empirical behavior policy beta_hat(a|s) = N(s,a) / N(s).

    ``probs`` rows of unvisited states are NaN.  ``row``/``log_row`` raise
    :class:`SupportError` for them unless a probability floor is set, in which
    case every row becomes (beta_hat + floor) / (1 + A*floor) and unvisited
    rows are uniform.
    """

    counts: np.ndarray
    floor: float | None = None

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def n_states(self):
        return self.counts.shape[0]

    @property
    def n_actions(self):
        return self.counts.shape[1]

    @property
    def state_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def visited(self) -> np.ndarray:
        return self.state_counts > 0

    @property
    def support_mask(self) -> np.ndarray:
        return self.counts > 0

    @property
    def probs(self) -> np.ndarray:
        n = self.state_counts.astype(np.float64)[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            probs = np.where(n > 0, self.counts / n, np.nan)
        if self.floor is not None:
            uniform = 1.0 / self.n_actions
            probs = np.where(n > 0, (probs + self.floor) / (1.0 + self.n_actions * self.floor), uniform)
        return probs

    def with_floor(self, floor: float) -> "BehaviorEstimate":
        if floor <= 0:
            raise ConfigurationError("floor must be positive")
        return replace(self, floor=float(floor))

    def row(self, state) -> np.ndarray:
        if self.floor is None and self.state_counts[state] == 0:
            raise SupportError(f"state {state} never appears in the dataset")
        return self.probs[state]

    def log_row(self, state) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.row(state))

    def effective_support(self) -> np.ndarray:
        """Actions with positive estimated probability (everything, once floored)."""
        if self.floor is not None:
            return np.ones_like(self.support_mask)
        return self.support_mask

    def restrict(self, policy) -> TabularPolicy:
        """Project a policy onto the data support at visited states."""
        mask = np.where(self.visited[:, None], self.effective_support(), True)
        return TabularPolicy(_probs(policy)).restricted(mask)


def generate_dataset(mdp: Mdp, behavior, n_episodes: int, horizon: int, seed: int) -> OfflineDataset:
    """Roll out ``behavior`` for ``n_episodes`` episodes of ``horizon`` steps.

    Benchmark MDPs are continuing, so episodes end by truncation and no
    transition is flagged terminal.
    """
    if n_episodes < 1:
        raise ConfigurationError("n_episodes must be >= 1")
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    probs = _probs(behavior)
    if probs.shape != (mdp.n_states, mdp.n_actions):
        raise ConfigurationError("behavior policy shape does not match the MDP")
    rng = np.random.default_rng(seed)
    init = sparse_cdf(mdp.initial_state_dist[None, :])
    u = rng.random(n_episodes)
    starts = init.idx[0, (init.cum[0][None, :] <= u[:, None]).sum(axis=1)]
    sim = Simulator(mdp.transition, mdp.reward, probs)
    first = sim.first_actions(starts, rng.random(n_episodes))
    s, a, r, sn = sim.trace(starts, first, horizon, rng)
    return OfflineDataset(
        episode=np.repeat(np.arange(n_episodes), horizon),
        step=np.tile(np.arange(horizon), n_episodes),
        state=s.ravel(), action=a.ravel(), reward=r.ravel(), next_state=sn.ravel(),
        terminal=np.zeros(n_episodes * horizon, dtype=bool),
        gamma=mdp.discount, n_states=mdp.n_states, n_actions=mdp.n_actions, seed=seed)


def compute_returns(dataset: OfflineDataset) -> OfflineDataset:
    """Per-transition truncated discounted return, G_t = r_t + gamma * G_{t+1}.

    G after the last recorded step of an episode (or after a terminal step) is 0.
    """
    if dataset.returns is not None:
        return dataset
    g = np.zeros(len(dataset))
    gamma = dataset.gamma
    ep, r, term = dataset.episode, dataset.reward, dataset.terminal
    nxt = 0.0
    for i in range(len(dataset) - 1, -1, -1):
        if i == len(dataset) - 1 or ep[i + 1] != ep[i] or term[i]:
            nxt = 0.0
        nxt = r[i] + gamma * nxt
        g[i] = nxt
    return replace(dataset, returns=g)


def estimate_behavior(dataset: OfflineDataset, n_states=None, n_actions=None) -> BehaviorEstimate:
    n_states = dataset.n_states if n_states is None else n_states
    n_actions = dataset.n_actions if n_actions is None else n_actions
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    flat = np.bincount(dataset.state * n_actions + dataset.action, minlength=n_states * n_actions)
    return BehaviorEstimate(flat.reshape(n_states, n_actions))


def empirical_mdp(dataset: OfflineDataset, state_coords=None) -> Mdp:
    """Count-based model: P_hat(s'|s,a) = N(s,a,s')/N(s,a), R_hat = mean observed reward.

    Pairs without data become zero-reward self-loops; they are never reached by
    a policy restricted to the data support.
    """
    S, A = dataset.n_states, dataset.n_actions
    rows = dataset.state * A + dataset.action
    counts = np.bincount(rows * S + dataset.next_state, minlength=S * A * S).reshape(S * A, S)
    n_sa = counts.sum(axis=1)
    r_sum = np.bincount(rows, weights=dataset.reward, minlength=S * A)
    transition = np.zeros((S * A, S))
    seen = n_sa > 0
    transition[seen] = counts[seen] / n_sa[seen, None]
    transition[~seen, np.arange(S * A)[~seen] // A] = 1.0
    reward = np.where(seen, r_sum / np.maximum(n_sa, 1), 0.0)
    return Mdp(transition.reshape(S, A, S), reward.reshape(S, A), dataset.gamma,
               state_coords=state_coords, name="empirical")


# ---------------------------------------------------------------------------
# file format

def save_dataset(dataset: OfflineDataset, path) -> None:
    """One header line, then one ``episode step s a r s_next terminal`` record per line."""
    head = (f"# {DATASET_FORMAT} {DATASET_VERSION} n_states={dataset.n_states} "
            f"n_actions={dataset.n_actions} gamma={format(dataset.gamma, '.17g')} "
            f"seed={dataset.seed} n_transitions={len(dataset)}")
    body = [f"{e} {t} {s} {a} {format(float(r), '.17g')} {sn} {int(d)}"
            for e, t, s, a, r, sn, d in zip(dataset.episode, dataset.step, dataset.state,
                                             dataset.action, dataset.reward,
                                             dataset.next_state, dataset.terminal)]
    Path(path).write_text("\n".join([head, "# " + " ".join(FIELDS), *body]) + "\n")


def load_dataset(path) -> OfflineDataset:
    """Parse a dataset file; any malformed line raises before anything is returned."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    head = lines[0].split()
    if len(head) < 3 or head[0] != "#" or head[1] != DATASET_FORMAT:
        raise FormatError(f"not an {DATASET_FORMAT} file")
    if head[2] != str(DATASET_VERSION):
        raise FormatError(f"unsupported {DATASET_FORMAT} version {head[2]}")
    try:
        meta = dict(item.split("=", 1) for item in head[3:])
        n_states, n_actions = int(meta["n_states"]), int(meta["n_actions"])
        gamma, seed = float(meta["gamma"]), int(meta["seed"])
        expected = int(meta["n_transitions"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}", 1) from exc
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != len(FIELDS):
            raise ParseError(f"expected {len(FIELDS)} fields, got {len(parts)}", lineno)
        try:
            e, t, s, a = (int(x) for x in parts[:4])
            r = float(parts[4])
            sn, d = int(parts[5]), int(parts[6])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
        if d not in (0, 1):
            raise ParseError("terminal flag must be 0 or 1", lineno)
        records.append((e, t, s, a, r, sn, d))
    if len(records) != expected:
        raise ParseError(f"header declares {expected} transitions, found {len(records)}",
                         len(lines))
    cols = list(zip(*records)) if records else [[]] * 7
    return OfflineDataset(
        episode=cols[0], step=cols[1], state=cols[2], action=cols[3], reward=cols[4],
        next_state=cols[5], terminal=np.array(cols[6], dtype=bool), gamma=gamma,
        n_states=n_states, n_actions=n_actions, seed=seed)
