"""Backend selection for the hot kernels plus the chunked drivers that call them.

The compiled extension ``epqlab._ckernels`` is used when it imports; otherwise
(or when ``EPQLAB_PURE_PYTHON=1``) the numpy twins in ``epqlab._fallback`` are
used.  Both backends read the same uniforms, drawn here from a
``numpy.random.Generator`` in fixed-size chunks, so simulation results do not
depend on the backend.
"""

import os
import types

import numpy as np

from . import _fallback

# uniforms are drawn CHUNK steps at a time; the stream order is (step, rollout, 2)
CHUNK = 64


def _load_compiled():
    if os.environ.get("EPQLAB_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "python"
_active = _compiled if _compiled is not None else _fallback


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


def get_backend(name=None):
    """Return the kernel namespace for ``name`` ("python"/"cython"), default the active one."""
    if name is None:
        return _active
    if name == "python":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def sparse_cdf(probs):
    """Compress rows of a probability matrix into padded (indices, cumulative) arrays.

    Only nonzero entries are kept.  The last real cumulative value of each row
    is pinned to exactly 1.0 and padding is 1.0, so "count of entries <= u"
    for u in [0, 1) always lands on a real, positive-probability index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    nz = probs > 0.0
    counts = nz.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("probability row with no mass")
    width = int(counts.max())
    rows = probs.shape[0]
    idx = np.empty((rows, width), dtype=np.int64)
    cum = np.ones((rows, width), dtype=np.float64)
    for r in range(rows):
        cols = np.flatnonzero(nz[r])
        c = np.cumsum(probs[r, cols])
        c[-1] = 1.0
        idx[r, :cols.size] = cols
        idx[r, cols.size:] = cols[-1]
        cum[r, :cols.size] = c
    return types.SimpleNamespace(idx=idx, cum=cum)


class Simulator:
    """Pre-compiled sampling tables for one (transition, reward, policy) triple."""

    def __init__(self, transition, reward, policy_probs, backend=None):
        n_states, n_actions, _ = transition.shape
        self.n_states = n_states
        self.n_actions = n_actions
        self.p = sparse_cdf(transition.reshape(n_states * n_actions, n_states))
        self.pi = sparse_cdf(policy_probs)
        self.reward = np.ascontiguousarray(reward, dtype=np.float64).reshape(-1)
        self.kernels = get_backend(backend)

    def first_actions(self, states, uniforms):
        k = (self.pi.cum[states] <= uniforms[:, None]).sum(axis=1)
        return self.pi.idx[states, k]

    def returns(self, states, actions, horizon, gamma, rng):
        """Truncated discounted returns of ``horizon`` steps from each (state, action)."""
        s = np.array(states, dtype=np.int64)
        a = np.array(actions, dtype=np.int64)
        n = s.shape[0]
        g = np.zeros(n)
        disc = np.ones(n)
        done = 0
        while done < horizon:
            steps = min(CHUNK, horizon - done)
            u = rng.random((steps, n, 2))
            self.kernels.advance_returns(self.p.idx, self.p.cum, self.reward,
                                         self.pi.idx, self.pi.cum, self.n_actions,
                                         s, a, g, disc, u, float(gamma))
            done += steps
        return g

    def trace(self, states, actions, horizon, rng):
        """Record ``horizon`` steps per rollout; returns (s, a, r, s') arrays of shape (n, horizon)."""
        s = np.array(states, dtype=np.int64)
        a = np.array(actions, dtype=np.int64)
        n = s.shape[0]
        out_s = np.empty((n, horizon), dtype=np.int64)
        out_a = np.empty((n, horizon), dtype=np.int64)
        out_r = np.empty((n, horizon), dtype=np.float64)
        out_n = np.empty((n, horizon), dtype=np.int64)
        done = 0
        while done < horizon:
            steps = min(CHUNK, horizon - done)
            u = rng.random((steps, n, 2))
            sl = slice(done, done + steps)
            # kernels need C-contiguous outputs; write into scratch then copy
            ts = np.empty((n, steps), dtype=np.int64)
            ta = np.empty((n, steps), dtype=np.int64)
            tr = np.empty((n, steps), dtype=np.float64)
            tn = np.empty((n, steps), dtype=np.int64)
            self.kernels.trace_steps(self.p.idx, self.p.cum, self.reward,
                                     self.pi.idx, self.pi.cum, self.n_actions,
                                     s, a, u, ts, ta, tr, tn)
            out_s[:, sl], out_a[:, sl], out_r[:, sl], out_n[:, sl] = ts, ta, tr, tn
            done += steps
        return out_s, out_a, out_r, out_n


def batch_loss_grad(q, states, actions, targets, bellman_w, penalty_coef,
                    soft_value, soft_grad, backend=None):
    """Batch loss and dense gradient table; see ``_fallback.batch_loss_grad``."""
    grad = np.empty_like(q)
    loss = get_backend(backend).batch_loss_grad(
        np.ascontiguousarray(q), np.ascontiguousarray(states, dtype=np.int64),
        np.ascontiguousarray(actions, dtype=np.int64),
        np.ascontiguousarray(targets, dtype=np.float64),
        np.ascontiguousarray(bellman_w, dtype=np.float64),
        np.ascontiguousarray(penalty_coef, dtype=np.float64),
        np.ascontiguousarray(soft_value, dtype=np.float64),
        np.ascontiguousarray(soft_grad, dtype=np.float64), grad)
    return loss, grad
