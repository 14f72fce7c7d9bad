"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Sampling consumes caller-supplied uniforms so that both backends walk the
same random stream; for the simulation kernels the results are bit-identical.
"""

import numpy as np


def advance_returns(p_idx, p_cum, reward, pi_idx, pi_cum, n_actions,
                    states, actions, returns, discounts, uniforms, gamma):
    """Advance a population of rollouts by ``uniforms.shape[0]`` steps, in place.

    ``reward`` is the flattened (S*A,) reward table; ``uniforms`` has shape
    (T, n, 2): column 0 picks the next state, column 1 the next action.
    """
    s = states.copy()
    a = actions.copy()
    for t in range(uniforms.shape[0]):
        u = uniforms[t]
        rows = s * n_actions + a
        returns += discounts * reward[rows]
        k = (p_cum[rows] <= u[:, 0, None]).sum(axis=1)
        s = p_idx[rows, k]
        k = (pi_cum[s] <= u[:, 1, None]).sum(axis=1)
        a = pi_idx[s, k]
        discounts *= gamma
    states[:] = s
    actions[:] = a


def trace_steps(p_idx, p_cum, reward, pi_idx, pi_cum, n_actions,
                states, actions, uniforms, out_s, out_a, out_r, out_next):
    """Like :func:`advance_returns` but records every (s, a, r, s') into (n, T) arrays."""
    s = states.copy()
    a = actions.copy()
    for t in range(uniforms.shape[0]):
        u = uniforms[t]
        rows = s * n_actions + a
        out_s[:, t] = s
        out_a[:, t] = a
        out_r[:, t] = reward[rows]
        k = (p_cum[rows] <= u[:, 0, None]).sum(axis=1)
        s = p_idx[rows, k]
        out_next[:, t] = s
        k = (pi_cum[s] <= u[:, 1, None]).sum(axis=1)
        a = pi_idx[s, k]
    states[:] = s
    actions[:] = a


def batch_loss_grad(q, states, actions, targets, bellman_w, penalty_coef,
                    soft_value, soft_grad, grad):
    """Loss of one batch and its gradient w.r.t. every Q entry (written into ``grad``).

    loss = mean_i[ 0.5*c_i*(Q(s_i,a_i) - y_i)^2 + p_i*(V_soft(s_i) - Q(s_i,a_i)) ]
    where ``soft_grad[s]`` is dV_soft(s)/dQ(s, .).
    """
    n_states, n_actions = q.shape
    batch = states.shape[0]
    q_sa = q[states, actions]
    resid = q_sa - targets
    loss = float(np.sum(0.5 * bellman_w * resid * resid
                        + penalty_coef * (soft_value[states] - q_sa))) / batch
    flat = np.bincount(states * n_actions + actions,
                       weights=(bellman_w * resid - penalty_coef) / batch,
                       minlength=n_states * n_actions)
    per_state = np.bincount(states, weights=penalty_coef / batch, minlength=n_states)
    grad[:, :] = flat.reshape(n_states, n_actions) + per_state[:, None] * soft_grad
    return loss
