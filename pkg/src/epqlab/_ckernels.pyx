# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.  Signatures mirror ``epqlab._fallback``."""

import numpy as np

ctypedef long long idx_t


cdef inline idx_t _pick(const double[:, ::1] cum, idx_t row, double u) noexcept nogil:
    # number of cumulative entries <= u; padding entries are 1.0 and u < 1
    cdef idx_t k = 0
    cdef idx_t width = cum.shape[1]
    while k < width and cum[row, k] <= u:
        k += 1
    return k


def advance_returns(const idx_t[:, ::1] p_idx, const double[:, ::1] p_cum,
                    const double[::1] reward,
                    const idx_t[:, ::1] pi_idx, const double[:, ::1] pi_cum,
                    idx_t n_actions,
                    idx_t[::1] states, idx_t[::1] actions,
                    double[::1] returns, double[::1] discounts,
                    const double[:, :, ::1] uniforms, double gamma):
    cdef idx_t n = states.shape[0]
    cdef idx_t steps = uniforms.shape[0]
    cdef idx_t i, t, s, a, row, k
    with nogil:
        for i in range(n):
            s = states[i]
            a = actions[i]
            for t in range(steps):
                row = s * n_actions + a
                returns[i] += discounts[i] * reward[row]
                k = _pick(p_cum, row, uniforms[t, i, 0])
                s = p_idx[row, k]
                k = _pick(pi_cum, s, uniforms[t, i, 1])
                a = pi_idx[s, k]
                discounts[i] *= gamma
            states[i] = s
            actions[i] = a


def trace_steps(const idx_t[:, ::1] p_idx, const double[:, ::1] p_cum,
                const double[::1] reward,
                const idx_t[:, ::1] pi_idx, const double[:, ::1] pi_cum,
                idx_t n_actions,
                idx_t[::1] states, idx_t[::1] actions,
                const double[:, :, ::1] uniforms,
                idx_t[:, ::1] out_s, idx_t[:, ::1] out_a,
                double[:, ::1] out_r, idx_t[:, ::1] out_next):
    cdef idx_t n = states.shape[0]
    cdef idx_t steps = uniforms.shape[0]
    cdef idx_t i, t, s, a, row, k
    with nogil:
        for i in range(n):
            s = states[i]
            a = actions[i]
            for t in range(steps):
                row = s * n_actions + a
                out_s[i, t] = s
                out_a[i, t] = a
                out_r[i, t] = reward[row]
                k = _pick(p_cum, row, uniforms[t, i, 0])
                s = p_idx[row, k]
                out_next[i, t] = s
                k = _pick(pi_cum, s, uniforms[t, i, 1])
                a = pi_idx[s, k]
            states[i] = s
            actions[i] = a


def batch_loss_grad(const double[:, ::1] q, const idx_t[::1] states,
                    const idx_t[::1] actions, const double[::1] targets,
                    const double[::1] bellman_w, const double[::1] penalty_coef,
                    const double[::1] soft_value, const double[:, ::1] soft_grad,
                    double[:, ::1] grad):
    cdef idx_t n_states = q.shape[0]
    cdef idx_t n_actions = q.shape[1]
    cdef idx_t batch = states.shape[0]
    cdef idx_t i, s, a
    cdef double resid, q_sa, loss = 0.0
    cdef double inv_b = 1.0 / batch
    per_state_arr = np.zeros(n_states, dtype=np.float64)
    cdef double[::1] per_state = per_state_arr
    with nogil:
        for s in range(n_states):
            for a in range(n_actions):
                grad[s, a] = 0.0
        for i in range(batch):
            s = states[i]
            a = actions[i]
            q_sa = q[s, a]
            resid = q_sa - targets[i]
            loss += 0.5 * bellman_w[i] * resid * resid + penalty_coef[i] * (soft_value[s] - q_sa)
            grad[s, a] += (bellman_w[i] * resid - penalty_coef[i]) * inv_b
            per_state[s] += penalty_coef[i] * inv_b
        for s in range(n_states):
            if per_state[s] != 0.0:
                for a in range(n_actions):
                    grad[s, a] += per_state[s] * soft_grad[s, a]
    return loss * inv_b
