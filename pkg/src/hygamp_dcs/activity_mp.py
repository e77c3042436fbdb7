"""Sum-product messages on the per-user Markov activity chain.

Every message is stored as the probability it assigns to ``lambda = 1``.
Arrays are N x T; users are processed together, frames sequentially.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

PROB_CLIP = 1e-12
ORACLE_MAX_T = 20


@dataclass
class MessageSet:
    p_bar: np.ndarray   # evidence from GAMP
    q_fwd: np.ndarray   # message from the previous frame
    q_bwd: np.ndarray   # message from the next frame
    p_fwd: np.ndarray   # prior handed back to GAMP
    kappa: np.ndarray   # posterior activity


def _clip(p):
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


def _combine(a, b):
    """Normalized product of two Bernoulli messages."""
    on = a * b
    return on / ((1.0 - a) * (1.0 - b) + on)


def forward_messages(p_bar: np.ndarray, params) -> np.ndarray:
    tr = params.transitions
    N, T = p_bar.shape
    q = np.empty((N, T))
    q[:, 0] = _clip(params.p_a)
    for t in range(1, T):
        off = (1.0 - p_bar[:, t - 1]) * (1.0 - q[:, t - 1])
        on = p_bar[:, t - 1] * q[:, t - 1]
        q[:, t] = (tr.p01 * off + tr.p11 * on) / (off + on)
    return _clip(q)


def backward_messages(p_bar: np.ndarray, params) -> np.ndarray:
    """Messages from frame t+1 into frame t; the last frame receives 1/2."""
    tr = params.transitions
    N, T = p_bar.shape
    q = np.empty((N, T))
    q[:, T - 1] = 0.5
    for t in range(T - 2, -1, -1):
        off = (1.0 - p_bar[:, t + 1]) * (1.0 - q[:, t + 1])
        on = p_bar[:, t + 1] * q[:, t + 1]
        q[:, t] = (tr.p10 * off + tr.p11 * on) / ((tr.p00 + tr.p10) * off + (tr.p11 + tr.p01) * on)
    return _clip(q)


def posterior_activity(q_fwd, q_bwd, p_bar) -> np.ndarray:
    q_fwd, q_bwd, p_bar = _clip(q_fwd), _clip(q_bwd), _clip(p_bar)
    on = q_fwd * q_bwd * p_bar
    return on / ((1.0 - q_fwd) * (1.0 - q_bwd) * (1.0 - p_bar) + on)


def mp_update(p_bar: np.ndarray, params, backward: bool = True) -> MessageSet:
    """Forward sweep, then backward sweep, then the priors for the next GAMP pass.

    With ``backward=False`` every backward message is pinned to 1/2, leaving a
    purely causal (filtering) update.
    """
    p_bar = _clip(np.asarray(p_bar, dtype=float))
    q_fwd = forward_messages(p_bar, params)
    if backward:
        q_bwd = backward_messages(p_bar, params)
    else:
        q_bwd = np.full_like(p_bar, 0.5)
    p_fwd = _clip(_combine(q_bwd, q_fwd))
    p_fwd[:, -1] = q_fwd[:, -1]
    kappa = posterior_activity(q_fwd, q_bwd, p_bar)
    return MessageSet(p_bar=p_bar, q_fwd=q_fwd, q_bwd=q_bwd, p_fwd=p_fwd, kappa=kappa)


def exact_chain_oracle(p_bar_row, params) -> np.ndarray:
    """Exact marginals Pr{lambda_t = 1} by enumerating all 2**T activity paths."""
    p_bar_row = np.asarray(p_bar_row, dtype=float)
    T = p_bar_row.size
    if T > ORACLE_MAX_T:
        raise ValueError(f"enumeration limited to T <= {ORACLE_MAX_T}, got {T}")
    P = params.transitions.row_stochastic()
    prior0 = np.array([1.0 - params.p_a, params.p_a])
    paths = np.array(list(itertools.product((0, 1), repeat=T)))
    w = prior0[paths[:, 0]]
    for t in range(1, T):
        w = w * P[paths[:, t - 1], paths[:, t]]
    lik = np.where(paths == 1, p_bar_row, 1.0 - p_bar_row).prod(axis=1)
    w = w * lik
    return (w[:, None] * paths).sum(axis=0) / w.sum()
