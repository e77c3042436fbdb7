"""EM learning of ``{p_a, beta, p_10, sigma2_w}`` wrapped around HyGAMP-DCS."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import optimize, stats

from .activity_mp import MessageSet, mp_update
from .denoiser import activity_evidence
from .gamp import GampState, gamp_iteration, init_state
from .hygamp import DampingGuard, EstimationResult, SolverOptions, relative_change
from .model import SystemParams

PROB_MIN = 1e-6
BETA_MIN = 1e-6
C_MAX = 10.0


class DegenerateUpdateWarning(RuntimeWarning):
    pass


@dataclass
class Hyperparams:
    p_a: float
    beta: float
    p_10: float
    sigma2_w: float
    history: list[dict] = field(default_factory=list)
    beta_clamped: bool = False

    def __post_init__(self):
        if not self.history:
            self.history.append(self.as_dict())

    def as_dict(self) -> dict:
        return {"p_a": self.p_a, "beta": self.beta, "p_10": self.p_10, "sigma2_w": self.sigma2_w}

    def system(self, N: int, L: int, T: int) -> SystemParams:
        return SystemParams(N=N, L=L, T=T, p_a=self.p_a, p_10=self.p_10,
                            beta=self.beta, sigma2_w=self.sigma2_w)

    @property
    def p_11(self) -> float:
        return 1.0 - self.p_10

    @property
    def p_01(self) -> float:
        return self.p_a * self.p_10 / (1.0 - self.p_a)


def _clip_prob(p: float) -> float:
    return float(np.clip(p, PROB_MIN, 1.0 - PROB_MIN))


def _clip_p10(p_10: float, p_a: float) -> float:
    # keep p_01 = p_a p_10 / (1 - p_a) <= 1
    upper = min(1.0 - PROB_MIN, (1.0 - p_a) / p_a)
    return float(np.clip(p_10, PROB_MIN, upper))


def _normalized(a, b):
    on = a * b
    return on / ((1.0 - a) * (1.0 - b) + on)


def pairwise_moments(messages: MessageSet, p_10: float, p_a: float,
                     normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``E[lambda_{t-1}]`` and ``E[lambda_{t-1} lambda_t]`` for t = 2..T, both N x (T-1).

    The pairwise belief is ``p(l_t | l_{t-1}) * phi(l_{t-1}) * varphi(l_t)``
    where ``phi`` folds the forward message with the evidence at t-1 and
    ``varphi`` folds the backward message with the evidence at t. With
    ``normalize=False`` the product ``p_11 * phi * varphi`` is returned
    without its partition function.
    """
    p_01 = p_a * p_10 / (1.0 - p_a)
    p_00, p_11 = 1.0 - p_01, 1.0 - p_10
    phi = _normalized(messages.q_fwd[:, :-1], messages.p_bar[:, :-1])
    varphi = _normalized(messages.q_bwd[:, 1:], messages.p_bar[:, 1:])
    joint11 = p_11 * phi * varphi
    if not normalize:
        return messages.kappa[:, :-1], joint11
    joint10 = p_10 * phi * (1.0 - varphi)
    z = ((1.0 - phi) * ((1.0 - varphi) * p_00 + varphi * p_01) + joint10 + joint11)
    return (joint10 + joint11) / z, joint11 / z


def em_update(state: GampState, messages: MessageSet, Y: np.ndarray, current: Hyperparams,
              normalize_pairwise: bool = True) -> Hyperparams:
    """Closed-form M-step from one completed HyGAMP-DCS iteration."""
    L, T = Y.shape
    sigma2_w = float(np.sum(np.abs(Y - state.z_hat) ** 2 + state.tau_z) / (L * T))

    w = np.sum(state.varpi)
    if w > 0:
        beta = float(np.sum(state.varpi * (np.abs(state.gamma) ** 2 + state.tau_gamma)) / w)
    else:
        warnings.warn("all support probabilities vanished; holding beta", DegenerateUpdateWarning)
        beta = current.beta

    p_a = _clip_prob(np.mean(messages.kappa[:, 0]))

    p_10 = current.p_10
    if T >= 2:
        e_prev, e_pair = pairwise_moments(messages, current.p_10, current.p_a, normalize_pairwise)
        den = np.sum(e_prev)
        if den > 0:
            p_10 = float((den - np.sum(e_pair)) / den)
    p_10 = _clip_p10(p_10, p_a)

    new = Hyperparams(p_a=p_a, beta=beta, p_10=p_10, sigma2_w=sigma2_w,
                      history=list(current.history))
    new.history.append(new.as_dict())
    return new


def _sparsity_objective(c, delta):
    """Phase-transition sparsity ratio of the soft-threshold with threshold ``c``."""
    tail = (1.0 + c ** 2) * stats.norm.cdf(-c) - c * stats.norm.pdf(c)
    return (1.0 - (2.0 / delta) * tail) / (1.0 + c ** 2 - 2.0 * tail)


def phase_transition_sparsity(delta: float, tol: float = 1e-8) -> tuple[float, float]:
    """Maximize the sparsity ratio over ``c`` in (0, C_MAX]; returns ``(rho, c_star)``.

    A 100-point grid brackets the maximum, golden-section search refines it.
    """
    grid = np.linspace(C_MAX / 100, C_MAX, 100)
    vals = _sparsity_objective(grid, delta)
    k = int(np.argmax(vals))
    lo = grid[k - 1] if k > 0 else 1e-9
    hi = grid[k + 1] if k < grid.size - 1 else C_MAX
    res = optimize.minimize_scalar(lambda c: -_sparsity_objective(c, delta),
                                   bracket=(lo, grid[k], hi), method="golden", tol=tol)
    c_star = float(np.clip(res.x, lo, hi))
    return float(_sparsity_objective(c_star, delta)), c_star


BetaNoiseTerm = Literal["variance", "std"]


def init_hyperparams(Y: np.ndarray, A: np.ndarray, snr0_db: float,
                     beta_noise_term: BetaNoiseTerm = "std") -> Hyperparams:
    """Initial hyperparameters from the received energy and an assumed SNR.

    ``snr0_db`` is the assumed signal-to-noise ratio of ``Y`` itself. The
    initial ``beta`` subtracts ``L T sigma_w`` from ``||Y||^2`` by default;
    ``beta_noise_term="variance"`` subtracts ``L T sigma_w^2`` instead, which is
    the dimensionally consistent reading.
    """
    if Y.size == 0 or A.size == 0:
        raise ValueError("empty observation or pilot matrix")
    if not np.isfinite(snr0_db):
        raise ValueError("SNR0 must be finite")
    L, T = Y.shape
    N = A.shape[1]
    energy_y = float(np.sum(np.abs(Y) ** 2))
    energy_a = float(np.sum(np.abs(A) ** 2))
    snr0 = 10.0 ** (snr0_db / 10.0)
    sigma2_w = energy_y / ((snr0 + 1.0) * L * T)
    rho, _ = phase_transition_sparsity(L / N)
    p_a = _clip_prob((L / N) * rho)
    noise = sigma2_w if beta_noise_term == "variance" else np.sqrt(sigma2_w)
    beta = (energy_y - L * T * noise) / (energy_a * p_a * T)
    clamped = False
    if not beta > BETA_MIN:
        warnings.warn(f"initial beta {beta:.3g} clamped to {BETA_MIN}", DegenerateUpdateWarning)
        beta, clamped = BETA_MIN, True
    return Hyperparams(p_a=p_a, beta=float(beta), p_10=_clip_p10(p_a, p_a), sigma2_w=sigma2_w,
                       beta_clamped=clamped)


def run_em_hygamp_dcs(Y: np.ndarray, A: np.ndarray, snr0_db: float | None = None,
                      opts: SolverOptions | None = None, init: Hyperparams | None = None,
                      normalize_pairwise: bool = True,
                      beta_noise_term: BetaNoiseTerm = "std") -> tuple[EstimationResult, Hyperparams]:
    """HyGAMP-DCS with the statistics re-estimated after every iteration.

    Either ``snr0_db`` or an explicit starting point ``init`` must be given.
    """
    opts = opts or SolverOptions()
    L, N = A.shape
    T = Y.shape[1]
    if init is None:
        if snr0_db is None:
            raise ValueError("need snr0_db or init")
        init = init_hyperparams(Y, A, snr0_db, beta_noise_term)
    hp = init
    A2 = np.abs(A) ** 2
    AH = A.conj().T

    params = hp.system(N, L, T)
    p_fwd = np.full((N, T), hp.p_a)
    state = init_state(params, p_fwd)
    history: list[float] = []
    converged = False
    msgs = None
    guard = DampingGuard(opts)
    damping = opts.damping
    for _ in range(opts.i_max):
        x_old = state.x_hat
        state = gamp_iteration(state, A, Y, p_fwd, params, damping, A2=A2, AH=AH)
        p_bar = activity_evidence(state.r_hat, state.tau_r, params.beta)
        msgs = mp_update(p_bar, params, backward=True)
        p_fwd = msgs.p_fwd
        hp = em_update(state, msgs, Y, hp, normalize_pairwise)
        params = hp.system(N, L, T)
        history.append(relative_change(state.x_hat, x_old))
        if history[-1] <= opts.epsilon:
            converged = True
            break
        damping = guard.observe(state.tau_x)
    result = EstimationResult(
        x_hat=state.x_hat, activity_posterior=msgs.kappa, iterations=len(history),
        converged=converged, residual_history=history, state=state, messages=msgs,
        hyperparams=hp,
    )
    return result, hp
