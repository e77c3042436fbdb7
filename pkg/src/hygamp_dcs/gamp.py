"""GAMP linear-estimation engine for the per-frame model ``y_t = A x_t + w_t``.

All T frames share the pilot matrix and are processed side by side as the
columns of N x T / L x T arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .denoiser import input_denoise, output_denoise

VAR_FLOOR = 1e-15


class DivergenceError(FloatingPointError):
    """GAMP produced non-finite iterates."""

    def __init__(self, message: str, iteration: int = 0):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class GampState:
    x_hat: np.ndarray      # N x T
    tau_x: np.ndarray      # N x T
    s_hat: np.ndarray      # L x T, held from the previous iteration
    iteration: int = 1
    p_hat: np.ndarray | None = None
    tau_p: np.ndarray | None = None
    tau_s: np.ndarray | None = None
    r_hat: np.ndarray | None = None
    tau_r: np.ndarray | None = None
    # Denoiser outputs kept for EM.
    z_hat: np.ndarray | None = None
    tau_z: np.ndarray | None = None
    varpi: np.ndarray | None = None
    gamma: np.ndarray | None = None
    tau_gamma: np.ndarray | None = None


def init_state(params, p_init) -> GampState:
    """Initial iterate: zero mean, prior variance ``p_init * beta``, zero residual score."""
    p_init = np.broadcast_to(np.asarray(p_init, dtype=float), (params.N, params.T))
    return GampState(
        x_hat=np.zeros((params.N, params.T), dtype=complex),
        tau_x=p_init * params.beta,
        s_hat=np.zeros((params.L, params.T), dtype=complex),
        iteration=1,
    )


def _blend(new, old, damping):
    if damping == 1.0 or old is None:
        return new
    return damping * new + (1.0 - damping) * old


def gamp_iteration(state: GampState, A: np.ndarray, Y: np.ndarray, p_fwd,
                   params, damping: float = 1.0, A2: np.ndarray | None = None,
                   AH: np.ndarray | None = None) -> GampState:
    """One GAMP sweep with Bernoulli-Gaussian prior probabilities ``p_fwd``.

    ``params`` only needs ``beta`` and ``sigma2_w``. ``A2 = |A|**2`` and
    ``AH = A.conj().T`` may be passed to avoid recomputation.
    """
    if A.shape[1] != state.x_hat.shape[0] or A.shape[0] != Y.shape[0] \
            or Y.shape[1] != state.x_hat.shape[1]:
        raise ValueError(f"shape mismatch: A {A.shape}, Y {Y.shape}, x {state.x_hat.shape}")
    if A2 is None:
        A2 = np.abs(A) ** 2
    if AH is None:
        AH = A.conj().T
    beta, sigma2_w = params.beta, params.sigma2_w

    tau_x = np.maximum(state.tau_x, VAR_FLOOR)
    tau_p = A2 @ tau_x
    p_hat = A @ state.x_hat - tau_p * state.s_hat
    out = output_denoise(p_hat, tau_p, Y, sigma2_w)
    # (1 - tau_z/tau_p)/tau_p, written without the cancellation
    tau_s = np.maximum(1.0 / (tau_p + sigma2_w), VAR_FLOOR)
    s_hat = _blend((out.z_hat - p_hat) / tau_p, state.s_hat, damping)
    tau_r = 1.0 / (A2.T @ tau_s)
    r_hat = state.x_hat + tau_r * (AH @ s_hat)
    inp = input_denoise(r_hat, tau_r, p_fwd, beta)
    x_hat = _blend(inp.x_hat, state.x_hat, damping)
    tau_x_new = np.maximum(_blend(inp.tau_x, state.tau_x, damping), VAR_FLOOR)

    if not (np.all(np.isfinite(x_hat)) and np.all(np.isfinite(tau_x_new))
            and np.all(np.isfinite(s_hat))):
        raise DivergenceError(f"non-finite GAMP iterate at iteration {state.iteration}",
                              iteration=state.iteration)

    return replace(
        state, x_hat=x_hat, tau_x=tau_x_new, s_hat=s_hat,
        iteration=state.iteration + 1, p_hat=p_hat, tau_p=tau_p, tau_s=tau_s,
        r_hat=r_hat, tau_r=tau_r, z_hat=out.z_hat, tau_z=out.tau_z,
        varpi=inp.varpi, gamma=inp.gamma, tau_gamma=inp.tau_gamma,
    )
