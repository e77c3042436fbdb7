"""Scalar MMSE denoisers for the AWGN output and Bernoulli-Gaussian input channels.

All functions broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

PROB_CLIP = 1e-12


class DegenerateVarianceError(ValueError):
    pass


@dataclass
class OutputDenoiseResult:
    z_hat: np.ndarray
    tau_z: np.ndarray


@dataclass
class InputDenoiseResult:
    x_hat: np.ndarray
    tau_x: np.ndarray
    varpi: np.ndarray
    gamma: np.ndarray
    tau_gamma: np.ndarray


def output_denoise(p_hat, tau_p, y, sigma2_w) -> OutputDenoiseResult:
    """Posterior of ``z ~ CN(p_hat, tau_p)`` observed as ``y = z + CN(0, sigma2_w)``."""
    tau_p = np.asarray(tau_p, dtype=float)
    total = tau_p + sigma2_w
    if np.any(total <= 0):
        raise DegenerateVarianceError("tau_p and sigma2_w are both zero")
    z_hat = (y * tau_p + p_hat * sigma2_w) / total
    tau_z = tau_p * sigma2_w / total
    return OutputDenoiseResult(z_hat=z_hat, tau_z=tau_z)


def _log_evidence_ratio(r_hat, tau_r, beta):
    """log CN(r; 0, beta+tau_r) - log CN(r; 0, tau_r)."""
    abs2 = np.abs(r_hat) ** 2
    return np.log(tau_r / (beta + tau_r)) + abs2 * beta / (tau_r * (beta + tau_r))


def _logit(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(p) - np.log1p(-p)


def input_denoise(r_hat, tau_r, p_fwd, beta) -> InputDenoiseResult:
    """Posterior moments of ``x ~ (1-p) delta + p CN(0, beta)`` given ``r = x + CN(0, tau_r)``.

    The support probability is evaluated as a logistic of the log-odds, so
    ``p_fwd`` of exactly 0 or 1 gives exactly 0 or 1.
    """
    tau_r = np.asarray(tau_r, dtype=float)
    varpi = expit(_logit(p_fwd) + _log_evidence_ratio(r_hat, tau_r, beta))
    shrink = beta / (beta + tau_r)
    gamma = shrink * r_hat
    tau_gamma = shrink * tau_r
    x_hat = varpi * gamma
    tau_x = varpi * ((1.0 - varpi) * np.abs(gamma) ** 2 + tau_gamma)
    return InputDenoiseResult(x_hat=x_hat, tau_x=tau_x, varpi=varpi,
                              gamma=gamma, tau_gamma=tau_gamma)


def activity_evidence(r_hat, tau_r, beta) -> np.ndarray:
    """Extrinsic activity likelihood from the pseudo-observation under a flat prior."""
    p = expit(_log_evidence_ratio(r_hat, np.asarray(tau_r, dtype=float), beta))
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
