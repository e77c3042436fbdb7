"""System statistics and synthetic data for temporally-correlated massive access.

Activity of each user follows a stationary two-state Markov chain, channels are
block Rayleigh with common large-scale power ``beta``, and the base station
observes ``Y = A X + W`` over ``T`` frames of ``L`` pilot symbols.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

SeedLike = Union[int, np.random.Generator, None]

# Stream indices spawned from a master seed.
_STREAMS = {"activity": 0, "channels": 1, "pilots": 2, "noise": 3}


class ParameterError(ValueError):
    """Raised for parameter combinations outside the model's domain."""


class DimensionError(ValueError):
    pass


def rng_for(seed: SeedLike, stream: str) -> np.random.Generator:
    """Independent generator for ``stream`` derived from a 64-bit master seed.

    A ``Generator`` passed in is returned unchanged so callers can thread
    their own state through.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STREAMS[stream],))
    return np.random.default_rng(ss)


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with ``E|z|^2 = var``."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class Transitions:
    p00: float
    p01: float
    p10: float
    p11: float

    @property
    def matrix(self) -> np.ndarray:
        """Column-stochastic matrix ``[[p00, p10], [p01, p11]]``; entry (j, i) is Pr{j | i}."""
        return np.array([[self.p00, self.p10], [self.p01, self.p11]])

    def row_stochastic(self) -> np.ndarray:
        """Row ``i`` holds Pr{next state | current state i}."""
        return self.matrix.T


def derive_transitions(p_a: float, p_10: float) -> Transitions:
    if not 0.0 < p_a < 1.0:
        raise ParameterError(f"p_a must lie in (0, 1), got {p_a}")
    if not 0.0 <= p_10 <= 1.0:
        raise ParameterError(f"p_10 must lie in [0, 1], got {p_10}")
    p_01 = p_a * p_10 / (1.0 - p_a)
    if p_01 > 1.0:
        raise ParameterError(
            f"p_a={p_a}, p_10={p_10} imply p_01={p_01:.6g} > 1 (need p_a*p_10 <= 1-p_a)"
        )
    return Transitions(p00=1.0 - p_01, p01=p_01, p10=p_10, p11=1.0 - p_10)


@dataclass(frozen=True)
class SystemParams:
    """Ground-truth statistics of one simulated system.

    ``p_a`` may be exactly 0 to generate the all-inactive corner case; every
    estimator requires ``0 < p_a < 1``.
    """

    N: int
    L: int
    T: int
    p_a: float
    p_10: float
    beta: float = 1.0
    sigma2_w: float = 0.1

    def __post_init__(self):
        for name in ("N", "L", "T"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if not self.sigma2_w >= 0:
            raise ParameterError(f"sigma2_w must be non-negative, got {self.sigma2_w}")
        if self.p_a == 0.0:
            if not 0.0 <= self.p_10 <= 1.0:
                raise ParameterError(f"p_10 must lie in [0, 1], got {self.p_10}")
        else:
            derive_transitions(self.p_a, self.p_10)

    @classmethod
    def from_snr(cls, N: int, L: int, T: int, p_a: float, p_10: float,
                 snr_db: float, beta: float = 1.0) -> "SystemParams":
        """Parameters with ``sigma2_w = beta / 10**(snr_db/10)``."""
        return cls(N=N, L=L, T=T, p_a=p_a, p_10=p_10, beta=beta,
                   sigma2_w=beta / 10.0 ** (snr_db / 10.0))

    @property
    def transitions(self) -> Transitions:
        if self.p_a == 0.0:
            return Transitions(p00=1.0, p01=0.0, p10=self.p_10, p11=1.0 - self.p_10)
        return derive_transitions(self.p_a, self.p_10)

    @property
    def p_01(self) -> float:
        return self.transitions.p01

    @property
    def p_00(self) -> float:
        return self.transitions.p00

    @property
    def p_11(self) -> float:
        return self.transitions.p11

    @property
    def snr_db(self) -> float:
        if self.sigma2_w == 0:
            return np.inf
        return 10.0 * np.log10(self.beta / self.sigma2_w)

    def replace(self, **changes) -> "SystemParams":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class GroundTruth:
    activity: np.ndarray   # N x T, {0, 1}
    channels: np.ndarray   # N x T complex
    effective: np.ndarray  # N x T complex, activity * channels


def sample_activity(params: SystemParams, rng: np.random.Generator,
                    initial: np.ndarray | None = None) -> np.ndarray:
    """Markov activity paths, first frame drawn from the stationary law unless given."""
    N, T = params.N, params.T
    tr = params.transitions
    lam = np.zeros((N, T), dtype=np.int8)
    u = rng.random((N, T))
    if initial is None:
        lam[:, 0] = u[:, 0] < params.p_a
    else:
        lam[:, 0] = np.broadcast_to(np.asarray(initial, dtype=np.int8), (N,))
    for t in range(1, T):
        prev = lam[:, t - 1] == 1
        p_on = np.where(prev, tr.p11, tr.p01)
        lam[:, t] = u[:, t] < p_on
    return lam


def sample_ground_truth(params: SystemParams, seed: SeedLike) -> GroundTruth:
    lam = sample_activity(params, rng_for(seed, "activity"))
    g = complex_normal(rng_for(seed, "channels"), (params.N, params.T))
    h = np.sqrt(params.beta) * g
    return GroundTruth(activity=lam, channels=h, effective=lam * h)


PilotNormalization = Literal["unit_entry", "unit_column"]


def generate_pilots(params: SystemParams, seed: SeedLike,
                    normalize: PilotNormalization = "unit_entry") -> np.ndarray:
    """L x N pilot matrix drawn i.i.d. CN(0, 1/L), then power-normalized per column.

    ``"unit_column"`` rescales each column to unit Euclidean norm. ``"unit_entry"``
    rescales each column to norm ``sqrt(L)`` so that every pilot symbol carries
    unit power on average; ``beta / sigma2_w`` is then the per-symbol SNR.
    """
    rng = rng_for(seed, "pilots")
    A = complex_normal(rng, (params.L, params.N), var=1.0 / params.L)
    A /= np.linalg.norm(A, axis=0, keepdims=True)
    if normalize == "unit_entry":
        A *= np.sqrt(params.L)
    elif normalize != "unit_column":
        raise ParameterError(f"unknown pilot normalization {normalize!r}")
    return A


def pilot_energy(normalize: PilotNormalization, L: int) -> float:
    """Squared column norm produced by ``generate_pilots``."""
    return float(L) if normalize == "unit_entry" else 1.0


def synthesize_received(A: np.ndarray, X: np.ndarray, sigma2_w: float,
                        seed: SeedLike) -> np.ndarray:
    if A.ndim != 2 or X.ndim != 2 or A.shape[1] != X.shape[0]:
        raise DimensionError(f"cannot form A @ X with A {A.shape} and X {X.shape}")
    if sigma2_w < 0:
        raise ParameterError("noise variance must be non-negative")
    Z = A @ X
    if sigma2_w == 0:
        return Z
    W = complex_normal(rng_for(seed, "noise"), Z.shape, var=sigma2_w)
    return Z + W


@dataclass(frozen=True)
class Instance:
    """One synthetic trial: pilots, truth and observation."""

    params: SystemParams
    A: np.ndarray
    truth: GroundTruth
    Y: np.ndarray


def make_instance(params: SystemParams, seed: int,
                  pilot_normalize: PilotNormalization = "unit_entry") -> Instance:
    truth = sample_ground_truth(params, seed)
    A = generate_pilots(params, seed, normalize=pilot_normalize)
    Y = synthesize_received(A, truth.effective, params.sigma2_w, seed)
    return Instance(params=params, A=A, truth=truth, Y=Y)


def received_snr_db(params: SystemParams,
                    pilot_normalize: PilotNormalization = "unit_entry") -> float:
    """Average per-entry signal-to-noise ratio of ``Y``: ``(N/L) E p_a beta / sigma2_w``."""
    signal = params.N / params.L * pilot_energy(pilot_normalize, params.L) * params.p_a * params.beta
    if params.sigma2_w == 0:
        return np.inf
    return float(10.0 * np.log10(signal / params.sigma2_w))
