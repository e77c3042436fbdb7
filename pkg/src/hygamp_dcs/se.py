"""State evolution for HyGAMP-DCS / EM-HyGAMP-DCS and SNR0 selection for EM.

The decoupled model is ``r = x0 + CN(0, tau_r)`` with a Bernoulli-Gaussian
``x0``. With pilot columns of squared norm ``E`` the per-frame recursion is

    tau_r = sigma2_w / E + (N / L) * E[tau_x]

so ``E = 1`` (unit-norm columns) gives the textbook form. Activity coupling
across frames has no closed form and is tracked by Monte Carlo over a
population of simulated users.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .activity_mp import mp_update
from .denoiser import activity_evidence, input_denoise
from .em import (BETA_MIN, BetaNoiseTerm, Hyperparams, _clip_p10, _clip_prob,
                 pairwise_moments, phase_transition_sparsity)
from .model import (PilotNormalization, SystemParams, complex_normal, pilot_energy,
                    sample_activity)

TAIL = 1e-12
PSI_ATOL = 1e-10


class AllDivergedError(RuntimeError):
    pass


def _psi_upper(tail: float = TAIL) -> float:
    # smallest S with (S + 1) exp(-S) < tail
    S = -np.log(tail)
    while (S + 1.0) * np.exp(-S) >= tail:
        S += 1.0
    return S


def psi(b: float, rho0: float) -> float:
    r"""``\int_0^inf s e^{-s} / (1 + (1/rho0 - 1)(1 + b) e^{-b s}) ds``."""
    if b < 0 or not 0.0 < rho0 <= 1.0:
        raise ValueError("need b >= 0 and rho0 in (0, 1]")
    if rho0 == 1.0:
        return 1.0
    log_k = np.log(1.0 / rho0 - 1.0) + np.log1p(b)

    def f(s):
        return s * np.exp(-s) / (1.0 + np.exp(log_k - b * s))

    S = _psi_upper()
    points = []
    if 0.0 < log_k < b * S:
        points.append(log_k / b)
    val, _ = integrate.quad(f, 0.0, S, epsabs=PSI_ATOL, epsrel=1e-12, limit=500,
                            points=points or None)
    return float(val)


def expected_tau_x(tau_r: float, rho0: float, beta: float) -> float:
    """Average posterior variance of the Bernoulli-Gaussian denoiser at noise level ``tau_r``."""
    if rho0 <= 0.0:
        return 0.0
    lin = rho0 * beta * tau_r / (beta + tau_r)
    if rho0 >= 1.0:
        return lin
    return lin + rho0 * beta ** 2 * (1.0 - psi(beta / tau_r, rho0)) / (beta + tau_r)


def _noise_floor(params: SystemParams, pilot_normalize: PilotNormalization) -> float:
    return params.sigma2_w / pilot_energy(pilot_normalize, params.L)


def se_step(tau_r_prev: float, rho0: float, params: SystemParams,
            pilot_normalize: PilotNormalization = "unit_entry") -> float:
    return (_noise_floor(params, pilot_normalize)
            + params.N / params.L * expected_tau_x(tau_r_prev, rho0, params.beta))


def se_fixed_point(rho0: float, params: SystemParams, tau_r0: float | None = None,
                   pilot_normalize: PilotNormalization = "unit_entry",
                   tol: float = 1e-12, max_iter: int = 10_000) -> float:
    tau = tau_r0 if tau_r0 is not None else (
        _noise_floor(params, pilot_normalize) + params.N / params.L * rho0 * params.beta)
    for _ in range(max_iter):
        new = se_step(tau, rho0, params, pilot_normalize)
        if abs(new - tau) <= tol * max(tau, 1e-300):
            return new
        tau = new
    return tau


@dataclass
class SeTrajectory:
    tau_r: np.ndarray            # iters x T, variance assumed by the algorithm
    mse: np.ndarray              # iters, predicted MSE (realized over the simulated population)
    tnmse_db: np.ndarray         # iters
    mse_belief: np.ndarray       # iters, the algorithm's own posterior variance
    tnmse_belief_db: np.ndarray  # iters
    taer: np.ndarray             # iters, posterior-threshold activity error ratio
    hyperparams: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def final_tnmse_db(self) -> float:
        return float(self.tnmse_db[-1])


def _db(x):
    return 10.0 * np.log10(np.maximum(x, 1e-300))


def se_trajectory_scalar(params: SystemParams, iters: int = 50, rho0: float | None = None,
                         pilot_normalize: PilotNormalization = "unit_entry") -> SeTrajectory:
    """Frame-decoupled recursion with a fixed prior ``rho0`` (defaults to ``p_a``)."""
    rho0 = params.p_a if rho0 is None else rho0
    ratio = params.N / params.L
    tau_r = np.empty(iters)
    mse = np.empty(iters)
    tau_x = rho0 * params.beta
    for i in range(iters):
        tau_r[i] = _noise_floor(params, pilot_normalize) + ratio * tau_x
        tau_x = expected_tau_x(tau_r[i], rho0, params.beta)
        mse[i] = tau_x
    tnmse = _db(mse / (params.p_a * params.beta))
    return SeTrajectory(
        tau_r=np.repeat(tau_r[:, None], params.T, axis=1), mse=mse, tnmse_db=tnmse,
        mse_belief=mse.copy(), tnmse_belief_db=tnmse.copy(), taer=np.full(iters, np.nan),
        metadata={"params": params, "samples": 0, "seed": None, "mode": "scalar"},
    )


def _em_init_from_moments(params: SystemParams, energy_per_entry: float, snr0_db: float,
                          col_energy: float, beta_noise_term: BetaNoiseTerm = "std") -> Hyperparams:
    """The EM starting point computed from expected rather than sampled energies."""
    snr0 = 10.0 ** (snr0_db / 10.0)
    sigma2 = energy_per_entry / (snr0 + 1.0)
    rho, _ = phase_transition_sparsity(params.L / params.N)
    p_a = _clip_prob(params.L / params.N * rho)
    noise = sigma2 if beta_noise_term == "variance" else np.sqrt(sigma2)
    beta = max((energy_per_entry - noise) * params.L / (params.N * col_energy * p_a), BETA_MIN)
    return Hyperparams(p_a=p_a, beta=beta, p_10=_clip_p10(p_a, p_a), sigma2_w=sigma2)


def se_trajectory_mc(params: SystemParams, samples: int = 100_000, iters: int = 60,
                     seed: int = 0, snr0_db: float | None = None,
                     init: Hyperparams | None = None, backward: bool = True,
                     pilot_normalize: PilotNormalization = "unit_entry",
                     beta_noise_term: BetaNoiseTerm = "std") -> SeTrajectory:
    """Monte Carlo state evolution over a population of ``samples`` simulated users.

    Each iteration draws the decoupled observations for every user and frame,
    denoises them with the current activity priors, runs the activity
    message passing on the simulated evidence and updates the per-frame
    noise levels. Passing ``snr0_db`` (or ``init``) switches on EM learning:
    the algorithm's assumed statistics are re-estimated each iteration while
    the population keeps the true ones.
    """
    em = snr0_db is not None or init is not None
    if params.T == 1 and not em:
        traj = se_trajectory_scalar(params, iters, pilot_normalize=pilot_normalize)
        traj.metadata.update(samples=samples, seed=seed)
        return traj

    rng = np.random.default_rng(seed)
    E = pilot_energy(pilot_normalize, params.L)
    ratio = params.N / params.L
    T = params.T
    lam = sample_activity(params.replace(N=samples), rng)
    x0 = lam * complex_normal(rng, lam.shape, params.beta)
    # common noise draws across iterations keep the curve free of sampling jitter
    g = complex_normal(rng, lam.shape)
    sig_power = params.p_a * params.beta

    if em:
        energy = ratio * E * np.mean(np.abs(x0) ** 2) + params.sigma2_w
        hp = init if init is not None else _em_init_from_moments(params, energy, snr0_db, E,
                                                                 beta_noise_term)
    else:
        hp = Hyperparams(p_a=params.p_a, beta=params.beta, p_10=params.p_10,
                         sigma2_w=params.sigma2_w)
    assumed = hp.system(samples, params.L, T)

    p_fwd = np.full(lam.shape, hp.p_a)
    tau_x_bel = np.full(T, hp.p_a * hp.beta)
    mse_true = np.mean(np.abs(x0) ** 2, axis=0)

    out_tau_r = np.empty((iters, T))
    out_mse = np.empty(iters)
    out_true = np.empty(iters)
    out_taer = np.empty(iters)
    for i in range(iters):
        tau_p = ratio * E * tau_x_bel
        tau_r = (tau_p + hp.sigma2_w) / E
        if em:
            v = (ratio * E * mse_true + params.sigma2_w) / E
        else:
            v = tau_r
        r = x0 + g * np.sqrt(v)
        den = input_denoise(r, tau_r, p_fwd, hp.beta)
        tau_x_bel = den.tau_x.mean(axis=0)
        mse_true = np.mean(np.abs(den.x_hat - x0) ** 2, axis=0)
        p_bar = activity_evidence(r, tau_r, hp.beta)
        msgs = mp_update(p_bar, assumed, backward=backward)
        p_fwd = msgs.p_fwd

        out_tau_r[i] = tau_r
        out_mse[i] = tau_x_bel.mean()
        out_true[i] = mse_true.mean()
        out_taer[i] = np.mean((msgs.kappa > 0.5) != lam)

        if em:
            shrink = hp.sigma2_w / (tau_p + hp.sigma2_w)
            sigma2 = float(np.mean(E * v * shrink ** 2 + tau_p * shrink))
            w = np.sum(den.varpi)
            beta = float(np.sum(den.varpi * (np.abs(den.gamma) ** 2 + den.tau_gamma)) / w) \
                if w > 0 else hp.beta
            p_a = _clip_prob(np.mean(msgs.kappa[:, 0]))
            p_10 = hp.p_10
            if T >= 2:
                e_prev, e_pair = pairwise_moments(msgs, hp.p_10, hp.p_a)
                den_sum = np.sum(e_prev)
                if den_sum > 0:
                    p_10 = float((den_sum - np.sum(e_pair)) / den_sum)
            new = Hyperparams(p_a=p_a, beta=beta, p_10=_clip_p10(p_10, p_a), sigma2_w=sigma2,
                              history=list(hp.history))
            new.history.append(new.as_dict())
            hp = new
            assumed = hp.system(samples, params.L, T)

    return SeTrajectory(
        tau_r=out_tau_r, mse=out_true, tnmse_db=_db(out_true / sig_power),
        mse_belief=out_mse, tnmse_belief_db=_db(out_mse / sig_power), taer=out_taer,
        hyperparams=hp.history if em else [],
        metadata={"params": params, "samples": samples, "seed": seed,
                  "mode": "em" if em else "known", "snr0_db": snr0_db,
                  "pilot_normalize": pilot_normalize},
    )


@dataclass
class Snr0Candidate:
    snr0_db: float
    converged: bool
    converged_at: int | None
    max_jump_db: float
    final_tnmse_db: float
    trajectory: SeTrajectory

    @property
    def smooth(self) -> bool:
        return self.max_jump_db <= FLUCTUATION_DB


@dataclass
class Snr0Selection:
    snr0_db: float
    degraded: bool
    candidates: list[Snr0Candidate]
    reference_tnmse_db: float = float("nan")   # known-statistics trajectory, final value


FLUCTUATION_DB = 0.5
FLUCTUATION_AFTER = 5
CONVERGENCE_WINDOW = 5
CONVERGENCE_TOL_DB = 0.05


def _convergence_point(tnmse_db: np.ndarray) -> int | None:
    """First iteration after which the curve stays within the tolerance band."""
    d = np.abs(np.diff(tnmse_db))
    n = d.size
    for k in range(n - CONVERGENCE_WINDOW + 1):
        if np.all(d[k:] <= CONVERGENCE_TOL_DB):
            return k + 1
    return None


def score_trajectory(snr0_db: float, traj: SeTrajectory) -> Snr0Candidate:
    curve = traj.tnmse_db
    finite = bool(np.all(np.isfinite(curve)))
    at = _convergence_point(curve) if finite else None
    jumps = np.diff(curve[FLUCTUATION_AFTER - 1:]) if finite else np.array([np.inf])
    max_jump = float(max(jumps.max(initial=0.0), 0.0))
    final = float(curve[-1]) if finite else np.inf
    return Snr0Candidate(snr0_db=snr0_db, converged=at is not None, converged_at=at,
                         max_jump_db=max_jump, final_tnmse_db=final, trajectory=traj)


def select_snr0(params_known: SystemParams, grid, samples: int = 20_000, iters: int = 60,
                seed: int = 0, pilot_normalize: PilotNormalization = "unit_entry",
                beta_noise_term: BetaNoiseTerm = "std") -> Snr0Selection:
    """Pick the EM initialization SNR whose simulated EM trajectory behaves best.

    Candidates are ranked by: converged within the iteration budget, no
    upward jump above 0.5 dB after iteration 5, lowest final TNMSE. Finals
    within the convergence tolerance of the best count as ties and the
    earliest convergence wins. ``params_known`` describes the statistics the
    simulation draws from; the EM inside the simulation does not see them.

    The selection is flagged ``degraded`` when the winner is not converged or
    not smooth, or when it ends more than 0.5 dB above the trajectory run with
    the true statistics (EM stuck at a poor stationary point).
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty SNR0 grid")
    cands = []
    for g in grid:
        traj = se_trajectory_mc(params_known, samples=samples, iters=iters, seed=seed,
                                snr0_db=float(g), pilot_normalize=pilot_normalize,
                                beta_noise_term=beta_noise_term)
        cands.append(score_trajectory(float(g), traj))
    if not any(c.converged for c in cands):
        raise AllDivergedError(f"no SNR0 in {grid} gives a converging state evolution")
    tier = min((not c.converged, not c.smooth) for c in cands)
    pool = [c for c in cands if (not c.converged, not c.smooth) == tier]
    floor = min(c.final_tnmse_db for c in pool)
    pool = [c for c in pool if c.final_tnmse_db <= floor + CONVERGENCE_TOL_DB]
    best = min(pool, key=lambda c: c.converged_at if c.converged_at is not None else iters)
    reference = se_trajectory_mc(params_known, samples=samples, iters=iters, seed=seed,
                                 pilot_normalize=pilot_normalize).final_tnmse_db
    degraded = (not (best.converged and best.smooth)
                or best.final_tnmse_db > reference + FLUCTUATION_DB)
    return Snr0Selection(snr0_db=best.snr0_db, degraded=degraded, candidates=cands,
                         reference_tnmse_db=reference)
