"""Joint activity and channel estimation for temporally-correlated massive access.

HyGAMP-DCS couples per-frame GAMP with exact message passing on each user's
Markov activity chain; EM-HyGAMP-DCS learns the statistics on the fly.
"""
from .activity_mp import MessageSet, exact_chain_oracle, mp_update
from .denoiser import activity_evidence, input_denoise, output_denoise
from .em import Hyperparams, init_hyperparams, run_em_hygamp_dcs
from .gamp import DivergenceError, GampState, gamp_iteration, init_state
from .harness import ExperimentConfig, detect_activity, run_trials, sweep, taer, tnmse
from .hygamp import (ALGORITHMS, EstimationResult, SolverOptions, run_forward_only,
                     run_gamp_baseline, run_hygamp_dcs)
from .model import (ParameterError, SystemParams, generate_pilots, make_instance,
                    received_snr_db, sample_ground_truth, synthesize_received)
from .se import expected_tau_x, psi, se_step, se_trajectory_mc, select_snr0

__all__ = [name for name in dir() if not name.startswith("_")]
