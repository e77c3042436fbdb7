import numpy as np
import pytest
from hypothesis import given, strategies as st

from hygamp_dcs.model import SystemParams, received_snr_db
from hygamp_dcs.se import (AllDivergedError, expected_tau_x, psi, se_fixed_point, se_step,
                           se_trajectory_mc, se_trajectory_scalar, select_snr0)

from oracles import bg_average_posterior_variance, psi_trapezoid


def reference_cell(snr_db=-10.0, L=200, T=4):
    return SystemParams.from_snr(N=1000, L=L, T=T, p_a=0.1, p_10=0.25, beta=1.0, snr_db=snr_db)


# psi

@pytest.mark.parametrize("b", [0.0, 0.3, 5.0, 200.0])
def test_psi_dense_signal_is_one(b):
    assert psi(b, 1.0) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("rho0", [0.01, 0.1, 0.5, 0.9])
def test_psi_at_zero_is_rho0(rho0):
    assert psi(0.0, rho0) == pytest.approx(rho0, abs=1e-10)


def test_psi_matches_dense_trapezoid():
    assert psi(10.0, 0.1) == pytest.approx(psi_trapezoid(10.0, 0.1), abs=1e-6)


@given(st.floats(0.0, 100.0), st.floats(0.01, 0.98), st.floats(0.001, 0.02))
def test_psi_nondecreasing_in_rho0(b, rho0, step):
    lo, hi = psi(b, rho0), psi(b, rho0 + step)
    assert 0.0 < lo <= hi + 1e-12 <= 1.0 + 1e-10


def test_psi_rejects_bad_arguments():
    with pytest.raises(ValueError):
        psi(-1.0, 0.5)
    with pytest.raises(ValueError):
        psi(1.0, 0.0)


# expected_tau_x

def test_expected_tau_x_dense_is_wiener():
    assert expected_tau_x(0.5, 1.0, 2.0) == pytest.approx(2.0 * 0.5 / 2.5, rel=1e-12)


def test_expected_tau_x_empty_signal_vanishes():
    assert expected_tau_x(0.5, 0.0, 1.0) == 0.0
    assert expected_tau_x(0.5, 1e-9, 1.0) < 1e-8


def test_expected_tau_x_matches_monte_carlo():
    rng = np.random.default_rng(11)
    mc = bg_average_posterior_variance(rng, 1_000_000, 0.1, 1.0, 0.5)
    assert expected_tau_x(0.5, 0.1, 1.0) == pytest.approx(mc, rel=5e-3)


# se_step

def test_se_step_noiseless_empty_signal_fixed_point_is_zero():
    p = SystemParams(N=100, L=50, T=1, p_a=0.1, p_10=0.5, beta=1.0, sigma2_w=0.0)
    assert se_fixed_point(1e-12, p) < 1e-9


def test_se_step_dense_fixed_point_closed_form():
    s2, beta = 0.01, 1.0
    p = SystemParams(N=100, L=100, T=1, p_a=0.5, p_10=0.5, beta=beta, sigma2_w=s2)
    expected = (s2 + np.sqrt(s2 ** 2 + 4 * s2 * beta)) / 2
    got = se_fixed_point(1.0, p, pilot_normalize="unit_column")
    assert got == pytest.approx(expected, rel=1e-9)


@given(st.floats(1e-6, 100.0), st.floats(0.0, 1.0), st.floats(1e-4, 10.0))
def test_se_step_not_below_noise_floor(tau, rho0, s2):
    p = SystemParams(N=300, L=100, T=1, p_a=0.2, p_10=0.5, beta=1.0, sigma2_w=s2)
    assert se_step(tau, rho0, p, "unit_column") >= s2
    assert se_step(tau, rho0, p, "unit_entry") >= s2 / p.L


def test_se_fixed_point_independent_of_start():
    p = reference_cell()
    base = se_fixed_point(p.p_a, p)
    start = se_step(1.0, p.p_a, p)
    for scale in (0.3, 1.0, 3.0):
        assert se_fixed_point(p.p_a, p, tau_r0=scale * start) == pytest.approx(base, rel=1e-8)


# trajectories

def test_single_frame_trajectory_is_scalar_recursion():
    p = reference_cell(T=1)
    traj = se_trajectory_mc(p, iters=30)
    tau = p.sigma2_w / p.L + p.N / p.L * p.p_a * p.beta
    for i in range(30):
        assert traj.tau_r[i, 0] == pytest.approx(tau, rel=1e-12)
        tau = se_step(tau, p.p_a, p)


def test_memoryless_chain_matches_scalar_recursion():
    # p_10 = 1 - p_a makes the chain i.i.d. so frames decouple
    p = SystemParams.from_snr(N=1000, L=200, T=2, p_a=0.1, p_10=0.9, beta=1.0, snr_db=-10.0)
    mc = se_trajectory_mc(p, samples=100_000, iters=40, seed=3)
    scalar = se_trajectory_scalar(p, iters=40)
    assert abs(mc.tnmse_db[-1] - scalar.tnmse_db[-1]) < 0.1


def test_trajectory_shape_and_noise_floor():
    p = reference_cell()
    traj = se_trajectory_mc(p, samples=20_000, iters=25, seed=1)
    assert traj.tau_r.shape == (25, 4)
    assert traj.tnmse_db.shape == (25,)
    assert np.all(traj.tau_r >= p.sigma2_w / p.L)
    assert traj.metadata["samples"] == 20_000 and traj.metadata["seed"] == 1


def test_trajectory_is_deterministic():
    p = reference_cell()
    a = se_trajectory_mc(p, samples=10_000, iters=10, seed=5)
    b = se_trajectory_mc(p, samples=10_000, iters=10, seed=5)
    np.testing.assert_array_equal(a.tnmse_db, b.tnmse_db)


@pytest.mark.parametrize("snr_db", [-10.0, 0.0])
def test_em_trajectory_nonincreasing_near_true_snr(snr_db):
    p = reference_cell(snr_db)
    traj = se_trajectory_mc(p, iters=40, snr0_db=received_snr_db(p))
    assert np.all(np.diff(traj.tnmse_db[2:]) <= 1e-9)


def test_known_trajectory_beats_bad_em_start():
    p = reference_cell()
    known = se_trajectory_mc(p, samples=20_000, iters=40)
    bad = se_trajectory_mc(p, samples=20_000, iters=40, snr0_db=received_snr_db(p) + 20)
    assert bad.tnmse_db[-1] > known.tnmse_db[-1] + 0.5


# select_snr0

def test_select_snr0_near_received_snr():
    p = reference_cell()
    rx = received_snr_db(p)
    sel = select_snr0(p, np.arange(-20.0, 31.0, 5.0), samples=20_000, iters=50)
    assert abs(sel.snr0_db - rx) <= 5.0
    assert not sel.degraded
    assert len(sel.candidates) == 11


def test_select_snr0_flags_only_high_candidates():
    p = reference_cell()
    try:
        sel = select_snr0(p, [received_snr_db(p) + 20], samples=20_000, iters=50)
    except AllDivergedError:
        return
    assert sel.degraded


def test_select_snr0_singleton_returns_value():
    p = reference_cell()
    sel = select_snr0(p, [7.5], samples=10_000, iters=40)
    assert sel.snr0_db == 7.5
    (c,) = sel.candidates
    assert c.snr0_db == 7.5 and c.trajectory.tnmse_db.shape == (40,)
    assert np.isfinite(sel.reference_tnmse_db)


def test_select_snr0_rejects_empty_grid():
    with pytest.raises(ValueError):
        select_snr0(reference_cell(), [])
