import numpy as np
import pytest
from hypothesis import given, strategies as st

from hygamp_dcs.model import (DimensionError, ParameterError, SystemParams, derive_transitions,
                              generate_pilots, make_instance, received_snr_db, rng_for,
                              complex_normal, sample_activity, sample_ground_truth,
                              synthesize_received)


@pytest.mark.parametrize("p_a,p_10,expected", [
    (0.2, 0.25, (0.9375, 0.0625, 0.25, 0.75)),
    (0.5, 0.5, (0.5, 0.5, 0.5, 0.5)),
    (0.1, 1.0, (8 / 9, 1 / 9, 1.0, 0.0)),
])
def test_transition_examples(p_a, p_10, expected):
    tr = derive_transitions(p_a, p_10)
    np.testing.assert_allclose((tr.p00, tr.p01, tr.p10, tr.p11), expected, rtol=0, atol=1e-15)


@given(st.floats(0.001, 0.999), st.floats(0.0, 1.0))
def test_chain_is_stationary_and_stochastic(p_a, p_10):
    if p_a * p_10 > 1 - p_a:
        with pytest.raises(ParameterError):
            derive_transitions(p_a, p_10)
        return
    tr = derive_transitions(p_a, p_10)
    assert (1 - p_a) * tr.p01 + p_a * tr.p11 == pytest.approx(p_a, abs=1e-15)
    np.testing.assert_allclose(tr.matrix.sum(axis=0), 1.0, atol=1e-15)
    assert np.all(tr.matrix >= 0)


def test_infeasible_transition_rejected():
    with pytest.raises(ParameterError, match="p_01"):
        derive_transitions(0.8, 0.5)


@pytest.mark.parametrize("bad", [dict(N=0), dict(L=2.5), dict(beta=0.0), dict(sigma2_w=-1.0),
                                 dict(p_a=1.0), dict(p_10=1.5)])
def test_system_params_validation(bad):
    base = dict(N=10, L=5, T=2, p_a=0.2, p_10=0.25)
    with pytest.raises(ParameterError):
        SystemParams(**{**base, **bad})


def test_from_snr_and_received_snr():
    p = SystemParams.from_snr(1000, 300, 4, 0.2, 0.25, snr_db=-10.0, beta=2.0)
    assert p.sigma2_w == pytest.approx(20.0)
    assert p.snr_db == pytest.approx(-10.0)
    # N p_a beta / sigma2 = 1000 * 0.2 * 2 / 20 = 20
    assert received_snr_db(p, "unit_entry") == pytest.approx(10 * np.log10(20.0))
    assert received_snr_db(p, "unit_column") == pytest.approx(10 * np.log10(20.0 / 300))


def test_all_inactive_truth():
    p = SystemParams(N=50, L=10, T=3, p_a=0.0, p_10=0.5)
    gt = sample_ground_truth(p, seed=3)
    assert not gt.activity.any()
    assert not gt.effective.any()


def test_absorbing_active_state():
    p = SystemParams(N=200, L=10, T=6, p_a=0.3, p_10=0.0)
    lam = sample_activity(p, np.random.default_rng(1), initial=1)
    assert lam.all()


def test_activity_frequencies_match_chain():
    p = SystemParams(N=100_000, L=10, T=4, p_a=0.2, p_10=0.25)
    lam = sample_ground_truth(p, seed=11).activity.astype(bool)
    band = 3 * np.sqrt(0.2 * 0.8 / p.N)
    assert np.all(np.abs(lam.mean(axis=0) - 0.2) < band)
    prev = lam[:, :-1]
    n_prev = prev.sum()
    off_after_on = (prev & ~lam[:, 1:]).sum() / n_prev
    assert abs(off_after_on - 0.25) < 3 * np.sqrt(0.25 * 0.75 / n_prev)


def test_channel_power():
    p = SystemParams(N=50_000, L=10, T=2, p_a=0.2, p_10=0.25, beta=3.0)
    gt = sample_ground_truth(p, seed=5)
    assert np.mean(np.abs(gt.channels) ** 2) == pytest.approx(3.0, rel=0.02)


def test_unit_column_pilots():
    p = SystemParams(N=1024, L=256, T=1, p_a=0.1, p_10=0.5)
    A = generate_pilots(p, seed=9, normalize="unit_column")
    np.testing.assert_allclose(np.linalg.norm(A, axis=0), 1.0, atol=1e-12)
    raw = complex_normal(rng_for(9, "pilots"), (256, 1024), var=1 / 256)
    assert np.mean(np.abs(raw) ** 2) == pytest.approx(1 / 256, rel=0.05)
    np.testing.assert_allclose(A, raw / np.linalg.norm(raw, axis=0), rtol=1e-12)


def test_unit_entry_pilots_are_rescaled_columns():
    p = SystemParams(N=300, L=64, T=1, p_a=0.1, p_10=0.5)
    A = generate_pilots(p, seed=9)
    np.testing.assert_allclose(np.linalg.norm(A, axis=0), 8.0, atol=1e-12)
    np.testing.assert_allclose(A / 8.0, generate_pilots(p, seed=9, normalize="unit_column"),
                               atol=1e-15)
    with pytest.raises(ParameterError):
        generate_pilots(p, seed=9, normalize="bogus")


def test_determinism():
    p = SystemParams(N=40, L=12, T=3, p_a=0.2, p_10=0.25)
    a, b = make_instance(p, 77), make_instance(p, 77)
    for x, y in [(a.A, b.A), (a.Y, b.Y), (a.truth.effective, b.truth.effective)]:
        assert np.array_equal(x, y)
    assert not np.array_equal(a.Y, make_instance(p, 78).Y)


def test_streams_are_independent_of_each_other():
    # changing sigma2_w must not perturb pilots or truth
    p = SystemParams(N=40, L=12, T=3, p_a=0.2, p_10=0.25)
    a, b = make_instance(p, 5), make_instance(p.replace(sigma2_w=3.0), 5)
    assert np.array_equal(a.A, b.A) and np.array_equal(a.truth.effective, b.truth.effective)


def test_received_signal_noiseless_and_zero(rng):
    A = complex_normal(rng, (8, 20))
    X = complex_normal(rng, (20, 3))
    assert np.array_equal(synthesize_received(A, np.zeros((20, 3)), 0.0, 1), np.zeros((8, 3)))
    assert np.array_equal(synthesize_received(A, X, 0.0, 1), A @ X)
    with pytest.raises(DimensionError):
        synthesize_received(A, X[:5], 0.0, 1)


def test_received_noise_moment(rng):
    A = complex_normal(rng, (100, 30))
    X = complex_normal(rng, (30, 4))
    res = [synthesize_received(A, X, 0.5, s) - A @ X for s in range(20)]
    assert np.mean(np.abs(np.stack(res)) ** 2) == pytest.approx(0.5, rel=0.05)
