import math

import mpmath
import numpy as np
import pytest
import scipy.stats

from cfisac.channel import (ChannelError, ClutterStat, CommChannelStat, array_response, bistatic_gain,
                            channel_statistics, clutter_blocks, clutter_covariance,
                            free_space_gain, local_scattering_covariance, lmmse_error_trace,
                            lmmse_estimate, lmmse_filters, los_probability, psd_sqrt,
                            sample_clutter_channels, sample_comm_channels, sample_realization,
                            sensing_vector_h0, stack_clutter, umi_pathloss, umi_pathloss_db)
from cfisac.scenario import build_scenario
from conftest import random_hermitian_pd, small_doc


def comm_stat(los_mean, nlos_cov):
    los_mean = np.asarray(los_mean, complex)
    N_ue, N_tx, _ = los_mean.shape
    return CommChannelStat(los_mean, np.asarray(nlos_cov, complex), np.ones((N_ue, N_tx)),
                           np.ones((N_ue, N_tx)), np.ones((N_ue, N_tx), bool))


def sample_cov(x):
    """Second moment of zero-mean rows."""
    return x.T @ x.conj() / x.shape[0]


def test_array_response_broadside_and_endfire():
    assert np.allclose(array_response(4, 0.0, 0.0), 1)
    assert np.allclose(array_response(3, math.pi / 2, 0.0), [1, -1, 1])
    assert np.allclose(array_response(3, math.pi / 2, math.pi / 2), 1)
    with pytest.raises(ValueError):
        array_response(0, 0.0, 0.0)


def test_array_response_unit_modulus():
    a = array_response(8, 0.37, 0.2)
    assert np.allclose(np.abs(a), 1)
    assert np.vdot(a, a).real == pytest.approx(8)


def test_pathloss_is_monotone():
    d = np.linspace(10, 500, 200)
    for los in (True, False):
        pl = [umi_pathloss_db(x, 1.9e9, los) for x in d]
        assert np.all(np.diff(pl) > 0)


def test_los_pathloss_intercept():
    assert umi_pathloss_db(1.0, 1e9, True) == pytest.approx(28.0)
    assert umi_pathloss_db(10.0, 2e9, True) == pytest.approx(22 + 28 + 20 * math.log10(2))


def test_nlos_never_better_than_los():
    for d in np.linspace(10, 500, 50):
        assert umi_pathloss_db(d, 1.9e9, False) >= umi_pathloss_db(d, 1.9e9, True)


def test_pathloss_shadow_sign_and_domain():
    base = umi_pathloss(100.0, 1.9e9, True)
    assert umi_pathloss(100.0, 1.9e9, True, 3.0) == pytest.approx(base * 10 ** 0.3)
    with pytest.raises(ValueError):
        umi_pathloss_db(0.0, 1.9e9, True)


def test_los_probability_bounds():
    assert los_probability(1.0) == pytest.approx(1.0)
    assert los_probability(18.0) == pytest.approx(1.0)
    assert 0 < los_probability(300.0) < los_probability(50.0) < 1


def test_local_scattering_zero_spread_limit():
    a = array_response(4, 0.4, 0.1)
    R = local_scattering_covariance(4, 0.4, 0.1, 1e-9, 2.0)
    assert np.allclose(R, 2.0 * np.outer(a, a.conj()), atol=1e-8)


def test_local_scattering_single_antenna():
    assert local_scattering_covariance(1, 0.3, 0.0, 0.2, 3.5) == pytest.approx(np.array([[3.5]]))


def test_local_scattering_properties():
    R = local_scattering_covariance(6, -0.8, 0.05, math.radians(15), 1.7)
    assert np.allclose(R, R.conj().T)
    assert np.trace(R).real == pytest.approx(6 * 1.7)
    assert np.linalg.eigvalsh(R).min() > -1e-12
    with pytest.raises(ValueError):
        local_scattering_covariance(4, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        local_scattering_covariance(4, 0.0, 0.0, 0.1, -1.0)


def test_local_scattering_against_monte_carlo():
    rng = np.random.default_rng(11)
    M, az0, el, spread = 4, 0.5, 0.1, math.radians(15)
    az = az0 + spread * rng.standard_normal(100_000)
    A = np.exp(1j * math.pi * np.outer(np.sin(az) * math.cos(el), np.arange(M)))
    R_mc = A.T @ A.conj() / A.shape[0]
    R = local_scattering_covariance(M, az0, el, spread)
    assert np.linalg.norm(R - R_mc) / np.linalg.norm(R) < 0.02


def test_bistatic_gain_scaling():
    g = bistatic_gain(100.0, 80.0, 0.15, 1.0)
    assert bistatic_gain(50.0, 80.0, 0.15, 1.0) == pytest.approx(4 * g)
    assert bistatic_gain(100.0, 80.0, 0.15, 0.0) == 0.0
    with pytest.raises(ValueError):
        bistatic_gain(0.0, 1.0, 0.1, 1.0)


def test_bistatic_gain_high_precision():
    mpmath.mp.dps = 40
    lam = mpmath.mpf(299_792_458) / mpmath.mpf("1.9e9")
    ref = lam ** 2 / ((4 * mpmath.pi) ** 3 * mpmath.mpf(70) ** 2 * mpmath.mpf(90) ** 2)
    got = bistatic_gain(70.0, 90.0, 299_792_458 / 1.9e9, 1.0)
    assert got == pytest.approx(float(ref), rel=1e-13)


def test_free_space_gain():
    assert free_space_gain(1.0, 4 * math.pi) == pytest.approx(1.0)
    assert free_space_gain(20.0, 0.1) == pytest.approx(free_space_gain(10.0, 0.1) / 4)


def test_psd_sqrt_round_trip_and_rejection():
    rng = np.random.default_rng(2)
    R = random_hermitian_pd(rng, 5)
    S = psd_sqrt(R)
    assert np.allclose(S @ S, R)
    assert np.allclose(psd_sqrt(np.zeros((3, 3))), 0)
    with pytest.raises(ChannelError):
        psd_sqrt(-np.eye(2))


def test_sensing_vector_blocks(default_scenario, default_channel_stats):
    h0 = sensing_vector_h0(default_scenario)
    g = default_channel_stats.sensing
    M = default_scenario.M
    assert h0.shape == (default_scenario.N_tx * M,)
    blocks = h0.reshape(-1, M)
    # each block has norm sqrt(M beta_k)
    assert np.allclose(np.linalg.norm(blocks, axis=1) ** 2, M * g.beta_one_way)
    # transmitting along h0 adds coherently through a^T
    for k in range(blocks.shape[0]):
        assert abs(g.a_tx[k] @ blocks[k]) == pytest.approx(M * math.sqrt(g.beta_one_way[k]))


def test_sensing_vector_scalar_case():
    doc = small_doc(M=1, N_tx=1)
    doc["geometry"] = {"tx_ap_positions": [[100.0, 100.0]]}
    sc = build_scenario(doc)
    h0 = sensing_vector_h0(sc)
    g = channel_statistics(sc).sensing
    assert h0[0] == pytest.approx(math.sqrt(g.beta_one_way[0]))


def test_symmetric_receive_aps_see_equal_gains(default_channel_stats):
    beta = default_channel_stats.sensing.beta_rk
    # receive APs mirror each other about the target; tx grid is symmetric too
    assert np.allclose(np.sort(beta[0]), np.sort(beta[1]), rtol=1e-12)


def test_pure_los_sampling_has_uniform_phase():
    a = array_response(3, 0.4, 0.0)
    st = comm_stat(0.5 * a[None, None, :], np.zeros((1, 1, 3, 3)))
    h = np.array([sample_comm_channels(st, np.random.default_rng(s))[0] for s in range(2000)])
    assert np.allclose(np.abs(h), 0.5)
    phase = (np.angle(h[:, 0]) + np.pi) / (2 * np.pi)
    assert scipy.stats.kstest(phase, "uniform").pvalue > 1e-3


def test_sampled_covariance_matches_effective_covariance():
    rng = np.random.default_rng(4)
    M = 3
    R = random_hermitian_pd(rng, M, 0.5)
    hbar = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    st = comm_stat(hbar[None, None], R[None, None])
    h = np.vstack([sample_comm_channels(st, rng) for _ in range(40_000)])
    est = sample_cov(h)
    ref = st.effective_cov[0, 0]
    assert np.linalg.norm(est - ref) / np.linalg.norm(ref) < 0.03
    assert np.abs(h.mean(axis=0)).max() < 0.05 * np.abs(hbar).max()


def _clutter(rx, tx):
    return ClutterStat(np.asarray(rx, complex)[None, None], np.asarray(tx, complex)[None, None])


@pytest.mark.parametrize("case", ["white", "rank_one", "general"])
def test_kronecker_clutter_covariance(case):
    rng = np.random.default_rng(7)
    M = 2
    if case == "white":
        rx, tx = np.eye(M), 0.3 * np.eye(M)
    elif case == "rank_one":
        a = array_response(M, 0.3, 0.0)
        rx, tx = np.eye(M), np.outer(a, a.conj())
    else:
        rx, tx = random_hermitian_pd(rng, M), random_hermitian_pd(rng, M, 0.2)
    st = _clutter(rx, tx)
    x = np.array([stack_clutter(sample_clutter_channels(st, rng)) for _ in range(40_000)])
    ref = clutter_covariance(st)
    assert np.linalg.norm(sample_cov(x) - ref) / np.linalg.norm(ref) < 0.03


def test_clutter_single_antenna_is_diagonal(small_scenario):
    sc = small_scenario(M=1, N_tx=3, N_rx=2)
    C = clutter_covariance(channel_statistics(sc).clutter)
    assert np.allclose(C, np.diag(np.diag(C)))
    assert np.all(np.diag(C).real > 0)


def test_clutter_stacking_reproduces_block_products():
    rng = np.random.default_rng(8)
    N_rx, N_tx, M = 2, 3, 2
    H = rng.standard_normal((N_rx, N_tx, M, M)) + 1j * rng.standard_normal((N_rx, N_tx, M, M))
    x = rng.standard_normal((N_tx, M)) + 1j * rng.standard_normal((N_tx, M))
    direct = np.array([sum(H[r, k] @ x[k] for k in range(N_tx)) for r in range(N_rx)])
    op = np.kron(np.eye(N_rx), np.kron(x.reshape(1, -1), np.eye(M)))
    assert np.allclose(op @ stack_clutter(H), direct.reshape(-1))


def test_clutter_blocks_match_full_covariance(default_channel_stats):
    st = default_channel_stats.clutter
    blocks = clutter_blocks(st)
    C = clutter_covariance(st)
    n = blocks.shape[-1]
    for r in range(blocks.shape[0]):
        for k in range(blocks.shape[1]):
            s = (r * blocks.shape[1] + k) * n
            assert np.allclose(C[s:s + n, s:s + n], blocks[r, k])


def test_lmmse_noiseless_limit():
    rng = np.random.default_rng(9)
    st = comm_stat(np.zeros((1, 1, 3)), random_hermitian_pd(rng, 3)[None, None])
    h = sample_comm_channels(st, rng)
    hhat = lmmse_estimate(h, st, 1e-14, 10, 1.0, rng)
    assert np.allclose(hhat, h, atol=1e-10)


def test_lmmse_zero_covariance_gives_zero_estimate():
    st = comm_stat(np.zeros((1, 2, 2)), np.zeros((1, 2, 2, 2)))
    rng = np.random.default_rng(1)
    assert np.allclose(lmmse_estimate(np.zeros((1, 4)), st, 1.0, 10, 1.0, rng), 0)
    assert np.allclose(lmmse_filters(st, 1.0, 10, 1.0), 0)


def test_lmmse_error_matches_trace():
    rng = np.random.default_rng(10)
    M = 3
    st = comm_stat((rng.standard_normal(M) + 1j * rng.standard_normal(M))[None, None],
                   random_hermitian_pd(rng, M)[None, None])
    s2, L_p, p = 2.0, 4, 1.0
    F = lmmse_filters(st, s2, L_p, p)
    err = []
    for _ in range(30_000):
        h = sample_comm_channels(st, rng)
        err.append(np.sum(np.abs(h - lmmse_estimate(h, st, s2, L_p, p, rng, F)) ** 2))
    assert np.mean(err) == pytest.approx(lmmse_error_trace(st, s2, L_p, p)[0], rel=0.03)


def test_channel_statistics_are_deterministic(default_scenario, default_channel_stats):
    again = channel_statistics(default_scenario)
    assert np.array_equal(again.comm.los_mean, default_channel_stats.comm.los_mean)
    assert np.array_equal(again.clutter.tx_cov, default_channel_stats.clutter.tx_cov)


def test_pure_nlos_pairs_have_zero_mean(default_channel_stats):
    c = default_channel_stats.comm
    assert np.all(c.los_mean[~c.is_los] == 0)
    assert np.all(c.rician_factor[~c.is_los] == 0)
    tr = np.real(np.trace(c.effective_cov, axis1=-2, axis2=-1))
    assert np.allclose(tr, c.los_mean.shape[-1] * c.pathloss)


def test_realization_shapes(default_scenario, default_channel_stats):
    real = sample_realization(default_scenario, default_channel_stats, np.random.default_rng(0))
    assert real.comm_channels.shape == (8, 64)
    assert real.comm_estimates.shape == (8, 64)
    assert real.clutter.shape == (2, 16, 4, 4)
    assert real.rcs_draws.shape == (2, 16)
