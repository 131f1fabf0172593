import dataclasses

import numpy as np
import pytest

from cfisac.channel import ChannelStats, CommChannelStat, channel_statistics
from cfisac.moments import estimate_moments, sensing_diagonals
from cfisac.scenario import build_scenario
from conftest import random_hermitian_pd, small_doc


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def pure_los(stats: ChannelStats) -> ChannelStats:
    c = stats.comm
    comm = CommChannelStat(c.los_mean, np.zeros_like(c.nlos_cov), c.rician_factor, c.pathloss,
                           np.ones_like(c.is_los))
    return dataclasses.replace(stats, comm=comm)


def nonzero_los(stats: ChannelStats) -> ChannelStats:
    """Give every pair a deterministic LOS component of the right gain."""
    from cfisac.channel import array_response
    c = stats.comm
    N_ue, N_tx, M = c.los_mean.shape
    hbar = np.array([[np.sqrt(c.pathloss[i, k]) * array_response(M, 0.1 * (i + 1) + 0.3 * k, 0.0)
                      for k in range(N_tx)] for i in range(N_ue)])
    return dataclasses.replace(stats, comm=CommChannelStat(hbar, np.zeros_like(c.nlos_cov),
                                                          c.rician_factor, c.pathloss,
                                                          np.ones_like(c.is_los)))


def test_pure_los_noiseless_gain_is_channel_norm():
    doc = small_doc(N_ue=1)
    doc["radio"]["noise_power"] = 1e-22
    sc = build_scenario(doc)
    st = nonzero_los(channel_statistics(sc))
    m = estimate_moments(sc, 50, stats=st)
    norm = np.linalg.norm(st.comm.los_mean[0])
    assert m.b[0] == pytest.approx(norm, rel=1e-5)
    assert m.a[0, 1] < 1e-5 * norm
    # the sensing stream is orthogonal to an almost exact estimate
    assert m.a[0, 0] < 1e-5 * norm


def test_sensing_leakage_shrinks_with_pilot_power():
    leak = []
    for p in (1e-4, 1e-2, 1.0):
        doc = small_doc()
        doc["radio"]["pilot_power"] = p
        leak.append(estimate_moments(build_scenario(doc), 200).a[:, 0])
    assert np.all(leak[1] < leak[0])
    assert np.all(leak[2] < leak[1])


def test_standard_error_scales_with_sample_count(small_scenario):
    sc = small_scenario()
    m1 = estimate_moments(sc, 200)
    m4 = estimate_moments(sc, 800)
    for a, b in ((m1.b_se, m4.b_se), (m1.A_se, m4.A_se), (m1.F_se, m4.F_se)):
        ratio = np.median(np.asarray(a) / np.asarray(b))
        assert 1.7 < ratio < 2.3


def test_moments_are_reproducible(small_scenario):
    sc = small_scenario()
    a, b = estimate_moments(sc, 30), estimate_moments(sc, 30)
    assert np.array_equal(a.a, b.a) and np.array_equal(a.A_D, b.A_D)
    assert not np.array_equal(a.A_D, estimate_moments(small_scenario(drop=1), 30).A_D)


def test_moment_shapes_and_ranges(default_moments):
    m = default_moments
    assert m.b.shape == (8,) and m.a.shape == (8, 9) and m.F.shape == (16, 9)
    assert np.all(m.a >= 0) and np.all(m.b > 0)
    # every precoder has unit norm, so the per-AP power fractions sum to one
    assert np.allclose(np.sum(m.F ** 2, axis=0), 1)
    assert np.all(m.A_D > 0) and np.all(m.B_D > 0)


def test_sensing_removed(default_moments):
    m = default_moments.sensing_removed()
    assert np.all(m.a[:, 0] == 0) and np.all(m.A_D == 0) and np.all(m.B_D == 0)
    assert np.array_equal(m.a[:, 1:], default_moments.a[:, 1:])


def test_too_few_samples(small_scenario):
    with pytest.raises(ValueError):
        estimate_moments(small_scenario(), 1)


def test_sensing_diagonals_scalar():
    W = np.array([[[0.5 + 0.5j, 2.0]]])  # (N_tx=1, M=1, N_s=2)
    a = np.array([[1j]])
    beta = np.array([[3.0]])
    rx = np.array([[[[2.0]]]])
    tx = np.array([[[[0.25]]]])
    A, B = sensing_diagonals(W, a, beta, rx, tx)
    assert np.allclose(A, [3.0 * 0.5, 3.0 * 4.0])
    assert np.allclose(B, [2.0 * 0.25 * 0.5, 2.0 * 0.25 * 4.0])


def test_sensing_diagonals_zero_precoder():
    rng = np.random.default_rng(0)
    A, B = sensing_diagonals(np.zeros((3, 2, 4), complex), cplx(rng, 3, 2), np.ones((2, 3)),
                             np.ones((2, 3, 2, 2)), np.ones((2, 3, 2, 2)))
    assert np.all(A == 0) and np.all(B == 0)


def test_sensing_diagonals_brute_force():
    rng = np.random.default_rng(1)
    N_tx, N_rx, M, N_s = 3, 2, 2, 4
    W = cplx(rng, N_tx, M, N_s)
    a = cplx(rng, N_tx, M)
    beta = rng.uniform(0.1, 1, (N_rx, N_tx))
    rx = np.array([[random_hermitian_pd(rng, M) for _ in range(N_tx)] for _ in range(N_rx)])
    tx = np.array([[random_hermitian_pd(rng, M) for _ in range(N_tx)] for _ in range(N_rx)])
    A, B = sensing_diagonals(W, a, beta, rx, tx)
    for i in range(N_s):
        ea = sum(beta[r, k] * abs(a[k] @ W[k, :, i]) ** 2 for r in range(N_rx) for k in range(N_tx))
        eb = sum(np.trace(rx[r, k]).real * np.vdot(W[k, :, i], tx[r, k].T @ W[k, :, i]).real
                 for r in range(N_rx) for k in range(N_tx))
        assert A[i] == pytest.approx(ea, rel=1e-12)
        assert B[i] == pytest.approx(eb, rel=1e-12)
