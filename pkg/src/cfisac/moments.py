"""Monte Carlo estimates of the deterministic statistics used by the optimizer.

All statistics are averaged over the same set of channel realizations, each with
its own LMMSE estimates and precoders, so the effective gains ``b``, the
interference gains ``a``, the per-AP power matrices ``F`` and the sensing
matrices ``A_D``/``B_D`` are mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelStats, channel_statistics, lmmse_filters, sample_realization
from .precoding import precoder_set
from .rng import substream

DEFAULT_N_MC = 300


@dataclass(frozen=True, eq=False)
class MomentStats:
    """Deterministic surrogates; stream index 0 is sensing, ``1..N_ue`` the UEs.

    Attributes
    ----------
    b : (N_ue,)
        ``|E{h_i^H w_i}|``.
    a : (N_ue, N_ue + 1)
        ``a[i, j]`` for UE ``i + 1`` and stream ``j``; the diagonal entry
        ``a[i, i + 1]`` is the beamforming-gain uncertainty.
    F : (N_tx, N_ue + 1)
        Diagonal of ``F_k``: ``sqrt(E ||w_{j,k}||^2)``.
    A_D, B_D : (N_ue + 1,)
        Diagonals of the sensing signal and clutter matrices.
    """

    b: np.ndarray
    a: np.ndarray
    F: np.ndarray
    A_D: np.ndarray
    B_D: np.ndarray
    n_mc: int
    b_se: np.ndarray
    a_se: np.ndarray
    F_se: np.ndarray
    A_se: np.ndarray
    B_se: np.ndarray

    @property
    def num_ues(self) -> int:
        return self.b.size

    def sensing_removed(self) -> "MomentStats":
        """Copy with the sensing stream's gains zeroed (for a communication-only run)."""
        a = self.a.copy()
        a[:, 0] = 0.0
        return MomentStats(self.b, a, self.F, np.zeros_like(self.A_D), np.zeros_like(self.B_D),
                           self.n_mc, self.b_se, self.a_se, self.F_se, self.A_se, self.B_se)


@dataclass(frozen=True)
class CommMoments:
    b: np.ndarray
    a: np.ndarray
    F: np.ndarray
    b_se: np.ndarray
    a_se: np.ndarray
    F_se: np.ndarray


@dataclass(frozen=True)
class SensingMatrices:
    A_D: np.ndarray
    B_D: np.ndarray
    A_se: np.ndarray
    B_se: np.ndarray


def sensing_diagonals(W_blocks: np.ndarray, a_tx: np.ndarray, beta_rk: np.ndarray,
                      rx_cov: np.ndarray, tx_cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of ``A_D`` and ``B_D`` for one set of per-AP precoders.

    ``[A_D]_ii = sum_{r,k} beta_rk |a_k^T w_{i,k}|^2`` and
    ``[B_D]_ii = sum_{r,k} tr(R_rx) w_{i,k}^H R_tx^T w_{i,k}``.
    """
    g = np.einsum("km,kmi->ki", a_tx, W_blocks)
    A = beta_rk.sum(axis=0) @ (np.abs(g) ** 2)
    tr_rx = np.real(np.trace(rx_cov, axis1=-2, axis2=-1))
    quad = np.real(np.einsum("kmi,rknm,kni->rki", W_blocks.conj(), tx_cov, W_blocks))
    B = np.einsum("rk,rki->i", tr_rx, quad)
    return A, B


def _trial_rng(scenario, t: int) -> np.random.Generator:
    return substream(scenario.master_seed, "moments", trial=t, drop=scenario.drop)


def _collect(scenario, n_mc: int, stats: ChannelStats | None, rng: np.random.Generator | None):
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    if stats is None:
        stats = channel_statistics(scenario)
    r = scenario.radio
    filt = lmmse_filters(stats.comm, r.noise_power, r.pilot_length, r.pilot_power)
    N_ue, N_tx, M = r.num_ues, r.num_tx_aps, r.antennas_per_ap
    Ns = N_ue + 1
    gains = np.empty((n_mc, N_ue, Ns), complex)
    wpow = np.empty((n_mc, N_tx, Ns))
    A = np.empty((n_mc, Ns))
    B = np.empty((n_mc, Ns))
    for t in range(n_mc):
        g = rng if rng is not None else _trial_rng(scenario, t)
        real = sample_realization(scenario, stats, g, filt)
        P = precoder_set(real.comm_estimates, real.sensing_vector, r.delta, M)
        blocks = P.per_ap_blocks
        gains[t] = real.comm_channels.conj() @ P.w.T
        wpow[t] = np.sum(np.abs(blocks) ** 2, axis=1)
        A[t], B[t] = sensing_diagonals(blocks, stats.sensing.a_tx, stats.sensing.beta_rk,
                                       stats.clutter.rx_cov, stats.clutter.tx_cov)
    return gains, wpow, A, B


def _comm_from_samples(gains: np.ndarray, wpow: np.ndarray) -> CommMoments:
    n, N_ue, Ns = gains.shape
    sq = np.sqrt(n)
    idx = np.arange(N_ue)
    own = gains[:, idx, idx + 1]
    mean_own = own.mean(axis=0)
    b = np.abs(mean_own)
    b_se = np.sqrt(np.var(own, axis=0, ddof=1)) / sq
    p2 = np.abs(gains) ** 2
    m2 = p2.mean(axis=0)
    m2_se = p2.std(axis=0, ddof=1) / sq
    a2 = m2.copy()
    a2[idx, idx + 1] -= b ** 2
    a2 = np.clip(a2, 0.0, None)
    a = np.sqrt(a2)
    # first-order propagation of the second-moment error through the square root
    a_se = np.where(a > 0, m2_se / (2 * np.maximum(a, 1e-300)), np.sqrt(m2_se))
    Fm = wpow.mean(axis=0)
    F = np.sqrt(Fm)
    F_se = np.where(F > 0, wpow.std(axis=0, ddof=1) / sq / (2 * np.maximum(F, 1e-300)), 0.0)
    return CommMoments(b, a, F, b_se, a_se, F_se)


def _sensing_from_samples(A: np.ndarray, B: np.ndarray) -> SensingMatrices:
    sq = np.sqrt(A.shape[0])
    return SensingMatrices(A.mean(axis=0), B.mean(axis=0),
                           A.std(axis=0, ddof=1) / sq, B.std(axis=0, ddof=1) / sq)


def estimate_comm_moments(scenario, n_mc: int = DEFAULT_N_MC, rng: np.random.Generator | None = None,
                          stats: ChannelStats | None = None) -> CommMoments:
    gains, wpow, _, _ = _collect(scenario, n_mc, stats, rng)
    return _comm_from_samples(gains, wpow)


def estimate_sensing_matrices(scenario, n_mc: int = DEFAULT_N_MC,
                              rng: np.random.Generator | None = None,
                              stats: ChannelStats | None = None) -> SensingMatrices:
    _, _, A, B = _collect(scenario, n_mc, stats, rng)
    return _sensing_from_samples(A, B)


def estimate_moments(scenario, n_mc: int = DEFAULT_N_MC, rng: np.random.Generator | None = None,
                     stats: ChannelStats | None = None) -> MomentStats:
    """All optimizer statistics from one set of ``n_mc`` realizations.

    Without ``rng`` every realization gets its own seeded substream, so the result
    depends only on the scenario seed and drop.
    """
    gains, wpow, A, B = _collect(scenario, n_mc, stats, rng)
    c = _comm_from_samples(gains, wpow)
    s = _sensing_from_samples(A, B)
    return MomentStats(c.b, c.a, c.F, s.A_D, s.B_D, n_mc, c.b_se, c.a_se, c.F_se, s.A_se, s.B_se)
