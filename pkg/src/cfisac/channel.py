"""Channel generation: Rician UE channels, target paths, clutter and LMMSE estimates.

Array responses belong to a horizontal uniform linear array with half-wavelength
spacing. Covariance matrices include pathloss and shadowing. All randomness
comes from generators handed in by the caller (see :mod:`cfisac.rng`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .rng import complex_normal, substream

SPEED_OF_LIGHT = 299_792_458.0
_GH_NODES = 96


class ChannelError(ValueError):
    """Covariance factorisation failure or degenerate geometry."""


@dataclass(frozen=True)
class UmiParams:
    """Urban-microcell pathloss, LOS-probability and Rician-factor constants.

    Frequencies in GHz, distances in meters, pathloss in dB.
    """

    los_slope: float = 22.0
    los_intercept: float = 28.0
    los_freq_slope: float = 20.0
    los_shadow_std: float = 3.0
    far_slope: float = 40.0
    far_intercept: float = 7.8
    far_height_slope: float = -18.0
    far_freq_slope: float = 2.0
    nlos_slope: float = 36.7
    nlos_intercept: float = 22.7
    nlos_freq_slope: float = 26.0
    nlos_shadow_std: float = 4.0
    height_offset: float = 1.0
    los_d1: float = 18.0
    los_d2: float = 36.0
    k_mean_db: float = 9.0
    k_std_db: float = 5.0
    angle_spread_deg: float = 15.0
    # extra loss of obstacle-reflected target-free paths over direct AP-AP propagation
    clutter_excess_loss_db: float = 30.0

    @classmethod
    def from_dict(cls, tree: Mapping) -> "UmiParams":
        flat = {}
        for group, prefix in (("los", "los_"), ("los_far", "far_"), ("nlos", "nlos_")):
            for k, v in tree.get(group, {}).items():
                key = prefix + ("shadow_std" if k == "shadow_std_db" else k)
                flat[key] = float(v)
        if "effective_height_offset" in tree:
            flat["height_offset"] = float(tree["effective_height_offset"])
        lp = tree.get("los_probability", {})
        if "d1" in lp:
            flat["los_d1"] = float(lp["d1"])
        if "d2" in lp:
            flat["los_d2"] = float(lp["d2"])
        kf = tree.get("rician_k_db", {})
        if "mean" in kf:
            flat["k_mean_db"] = float(kf["mean"])
        if "std" in kf:
            flat["k_std_db"] = float(kf["std"])
        if "excess_loss_db" in tree.get("clutter", {}):
            flat["clutter_excess_loss_db"] = float(tree["clutter"]["excess_loss_db"])
        if "angle_spread_deg" in tree:
            flat["angle_spread_deg"] = float(tree["angle_spread_deg"])
        known = {f.name for f in fields(cls)}
        unknown = set(flat) - known
        if unknown:
            raise ValueError(f"unknown channel-model keys: {sorted(unknown)}")
        return cls(**flat)

    @property
    def angle_spread(self) -> float:
        return math.radians(self.angle_spread_deg)


# ---------------------------------------------------------------- primitives

def array_response(M: int, azimuth: float, elevation: float) -> np.ndarray:
    """ULA response ``exp(j pi m sin(az) cos(el))`` for ``m = 0..M-1``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    return np.exp(1j * math.pi * np.arange(M) * math.sin(azimuth) * math.cos(elevation))


def umi_pathloss_db(distance: float, carrier: float, los: bool, params: UmiParams = UmiParams(),
                    h_bs: float = 10.0, h_ut: float = 1.5) -> float:
    """Deterministic UMi pathloss in dB (no shadowing).

    The NLOS value never drops below the LOS value, and past the breakpoint the
    LOS value is the larger of the two slopes, so the loss is monotone in
    distance.
    """
    if not distance > 0:
        raise ValueError(f"distance must be positive (got {distance})")
    p = params
    fc = carrier / 1e9
    lg = math.log10(distance)
    pl_los = p.los_slope * lg + p.los_intercept + p.los_freq_slope * math.log10(fc)
    hb, hu = h_bs - p.height_offset, h_ut - p.height_offset
    if hb > 0 and hu > 0:
        d_bp = 4 * hb * hu * carrier / SPEED_OF_LIGHT
        if distance > d_bp:
            far = (p.far_slope * lg + p.far_intercept + p.far_height_slope * math.log10(hb)
                   + p.far_height_slope * math.log10(hu) + p.far_freq_slope * math.log10(fc))
            pl_los = max(pl_los, far)
    if los:
        return pl_los
    pl_nlos = p.nlos_slope * lg + p.nlos_intercept + p.nlos_freq_slope * math.log10(fc)
    return max(pl_nlos, pl_los)


def umi_pathloss(distance: float, carrier: float, los: bool, shadow_draw: float = 0.0,
                 params: UmiParams = UmiParams(), h_bs: float = 10.0, h_ut: float = 1.5) -> float:
    """Linear channel gain; a positive ``shadow_draw`` (dB) raises the gain."""
    return 10 ** ((shadow_draw - umi_pathloss_db(distance, carrier, los, params, h_bs, h_ut)) / 10)


def los_probability(distance_2d: float, params: UmiParams = UmiParams()) -> float:
    d = max(distance_2d, 1e-9)
    e = math.exp(-d / params.los_d2)
    return min(params.los_d1 / d, 1.0) * (1 - e) + e


def local_scattering_covariance(M: int, nominal_azimuth: float, nominal_elevation: float,
                                angle_spread: float, gain: float = 1.0) -> np.ndarray:
    """Covariance of a ULA channel with Gaussian-distributed azimuth scattering.

    The expectation over the angular deviation is evaluated with Gauss-Hermite
    quadrature, so the result is a nonnegative combination of rank-one terms and
    PSD by construction.
    """
    if gain < 0:
        raise ValueError("gain must be nonnegative")
    if not angle_spread > 0:
        raise ValueError("angle_spread must be positive")
    x, w = np.polynomial.hermite.hermgauss(_GH_NODES)
    w = w / w.sum()
    az = nominal_azimuth + math.sqrt(2.0) * angle_spread * x
    phase = math.pi * np.outer(np.sin(az) * math.cos(nominal_elevation), np.arange(M))
    A = np.exp(1j * phase)
    R = gain * (A.T * w) @ A.conj()
    R = 0.5 * (R + R.conj().T)
    # exact unit diagonal keeps trace = M * gain
    np.fill_diagonal(R, gain)
    return R


def bistatic_gain(d_tx: float, d_rx: float, wavelength: float, sigma_rcs: float) -> float:
    """Two-way target path gain from the bistatic radar range equation."""
    if not (d_tx > 0 and d_rx > 0):
        raise ValueError("distances must be positive")
    return wavelength ** 2 * sigma_rcs / ((4 * math.pi) ** 3 * d_tx ** 2 * d_rx ** 2)


def free_space_gain(distance: float, wavelength: float) -> float:
    if not distance > 0:
        raise ValueError("distance must be positive")
    return (wavelength / (4 * math.pi * distance)) ** 2


def psd_sqrt(R: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Hermitian square root of one or a stack of PSD matrices."""
    R = np.asarray(R)
    vals, vecs = np.linalg.eigh(R)
    scale = np.max(np.abs(vals), axis=-1, keepdims=True)
    if np.any(vals < -tol * np.maximum(scale, 1e-300) - 1e-300):
        raise ChannelError("covariance is not positive semidefinite")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)[..., None, :]) @ np.swapaxes(vecs.conj(), -1, -2)


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True, eq=False)
class CommChannelStat:
    """Per (UE i, AP k) statistics; leading axes ``(N_ue, N_tx)``."""

    los_mean: np.ndarray        # (N_ue, N_tx, M)
    nlos_cov: np.ndarray        # (N_ue, N_tx, M, M)
    rician_factor: np.ndarray   # (N_ue, N_tx)
    pathloss: np.ndarray        # (N_ue, N_tx)
    is_los: np.ndarray          # (N_ue, N_tx)

    @property
    def nlos_sqrt(self) -> np.ndarray:
        cached = self.__dict__.get("_sqrt")
        if cached is None:
            cached = psd_sqrt(self.nlos_cov)
            object.__setattr__(self, "_sqrt", cached)
        return cached

    @property
    def effective_cov(self) -> np.ndarray:
        h = self.los_mean
        return self.nlos_cov + h[..., :, None] * h[..., None, :].conj()


@dataclass(frozen=True, eq=False)
class ClutterStat:
    """Kronecker factors per (receive AP r, transmit AP k)."""

    rx_cov: np.ndarray  # (N_rx, N_tx, M, M), trace M
    tx_cov: np.ndarray  # (N_rx, N_tx, M, M), carries the gain

    @property
    def gains(self) -> np.ndarray:
        M = self.rx_cov.shape[-1]
        return np.real(np.trace(self.tx_cov, axis1=-2, axis2=-1)) / M

    @property
    def sqrt_factors(self) -> tuple[np.ndarray, np.ndarray]:
        cached = self.__dict__.get("_sqrt")
        if cached is None:
            cached = (psd_sqrt(self.rx_cov), psd_sqrt(self.tx_cov))
            object.__setattr__(self, "_sqrt", cached)
        return cached


@dataclass(frozen=True, eq=False)
class SensingGeometry:
    """Target-path quantities: angles, gains and steering vectors."""

    a_tx: np.ndarray      # (N_tx, M) response from AP k towards the target
    a_rx: np.ndarray      # (N_rx, M) response of receive AP r towards the target
    beta_one_way: np.ndarray  # (N_tx,)
    beta_rk: np.ndarray   # (N_rx, N_tx) bistatic gains
    h0: np.ndarray        # (N_tx * M,)


@dataclass(frozen=True, eq=False)
class ChannelStats:
    comm: CommChannelStat
    clutter: ClutterStat
    sensing: SensingGeometry


def _direction(src, dst):
    d = np.asarray(dst, float) - np.asarray(src, float)
    horiz = math.hypot(d[0], d[1])
    return math.atan2(d[1], d[0]), math.atan2(d[2], horiz), math.sqrt(horiz ** 2 + d[2] ** 2), horiz


def comm_channel_stats(scenario, rng: np.random.Generator | None = None) -> CommChannelStat:
    """Draw LOS state, shadowing and Rician factors for every UE-AP pair."""
    if rng is None:
        rng = substream(scenario.master_seed, "large_scale", trial=0, drop=scenario.drop)
    g, r, p = scenario.geometry, scenario.radio, scenario.channel_model
    M, N_ue, N_tx = r.antennas_per_ap, r.num_ues, r.num_tx_aps
    hbar = np.zeros((N_ue, N_tx, M), complex)
    cov = np.zeros((N_ue, N_tx, M, M), complex)
    kfac = np.zeros((N_ue, N_tx))
    gain = np.zeros((N_ue, N_tx))
    los = np.zeros((N_ue, N_tx), bool)
    # fixed draw order: (u_los, shadow, K) per pair, UE-major
    u = rng.uniform(size=(N_ue, N_tx))
    shadow = rng.standard_normal((N_ue, N_tx))
    kdraw = rng.standard_normal((N_ue, N_tx))
    for i in range(N_ue):
        for k in range(N_tx):
            ap, ue = g.tx_ap_positions[k], g.ue_positions[i]
            az, el, d3, d2 = _direction(ap, ue)
            is_los = bool(u[i, k] < los_probability(d2, p))
            std = p.los_shadow_std if is_los else p.nlos_shadow_std
            beta = umi_pathloss(d3, r.carrier_frequency, is_los, std * shadow[i, k], p,
                                h_bs=ap[2], h_ut=ue[2])
            K = 10 ** ((p.k_mean_db + p.k_std_db * kdraw[i, k]) / 10) if is_los else 0.0
            hbar[i, k] = math.sqrt(beta * K / (K + 1)) * array_response(M, az, el)
            cov[i, k] = local_scattering_covariance(M, az, el, p.angle_spread, beta / (K + 1))
            kfac[i, k], gain[i, k], los[i, k] = K, beta, is_los
    return CommChannelStat(hbar, cov, kfac, gain, los)


def clutter_stats(scenario, rng: np.random.Generator | None = None) -> ClutterStat:
    """Kronecker factors for every transmit/receive AP pair.

    Each factor is a local-scattering covariance around the AP-to-AP bearing.
    The gain is the NLOS pathloss between the two APs with shadowing, reduced by
    the model's clutter excess loss, scaled by ``radio.clutter_scaling``, and is
    carried by the transmit-side factor.
    """
    if rng is None:
        rng = substream(scenario.master_seed, "large_scale", trial=1, drop=scenario.drop)
    g, r, p = scenario.geometry, scenario.radio, scenario.channel_model
    M, N_tx, N_rx = r.antennas_per_ap, r.num_tx_aps, r.num_rx_aps
    rx_cov = np.zeros((N_rx, N_tx, M, M), complex)
    tx_cov = np.zeros((N_rx, N_tx, M, M), complex)
    shadow = rng.standard_normal((N_rx, N_tx))
    for rr in range(N_rx):
        for k in range(N_tx):
            rx, tx = g.rx_ap_positions[rr], g.tx_ap_positions[k]
            az_t, el_t, d3, _ = _direction(tx, rx)
            az_r, el_r, _, _ = _direction(rx, tx)
            if d3 < 1e-9:
                raise ChannelError(f"receive AP {rr} coincides with transmit AP {k}")
            beta = r.clutter_scaling * umi_pathloss(
                d3, r.carrier_frequency, False,
                p.nlos_shadow_std * shadow[rr, k] - p.clutter_excess_loss_db, p,
                h_bs=tx[2], h_ut=rx[2])
            rx_cov[rr, k] = local_scattering_covariance(M, az_r, el_r, p.angle_spread, 1.0)
            tx_cov[rr, k] = local_scattering_covariance(M, az_t, el_t, p.angle_spread, beta)
    return ClutterStat(rx_cov, tx_cov)


def sensing_geometry(scenario) -> SensingGeometry:
    g, r = scenario.geometry, scenario.radio
    M, lam = r.antennas_per_ap, r.wavelength
    t = g.target_position
    a_tx, d_tx, b1 = [], [], []
    for ap in g.tx_ap_positions:
        az, el, d, _ = _direction(ap, t)
        a_tx.append(array_response(M, az, el))
        d_tx.append(d)
        b1.append(free_space_gain(d, lam))
    a_rx, d_rx = [], []
    for ap in g.rx_ap_positions:
        az, el, d, _ = _direction(t, ap)
        a_rx.append(array_response(M, az, el))
        d_rx.append(d)
    beta_rk = np.array([[bistatic_gain(dt, dr, lam, r.rcs_variance) for dt in d_tx] for dr in d_rx])
    a_tx = np.array(a_tx)
    b1 = np.array(b1)
    h0 = (np.sqrt(b1)[:, None] * a_tx.conj()).reshape(-1)
    return SensingGeometry(a_tx, np.array(a_rx), b1, beta_rk, h0)


def sensing_vector_h0(scenario) -> np.ndarray:
    """Concatenated AP-to-target channel, block ``k`` = ``sqrt(beta_k) * conj(a_k)``.

    The conjugate matches the reflected path ``a^T x``: transmitting along this
    vector adds the ``M`` antenna contributions of each AP coherently at the
    target. ``beta_k`` is the one-way free-space gain.
    """
    return sensing_geometry(scenario).h0


def channel_statistics(scenario) -> ChannelStats:
    """All large-scale statistics of a scenario, deterministic in its seed and drop."""
    return ChannelStats(comm_channel_stats(scenario), clutter_stats(scenario),
                        sensing_geometry(scenario))


# ---------------------------------------------------------------- sampling

def sample_comm_channels(stats: CommChannelStat, rng: np.random.Generator) -> np.ndarray:
    """Draw ``h_i`` for every UE; returns shape ``(N_ue, N_tx * M)``."""
    N_ue, N_tx, M = stats.los_mean.shape
    phase = np.exp(2j * np.pi * rng.uniform(size=(N_ue, N_tx)))
    z = complex_normal(rng, (N_ue, N_tx, M))
    h = phase[..., None] * stats.los_mean + np.einsum("ikab,ikb->ika", stats.nlos_sqrt, z)
    return h.reshape(N_ue, N_tx * M)


def sample_clutter_channels(stats: ClutterStat, rng: np.random.Generator) -> np.ndarray:
    """Draw ``H_{r,k} = R_rx^{1/2} W (R_tx^{1/2})^T``; returns ``(N_rx, N_tx, M, M)``."""
    srx, stx = stats.sqrt_factors
    W = complex_normal(rng, srx.shape)
    return srx @ W @ np.swapaxes(stx, -1, -2)


def clutter_covariance(stats: ClutterStat) -> np.ndarray:
    """Covariance of the stacked clutter vector.

    The vector stacks ``vec(H_{r,k})`` (column-major) with ``k`` running fastest,
    then ``r``, which is the ordering that ``(I ⊗ (x^T ⊗ I_M))`` expects.
    """
    N_rx, N_tx, M, _ = stats.rx_cov.shape
    n = M * M
    out = np.zeros((N_rx * N_tx * n, N_rx * N_tx * n), complex)
    for r in range(N_rx):
        for k in range(N_tx):
            s = (r * N_tx + k) * n
            out[s:s + n, s:s + n] = np.kron(stats.tx_cov[r, k], stats.rx_cov[r, k])
    return out


def clutter_blocks(stats: ClutterStat) -> np.ndarray:
    """Diagonal blocks of :func:`clutter_covariance`, shape ``(N_rx, N_tx, M^2, M^2)``."""
    N_rx, N_tx, M, _ = stats.rx_cov.shape
    return np.einsum("rkab,rkcd->rkacbd", stats.tx_cov, stats.rx_cov).reshape(N_rx, N_tx, M * M, M * M)


def stack_clutter(H: np.ndarray) -> np.ndarray:
    """Stacked clutter vector matching :func:`clutter_covariance`."""
    N_rx, N_tx, M, _ = H.shape
    return np.swapaxes(H, -1, -2).reshape(N_rx * N_tx * M * M)


def lmmse_filters(stats: CommChannelStat, sigma_n2: float, pilot_length: int,
                  pilot_power: float) -> np.ndarray:
    """Per-pair LMMSE matrices ``R'(R' + s I)^{-1}`` with ``s = sigma^2/(L_p p)``."""
    Rp = stats.effective_cov
    M = Rp.shape[-1]
    s = sigma_n2 / (pilot_length * pilot_power)
    Q = Rp + s * np.eye(M)
    # R' Q^{-1} = (Q^{-1} R')^H since both are Hermitian
    return np.swapaxes(np.linalg.solve(Q, Rp).conj(), -1, -2)


def lmmse_error_trace(stats: CommChannelStat, sigma_n2: float, pilot_length: int,
                      pilot_power: float) -> np.ndarray:
    """Trace of the LMMSE error covariance ``R' - R'(R'+sI)^{-1}R'`` per UE."""
    F = lmmse_filters(stats, sigma_n2, pilot_length, pilot_power)
    Rp = stats.effective_cov
    err = Rp - F @ Rp
    return np.real(np.trace(err, axis1=-2, axis2=-1)).sum(axis=1)


def lmmse_estimate(h: np.ndarray, stats: CommChannelStat, sigma_n2: float, pilot_length: int,
                   pilot_power: float, rng: np.random.Generator,
                   filters: np.ndarray | None = None) -> np.ndarray:
    """Estimate every ``h_i`` from its de-spread orthogonal-pilot observation.

    The observation for pair ``(i, k)`` is ``h_{i,k} + n`` with
    ``n ~ CN(0, sigma^2 / (L_p p) I)``. The unknown LOS phase makes the LOS
    term zero-mean, so the estimator uses ``R' = R + hbar hbar^H``.
    """
    N_ue, N_tx, M = stats.los_mean.shape
    if filters is None:
        filters = lmmse_filters(stats, sigma_n2, pilot_length, pilot_power)
    s = sigma_n2 / (pilot_length * pilot_power)
    obs = h.reshape(N_ue, N_tx, M) + complex_normal(rng, (N_ue, N_tx, M), s)
    return np.einsum("ikab,ikb->ika", filters, obs).reshape(N_ue, N_tx * M)


def draw_rcs(N_rx: int, N_tx: int, rng: np.random.Generator) -> np.ndarray:
    """Swerling-I normalised RCS, one ``CN(0, 1)`` value per path and block."""
    return complex_normal(rng, (N_rx, N_tx))


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    comm_channels: np.ndarray   # (N_ue, N_tx*M)
    comm_estimates: np.ndarray  # (N_ue, N_tx*M)
    clutter: np.ndarray         # (N_rx, N_tx, M, M)
    sensing_vector: np.ndarray  # (N_tx*M,)
    rcs_draws: np.ndarray       # (N_rx, N_tx)


def sample_realization(scenario, stats: ChannelStats, rng: np.random.Generator,
                       filters: np.ndarray | None = None) -> ChannelRealization:
    r = scenario.radio
    h = sample_comm_channels(stats.comm, rng)
    hhat = lmmse_estimate(h, stats.comm, r.noise_power, r.pilot_length, r.pilot_power, rng, filters)
    H = sample_clutter_channels(stats.clutter, rng)
    alpha = draw_rcs(r.num_rx_aps, r.num_tx_aps, rng)
    return ChannelRealization(h, hhat, H, stats.sensing.h0, alpha)
