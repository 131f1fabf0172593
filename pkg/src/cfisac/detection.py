"""Multistatic target detection: observation model, MAPRT statistics, thresholds.

Everything in the detectors is block diagonal over receive APs, so the
statistics are sums of per-AP terms. For receive AP ``r`` with known path
coefficients ``c_{r,k}[m] = sqrt(beta_rk) a_k^T x_k[m]`` the detector inputs
reduce to

* ``a_r = sum_m conj(c_r[m]) a_rx^H y_r[m]``
* ``C_r = M sum_m conj(c_r[m]) c_r[m]^T + sigma^2 I``
* ``b_r = vec(sum_m y_r[m] x[m]^H)``
* ``D_r = conj(P) ⊗ I_M + sigma^2 R_r^{-1}`` with ``P = sum_m x[m] x[m]^H``
* ``E_r = Q ⊗ a_rx^H`` with ``Q = sum_m conj(c_r[m]) x[m]^T``

so the ``X[m]`` operators are never formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .channel import (ChannelStats, channel_statistics, clutter_blocks, lmmse_filters,
                      sample_realization)
from .kinds import DetectorKind
from .precoding import precoder_set
from .rng import complex_normal, substream

R_REGULARIZATION = 1e-10


class Hypothesis(str, Enum):
    H0 = "H0"
    H1 = "H1"


class DetectorError(ValueError):
    """A matrix that must be positive definite is not."""


@dataclass(frozen=True, eq=False)
class SensingModel:
    """Static quantities shared by every simulated sensing block."""

    M: int
    sigma2: float
    delta: float
    a_tx: np.ndarray      # (N_tx, M)
    a_rx: np.ndarray      # (N_rx, M)
    beta_rk: np.ndarray   # (N_rx, N_tx)
    rinv: np.ndarray      # (N_rx, N_tx, M^2, M^2) blocks of the regularised R^{-1}
    stats: ChannelStats
    filters: np.ndarray
    pilot_length: int
    pilot_power: float

    @property
    def N_tx(self) -> int:
        return self.a_tx.shape[0]

    @property
    def N_rx(self) -> int:
        return self.a_rx.shape[0]


def regularized_inverse_blocks(blocks: np.ndarray) -> np.ndarray:
    """Invert the diagonal blocks of ``R`` after adding ``1e-10 tr(R)/dim`` to the diagonal."""
    n = blocks.shape[-1]
    dim = n * blocks.shape[0] * blocks.shape[1]
    tr = np.real(np.trace(blocks, axis1=-2, axis2=-1)).sum()
    reg = R_REGULARIZATION * tr / dim
    out = np.empty_like(blocks)
    for idx in np.ndindex(blocks.shape[:2]):
        Rb = blocks[idx] + reg * np.eye(n)
        try:
            cf = scipy.linalg.cho_factor(Rb, lower=True)
        except np.linalg.LinAlgError as e:
            raise DetectorError(f"clutter covariance block {idx} is not invertible") from e
        out[idx] = scipy.linalg.cho_solve(cf, np.eye(n))
    return out


def sensing_model(scenario, stats: ChannelStats | None = None) -> SensingModel:
    if stats is None:
        stats = channel_statistics(scenario)
    r = scenario.radio
    return SensingModel(
        M=r.antennas_per_ap, sigma2=r.noise_power, delta=r.delta,
        a_tx=stats.sensing.a_tx, a_rx=stats.sensing.a_rx, beta_rk=stats.sensing.beta_rk,
        rinv=regularized_inverse_blocks(clutter_blocks(stats.clutter)), stats=stats,
        filters=lmmse_filters(stats.comm, r.noise_power, r.pilot_length, r.pilot_power),
        pilot_length=r.pilot_length, pilot_power=r.pilot_power,
    )


@dataclass(frozen=True, eq=False)
class SensingBlock:
    symbols: np.ndarray     # (L_d, N_ue + 1)
    x: np.ndarray           # (L_d, N_tx, M)
    c: np.ndarray           # (N_rx, L_d, N_tx) known path coefficients
    y: np.ndarray           # (L_d, N_rx, M)
    a_rx: np.ndarray        # (N_rx, M)
    hypothesis: Hypothesis

    @property
    def L_d(self) -> int:
        return self.x.shape[0]

    def G(self, m: int) -> np.ndarray:
        """Dense ``G[m]``, shape ``(N_rx M, N_rx N_tx)``."""
        blocks = [np.outer(self.a_rx[r], self.c[r, m]) for r in range(self.c.shape[0])]
        return scipy.linalg.block_diag(*blocks)

    def X(self, m: int) -> np.ndarray:
        """Dense ``X[m] = I_{N_rx} ⊗ (x[m]^T ⊗ I_M)``."""
        M = self.x.shape[2]
        N_rx = self.c.shape[0]
        return np.kron(np.eye(N_rx), np.kron(self.x[m].reshape(1, -1), np.eye(M)))


def draw_symbols(rng: np.random.Generator, L_d: int, n_streams: int, qpsk: bool = False) -> np.ndarray:
    if qpsk:
        bits = rng.integers(0, 4, size=(L_d, n_streams))
        return np.exp(1j * (np.pi / 4 + np.pi / 2 * bits))
    return complex_normal(rng, (L_d, n_streams))


def transmit_signals(W_blocks: np.ndarray, q: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    """``x_k[m] = W_k diag(s[m]) q``; returns ``(L_d, N_tx, M)``."""
    return np.einsum("kmi,li->lkm", W_blocks, symbols * q[None, :])


def path_coefficients(model: SensingModel, x: np.ndarray) -> np.ndarray:
    """``c_{r,k}[m] = sqrt(beta_rk) a_k^T x_k[m]``, shape ``(N_rx, L_d, N_tx)``."""
    ax = np.einsum("km,lkm->lk", model.a_tx, x)
    return np.sqrt(model.beta_rk)[:, None, :] * ax[None, :, :]


def simulate_block(model: SensingModel, W_blocks: np.ndarray, rho, L_d: int,
                   hypothesis: Hypothesis | str, rng: np.random.Generator,
                   clutter: np.ndarray | None = None, rcs: np.ndarray | None = None,
                   qpsk: bool = False) -> SensingBlock:
    """Received sensing signal over ``L_d`` data symbols.

    ``clutter`` (``(N_rx, N_tx, M, M)``) and ``rcs`` (``(N_rx, N_tx)``) are drawn
    from ``rng`` when not given; the RCS is held for the whole block.
    """
    from .channel import draw_rcs, sample_clutter_channels

    hyp = Hypothesis(hypothesis)
    q = np.sqrt(np.asarray(rho, dtype=float))
    s = draw_symbols(rng, L_d, q.size, qpsk)
    x = transmit_signals(W_blocks, q, s)
    if clutter is None:
        clutter = sample_clutter_channels(model.stats.clutter, rng)
    if rcs is None:
        rcs = draw_rcs(model.N_rx, model.N_tx, rng)
    c = path_coefficients(model, x)
    y = np.einsum("rkab,lkb->lra", clutter, x)
    if hyp is Hypothesis.H1:
        y = y + np.einsum("rlk,rk,ra->lra", c, rcs, model.a_rx)
    y = y + complex_normal(rng, y.shape, model.sigma2)
    return SensingBlock(s, x, c, y, model.a_rx, hyp)


@dataclass(frozen=True, eq=False)
class DetectorInputs:
    """Per-receive-AP detector inputs; the dense views assemble the full matrices."""

    a_r: list
    b_r: list
    C_r: list
    D_r: list
    E_r: list

    @property
    def a(self) -> np.ndarray:
        return np.concatenate(self.a_r)

    @property
    def b(self) -> np.ndarray:
        return np.concatenate(self.b_r)

    @property
    def C(self) -> np.ndarray:
        return scipy.linalg.block_diag(*self.C_r)

    @property
    def D(self) -> np.ndarray:
        return scipy.linalg.block_diag(*self.D_r)

    @property
    def E(self) -> np.ndarray:
        return scipy.linalg.block_diag(*self.E_r)


def detector_inputs(block: SensingBlock, rinv: np.ndarray, sigma2: float,
                    with_clutter_terms: bool = True) -> DetectorInputs:
    """Structured evaluation of ``a, b, C, D, E`` for one block.

    ``rinv`` holds the diagonal blocks of ``R^{-1}``, shape
    ``(N_rx, N_tx, M^2, M^2)``. With ``with_clutter_terms=False`` only ``a``
    and ``C`` are formed (the clutter-unaware detector needs nothing else).
    """
    L_d, N_tx, M = block.x.shape
    N_rx = block.c.shape[0]
    xf = block.x.reshape(L_d, N_tx * M)
    P = xf.T @ xf.conj() if with_clutter_terms else None
    out = DetectorInputs([], [], [], [], [])
    for r in range(N_rx):
        c = block.c[r]
        yr = block.y[:, r, :]
        z = yr @ block.a_rx[r].conj()
        out.a_r.append(c.conj().T @ z)
        out.C_r.append(M * (c.conj().T @ c) + sigma2 * np.eye(N_tx))
        if not with_clutter_terms:
            continue
        Y = yr.T @ xf.conj()
        out.b_r.append(Y.T.reshape(-1))
        out.D_r.append(np.kron(P.conj(), np.eye(M)) + sigma2 * scipy.linalg.block_diag(*rinv[r]))
        Q = c.conj().T @ xf
        out.E_r.append(np.kron(Q, block.a_rx[r].conj()[None, :]))
    return out


def _cho(A: np.ndarray, what: str):
    try:
        return scipy.linalg.cho_factor(0.5 * (A + A.conj().T), lower=True)
    except np.linalg.LinAlgError as e:
        raise DetectorError(f"{what} is not positive definite") from e


def test_clutter_unaware(inputs: DetectorInputs) -> float:
    """``a^H C^{-1} a`` summed over the diagonal blocks of ``C``."""
    total = 0.0
    for a, C in zip(inputs.a_r, inputs.C_r):
        total += float(np.real(a.conj() @ scipy.linalg.cho_solve(_cho(C, "C"), a)))
    return total


test_clutter_unaware.__test__ = False


def test_clutter_aware(inputs: DetectorInputs) -> float:
    """Partitioned-inverse statistic via the Schur complement of ``D``.

    With ``S = C - E D^{-1} E^H`` and ``u = a - E D^{-1} b`` the statistic
    equals ``u^H S^{-1} u``.
    """
    total = 0.0
    for a, b, C, D, E in zip(inputs.a_r, inputs.b_r, inputs.C_r, inputs.D_r, inputs.E_r):
        cf = _cho(D, "D")
        Db = scipy.linalg.cho_solve(cf, b)
        DE = scipy.linalg.cho_solve(cf, E.conj().T)
        S = C - E @ DE
        u = a - E @ Db
        total += float(np.real(u.conj() @ scipy.linalg.cho_solve(_cho(S, "Schur complement"), u)))
    return total


test_clutter_aware.__test__ = False


def statistic(inputs: DetectorInputs, kind: DetectorKind | str) -> float:
    kind = DetectorKind.parse(kind)
    if kind is DetectorKind.CLUTTER_UNAWARE:
        return test_clutter_unaware(inputs)
    return test_clutter_aware(inputs)


# ---------------------------------------------------------------- Monte Carlo

def _trial_streams(scenario, purpose: str, n: int, rng: np.random.Generator | None):
    if rng is not None:
        return (rng for _ in range(n))
    return (substream(scenario.master_seed, purpose, trial=t, drop=scenario.drop) for t in range(n))


def run_trials(scenario, rho, L_d: int, hypothesis: Hypothesis | str, n_trials: int,
               kinds: Sequence[DetectorKind | str] = tuple(DetectorKind),
               rng: np.random.Generator | None = None, purpose: str | None = None,
               model: SensingModel | None = None, qpsk: bool = False) -> dict:
    """Statistics of ``n_trials`` independent blocks for each detector kind.

    Each trial draws a fresh communication realization (and so fresh
    precoders), clutter, RCS, symbols and noise. Both detectors see the same
    blocks.
    """
    hyp = Hypothesis(hypothesis)
    kinds = [DetectorKind.parse(k) for k in kinds]
    if model is None:
        model = sensing_model(scenario)
    if purpose is None:
        purpose = "detect_h1" if hyp is Hypothesis.H1 else "detect_h0"
    rho = np.asarray(rho, dtype=float)
    need_clutter_terms = DetectorKind.CLUTTER_AWARE in kinds
    out = {k: np.empty(n_trials) for k in kinds}
    for t, g in enumerate(_trial_streams(scenario, purpose, n_trials, rng)):
        real = sample_realization(scenario, model.stats, g, model.filters)
        P = precoder_set(real.comm_estimates, real.sensing_vector, model.delta, model.M)
        block = simulate_block(model, P.per_ap_blocks, rho, L_d, hyp, g,
                               clutter=real.clutter, rcs=real.rcs_draws, qpsk=qpsk)
        inp = detector_inputs(block, model.rinv, model.sigma2, need_clutter_terms)
        for k in kinds:
            out[k][t] = statistic(inp, k)
    return out


def threshold_from_samples(samples: np.ndarray, false_alarm_prob: float) -> float:
    """Empirical ``1 - P_fa`` quantile; ``P_fa = 1`` gives the smallest sample.

    The inverted-CDF order statistic is used, so the fraction of samples above the
    threshold never exceeds ``false_alarm_prob``.
    """
    if not 0 < false_alarm_prob <= 1:
        raise ValueError("false_alarm_prob must lie in (0, 1]")
    return float(np.quantile(np.asarray(samples), 1.0 - false_alarm_prob, method="inverted_cdf"))


def calibrate_threshold(scenario, rho, L_d: int, kind: DetectorKind | str,
                        false_alarm_prob: float | None = None, n_trials: int = 2000,
                        rng: np.random.Generator | None = None,
                        model: SensingModel | None = None) -> float:
    if n_trials < 100:
        raise ValueError("threshold calibration needs at least 100 trials")
    if false_alarm_prob is None:
        false_alarm_prob = scenario.sensing.false_alarm_prob
    kind = DetectorKind.parse(kind)
    s = run_trials(scenario, rho, L_d, Hypothesis.H0, n_trials, [kind], rng, "calibrate", model)
    return threshold_from_samples(s[kind], false_alarm_prob)


@dataclass(frozen=True)
class RateEstimate:
    value: float
    stderr: float
    n_trials: int


def _rate(samples: np.ndarray, threshold: float) -> RateEstimate:
    p = float(np.mean(samples > threshold))
    n = samples.size
    return RateEstimate(p, math.sqrt(max(p * (1 - p), 0.0) / n), n)


def detection_probability(scenario, rho, L_d: int, kind: DetectorKind | str, threshold: float,
                          n_trials: int = 2000, rng: np.random.Generator | None = None,
                          model: SensingModel | None = None) -> RateEstimate:
    kind = DetectorKind.parse(kind)
    s = run_trials(scenario, rho, L_d, Hypothesis.H1, n_trials, [kind], rng, "detect_h1", model)
    return _rate(s[kind], threshold)


def false_alarm_rate(scenario, rho, L_d: int, kind: DetectorKind | str, threshold: float,
                     n_trials: int = 2000, rng: np.random.Generator | None = None,
                     model: SensingModel | None = None) -> RateEstimate:
    kind = DetectorKind.parse(kind)
    s = run_trials(scenario, rho, L_d, Hypothesis.H0, n_trials, [kind], rng, "detect_h0", model)
    return _rate(s[kind], threshold)


@dataclass(frozen=True)
class DetectionSummary:
    kind: DetectorKind
    threshold: float
    pd: RateEstimate
    far: RateEstimate | None


def evaluate_detectors(scenario, rho, L_d: int, kinds=tuple(DetectorKind), n_calibrate: int = 2000,
                       n_trials: int = 2000, measure_far: bool = False,
                       model: SensingModel | None = None,
                       progress: Callable[[str], None] | None = None) -> dict:
    """Calibrate and evaluate several detectors on shared blocks."""
    kinds = [DetectorKind.parse(k) for k in kinds]
    if model is None:
        model = sensing_model(scenario)
    pfa = scenario.sensing.false_alarm_prob
    cal = run_trials(scenario, rho, L_d, Hypothesis.H0, n_calibrate, kinds, None, "calibrate", model)
    h1 = run_trials(scenario, rho, L_d, Hypothesis.H1, n_trials, kinds, None, "detect_h1", model)
    h0 = (run_trials(scenario, rho, L_d, Hypothesis.H0, n_trials, kinds, None, "detect_h0", model)
          if measure_far else None)
    out = {}
    for k in kinds:
        thr = threshold_from_samples(cal[k], pfa)
        out[k] = DetectionSummary(k, thr, _rate(h1[k], thr), None if h0 is None else _rate(h0[k], thr))
        if progress:
            progress(f"{k.value}: threshold={thr:.4g} Pd={out[k].pd.value:.3f}")
    return out
