"""Closed-form URLLC and sensing performance metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special


class InfeasibleScenarioError(ValueError):
    """The requirements leave no room for a data payload."""


@dataclass(frozen=True)
class BlocklengthPlan:
    L: int
    L_p: int

    def __post_init__(self):
        if self.L_p < 1:
            raise ValueError(f"L_p must be >= 1 (got {self.L_p})")
        if self.L <= self.L_p:
            raise ValueError(f"L must exceed L_p (got L={self.L}, L_p={self.L_p})")

    @property
    def L_d(self) -> int:
        return self.L - self.L_p

    @property
    def beta(self) -> float:
        return self.L_p / self.L

    def duration(self, B: float) -> float:
        return self.L / B


@dataclass(frozen=True)
class UrllcReport:
    sinr_lb: np.ndarray
    dep_ub: np.ndarray
    delay_ub: np.ndarray
    channel_dispersion: np.ndarray


def q_func(x):
    """Gaussian tail probability ``Q(x) = P(N(0,1) > x)``."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def q_inv(p):
    """Inverse of :func:`q_func` on ``(0, 1)``."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)) or np.any(np.isnan(p)):
        raise ValueError("q_inv needs probabilities strictly inside (0, 1)")
    out = math.sqrt(2.0) * special.erfcinv(2.0 * p)
    return float(out) if out.ndim == 0 else out


def sinr_dl_lb(rho, b, a, sigma_n2: float) -> np.ndarray:
    """Use-and-then-forget SINR lower bound per UE.

    Parameters
    ----------
    rho : array, shape (N_ue + 1,)
        Stream powers in W; index 0 is the sensing stream.
    b : array, shape (N_ue,)
        Mean effective gains ``|E{h_i^H w_i}|``.
    a : array, shape (N_ue, N_ue + 1)
        ``a[i, j]`` is the interference gain of stream ``j`` at UE ``i``; for
        ``j == i`` it holds the beamforming-uncertainty term.
    """
    rho = np.asarray(rho, dtype=float)
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.any(rho < 0):
        raise ValueError("powers must be nonnegative")
    n = b.size
    return rho[1:n + 1] * b ** 2 / ((a ** 2) @ rho + sigma_n2)


def dep_upper_bound(sinr_lb, plan: BlocklengthPlan, bits) -> np.ndarray:
    """Normal-approximation DEP bound with unit channel dispersion."""
    sinr = np.asarray(sinr_lb, dtype=float)
    if np.any(sinr < 0):
        raise ValueError("SINR must be nonnegative")
    Ld = plan.L_d
    arg = math.sqrt(Ld) * (np.log1p(sinr) - np.asarray(bits, dtype=float) * math.log(2.0) / Ld)
    return q_func(arg)


def channel_dispersion(sinr) -> np.ndarray:
    return 1.0 - (1.0 + np.asarray(sinr, dtype=float)) ** -2


def delay_upper_bound(plan_or_L, B: float, eps_th) -> np.ndarray | float:
    L = plan_or_L.L if isinstance(plan_or_L, BlocklengthPlan) else plan_or_L
    eps = np.asarray(eps_th, dtype=float)
    if np.any((eps < 0) | (eps >= 1)):
        raise ValueError("eps_th must lie in [0, 1)")
    out = L / (B * (1.0 - eps))
    return float(out) if out.ndim == 0 else out


def max_blocklength(urllc: Sequence, sensing, B: float, L_p: int | None = None) -> int:
    """Largest integer blocklength allowed by the delay and refresh-rate limits.

    ``urllc`` holds objects with ``dep_threshold`` and ``delay_threshold``;
    ``sensing`` has ``refresh_rate_threshold``. When ``L_p`` is given, a cap at
    or below it raises :class:`InfeasibleScenarioError`.
    """
    comm = min(u.delay_threshold * B * (1.0 - u.dep_threshold) for u in urllc)
    cap = min(comm, B / sensing.refresh_rate_threshold)
    # guard against 199.99999999 style rounding in the product
    L_max = int(math.floor(cap * (1 + 1e-12)))
    floor_at = 1 if L_p is None else L_p
    if L_max <= floor_at:
        raise InfeasibleScenarioError(
            f"maximum blocklength {L_max} leaves no data symbols (L_p={floor_at})")
    return L_max


def comm_blocklength_limit(urllc: Sequence, B: float) -> float:
    return min(u.delay_threshold * B * (1.0 - u.dep_threshold) for u in urllc)


def avg_sensing_sinr(q, A_D, B_D, M: int, N_rx: int, sigma_n2: float) -> float:
    """Average sensing SINR for amplitude vector ``q`` (``q_j = sqrt(rho_j)``).

    ``A_D`` and ``B_D`` may be given as full matrices or as their diagonals.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("amplitudes must be nonnegative")
    A = np.asarray(A_D, dtype=float)
    Bm = np.asarray(B_D, dtype=float)
    num = M * (q @ A @ q if A.ndim == 2 else np.sum(A * q ** 2))
    den = M * N_rx * sigma_n2 + (q @ Bm @ q if Bm.ndim == 2 else np.sum(Bm * q ** 2))
    return float(num / den)


def refreshing_rate(L, B: float) -> float:
    if L < 1:
        raise ValueError("L must be >= 1")
    return B / L


def urllc_report(rho, stats, plan: BlocklengthPlan, scenario) -> UrllcReport:
    sinr = sinr_dl_lb(rho, stats.b, stats.a, scenario.radio.noise_power)
    bits = np.array([u.packet_bits for u in scenario.urllc], dtype=float)
    eps = np.array([u.dep_threshold for u in scenario.urllc], dtype=float)
    return UrllcReport(
        sinr_lb=sinr,
        dep_ub=dep_upper_bound(sinr, plan, bits),
        delay_ub=np.asarray(delay_upper_bound(plan, scenario.radio.bandwidth, eps)),
        channel_dispersion=channel_dispersion(sinr),
    )
