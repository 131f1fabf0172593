"""Minimum transmit power at a fixed integer blocklength.

With ``L`` fixed the reliability requirement becomes a per-UE SINR target and
every constraint is linear in the stream powers ``rho``:

* ``SINR_i >= target_i``  <=>  ``target_i (sum_j a_ij^2 rho_j + sigma2) <= b_i^2 rho_i``
* sensing: ``gamma (B_D . rho + M N_rx sigma2) <= M A_D . rho``
* per AP: ``F_k^2 . rho <= P_tx``

so the transmit energy minimum is a linear program with a global optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ..kinds import Mode
from ..metrics import q_inv

# targets are raised by this relative margin so the solver's feasibility
# tolerance cannot push the exact constraints past their thresholds
TARGET_MARGIN = 1e-7


@dataclass(frozen=True)
class PowerSolution:
    rho: np.ndarray
    sinr_target: np.ndarray
    total_power: float


def sinr_targets(scenario, L: int) -> np.ndarray:
    """Smallest SINR per UE meeting the DEP threshold with ``L - L_p`` data symbols."""
    L_d = L - scenario.radio.pilot_length
    if L_d < 1:
        raise ValueError("blocklength must exceed the pilot length")
    eps = np.array([u.dep_threshold for u in scenario.urllc], float)
    bits = np.array([u.packet_bits for u in scenario.urllc], float)
    need = q_inv(eps) / math.sqrt(L_d) + bits * math.log(2.0) / L_d
    return np.expm1(need)


def min_power_allocation(stats, scenario, mode: Mode | str, L: int) -> PowerSolution | None:
    """Least total transmit power meeting every constraint at blocklength ``L``.

    Returns ``None`` when no allocation is feasible.
    """
    mode = Mode.parse(mode)
    r = scenario.radio
    N = r.num_ues
    P = r.max_tx_power
    s2 = r.noise_power
    streams = np.arange(N + 1) if mode.has_sensing else np.arange(1, N + 1)
    nS = streams.size
    own = np.searchsorted(streams, np.arange(1, N + 1))
    target = sinr_targets(scenario, L) * (1 + TARGET_MARGIN)

    # variables x = rho / P; rows scaled by the noise power
    a2 = np.asarray(stats.a, float)[:, streams] ** 2 / s2
    b2 = np.asarray(stats.b, float) ** 2 / s2
    rows = [target[:, None] * a2 * P]
    rows[0][np.arange(N), own] -= b2 * P
    rhs = [-target]
    gamma = scenario.sensing.sinr_threshold
    if mode.has_sensing and gamma > 0:
        M, Nrx = r.antennas_per_ap, r.num_rx_aps
        d0 = gamma * (1 + TARGET_MARGIN) * M * Nrx * s2
        A = np.asarray(stats.A_D, float)[streams]
        Bd = np.asarray(stats.B_D, float)[streams]
        rows.append(((gamma * (1 + TARGET_MARGIN) * Bd - M * A) * P / d0)[None, :])
        rhs.append(np.array([-1.0]))
    F2 = np.asarray(stats.F, float)[:, streams] ** 2
    rows.append(F2 * (1 + TARGET_MARGIN))
    rhs.append(np.ones(F2.shape[0]))
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    res = linprog(np.ones(nS), A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * nS, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        return None
    rho = np.zeros(N + 1)
    rho[streams] = np.clip(res.x, 0.0, None) * P
    return PowerSolution(rho, target, float(rho.sum()))
