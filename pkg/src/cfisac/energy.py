"""Processing-load (GOPS) accounting and the end-to-end power/energy model.

Operation counts use the usual baseband convention: one complex multiplication
is 4 real multiplications, doubled for memory access, i.e. 8 operations; a real
by complex product is 2 real multiplications, i.e. 4 operations. Divisions are
counted as multiplications. All counts are per transmission block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .kinds import DetectorKind
from .metrics import BlocklengthPlan


@dataclass(frozen=True)
class PowerModelParams:
    delta_tr: float = 4.0
    p_ap0_tx: float = 6.8 * 4
    p_ap0_rx: float = 6.8 * 4
    p_fixed: float = 120.0
    p_cloud0_proc: float = 81.0
    delta_cloud_proc: float = 288.0
    sigma_cool: float = 0.9
    c_max: float = 700.94  # GOPS per GPP

    def violations(self) -> list[str]:
        out = []
        for name in ("delta_tr", "p_ap0_tx", "p_ap0_rx", "p_fixed", "p_cloud0_proc",
                     "delta_cloud_proc", "sigma_cool", "c_max"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                out.append(f"power_model.{name}: must be positive (got {v})")
        if self.sigma_cool > 1:
            out.append(f"power_model.sigma_cool: must be <= 1 (got {self.sigma_cool})")
        return out

    @property
    def load_coefficient(self) -> float:
        """Cloud power per GOPS of load, ``delta_cloud / (sigma_cool * C_max)``."""
        return self.delta_cloud_proc / (self.sigma_cool * self.c_max)


@dataclass(frozen=True)
class OpsBreakdown:
    """Real-operation counts per block, split into fixed and per-data-symbol parts."""

    ch_est: int = 0
    rzf: int = 0
    comm_per_symbol: int = 0
    zf_sensing: int = 0
    sensing_tx_per_symbol: int = 0
    detector_per_symbol: int = 0
    detector_fixed: int = 0

    @property
    def sensing_per_symbol(self) -> int:
        return self.sensing_tx_per_symbol + self.detector_per_symbol

    @property
    def comm_fixed(self) -> int:
        return self.ch_est + self.rzf

    @property
    def sensing_fixed(self) -> int:
        return self.zf_sensing + self.detector_fixed

    def without_sensing(self) -> "OpsBreakdown":
        return replace(self, zf_sensing=0, sensing_tx_per_symbol=0,
                       detector_per_symbol=0, detector_fixed=0)


class CommOps(NamedTuple):
    ch_est: int
    rzf: int
    comm_per_symbol: int


class SensingOps(NamedTuple):
    zf_sensing: int
    sensing_tx_per_symbol: int
    detector_per_symbol: int
    detector_fixed: int

    @property
    def sensing_per_symbol(self) -> int:
        return self.sensing_tx_per_symbol + self.detector_per_symbol


def _inv_cost(n: int) -> int:
    # Hermitian inverse through an LDL^H factorisation: (n^3 - n)/3 complex mults.
    return 8 * (n ** 3 - n) // 3


def count_comm_ops(M: int, L_p: int, N_ue: int, N_tx: int) -> CommOps:
    if L_p < 1:
        raise ValueError("pilot length must be >= 1")
    n = M * N_tx
    if N_ue == 0:
        return CommOps(0, 0, 0)
    if L_p >= N_ue:
        despread = 8 * M * L_p * N_ue * N_tx
    else:
        despread = 8 * M * L_p ** 2 * N_tx
    ch_est = despread + 8 * M ** 2 * N_ue * N_tx
    rzf = (12 * n ** 2 + 16 * n) * N_ue + _inv_cost(n)
    return CommOps(ch_est, rzf, 20 * M * N_ue * N_tx)


def count_sensing_ops(M: int, N_tx: int, N_rx: int, kind: DetectorKind | str) -> SensingOps:
    kind = DetectorKind.parse(kind)
    n = M * N_tx
    zf = 8 * n ** 2 + 12 * n
    tx = 12 * n
    if N_rx == 0:
        return SensingOps(zf, tx, 0, 0)
    # per-symbol parts shared by both detectors: G, a, C
    g_ops = 20 * M * N_tx * N_rx
    a_ops = 8 * M ** 2 * N_rx * N_tx
    c_ops = 4 * M * N_rx * (N_tx ** 2 + N_tx)
    if kind is DetectorKind.CLUTTER_UNAWARE:
        per_symbol = g_ops + a_ops + c_ops
        nt = N_tx * N_rx
        fixed = 8 * (N_tx ** 3 - N_tx) * N_rx // 3 + 8 * (nt ** 2 + nt)
        return SensingOps(zf, tx, per_symbol, fixed)
    b_ops = 8 * M ** 2 * N_rx * N_tx
    d_ops = 4 * (n ** 2 + n)
    e_ops = 8 * M ** 2 * N_rx * N_tx ** 2
    per_symbol = g_ops + a_ops + b_ops + c_ops + d_ops + e_ops
    nk = (1 + M ** 2) * N_tx * N_rx
    nd = M ** 2 * N_tx * N_rx
    fixed = _inv_cost(nk) + _inv_cost(nd) + 8 * nk ** 2 + 8 * nk
    return SensingOps(zf, tx, per_symbol, fixed)


def ops_breakdown(M: int, L_p: int, N_ue: int, N_tx: int, N_rx: int,
                  kind: DetectorKind | str) -> OpsBreakdown:
    c = count_comm_ops(M, L_p, N_ue, N_tx)
    s = count_sensing_ops(M, N_tx, N_rx, kind)
    return OpsBreakdown(c.ch_est, c.rzf, c.comm_per_symbol, s.zf_sensing,
                        s.sensing_tx_per_symbol, s.detector_per_symbol, s.detector_fixed)


def scenario_ops(scenario, kind: DetectorKind | str, include_sensing: bool = True) -> OpsBreakdown:
    r = scenario.radio
    ops = ops_breakdown(r.antennas_per_ap, r.pilot_length, r.num_ues, r.num_tx_aps,
                        r.num_rx_aps, kind)
    return ops if include_sensing else ops.without_sensing()


class Gops(NamedTuple):
    c_proc_c: float
    c_proc_s: float
    c_cloud: float


def gops(plan: BlocklengthPlan, B: float, ops: OpsBreakdown) -> Gops:
    scale = B / (plan.L * 1e9)
    cc = scale * (ops.ch_est + ops.rzf + ops.comm_per_symbol * plan.L_d)
    cs = scale * (ops.sensing_per_symbol * plan.L_d + ops.zf_sensing + ops.detector_fixed)
    return Gops(cc, cs, cc + cs)


def num_gpp(c_cloud: float, params: PowerModelParams) -> int:
    if c_cloud < 0:
        raise ValueError("negative processing load")
    return int(math.ceil(c_cloud / params.c_max))


def cloud_power(c_cloud: float, params: PowerModelParams) -> float:
    n = num_gpp(c_cloud, params)
    return params.p_fixed + (n * params.p_cloud0_proc
                             + params.delta_cloud_proc * c_cloud / params.c_max) / params.sigma_cool


class PowerReport(NamedTuple):
    p_total: float
    p_tx: float
    p_ap_tx: float
    p_ap_rx: float
    p_cloud: float
    c_cloud: float
    n_gpp: int


def _static_radio(scenario, include_sensing: bool) -> tuple[float, float]:
    pm = scenario.power_model
    r = scenario.radio
    return r.num_tx_aps * pm.p_ap0_tx, (r.num_rx_aps * pm.p_ap0_rx if include_sensing else 0.0)


def total_power(rho, plan: BlocklengthPlan, scenario, kind: DetectorKind | str,
                include_sensing: bool = True) -> PowerReport:
    """Instantaneous E2E power draw; ``rho`` holds the per-stream powers in W."""
    pm = scenario.power_model
    p_tx = pm.delta_tr * float(np.sum(rho))
    ap_tx, ap_rx = _static_radio(scenario, include_sensing)
    load = gops(plan, scenario.radio.bandwidth, scenario_ops(scenario, kind, include_sensing))
    pc = cloud_power(load.c_cloud, pm)
    return PowerReport(p_tx + ap_tx + ap_rx + pc, p_tx, ap_tx, ap_rx, pc, load.c_cloud,
                       num_gpp(load.c_cloud, pm))


class ObjectiveTerms(NamedTuple):
    p_fixed_total: float
    f1: float
    f2: float
    n_gpp: int


def objective_terms(scenario, plan: BlocklengthPlan, kind: DetectorKind | str,
                    include_sensing: bool = True, n_gpp: int | None = None) -> ObjectiveTerms:
    """Constant, per-block and per-data-symbol pieces of the energy objective.

    ``n_gpp`` overrides the processor count; by default it is evaluated at the
    processing load implied by ``plan``.
    """
    pm = scenario.power_model
    B = scenario.radio.bandwidth
    ops = scenario_ops(scenario, kind, include_sensing)
    if n_gpp is None:
        n_gpp = num_gpp(gops(plan, B, ops).c_cloud, pm)
    ap_tx, ap_rx = _static_radio(scenario, include_sensing)
    p_fixed_total = ap_tx + ap_rx + pm.p_fixed + n_gpp * pm.p_cloud0_proc / pm.sigma_cool
    pref = pm.load_coefficient * B / 1e9
    f1 = pref * (ops.ch_est + ops.rzf + ops.zf_sensing + ops.detector_fixed)
    f2 = pref * (ops.comm_per_symbol + ops.sensing_per_symbol)
    return ObjectiveTerms(p_fixed_total, f1, f2, n_gpp)


@dataclass(frozen=True)
class EnergyReport:
    c_proc_c: float
    c_proc_s: float
    c_cloud: float
    n_gpp: int
    p_cloud: float
    p_total: float
    p_fixed_total: float
    f1: float
    f2: float
    e_total: float
    f_value: float
    # per-block energy split, J; sums to e_total
    e_tx_aps: float
    e_rx_aps: float
    e_comm_proc: float
    e_sensing_proc: float
    e_others: float
    e_transmit: float


def total_energy(rho, plan: BlocklengthPlan, scenario, kind: DetectorKind | str,
                 include_sensing: bool = True) -> EnergyReport:
    """Energy to complete one communication + sensing block."""
    pm = scenario.power_model
    B = scenario.radio.bandwidth
    ops = scenario_ops(scenario, kind, include_sensing)
    load = gops(plan, B, ops)
    terms = objective_terms(scenario, plan, kind, include_sensing)
    p_tr = float(np.sum(rho))
    e_transmit = plan.L_d * pm.delta_tr * p_tr / B
    e_total = (plan.L * terms.p_fixed_total + plan.L_d * terms.f2 + terms.f1) / B + e_transmit
    f_value = (plan.L * terms.p_fixed_total + plan.L_d * terms.f2) / B + e_transmit
    ap_tx, ap_rx = _static_radio(scenario, include_sensing)
    k = pm.load_coefficient / 1e9
    e_comm = k * (ops.comm_fixed + plan.L_d * ops.comm_per_symbol)
    e_sens = k * (ops.sensing_fixed + plan.L_d * ops.sensing_per_symbol)
    e_others = plan.L / B * (pm.p_fixed + terms.n_gpp * pm.p_cloud0_proc / pm.sigma_cool)
    p_total = total_power(rho, plan, scenario, kind, include_sensing).p_total
    return EnergyReport(
        c_proc_c=load.c_proc_c, c_proc_s=load.c_proc_s, c_cloud=load.c_cloud,
        n_gpp=terms.n_gpp, p_cloud=cloud_power(load.c_cloud, pm), p_total=p_total,
        p_fixed_total=terms.p_fixed_total, f1=terms.f1, f2=terms.f2,
        e_total=e_total, f_value=f_value,
        e_tx_aps=plan.L / B * ap_tx + e_transmit, e_rx_aps=plan.L / B * ap_rx,
        e_comm_proc=e_comm, e_sensing_proc=e_sens, e_others=e_others, e_transmit=e_transmit,
    )
