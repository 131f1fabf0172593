import itertools
import math

import numpy as np
import pytest

from cfisac.energy import (OpsBreakdown, PowerModelParams, cloud_power, count_comm_ops,
                           count_sensing_ops, gops, num_gpp, objective_terms, ops_breakdown,
                           scenario_ops, total_energy, total_power)
from cfisac.metrics import BlocklengthPlan
from ops_oracle import reference_comm, reference_sensing

PM = PowerModelParams()


def test_channel_estimation_count_default_dimensions():
    assert count_comm_ops(4, 10, 8, 16).ch_est == (8 * 4 * 10 + 8 * 16) * 8 * 16 == 57_344


def test_rzf_count_default_dimensions():
    assert count_comm_ops(4, 10, 8, 16).rzf == (12 * 64 ** 2 + 16 * 64) * 8 + 8 * (64 ** 3 - 64) // 3
    assert count_comm_ops(4, 10, 8, 16).rzf == 1_100_288


def test_no_users_means_no_communication_ops():
    c = count_comm_ops(4, 10, 0, 16)
    assert c.ch_est == 0 and c.comm_per_symbol == 0 and c.rzf == 0


def test_pilot_reuse_branch():
    # fewer pilots than users: the despreading cost no longer scales with N_ue
    assert count_comm_ops(2, 3, 5, 4).ch_est == 8 * 2 * 9 * 4 + 8 * 4 * 5 * 4


def test_scalar_clutter_unaware_detector_counts():
    s = count_sensing_ops(1, 1, 1, "clutter_unaware")
    assert s.detector_fixed == 16
    assert s.detector_per_symbol == 20 + 8 + 8


def test_clutter_aware_detector_dominates():
    aware = count_sensing_ops(4, 16, 2, "clutter_aware").detector_fixed
    unaware = count_sensing_ops(4, 16, 2, "clutter_unaware").detector_fixed
    assert aware > 1e3 * unaware


def test_no_receive_aps_means_no_detector_ops():
    for kind in ("clutter_aware", "clutter_unaware"):
        s = count_sensing_ops(4, 16, 0, kind)
        assert s.detector_fixed == 0 and s.detector_per_symbol == 0


@pytest.mark.parametrize("M,N_tx,N_ue,L_p,L_d", [(1, 1, 1, 1, 1), (2, 2, 2, 3, 4), (2, 1, 2, 1, 2)])
def test_comm_counts_match_instrumented_reference(M, N_tx, N_ue, L_p, L_d):
    c = count_comm_ops(M, L_p, N_ue, N_tx)
    t = reference_comm(M, L_p, N_ue, N_tx, L_d, np.random.default_rng(0))
    assert (c.ch_est, c.rzf, c.comm_per_symbol * L_d) == (
        t["ch_est"], t["rzf"], t["comm_per_symbol_total"])


@pytest.mark.parametrize("kind", ["clutter_aware", "clutter_unaware"])
@pytest.mark.parametrize("M,N_tx,N_rx,L_d", [(1, 1, 1, 1), (2, 2, 1, 3), (1, 2, 1, 4)])
def test_sensing_counts_match_instrumented_reference(kind, M, N_tx, N_rx, L_d):
    s = count_sensing_ops(M, N_tx, N_rx, kind)
    t = reference_sensing(M, N_tx, N_rx, L_d, kind, np.random.default_rng(1))
    assert s.zf_sensing == t["zf_sensing"]
    assert s.sensing_tx_per_symbol * L_d == t["sensing_tx_total"]
    assert s.detector_per_symbol * L_d == t["detector_per_symbol"]
    assert s.detector_fixed == t["detector_fixed"]


def test_gops_zero_ops():
    g = gops(BlocklengthPlan(100, 10), 2e5, OpsBreakdown())
    assert g == (0.0, 0.0, 0.0)


def test_gops_halves_when_length_doubles_without_per_symbol_terms():
    ops = OpsBreakdown(ch_est=1000, rzf=5000, zf_sensing=700, detector_fixed=900)
    g1 = gops(BlocklengthPlan(100, 10), 2e5, ops)
    g2 = gops(BlocklengthPlan(200, 10), 2e5, ops)
    assert g2.c_cloud == pytest.approx(g1.c_cloud / 2, rel=1e-15)


def test_gops_sum():
    ops = ops_breakdown(4, 10, 8, 16, 2, "clutter_aware")
    g = gops(BlocklengthPlan(150, 10), 2e5, ops)
    assert g.c_cloud == g.c_proc_c + g.c_proc_s


def test_gops_decrease_with_blocklength_for_aware_detector():
    ops = ops_breakdown(4, 10, 8, 16, 2, "clutter_aware")
    assert gops(BlocklengthPlan(2000, 10), 2e5, ops).c_cloud < gops(BlocklengthPlan(200, 10), 2e5, ops).c_cloud


def test_cloud_power_points():
    assert cloud_power(0.0, PM) == 120.0
    assert num_gpp(0.0, PM) == 0
    assert math.isclose(cloud_power(700.94, PM), 530.0, rel_tol=1e-9)
    above = math.nextafter(700.94, math.inf)
    assert num_gpp(above, PM) == 2
    assert cloud_power(above, PM) - cloud_power(700.94, PM) == pytest.approx(81 / 0.9, rel=1e-9)


def test_cloud_power_rejects_negative_load():
    with pytest.raises(ValueError):
        cloud_power(-1.0, PM)


def test_static_power_without_load(default_scenario, monkeypatch):
    import cfisac.energy as en
    monkeypatch.setattr(en, "scenario_ops", lambda *a, **k: OpsBreakdown())
    rep = total_power(np.zeros(9), BlocklengthPlan(199, 10), default_scenario, "clutter_aware")
    assert rep.p_total == pytest.approx(16 * 6.8 * 4 + 2 * 6.8 * 4 + 120, rel=1e-12)
    assert rep.n_gpp == 0


def test_transmit_power_slope(default_scenario):
    plan = BlocklengthPlan(199, 10)
    rho = np.zeros(9)
    rho[0] = 0.1
    p0 = total_power(np.zeros(9), plan, default_scenario, "clutter_aware")
    p1 = total_power(rho, plan, default_scenario, "clutter_aware")
    assert p1.p_tx == pytest.approx(0.4)
    assert p1.p_total - p0.p_total == pytest.approx(0.4, rel=1e-9)


def test_power_components_sum(default_scenario):
    rep = total_power(np.full(9, 0.01), BlocklengthPlan(150, 10), default_scenario, "clutter_aware")
    assert rep.p_total == rep.p_tx + rep.p_ap_tx + rep.p_ap_rx + rep.p_cloud


def test_objective_terms_zero_ops(default_scenario, monkeypatch):
    import cfisac.energy as en
    monkeypatch.setattr(en, "scenario_ops", lambda *a, **k: OpsBreakdown())
    t = objective_terms(default_scenario, BlocklengthPlan(150, 10), "clutter_aware")
    assert t.f1 == 0 and t.f2 == 0
    assert t.p_fixed_total == pytest.approx(16 * 27.2 + 2 * 27.2 + 120)


def test_objective_terms_do_not_depend_on_length(default_scenario):
    a = objective_terms(default_scenario, BlocklengthPlan(50, 10), "clutter_aware", n_gpp=2)
    b = objective_terms(default_scenario, BlocklengthPlan(190, 10), "clutter_aware", n_gpp=2)
    assert a == b


@pytest.mark.parametrize("kind", ["clutter_aware", "clutter_unaware"])
@pytest.mark.parametrize("L", [30, 116, 199])
def test_energy_matches_power_times_duration(default_scenario, kind, L):
    plan = BlocklengthPlan(L, 10)
    rho = np.linspace(0.001, 0.01, 9)
    e = total_energy(rho, plan, default_scenario, kind)
    p = total_power(rho, plan, default_scenario, kind)
    # the transmit power is only radiated during the data symbols
    expected = L / 2e5 * (p.p_total - p.p_tx) + plan.L_d / 2e5 * p.p_tx
    assert e.e_total == pytest.approx(expected, rel=1e-9)


def test_energy_identities(default_scenario):
    plan = BlocklengthPlan(120, 10)
    rho = np.full(9, 0.002)
    e = total_energy(rho, plan, default_scenario, "clutter_aware")
    assert e.e_total - e.f_value == pytest.approx(e.f1 / 2e5, rel=1e-12)
    e0 = total_energy(np.zeros(9), plan, default_scenario, "clutter_aware")
    assert e0.e_total == pytest.approx((120 * e0.p_fixed_total + 110 * e0.f2 + e0.f1) / 2e5, rel=1e-14)
    parts = e.e_tx_aps + e.e_rx_aps + e.e_comm_proc + e.e_sensing_proc + e.e_others
    assert parts == pytest.approx(e.e_total, abs=1e-12)
    assert e.c_cloud == e.c_proc_c + e.c_proc_s
    assert e.n_gpp == math.ceil(e.c_cloud / 700.94)


def test_energy_increases_with_sensing_power(default_scenario):
    plan = BlocklengthPlan(120, 10)
    lo = np.zeros(9)
    hi = lo.copy()
    hi[0] = 0.01
    d = total_energy(hi, plan, default_scenario, "clutter_aware").e_total \
        - total_energy(lo, plan, default_scenario, "clutter_aware").e_total
    assert d == pytest.approx(4.0 * 110 / 2e5 * 0.01, rel=1e-9)


def test_without_sensing_strips_sensing_terms(default_scenario):
    ops = scenario_ops(default_scenario, "clutter_aware", include_sensing=False)
    assert ops.sensing_fixed == 0 and ops.sensing_per_symbol == 0
    assert ops.comm_fixed > 0


def test_power_model_violations():
    assert PowerModelParams().violations() == []
    assert len(PowerModelParams(sigma_cool=1.5).violations()) == 1
    assert len(PowerModelParams(c_max=0).violations()) == 1


def test_counts_are_integers_for_small_grid():
    for M, N_tx, N_rx, N_ue, L_p in itertools.product((1, 2), (1, 2), (0, 1), (0, 1, 2), (1, 2, 3)):
        for kind in ("clutter_aware", "clutter_unaware"):
            ops = ops_breakdown(M, L_p, N_ue, N_tx, N_rx, kind)
            for v in vars(ops).values():
                assert isinstance(v, int) and v >= 0
