"""Successive convex approximation driver and the baseline allocation modes.

Each iteration convexifies the problem around the previous point (tangent of
``1/L_bar``, fractional-programming bound on the SINR terms, feasible-point
pursuit tangent on the sensing row with a penalised slack) and solves the
result. The run stops when the objective improves by less than ``epsilon``
relative to its excess over the box lower bound, or after ``c_max`` iterations.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from ..energy import EnergyReport, total_energy
from ..kinds import DetectorKind, Mode
from ..metrics import (BlocklengthPlan, InfeasibleScenarioError, avg_sensing_sinr,
                       max_blocklength, sinr_dl_lb, urllc_report)
from ..moments import DEFAULT_N_MC, MomentStats, estimate_moments
from .barrier import InfeasibleProblem, NewtonLimitExceeded
from .power import min_power_allocation
from .subproblem import (IterateState, SubproblemError, Tolerances, build_subproblem,
                         solve_subproblem)

RELIABILITY_RTOL = 1e-6
SENSING_RTOL = 1e-4
POWER_ATOL = 1e-9


@dataclass(frozen=True)
class AlgorithmOptions:
    epsilon: float = 1e-3
    eps_chi: float = 1e-6
    penalty: float = 10.0
    c_max: int = 30
    tolerances: Tolerances = Tolerances()
    fixed_L: int | None = None
    max_L_evaluations: int = 64


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    objective: float
    energy: float
    chi0: float
    max_violation: float
    L: float
    n_gpp: int
    newton_steps: int
    tightness: float = math.nan
    L_bar: float = math.nan


@dataclass(frozen=True)
class Verification:
    dep_ub: np.ndarray
    dep_ok: bool
    sensing_sinr: float
    sensing_ok: bool
    per_ap_norm: np.ndarray
    power_ok: bool
    L_ok: bool

    @property
    def ok(self) -> bool:
        return self.dep_ok and self.sensing_ok and self.power_ok and self.L_ok


@dataclass(frozen=True, eq=False)
class AllocationResult:
    mode: Mode
    kind: DetectorKind
    rho_opt: np.ndarray
    L_opt: int
    L_max: int
    L_p: int
    objective: float
    feasible: bool
    converged: bool
    iterations: int
    state: IterateState | None
    trace: tuple[TraceEntry, ...]
    energy: EnergyReport | None
    verification: Verification | None
    wall_time: float
    message: str = ""
    L_continuous: float = math.nan
    integer_candidates: tuple = ()

    @property
    def plan(self) -> BlocklengthPlan:
        return BlocklengthPlan(self.L_opt, self.L_p)


def initial_state(stats: MomentStats, scenario, mode: Mode, L_max: int) -> IterateState:
    """Standard starting point: tiny equal amplitudes and the longest block."""
    r = scenario.radio
    N = r.num_ues
    q = np.full(N + 1, 1e-3 * math.sqrt(r.max_tx_power / N))
    if not mode.has_sensing:
        q[0] = 0.0
    rho = q ** 2
    sinr = sinr_dl_lb(rho, stats.b, stats.a, r.noise_power)
    r_fp = (np.asarray(stats.a) ** 2) @ rho + r.noise_power
    return IterateState(q, sinr, r_fp, float(L_max), 1.0 / (L_max - r.pilot_length), 0.0, 0)


def state_from_power(rho, L: int, stats: MomentStats, scenario) -> IterateState:
    """Iterate with the SINR and fractional-programming variables tight at ``rho``."""
    r = scenario.radio
    rho = np.clip(np.asarray(rho, float), 0.0, None)
    sinr = sinr_dl_lb(rho, stats.b, stats.a, r.noise_power)
    r_fp = (np.asarray(stats.a) ** 2) @ rho + r.noise_power
    return IterateState(np.sqrt(rho), sinr, r_fp, float(L), 1.0 / (L - r.pilot_length), 0.0, 0)


def verify_allocation(q, L: int, stats: MomentStats, scenario, mode: Mode, L_max: int) -> Verification:
    """Check every constraint of the original problem at an integer blocklength."""
    r = scenario.radio
    q = np.clip(np.asarray(q, float), 0.0, None)
    rho = q ** 2
    plan = BlocklengthPlan(int(L), r.pilot_length)
    rep = urllc_report(rho, stats, plan, scenario)
    eps = np.array([u.dep_threshold for u in scenario.urllc])
    dep_ok = bool(np.all(rep.dep_ub <= eps * (1 + RELIABILITY_RTOL)))
    gamma = scenario.sensing.sinr_threshold
    if mode.has_sensing:
        s = avg_sensing_sinr(q, stats.A_D, stats.B_D, r.antennas_per_ap, r.num_rx_aps, r.noise_power)
        s_ok = bool(s >= gamma * (1 - SENSING_RTOL))
    else:
        s, s_ok = float("nan"), True
    norms = np.sqrt((np.asarray(stats.F) ** 2) @ rho)
    p_ok = bool(np.all(norms <= math.sqrt(r.max_tx_power) + POWER_ATOL))
    L_ok = r.pilot_length + 1 <= L <= L_max
    return Verification(rep.dep_ub, dep_ok, s, s_ok, norms, p_ok, L_ok)


@dataclass(frozen=True)
class IntegerCandidate:
    L: int
    feasible: bool
    objective: float


def mode_objective(rho, L: int, scenario, mode: Mode, kind: DetectorKind) -> float:
    """Exact objective a mode minimises at an integer blocklength, J."""
    plan = BlocklengthPlan(int(L), scenario.radio.pilot_length)
    rep = total_energy(rho, plan, scenario, kind, include_sensing=mode.has_sensing)
    return rep.e_transmit if mode is Mode.TX_ONLY_ISAC else rep.e_total


def integer_search(L_cont: float, stats, scenario, mode: Mode, kind: DetectorKind, L_max: int,
                   limit: int = 64):
    """Pick the integer blocklength near ``L_cont`` with the best exact objective.

    Starts at ``floor(L_cont)``, steps up while the fixed-length power problem is
    infeasible, otherwise steps down while it stays feasible, and returns the
    best evaluated point with its minimum-power allocation.
    """
    L_p = scenario.radio.pilot_length
    L = min(max(int(math.floor(L_cont + 1e-9)), L_p + 1), L_max)
    seen: list[IntegerCandidate] = []
    best = None

    def evaluate(L):
        nonlocal best
        sol = min_power_allocation(stats, scenario, mode, L)
        if sol is None:
            seen.append(IntegerCandidate(L, False, math.inf))
            return False
        obj = mode_objective(sol.rho, L, scenario, mode, kind)
        seen.append(IntegerCandidate(L, True, obj))
        if best is None or obj < best[2]:
            best = (L, sol, obj)
        return True

    if evaluate(L):
        while L > L_p + 1 and len(seen) < limit and evaluate(L - 1):
            L -= 1
    else:
        while L < L_max and len(seen) < limit and not evaluate(L + 1):
            L += 1
    return best, tuple(seen)


def _infeasible(mode, kind, L_max, trace, t0, message, L_p, iterations=0):
    return AllocationResult(mode, kind, np.zeros(0), 0, L_max, L_p, math.inf, False, False,
                            iterations, None, tuple(trace), None, None,
                            time.perf_counter() - t0, message)


def run_algorithm1(scenario, stats: MomentStats, mode: Mode | str = Mode.E2E_ISAC,
                   options: AlgorithmOptions = AlgorithmOptions(),
                   kind: DetectorKind | str = DetectorKind.CLUTTER_AWARE,
                   initial: IterateState | None = None) -> AllocationResult:
    """Joint stream-power and blocklength allocation.

    Parameters
    ----------
    mode
        ``e2e_isac`` minimises end-to-end energy, ``tx_only_isac`` only the
        transmit energy, ``e2e_no_sensing`` drops the sensing stream.
    kind
        Detector whose processing load enters the energy model.
    initial
        Warm start; must already lie in the problem domain.
    """
    t0 = time.perf_counter()
    mode = Mode.parse(mode)
    kind = DetectorKind.parse(kind)
    r = scenario.radio
    L_p = r.pilot_length
    if not mode.has_sensing:
        stats = stats.sensing_removed()
    try:
        L_max = max_blocklength(scenario.urllc, scenario.sensing, r.bandwidth, L_p)
    except InfeasibleScenarioError as exc:
        return _infeasible(mode, kind, 0, [], t0, str(exc), L_p)
    L_lo = L_p + 1
    if options.fixed_L is not None:
        if not L_lo <= options.fixed_L <= L_max:
            return _infeasible(mode, kind, L_max, [], t0, "fixed blocklength outside bounds", L_p)
        L_max = int(options.fixed_L)
    # at fixed L every constraint is linear in rho and the longest block is the
    # easiest for reliability, so this LP decides feasibility exactly
    anchor = min_power_allocation(stats, scenario, mode, L_max)
    if anchor is None:
        return _infeasible(mode, kind, L_max, [], t0,
                           f"no power allocation meets the requirements at L_max={L_max}", L_p)
    if options.fixed_L is not None:
        # every mode's objective is affine in rho at a fixed length, so the
        # minimum-power allocation is already optimal
        return _finish(mode, kind, anchor, L_max, stats, scenario, t0, True, 0, (), "",
                       float(L_max), (IntegerCandidate(L_max, True, mode_objective(
                           anchor.rho, L_max, scenario, mode, kind)),))
    state = initial if initial is not None else initial_state(stats, scenario, mode, L_max)
    if not mode.has_sensing:
        q = np.array(state.q, float)
        q[0] = 0.0
        state = IterateState(q, state.chi, state.r, state.L, state.L_bar, 0.0, 0)
    run = _sca(state, stats, scenario, mode, kind, options, L_max)
    message = ""
    if run.failed_first or run.state.chi0 >= options.eps_chi:
        # the convexification around the starting point can be too loose, or the
        # slack can stall; restart once from the minimum-power allocation at
        # L_max, which meets every constraint
        reason = run.message or f"sensing slack {run.state.chi0:.3g} not driven to zero"
        message = f"restarted from the L_max power allocation ({reason})"
        run = _sca(state_from_power(anchor.rho, L_max, stats, scenario), stats, scenario, mode,
                   kind, options, L_max)
    if run.failed_first:
        return _infeasible(mode, kind, L_max, run.trace, t0, f"{message}; {run.message}", L_p)
    state, trace, converged, c = run.state, run.trace, run.converged, run.iterations
    if run.message:
        message = (message + "; " if message else "") + run.message

    L_cont = state.L
    if state.chi0 >= options.eps_chi:
        message = (message + "; " if message else "") + f"sensing slack {state.chi0:.3g} not driven to zero"
        return AllocationResult(mode, kind, state.rho, 0, L_max, L_p, math.inf, False, converged, c,
                                state, tuple(trace), None, None, time.perf_counter() - t0, message,
                                L_cont)
    best, seen = integer_search(L_cont, stats, scenario, mode, kind, L_max, options.max_L_evaluations)
    if best is None:
        message = (message + "; " if message else "") + "no feasible integer blocklength"
        return AllocationResult(mode, kind, state.rho, 0, L_max, L_p, math.inf, False, converged, c,
                                state, tuple(trace), None, None, time.perf_counter() - t0, message,
                                L_cont, seen)
    L_int, sol, _ = best
    return _finish(mode, kind, sol, L_int, stats, scenario, t0, converged, c, trace, message,
                   L_cont, seen, L_max)


@dataclass(frozen=True)
class _ScaRun:
    state: IterateState
    trace: tuple
    converged: bool
    iterations: int
    message: str
    failed_first: bool


def _sca(state: IterateState, stats, scenario, mode: Mode, kind: DetectorKind,
         options: AlgorithmOptions, L_max: int) -> _ScaRun:
    """Successive convexification from ``state`` until the objective settles."""
    L_p = scenario.radio.pilot_length
    slack = mode.has_sensing
    trace: list[TraceEntry] = []
    prev = None
    converged = False
    message = ""
    c = 0
    while c < options.c_max:
        c += 1
        try:
            sub = build_subproblem(state, stats, scenario, mode, kind, penalty=options.penalty,
                                   slack=slack, L_max=L_max)
            sol = solve_subproblem(sub, options.tolerances, c)
        except (InfeasibleProblem, SubproblemError, NewtonLimitExceeded) as exc:
            if c == 1:
                return _ScaRun(state, (), False, 0, f"iteration 1: {exc}", True)
            message = f"iteration {c}: {exc}; keeping iteration {c - 1}"
            c -= 1
            break
        state = sol.state
        trace.append(TraceEntry(c, sol.objective, sol.energy, state.chi0, sol.max_violation,
                                state.L, sub.n_gpp, sol.newton_steps,
                                state.tightness(L_p), state.L_bar))
        if slack and state.chi0 < options.eps_chi:
            slack = False
            state = IterateState(state.q, state.chi, state.r, state.L, state.L_bar, 0.0, c)
        # improvement relative to the reducible part of the objective, so every mode
        # shares one epsilon regardless of its constant offset
        if prev is not None and abs(prev - sol.objective) < options.epsilon * (sol.objective - sol.floor):
            converged = True
            break
        prev = sol.objective
    return _ScaRun(state, tuple(trace), converged, c, message, False)


def _finish(mode, kind, sol, L_int, stats, scenario, t0, converged, iterations, trace, message,
            L_cont, seen, L_max=None):
    """Result at an integer blocklength with its minimum-power allocation."""
    L_p = scenario.radio.pilot_length
    L_max = L_int if L_max is None else L_max
    rho = sol.rho
    # at the optimum the inverse-length bound is active: L_bar = 1 / (L - L_p)
    st = state_from_power(rho, L_int, stats, scenario)
    state = IterateState(st.q, st.chi, st.r, st.L, st.L_bar, 0.0, iterations)
    ver = verify_allocation(np.sqrt(rho), L_int, stats, scenario, mode, L_max)
    energy = total_energy(rho, BlocklengthPlan(L_int, L_p), scenario, kind,
                          include_sensing=mode.has_sensing)
    return AllocationResult(mode, kind, rho, L_int, L_max, L_p, energy.e_total, ver.ok, converged,
                            iterations, state, tuple(trace), energy, ver, time.perf_counter() - t0,
                            message, L_cont, tuple(seen))


@dataclass(frozen=True)
class DropRecord:
    drop: int
    L_max: int
    feasible: bool
    L_opt: int
    e_total: float
    message: str = ""


@dataclass(frozen=True)
class AvailabilityReport:
    fraction: float
    records: tuple[DropRecord, ...] = field(default_factory=tuple)


def network_availability(scenarios: Callable[[int], object] | Iterable, n_drops: int,
                         mode: Mode | str = Mode.E2E_ISAC,
                         kind: DetectorKind | str = DetectorKind.CLUTTER_AWARE,
                         n_mc: int = DEFAULT_N_MC,
                         options: AlgorithmOptions = AlgorithmOptions(),
                         moments: Callable[[object], MomentStats] | None = None) -> AvailabilityReport:
    """Fraction of random drops for which the allocation problem is feasible.

    ``scenarios`` maps a drop index to a scenario, or is an iterable of scenarios.
    ``moments`` supplies the statistics of a scenario (default: a fresh
    :func:`~cfisac.moments.estimate_moments` with ``n_mc`` realizations); a
    cached callable lets several requirement grids share one set of drops.
    """
    if n_drops < 1:
        raise ValueError("n_drops must be >= 1")
    if callable(scenarios):
        gen = (scenarios(d) for d in range(n_drops))
    else:
        gen = iter(scenarios)
    records = []
    for d in range(n_drops):
        sc = next(gen)
        r = sc.radio
        try:
            L_max = max_blocklength(sc.urllc, sc.sensing, r.bandwidth, r.pilot_length)
        except InfeasibleScenarioError as exc:
            records.append(DropRecord(d, 0, False, 0, math.inf, str(exc)))
            continue
        stats = estimate_moments(sc, n_mc) if moments is None else moments(sc)
        res = run_algorithm1(sc, stats, mode, options, kind)
        records.append(DropRecord(d, L_max, res.feasible, res.L_opt, res.objective, res.message))
    frac = sum(rec.feasible for rec in records) / n_drops
    return AvailabilityReport(frac, tuple(records))
