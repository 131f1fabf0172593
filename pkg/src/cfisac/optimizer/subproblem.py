"""Per-iteration convex subproblem of the joint power/blocklength allocation.

Decision vector layout (all scaled to order one)::

    u    stream amplitudes, q_j = sqrt(P_tx) * u_j, one per active stream
    chi  per-UE SINR epigraph variables
    v    per-UE fractional-programming variables, r_i = r_ref_i * sigma2 * v_i
    L    blocklength (continuous)
    ell  scaled inverse data length, L_bar = ell / (L_max - L_p)
    chi0 sensing slack, normalised by gamma * M * N_rx * sigma2 (optional)

Every constraint is written ``f(z) <= 0`` with convex, smooth ``f``. The
second-order-cone SINR rows use the quadratic-over-linear form
``(interference + signal + noise) / r <= 1 + chi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..energy import objective_terms
from ..kinds import DetectorKind, Mode
from ..metrics import BlocklengthPlan, max_blocklength, q_inv
from ..moments import MomentStats
from .barrier import BarrierOptions, barrier_solve, find_interior_point

ELL_MIN = 1e-3
RESCALE_ROUNDS = 4
RESCALE_RATIO = 0.5


class SubproblemError(ValueError):
    """Frozen constants that make the subproblem ill-posed."""


@dataclass(frozen=True, eq=False)
class IterateState:
    """Point of the reformulated problem; ``q`` in sqrt(W), ``r`` in W."""

    q: np.ndarray
    chi: np.ndarray
    r: np.ndarray
    L: float
    L_bar: float
    chi0: float = 0.0
    iteration: int = 0

    @property
    def rho(self) -> np.ndarray:
        return np.clip(self.q, 0.0, None) ** 2

    def tightness(self, L_p: int) -> float:
        """``L_bar * (L - L_p) - 1``; zero when the inverse-length bound is active."""
        return self.L_bar * (self.L - L_p) - 1.0


@dataclass(frozen=True)
class Tolerances:
    gap_tol: float = 1e-7
    max_newton: int = 200
    max_violation: float = 1e-8


class ConvexSubproblem:
    """Convexified problem around ``state`` with every constant frozen.

    Attributes
    ----------
    streams : tuple of int
        Stream indices carried as variables (0 is the sensing stream).
    slack : bool
        Whether the sensing row carries the penalised slack ``chi0``.
    """

    def __init__(self, state: IterateState, stats: MomentStats, scenario, mode: Mode,
                 kind: DetectorKind, penalty: float, slack: bool, L_max: int, n_gpp: int):
        r = scenario.radio
        self.mode = mode
        self.kind = kind
        self.N = r.num_ues
        self.L_p = r.pilot_length
        self.L_max = L_max
        self.span = float(L_max - r.pilot_length)
        self.B = r.bandwidth
        self.P = r.max_tx_power
        self.sqP = math.sqrt(self.P)
        self.sigma2 = r.noise_power
        self.penalty = float(penalty)
        self.state = state

        self.streams = tuple(range(self.N + 1)) if mode.has_sensing else tuple(range(1, self.N + 1))
        self.nS = len(self.streams)
        self.own = np.array([self.streams.index(i + 1) for i in range(self.N)])
        gamma = scenario.sensing.sinr_threshold
        self.sensing = mode.has_sensing and gamma > 0
        self.slack = bool(slack and self.sensing)

        # variable offsets
        self.iu = np.arange(self.nS)
        self.ichi = self.nS + np.arange(self.N)
        self.iv = self.nS + self.N + np.arange(self.N)
        self.iL = self.nS + 2 * self.N
        self.iell = self.iL + 1
        self.ichi0 = self.iell + 1 if self.slack else None
        self.n = self.iell + 1 + (1 if self.slack else 0)

        sel = np.array(self.streams)
        b2 = np.asarray(stats.b, float) ** 2 / self.sigma2
        a2 = np.asarray(stats.a, float)[:, sel] ** 2 / self.sigma2
        self.w = a2.copy()
        self.w[np.arange(self.N), self.own] += b2
        self.w *= self.P
        self.F2 = np.asarray(stats.F, float)[:, sel] ** 2

        q_t = np.asarray(state.q, float)
        r_t = np.asarray(state.r, float) / self.sigma2
        ell_t = state.L_bar * self.span
        if np.any(r_t <= 0) or not np.all(np.isfinite(r_t)):
            raise SubproblemError("frozen r must be positive")
        if not (ell_t > 0 and math.isfinite(ell_t)):
            raise SubproblemError("frozen L_bar must be positive")
        if np.any(q_t < 0):
            raise SubproblemError("frozen amplitudes must be nonnegative")
        self.r_ref = r_t
        self.ell_t = ell_t
        q_own = q_t[1:]
        self.c1 = 2 * q_own * b2 * self.sqP / r_t
        self.c2 = q_own ** 2 * b2 / r_t
        eps = np.array([u.dep_threshold for u in scenario.urllc], float)
        self.qinv = q_inv(eps)
        self.bits = np.array([u.packet_bits for u in scenario.urllc], float) * math.log(2.0)

        if self.sensing:
            M, Nrx = r.antennas_per_ap, r.num_rx_aps
            d0 = gamma * M * Nrx * self.sigma2
            A = np.asarray(stats.A_D, float)[sel]
            Bd = np.asarray(stats.B_D, float)[sel]
            qs = q_t[sel]
            self.sB = gamma * Bd * self.P / d0
            self.sA = 2 * M * A * qs * self.sqP / d0
            self.s0 = M * np.sum(A * qs ** 2) / d0 + 1.0

        include = mode.has_sensing
        plan = BlocklengthPlan(int(min(max(round(state.L), self.L_p + 1), L_max)), self.L_p)
        terms = objective_terms(scenario, plan, kind, include_sensing=include, n_gpp=n_gpp)
        self.terms = terms
        self.delta_tr = scenario.power_model.delta_tr
        self.n_gpp = n_gpp
        # row bookkeeping
        self.n_tx = self.F2.shape[0]
        names = ["ccp_L"] + [f"reliability[{i}]" for i in range(self.N)] \
            + [f"sinr_soc[{i}]" for i in range(self.N)]
        if self.sensing:
            names.append("sensing")
        names += [f"per_ap[{k}]" for k in range(self.n_tx)]
        names += ["L_min", "L_max", "L_bar_min"] + [f"q_nonneg[{j}]" for j in self.streams] \
            + [f"chi_nonneg[{i}]" for i in range(self.N)]
        if self.slack:
            names.append("chi0_nonneg")
        self.row_names = names
        self.m = len(names)
        self.obj_scale = 1.0

    # -- packing ------------------------------------------------------------

    def pack(self, state: IterateState) -> np.ndarray:
        z = np.zeros(self.n)
        z[self.iu] = np.asarray(state.q, float)[list(self.streams)] / self.sqP
        z[self.ichi] = state.chi
        z[self.iv] = np.asarray(state.r, float) / self.sigma2 / self.r_ref
        z[self.iL] = state.L
        z[self.iell] = state.L_bar * self.span
        if self.slack:
            z[self.ichi0] = state.chi0
        return z

    def unpack(self, z: np.ndarray, iteration: int = 0) -> IterateState:
        q = np.zeros(self.N + 1)
        q[list(self.streams)] = np.clip(z[self.iu], 0.0, None) * self.sqP
        chi0 = float(z[self.ichi0]) if self.slack else 0.0
        return IterateState(q, np.array(z[self.ichi]), z[self.iv] * self.r_ref * self.sigma2,
                            float(z[self.iL]), float(z[self.iell] / self.span), chi0, iteration)

    # -- objective ----------------------------------------------------------

    def energy(self, z: np.ndarray) -> float:
        """Unscaled energy objective without the slack penalty, J."""
        u, L, ell = z[self.iu], z[self.iL], z[self.iell]
        tx = self.delta_tr * self.span * self.P * (u @ u) / (self.B * ell)
        if self.mode is Mode.TX_ONLY_ISAC:
            return float(tx)
        t = self.terms
        return float((L * t.p_fixed_total + (L - self.L_p) * t.f2) / self.B + tx)

    def floor_value(self) -> float:
        """Lower bound of :meth:`energy` over the variable box (zero power, shortest block)."""
        if self.mode is Mode.TX_ONLY_ISAC:
            return 0.0
        t = self.terms
        L = self.L_p + 1
        return float((L * t.p_fixed_total + t.f2) / self.B)

    def ell_bound(self, z: np.ndarray) -> float:
        """Largest scaled inverse length allowed by the CCP row at ``z``."""
        return self.ell_t ** 2 * (2 / self.ell_t - (z[self.iL] - self.L_p) / self.span)

    def value(self, z: np.ndarray) -> float:
        """Unscaled objective including the slack penalty."""
        pen = self.penalty * z[self.ichi0] if self.slack else 0.0
        return self.energy(z) + float(pen)

    def objective(self, z):
        n = self.n
        g = np.zeros(n)
        H = np.zeros((n, n))
        u, ell = z[self.iu], z[self.iell]
        k = self.delta_tr * self.span * self.P / self.B
        uu = u @ u
        f = k * uu / ell
        g[self.iu] = 2 * k * u / ell
        g[self.iell] = -k * uu / ell ** 2
        H[self.iu, self.iu] = 2 * k / ell
        H[self.iu, self.iell] = H[self.iell, self.iu] = -2 * k * u / ell ** 2
        H[self.iell, self.iell] = 2 * k * uu / ell ** 3
        if self.mode is not Mode.TX_ONLY_ISAC:
            t = self.terms
            c = (t.p_fixed_total + t.f2) / self.B
            f += c * z[self.iL] - self.L_p * t.f2 / self.B
            g[self.iL] += c
        if self.slack:
            f += self.penalty * z[self.ichi0]
            g[self.ichi0] += self.penalty
        s = self.obj_scale
        return float(f * s), g * s, H * s

    # -- constraints --------------------------------------------------------

    def in_domain(self, z) -> bool:
        return bool(np.all(z[self.iv] > 0) and z[self.iell] > 0 and z[self.iL] > self.L_p
                    and np.all(z[self.ichi] > -1) and np.all(np.isfinite(z)))

    def constraints(self, z):
        N, n = self.N, self.n
        u, chi, v = z[self.iu], z[self.ichi], z[self.iv]
        L, ell = z[self.iL], z[self.iell]
        d = L - self.L_p
        vals = np.empty(self.m)
        J = np.zeros((self.m, n))
        row = 0
        # inverse-length CCP row
        vals[row] = d / self.span - 2 / self.ell_t + ell / self.ell_t ** 2
        J[row, self.iL] = 1 / self.span
        J[row, self.iell] = 1 / self.ell_t ** 2
        row += 1
        # reliability rows
        rr = slice(row, row + N)
        rng = np.arange(N)
        vals[rr] = (-np.log1p(chi) + chi - self.c1 * u[self.own] + self.c2 * v
                    + self.qinv / math.sqrt(d) + self.bits / d)
        J[row + rng, self.ichi] = 1 - 1 / (1 + chi)
        J[row + rng, self.iu[self.own]] = -self.c1
        J[row + rng, self.iv] = self.c2
        J[rr, self.iL] = -0.5 * self.qinv * d ** -1.5 - self.bits / d ** 2
        row += N
        # SINR cone rows
        num = self.w @ (u * u) + 1.0
        den = self.r_ref * v
        vals[row:row + N] = num / den - 1 - chi
        J[row:row + N, self.iu] = 2 * self.w * u / den[:, None]
        J[row + rng, self.iv] = -num * self.r_ref / den ** 2
        J[row + rng, self.ichi] = -1.0
        row += N
        if self.sensing:
            vals[row] = self.sB @ (u * u) - self.sA @ u + self.s0
            J[row, self.iu] = 2 * self.sB * u - self.sA
            if self.slack:
                vals[row] -= z[self.ichi0]
                J[row, self.ichi0] = -1.0
            row += 1
        k = self.n_tx
        vals[row:row + k] = self.F2 @ (u * u) - 1.0
        J[row:row + k, self.iu] = 2 * self.F2 * u
        row += k
        vals[row] = (self.L_p + 1 - L) / self.span
        J[row, self.iL] = -1 / self.span
        vals[row + 1] = (L - self.L_max) / self.span
        J[row + 1, self.iL] = 1 / self.span
        vals[row + 2] = ELL_MIN - ell
        J[row + 2, self.iell] = -1.0
        row += 3
        vals[row:row + self.nS] = -u
        J[row + np.arange(self.nS), self.iu] = -1.0
        row += self.nS
        vals[row:row + N] = -chi
        J[row + rng, self.ichi] = -1.0
        row += N
        if self.slack:
            vals[row] = -z[self.ichi0]
            J[row, self.ichi0] = -1.0
        return vals, J

    def constraint_hessian(self, z, wts):
        N, n = self.N, self.n
        H = np.zeros((n, n))
        u, chi, v, L = z[self.iu], z[self.ichi], z[self.iv], z[self.iL]
        d = L - self.L_p
        w_rel = wts[1:1 + N]
        w_soc = wts[1 + N:1 + 2 * N]
        H[self.ichi, self.ichi] += w_rel / (1 + chi) ** 2
        H[self.iL, self.iL] += np.sum(w_rel * (0.75 * self.qinv * d ** -2.5 + 2 * self.bits / d ** 3))
        den = self.r_ref * v
        num = self.w @ (u * u) + 1.0
        wu = w_soc / den
        H[np.ix_(self.iu, self.iu)] += np.diag(2 * (wu @ self.w))
        cross = -2 * self.w * u * (w_soc * self.r_ref / den ** 2)[:, None]
        H[np.ix_(self.iu, self.iv)] += cross.T
        H[np.ix_(self.iv, self.iu)] += cross
        H[self.iv, self.iv] += w_soc * 2 * num * self.r_ref ** 2 / den ** 3
        row = 1 + 2 * N
        if self.sensing:
            H[self.iu, self.iu] += 2 * wts[row] * self.sB
            row += 1
        k = self.n_tx
        H[self.iu, self.iu] += 2 * (wts[row:row + k] @ self.F2)
        return H

    def violations(self, z) -> dict:
        vals, _ = self.constraints(z)
        return {name: float(v) for name, v in zip(self.row_names, vals) if v > 0}


def build_subproblem(state: IterateState, stats: MomentStats, scenario, mode: Mode | str,
                     kind: DetectorKind | str = DetectorKind.CLUTTER_AWARE, *, penalty: float = 10.0,
                     slack: bool = True, L_max: int | None = None,
                     n_gpp: int | None = None) -> ConvexSubproblem:
    """Convexify the allocation problem around ``state``.

    ``n_gpp`` freezes the processor count; by default it is taken at the
    blocklength of ``state``.
    """
    mode = Mode.parse(mode)
    kind = DetectorKind.parse(kind)
    r = scenario.radio
    if L_max is None:
        L_max = max_blocklength(scenario.urllc, scenario.sensing, r.bandwidth, r.pilot_length)
    if n_gpp is None:
        L_int = int(min(max(round(state.L), r.pilot_length + 1), L_max))
        n_gpp = objective_terms(scenario, BlocklengthPlan(L_int, r.pilot_length), kind,
                                include_sensing=mode.has_sensing).n_gpp
    return ConvexSubproblem(state, stats, scenario, mode, kind, penalty, slack, L_max, n_gpp)


@dataclass(frozen=True)
class SubproblemSolution:
    state: IterateState
    objective: float
    energy: float
    floor: float
    max_violation: float
    newton_steps: int
    phase_one: bool


def _domain_start(sub: ConvexSubproblem) -> np.ndarray:
    z = sub.pack(sub.state)
    lo = sub.L_p + 1
    z[sub.iL] = min(max(z[sub.iL], lo + 1e-6), sub.L_max)
    z[sub.iu] = np.maximum(z[sub.iu], 1e-9)
    z[sub.ichi] = np.maximum(z[sub.ichi], 1e-9)
    z[sub.iv] = np.maximum(z[sub.iv], 1e-12)
    z[sub.iell] = max(z[sub.iell], ELL_MIN * 1.001)
    if sub.slack:
        # slack just large enough to make the sensing row strictly feasible
        u = z[sub.iu]
        row = sub.sB @ (u * u) - sub.sA @ u + sub.s0
        z[sub.ichi0] = max(z[sub.ichi0], row, 0.0) + 1e-6
    return z


def solve_subproblem(sub: ConvexSubproblem, tolerances: Tolerances = Tolerances(),
                     iteration: int = 0) -> SubproblemSolution:
    """Solve to a duality-gap bound of ``gap_tol * (1 + |objective|)``.

    Raises
    ------
    InfeasibleProblem
        When no strictly feasible point exists.
    NewtonLimitExceeded
        When a centering step does not converge.
    """
    opts = BarrierOptions(gap_tol=tolerances.gap_tol, max_newton=tolerances.max_newton)
    z0 = _domain_start(sub)
    vals, _ = sub.constraints(z0)
    phase_one = not np.all(vals < 0)
    if phase_one:
        z0 = find_interior_point(sub, z0, opts=opts)
    # bring the objective to order one; the stopping rule is relative to the
    # scaled objective, so rescale and re-solve while the optimum lands far
    # below the reference (a large phase-I slack inflates the first value)
    f_ref = sub.value(z0)
    steps = 0
    z = z0
    for _ in range(RESCALE_ROUNDS):
        sub.obj_scale = 1.0 / f_ref if f_ref > 0 else 1.0
        res = barrier_solve(sub, z, opts)
        z = res.z
        steps += res.newton_steps
        f_new = sub.value(z)
        if not 0 < f_new < RESCALE_RATIO * f_ref:
            break
        f_ref = f_new
    # the inverse length enters only its CCP row and the objective, which does
    # not increase with it, so moving it onto the row is an exact minimisation
    z = z.copy()
    z[sub.iell] = max(z[sub.iell], sub.ell_bound(z))
    return SubproblemSolution(sub.unpack(z, iteration), sub.value(z), sub.energy(z),
                              sub.floor_value(), res.max_violation, steps, phase_one)
