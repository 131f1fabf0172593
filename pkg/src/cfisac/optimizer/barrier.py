"""Log-barrier interior-point method for smooth convex programs.

Solves ``minimize f0(z) subject to f_i(z) <= 0`` where every ``f_i`` is convex
and twice differentiable on an open domain. Each centering step is a damped
Newton method with Armijo backtracking that never leaves the strict interior.
A phase-I problem (``minimize s subject to f_i(z) <= s``) supplies a strictly
feasible start when the given point is not one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.linalg


class ConvexProgram(Protocol):
    n: int
    m: int

    def objective(self, z: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]: ...

    def constraints(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    def constraint_hessian(self, z: np.ndarray, w: np.ndarray) -> np.ndarray: ...

    def in_domain(self, z: np.ndarray) -> bool: ...


class InfeasibleProblem(RuntimeError):
    """Phase I could not find a strictly feasible point."""

    def __init__(self, message: str, s_min: float, worst: int | None = None):
        super().__init__(message)
        self.s_min = s_min
        self.worst = worst


class NewtonLimitExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class BarrierOptions:
    mu0: float = 1.0
    mu_factor: float = 10.0
    gap_tol: float = 1e-7
    newton_tol: float = 1e-9
    # decrement accepted when the step limit is hit at the round-off floor
    stall_tol: float = 1e-6
    max_newton: int = 200
    armijo: float = 1e-4
    shrink: float = 0.5
    max_stages: int = 40


@dataclass
class BarrierResult:
    z: np.ndarray
    objective: float
    newton_steps: int
    stages: int
    gap: float
    max_violation: float
    log: list = field(default_factory=list)


def _barrier_eval(prog: ConvexProgram, z: np.ndarray, t: float, need_hess: bool = True):
    if not prog.in_domain(z):
        return math.inf, None, None
    vals, J = prog.constraints(z)
    if np.any(vals >= 0) or not np.all(np.isfinite(vals)):
        return math.inf, None, None
    f, g, H = prog.objective(z)
    if not math.isfinite(f):
        return math.inf, None, None
    inv = -1.0 / vals
    phi = t * f - np.sum(np.log(-vals))
    grad = t * g + J.T @ inv
    if not need_hess:
        return phi, grad, None
    hess = t * H + (J.T * inv ** 2) @ J + prog.constraint_hessian(z, inv)
    return phi, grad, hess


def _newton_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    hess = 0.5 * (hess + hess.T)
    try:
        cf = scipy.linalg.cho_factor(hess, lower=True, check_finite=False)
        return -scipy.linalg.cho_solve(cf, grad, check_finite=False)
    except np.linalg.LinAlgError:
        # tiny diagonal shift for numerically semidefinite Hessians
        scale = max(np.max(np.abs(np.diag(hess))), 1.0)
        shifted = hess + 1e-12 * scale * np.eye(hess.shape[0])
        return -np.linalg.solve(shifted, grad)


def _center(prog: ConvexProgram, z: np.ndarray, t: float, opts: BarrierOptions,
            stop=None) -> tuple[np.ndarray, int]:
    steps = 0
    phi, grad, hess = _barrier_eval(prog, z, t)
    if not math.isfinite(phi):
        raise ValueError("centering started outside the strict interior")
    while True:
        dz = _newton_direction(grad, hess)
        dec2 = float(-grad @ dz)
        if dec2 / 2 <= opts.newton_tol:
            return z, steps
        if steps >= opts.max_newton:
            if dec2 / 2 <= opts.stall_tol:
                return z, steps
            raise NewtonLimitExceeded(f"Newton limit {opts.max_newton} reached (decrement {dec2:.3g})")
        step = 1.0
        while True:
            z_new = z + step * dz
            phi_new, _, _ = _barrier_eval(prog, z_new, t, need_hess=False)
            if phi_new <= phi - opts.armijo * step * dec2:
                break
            step *= opts.shrink
            if step < 1e-20:
                return z, steps
        z = z_new
        steps += 1
        if stop is not None and stop(z):
            return z, steps
        phi, grad, hess = _barrier_eval(prog, z, t)


def barrier_solve(prog: ConvexProgram, z0: np.ndarray, opts: BarrierOptions = BarrierOptions(),
                  stop=None) -> BarrierResult:
    """Minimise from a strictly feasible ``z0``.

    Stops once the duality-gap bound ``m / t`` is at most
    ``gap_tol * (1 + |f0|)``. ``stop(z)`` may end the run early.
    """
    z = np.array(z0, dtype=float)
    t = 1.0 / opts.mu0
    total = 0
    log = []
    for stage in range(1, opts.max_stages + 1):
        z, steps = _center(prog, z, t, opts, stop)
        total += steps
        f = prog.objective(z)[0]
        gap = prog.m / t
        log.append((t, f, steps))
        if stop is not None and stop(z):
            break
        if gap <= opts.gap_tol * (1.0 + abs(f)):
            break
        t *= opts.mu_factor
    vals, _ = prog.constraints(z)
    return BarrierResult(z, prog.objective(z)[0], total, stage, prog.m / t,
                         float(max(np.max(vals), 0.0)), log)


class PhaseOne:
    """``minimize s subject to f_i(z) <= s`` over ``(z, s)``.

    Only the rows flagged in ``shifted`` are relaxed by ``s``; rows already
    strictly satisfied at the start stay hard, which keeps the iterates away
    from the edges of the domain. A ball of radius ``radius`` around the start
    keeps the problem bounded when some variables can grow without cost.
    """

    def __init__(self, prog: ConvexProgram, center: np.ndarray, shifted: np.ndarray | None = None,
                 radius: float = 1e4):
        self.prog = prog
        self.center = np.asarray(center, dtype=float)
        self.shifted = (np.ones(prog.m, bool) if shifted is None
                        else np.asarray(shifted, bool)).astype(float)
        self.r2 = radius ** 2
        self.n = prog.n + 1
        self.m = prog.m + 1

    def objective(self, zs):
        g = np.zeros(self.n)
        g[-1] = 1.0
        return float(zs[-1]), g, np.zeros((self.n, self.n))

    def constraints(self, zs):
        z = zs[:-1]
        vals, J = self.prog.constraints(z)
        d = z - self.center
        ball = (d @ d) / self.r2 - 1.0
        J = np.vstack([np.hstack([J, -self.shifted[:, None]]),
                       np.append(2 * d / self.r2, 0.0)])
        return np.append(vals - self.shifted * zs[-1], ball), J

    def constraint_hessian(self, zs, w):
        H = np.zeros((self.n, self.n))
        H[:-1, :-1] = self.prog.constraint_hessian(zs[:-1], w[:-1])
        H[:-1, :-1] += 2 * w[-1] / self.r2 * np.eye(self.n - 1)
        return H

    def in_domain(self, zs):
        return self.prog.in_domain(zs[:-1])


def find_interior_point(prog: ConvexProgram, z0: np.ndarray, margin: float = 1e-4,
                        opts: BarrierOptions = BarrierOptions()) -> np.ndarray:
    """Return a point with every ``f_i < 0``, starting from domain point ``z0``.

    Raises
    ------
    InfeasibleProblem
        When the phase-I optimum is not negative.
    """
    if not prog.in_domain(z0):
        raise ValueError("phase-I start must lie in the domain")
    vals, _ = prog.constraints(z0)
    if np.all(vals < -margin):
        return np.array(z0, dtype=float)
    s0 = float(np.max(vals)) + 1.0
    ph = PhaseOne(prog, z0, shifted=vals >= -margin)
    zs = np.append(np.asarray(z0, dtype=float), s0)
    res = barrier_solve(ph, zs, opts, stop=lambda v: v[-1] < -margin)
    s = float(res.z[-1])
    vals, _ = prog.constraints(res.z[:-1])
    if np.max(vals) >= 0:
        worst = int(np.argmax(vals))
        raise InfeasibleProblem(f"no strictly feasible point (phase-I optimum {s:.3g})", s, worst)
    return res.z[:-1]
