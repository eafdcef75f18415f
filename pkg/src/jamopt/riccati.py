"""Finite-horizon Riccati integration: classical LQR and the jammer-gated form.

The gated equation drops its quadratic term wherever the jammer is off, so it
alternates between a Lyapunov flow and a full Riccati flow. The activation set
is taken from an already-solved extremal rather than solved self-consistently,
which turns the equation into a verifiable consistency check on the relation
p(t) = -P(t) z(t).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from jamopt.extremal import Extremal, on_intervals
from jamopt.model import LqProblem
from jamopt.numkernel import DEFAULT_STEPS, IntegrationError, mat_exp

__all__ = [
    "RiccatiSolution",
    "classical_lqr",
    "hybrid_riccati_from_extremal",
    "lqr_feedback_rollout",
]

_BLOWUP_LIMIT = 1e14


@dataclass(frozen=True)
class RiccatiSolution:
    """Time-sampled P(t), increasing in t, plus the activation intervals."""

    times: np.ndarray
    P: np.ndarray
    active_set: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if P.shape[0] != times.shape[0] or P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ValueError("one square P sample per time required")
        if times.size >= 2 and not np.all(np.diff(times) > 0.0):
            raise ValueError("sample times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "active_set", tuple(map(tuple, self.active_set)))

    def at_time(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        return self.P[idx]


def _riccati_rhs(P, AT, A, Q, BRB, on: bool):
    drift = AT @ P + P @ A + Q
    if on:
        drift = drift - P @ BRB @ P
    return -drift


def _integrate_backward(times, Qf, AT, A, Q, BRB, on_flags) -> np.ndarray:
    """RK4 the Riccati flow backward over `times`; on_flags gates per step."""
    n = times.shape[0]
    d = Qf.shape[0]
    P_all = np.empty((n, d, d))
    P = np.array(Qf, dtype=float)
    P_all[n - 1] = P
    for i in range(n - 2, -1, -1):
        h = times[i] - times[i + 1]  # negative
        on = bool(on_flags[i])
        k1 = _riccati_rhs(P, AT, A, Q, BRB, on)
        k2 = _riccati_rhs(P + (0.5 * h) * k1, AT, A, Q, BRB, on)
        k3 = _riccati_rhs(P + (0.5 * h) * k2, AT, A, Q, BRB, on)
        k4 = _riccati_rhs(P + h * k3, AT, A, Q, BRB, on)
        P = P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P = 0.5 * (P + P.T)  # control symmetry drift step by step
        if not np.all(np.isfinite(P)) or float(np.max(np.abs(P))) > _BLOWUP_LIMIT:
            raise IntegrationError("Riccati blowup")
        P_all[i] = P
    return P_all


def classical_lqr(problem: LqProblem, steps: int = DEFAULT_STEPS) -> RiccatiSolution:
    """Standard backward Riccati sweep from P(t_end) = Qf, gamma ignored."""
    times = np.linspace(problem.t_start, problem.t_end, steps + 1)
    system = problem.system
    RinvBT = np.linalg.solve(problem.R, system.B.T)
    BRB = system.B @ RinvBT
    P = _integrate_backward(
        times, problem.Qf, system.A.T, system.A, problem.Q, BRB, np.ones(steps, bool)
    )
    return RiccatiSolution(
        times=times, P=P, active_set=((problem.t_start, problem.t_end),)
    )


def hybrid_riccati_from_extremal(
    extremal: Extremal, problem: LqProblem
) -> RiccatiSolution:
    """Backward sweep of the jammer-gated Riccati equation along the extremal.

    The sweep visits exactly the extremal's sample times, whose switch samples
    make every regime boundary a grid point. Within a regime the equation is
    propagated through the linear flow of the block matrix
    [[A, B R^{-1} B^T 1_on], [Q, -A^T]] acting on a (X, Y) basis with
    P = -Y X^{-1}: backward integration of the quadratic form itself is stiff
    across long jammer-off stretches of an unstable plant (the value function
    grows exponentially there and collapses in a boundary layer once the
    quadratic term re-engages), while the linear flow is exact per step.
    """
    traj = extremal.trajectory
    span = problem.t_end - problem.t_start
    if (
        abs(traj.t_start - problem.t_start) > 1e-9 * span
        or abs(traj.t_end - problem.t_end) > 1e-9 * span
    ):
        raise ValueError("mismatched horizon")
    if extremal.problem_kind == "reach":
        raise ValueError("hybrid Riccati applies to LQ extremals only")

    active = on_intervals(extremal)
    times = traj.times
    mids = 0.5 * (times[:-1] + times[1:])
    on_flags = np.zeros(mids.shape[0], dtype=bool)
    for a, b in active:
        on_flags |= (mids >= a) & (mids <= b)

    system = problem.system
    d = system.d
    RinvBT = np.linalg.solve(problem.R, system.B.T)
    BRB = system.B @ RinvBT
    flow_on = np.block([[system.A, BRB], [problem.Q, -system.A.T]])
    flow_off = np.block([[system.A, np.zeros((d, d))], [problem.Q, -system.A.T]])

    n = times.shape[0]
    P_all = np.empty((n, d, d))
    X = np.eye(d)
    Y = -np.array(problem.Qf, dtype=float)
    P_all[n - 1] = problem.Qf
    step_cache: dict = {}
    for i in range(n - 2, -1, -1):
        h = float(times[i + 1] - times[i])
        on = bool(on_flags[i])
        key = (on, h)
        prop = step_cache.get(key)
        if prop is None:
            prop = mat_exp(-h * (flow_on if on else flow_off))
            if len(step_cache) < 8:
                step_cache[key] = prop
        XY = prop @ np.vstack([X, Y])
        if not np.all(np.isfinite(XY)):
            raise IntegrationError("Riccati blowup")
        # Re-orthonormalize the frame each step: P = -Y X^{-1} is invariant
        # under right-multiplication, and a clean frame stops the extreme
        # conditioning at the layer from contaminating the rest of the sweep.
        XY, _ = np.linalg.qr(XY)
        X, Y = XY[:d], XY[d:]
        try:
            P = -np.linalg.solve(X.T, Y.T).T
        except np.linalg.LinAlgError as exc:
            raise IntegrationError("Riccati blowup") from exc
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)) or float(np.max(np.abs(P))) > _BLOWUP_LIMIT:
            raise IntegrationError("Riccati blowup")
        P_all[i] = P
    return RiccatiSolution(times=times, P=P_all, active_set=tuple(active))


def lqr_feedback_rollout(solution: RiccatiSolution, problem: LqProblem):
    """Roll the closed loop z' = (A - B R^{-1} B^T P(t)) z on the P grid.

    Returns (times, states, controls) with u = -R^{-1} B^T P z at the samples.
    P is averaged between adjacent samples for the RK4 midpoint stages, which
    is well inside the accuracy needed by the comparison checks.
    """
    system = problem.system
    RinvBT = np.linalg.solve(problem.R, system.B.T)
    BRB = system.B @ RinvBT
    A = system.A
    times = solution.times
    n = times.shape[0]
    Z = np.empty((n, system.d))
    z = np.array(problem.z_start, dtype=float)
    Z[0] = z
    for i in range(n - 1):
        h = times[i + 1] - times[i]
        Ma = A - BRB @ solution.P[i]
        Mb = A - BRB @ solution.P[i + 1]
        Mm = 0.5 * (Ma + Mb)
        k1 = Ma @ z
        k2 = Mm @ (z + (0.5 * h) * k1)
        k3 = Mm @ (z + (0.5 * h) * k2)
        k4 = Mb @ (z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise IntegrationError("non-finite state during feedback rollout")
        Z[i + 1] = z
    U = -np.einsum("ij,nj->ni", RinvBT, np.einsum("nij,nj->ni", solution.P, Z))
    return times, Z, U
