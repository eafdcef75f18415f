"""Closed-form extremal control laws and coupled state-adjoint fields.

The reach laws maximize a linear functional over an axis-aligned box; the LQ
laws gate a linear-quadratic feedback on a quadratic activation threshold.
Tie rule everywhere: the "on" branch applies exactly on the switching surface,
and integration restarts at localized crossings take the post-crossing regime,
so the jammer signal is right-continuous.

All functions here are pure and safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from jamopt.model import ControlBox, LqProblem, LtiSystem, ReachProblem
from jamopt.numkernel import EventSpec, Trajectory, mat_exp

if TYPE_CHECKING:  # pragma: no cover - import cycle guard for annotations only
    from jamopt.analysis import CostBreakdown

__all__ = [
    "AdjointInit",
    "Extremal",
    "reach_u1",
    "reach_sigma",
    "reach_u2",
    "reach_field",
    "make_reach_field",
    "adjoint_closed_form",
    "lq_q",
    "lq_controls",
    "lq_field",
    "make_lq_field",
    "hamiltonian",
    "sparse_lq_control",
    "on_intervals",
]


@dataclass(frozen=True)
class AdjointInit:
    """Initial adjoint value together with the abnormal multiplier."""

    p0: np.ndarray
    eta: int

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float).reshape(-1)
        eta = int(self.eta)
        if eta not in (0, 1):
            raise ValueError("eta must be 0 or 1")
        if eta == 0 and not np.any(p0 != 0.0):
            raise ValueError("nontriviality violated: (eta, p0) = 0")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "eta", eta)


@dataclass(frozen=True)
class Extremal:
    """Solved state-adjoint-control trajectory with per-sample diagnostics.

    trajectory.states stacks (z, p) rows of width 2d. u1 and u2 align with
    trajectory.times; u2 entries are 0/1 and, for the LQ kind, u1 vanishes
    wherever u2 does.
    """

    trajectory: Trajectory
    u1: np.ndarray
    u2: np.ndarray
    hamiltonian: np.ndarray
    eta: int
    cost: "Optional[CostBreakdown]"
    problem_kind: str

    def __post_init__(self):
        n = self.trajectory.times.shape[0]
        u1 = np.asarray(self.u1, dtype=float)
        u2 = np.asarray(self.u2)
        ham = np.asarray(self.hamiltonian, dtype=float)
        if u1.shape[0] != n or u2.shape != (n,) or ham.shape != (n,):
            raise ValueError("control and Hamiltonian samples must align with times")
        if not np.all((u2 == 0) | (u2 == 1)):
            raise ValueError("u2 samples must lie in {0, 1}")
        if self.problem_kind not in ("reach", "lq", "sparse_lq"):
            raise ValueError(f"unknown problem kind {self.problem_kind!r}")
        if self.problem_kind in ("lq", "sparse_lq") and np.any(
            np.abs(u1[u2 == 0]) > 0.0
        ):
            raise ValueError("u1 must vanish wherever u2 = 0 for the LQ kind")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", np.asarray(u2, dtype=int))
        object.__setattr__(self, "hamiltonian", ham)
        object.__setattr__(self, "eta", int(self.eta))

    @property
    def d(self) -> int:
        return self.trajectory.states.shape[1] // 2

    @property
    def z(self) -> np.ndarray:
        return self.trajectory.states[:, : self.d]

    @property
    def p(self) -> np.ndarray:
        return self.trajectory.states[:, self.d :]


def reach_u1(p, system: LtiSystem, box: ControlBox) -> np.ndarray:
    """Componentwise maximizer of <B^T p, v> over the box (0 on ties)."""
    s = system.B.T @ np.asarray(p, dtype=float)
    return np.where(s > 0.0, box.upper, np.where(s < 0.0, box.lower, 0.0))


def reach_sigma(p, system: LtiSystem, box: ControlBox) -> float:
    """Support function of the box at B^T p; the switching functional.

    Evaluated as <B^T p, u1> at the componentwise maximizer so the identity
    sigma = <B^T p, reach_u1(p)> holds exactly in floating point.
    """
    s = system.B.T @ np.asarray(p, dtype=float)
    u1 = np.where(s > 0.0, box.upper, np.where(s < 0.0, box.lower, 0.0))
    return float(s @ u1)


def reach_u2(sigma: float, eta: int) -> int:
    """Jammer decision: always on when eta = 0, else on iff sigma >= 1."""
    if eta == 0:
        return 1
    return 1 if sigma >= 1.0 else 0


def reach_field(t, zp, system: LtiSystem, box: ControlBox, eta: int) -> np.ndarray:
    """Coupled (z, p) dynamics of the reach extremal system."""
    del t
    d = system.d
    z = zp[:d]
    p = zp[d:]
    u1 = reach_u1(p, system, box)
    on = reach_u2(reach_sigma(p, system, box), eta)
    dz = system.A @ z + (system.B @ u1) * on
    dp = -(system.A.T @ p)
    return np.concatenate([dz, dp])


def make_reach_field(system: LtiSystem, box: ControlBox, eta: int):
    """Lean closure form of reach_field plus its switching events.

    With eta = 0 the jammer is identically on and no events are emitted.
    """
    A = system.A
    AT = system.A.T
    B = system.B
    BT = B.T
    lo = box.lower
    up = box.upper
    d = system.d

    if eta == 0:

        def field(t, zp):
            z = zp[:d]
            p = zp[d:]
            s = BT @ p
            u1 = np.where(s > 0.0, up, np.where(s < 0.0, lo, 0.0))
            return np.concatenate([A @ z + B @ u1, -(AT @ p)])

        return field, []

    def field(t, zp):
        z = zp[:d]
        p = zp[d:]
        s = BT @ p
        u1 = np.where(s > 0.0, up, np.where(s < 0.0, lo, 0.0))
        if float(s @ u1) >= 1.0:
            dz = A @ z + B @ u1
        else:
            dz = A @ z
        return np.concatenate([dz, -(AT @ p)])

    def surface(t, zp):
        s = BT @ zp[d:]
        u1 = np.where(s > 0.0, up, np.where(s < 0.0, lo, 0.0))
        return float(s @ u1) - 1.0

    return field, [EventSpec(surface=surface)]


def adjoint_closed_form(p0, system: LtiSystem, t: float, t_start: float) -> np.ndarray:
    """Reach adjoint p(t) = exp(-(t - t_start) A^T) p0 in closed form."""
    return mat_exp(-(t - t_start) * system.A.T) @ np.asarray(p0, dtype=float)


def lq_q(p, system: LtiSystem, R) -> float:
    """Activation functional q = (B^T p)^T R^{-1} (B^T p) >= 0."""
    s = system.B.T @ np.asarray(p, dtype=float)
    return float(s @ np.linalg.solve(np.asarray(R, dtype=float), s))


def lq_controls(p, system: LtiSystem, R, gamma: float, threshold_factor: float = 1.0):
    """LQ extremal controls: u2 = 1 iff q >= threshold_factor * gamma.

    threshold_factor 1.0 is the stated switching rule; 2.0 selects the level
    at which the on/off branches of the Hamiltonian tie exactly.
    """
    p = np.asarray(p, dtype=float)
    R = np.asarray(R, dtype=float)
    q = lq_q(p, system, R)
    if q >= threshold_factor * gamma:
        return np.linalg.solve(R, system.B.T @ p), 1
    return np.zeros(system.m), 0


def lq_field(
    t,
    zp,
    system: LtiSystem,
    Q,
    R,
    gamma: float,
    threshold_factor: float = 1.0,
) -> np.ndarray:
    """Coupled (z, p) dynamics of the jammed LQ extremal system.

    With gamma = 0 this is the constant linear flow of the block matrix
    [[A, B R^{-1} B^T], [Q, -A^T]].
    """
    del t
    d = system.d
    z = zp[:d]
    p = zp[d:]
    u1, on = lq_controls(p, system, R, gamma, threshold_factor)
    dz = system.A @ z + (system.B @ u1) * on
    dp = np.asarray(Q, dtype=float) @ z - system.A.T @ p
    return np.concatenate([dz, dp])


def make_lq_field(problem: LqProblem, threshold_factor: float = 1.0):
    """Lean closure form of lq_field plus its switching events.

    A zero threshold (gamma = 0) keeps the jammer identically on and emits
    no events.
    """
    system = problem.system
    A = system.A
    AT = system.A.T
    Q = problem.Q
    B = system.B
    d = system.d
    RinvBT = np.linalg.solve(problem.R, B.T)
    BRB = B @ RinvBT
    threshold = threshold_factor * problem.gamma

    if threshold == 0.0:

        def field(t, zp):
            z = zp[:d]
            p = zp[d:]
            return np.concatenate([A @ z + BRB @ p, Q @ z - AT @ p])

        return field, []

    def field(t, zp):
        z = zp[:d]
        p = zp[d:]
        drive = BRB @ p
        if p @ drive >= threshold:
            dz = A @ z + drive
        else:
            dz = A @ z
        return np.concatenate([dz, Q @ z - AT @ p])

    def surface(t, zp):
        p = zp[d:]
        return float(p @ (BRB @ p)) - threshold

    return field, [EventSpec(surface=surface)]


def hamiltonian(kind: str, z, p, u1, u2, problem, eta: int = 1) -> float:
    """Pointwise Hamiltonian of the given problem kind.

    reach:     <p, Az + B u1 u2> + eta * [u2 = 0]
    lq:        <p, Az + B u1 u2> + gamma * [u2 = 0]
               - (1/2) z'Qz - (1/2) u1'R u1          (normal multiplier)
    sparse_lq: the lq form with the merged control u = u1 * u2.
    """
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    system = problem.system
    on = int(u2)
    if kind == "reach":
        drive = float(p @ (system.A @ z + (system.B @ u1) * on))
        return drive + (eta if on == 0 else 0.0)
    if kind == "lq":
        drive = float(p @ (system.A @ z + (system.B @ u1) * on))
        run = 0.5 * float(z @ (problem.Q @ z)) + 0.5 * float(u1 @ (problem.R @ u1))
        return drive + (problem.gamma if on == 0 else 0.0) - run
    if kind == "sparse_lq":
        u = u1 * on
        drive = float(p @ (system.A @ z + system.B @ u))
        run = 0.5 * float(z @ (problem.Q @ z)) + 0.5 * float(u @ (problem.R @ u))
        return drive + (problem.gamma if on == 0 else 0.0) - run
    raise ValueError(f"unknown problem kind {kind!r}")


def sparse_lq_control(p, system: LtiSystem, R, gamma: float) -> np.ndarray:
    """Single-control sparse regulator law: R^{-1} B^T p if q >= gamma, else 0."""
    p = np.asarray(p, dtype=float)
    R = np.asarray(R, dtype=float)
    if lq_q(p, system, R) >= gamma:
        return np.linalg.solve(R, system.B.T @ p)
    return np.zeros(system.m)


def on_intervals(extremal: Extremal) -> list[tuple[float, float]]:
    """Maximal intervals on which the jammer is on, from localized switches.

    The regime of each inter-switch interval is read from the sample at its
    left endpoint (u2 is right-continuous by construction).
    """
    times = extremal.trajectory.times
    bounds = [float(times[0])]
    bounds.extend(float(s) for s in extremal.trajectory.switch_times)
    bounds.append(float(times[-1]))
    intervals: list[tuple[float, float]] = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        idx = int(np.searchsorted(times, a, side="left"))
        if extremal.u2[idx] == 1:
            if intervals and intervals[-1][1] == a:
                intervals[-1] = (intervals[-1][0], b)
            else:
                intervals.append((a, b))
    return intervals
