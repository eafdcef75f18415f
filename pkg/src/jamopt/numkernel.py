"""Dense linear algebra and fixed-step ODE integration with event detection.

All operations are pure functions of their inputs. The integrator uses
classical RK4 on a fixed grid and restarts exactly at every detected
switching-surface crossing, which keeps switch times reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "IntegrationError",
    "SingularMatrixError",
    "Trajectory",
    "EventSpec",
    "mat_exp",
    "linear_solve",
    "integrate_with_events",
    "DEFAULT_STEPS",
]


class IntegrationError(RuntimeError):
    """Non-finite state, chattering, or overflow during a numerical sweep."""


class SingularMatrixError(RuntimeError):
    """linear_solve met a pivot too small relative to the matrix scale."""


#: default number of RK4 steps per integration horizon
DEFAULT_STEPS = 2000

# Diagonal [6/6] Pade coefficients of exp(x) and the scaling threshold.
_PADE6 = (1.0, 1.0 / 2.0, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0)
_PADE_THETA = 0.25


def mat_exp(M) -> np.ndarray:
    """Matrix exponential via scaling-and-squaring with a [6/6] Pade step."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("mat_exp expects a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("mat_exp expects finite entries")
    n = M.shape[0]
    norm = float(np.linalg.norm(M, 1))
    squarings = 0
    if norm > _PADE_THETA:
        squarings = int(np.ceil(np.log2(norm / _PADE_THETA)))
    A = M / (2.0 ** squarings)

    I = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    c = _PADE6
    even = c[0] * I + c[2] * A2 + c[4] * A4 + c[6] * A6
    odd = A @ (c[1] * I + c[3] * A2 + c[5] * A4)
    X = np.linalg.solve(even - odd, even + odd)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(squarings):
            X = X @ X
    if not np.all(np.isfinite(X)):
        raise IntegrationError("matrix exponential overflow")
    return X


def linear_solve(M, b) -> np.ndarray:
    """Solve M x = b by LU with partial pivoting.

    Raises SingularMatrixError when a pivot falls below 1e-14 times the
    magnitude of the largest entry of M.
    """
    A = np.array(M, dtype=float)
    x = np.array(b, dtype=float).reshape(-1)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("linear_solve expects a square matrix")
    if x.shape != (n,):
        raise ValueError("right-hand side length must match the matrix")
    scale = float(np.max(np.abs(A))) if n else 0.0
    if scale == 0.0:
        raise SingularMatrixError("singular matrix")
    for k in range(n):
        pivot_row = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[pivot_row, k]) < 1e-14 * scale:
            raise SingularMatrixError("singular matrix")
        if pivot_row != k:
            A[[k, pivot_row]] = A[[pivot_row, k]]
            x[[k, pivot_row]] = x[[pivot_row, k]]
        mult = A[k + 1 :, k] / A[k, k]
        A[k + 1 :, k + 1 :] -= np.outer(mult, A[k, k + 1 :])
        x[k + 1 :] -= mult * x[k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - A[k, k + 1 :] @ x[k + 1 :]) / A[k, k]
    return x


@dataclass(frozen=True)
class EventSpec:
    """Scalar switching surface watched during integration.

    The surface regime is its sign through the rule surface >= 0; an event is
    a regime change, optionally filtered by direction ("up" means the regime
    switches from negative to nonnegative). time_tolerance bounds the
    bisection width used to localize the crossing; None defers to
    1e-10 * (t1 - t0).
    """

    surface: Callable[[float, np.ndarray], float]
    direction: str = "any"
    time_tolerance: Optional[float] = None

    def __post_init__(self):
        if self.direction not in ("any", "up", "down"):
            raise ValueError(f"unknown event direction {self.direction!r}")
        if self.time_tolerance is not None and not self.time_tolerance > 0.0:
            raise ValueError("time_tolerance must be positive")


@dataclass(frozen=True)
class Trajectory:
    """Time-sampled solution with exact samples at every detected switch."""

    times: np.ndarray
    states: np.ndarray
    switch_times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        switches = np.asarray(self.switch_times, dtype=float).reshape(-1)
        if times.ndim != 1 or states.shape[0] != times.shape[0]:
            raise ValueError("one state row per sample time required")
        if times.size >= 2 and not np.all(np.diff(times) > 0.0):
            raise ValueError("sample times must be strictly increasing")
        if switches.size and not (
            np.all(switches > times[0]) and np.all(switches < times[-1])
        ):
            raise ValueError("switch times must be interior to the horizon")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "switch_times", switches)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


def _rk4_step(field, t, x, h):
    k1 = field(t, x)
    k2 = field(t + 0.5 * h, x + (0.5 * h) * k1)
    k3 = field(t + 0.5 * h, x + (0.5 * h) * k2)
    k4 = field(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_with_events(
    field,
    t0: float,
    t1: float,
    x0,
    events: Sequence[EventSpec] = (),
    step: Optional[float] = None,
    tol: float = 1e-4,
    max_events: int = 1000,
) -> Trajectory:
    """Integrate x' = field(t, x) over [t0, t1] with switching-surface restarts.

    Classical RK4 on a fixed grid (default (t1 - t0) / 2000 step). After each
    step, every event surface is checked for a regime change; a change is
    localized by bisection to within its time tolerance, a sample is placed
    exactly at the crossing, and integration restarts there so no accepted
    step straddles a switch. `tol` documents the accuracy contract of the
    fixed grid and is not used to adapt the step.
    """
    del tol
    if not t1 > t0:
        raise ValueError("empty time interval")
    x0 = np.asarray(x0, dtype=float)
    span = t1 - t0
    if step is None:
        n_steps = DEFAULT_STEPS
    else:
        if not step > 0.0:
            raise ValueError("step must be positive")
        n_steps = max(1, int(round(span / step)))
    grid = np.linspace(t0, t1, n_steps + 1)
    tiny = 1e-15 * max(abs(t0), abs(t1), span)

    events = list(events)
    tolerances = [
        ev.time_tolerance if ev.time_tolerance is not None else 1e-10 * span
        for ev in events
    ]

    t = t0
    x = x0
    times = [t0]
    states = [x0]
    switches: list[float] = []
    regimes = [ev.surface(t0, x0) >= 0.0 for ev in events]

    for t_target in grid[1:]:
        while t_target - t > tiny:
            x_new = _rk4_step(field, t, x, t_target - t)
            if not np.all(np.isfinite(x_new)):
                raise IntegrationError("non-finite state during integration")

            hit_time = None
            hit_state = None
            for j, ev in enumerate(events):
                regime_new = ev.surface(t_target, x_new) >= 0.0
                if regime_new == regimes[j]:
                    continue
                if ev.direction == "up" and regimes[j]:
                    continue
                if ev.direction == "down" and not regimes[j]:
                    continue
                lo, hi = t, t_target
                while hi - lo > tolerances[j]:
                    mid = 0.5 * (lo + hi)
                    x_mid = _rk4_step(field, t, x, mid - t)
                    if (ev.surface(mid, x_mid) >= 0.0) == regimes[j]:
                        lo = mid
                    else:
                        hi = mid
                if hit_time is None or hi < hit_time:
                    hit_time = hi
                    hit_state = _rk4_step(field, t, x, hi - t)

            if hit_time is None:
                t = float(t_target)
                x = x_new
                for j, ev in enumerate(events):
                    regimes[j] = ev.surface(t, x) >= 0.0
                times.append(t)
                states.append(x)
                break

            if not np.all(np.isfinite(hit_state)):
                raise IntegrationError("non-finite state during integration")
            switches.append(float(hit_time))
            if len(switches) > max_events:
                raise IntegrationError(
                    f"chattering guard: more than {max_events} events detected"
                )
            t = float(hit_time)
            x = hit_state
            # The localized time sits on the post-crossing side of the surface,
            # so refreshing regimes here commits the new control regime.
            for j, ev in enumerate(events):
                regimes[j] = ev.surface(t, x) >= 0.0
            times.append(t)
            states.append(x)

    return Trajectory(
        times=np.asarray(times),
        states=np.vstack(states),
        switch_times=np.asarray(switches),
    )
