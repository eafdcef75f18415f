"""Indirect BVP solver for the jammed reach and LQ extremal systems.

Single or multiple shooting on the unknown initial adjoint (plus interior
nodes), driven by a Levenberg-Marquardt loop over central finite-difference
Jacobians, with seeded Gaussian multistart spanning several magnitude decades.

Reach problems get two fallbacks after the normal multistart:
  1. a singular completion for the degenerate case where the switching
     functional is flat in time, so the endpoint map is discontinuous in the
     initial adjoint and no descent direction exists (the jammer is then free
     on the tie set and its on-measure is chosen directly to meet the target);
  2. the abnormal branch (eta = 0, jammer identically on).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from jamopt import analysis
from jamopt import riccati as _riccati
from jamopt.extremal import Extremal, make_lq_field, make_reach_field
from jamopt.model import LqProblem, ReachProblem
from jamopt.numkernel import (
    DEFAULT_STEPS,
    IntegrationError,
    SingularMatrixError,
    Trajectory,
    integrate_with_events,
    linear_solve,
    mat_exp,
)

__all__ = [
    "ShootingConfig",
    "ShootingResult",
    "reach_residual",
    "lq_residual",
    "solve_bvp",
    "rollout_extremal",
    "finite_difference_jacobian",
]


@dataclass(frozen=True)
class ShootingConfig:
    """Solver hyperparameters; defaults match the shipped scenarios."""

    segments: int = 1
    max_iterations: int = 60
    residual_tolerance: float = 1e-6
    fd_step: float = 1e-6
    multistart_magnitudes: tuple = (0.1, 1.0, 10.0, 100.0)
    multistart_samples_per_magnitude: int = 3
    seed: int = 0
    threshold_factor: float = 1.0

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if not self.residual_tolerance > 0.0:
            raise ValueError("residual_tolerance must be positive")
        if not self.fd_step > 0.0:
            raise ValueError("fd_step must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class ShootingResult:
    extremal: Extremal
    residual_norm: float
    iterations: int
    converged: bool
    eta_used: int
    starts_tried: int

    def __post_init__(self):
        object.__setattr__(self, "residual_norm", float(self.residual_norm))
        object.__setattr__(self, "converged", bool(self.converged))


def _is_reach(problem) -> bool:
    if isinstance(problem, ReachProblem):
        return True
    if isinstance(problem, LqProblem):
        return False
    raise TypeError(f"unsupported problem type {type(problem).__name__}")


def _fields_for(problem, eta: int, threshold_factor: float):
    if _is_reach(problem):
        field, events = make_reach_field(problem.system, problem.box, eta)
    else:
        field, events = make_lq_field(problem, threshold_factor)
    # Pin switch times near machine precision: unstable modes amplify any
    # switch-time quantization into residual noise that stalls the solver.
    tol = 1e-14 * problem.horizon
    events = [replace(ev, time_tolerance=tol) for ev in events]
    return field, events


def _segment_steps(problem, t_a: float, t_b: float) -> float:
    # Keep the global grid density at DEFAULT_STEPS per full horizon.
    n = max(1, int(round(DEFAULT_STEPS * (t_b - t_a) / problem.horizon)))
    return (t_b - t_a) / n


def _integrate_segment(problem, start, t_a, t_b, eta, threshold_factor) -> Trajectory:
    field, events = _fields_for(problem, eta, threshold_factor)
    return integrate_with_events(
        field, t_a, t_b, start, events=events, step=_segment_steps(problem, t_a, t_b)
    )


def _boundary_residual(problem, end_state: np.ndarray) -> np.ndarray:
    d = problem.system.d
    if _is_reach(problem):
        return end_state[:d] - problem.z_end
    return end_state[d:] + problem.Qf @ end_state[:d]


def reach_residual(p0, problem: ReachProblem, eta: int = 1) -> np.ndarray:
    """Endpoint defect z(t_end) - z_end of the reach extremal flow from p0."""
    start = np.concatenate([problem.z_start, np.asarray(p0, dtype=float)])
    traj = _integrate_segment(problem, start, problem.t_start, problem.t_end, eta, 1.0)
    return _boundary_residual(problem, traj.states[-1])


def lq_residual(p0, problem: LqProblem, threshold_factor: float = 1.0) -> np.ndarray:
    """Transversality defect p(t_end) + Qf z(t_end) of the LQ flow from p0."""
    start = np.concatenate([problem.z_start, np.asarray(p0, dtype=float)])
    traj = _integrate_segment(
        problem, start, problem.t_start, problem.t_end, 1, threshold_factor
    )
    return _boundary_residual(problem, traj.states[-1])


def _node_times(problem, segments: int) -> np.ndarray:
    return np.linspace(problem.t_start, problem.t_end, segments + 1)


def _stacked_residual(x, problem, eta, segments, threshold_factor) -> np.ndarray:
    """Multiple-shooting residual: continuity defects then the boundary defect."""
    d = problem.system.d
    t_nodes = _node_times(problem, segments)
    start = np.concatenate([problem.z_start, x[:d]])
    interior = x[d:].reshape(segments - 1, 2 * d) if segments > 1 else None
    parts = []
    for k in range(segments):
        traj = _integrate_segment(
            problem, start, t_nodes[k], t_nodes[k + 1], eta, threshold_factor
        )
        end = traj.states[-1]
        if k < segments - 1:
            parts.append(end - interior[k])
            start = interior[k]
        else:
            parts.append(_boundary_residual(problem, end))
    return np.concatenate(parts)


def _initial_unknowns(problem, p0, eta, segments, threshold_factor) -> np.ndarray:
    """Pack p0 plus interior nodes warm-started from a single forward sweep."""
    p0 = np.asarray(p0, dtype=float)
    if segments == 1:
        return p0.copy()
    start = np.concatenate([problem.z_start, p0])
    traj = _integrate_segment(
        problem, start, problem.t_start, problem.t_end, eta, threshold_factor
    )
    t_nodes = _node_times(problem, segments)
    nodes = []
    for t in t_nodes[1:-1]:
        idx = int(np.argmin(np.abs(traj.times - t)))
        nodes.append(traj.states[idx])
    return np.concatenate([p0] + nodes)


def finite_difference_jacobian(fn, x, r0=None, step: float = 1e-6, scheme: str = "central"):
    """Finite-difference Jacobian of fn at x with per-component relative step."""
    x = np.asarray(x, dtype=float)
    if r0 is None:
        r0 = fn(x)
    J = np.empty((r0.shape[0], x.shape[0]))
    for i in range(x.shape[0]):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        if scheme == "central":
            J[:, i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
        elif scheme == "forward":
            J[:, i] = (fn(x + e) - r0) / h
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    return J


def _levenberg_marquardt(fn, x0, cfg: ShootingConfig):
    """Damped Gauss-Newton on 0.5 ||fn(x)||^2; damping x10 / /10 on reject/accept.

    Near a switching-structure kink the difference step can straddle both
    regimes and corrupt the Jacobian, which shows up as a progress stall; the
    working step is then shrunk tenfold (deterministically, at most down to
    1e-9) and the iteration continues.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fn(x)
    r_norm = float(np.linalg.norm(r))
    best_x, best_norm = x.copy(), r_norm
    damping = 1e-3
    fd_step = cfg.fd_step
    weak_streak = 0
    iterations = 0
    polish_left = 5  # keep squeezing past the tolerance while gains are strong
    n = x.shape[0]
    for _ in range(cfg.max_iterations):
        if r_norm <= cfg.residual_tolerance:
            if polish_left <= 0 or r_norm == 0.0:
                break
            polish_left -= 1
            # The switch structure is locked in by now; small difference steps
            # give the clean Jacobians needed to polish the residual further.
            fd_step = min(fd_step, 1e-8)
        iterations += 1
        J = finite_difference_jacobian(fn, x, r, fd_step, "central")
        gradient = J.T @ r
        if float(np.linalg.norm(gradient)) <= 1e-14 * (1.0 + r_norm):
            break  # flat residual plateau, no descent direction at any damping
        normal = J.T @ J
        accepted = False
        delta = np.zeros(n)
        while damping <= 1e14:
            try:
                delta = linear_solve(normal + damping * np.eye(n), -gradient)
            except SingularMatrixError:
                damping *= 10.0
                continue
            try:
                r_try = fn(x + delta)
            except IntegrationError:
                damping *= 10.0
                continue
            try_norm = float(np.linalg.norm(r_try))
            if try_norm < r_norm:
                weak_streak = weak_streak + 1 if try_norm > 0.99 * r_norm else 0
                if try_norm > 0.05 * r_norm and try_norm <= cfg.residual_tolerance:
                    polish_left = 0  # diminishing returns below tolerance
                x = x + delta
                r = r_try
                r_norm = try_norm
                damping = max(damping * 0.1, 1e-12)
                accepted = True
                break
            damping *= 10.0
        if r_norm < best_norm:
            best_x, best_norm = x.copy(), r_norm
        if not accepted or weak_streak >= 2:
            if fd_step > 1.5e-9:
                fd_step *= 0.1
                weak_streak = 0
                damping = max(damping * 1e-3, 1e-3)
                continue
            if not accepted:
                break
        if accepted and float(np.linalg.norm(delta)) <= 1e-13 * (1.0 + float(np.linalg.norm(x))):
            break
    if r_norm < best_norm:
        best_x, best_norm = x.copy(), r_norm
    return best_x, best_norm, iterations, best_norm <= cfg.residual_tolerance


def _build_extremal(problem, x, eta, cfg: ShootingConfig) -> Extremal:
    """Integrate through the solved nodes and assemble per-sample diagnostics."""
    d = problem.system.d
    segments = cfg.segments
    t_nodes = _node_times(problem, segments)
    start = np.concatenate([problem.z_start, x[:d]])
    interior = x[d:].reshape(segments - 1, 2 * d) if segments > 1 else None

    times_parts, states_parts, switch_parts = [], [], []
    for k in range(segments):
        traj = _integrate_segment(
            problem, start, t_nodes[k], t_nodes[k + 1], eta, cfg.threshold_factor
        )
        drop = 1 if k > 0 else 0  # node sample duplicates the previous endpoint
        times_parts.append(traj.times[drop:])
        states_parts.append(traj.states[drop:])
        switch_parts.append(traj.switch_times)
        if k < segments - 1:
            start = interior[k]
    trajectory = Trajectory(
        times=np.concatenate(times_parts),
        states=np.vstack(states_parts),
        switch_times=np.concatenate(switch_parts),
    )
    return _attach_controls(problem, trajectory, eta, cfg.threshold_factor)


def _attach_controls(problem, trajectory, eta, threshold_factor, u2_override=None):
    """Vectorized per-sample controls and Hamiltonian values."""
    system = problem.system
    d = system.d
    Z = trajectory.states[:, :d]
    P = trajectory.states[:, d:]
    n = Z.shape[0]
    if _is_reach(problem):
        S = P @ system.B  # rows are (B^T p)^T
        u1 = np.where(S > 0.0, problem.box.upper, np.where(S < 0.0, problem.box.lower, 0.0))
        sigma = np.einsum("nm,nm->n", S, u1)
        if u2_override is not None:
            u2 = u2_override.astype(int)
        elif eta == 0:
            u2 = np.ones(n, dtype=int)
        else:
            u2 = (sigma >= 1.0).astype(int)
        drive = np.einsum("ni,ni->n", P, Z @ system.A.T + (u1 @ system.B.T) * u2[:, None])
        H = drive + eta * (u2 == 0)
        kind = "reach"
    else:
        RinvBT = np.linalg.solve(problem.R, system.B.T)
        BRB = system.B @ RinvBT
        q = np.einsum("ni,ij,nj->n", P, BRB, P)
        threshold = threshold_factor * problem.gamma
        if u2_override is not None:
            u2 = u2_override.astype(int)
        elif threshold == 0.0:
            u2 = np.ones(n, dtype=int)
        else:
            u2 = (q >= threshold).astype(int)
        u1 = (P @ RinvBT.T) * u2[:, None]
        drive = np.einsum("ni,ni->n", P, Z @ system.A.T + (u1 @ system.B.T) * u2[:, None])
        run = 0.5 * (
            np.einsum("ni,ij,nj->n", Z, problem.Q, Z)
            + np.einsum("ni,ij,nj->n", u1, problem.R, u1)
        )
        H = drive + problem.gamma * (u2 == 0) - run
        kind = "lq"
    return Extremal(
        trajectory=trajectory,
        u1=u1,
        u2=u2,
        hamiltonian=H,
        eta=eta,
        cost=None,
        problem_kind=kind,
    )


def rollout_extremal(
    problem,
    p0,
    eta: int = 1,
    threshold_factor: float = 1.0,
    with_cost: bool = True,
) -> Extremal:
    """Single forward sweep from a known initial adjoint, with diagnostics."""
    start = np.concatenate([problem.z_start, np.asarray(p0, dtype=float)])
    traj = _integrate_segment(
        problem, start, problem.t_start, problem.t_end, eta, threshold_factor
    )
    ext = _attach_controls(problem, traj, eta, threshold_factor)
    if with_cost:
        ext = replace(ext, cost=analysis.evaluate_cost(ext, problem))
    return ext


# ---------------------------------------------------------------------------
# Singular completion for reach problems with a flat switching functional
# ---------------------------------------------------------------------------


def _support_profile(problem, direction, samples: int = 256) -> np.ndarray:
    """sigma(t) along the closed-form adjoint from the given initial value."""
    system = problem.system
    h = problem.horizon / (samples - 1)
    step_matrix = mat_exp(-h * system.A.T)
    p = np.asarray(direction, dtype=float).copy()
    out = np.empty(samples)
    for i in range(samples):
        s = system.B.T @ p
        out[i] = float(np.sum(np.maximum(problem.box.upper * s, problem.box.lower * s)))
        p = step_matrix @ p
    return out


def _gated_reach_extremal(problem, p0, t_on) -> Extremal:
    """Jammer on exactly on [t_start, t_on), argmax control while on."""
    field_on, _ = make_reach_field(problem.system, problem.box, eta=0)
    system = problem.system

    def field_off(t, zp):
        d = system.d
        return np.concatenate([system.A @ zp[:d], -(system.A.T @ zp[d:])])

    start = np.concatenate([problem.z_start, np.asarray(p0, dtype=float)])
    t0, t1 = problem.t_start, problem.t_end
    if t_on <= t0:
        traj = integrate_with_events(
            field_off, t0, t1, start, step=_segment_steps(problem, t0, t1)
        )
        switches = np.empty(0)
    elif t_on >= t1:
        traj = integrate_with_events(
            field_on, t0, t1, start, step=_segment_steps(problem, t0, t1)
        )
        switches = np.empty(0)
    else:
        first = integrate_with_events(
            field_on, t0, t_on, start, step=_segment_steps(problem, t0, t_on)
        )
        second = integrate_with_events(
            field_off,
            t_on,
            t1,
            first.states[-1],
            step=_segment_steps(problem, t_on, t1),
        )
        traj = Trajectory(
            times=np.concatenate([first.times, second.times[1:]]),
            states=np.vstack([first.states, second.states[1:]]),
            switch_times=np.array([t_on]),
        )
        switches = traj.switch_times
    u2 = (traj.times < t_on).astype(int) if switches.size else (
        np.ones(traj.times.shape[0], dtype=int)
        if t_on >= t1
        else np.zeros(traj.times.shape[0], dtype=int)
    )
    return _attach_controls(problem, traj, eta=1, threshold_factor=1.0, u2_override=u2)


def _singular_reach_attempt(problem, cfg: ShootingConfig):
    """Handle the flat-sigma degenerate case by direct on-measure selection.

    When sigma(t) is constant along the adjoint flow, every initial adjoint
    on the tie level sigma = 1 leaves the jammer free on the whole horizon,
    and the endpoint map is discontinuous in p0 for every other level. The
    on-set is then chosen directly: a prefix [t_start, t_on) whose length is
    tuned to meet the endpoint condition. Returns None when no direction
    produces a flat profile or the target stays out of reach.
    """
    d = problem.system.d
    directions = [np.eye(d)[i] * sgn for i in range(d) for sgn in (1.0, -1.0)]
    tested = 0
    for direction in directions:
        profile = _support_profile(problem, direction)
        top = float(profile.max())
        if top <= 0.0 or float(profile.max() - profile.min()) > 1e-8 * top:
            continue
        tested += 1
        p0 = direction / top  # flat profile rescales to the tie level exactly
        t0, t1 = problem.t_start, problem.t_end

        def endpoint_gap(t_on):
            ext = _gated_reach_extremal(problem, p0, t_on)
            return ext.z[-1] - problem.z_end, ext

        gap_lo, _ = endpoint_gap(t0)
        gap_hi, ext_hi = endpoint_gap(t1)
        norm_lo = float(np.linalg.norm(gap_lo))
        norm_hi = float(np.linalg.norm(gap_hi))
        if norm_hi <= cfg.residual_tolerance:
            return ext_hi, norm_hi, tested
        if d == 1:
            if gap_lo[0] == 0.0:
                ext = _gated_reach_extremal(problem, p0, t0)
                return ext, norm_lo, tested
            if np.sign(gap_lo[0]) == np.sign(gap_hi[0]):
                continue
            lo, hi = t0, t1
            lo_sign = np.sign(gap_lo[0])
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                gap_mid, ext_mid = endpoint_gap(mid)
                if abs(gap_mid[0]) <= cfg.residual_tolerance:
                    return ext_mid, float(abs(gap_mid[0])), tested
                if np.sign(gap_mid[0]) == lo_sign:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-14 * problem.horizon:
                    break
            gap_mid, ext_mid = endpoint_gap(0.5 * (lo + hi))
            if float(np.linalg.norm(gap_mid)) <= cfg.residual_tolerance:
                return ext_mid, float(np.linalg.norm(gap_mid)), tested
        else:
            # Coarse scan plus golden-section refinement on the gap norm.
            candidates = np.linspace(t0, t1, 33)
            norms = []
            for t_on in candidates:
                gap, _ = endpoint_gap(t_on)
                norms.append(float(np.linalg.norm(gap)))
            k = int(np.argmin(norms))
            lo = candidates[max(0, k - 1)]
            hi = candidates[min(len(candidates) - 1, k + 1)]
            phi = 0.5 * (3.0 - np.sqrt(5.0))
            a, b = lo, hi
            for _ in range(60):
                m1 = a + phi * (b - a)
                m2 = b - phi * (b - a)
                g1, _ = endpoint_gap(m1)
                g2, _ = endpoint_gap(m2)
                if np.linalg.norm(g1) <= np.linalg.norm(g2):
                    b = m2
                else:
                    a = m1
            t_on = 0.5 * (a + b)
            gap, ext = endpoint_gap(t_on)
            if float(np.linalg.norm(gap)) <= cfg.residual_tolerance:
                return ext, float(np.linalg.norm(gap)), tested
    return None


# ---------------------------------------------------------------------------
# Top-level solver
# ---------------------------------------------------------------------------


def _start_tiers(problem, cfg: ShootingConfig):
    """Deterministic starts first, then seeded Gaussian draws per magnitude.

    For LQ problems the first start is the adjoint implied by the gamma-free
    Riccati sweep, p0 = -P(t_start) z_start, which already solves the gamma=0
    problem exactly and sits near the jammed extremal for small gamma.
    """
    d = problem.system.d
    rng = np.random.default_rng(cfg.seed)
    first: list[np.ndarray] = [np.zeros(d)]
    if not _is_reach(problem):
        try:
            sol = _riccati.classical_lqr(problem)
            first.insert(0, -(sol.P[0] @ problem.z_start))
        except IntegrationError:
            pass
    tiers = [first]
    for mag in cfg.multistart_magnitudes:
        tiers.append(
            [mag * rng.standard_normal(d) for _ in range(cfg.multistart_samples_per_magnitude)]
        )
    return tiers


def solve_bvp(problem, config: Optional[ShootingConfig] = None) -> ShootingResult:
    """Find an initial adjoint so the extremal flow meets its boundary data.

    LQ problems stop at the first converged start (the extremal is expected
    unique); reach problems finish the start tier that produced a convergence
    and keep the converged extremal with the smallest on-time. When every
    normal start fails, reach problems try the singular completion and then
    the abnormal branch (jammer identically on) before reporting the best
    residual found. A non-converged result carries converged=False rather
    than raising, so callers can report the best residual.
    """
    cfg = config if config is not None else ShootingConfig()
    is_reach = _is_reach(problem)
    tiers = _start_tiers(problem, cfg)

    starts_tried = 0
    best_fail = None  # (residual_norm, x, eta, iterations)
    last_error: Optional[Exception] = None

    def scan(eta: int):
        nonlocal starts_tried, best_fail, last_error
        found = []

        def residual_fn(x):
            return _stacked_residual(x, problem, eta, cfg.segments, cfg.threshold_factor)

        for tier in tiers:
            for p0 in tier:
                if eta == 0 and not np.any(p0 != 0.0):
                    continue  # (eta, p0) = 0 would violate nontriviality
                starts_tried += 1
                try:
                    x0 = _initial_unknowns(
                        problem, p0, eta, cfg.segments, cfg.threshold_factor
                    )
                    x, r_norm, iters, ok = _levenberg_marquardt(residual_fn, x0, cfg)
                except IntegrationError as exc:
                    last_error = exc
                    continue
                if ok:
                    found.append((x, r_norm, iters))
                    if not is_reach:
                        return found
                elif best_fail is None or r_norm < best_fail[0]:
                    best_fail = (r_norm, x, eta, iters)
            if found:
                return found
        return found

    def finish(x, r_norm, iters, eta, converged):
        ext = _build_extremal(problem, x, eta, cfg)
        ext = replace(ext, cost=analysis.evaluate_cost(ext, problem))
        return ShootingResult(
            extremal=ext,
            residual_norm=r_norm,
            iterations=iters,
            converged=converged,
            eta_used=eta,
            starts_tried=starts_tried,
        )

    found = scan(eta=1)
    if found:
        if is_reach and len(found) > 1:
            scored = []
            for x, r_norm, iters in found:
                ext = _build_extremal(problem, x, 1, cfg)
                cost = analysis.evaluate_cost(ext, problem)
                scored.append((cost.gamma_weighted_total, r_norm, x, iters))
            scored.sort(key=lambda item: (item[0], item[1]))
            _, r_norm, x, iters = scored[0]
            return finish(x, r_norm, iters, 1, True)
        x, r_norm, iters = found[0]
        return finish(x, r_norm, iters, 1, True)

    if is_reach:
        singular = _singular_reach_attempt(problem, cfg)
        if singular is not None:
            ext, r_norm, tried = singular
            starts_tried += tried
            ext = replace(ext, cost=analysis.evaluate_cost(ext, problem))
            return ShootingResult(
                extremal=ext,
                residual_norm=r_norm,
                iterations=0,
                converged=True,
                eta_used=1,
                starts_tried=starts_tried,
            )
        found = scan(eta=0)
        if found:
            found.sort(key=lambda item: item[1])
            x, r_norm, iters = found[0]
            return finish(x, r_norm, iters, 0, True)

    if best_fail is None:
        if last_error is not None:
            raise last_error
        raise RuntimeError("no shooting start could be evaluated")
    r_norm, x, eta, iters = best_fail
    return finish(x, r_norm, iters, eta, False)
