"""Problem data types, validation, and JSON config ingestion.

All problem values are immutable after construction and can be shared freely
between concurrent solver runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ValidationError",
    "ConfigParseError",
    "LtiSystem",
    "ControlBox",
    "ReachProblem",
    "LqProblem",
    "ControllabilityReport",
    "controllability_report",
    "load_problem",
    "serialize_problem",
    "problem_hash",
]


class ValidationError(ValueError):
    """A problem definition violates one of its invariants."""


class ConfigParseError(ValueError):
    """Config text is not valid JSON or is missing required fields."""


# Relative eigenvalue slack tolerated when checking semidefiniteness, so that
# user configs with rounding noise still validate.
PSD_SLACK = 1e-10

# Singular values below this fraction of the largest are treated as zero.
RANK_TOL = 1e-10


def _matrix(value, name):
    M = np.array(value, dtype=float)
    if M.ndim == 0:
        raise ValidationError(f"{name} must be a matrix")
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ValidationError(f"{name} must be a matrix")
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{name} has non-finite entries")
    return M


def _vector(value, name, length):
    v = np.array(value, dtype=float).reshape(-1)
    if v.shape != (length,):
        raise ValidationError(f"{name} must have length {length}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} has non-finite entries")
    return v


def _check_symmetric(M, name):
    scale = max(1.0, float(np.max(np.abs(M))))
    if float(np.max(np.abs(M - M.T))) > 1e-9 * scale:
        raise ValidationError(f"{name} not symmetric")


def _check_psd(M, name):
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    norm = float(np.max(np.abs(eigs)))
    if float(eigs.min()) < -PSD_SLACK * norm:
        raise ValidationError(f"{name} not positive semidefinite")


def _check_pd(M, name):
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    if float(eigs.min()) <= 0.0:
        raise ValidationError(f"{name} not positive definite")


@dataclass(frozen=True)
class LtiSystem:
    """Plant (A, B) of the jammed linear system z' = A z + B u1 u2."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _matrix(self.A, "A")
        B = _matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValidationError("A must be square")
        if A.shape[0] < 1:
            raise ValidationError("state dimension must be at least 1")
        if B.shape[0] != A.shape[0]:
            raise ValidationError("B must have as many rows as A")
        if B.shape[1] < 1:
            raise ValidationError("input dimension must be at least 1")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ControlBox:
    """Axis-aligned admissible set for u1, with 0 in its interior."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).reshape(-1)
        upper = np.array(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise ValidationError("box bounds must have equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValidationError("box bounds have non-finite entries")
        if not np.all((lower < 0.0) & (0.0 < upper)):
            raise ValidationError("box must contain 0 in its interior")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def m(self) -> int:
        return self.lower.shape[0]


@dataclass(frozen=True)
class ReachProblem:
    """Steer z from z_start to z_end while paying for jammer on-time only."""

    system: LtiSystem
    box: ControlBox
    t_start: float
    t_end: float
    z_start: np.ndarray
    z_end: np.ndarray

    def __post_init__(self):
        if self.box.m != self.system.m:
            raise ValidationError("box dimension must match input dimension")
        if not self.t_end > self.t_start:
            raise ValidationError("empty horizon")
        d = self.system.d
        z0 = _vector(self.z_start, "z0", d)
        zf = _vector(self.z_end, "zf", d)
        z0.setflags(write=False)
        zf.setflags(write=False)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "z_start", z0)
        object.__setattr__(self, "z_end", zf)

    @property
    def horizon(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class LqProblem:
    """Quadratic regulation with a per-time charge gamma on jammer on-time."""

    system: LtiSystem
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    gamma: float
    t_start: float
    t_end: float
    z_start: np.ndarray

    def __post_init__(self):
        d, m = self.system.d, self.system.m
        Q = _matrix(self.Q, "Q")
        R = _matrix(self.R, "R")
        Qf = _matrix(self.Qf, "Qf")
        if Q.shape != (d, d):
            raise ValidationError(f"Q must be {d}x{d}")
        if Qf.shape != (d, d):
            raise ValidationError(f"Qf must be {d}x{d}")
        if R.shape != (m, m):
            raise ValidationError(f"R must be {m}x{m}")
        _check_symmetric(Q, "Q")
        _check_symmetric(Qf, "Qf")
        _check_symmetric(R, "R")
        _check_psd(Q, "Q")
        _check_psd(Qf, "Qf")
        _check_pd(R, "R")
        if not self.gamma >= 0.0:
            raise ValidationError("gamma negative")
        if not self.t_end > self.t_start:
            raise ValidationError("empty horizon")
        z0 = _vector(self.z_start, "z0", d)
        for M in (Q, R, Qf, z0):
            M.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Qf", Qf)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "z_start", z0)

    @property
    def horizon(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class ControllabilityReport:
    rank: int
    controllable: bool


def controllability_report(system: LtiSystem) -> ControllabilityReport:
    """Numerical Kalman rank test on [B, AB, ..., A^(d-1) B]."""
    d = system.d
    blocks = [system.B]
    for _ in range(d - 1):
        blocks.append(system.A @ blocks[-1])
    kalman = np.hstack(blocks)
    svals = np.linalg.svd(kalman, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(svals > RANK_TOL * svals[0]))
    return ControllabilityReport(rank=rank, controllable=rank == d)


_REACH_KEYS = ("A", "B", "t0", "tf", "z0", "zf", "box_lower", "box_upper")
_LQ_KEYS = ("A", "B", "t0", "tf", "z0", "Q", "R", "Qf", "gamma")


def _weight(value, name, size):
    # A bare number means value * identity of the appropriate size.
    if np.isscalar(value):
        return float(value) * np.eye(size)
    return _matrix(value, name)


def load_problem(config_text):
    """Parse a JSON problem config into a validated ReachProblem or LqProblem.

    Accepts a JSON string or an already-decoded dict. Scalars given for
    Q, R, or Qf are expanded to scalar * identity.
    """
    if isinstance(config_text, (str, bytes)):
        try:
            raw = json.loads(config_text)
        except json.JSONDecodeError as exc:
            raise ConfigParseError(f"invalid JSON: {exc}") from exc
    elif isinstance(config_text, dict):
        raw = config_text
    else:
        raise ConfigParseError("config must be JSON text or a dict")
    if not isinstance(raw, dict):
        raise ConfigParseError("config must be a JSON object")

    kind = raw.get("kind")
    if kind not in ("reach", "lq"):
        raise ConfigParseError(f"unknown problem kind: {kind!r}")
    required = _REACH_KEYS if kind == "reach" else _LQ_KEYS
    for key in required:
        if key not in raw:
            raise ConfigParseError(f"missing field '{key}'")

    system = LtiSystem(A=raw["A"], B=raw["B"])
    if kind == "reach":
        return ReachProblem(
            system=system,
            box=ControlBox(lower=raw["box_lower"], upper=raw["box_upper"]),
            t_start=float(raw["t0"]),
            t_end=float(raw["tf"]),
            z_start=raw["z0"],
            z_end=raw["zf"],
        )
    return LqProblem(
        system=system,
        Q=_weight(raw["Q"], "Q", system.d),
        R=_weight(raw["R"], "R", system.m),
        Qf=_weight(raw["Qf"], "Qf", system.d),
        gamma=float(raw["gamma"]),
        t_start=float(raw["t0"]),
        t_end=float(raw["tf"]),
        z_start=raw["z0"],
    )


def serialize_problem(problem) -> dict:
    """Canonical dict form of a problem, matching the JSON config schema."""
    sys_part = {
        "A": problem.system.A.tolist(),
        "B": problem.system.B.tolist(),
        "t0": problem.t_start,
        "tf": problem.t_end,
        "z0": problem.z_start.tolist(),
    }
    if isinstance(problem, ReachProblem):
        return {
            "kind": "reach",
            **sys_part,
            "zf": problem.z_end.tolist(),
            "box_lower": problem.box.lower.tolist(),
            "box_upper": problem.box.upper.tolist(),
        }
    if isinstance(problem, LqProblem):
        return {
            "kind": "lq",
            **sys_part,
            "Q": problem.Q.tolist(),
            "R": problem.R.tolist(),
            "Qf": problem.Qf.tolist(),
            "gamma": problem.gamma,
        }
    raise TypeError(f"cannot serialize {type(problem).__name__}")


def problem_hash(problem) -> str:
    """Stable content hash of the canonicalized problem JSON."""
    text = json.dumps(serialize_problem(problem), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
