"""Shared fixtures: each shipped scenario is solved once per session via the
CLI, and API-level objects are rebuilt cheaply from the stored run records."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from jamopt import cli, shooting
from jamopt.scenarios import load_scenario, scenario_path


@dataclass
class RunArtifacts:
    name: str
    out_dir: Path
    exit_code: int

    @property
    def result(self) -> dict:
        return json.loads((self.out_dir / f"{self.name}_result.json").read_text())

    @property
    def record(self) -> dict:
        files = list(self.out_dir.glob("run_*.json"))
        for f in files:
            payload = json.loads(f.read_text())
            if payload["scenario_name"] == self.name:
                return payload
        raise FileNotFoundError(f"no run record for {self.name}")

    @property
    def trajectory_csv(self) -> Path:
        return self.out_dir / f"{self.name}_trajectory.csv"

    def csv_rows(self):
        lines = self.trajectory_csv.read_text().strip().splitlines()
        header = lines[0].split(",")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        return header, data


def _run_scenario(tmp_path_factory, command: str, name: str, extra=()) -> RunArtifacts:
    out = tmp_path_factory.mktemp(f"run_{name}")
    code = cli.main([command, str(scenario_path(name)), "--out", str(out), *extra])
    return RunArtifacts(name=name, out_dir=out, exit_code=code)


@pytest.fixture(scope="session")
def g001_run(tmp_path_factory) -> RunArtifacts:
    art = _run_scenario(tmp_path_factory, "lq", "pendulum_g001", ("--baseline",))
    assert art.exit_code == 0
    return art


@pytest.fixture(scope="session")
def g1_run(tmp_path_factory) -> RunArtifacts:
    art = _run_scenario(tmp_path_factory, "lq", "pendulum_g1")
    assert art.exit_code == 0
    return art


@pytest.fixture(scope="session")
def cartpole_run(tmp_path_factory) -> RunArtifacts:
    art = _run_scenario(tmp_path_factory, "lq", "cartpole_g01")
    assert art.exit_code == 0
    return art


@pytest.fixture(scope="session")
def scalar_reach_run(tmp_path_factory) -> RunArtifacts:
    art = _run_scenario(tmp_path_factory, "reach", "scalar_reach")
    assert art.exit_code == 0
    return art


def _rebuild(name: str, run: RunArtifacts):
    problem = load_scenario(name)
    record = run.record
    extremal = shooting.rollout_extremal(
        problem,
        np.asarray(record["result"]["p0"], dtype=float),
        eta=record["result"]["eta"],
        threshold_factor=record["result"]["threshold_factor"],
    )
    return problem, extremal


@pytest.fixture(scope="session")
def g001_case(g001_run):
    return _rebuild("pendulum_g001", g001_run)


@pytest.fixture(scope="session")
def g1_case(g1_run):
    return _rebuild("pendulum_g1", g1_run)


@pytest.fixture(scope="session")
def cartpole_case(cartpole_run):
    return _rebuild("cartpole_g01", cartpole_run)


@pytest.fixture(scope="session")
def g0_case():
    """Pendulum problem with the jammer charge removed (gamma = 0)."""
    import dataclasses

    problem = dataclasses.replace(load_scenario("pendulum_g001"), gamma=0.0)
    result = shooting.solve_bvp(problem)
    assert result.converged
    return problem, result


@pytest.fixture(scope="session")
def scalar_lq_case():
    """Scalar regulator used by the oracle sandwich checks."""
    from jamopt.model import load_problem

    problem = load_problem(
        json.dumps(
            {
                "kind": "lq",
                "A": [[1.0]],
                "B": [[1.0]],
                "t0": 0.0,
                "tf": 1.0,
                "z0": [1.0],
                "Q": 1.0,
                "R": 1.0,
                "Qf": 1.0,
                "gamma": 0.1,
            }
        )
    )
    result = shooting.solve_bvp(problem)
    assert result.converged
    return problem, result
