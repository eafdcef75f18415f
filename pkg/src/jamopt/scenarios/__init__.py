"""Shipped case-study configs, addressable by bare name from the CLI."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from jamopt.model import load_problem

__all__ = ["SCENARIOS", "scenario_path", "load_scenario"]

SCENARIOS = (
    "pendulum_g001",
    "pendulum_g1",
    "cartpole_g01",
    "scalar_reach",
)


def scenario_path(name: str) -> Path:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; available: {', '.join(SCENARIOS)}")
    return Path(str(resources.files(__package__) / f"{name}.json"))


def load_scenario(name: str):
    return load_problem(scenario_path(name).read_text())
