"""Executable job handle: an engine, a topology, and a parallelism."""

from __future__ import annotations

from dataclasses import dataclass

from .plan import ExecutionPlan
from .topology import JobReport, Topology


@dataclass
class Job:
    engine: object
    topology: Topology
    parallelism: int
    plan: ExecutionPlan

    def execute(self) -> JobReport:
        return self.engine.execute(self.topology, self.parallelism)


def make_job(engine, topology: Topology, parallelism: int) -> Job:
    return Job(engine, topology, parallelism, engine.plan(topology, parallelism))
