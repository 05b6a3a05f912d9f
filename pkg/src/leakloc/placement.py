"""Greedy sensor placement on pipe-length geodesic distance.

The metric is the mean, over all nodes, of the distance to the nearest
sensor.  Each greedy step adds the candidate that lowers it most; pre-existing
sensors are counted as already placed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import NotEnoughCandidates, Unreachable
from .network import Network


def placement_metric(net: Network, sensors: Sequence[str]) -> float:
    if not sensors:
        raise ValueError("placement metric needs at least one sensor")
    d = net.distance_matrix[:, net.indices(sensors)].min(axis=1)
    if not np.all(np.isfinite(d)):
        raise Unreachable("some nodes cannot reach any sensor")
    return float(d.mean())


@dataclass
class PlacementProblem:
    network: Network
    candidates: list[str]
    fixed: list[str]
    count: int
    metric: Callable[[Network, Sequence[str]], float] = placement_metric
    trajectory: list[float] = field(default_factory=list)

    def __post_init__(self):
        fixed = set(self.fixed)
        self.candidates = [c for c in self.candidates if c not in fixed]
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if self.count > len(self.candidates):
            raise NotEnoughCandidates(
                f"asked for {self.count} sensors but only {len(self.candidates)} candidates remain"
            )

    @classmethod
    def build(cls, net: Network, count: int, fixed: Sequence[str] = (), candidates=None):
        if candidates is None:
            candidates = net.node_ids
        return cls(net, list(candidates), list(fixed), int(count))


def place_sensors(problem: PlacementProblem) -> list[str]:
    """Greedy selection; returns ``count`` new node ids in selection order.

    ``problem.trajectory`` receives the metric after each addition (the first
    entry is the metric of the fixed set alone, or ``inf`` when it is empty).
    """
    net = problem.network
    dist = net.distance_matrix
    if problem.metric is not placement_metric:
        return _place_generic(problem)
    current = np.full(net.n, np.inf)
    if problem.fixed:
        current = dist[:, net.indices(problem.fixed)].min(axis=1)
    problem.trajectory = [float(current.mean())]
    # ties resolve to the lowest node index, so scan candidates in index order
    remaining = sorted(net.indices(problem.candidates).tolist())
    chosen = []
    for _ in range(problem.count):
        scores = kernels.candidate_scan(dist, current, np.array(remaining, dtype=np.int64))
        k = int(np.argmin(scores))
        best = remaining.pop(k)
        chosen.append(net.nodes[best].id)
        current = np.minimum(current, dist[:, best])
        problem.trajectory.append(float(current.mean()))
    return chosen


def _place_generic(problem: PlacementProblem) -> list[str]:
    net = problem.network
    remaining = sorted(net.indices(problem.candidates).tolist())
    chosen: list[str] = []
    problem.trajectory = [problem.metric(net, problem.fixed) if problem.fixed else float("inf")]
    for _ in range(problem.count):
        scores = [problem.metric(net, problem.fixed + chosen + [net.nodes[i].id]) for i in remaining]
        best = remaining.pop(int(np.argmin(scores)))
        chosen.append(net.nodes[best].id)
        problem.trajectory.append(min(scores))
    return chosen
