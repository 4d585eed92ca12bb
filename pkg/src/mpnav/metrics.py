"""Navigation graph and episode metrics (SR, SPL, nDTW, GP)."""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .errors import (
    EmptyResultSet,
    NotAdjacent,
    TrajectoryStartMismatch,
    UnknownNode,
    ValidationError,
)

SUCCESS_THRESHOLD = 3.0


class NavGraph:
    """Undirected viewpoint graph, edges weighted by Euclidean distance."""

    def __init__(self, nodes: Mapping[str, Sequence[float]], edges: Iterable[Sequence[str]]):
        self.nodes = {str(k): tuple(float(x) for x in v) for k, v in nodes.items()}
        self._g = nx.Graph()
        self._g.add_nodes_from(self.nodes)
        for a, b in edges:
            a, b = str(a), str(b)
            for n in (a, b):
                if n not in self.nodes:
                    raise UnknownNode(n)
            w = math.dist(self.nodes[a], self.nodes[b])
            if w <= 0:
                raise ValidationError(f"edge {a}-{b} has zero length")
            self._g.add_edge(a, b, weight=w)
        self._dist: dict[str, dict[str, float]] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_record(cls, rec: Mapping) -> "NavGraph":
        try:
            nodes = {n["id"]: n["xyz"] for n in rec["nodes"]}
            return cls(nodes, rec.get("edges", []))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed graph record: {exc}") from exc

    @classmethod
    def load(cls, path) -> "NavGraph":
        with open(path, encoding="utf-8") as f:
            try:
                rec = json.load(f)
            except json.JSONDecodeError as exc:
                from .errors import ParseError

                raise ParseError(exc.lineno, exc.msg, path) from exc
        return cls.from_record(rec)

    def to_record(self) -> dict:
        return {
            "nodes": [{"id": k, "xyz": list(v)} for k, v in self.nodes.items()],
            "edges": [[a, b] for a, b in self._g.edges()],
        }

    def __contains__(self, node_id) -> bool:
        return node_id in self.nodes

    def check(self, node_id: str) -> None:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)

    def neighbors(self, node_id: str) -> list[str]:
        self.check(node_id)
        return sorted(self._g.neighbors(node_id))

    def adjacent(self, a: str, b: str) -> bool:
        return self._g.has_edge(a, b)

    def edge_length(self, a: str, b: str) -> float:
        if not self._g.has_edge(a, b):
            raise NotAdjacent(f"{a!r} and {b!r} are not connected")
        return self._g[a][b]["weight"]

    def distances_from(self, source: str) -> dict[str, float]:
        self.check(source)
        d = self._dist.get(source)
        if d is None:
            d = nx.single_source_dijkstra_path_length(self._g, source, weight="weight")
            with self._lock:
                d = self._dist.setdefault(source, d)
        return d

    def geodesic(self, a: str, b: str) -> float:
        self.check(b)
        return self.distances_from(a).get(b, math.inf)

    def shortest_path(self, a: str, b: str) -> list[str]:
        self.check(a)
        self.check(b)
        try:
            return nx.shortest_path(self._g, a, b, weight="weight")
        except nx.NetworkXNoPath:
            raise ValidationError(f"no path between {a!r} and {b!r}") from None


def geodesic(graph: NavGraph, a: str, b: str) -> float:
    return graph.geodesic(a, b)


@dataclass(frozen=True)
class Trajectory:
    node_ids: tuple[str, ...]

    def __post_init__(self):
        if not self.node_ids:
            raise ValidationError("trajectory needs at least one node")

    def validate(self, graph: NavGraph) -> "Trajectory":
        for n in self.node_ids:
            graph.check(n)
        for a, b in zip(self.node_ids, self.node_ids[1:]):
            if not graph.adjacent(a, b):
                raise NotAdjacent(f"trajectory step {a!r} -> {b!r} is not an edge")
        return self

    def length(self, graph: NavGraph) -> float:
        return sum(graph.edge_length(a, b) for a, b in zip(self.node_ids, self.node_ids[1:]))

    @property
    def last(self) -> str:
        return self.node_ids[-1]


def _traj(t) -> Trajectory:
    return t if isinstance(t, Trajectory) else Trajectory(tuple(t))


def success(graph: NavGraph, traj, goal: str, threshold: float = SUCCESS_THRESHOLD) -> bool:
    traj = _traj(traj)
    return graph.geodesic(traj.last, goal) <= threshold


def _check_start(traj: Trajectory, start: str) -> None:
    if traj.node_ids[0] != start:
        raise TrajectoryStartMismatch(f"trajectory starts at {traj.node_ids[0]!r}, expected {start!r}")


def spl(graph: NavGraph, traj, start: str, goal: str, threshold: float = SUCCESS_THRESHOLD) -> float:
    traj = _traj(traj)
    graph.check(start)
    _check_start(traj, start)
    ok = success(graph, traj, goal, threshold)
    shortest = graph.geodesic(start, goal)
    if shortest == 0:
        return float(ok)
    if not ok:
        return 0.0
    return shortest / max(shortest, traj.length(graph))


def dtw(graph: NavGraph, query: Sequence[str], reference: Sequence[str]) -> float:
    n, m = len(query), len(reference)
    cost = np.full((n + 1, m + 1), np.inf)
    cost[0, 0] = 0.0
    for i in range(1, n + 1):
        d = graph.distances_from(query[i - 1])
        for j in range(1, m + 1):
            c = d.get(reference[j - 1], math.inf)
            cost[i, j] = c + min(cost[i - 1, j - 1], cost[i - 1, j], cost[i, j - 1])
    return float(cost[n, m])


def ndtw(graph: NavGraph, traj, reference, threshold: float = SUCCESS_THRESHOLD) -> float:
    traj, reference = _traj(traj), _traj(reference)
    for n in traj.node_ids + reference.node_ids:
        graph.check(n)
    cost = dtw(graph, traj.node_ids, reference.node_ids)
    return math.exp(-cost / (len(reference.node_ids) * threshold))


def goal_progress(graph: NavGraph, traj, start: str, goal: str) -> float:
    """Reduction in geodesic distance to the goal, in meters."""
    traj = _traj(traj)
    _check_start(traj, start)
    return graph.geodesic(start, goal) - graph.geodesic(traj.last, goal)


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    spl: float
    ndtw: float
    gp: float
    instruction_id: str = ""

    def to_record(self) -> dict:
        return {
            "instruction_id": self.instruction_id,
            "success": self.success,
            "spl": self.spl,
            "ndtw": self.ndtw,
            "gp": self.gp,
        }


def evaluate_episode(
    graph: NavGraph,
    traj,
    start: str,
    goal: str,
    reference=None,
    threshold: float = SUCCESS_THRESHOLD,
    instruction_id: str = "",
) -> EpisodeResult:
    """All four metrics for one episode.

    Without a reference path, nDTW is measured against the shortest path
    from start to goal.
    """
    traj = _traj(traj).validate(graph)
    if reference is None:
        reference = graph.shortest_path(start, goal)
    return EpisodeResult(
        success=success(graph, traj, goal, threshold),
        spl=spl(graph, traj, start, goal, threshold),
        ndtw=ndtw(graph, traj, reference, threshold),
        gp=goal_progress(graph, traj, start, goal),
        instruction_id=instruction_id,
    )


def aggregate(results: Sequence[EpisodeResult]) -> dict:
    """Mean metrics; SR is a percentage."""
    if not results:
        raise EmptyResultSet("no episodes to aggregate")
    n = len(results)
    return {
        "episodes": n,
        "SR": 100.0 * sum(r.success for r in results) / n,
        "SPL": math.fsum(r.spl for r in results) / n,
        "nDTW": math.fsum(r.ndtw for r in results) / n,
        "GP": math.fsum(r.gp for r in results) / n,
    }
