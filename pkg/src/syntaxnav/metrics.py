"""Trajectory-fidelity scores: SR, SPL, nDTW, sDTW, CLS.

Every distance is the shortest-path metric distance on the environment graph.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .world import EnvironmentGraph, Episode

SUCCESS_RADIUS = 3.0
COLUMNS = ("SR", "SPL", "nDTW", "sDTW", "CLS")


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryPair:
    predicted: tuple[int, ...]
    reference: tuple[int, ...]
    graph: EnvironmentGraph = field(compare=False, repr=False)
    d_th: float = SUCCESS_RADIUS

    def __post_init__(self):
        if not self.predicted or not self.reference:
            raise ValueError("paths must be non-empty")
        if self.d_th <= 0:
            raise ValueError("d_th must be positive")
        for v in (*self.predicted, *self.reference):
            if v not in self.graph:
                raise ValueError(f"viewpoint {v} not in graph {self.graph.name}")

    def d(self, a: int, b: int) -> float:
        return self.graph.distance(a, b)


def success(pair: TrajectoryPair) -> int:
    return int(pair.d(pair.predicted[-1], pair.reference[-1]) < pair.d_th)


def spl(pair: TrajectoryPair) -> float:
    if not success(pair):
        return 0.0
    l = pair.d(pair.reference[0], pair.reference[-1])
    p = pair.graph.path_length(list(pair.predicted))
    m = max(p, l)
    return 1.0 if m == 0 else l / m


def distance_matrix(pair: TrajectoryPair) -> np.ndarray:
    return np.array([[pair.d(q, r) for r in pair.reference] for q in pair.predicted])


def dtw(cost: np.ndarray) -> float:
    """Minimal cumulative cost over monotone alignments matching both endpoints."""
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), math.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def ndtw(pair: TrajectoryPair) -> float:
    return math.exp(-dtw(distance_matrix(pair)) / (len(pair.reference) * pair.d_th))


def sdtw(pair: TrajectoryPair) -> float:
    return success(pair) * ndtw(pair)


def coverage(pair: TrajectoryPair) -> float:
    return float(np.mean([
        math.exp(-min(pair.d(q, r) for q in pair.predicted) / pair.d_th) for r in pair.reference
    ]))


def cls(pair: TrajectoryPair) -> float:
    pc = coverage(pair)
    epl = pc * pair.graph.path_length(list(pair.reference))
    p = pair.graph.path_length(list(pair.predicted))
    denom = epl + abs(epl - p)
    ls = 1.0 if denom == 0 else epl / denom
    return pc * ls


@dataclass
class EpisodeScore:
    episode_id: str
    split: str
    success: int
    spl: float
    ndtw: float
    sdtw: float
    cls: float
    path_length_m: float

    def row(self) -> tuple[float, ...]:
        return (float(self.success), self.spl, self.ndtw, self.sdtw, self.cls)


def score_pair(episode_id: str, split: str, pair: TrajectoryPair) -> EpisodeScore:
    return EpisodeScore(episode_id, split, success(pair), spl(pair), ndtw(pair), sdtw(pair), cls(pair),
                        pair.graph.path_length(list(pair.predicted)))


@dataclass
class TrajectoryReport:
    episodes: list[EpisodeScore]

    def splits(self) -> list[str]:
        return sorted({e.split for e in self.episodes})

    def aggregate(self, split: str | None = None) -> dict[str, float]:
        rows = [e.row() for e in self.episodes if split is None or e.split == split]
        if not rows:
            return {c: 0.0 for c in COLUMNS} | {"n": 0}
        # fsum is correctly rounded, so the means do not depend on episode order
        out = {c: math.fsum(col) / len(rows) for c, col in zip(COLUMNS, zip(*rows))}
        out["n"] = len(rows)
        return out

    @property
    def sr(self) -> float:
        return self.aggregate()["SR"]

    def to_json(self) -> str:
        body = {
            "format": "syntaxnav.report/1",
            "aggregate": self.aggregate(),
            "splits": {s: self.aggregate(s) for s in self.splits()},
            "episodes": [asdict(e) for e in sorted(self.episodes, key=lambda e: (e.episode_id, e.split))],
        }
        return json.dumps(body, sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("split", *COLUMNS, "n"))
        for s in [*self.splits(), "all"]:
            agg = self.aggregate(None if s == "all" else s)
            w.writerow((s, *(f"{agg[c]:.6f}" for c in COLUMNS), agg["n"]))
        return buf.getvalue()


def evaluate(episodes: Sequence[Episode], trajectories: Sequence[Sequence[int]],
             graphs: dict[str, EnvironmentGraph], d_th: float = SUCCESS_RADIUS) -> TrajectoryReport:
    if len(episodes) != len(trajectories):
        raise LengthMismatch(f"{len(episodes)} episodes vs {len(trajectories)} trajectories")
    scores = [
        score_pair(ep.id, ep.split, TrajectoryPair(tuple(q), tuple(ep.path), graphs[ep.env], d_th))
        for ep, q in zip(episodes, trajectories)
    ]
    return TrajectoryReport(scores)
