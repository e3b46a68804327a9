"""Viewpoint graphs, panoramas, and the navigation simulator."""

from __future__ import annotations

import heapq
import math
import zlib
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

N_HEADINGS = 12
ELEVATIONS = (-math.pi / 6, 0.0, math.pi / 6)
N_VIEWS = N_HEADINGS * len(ELEVATIONS)
LEVEL = 1  # index of the 0-elevation row
WALL = "wall"
STOP = -1  # sentinel viewpoint id for the STOP candidate
TOL = 1e-9


class WorldError(Exception):
    pass


class UnknownViewpoint(WorldError, KeyError):
    pass


class Unreachable(WorldError):
    pass


class AlreadyDone(WorldError):
    pass


class ActionOutOfRange(WorldError, IndexError):
    pass


@dataclass(frozen=True)
class Viewpoint:
    id: int
    pos: tuple[float, float, float]
    slices: tuple[str, ...]

    @property
    def landmark(self) -> str:
        """The tag on the downward-looking slices, i.e. what stands here."""
        return self.slices[0]


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    length: float


@dataclass(frozen=True)
class NavState:
    viewpoint: int
    heading: float
    steps: int = 0
    done: bool = False


@dataclass
class Panorama:
    views: np.ndarray  # (36, feature_dim + 4)
    candidates: np.ndarray  # (K, feature_dim + 4); last row is STOP
    candidate_ids: list[int]  # neighbour viewpoint ids, STOP last

    @property
    def stop_index(self) -> int:
        return len(self.candidate_ids) - 1


def view_index(heading_idx: int, elev_idx: int) -> int:
    return elev_idx * N_HEADINGS + heading_idx


def edge_heading(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    """Heading of the a->b direction: 0 points along +y, clockwise positive."""
    return math.atan2(b[0] - a[0], b[1] - a[1])


def wrap_angle(x: float) -> float:
    return math.atan2(math.sin(x), math.cos(x))


def orientation(theta: float, phi: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta), math.cos(phi), math.sin(phi)])


def landmark_vector(tag: str, dim: int) -> np.ndarray:
    """Fixed random projection of a landmark tag; identical in every world."""
    if tag == "none":
        return np.zeros(dim)
    rng = np.random.default_rng([zlib.crc32(tag.encode("utf-8")), dim])
    return rng.standard_normal(dim)


class EnvironmentGraph:
    """Immutable viewpoint graph with per-slice synthetic features."""

    def __init__(self, name: str, viewpoints: list[Viewpoint], edges: list[Edge], feature_dim: int,
                 noise_seed: int = 0, noise_sigma: float = 0.1):
        self.name = name
        self.viewpoints = {v.id: v for v in sorted(viewpoints, key=lambda v: v.id)}
        self.edges = list(edges)
        self.feature_dim = feature_dim
        self.noise_seed = noise_seed
        self.noise_sigma = noise_sigma
        adj: dict[int, list[int]] = {v: [] for v in self.viewpoints}
        self._len: dict[tuple[int, int], float] = {}
        for e in self.edges:
            if e.a not in adj or e.b not in adj:
                raise UnknownViewpoint(f"edge {e.a}-{e.b} references an unknown viewpoint")
            if e.length <= 0:
                raise WorldError(f"edge {e.a}-{e.b} has non-positive length")
            adj[e.a].append(e.b)
            adj[e.b].append(e.a)
            self._len[(e.a, e.b)] = self._len[(e.b, e.a)] = e.length
        self.adj = {k: sorted(v) for k, v in adj.items()}
        self._dist: dict[int, dict[int, float]] = {}
        self._pano_cache: dict[tuple[int, float], Panorama] = {}

    def __contains__(self, vp: int) -> bool:
        return vp in self.viewpoints

    def neighbors(self, vp: int) -> list[int]:
        if vp not in self.adj:
            raise UnknownViewpoint(vp)
        return self.adj[vp]

    def edge_length(self, a: int, b: int) -> float:
        return self._len[(a, b)]

    def heading(self, a: int, b: int) -> float:
        return edge_heading(self.viewpoints[a].pos, self.viewpoints[b].pos)

    def path_length(self, path: list[int]) -> float:
        total = 0.0
        for a, b in zip(path, path[1:]):
            if a != b:
                total += self._len[(a, b)]
        return total

    def is_connected(self) -> bool:
        if not self.viewpoints:
            return False
        first = next(iter(self.viewpoints))
        return len(self.distances_from(first)) == len(self.viewpoints)

    # -- features -----------------------------------------------------------

    @cached_property
    def base_features(self) -> np.ndarray:
        """(n_viewpoints, 36, feature_dim): landmark projection plus per-world noise."""
        ids = list(self.viewpoints)
        rng = np.random.default_rng(self.noise_seed)
        noise = rng.normal(0.0, self.noise_sigma, size=(len(ids), N_VIEWS, self.feature_dim))
        vecs: dict[str, np.ndarray] = {}
        out = np.empty_like(noise)
        for r, vid in enumerate(ids):
            for p, tag in enumerate(self.viewpoints[vid].slices):
                if tag not in vecs:
                    vecs[tag] = landmark_vector(tag, self.feature_dim)
                out[r, p] = vecs[tag] + noise[r, p]
        return out

    @cached_property
    def _row(self) -> dict[int, int]:
        return {vid: r for r, vid in enumerate(self.viewpoints)}

    def slice_toward(self, a: int, b: int) -> int:
        h = self.heading(a, b)
        k = int(round((h % (2 * math.pi)) / (2 * math.pi / N_HEADINGS))) % N_HEADINGS
        return view_index(k, LEVEL)

    def panorama(self, state: NavState) -> Panorama:
        """Views and navigable candidates as seen from ``state``.

        Orientation blocks are relative to the agent's heading.  The STOP
        candidate (always last) has a zero base feature and orientation (1,0,1,0).
        """
        key = (state.viewpoint, state.heading)
        cached = self._pano_cache.get(key)
        if cached is not None:
            return cached
        vp = state.viewpoint
        if vp not in self.viewpoints:
            raise UnknownViewpoint(vp)
        base = self.base_features[self._row[vp]]
        orient = np.empty((N_VIEWS, 4))
        for e_idx, phi in enumerate(ELEVATIONS):
            for k in range(N_HEADINGS):
                theta = k * 2 * math.pi / N_HEADINGS - state.heading
                orient[view_index(k, e_idx)] = orientation(theta, phi)
        views = np.concatenate([base, orient], axis=1)
        nbrs = self.adj[vp]
        cands = np.zeros((len(nbrs) + 1, self.feature_dim + 4))
        for i, nb in enumerate(nbrs):
            theta = wrap_angle(self.heading(vp, nb) - state.heading)
            cands[i, : self.feature_dim] = base[self.slice_toward(vp, nb)]
            cands[i, self.feature_dim :] = orientation(theta, 0.0)
        cands[-1, self.feature_dim :] = orientation(0.0, 0.0)
        pano = Panorama(views, cands, list(nbrs) + [STOP])
        self._pano_cache[key] = pano
        return pano

    # -- metric structure -----------------------------------------------------

    def distances_from(self, src: int) -> dict[int, float]:
        if src not in self.viewpoints:
            raise UnknownViewpoint(src)
        d = self._dist.get(src)
        if d is not None:
            return d
        d = {src: 0.0}
        heap = [(0.0, src)]
        done = set()
        while heap:
            du, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for w in self.adj[u]:
                nd = du + self._len[(u, w)]
                if nd < d.get(w, math.inf) - TOL:
                    d[w] = nd
                    heapq.heappush(heap, (nd, w))
        self._dist[src] = d
        return d

    def distance(self, a: int, b: int) -> float:
        d = self.distances_from(b).get(a)
        if d is None:
            if a not in self.viewpoints:
                raise UnknownViewpoint(a)
            raise Unreachable(f"{a} cannot reach {b}")
        return d


def shortest_path(graph: EnvironmentGraph, a: int, b: int) -> tuple[list[int], float]:
    """Minimal-length path; among equal next hops the smallest viewpoint id wins."""
    if a not in graph or b not in graph:
        raise UnknownViewpoint(a if a not in graph else b)
    to_goal = graph.distances_from(b)
    if a not in to_goal:
        raise Unreachable(f"{a} cannot reach {b}")
    path = [a]
    cur = a
    while cur != b:
        for nb in graph.adj[cur]:
            if nb in to_goal and abs(graph.edge_length(cur, nb) + to_goal[nb] - to_goal[cur]) <= TOL:
                cur = nb
                break
        else:  # pragma: no cover - Dijkstra guarantees a successor
            raise Unreachable(f"no successor from {cur}")
        path.append(cur)
    return path, to_goal[a]


def teacher_action(graph: EnvironmentGraph, state: NavState, goal: int) -> int:
    """Candidate index of the next shortest-path hop (STOP index at the goal)."""
    nbrs = graph.neighbors(state.viewpoint)
    if state.viewpoint == goal:
        return len(nbrs)
    path, _ = shortest_path(graph, state.viewpoint, goal)
    return nbrs.index(path[1])


def step(graph: EnvironmentGraph, state: NavState, action: int, max_steps: int) -> NavState:
    if state.done:
        raise AlreadyDone("episode already finished")
    nbrs = graph.neighbors(state.viewpoint)
    if not 0 <= action <= len(nbrs):
        raise ActionOutOfRange(f"action {action} with {len(nbrs) + 1} candidates")
    if action == len(nbrs):
        return replace(state, done=True)
    nb = nbrs[action]
    steps = state.steps + 1
    return NavState(nb, graph.heading(state.viewpoint, nb), steps, steps >= max_steps)


def replay_teacher(graph: EnvironmentGraph, start: int, goal: int, heading: float, max_steps: int) -> list[int]:
    """Trajectory produced by always executing the teacher action."""
    state = NavState(start, heading)
    path = [start]
    while not state.done:
        state = step(graph, state, teacher_action(graph, state, goal), max_steps)
        if state.viewpoint != path[-1]:
            path.append(state.viewpoint)
    return path
