"""Procedural worlds: grid environments, landmark layouts, and episodes."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..treeio import DependencyTree, TreeError, parse_conllu, to_conllu, validate_tree
from .grammar import Grammar, GrammarError, generate_instruction, is_unambiguous
from .graph import (
    LEVEL,
    N_HEADINGS,
    N_VIEWS,
    WALL,
    Edge,
    EnvironmentGraph,
    Viewpoint,
    WorldError,
    shortest_path,
    view_index,
)

WORLD_FORMAT = "syntaxnav.world/1"
EPISODE_FORMAT = "syntaxnav.episode/1"

DEFAULT_LANDMARKS = (
    "stairs", "kitchen", "sofa", "table", "door", "bed",
    "plant", "fireplace", "window", "bathtub", "piano", "closet",
)

SPLITS = ("train", "val_seen", "val_unseen")

# named RNG substreams derived from the world seed
_LAYOUT, _EPISODES, _NOISE = 1, 2, 3


class ConfigInvalid(WorldError, ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    grid_w: int = 6
    grid_h: int = 6
    landmarks: tuple[str, ...] = DEFAULT_LANDMARKS
    episodes: int = 500
    unseen_fraction: float = 0.2
    seen_envs: int = 8
    unseen_envs: int = 2
    feature_dim: int = 64
    noise_sigma: float = 0.1
    edge_length: float = 2.0
    min_hops: int = 1
    max_hops: int = 20

    def validate(self) -> None:
        if self.grid_w < 2 or self.grid_h < 2:
            raise ConfigInvalid(f"grid must be at least 2x2, got {self.grid_w}x{self.grid_h}")
        if self.episodes < 1:
            raise ConfigInvalid("episode count must be >= 1")
        if not 0.0 <= self.unseen_fraction < 1.0:
            raise ConfigInvalid("unseen_fraction must lie in [0, 1)")
        if self.seen_envs < 1 or (self.unseen_fraction > 0 and self.unseen_envs < 1):
            raise ConfigInvalid("need at least one seen environment (and one unseen if holding out)")
        if len(set(self.landmarks)) < 2:
            raise ConfigInvalid("need at least two distinct landmarks")
        if self.feature_dim < 1 or self.edge_length <= 0 or self.noise_sigma < 0:
            raise ConfigInvalid("feature_dim, edge_length and noise_sigma must be positive")
        if not 1 <= self.min_hops <= self.max_hops:
            raise ConfigInvalid("need 1 <= min_hops <= max_hops")

    def split_counts(self) -> dict[str, int]:
        """Held-out episodes are split evenly between seen and unseen validation."""
        held = int(round(self.unseen_fraction * self.episodes))
        seen = held // 2
        return {"train": self.episodes - held, "val_seen": seen, "val_unseen": held - seen}


@dataclass(frozen=True)
class Episode:
    id: str
    env: str
    tokens: tuple[str, ...]
    tree: DependencyTree
    path: tuple[int, ...]
    split: str
    language: str = "en"

    @property
    def start(self) -> int:
        return self.path[0]

    @property
    def goal(self) -> int:
        return self.path[-1]

    @property
    def instruction(self) -> str:
        return " ".join(self.tokens)


@dataclass
class World:
    seed: int
    config: WorldConfig
    envs: dict[str, EnvironmentGraph]
    layouts: dict[str, str]
    episodes: list[Episode] = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def split(self, name: str) -> list[Episode]:
        return [e for e in self.episodes if e.split == name]

    def graph_for(self, episode: Episode) -> EnvironmentGraph:
        return self.envs[episode.env]

    def start_heading(self, episode: Episode) -> float:
        """Agents start facing along the first edge of the reference path."""
        return self.envs[episode.env].heading(episode.path[0], episode.path[1])

    def episode(self, episode_id: str) -> Episode:
        for e in self.episodes:
            if e.id == episode_id:
                return e
        raise KeyError(episode_id)


def grid_environment(name: str, cfg: WorldConfig, rng: np.random.Generator, noise_seed: int) -> EnvironmentGraph:
    W, H, L = cfg.grid_w, cfg.grid_h, cfg.edge_length
    here = [cfg.landmarks[int(k)] for k in rng.integers(len(cfg.landmarks), size=W * H)]
    pos = {y * W + x: (x * L, y * L, 0.0) for y in range(H) for x in range(W)}
    edges = []
    for y in range(H):
        for x in range(W):
            v = y * W + x
            if x + 1 < W:
                edges.append(Edge(v, v + 1, L))
            if y + 1 < H:
                edges.append(Edge(v, v + W, L))
    nbr: dict[int, list[int]] = {v: [] for v in pos}
    for e in edges:
        nbr[e.a].append(e.b)
        nbr[e.b].append(e.a)
    vps = []
    for v, p in pos.items():
        slices = [here[v]] * N_VIEWS
        for k in range(N_HEADINGS):
            slices[view_index(k, LEVEL)] = WALL
        for nb in nbr[v]:
            q = pos[nb]
            h = math.atan2(q[0] - p[0], q[1] - p[1]) % (2 * math.pi)
            k = int(round(h / (2 * math.pi / N_HEADINGS))) % N_HEADINGS
            slices[view_index(k, LEVEL)] = here[nb]
        vps.append(Viewpoint(v, p, tuple(slices)))
    return EnvironmentGraph(name, vps, edges, cfg.feature_dim, noise_seed, cfg.noise_sigma)


def generate_world(seed: int, config: WorldConfig | None = None, grammar: Grammar | None = None) -> World:
    """Deterministic in ``seed``: identical (seed, config) gives identical bytes on save."""
    cfg = config or WorldConfig()
    cfg.validate()
    grammar = grammar or Grammar()
    layout_rng = np.random.default_rng([seed, _LAYOUT])
    noise_rng = np.random.default_rng([seed, _NOISE])
    envs: dict[str, EnvironmentGraph] = {}
    layouts: dict[str, str] = {}
    for kind, count in (("seen", cfg.seen_envs), ("unseen", cfg.unseen_envs)):
        for i in range(count):
            name = f"{kind}{i:02d}"
            envs[name] = grid_environment(name, cfg, layout_rng, int(noise_rng.integers(2**62)))
            layouts[name] = kind
    world = World(seed, cfg, envs, layouts)

    rng = np.random.default_rng([seed, _EPISODES])
    used: set[tuple[str, int, int]] = set()
    counts = cfg.split_counts()
    n = 0
    for split in SPLITS:
        names = [k for k, v in layouts.items() if v == ("unseen" if split == "val_unseen" else "seen")]
        for _ in range(counts[split]):
            world.episodes.append(_sample_episode(world, names, split, f"ep{n:05d}", rng, used, grammar))
            n += 1
    return world


def _sample_episode(world: World, env_names: list[str], split: str, ep_id: str, rng: np.random.Generator,
                    used: set, grammar: Grammar) -> Episode:
    cfg = world.config
    for _ in range(10_000):
        env = env_names[int(rng.integers(len(env_names)))]
        g = world.envs[env]
        a, b = (int(v) for v in rng.choice(len(g.viewpoints), size=2, replace=False))
        if (env, a, b) in used:
            continue
        path, _ = shortest_path(g, a, b)
        if not cfg.min_hops <= len(path) - 1 <= cfg.max_hops or not is_unambiguous(g, path):
            continue
        try:
            tokens, tree = generate_instruction(g, path, grammar, rng)
        except GrammarError:
            continue
        used.add((env, a, b))
        return Episode(ep_id, env, tuple(tokens), tree, tuple(path), split)
    raise ConfigInvalid("could not sample enough distinct unambiguous episodes; enlarge the grid or inventory")


# --------------------------------------------------------------------------
# persistence


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def world_to_json(world: World) -> str:
    envs = []
    for name, g in world.envs.items():
        envs.append({
            "name": name,
            "layout": world.layouts[name],
            "noise_seed": g.noise_seed,
            "viewpoints": [{"id": v.id, "pos": list(v.pos), "slices": list(v.slices)} for v in g.viewpoints.values()],
            "edges": [{"a": e.a, "b": e.b, "len": e.length} for e in g.edges],
        })
    cfg = asdict(world.config)
    cfg["landmarks"] = list(cfg["landmarks"])
    return _dumps({
        "format": WORLD_FORMAT,
        "seed": world.seed,
        "config": cfg,
        "feature_dim": world.config.feature_dim,
        "noise_sigma": world.config.noise_sigma,
        "environments": envs,
    }) + "\n"


def episode_to_json(ep: Episode) -> str:
    return _dumps({
        "format": EPISODE_FORMAT,
        "id": ep.id,
        "env": ep.env,
        "split": ep.split,
        "language": ep.language,
        "instruction": ep.instruction,
        "path": list(ep.path),
        "conllu": to_conllu(ep.tree),
    })


def save_world(world: World, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "world.json").write_text(world_to_json(world), encoding="utf-8")
    with open(out / "episodes.jsonl", "w", encoding="utf-8") as f:
        for ep in world.episodes:
            f.write(episode_to_json(ep) + "\n")


def load_world(in_dir) -> World:
    """Load and validate ``world.json`` + ``episodes.jsonl``; raises WorldError on any defect."""
    d = Path(in_dir)
    try:
        raw = json.loads((d / "world.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise WorldError(f"cannot read {d / 'world.json'}: {exc}") from exc
    if raw.get("format") != WORLD_FORMAT:
        raise WorldError(f"unsupported world format {raw.get('format')!r}")
    c = dict(raw["config"])
    c["landmarks"] = tuple(c["landmarks"])
    cfg = WorldConfig(**c)
    envs, layouts = {}, {}
    for e in raw["environments"]:
        vps = [Viewpoint(int(v["id"]), tuple(float(x) for x in v["pos"]), tuple(v["slices"])) for v in e["viewpoints"]]
        edges = [Edge(int(x["a"]), int(x["b"]), float(x["len"])) for x in e["edges"]]
        g = EnvironmentGraph(e["name"], vps, edges, int(raw["feature_dim"]), int(e["noise_seed"]),
                             float(raw["noise_sigma"]))
        _validate_graph(g)
        envs[e["name"]] = g
        layouts[e["name"]] = e["layout"]
    world = World(int(raw["seed"]), cfg, envs, layouts)
    try:
        lines = (d / "episodes.jsonl").read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise WorldError(f"cannot read episodes: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            world.episodes.append(_episode_from_json(json.loads(line), world))
        except (KeyError, ValueError, TreeError) as exc:
            raise WorldError(f"episodes.jsonl line {lineno}: {exc}") from exc
    return world


def _episode_from_json(rec: dict, world: World) -> Episode:
    if rec.get("format") != EPISODE_FORMAT:
        raise WorldError(f"unsupported episode format {rec.get('format')!r}")
    trees = parse_conllu(rec["conllu"])
    if len(trees) != 1:
        raise WorldError(f"episode {rec['id']}: expected one parse, got {len(trees)}")
    ep = Episode(rec["id"], rec["env"], tuple(rec["instruction"].split()), trees[0], tuple(rec["path"]),
                 rec["split"], rec.get("language", "en"))
    validate_episode(ep, world)
    return ep


def validate_episode(ep: Episode, world: World) -> None:
    if ep.env not in world.envs:
        raise WorldError(f"episode {ep.id}: unknown environment {ep.env}")
    if ep.split not in SPLITS:
        raise WorldError(f"episode {ep.id}: unknown split {ep.split}")
    g = world.envs[ep.env]
    validate_tree(ep.tree)
    if len(ep.tree) != len(ep.tokens):
        raise WorldError(f"episode {ep.id}: tree has {len(ep.tree)} tokens, instruction {len(ep.tokens)}")
    if len(ep.path) < 2:
        raise WorldError(f"episode {ep.id}: path needs at least two viewpoints")
    for a, b in zip(ep.path, ep.path[1:]):
        if a not in g or b not in g.adj[a]:
            raise WorldError(f"episode {ep.id}: no edge {a}-{b}")


def _validate_graph(g: EnvironmentGraph) -> None:
    for v in g.viewpoints.values():
        if len(v.slices) != N_VIEWS:
            raise WorldError(f"{g.name}: viewpoint {v.id} has {len(v.slices)} slices, expected {N_VIEWS}")
    for e in g.edges:
        pa, pb = g.viewpoints[e.a].pos, g.viewpoints[e.b].pos
        if abs(math.dist(pa, pb) - e.length) > 1e-9:
            raise WorldError(f"{g.name}: edge {e.a}-{e.b} length {e.length} disagrees with geometry")
    if not g.is_connected():
        raise WorldError(f"{g.name}: graph is not connected")
