"""Imitation + actor-critic training.

Losses are minimised.  Per batch::

    L_IL  = mean_e  sum_t -log p_t(a*_t)                       (teacher-forced pass)
    L_RL  = mean_e [-sum_t (R_t - V_t) log p_t(a_t) - eta sum_t H(p_t)]   (sampled pass)
    L_V   = mean_e  sum_t 0.5 (R_t - V_t)^2
    L_MIX = (L_RL + L_V) + lambda * L_IL

The advantage is a constant in the policy term and the value head reads a
detached decoder state, so V is trained by L_V alone.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .agent import Rollout, init_model, rollout, value_baseline
from .config import ModelConfig, TrainConfig
from .encoder import Vocabulary, encode_instruction
from .metrics import TrajectoryReport, evaluate
from .nnmath import (
    ParameterSet,
    Tape,
    Tensor,
    backward,
    config_hash,
    exp,
    load_checkpoint,
    no_tape,
    rmsprop_step,
    save_checkpoint,
    square,
    tsum,
)
from .world import EnvironmentGraph, Episode, World

log = logging.getLogger(__name__)

CKPT_FORMAT = "syntaxnav.ckpt/1"


class TrainingError(ValueError):
    pass


class LengthMismatch(TrainingError):
    pass


@dataclass
class RewardTrace:
    rewards: list[float]
    returns: list[float]
    baselines: list[float]


# --------------------------------------------------------------------------
# rewards and returns


def compute_rewards(ro: Rollout, graph: EnvironmentGraph, goal: int, radius: float = 3.0) -> list[float]:
    """+1 for a move that gets strictly closer, else -1; the last step scores +-3."""
    positions = [s.viewpoint for s in ro.steps] + [ro.path[-1]]
    d = [graph.distance(v, goal) for v in positions]
    r = [1.0 if d[t + 1] < d[t] else -1.0 for t in range(len(ro.steps))]
    if r:
        r[-1] = 3.0 if d[-1] < radius else -3.0
    return r


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


# --------------------------------------------------------------------------
# losses


def il_loss(log_probs: Sequence[Tensor], actions: Sequence[int]) -> Tensor:
    if len(log_probs) != len(actions):
        raise LengthMismatch(f"{len(log_probs)} steps vs {len(actions)} teacher actions")
    return -sum((lp[a] for lp, a in zip(log_probs, actions)), Tensor._wrap(np.array(0.0), False))


def entropy(log_probs: Tensor) -> Tensor:
    return -tsum(exp(log_probs) * log_probs)


def rl_losses(ro: Rollout, returns: Sequence[float], values: Sequence[Tensor], eta: float) -> tuple[Tensor, Tensor]:
    if not len(ro.steps) == len(returns) == len(values):
        raise LengthMismatch(f"{len(ro.steps)} steps, {len(returns)} returns, {len(values)} baselines")
    zero = Tensor._wrap(np.array(0.0), False)
    policy, ent, value = zero, zero, zero
    for s, R, V in zip(ro.steps, returns, values):
        adv = R - float(V.data)
        policy = policy + s.log_probs[s.chosen] * (-adv)
        ent = ent + entropy(s.log_probs)
        value = value + square(V - R) * 0.5
    return policy - ent * eta, value


# --------------------------------------------------------------------------
# one update


@dataclass
class BatchItem:
    episode: Episode
    graph: EnvironmentGraph
    heading: float
    token_ids: list[int]
    rng: np.random.Generator | None = None


def mixed_step(params: ParameterSet, model: ModelConfig, batch: Sequence[BatchItem],
               cfg: TrainConfig) -> tuple[ParameterSet, dict[str, float]]:
    if not batch:
        raise TrainingError("empty batch")
    B = len(batch)
    zero = Tensor._wrap(np.array(0.0), False)
    with Tape() as tape:
        il_sum, rl_sum, v_sum = zero, zero, zero
        for item in batch:
            ep = item.episode
            enc = encode_instruction(params, model, item.token_ids, ep.tree)
            teach = rollout(params, ep, item.graph, enc, "teacher", item.heading, max_steps=cfg.max_steps)
            il_sum = il_sum + il_loss([s.log_probs for s in teach.steps], teach.actions)
            if cfg.il_only:
                continue
            ro = rollout(params, ep, item.graph, enc, "sample", item.heading, item.rng, cfg.max_steps)
            R = discounted_returns(compute_rewards(ro, item.graph, ep.goal, cfg.success_radius), cfg.gamma)
            V = [value_baseline(params, s.h.detach()) for s in ro.steps]
            l_rl, l_v = rl_losses(ro, R, V, cfg.eta)
            rl_sum = rl_sum + l_rl
            v_sum = v_sum + l_v
        L_IL, L_RL, L_V = il_sum * (1.0 / B), rl_sum * (1.0 / B), v_sum * (1.0 / B)
        L_MIX = (L_RL + L_V) + L_IL * cfg.lambda_il
    names = params.names()
    grads = backward(L_MIX, tape, wrt=params.tensors())
    new = rmsprop_step(params, dict(zip(names, grads)), cfg.lr, cfg.rms_rho, cfg.rms_eps, cfg.clip or None)
    report = {"L_IL": L_IL.item(), "L_RL": L_RL.item(), "L_V": L_V.item(), "L_MIX": L_MIX.item()}
    return new, report


# --------------------------------------------------------------------------
# data order and evaluation


def batch_indices(n: int, batch_size: int, seed: int, iteration: int) -> list[int]:
    """Stateless epoch-permutation batching: iteration i reads positions [iB, iB+B)."""
    out = []
    for pos in range(iteration * batch_size, (iteration + 1) * batch_size):
        epoch, k = divmod(pos, n)
        perm = _epoch_perm(n, seed, epoch)
        out.append(int(perm[k]))
    return out


_perm_cache: dict[tuple[int, int, int], np.ndarray] = {}


def _epoch_perm(n: int, seed: int, epoch: int) -> np.ndarray:
    key = (n, seed, epoch)
    if key not in _perm_cache:
        if len(_perm_cache) > 64:
            _perm_cache.clear()
        _perm_cache[key] = np.random.default_rng([seed, 3, epoch]).permutation(n)
    return _perm_cache[key]


def episode_rng(seed: int, iteration: int, episode: Episode) -> np.random.Generator:
    return np.random.default_rng([seed, 2, iteration, int(episode.id.lstrip("ep") or 0)])


def greedy_paths(params: ParameterSet, model: ModelConfig, vocab: Vocabulary, world: World,
                 episodes: Sequence[Episode], max_steps: int) -> list[list[int]]:
    paths = []
    for ep in episodes:
        enc = encode_instruction(params, model, vocab.encode(ep.tokens), ep.tree)
        ro = rollout(params, ep, world.graph_for(ep), enc, "greedy", world.start_heading(ep), max_steps=max_steps)
        paths.append(ro.path)
    return paths


def evaluate_params(params: ParameterSet, model: ModelConfig, vocab: Vocabulary, world: World,
                    episodes: Sequence[Episode], max_steps: int) -> TrajectoryReport:
    with no_tape():
        paths = greedy_paths(params, model, vocab, world, episodes, max_steps)
    return evaluate(episodes, paths, world.envs)


# --------------------------------------------------------------------------
# checkpoints


def checkpoint_header(cfg: TrainConfig, model: ModelConfig, vocab: Vocabulary, seed: int,
                      iteration: int, world: World) -> dict:
    return {
        "format": CKPT_FORMAT,
        "config": cfg.as_dict(),
        "config_hash": config_hash(cfg.as_dict()),
        "model": asdict(model),
        "vocab": vocab.itos[2:],
        "seed": seed,
        "iteration": iteration,
        "world_seed": world.seed,
    }


@dataclass
class LoadedModel:
    params: ParameterSet
    model: ModelConfig
    vocab: Vocabulary
    header: dict


def load_model(path) -> LoadedModel:
    ck = load_checkpoint(path)
    h = ck.header
    if h.get("format") != CKPT_FORMAT:
        raise TrainingError(f"{path}: not a model checkpoint")
    return LoadedModel(ck.params, ModelConfig(**h["model"]), Vocabulary(h["vocab"]), h)


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: ParameterSet
    model: ModelConfig
    vocab: Vocabulary
    iteration: int
    log: list[dict]


def train(world: World, cfg: TrainConfig, seed: int, out: str | os.PathLike | None = None,
          log_path: str | os.PathLike | None = None, resume: str | os.PathLike | None = None,
          stop_after: int | None = None, on_log: Callable[[dict], None] | None = None) -> TrainResult:
    """Run ``cfg.iterations`` mixed steps; deterministic given ``seed``.

    Batches and sampling streams are pure functions of (seed, iteration), so a
    checkpoint holding parameters, RMSProp state and the iteration count is
    enough to resume bit-for-bit.  ``stop_after`` halts early (after that many
    iterations in this call) and still writes the checkpoint.
    """
    cfg.validate()
    train_eps = world.split("train")
    if not train_eps:
        raise TrainingError("world has no training episodes")
    model = cfg.model(world.config.feature_dim)
    if resume is not None:
        lm = load_model(resume)
        if lm.header["config_hash"] != config_hash(cfg.as_dict()) or lm.header["seed"] != seed:
            raise TrainingError("resume checkpoint was written with a different config or seed")
        params, vocab, start = lm.params, lm.vocab, lm.header["iteration"]
    else:
        vocab = Vocabulary.build(e.tokens for e in train_eps)
        params = init_model(model, len(vocab), seed)
        start = 0
    token_ids = {e.id: vocab.encode(e.tokens) for e in world.episodes}
    val = {s: world.split(s)[: cfg.eval_episodes] for s in ("val_seen", "val_unseen")}
    end = cfg.iterations if stop_after is None else min(cfg.iterations, start + stop_after)
    records = []
    log_file = open(log_path, "a" if resume is not None else "w") if log_path else None
    try:
        for it in range(start, end):
            batch = [
                BatchItem(ep, world.graph_for(ep), world.start_heading(ep), token_ids[ep.id],
                          episode_rng(seed, it, ep))
                for ep in (train_eps[i] for i in batch_indices(len(train_eps), cfg.batch_size, seed, it))
            ]
            params, report = mixed_step(params, model, batch, cfg)
            rec = {"iteration": it + 1, **report}
            if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
                for s, key in (("val_seen", "SR_seen"), ("val_unseen", "SR_unseen")):
                    if val[s]:
                        rec[key] = evaluate_params(params, model, vocab, world, val[s], cfg.max_steps).sr
            records.append(rec)
            if log_file:
                log_file.write(json.dumps(rec, sort_keys=True) + "\n")
                log_file.flush()
            if on_log:
                on_log(rec)
            if out is not None and cfg.ckpt_every and (it + 1) % cfg.ckpt_every == 0:
                save_checkpoint(out, params, checkpoint_header(cfg, model, vocab, seed, it + 1, world))
    finally:
        if log_file:
            log_file.close()
    if out is not None:
        save_checkpoint(out, params, checkpoint_header(cfg, model, vocab, seed, end, world))
    return TrainResult(params, model, vocab, end, records)
