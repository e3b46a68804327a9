"""Cross-modal navigation policy: panoramic attention, decoder, language attention, scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .encoder import InstructionEncoding, encode_instruction, init_encoder
from .nnmath import (
    ParameterSet,
    ShapeMismatch,
    Tensor,
    concat,
    log_softmax,
    lstm_cell,
    matmul,
    relu,
    softmax,
    tanh,
)
from .world import STOP, EnvironmentGraph, Episode, NavState, step, teacher_action


class AgentError(ValueError):
    pass


class EmptyEncoding(AgentError):
    pass


class NoCandidates(AgentError):
    pass


MODES = ("greedy", "sample", "teacher")


@dataclass
class AgentState:
    h: Tensor
    c: Tensor
    h_tilde: Tensor
    prev_action_embedding: Tensor


@dataclass
class StepTrace:
    viewpoint: int
    beta: np.ndarray
    gamma: np.ndarray
    probs: np.ndarray
    candidate_ids: list[int]
    chosen: int
    log_probs: Tensor = field(repr=False)
    h: Tensor = field(repr=False)

    @property
    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())


@dataclass
class Rollout:
    path: list[int]
    steps: list[StepTrace]
    stopped: bool  # chose STOP, as opposed to hitting the step limit

    @property
    def actions(self) -> list[int]:
        return [s.chosen for s in self.steps]


def _const(x: np.ndarray) -> Tensor:
    return Tensor._wrap(x, False)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


# --------------------------------------------------------------------------
# parameters


def init_agent(params: ParameterSet, cfg: ModelConfig, rng: np.random.Generator) -> None:
    F, D, Hd, A = cfg.view_dim, cfg.memory_dim, cfg.decoder_hidden, cfg.action_dim
    params.matrix("agent.W_init", (D, Hd), rng)
    params.bias("agent.b_init", Hd)
    params.matrix("agent.W_F", (Hd, F), rng)
    params.matrix("agent.decoder.Wx", (F + A, 4 * Hd), rng)
    params.matrix("agent.decoder.Wh", (Hd, 4 * Hd), rng)
    params.bias("agent.decoder.b", 4 * Hd)
    params.matrix("agent.W_U", (Hd, D), rng)
    params.matrix("agent.W_M", (D + Hd, Hd), rng)
    params.matrix("agent.W_G", (Hd, F), rng)
    params.matrix("agent.W_A", (F, A), rng)
    params.bias("agent.b_A", A)
    params.matrix("value.W_v1", (Hd, cfg.value_hidden), rng)
    params.matrix("value.W_v2", (cfg.value_hidden,), rng)


def init_model(cfg: ModelConfig, vocab_size: int, seed: int) -> ParameterSet:
    """Fresh parameters; the init substream is independent of world and rollout streams."""
    rng = np.random.default_rng([seed, 1])
    params = ParameterSet()
    init_encoder(params, cfg, vocab_size, rng)
    init_agent(params, cfg, rng)
    return params


# --------------------------------------------------------------------------
# one decoding step


def attend_panorama(views: Tensor, h_tilde_prev: Tensor, W_F: Tensor) -> tuple[Tensor, Tensor]:
    """beta_p = softmax_p(f_p . W_F h~); returns (f~, beta)."""
    _check(views.shape[1] == W_F.shape[1], f"view width {views.shape[1]} vs W_F {W_F.shape}")
    beta = softmax(matmul(views, matmul(h_tilde_prev, W_F)))
    return matmul(beta, views), beta


def initial_state(params: ParameterSet, encoding: InstructionEncoding) -> AgentState:
    Hd = params["agent.decoder.Wh"].shape[0]
    A = params["agent.W_A"].shape[1]
    zeros = _const(np.zeros(Hd))
    h_tilde = tanh(matmul(encoding.root_state, params["agent.W_init"]) + params["agent.b_init"])
    return AgentState(zeros, zeros, h_tilde, _const(np.zeros(A)))


def decode_step(params: ParameterSet, f_tilde: Tensor, prev_action_embedding: Tensor,
                state: AgentState) -> tuple[Tensor, Tensor]:
    """h_t, c_t = LSTM([f~; a~_{t-1}], h~_{t-1}, c_{t-1})."""
    x = concat([f_tilde, prev_action_embedding])
    Wx = params["agent.decoder.Wx"]
    _check(x.shape[0] == Wx.shape[0], f"decoder input width {x.shape[0]} vs {Wx.shape[0]}")
    return lstm_cell(x, state.h_tilde, state.c, Wx, params["agent.decoder.Wh"], params["agent.decoder.b"])


def attend_language(encoding: InstructionEncoding, h: Tensor, W_U: Tensor) -> tuple[Tensor, Tensor]:
    """gamma_i = softmax_i(u_i . W_U h); returns (u~, gamma)."""
    if len(encoding) == 0:
        raise EmptyEncoding("instruction encoding has no nodes")
    nodes = encoding.node_states
    _check(nodes.shape[1] == W_U.shape[1], f"node width {nodes.shape[1]} vs W_U {W_U.shape}")
    gamma = softmax(matmul(nodes, matmul(h, W_U)))
    return matmul(gamma, nodes), gamma


def fuse_context(u_tilde: Tensor, h: Tensor, W_M: Tensor) -> Tensor:
    x = concat([u_tilde, h])
    _check(x.shape[0] == W_M.shape[0], f"fusion input width {x.shape[0]} vs W_M {W_M.shape}")
    return tanh(matmul(x, W_M))


def action_logits(candidates: Tensor, h_tilde: Tensor, W_G: Tensor) -> Tensor:
    if candidates.shape[0] == 0:
        raise NoCandidates("candidate set is empty")
    _check(candidates.shape[1] == W_G.shape[1], f"candidate width {candidates.shape[1]} vs W_G {W_G.shape}")
    return matmul(candidates, matmul(h_tilde, W_G))


def score_actions(candidates: Tensor, h_tilde: Tensor, W_G: Tensor) -> Tensor:
    """p_k = softmax_k(g_k . W_G h~)."""
    return softmax(action_logits(candidates, h_tilde, W_G))


def embed_action(params: ParameterSet, candidate: Tensor) -> Tensor:
    return tanh(matmul(candidate, params["agent.W_A"]) + params["agent.b_A"])


def value_baseline(params: ParameterSet, h: Tensor) -> Tensor:
    """V(h) = W_v2 relu(W_v1 h)."""
    W1 = params["value.W_v1"]
    _check(h.shape[-1] == W1.shape[0], f"value input width {h.shape[-1]} vs {W1.shape}")
    return matmul(relu(matmul(h, W1)), params["value.W_v2"])


# --------------------------------------------------------------------------
# episodes


def rollout(params: ParameterSet, episode: Episode, graph: EnvironmentGraph, encoding: InstructionEncoding,
            mode: str, heading: float, rng: np.random.Generator | None = None, max_steps: int = 20) -> Rollout:
    if mode not in MODES:
        raise AgentError(f"mode must be one of {MODES}")
    if mode == "sample" and rng is None:
        raise AgentError("sample mode needs an rng")
    W_F, W_U, W_M, W_G = (params[f"agent.{n}"] for n in ("W_F", "W_U", "W_M", "W_G"))
    agent = initial_state(params, encoding)
    nav = NavState(episode.start, heading)
    path = [nav.viewpoint]
    traces = []
    while not nav.done:
        pano = graph.panorama(nav)
        cands = _const(pano.candidates)
        f_tilde, beta = attend_panorama(_const(pano.views), agent.h_tilde, W_F)
        h, c = decode_step(params, f_tilde, agent.prev_action_embedding, agent)
        u_tilde, gamma = attend_language(encoding, h, W_U)
        h_tilde = fuse_context(u_tilde, h, W_M)
        logp = log_softmax(action_logits(cands, h_tilde, W_G))
        probs = np.exp(logp.data)
        if mode == "teacher":
            a = teacher_action(graph, nav, episode.goal)
        elif mode == "greedy":
            a = int(np.argmax(probs))
        else:
            a = int(rng.choice(len(probs), p=probs / probs.sum()))
        traces.append(StepTrace(nav.viewpoint, beta.data, gamma.data, probs, pano.candidate_ids, a, logp, h))
        nav = step(graph, nav, a, max_steps)
        if pano.candidate_ids[a] != STOP:
            path.append(nav.viewpoint)
        agent = AgentState(h, c, h_tilde, embed_action(params, cands[a]))
    stopped = traces[-1].candidate_ids[traces[-1].chosen] == STOP
    return Rollout(path, traces, stopped)


class Agent:
    """Parameters plus the vocabulary and model shape needed to run episodes."""

    def __init__(self, cfg: ModelConfig, vocab, params: ParameterSet):
        self.cfg = cfg
        self.vocab = vocab
        self.params = params

    @classmethod
    def fresh(cls, cfg: ModelConfig, vocab, seed: int) -> "Agent":
        return cls(cfg, vocab, init_model(cfg, len(vocab), seed))

    def encode(self, episode: Episode, params: ParameterSet | None = None) -> InstructionEncoding:
        return encode_instruction(params or self.params, self.cfg, self.vocab.encode(episode.tokens), episode.tree)

    def run(self, episode: Episode, graph: EnvironmentGraph, heading: float, mode: str = "greedy",
            rng: np.random.Generator | None = None, max_steps: int = 20) -> Rollout:
        enc = self.encode(episode)
        return rollout(self.params, episode, graph, enc, mode, heading, rng, max_steps)


def trace_to_json(episode: Episode, ro: Rollout) -> dict:
    """Per-step attention record; node rows follow ``encoding.node_ids`` order."""
    return {
        "episode_id": episode.id,
        "steps": [
            {
                "viewpoint": s.viewpoint,
                "beta": s.beta.tolist(),
                "gamma": s.gamma.tolist(),
                "actions": [{"candidate": c, "prob": float(p)} for c, p in zip(s.candidate_ids, s.probs)],
                "chosen": s.candidate_ids[s.chosen],
            }
            for s in ro.steps
        ],
    }
