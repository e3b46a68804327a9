"""Per-submodule finite-difference checks used by ``syntaxnav gradcheck`` and the tests.

Parameters are redrawn from N(0, 0.5^2) instead of the training init: the
small training init leaves some gradient entries near 1e-9, where central
differences are dominated by float roundoff rather than by any real error.
"""

from __future__ import annotations

import numpy as np

from .agent import (
    AgentState,
    attend_language,
    attend_panorama,
    decode_step,
    embed_action,
    fuse_context,
    init_model,
    initial_state,
    score_actions,
    value_baseline,
)
from .config import ModelConfig
from .encoder import (
    InstructionEncoding,
    bilstm_encode,
    chain_encode,
    embed_tokens,
    meanpool_encode,
    treelstm_encode,
)
from .nnmath import GradCheckResult, ParameterSet, Tensor, grad_check, log, square, tsum
from .treeio import DependencyTree

SUBMODULES = ("embedding", "bilstm", "chain2", "treelstm", "meanpool", "attention", "decoder", "value")
TOLERANCE = 1e-4

_DIMS = dict(embed_dim=4, bilstm_hidden=3, tree_hidden=6, action_dim=3, decoder_hidden=5, value_hidden=4,
             feature_dim=4)
_VOCAB = 10
_LEN = 5


def randomize_params(params: ParameterSet, rng: np.random.Generator, scale: float = 0.5) -> None:
    for _, t in params.items():
        t.data[...] = rng.normal(0.0, scale, size=t.data.shape)


def _random_tree(rng: np.random.Generator, n: int) -> DependencyTree:
    order = rng.permutation(np.arange(1, n + 1))
    heads = [0] * n
    for k in range(1, n):
        heads[order[k] - 1] = int(order[rng.integers(k)])
    return DependencyTree.from_heads(["w"] * n, heads)


def _weighted(t: Tensor, w: np.ndarray) -> Tensor:
    return tsum(t * w)


def _harness(name: str, rng: np.random.Generator):
    """Return (params, loss function, names of parameters to probe)."""
    encoder = {"chain2": "chain2", "treelstm": "tree"}.get(name, "chain")
    cfg = ModelConfig(encoder=encoder, **_DIMS)
    params = init_model(cfg, _VOCAB, int(rng.integers(2**31)))
    randomize_params(params, rng)
    ids = [int(i) for i in rng.integers(1, _VOCAB, size=_LEN)]
    tree = _random_tree(rng, _LEN)
    H2, D, Hd, F = 2 * cfg.bilstm_hidden, cfg.memory_dim, cfg.decoder_hidden, cfg.view_dim
    enc_names = [n for n in params.names() if n.startswith("encoder.")]
    agent = lambda *ks: [f"agent.{k}" for k in ks]

    if name == "embedding":
        w = rng.normal(size=(_LEN, cfg.embed_dim))
        return params, lambda p: _weighted(embed_tokens(p, ids), w), ["encoder.embedding"]
    if name == "bilstm":
        w = rng.normal(size=(_LEN, H2))
        return params, lambda p: _weighted(bilstm_encode(p, embed_tokens(p, ids)), w), enc_names
    if name == "chain2":
        w = rng.normal(size=(_LEN, H2))
        return params, lambda p: _weighted(chain_encode(p, embed_tokens(p, ids), 2).node_states, w), enc_names
    if name == "treelstm":
        w, wr = rng.normal(size=(_LEN, D)), rng.normal(size=D)

        def f(p):
            enc = treelstm_encode(p, bilstm_encode(p, embed_tokens(p, ids)), tree)
            return _weighted(enc.node_states, w) + _weighted(enc.root_state, wr)

        return params, f, enc_names
    if name == "meanpool":
        w = rng.normal(size=(_LEN, H2))
        f = lambda p: _weighted(meanpool_encode(bilstm_encode(p, embed_tokens(p, ids)), tree).node_states, w)
        return params, f, enc_names

    # moderate input scale keeps the softmaxes away from saturation
    nodes = Tensor(rng.normal(0.0, 0.5, size=(_LEN, D)))
    enc = InstructionEncoding(nodes, list(range(1, _LEN + 1)), list(range(1, _LEN + 1)), nodes, nodes[0])
    views = [Tensor(rng.normal(0.0, 0.5, size=(36, F))) for _ in range(2)]
    cands = Tensor(rng.normal(0.0, 0.5, size=(4, F)))
    h = Tensor(rng.normal(0.0, 0.5, size=Hd))
    if name == "attention":
        target = int(rng.integers(4))
        wf = rng.normal(size=F)

        def f(p):
            ft, _ = attend_panorama(views[0], h, p["agent.W_F"])
            u, _ = attend_language(enc, h, p["agent.W_U"])
            ht = fuse_context(u, h, p["agent.W_M"])
            return -log(score_actions(cands, ht, p["agent.W_G"])[target]) + _weighted(ft, wf)

        return params, f, agent("W_F", "W_U", "W_M", "W_G")
    if name == "decoder":
        w = rng.normal(size=Hd)

        def f(p):
            st = initial_state(p, enc)
            for v in views:
                ft, _ = attend_panorama(v, st.h_tilde, p["agent.W_F"])
                hh, c = decode_step(p, ft, st.prev_action_embedding, st)
                u, _ = attend_language(enc, hh, p["agent.W_U"])
                st = AgentState(hh, c, fuse_context(u, hh, p["agent.W_M"]), embed_action(p, cands[1]))
            return _weighted(st.h_tilde, w) + _weighted(st.c, w)

        return params, f, agent("W_init", "b_init", "decoder.Wx", "decoder.Wh", "decoder.b", "W_A", "b_A")
    if name == "value":
        hs = [Tensor(rng.normal(size=Hd)) for _ in range(3)]
        R = rng.normal(size=3) * 3

        def f(p):
            return sum((square(value_baseline(p, hv) - r) * 0.5 for hv, r in zip(hs, R)), Tensor(0.0))

        return params, f, ["value.W_v1", "value.W_v2"]
    raise KeyError(name)


def check_submodule(name: str, seed: int, eps: float = 1e-5) -> GradCheckResult:
    rng = np.random.default_rng([seed, SUBMODULES.index(name)])
    params, f, names = _harness(name, rng)
    return grad_check(f, params, eps=eps, names=names)


def run_suite(seeds, eps: float = 1e-5) -> dict[str, float]:
    """Worst relative error per submodule over all ``seeds``."""
    worst = {n: 0.0 for n in SUBMODULES}
    for seed in seeds:
        for n in SUBMODULES:
            worst[n] = max(worst[n], check_submodule(n, seed, eps).max_rel_error)
    return worst
