import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syntaxnav.config import ModelConfig
from syntaxnav.encoder import (
    EmptySequence,
    MisalignedTree,
    UnknownId,
    Vocabulary,
    bilstm_encode,
    chain_encode,
    embed_tokens,
    encode_instruction,
    init_encoder,
    meanpool_encode,
    subtree_mean_matrix,
    treelstm_encode,
)
from syntaxnav.nnmath import ParameterSet, Tensor, grad_check, lstm_cell, tsum
from syntaxnav.treeio import DependencyTree, RootedTree, parse_bracketed

SMALL = dict(embed_dim=3, bilstm_hidden=2, tree_hidden=4)


def make_params(encoder="tree", vocab=12, seed=0, **dims):
    cfg = ModelConfig(encoder=encoder, **{**SMALL, **dims})
    ps = ParameterSet()
    init_encoder(ps, cfg, vocab, np.random.default_rng(seed))
    return cfg, ps


def random_heads(rng, n):
    order = rng.permutation(np.arange(1, n + 1))
    heads = [0] * n
    for k in range(1, n):
        heads[order[k] - 1] = int(order[rng.integers(k)])
    return heads


def seq(rng, n, width):
    return Tensor(rng.normal(size=(n, width)))


# -- vocabulary and embedding -----------------------------------------------


def test_vocabulary():
    v = Vocabulary.build([["Walk", "forward"], ["walk", "left"]])
    assert v.itos[:2] == ["<pad>", "<unk>"]
    assert v.encode(["WALK", "zebra"]) == [v.stoi["walk"], Vocabulary.UNK]
    back = Vocabulary.from_json(v.to_json())
    assert back.itos == v.itos


def test_default_embedding_width():
    cfg = ModelConfig()
    ps = ParameterSet()
    init_encoder(ps, cfg, 10, np.random.default_rng(0))
    assert cfg.embed_dim == 256
    assert embed_tokens(ps, [2, 3]).shape == (2, 256)
    assert 2 * cfg.bilstm_hidden == cfg.tree_hidden == 512


def test_embedding_padding_and_determinism():
    _, ps = make_params()
    e = embed_tokens(ps, [0, 5, 5]).data
    assert np.all(e[0] == 0)
    assert e[1].tobytes() == e[2].tobytes()
    with pytest.raises(UnknownId):
        embed_tokens(ps, [12])


# -- bi-lstm ----------------------------------------------------------------


def test_bilstm_shapes_and_errors():
    _, ps = make_params()
    out = bilstm_encode(ps, Tensor(np.ones((1, 3))))
    assert out.shape == (1, 4)
    with pytest.raises(EmptySequence):
        bilstm_encode(ps, Tensor(np.zeros((0, 3))))


def test_bilstm_reverse_symmetry():
    _, ps = make_params()
    for k in ("Wx", "Wh", "b"):
        ps[f"encoder.bilstm.bwd.{k}"].data[...] = ps[f"encoder.bilstm.fwd.{k}"].data
    x = np.random.default_rng(1).normal(size=(5, 3))
    a = bilstm_encode(ps, Tensor(x)).data
    b = bilstm_encode(ps, Tensor(x[::-1].copy())).data
    np.testing.assert_array_equal(a[::-1, :2], b[:, 2:])
    np.testing.assert_array_equal(a[::-1, 2:], b[:, :2])


def test_chain_layers():
    _, ps1 = make_params("chain")
    emb = embed_tokens(ps1, [2, 3, 4])
    one = chain_encode(ps1, emb, 1)
    np.testing.assert_array_equal(one.node_states.data, bilstm_encode(ps1, emb).data)
    _, ps2 = make_params("chain2")
    two = chain_encode(ps2, embed_tokens(ps2, [2, 3, 4]), 2)
    assert two.node_states.shape == one.node_states.shape
    assert ps2.num_parameters() > ps1.num_parameters()


# -- tree-lstm --------------------------------------------------------------


def test_leaf_depends_only_on_input():
    _, ps = make_params()
    rng = np.random.default_rng(0)
    u = seq(rng, 1, 4)
    enc = treelstm_encode(ps, u, DependencyTree.from_heads(["w"], [0]))
    T = 4
    z = u.data[0] @ ps["encoder.treelstm.W"].data + ps["encoder.treelstm.b"].data
    sg = lambda v: 1 / (1 + np.exp(-v))
    c = sg(z[:T]) * np.tanh(z[2 * T:3 * T])
    np.testing.assert_allclose(enc.root_state.data, sg(z[T:2 * T]) * np.tanh(c), atol=1e-15)


def chain_oracle(ps, u):
    """Run lstm_cell along the chain with the Tree-LSTM weights rearranged to (i, f, o, g)."""
    W, U, Uf, b = (ps[f"encoder.treelstm.{n}"].data for n in ("W", "U", "U_f", "b"))
    T = U.shape[0]
    Wx = np.concatenate([W[:, :T], W[:, 3 * T:], W[:, T:2 * T], W[:, 2 * T:3 * T]], axis=1)
    Wh = np.concatenate([U[:, :T], Uf, U[:, T:2 * T], U[:, 2 * T:]], axis=1)
    bb = np.concatenate([b[:T], b[3 * T:], b[T:2 * T], b[2 * T:3 * T]])
    h = c = Tensor(np.zeros(T))
    hs = []
    for row in u:
        h, c = lstm_cell(Tensor(row), h, c, Tensor(Wx), Tensor(Wh), Tensor(bb))
        hs.append(h.data)
    return np.array(hs)


@pytest.mark.parametrize("seed", range(50))
def test_chain_reduction(seed):
    rng = np.random.default_rng([seed, 7])
    n = int(rng.integers(1, 9))
    _, ps = make_params(seed=seed)
    u = rng.normal(size=(n, 4))
    # token k's head is k + 1: leaf is token 1, root is token n
    tree = DependencyTree.from_heads(["w"] * n, list(range(2, n + 1)) + [0])
    enc = treelstm_encode(ps, Tensor(u), tree)
    np.testing.assert_allclose(enc.node_states.data, chain_oracle(ps, u), rtol=0, atol=1e-10)


def shuffled_copy(rt: RootedTree, rng) -> RootedTree:
    kids = {n: tuple(rng.permutation(list(c)).tolist()) if c else () for n, c in rt.children.items()}
    edges = [(p, c) for p, cs in kids.items() for c in cs]
    rng.shuffle(edges)
    return RootedTree.from_edges(edges, rt.root, dict(rt.token), dict(rt.label))


@pytest.mark.parametrize("seed", range(200))
def test_child_permutation_bitwise(seed):
    rng = np.random.default_rng([seed, 8])
    n = int(rng.integers(1, 12))
    _, ps = make_params(seed=seed % 5)
    u = seq(rng, n, 4)
    base = DependencyTree.from_heads(["w"] * n, random_heads(rng, n)).as_rooted()
    a = treelstm_encode(ps, u, base)
    b = treelstm_encode(ps, u, shuffled_copy(base, rng))
    assert a.node_states.data.tobytes() == b.node_states.data.tobytes()
    assert a.root_state.data.tobytes() == b.root_state.data.tobytes()


def test_constituency_tree_encoding():
    _, ps = make_params()
    rt = parse_bracketed("(S (VP (VB walk) (ADVP (RB forward))) (. .))")
    enc = treelstm_encode(ps, seq(np.random.default_rng(0), 3, 4), rt)
    assert len(enc) == len(rt.nodes)
    assert enc.node_tokens.count(None) == len(rt.nodes) - 3


def test_misaligned_tree():
    _, ps = make_params()
    tree = DependencyTree.from_heads(["a", "b", "c"], [0, 1, 1])
    with pytest.raises(MisalignedTree):
        treelstm_encode(ps, seq(np.random.default_rng(0), 2, 4), tree)
    with pytest.raises(MisalignedTree):
        meanpool_encode(seq(np.random.default_rng(0), 4, 4), tree)


# -- mean pooling -----------------------------------------------------------


def subtree_members(rt, node):
    out, stack = [], [node]
    while stack:
        v = stack.pop()
        if rt.token.get(v) is not None:
            out.append(rt.token[v])
        stack.extend(rt.children[v])
    return out


@pytest.mark.parametrize("seed", range(30))
def test_meanpool_vs_enumeration(seed):
    rng = np.random.default_rng([seed, 9])
    n = int(rng.integers(1, 10))
    tree = DependencyTree.from_heads(["w"] * n, random_heads(rng, n))
    u = rng.normal(size=(n, 4))
    enc = meanpool_encode(Tensor(u), tree)
    rt = tree.as_rooted()
    for row, node in enumerate(enc.node_ids):
        expect = u[[t - 1 for t in subtree_members(rt, node)]].mean(axis=0)
        np.testing.assert_allclose(enc.node_states.data[row], expect, rtol=0, atol=1e-12)
    np.testing.assert_allclose(enc.root_state.data, u.mean(axis=0), atol=1e-12)


def test_meanpool_leaf_is_own_state():
    tree = DependencyTree.from_heads(list("abc"), [0, 1, 1])
    u = np.arange(6.0).reshape(3, 2)
    enc = meanpool_encode(Tensor(u), tree)
    np.testing.assert_array_equal(enc.node_states.data[1], u[1])
    ids, M = subtree_mean_matrix(tree)
    np.testing.assert_allclose(M.sum(axis=1), 1.0)


# -- gradients --------------------------------------------------------------


@pytest.mark.parametrize("encoder", ["tree", "chain", "chain2", "meanpool"])
@pytest.mark.parametrize("seed", range(3))
def test_encoder_gradients(encoder, seed):
    rng = np.random.default_rng([seed, 10])
    cfg, ps = make_params(encoder, seed=seed)
    tree = DependencyTree.from_heads(["w"] * 5, random_heads(rng, 5))
    ids = [int(i) for i in rng.integers(2, 12, size=5)]
    w_nodes = rng.normal(size=(5, cfg.memory_dim))
    w_root = rng.normal(size=cfg.memory_dim)

    def f(p):
        enc = encode_instruction(p, cfg, ids, tree)
        return tsum(enc.node_states * w_nodes) + tsum(enc.root_state * w_root)

    res = grad_check(f, ps)
    assert res.max_rel_error <= 1e-4, res.per_parameter


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(0, 10_000))
def test_node_count_matches_tree(n, seed):
    rng = np.random.default_rng(seed)
    _, ps = make_params()
    tree = DependencyTree.from_heads(["w"] * n, random_heads(rng, n))
    enc = treelstm_encode(ps, seq(rng, n, 4), tree)
    assert len(enc) == n and enc.length == n and enc.node_ids == list(range(1, n + 1))
