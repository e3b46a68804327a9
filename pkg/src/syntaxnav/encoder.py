"""Instruction encoders: embedding, Bi-LSTM, and the tree/chain/mean-pool heads.

All encoders return an :class:`InstructionEncoding` whose ``node_states`` rows
form the attention memory for the decoder.  For dependency trees the rows are
ordered by token index, so row ``i`` belongs to word ``i + 1``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import ModelConfig
from .nnmath import ParameterSet, Tensor, concat, lstm_cell, matmul, sigmoid, stack, take_rows, tanh
from .treeio import RootedTree, Tree, bottom_up_order


class EncoderError(ValueError):
    pass


class UnknownId(EncoderError):
    pass


class EmptySequence(EncoderError):
    pass


class MisalignedTree(EncoderError):
    pass


class Vocabulary:
    PAD, UNK = 0, 1

    def __init__(self, words: Iterable[str]):
        self.itos = ["<pad>", "<unk>"] + sorted({w.lower() for w in words})
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        counts = Counter(w.lower() for s in sentences for w in s)
        return cls(w for w, c in counts.items() if c >= min_count)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t.lower(), self.UNK) for t in tokens]

    def to_json(self) -> str:
        return json.dumps(self.itos[2:])

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls(json.loads(text))


@dataclass
class InstructionEncoding:
    node_states: Tensor  # (n_nodes, memory_dim)
    node_ids: list[int]  # tree node id of each row
    node_tokens: list[int | None]  # token index carried by each row's node
    sequence_states: Tensor  # (l, 2 * bilstm_hidden)
    root_state: Tensor  # (memory_dim,)

    @property
    def length(self) -> int:
        return self.sequence_states.shape[0]

    def __len__(self) -> int:
        return self.node_states.shape[0]


# --------------------------------------------------------------------------
# parameters


def _lstm_params(params: ParameterSet, prefix: str, d_in: int, hidden: int, rng: np.random.Generator) -> None:
    params.matrix(f"{prefix}.Wx", (d_in, 4 * hidden), rng)
    params.matrix(f"{prefix}.Wh", (hidden, 4 * hidden), rng)
    params.bias(f"{prefix}.b", 4 * hidden)


def init_encoder(params: ParameterSet, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator) -> None:
    emb = params.matrix("encoder.embedding", (vocab_size, cfg.embed_dim), rng).data
    emb[Vocabulary.PAD] = 0.0
    H = cfg.bilstm_hidden
    _lstm_params(params, "encoder.bilstm.fwd", cfg.embed_dim, H, rng)
    _lstm_params(params, "encoder.bilstm.bwd", cfg.embed_dim, H, rng)
    if cfg.encoder == "chain2":
        _lstm_params(params, "encoder.bilstm2.fwd", 2 * H, H, rng)
        _lstm_params(params, "encoder.bilstm2.bwd", 2 * H, H, rng)
    if cfg.encoder == "tree":
        T = cfg.tree_hidden
        # x-projection columns are laid out (i, o, g | f)
        params.matrix("encoder.treelstm.W", (2 * H, 4 * T), rng)
        params.matrix("encoder.treelstm.U", (T, 3 * T), rng)
        params.matrix("encoder.treelstm.U_f", (T, T), rng)
        params.bias("encoder.treelstm.b", 4 * T)


# --------------------------------------------------------------------------
# encoders


def embed_tokens(params: ParameterSet, ids: Sequence[int]) -> Tensor:
    table = params["encoder.embedding"]
    V = table.shape[0]
    for i in ids:
        if not 0 <= i < V:
            raise UnknownId(f"token id {i} outside vocabulary of size {V}")
    return take_rows(table, ids)


def _run_lstm(params: ParameterSet, prefix: str, xs: list[Tensor]) -> list[Tensor]:
    Wx, Wh, b = params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"]
    H = Wh.shape[0]
    h = c = Tensor._wrap(np.zeros(H), False)
    out = []
    for x in xs:
        h, c = lstm_cell(x, h, c, Wx, Wh, b)
        out.append(h)
    return out


def bilstm_encode(params: ParameterSet, embeddings: Tensor, prefix: str = "encoder.bilstm") -> Tensor:
    """u_i = [forward_i ; backward_i]; returns an (l, 2H) tensor."""
    n = embeddings.shape[0]
    if n == 0:
        raise EmptySequence("cannot encode an empty instruction")
    xs = [embeddings[i] for i in range(n)]
    fwd = _run_lstm(params, prefix + ".fwd", xs)
    bwd = _run_lstm(params, prefix + ".bwd", xs[::-1])[::-1]
    return stack([concat([f, b]) for f, b in zip(fwd, bwd)])


def _chain_root(seq: Tensor) -> Tensor:
    # last forward state and first backward state
    H = seq.shape[1] // 2
    return concat([seq[-1, :H], seq[0, H:]])


def chain_encode(params: ParameterSet, embeddings: Tensor, layers: int = 1) -> InstructionEncoding:
    """Sequential baseline: attention runs over the Bi-LSTM token states."""
    if layers not in (1, 2):
        raise ValueError("layers must be 1 or 2")
    seq = bilstm_encode(params, embeddings)
    if layers == 2:
        seq = bilstm_encode(params, seq, "encoder.bilstm2")
    n = seq.shape[0]
    return InstructionEncoding(seq, list(range(1, n + 1)), list(range(1, n + 1)), seq, _chain_root(seq))


def _check_alignment(rt: RootedTree, n: int) -> None:
    for node in rt.nodes:
        tok = rt.token.get(node)
        if tok is not None and not 1 <= tok <= n:
            raise MisalignedTree(f"node {node} points at token {tok}, instruction has {n}")
    if rt.token_count() != n:
        raise MisalignedTree(f"tree carries {rt.token_count()} tokens, instruction has {n}")


def treelstm_encode(params: ParameterSet, sequence_states: Tensor, tree: Tree) -> InstructionEncoding:
    """Child-Sum Tree-LSTM over any rooted tree.

    For node j with children C(j) and input x_j (its token's Bi-LSTM state, or
    zero for tokenless constituents)::

        h~ = sum_k h_k
        i, o, g = sigmoid, sigmoid, tanh of (W x_j + U h~ + b) blocks
        f_k = sigmoid(W_f x_j + U_f h_k + b_f)          one gate per child
        c_j = i * g + sum_k f_k * c_k
        h_j = o * tanh(c_j)
    """
    rt = tree.as_rooted()
    order = bottom_up_order(tree)
    _check_alignment(rt, sequence_states.shape[0])
    W, U, U_f, b = (params[f"encoder.treelstm.{n}"] for n in ("W", "U", "U_f", "b"))
    T = U.shape[0]
    xw = matmul(sequence_states, W) + b  # (l, 4T)
    b_only = b
    h: dict[int, Tensor] = {}
    c: dict[int, Tensor] = {}
    for node in order:
        tok = rt.token.get(node)
        x = xw[tok - 1] if tok is not None else b_only
        kids = rt.children[node]
        if kids:
            Hs = stack([h[k] for k in kids])
            Cs = stack([c[k] for k in kids])
            z = x[: 3 * T] + matmul(Hs.sum(axis=0), U)
            f = sigmoid(x[3 * T :] + matmul(Hs, U_f))
            io = sigmoid(z[: 2 * T])
            g = tanh(z[2 * T :])
            cj = io[:T] * g + (f * Cs).sum(axis=0)
        else:
            io = sigmoid(x[: 2 * T])
            g = tanh(x[2 * T : 3 * T])
            cj = io[:T] * g
        c[node] = cj
        h[node] = io[T:] * tanh(cj)
    ids = sorted(rt.nodes)
    return InstructionEncoding(
        stack([h[n] for n in ids]), ids, [rt.token.get(n) for n in ids], sequence_states, h[rt.root]
    )


def subtree_mean_matrix(tree: Tree) -> tuple[list[int], np.ndarray]:
    """Row j averages the token positions inside node j's subtree (computed bottom-up)."""
    rt = tree.as_rooted()
    order = bottom_up_order(tree)
    n_tok = rt.token_count()
    members: dict[int, np.ndarray] = {}
    for node in order:
        acc = np.zeros(n_tok)
        tok = rt.token.get(node)
        if tok is not None:
            acc[tok - 1] = 1.0
        for k in rt.children[node]:
            acc += members[k]
        members[node] = acc
    ids = sorted(rt.nodes)
    M = np.stack([members[n] / members[n].sum() for n in ids])
    return ids, M


def meanpool_encode(sequence_states: Tensor, tree: Tree) -> InstructionEncoding:
    """Each node's state is the mean of the token states in its subtree."""
    rt = tree.as_rooted()
    _check_alignment(rt, sequence_states.shape[0])
    ids, M = subtree_mean_matrix(tree)
    nodes = matmul(Tensor._wrap(M, False), sequence_states)
    root_row = ids.index(rt.root)
    return InstructionEncoding(nodes, ids, [rt.token.get(n) for n in ids], sequence_states, nodes[root_row])


def encode_instruction(params: ParameterSet, cfg: ModelConfig, ids: Sequence[int], tree: Tree) -> InstructionEncoding:
    emb = embed_tokens(params, ids)
    if cfg.encoder == "chain":
        return chain_encode(params, emb, 1)
    if cfg.encoder == "chain2":
        return chain_encode(params, emb, 2)
    seq = bilstm_encode(params, emb)
    if cfg.encoder == "meanpool":
        return meanpool_encode(seq, tree)
    if cfg.encoder == "tree":
        return treelstm_encode(params, seq, tree)
    raise EncoderError(f"unknown encoder {cfg.encoder!r}")
