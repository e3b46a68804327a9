"""Dependency (CoNLL-U) and constituency (bracketed) tree ingestion.

Both tree kinds can be viewed as a :class:`RootedTree`, which is what the
encoders consume.  Children are always kept in ascending node-id order so that
anything computed over them is independent of the order they appeared in the
source.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union


class TreeError(ValueError):
    def __init__(self, message: str, sentence: int | None = None, line: int | None = None):
        loc = []
        if sentence is not None:
            loc.append(f"sentence {sentence}")
        if line is not None:
            loc.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.sentence = sentence
        self.line = line


class MalformedLine(TreeError):
    pass


class MultipleRoots(TreeError):
    pass


class NoRoot(TreeError):
    pass


class CycleDetected(TreeError):
    pass


class Disconnected(TreeError):
    pass


class UnbalancedParens(TreeError):
    pass


class EmptyConstituent(TreeError):
    pass


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    head: int
    upos: str = "_"
    deprel: str = "_"


@dataclass(frozen=True)
class DependencyTree:
    tokens: tuple[Token, ...]
    meta: tuple[tuple[str, str], ...] = ()

    @classmethod
    def from_heads(cls, forms: Sequence[str], heads: Sequence[int], deprels: Sequence[str] | None = None,
                   upos: Sequence[str] | None = None, meta: Mapping[str, str] | None = None) -> "DependencyTree":
        deprels = deprels or ["_"] * len(forms)
        upos = upos or ["_"] * len(forms)
        toks = tuple(Token(i + 1, f, h, u, d) for i, (f, h, d, u) in enumerate(zip(forms, heads, deprels, upos)))
        return cls(toks, tuple((meta or {}).items()))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    @property
    def root(self) -> int:
        roots = [t.index for t in self.tokens if t.head == 0]
        if len(roots) != 1:
            raise (NoRoot("no token has HEAD 0") if not roots else MultipleRoots(f"tokens {roots} all have HEAD 0"))
        return roots[0]

    @property
    def children(self) -> dict[int, list[int]]:
        ch: dict[int, list[int]] = {t.index: [] for t in self.tokens}
        for t in self.tokens:
            if t.head in ch:
                ch[t.head].append(t.index)
        return {k: sorted(v) for k, v in ch.items()}

    def as_rooted(self) -> "RootedTree":
        return RootedTree(
            nodes=tuple(t.index for t in self.tokens),
            root=self.root,
            children={k: tuple(v) for k, v in self.children.items()},
            token={t.index: t.index for t in self.tokens},
            label={t.index: t.form for t in self.tokens},
        )


@dataclass(frozen=True)
class RootedTree:
    nodes: tuple[int, ...]
    root: int
    children: Mapping[int, tuple[int, ...]]
    token: Mapping[int, int | None]
    label: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        # canonical child order: ascending node id
        canon = {n: tuple(sorted(self.children.get(n, ()))) for n in self.nodes}
        object.__setattr__(self, "children", canon)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]], root: int, token: Mapping[int, int | None],
                   label: Mapping[int, str] | None = None) -> "RootedTree":
        """Build from (parent, child) pairs in any order."""
        nodes = set(token) | {root}
        ch: dict[int, list[int]] = {}
        for p, c in edges:
            nodes.update((p, c))
            ch.setdefault(p, []).append(c)
        return cls(tuple(sorted(nodes)), root, {k: tuple(v) for k, v in ch.items()},
                   {n: token.get(n) for n in sorted(nodes)}, dict(label or {}))

    def as_rooted(self) -> "RootedTree":
        return self

    def leaves_in_order(self) -> list[int]:
        """Token-carrying nodes sorted by their token index."""
        return sorted((n for n in self.nodes if self.token.get(n) is not None), key=lambda n: self.token[n])

    def token_count(self) -> int:
        return sum(1 for n in self.nodes if self.token.get(n) is not None)


Tree = Union[DependencyTree, RootedTree]


# --------------------------------------------------------------------------
# CoNLL-U


def parse_conllu(text: str) -> list[DependencyTree]:
    """Parse a CoNLL-U document; one tree per blank-line-separated block.

    Only ID, FORM, UPOS, HEAD and DEPREL are kept.  Multiword ranges (``3-4``)
    and empty nodes (``3.1``) are skipped.
    """
    trees = []
    block: list[tuple[int, str]] = []
    # only LF (and CRLF) end a line; str.splitlines would also split on U+0085 etc.
    lines = text.split("\n")
    for lineno, line in enumerate(lines + [""], start=1):
        if line.strip() == "":
            if block:
                trees.append(_parse_block(block, len(trees) + 1))
                block = []
            continue
        block.append((lineno, line))
    return trees


def _parse_block(block: list[tuple[int, str]], sent: int) -> DependencyTree:
    toks = []
    meta = []
    for lineno, line in block:
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta.append((k.strip(), v.strip()))
            continue
        fields = line.rstrip("\r").split("\t")
        if len(fields) < 8:
            raise MalformedLine(f"expected at least 8 tab-separated fields, got {len(fields)}", sent, lineno)
        ident = fields[0]
        if "-" in ident or "." in ident:
            continue
        try:
            index = int(ident)
            head = int(fields[6])
        except ValueError:
            raise MalformedLine(f"non-integer ID or HEAD: {ident!r}, {fields[6]!r}", sent, lineno) from None
        toks.append((lineno, Token(index, fields[1], head, fields[3], fields[7])))
    tree = DependencyTree(tuple(t for _, t in toks), tuple(meta))
    _validate_dependency(tree, sent, {t.index: ln for ln, t in toks})
    return tree


def to_conllu(tree: DependencyTree) -> str:
    out = [f"# {k} = {v}" for k, v in tree.meta]
    for t in tree.tokens:
        out.append("\t".join([str(t.index), t.form, "_", t.upos, "_", "_", str(t.head), t.deprel, "_", "_"]))
    return "\n".join(out) + "\n"


def dump_conllu(trees: Iterable[DependencyTree]) -> str:
    return "\n".join(to_conllu(t) for t in trees)


# --------------------------------------------------------------------------
# bracketed constituency trees

_BRACKET_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_bracketed(text: str) -> RootedTree:
    """Parse a Penn-style bracketing such as ``(S (VB Walk) (RB forward))``.

    Every bracket becomes a node labelled with its constituent tag; every
    terminal word becomes a leaf carrying its 1-based token position.
    """
    toks = _BRACKET_TOKEN.findall(text)
    if not toks:
        raise EmptyConstituent("empty input")
    nodes: list[int] = []
    children: dict[int, list[int]] = {}
    token: dict[int, int | None] = {}
    label: dict[int, str] = {}
    pos = 0
    n_tokens = 0

    def new_node(lab: str, tok: int | None) -> int:
        nid = len(nodes)
        nodes.append(nid)
        children[nid] = []
        token[nid] = tok
        label[nid] = lab
        return nid

    def parse_node() -> int:
        nonlocal pos, n_tokens
        if pos >= len(toks) or toks[pos] != "(":
            raise UnbalancedParens(f"expected '(' at token {pos}")
        pos += 1
        lab = ""
        if pos < len(toks) and toks[pos] not in "()":
            lab = toks[pos]
            pos += 1
        nid = new_node(lab, None)
        while True:
            if pos >= len(toks):
                raise UnbalancedParens("missing ')'")
            t = toks[pos]
            if t == ")":
                pos += 1
                break
            if t == "(":
                children[nid].append(parse_node())
            else:
                n_tokens += 1
                leaf = new_node(t, n_tokens)
                children[nid].append(leaf)
                pos += 1
        if not children[nid]:
            raise EmptyConstituent(f"constituent {lab or '<unlabelled>'!r} has no children")
        return nid

    root = parse_node()
    if pos != len(toks):
        raise UnbalancedParens(f"unexpected trailing input at token {pos}")
    return RootedTree(tuple(nodes), root, {k: tuple(v) for k, v in children.items()}, token, label)


def to_bracketed(tree: RootedTree) -> str:
    def render(n: int) -> str:
        if tree.token.get(n) is not None and not tree.children[n]:
            return tree.label.get(n, "_")
        inner = " ".join(render(c) for c in tree.children[n])
        lab = tree.label.get(n, "")
        return f"({lab} {inner})" if lab else f"({inner})"

    return render(tree.root)


# --------------------------------------------------------------------------
# validation and ordering


def validate_tree(tree: Tree) -> None:
    """Raise a :class:`TreeError` if any structural invariant fails."""
    if isinstance(tree, DependencyTree):
        _validate_dependency(tree, None, {})
    else:
        _validate_rooted(tree)


def _validate_dependency(tree: DependencyTree, sent: int | None, lines: Mapping[int, int]) -> None:
    toks = tree.tokens
    n = len(toks)
    if n == 0:
        raise NoRoot("empty sentence", sent)
    for k, t in enumerate(toks, start=1):
        ln = lines.get(t.index)
        if t.index != k:
            raise MalformedLine(f"token IDs must run 1..{n} in order; found {t.index} at position {k}", sent, ln)
        if t.head < 0 or t.head > n:
            raise MalformedLine(f"HEAD {t.head} out of range for token {t.index}", sent, ln)
        if t.head == t.index:
            raise CycleDetected(f"token {t.index} is its own head", sent, ln)
    roots = [t.index for t in toks if t.head == 0]
    if not roots:
        raise NoRoot("no token has HEAD 0", sent)
    if len(roots) > 1:
        raise MultipleRoots(f"tokens {roots} all have HEAD 0", sent, lines.get(roots[1]))
    heads = {t.index: t.head for t in toks}
    reaches = {roots[0]}
    for t in toks:
        path = []
        cur = t.index
        while cur not in reaches:
            if cur in path:
                raise CycleDetected(f"head chain from token {t.index} loops through {cur}", sent, lines.get(t.index))
            path.append(cur)
            cur = heads[cur]
        reaches.update(path)


def _validate_rooted(tree: RootedTree) -> None:
    nodes = set(tree.nodes)
    if len(nodes) != len(tree.nodes):
        raise MalformedLine("duplicate node ids")
    if tree.root not in nodes:
        raise NoRoot(f"root {tree.root} is not a node")
    parent: dict[int, int] = {}
    for p, cs in tree.children.items():
        if p not in nodes:
            raise MalformedLine(f"children listed for unknown node {p}")
        for c in cs:
            if c not in nodes:
                raise MalformedLine(f"unknown child {c} of node {p}")
            if c == tree.root or c in parent:
                raise CycleDetected(f"node {c} has more than one parent or is the root's child")
            parent[c] = p
    seen = set()
    stack = [tree.root]
    while stack:
        n = stack.pop()
        if n in seen:
            raise CycleDetected(f"node {n} reached twice")
        seen.add(n)
        stack.extend(tree.children.get(n, ()))
    if seen != nodes:
        raise Disconnected(f"nodes {sorted(nodes - seen)} are not reachable from the root")
    toks = []
    for n in tree.nodes:
        tok = tree.token.get(n)
        if not tree.children.get(n) and tok is None:
            raise EmptyConstituent(f"leaf {n} carries no token")
        if tok is not None:
            toks.append(tok)
    if sorted(toks) != list(range(1, len(toks) + 1)):
        raise MalformedLine(f"token indices {sorted(toks)} are not 1..{len(toks)}")


def bottom_up_order(tree: Tree) -> list[int]:
    """Children before parents; among ready nodes the smallest id goes first."""
    validate_tree(tree)
    rt = tree.as_rooted()
    pending = {n: len(rt.children[n]) for n in rt.nodes}
    parent = {c: p for p, cs in rt.children.items() for c in cs}
    ready = [n for n, k in pending.items() if k == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        p = parent.get(n)
        if p is not None:
            pending[p] -= 1
            if pending[p] == 0:
                heapq.heappush(ready, p)
    return order
