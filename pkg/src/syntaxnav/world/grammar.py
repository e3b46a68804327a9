"""Template grammar that turns a path into an instruction and its dependency tree.

A path is cut into legs at every change of direction.  The sentence is a chain
of clauses joined by "then": an opening "walk forward" clause, one "turn <dir>
at the <landmark>" clause per turn, and a closing clause naming the goal
landmark.  Each clause is headed by its verb; every clause head attaches to the
previous one, so each verb dominates exactly the words of one navigation step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..treeio import DependencyTree
from .graph import WALL, EnvironmentGraph, wrap_angle


class GrammarError(Exception):
    pass


class PathTooShort(GrammarError):
    pass


class NoTemplateForPath(GrammarError):
    pass


# (form, upos, deprel, head position within the clause; None marks the clause head)
Slot = tuple[str, str, str, "int | None"]

START_TEMPLATES: list[list[Slot]] = [
    [("walk", "VERB", "root", None), ("forward", "ADV", "advmod", 0)],
    [("go", "VERB", "root", None), ("straight", "ADV", "advmod", 0)],
    [("head", "VERB", "root", None), ("forward", "ADV", "advmod", 0)],
]

TURN_TEMPLATES: list[list[Slot]] = [
    [("turn", "VERB", "root", None), ("{dir}", "ADV", "advmod", 0), ("at", "ADP", "case", 4),
     ("the", "DET", "det", 4), ("{lm}", "NOUN", "obl", 0)],
    [("take", "VERB", "root", None), ("a", "DET", "det", 2), ("{dir}", "NOUN", "obj", 0),
     ("at", "ADP", "case", 5), ("the", "DET", "det", 5), ("{lm}", "NOUN", "obl", 0)],
    [("at", "ADP", "case", 2), ("the", "DET", "det", 2), ("{lm}", "NOUN", "obl", 3),
     ("turn", "VERB", "root", None), ("{dir}", "ADV", "advmod", 3)],
]

FINAL_TEMPLATES: list[list[Slot]] = [
    [("go", "VERB", "root", None), ("down", "ADV", "advmod", 0), ("the", "DET", "det", 3),
     ("{lm}", "NOUN", "obj", 0)],
    [("walk", "VERB", "root", None), ("to", "ADP", "case", 3), ("the", "DET", "det", 3),
     ("{lm}", "NOUN", "obl", 0)],
    [("stop", "VERB", "root", None), ("at", "ADP", "case", 3), ("the", "DET", "det", 3),
     ("{lm}", "NOUN", "obl", 0)],
    [("wait", "VERB", "root", None), ("by", "ADP", "case", 3), ("the", "DET", "det", 3),
     ("{lm}", "NOUN", "obl", 0)],
]

MINIMAL_TEMPLATES: list[list[Slot]] = [
    [("walk", "VERB", "root", None), ("to", "ADP", "case", 3), ("the", "DET", "det", 3),
     ("{lm}", "NOUN", "obl", 0)],
    [("go", "VERB", "root", None), ("to", "ADP", "case", 3), ("the", "DET", "det", 3),
     ("{lm}", "NOUN", "obl", 0)],
]

TURN_WORDS = {1: "right", -1: "left", 2: "around"}


@dataclass(frozen=True)
class Grammar:
    start: tuple = tuple(map(tuple, START_TEMPLATES))
    turn: tuple = tuple(map(tuple, TURN_TEMPLATES))
    final: tuple = tuple(map(tuple, FINAL_TEMPLATES))
    minimal: tuple = tuple(map(tuple, MINIMAL_TEMPLATES))

    @classmethod
    def flagship(cls) -> "Grammar":
        """Only the first template of each kind ("walk forward ... go down the ...")."""
        return cls(cls.start[:1], cls.turn[:1], cls.final[:1], cls.minimal[:1])

    def pick(self, kind: str, rng: np.random.Generator):
        options = getattr(self, kind)
        return options[int(rng.integers(len(options)))] if len(options) > 1 else options[0]


@dataclass(frozen=True)
class Leg:
    turn: int  # 0 forward, +1 right, -1 left, 2 around (relative to the previous leg)
    start: int  # index into the path
    end: int


def split_legs(graph: EnvironmentGraph, path: list[int]) -> list[Leg]:
    if len(path) < 2:
        raise PathTooShort(f"path with {len(path)} viewpoint(s)")
    headings = [graph.heading(a, b) for a, b in zip(path, path[1:])]
    legs = []
    start, turn = 0, 0
    for i in range(1, len(headings)):
        delta = wrap_angle(headings[i] - headings[i - 1])
        if abs(delta) < 1e-9:
            continue
        legs.append(Leg(turn, start, i))
        turn = _turn_code(delta)
        start = i
    legs.append(Leg(turn, start, len(path) - 1))
    return legs


def _turn_code(delta: float) -> int:
    if abs(delta - math.pi / 2) < 1e-9:
        return 1
    if abs(delta + math.pi / 2) < 1e-9:
        return -1
    if abs(abs(delta) - math.pi) < 1e-9:
        return 2
    raise NoTemplateForPath(f"no template for a {math.degrees(delta):.1f} degree turn")


def is_unambiguous(graph: EnvironmentGraph, path: list[int]) -> bool:
    """Each leg's end landmark must not occur earlier along that leg."""
    lm = [graph.viewpoints[v].landmark for v in path]
    for leg in split_legs(graph, path):
        target = lm[leg.end]
        if target in ("none", WALL):
            return False
        if any(lm[k] == target for k in range(leg.start + 1, leg.end)):
            return False
    return True


def _realize(template, dir_word: str | None, landmark: str | None):
    """Expand placeholders; multiword landmarks attach their modifiers to the last word."""
    words: list[tuple[str, str, str, object]] = []
    pos_map: dict[int, int] = {}
    for k, (form, upos, rel, head) in enumerate(template):
        if form == "{lm}":
            parts = landmark.split()
            noun = len(words) + len(parts) - 1
            for m in parts[:-1]:
                words.append((m, "ADJ", "amod", ("at", noun)))
            pos_map[k] = noun
            words.append((parts[-1], upos, rel, head))
        else:
            pos_map[k] = len(words)
            words.append((dir_word if form == "{dir}" else form, upos, rel, head))
    out = []
    for form, upos, rel, head in words:
        if isinstance(head, tuple):
            out.append((form, upos, rel, head[1]))
        else:
            out.append((form, upos, rel, None if head is None else pos_map[head]))
    return out


def generate_instruction(graph: EnvironmentGraph, path: list[int], grammar: Grammar,
                         rng: np.random.Generator) -> tuple[list[str], DependencyTree]:
    """Describe ``path`` in words; the returned tree is valid by construction."""
    legs = split_legs(graph, path)
    lm = [graph.viewpoints[v].landmark for v in path]
    for leg in legs:
        if lm[leg.end] in ("none", WALL):
            raise NoTemplateForPath(f"viewpoint {path[leg.end]} has no nameable landmark")

    clauses = []
    if len(path) == 2:
        clauses.append(_realize(grammar.pick("minimal", rng), None, lm[-1]))
    else:
        clauses.append(_realize(grammar.pick("start", rng), None, None))
        for leg in legs[1:]:
            clauses.append(_realize(grammar.pick("turn", rng), TURN_WORDS[leg.turn], lm[leg.start]))
        clauses.append(_realize(grammar.pick("final", rng), None, lm[-1]))

    forms, heads, rels, upos = [], [], [], []
    prev_head = 0
    for ci, clause in enumerate(clauses):
        offset = len(forms)
        if ci > 0:
            # "then" hangs off this clause's verb
            verb = next(k for k, w in enumerate(clause) if w[3] is None)
            forms.append("then")
            upos.append("ADV")
            rels.append("advmod")
            heads.append(offset + 1 + verb + 1)
            offset += 1
        for form, up, rel, head in clause:
            forms.append(form)
            upos.append(up)
            if head is None:
                heads.append(prev_head)
                rels.append("root" if prev_head == 0 else "conj")
            else:
                heads.append(offset + head + 1)
                rels.append(rel)
        verb = next(k for k, w in enumerate(clause) if w[3] is None)
        prev_head = offset + verb + 1
    tree = DependencyTree.from_heads(forms, heads, rels, upos, {"text": " ".join(forms)})
    return forms, tree


def clause_heads(tree: DependencyTree) -> list[int]:
    """Token indices of the verbs heading each sub-instruction, in sentence order."""
    return [t.index for t in tree.tokens if t.deprel in ("root", "conj")]
