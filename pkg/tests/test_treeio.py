import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syntaxnav.treeio import (
    CycleDetected,
    DependencyTree,
    Disconnected,
    EmptyConstituent,
    MalformedLine,
    MultipleRoots,
    NoRoot,
    RootedTree,
    TreeError,
    UnbalancedParens,
    bottom_up_order,
    dump_conllu,
    parse_bracketed,
    parse_conllu,
    to_bracketed,
    validate_tree,
)


def row(i, form, head, rel="_"):
    return "\t".join([str(i), form, "_", "_", "_", "_", str(head), rel, "_", "_"])


def block(*rows):
    return "\n".join(rows) + "\n"


STAIRS = "walk forward then turn right at the stairs then go down the stairs".split()
# walk(1) <- forward; turn(4) conj of walk; go(10) conj of turn
STAIRS_HEADS = [0, 1, 4, 1, 4, 8, 8, 4, 10, 4, 10, 13, 10]


@pytest.fixture
def stairs_tree():
    return DependencyTree.from_heads(STAIRS, STAIRS_HEADS)


def test_three_token_block():
    (t,) = parse_conllu(block(row(1, "Walk", 0), row(2, "forward", 1), row(3, ".", 1)))
    assert t.root == 1
    assert t.children[1] == [2, 3]
    assert t.forms == ["Walk", "forward", "."]


def test_two_cycle_is_rejected():
    with pytest.raises(CycleDetected):
        parse_conllu(block(row(1, "a", 0), row(2, "b", 3), row(3, "c", 2)))


def test_empty_document():
    assert parse_conllu("") == []
    assert parse_conllu("\n\n") == []


def test_ranges_empty_nodes_and_comments():
    text = "# sent_id = s1\n# text = walk on\n" + block(
        row(1, "walk", 0), "1-2\two\t_\t_\t_\t_\t_\t_\t_\t_", "1.1\tx\t_\t_\t_\t_\t_\t_\t_\t_", row(2, "on", 1)
    )
    (t,) = parse_conllu(text)
    assert len(t) == 2
    assert dict(t.meta)["sent_id"] == "s1"


@pytest.mark.parametrize("bad", [
    "1\twalk\t_\t_\t_\t_\t0\n",  # too few fields
    block(row("x", "walk", 0)),
    block(row(1, "walk", "h")),
])
def test_malformed_lines(bad):
    with pytest.raises(MalformedLine):
        parse_conllu(bad)


def test_errors_carry_sentence_and_line():
    text = block(row(1, "ok", 0)) + "\n" + block(row(1, "a", 0), row(2, "b", 0))
    with pytest.raises(MultipleRoots) as ei:
        parse_conllu(text)
    assert ei.value.sentence == 2
    assert ei.value.line is not None


def test_no_root():
    with pytest.raises((NoRoot, CycleDetected)):
        parse_conllu(block(row(1, "a", 2), row(2, "b", 1)))


def test_stairs_tree_is_valid(stairs_tree):
    assert validate_tree(stairs_tree) is None
    # head nodes: walk (root), turn under walk, go under turn
    assert stairs_tree.root == 1
    assert stairs_tree.heads[3] == 1 and stairs_tree.heads[9] == 4
    # each verb governs its own words
    assert 2 in stairs_tree.children[1] and 5 in stairs_tree.children[4] and 12 in stairs_tree.children[13]


def test_validate_multiple_roots():
    with pytest.raises(MultipleRoots):
        validate_tree(DependencyTree.from_heads(["a", "b"], [0, 0]))


def test_validate_detached_subgraph():
    t = DependencyTree.from_heads(["a", "b", "c", "d"], [0, 1, 4, 3])
    with pytest.raises((CycleDetected, Disconnected)):
        validate_tree(t)


def test_validate_rooted_disconnected():
    t = RootedTree((0, 1, 2), 0, {0: (1,)}, {0: None, 1: 1, 2: 2})
    with pytest.raises(Disconnected):
        validate_tree(t)


def test_validate_is_idempotent(stairs_tree):
    before = dump_conllu([stairs_tree])
    validate_tree(stairs_tree)
    validate_tree(stairs_tree)
    assert dump_conllu([stairs_tree]) == before


# -- bracketed --------------------------------------------------------------


def test_bracket_single():
    t = parse_bracketed("(S (VB Walk))")
    assert t.label[t.root] == "S"
    leaves = t.leaves_in_order()
    assert len(leaves) == 1 and t.label[leaves[0]] == "Walk" and t.token[leaves[0]] == 1


def test_bracket_two_leaves():
    t = parse_bracketed("(S (VB Walk) (RB forward))")
    assert [t.token[n] for n in t.leaves_in_order()] == [1, 2]
    assert [t.label[n] for n in t.leaves_in_order()] == ["Walk", "forward"]


def test_bracket_unbalanced():
    with pytest.raises(UnbalancedParens):
        parse_bracketed("(S (VB Walk")
    with pytest.raises(UnbalancedParens):
        parse_bracketed("(S (VB Walk)))")


def test_bracket_empty_constituent():
    with pytest.raises(EmptyConstituent):
        parse_bracketed("(S (NP) (VB Walk))")


def test_bracket_round_trip():
    s = "(S (VP (VB Walk) (ADVP (RB forward))) (. .))"
    assert to_bracketed(parse_bracketed(s)) == s


def test_tree_errors_share_a_base():
    for cls in (MalformedLine, MultipleRoots, NoRoot, CycleDetected, Disconnected, UnbalancedParens, EmptyConstituent):
        assert issubclass(cls, TreeError)


# -- ordering ---------------------------------------------------------------


def test_order_chain():
    t = DependencyTree.from_heads(list("abc"), [2, 3, 0])
    assert bottom_up_order(t) == [1, 2, 3]


def test_order_star():
    t = DependencyTree.from_heads(list("abcd"), [0, 1, 1, 1])
    assert bottom_up_order(t) == [2, 3, 4, 1]


def test_order_single():
    assert bottom_up_order(DependencyTree.from_heads(["a"], [0])) == [1]


def test_order_propagates_validation():
    with pytest.raises(MultipleRoots):
        bottom_up_order(DependencyTree.from_heads(["a", "b"], [0, 0]))


# -- properties -------------------------------------------------------------


@st.composite
def head_lists(draw, max_size=12):
    """Random valid head arrays: attach each token to an earlier node in a random order."""
    n = draw(st.integers(1, max_size))
    order = draw(st.permutations(list(range(1, n + 1))))
    heads = [0] * n
    for k, tok in enumerate(order[1:], start=1):
        heads[tok - 1] = order[draw(st.integers(0, k - 1))]
    return heads


words = st.text(alphabet=st.characters(min_codepoint=33, max_codepoint=0x2FF, blacklist_categories=("Zs", "Cc")),
                min_size=1, max_size=6)


@settings(max_examples=200, deadline=None)
@given(heads=head_lists(), data=st.data())
def test_conllu_round_trip(heads, data):
    forms = data.draw(st.lists(words, min_size=len(heads), max_size=len(heads)))
    t = DependencyTree.from_heads(forms, heads, meta={"sent_id": "x"})
    (back,) = parse_conllu(dump_conllu([t]))
    assert back == t


@settings(max_examples=200, deadline=None)
@given(heads=head_lists(max_size=20))
def test_bottom_up_is_topological(heads):
    t = DependencyTree.from_heads(["w"] * len(heads), heads)
    order = bottom_up_order(t)
    pos = {n: i for i, n in enumerate(order)}
    assert sorted(order) == list(range(1, len(heads) + 1))
    for child, head in enumerate(heads, start=1):
        if head:
            assert pos[child] < pos[head]
