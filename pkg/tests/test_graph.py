import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalflow import scm as scm_lib
from causalflow.errors import CyclicBlockError, CyclicGraphError
from causalflow.graph import (
    CausalGraph,
    PartialGraphSpec,
    condense_partial,
    diameter,
    format_edgelist,
    parse_edgelist,
    strongly_connected_components,
    structurally_eq,
    structurally_leq,
    topological_order,
    total_effects,
    transitive_closure,
    validate_dag,
)

CHAIN3 = [[0, 0, 0], [1, 0, 0], [0, 1, 0]]


def random_dag(draw_seed, d, p=0.4):
    rng = np.random.default_rng(draw_seed)
    perm = rng.permutation(d)
    lower = np.tril(rng.random((d, d)) < p, k=-1).astype(int)
    return lower[np.ix_(perm, perm)]


def test_chain_ordering():
    g = validate_dag(CHAIN3)
    assert g.ordering == (0, 1, 2)


def test_empty_graph_any_order_is_causal():
    g = validate_dag(np.zeros((3, 3)))
    for perm in [(2, 1, 0), (1, 0, 2)]:
        CausalGraph(g.adjacency, perm)


def test_two_cycle_rejected():
    with pytest.raises(CyclicGraphError):
        validate_dag([[0, 1], [1, 0]])


def test_self_loop_rejected():
    with pytest.raises(CyclicGraphError):
        validate_dag([[1, 0], [0, 0]])


@pytest.mark.parametrize("k", [3, 4, 5])
def test_chain_diameter(k):
    assert diameter(CausalGraph.chain(k)) == k - 1


def test_diameter_small_cases():
    assert diameter(validate_dag(np.zeros((4, 4)))) == 0
    tri = CausalGraph.from_edges(3, [(0, 1), (0, 2), (1, 2)])
    assert diameter(tri) == 2


def test_closure_examples():
    np.testing.assert_array_equal(transitive_closure(validate_dag(CHAIN3)), [[1, 0, 0], [1, 1, 0], [1, 1, 1]])
    np.testing.assert_array_equal(transitive_closure(validate_dag(np.zeros((3, 3)))), np.eye(3))


def test_total_effects_of_weighted_chain():
    w = np.array([[0, 0, 0], [2, 0, 0], [0, 3, 0]], dtype=float)
    t = total_effects(w)
    assert t[1, 0] == 2 and t[2, 0] == 6 and t[2, 1] == 3


@pytest.mark.parametrize("name", scm_lib.list_scms())
def test_closure_matches_matrix_powers(name):
    g = scm_lib.get_scm(name).graph
    a = g.adjacency.astype(np.int64)
    acc, power = np.eye(g.d, dtype=np.int64), np.eye(g.d, dtype=np.int64)
    for _ in range(g.d - 1):
        power = power @ a
        acc += power
    np.testing.assert_array_equal(transitive_closure(g), (acc > 0).astype(int))
    assert not np.any(np.linalg.matrix_power(a, g.d))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_ordering_is_causal(seed, d):
    a = random_dag(seed, d)
    g = validate_dag(a)
    rank = g.rank
    for cause, effect in g.edges():
        assert rank[cause] < rank[effect]
    assert not np.any(np.triu(a[np.ix_(g.ordering, g.ordering)]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_closure_against_networkx(seed, d):
    a = random_dag(seed, d)
    g = validate_dag(a)
    ref = nx.DiGraph()
    ref.add_nodes_from(range(d))
    ref.add_edges_from(g.edges())
    closure = transitive_closure(g)
    for i in range(d):
        assert set(np.flatnonzero(closure[i])) - {i} == nx.ancestors(ref, i)
    assert diameter(g) == nx.dag_longest_path_length(ref)


def test_topological_order_detects_cycle():
    with pytest.raises(CyclicGraphError):
        topological_order(np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]]))


def test_structural_order_examples():
    ig = np.eye(3) + np.array(CHAIN3)
    assert structurally_leq(np.zeros((3, 3)), np.ones((3, 3)))
    assert structurally_leq(ig, ig) and structurally_eq(ig, ig)
    b = ig.copy()
    b[1, 0] = 0
    assert not structurally_leq(ig, b)


sparse = st.integers(0, 10_000).map(lambda s: (np.random.default_rng(s).random((4, 4)) < 0.3)
                                    * np.random.default_rng(s + 1).normal(size=(4, 4)))


@settings(max_examples=80, deadline=None)
@given(sparse, sparse, sparse)
def test_structural_order_is_partial_order(a, b, c):
    assert structurally_leq(a, a)
    if structurally_leq(a, b) and structurally_leq(b, a):
        assert structurally_eq(a, b)
    if structurally_leq(a, b) and structurally_leq(b, c):
        assert structurally_leq(a, c)


FIG8 = PartialGraphSpec(4, {(0, 1), (0, 2), (1, 3)}, {(1, 2)})


def test_condense_fig8():
    bg = condense_partial(FIG8)
    assert bg.blocks == ((0,), (1, 2), (3,))
    np.testing.assert_array_equal(bg.block_adjacency, [[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    expected = np.zeros((4, 4), dtype=int)
    for cause, effect in [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]:
        expected[effect, cause] = 1
    np.testing.assert_array_equal(bg.lifted_adjacency, expected)
    np.testing.assert_array_equal(bg.collapse(), bg.block_adjacency)


def test_condense_fully_known():
    edges = {(0, 1), (1, 2), (0, 2)}
    bg = condense_partial(PartialGraphSpec(3, edges, set()))
    assert all(len(b) == 1 for b in bg.blocks)
    np.testing.assert_array_equal(bg.lifted_adjacency, CausalGraph.from_edges(3, edges).adjacency)


def test_condense_merges_cycle_through_unknown_pair():
    bg = condense_partial(PartialGraphSpec(3, {(0, 2), (2, 1)}, {(0, 1)}))
    assert bg.blocks == ((0, 2, 1),)


def test_condense_rejects_known_cycle():
    spec = PartialGraphSpec(3, {(0, 1), (1, 0)}, set())
    with pytest.raises(CyclicBlockError):
        condense_partial(spec)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_condensation_properties(seed, d):
    rng = np.random.default_rng(seed)
    g = validate_dag(random_dag(seed, d))
    edges = g.edges()
    hidden = [e for e in edges if rng.random() < 0.3]
    spec = PartialGraphSpec(d, set(edges) - set(hidden), set(hidden))
    bg = condense_partial(spec)
    assert bg.collapse().tolist() == np.asarray(bg.block_adjacency).tolist()
    validate_dag(bg.block_adjacency)
    bg.graph  # lifted graph is acyclic under the block order
    for block in bg.blocks:
        sub = np.asarray(bg.lifted_adjacency)[np.ix_(block, block)]
        assert not np.any(np.triu(sub))
    for p, effect in enumerate(bg.blocks):
        for q, cause in enumerate(bg.blocks):
            if p != q:
                sub = np.asarray(bg.lifted_adjacency)[np.ix_(effect, cause)]
                assert sub.all() == bool(bg.block_adjacency[p, q])
                assert sub.all() or not sub.any()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 9))
def test_scc_against_networkx(seed, n):
    rng = np.random.default_rng(seed)
    succ = [[int(j) for j in np.flatnonzero(rng.random(n) < 0.25)] for _ in range(n)]
    ref = nx.DiGraph()
    ref.add_nodes_from(range(n))
    ref.add_edges_from((i, j) for i, s in enumerate(succ) for j in s)
    ours = {frozenset(c) for c in strongly_connected_components(succ)}
    assert ours == {frozenset(c) for c in nx.strongly_connected_components(ref)}


def test_edgelist_round_trip():
    text = format_edgelist(FIG8, names=["a", "b", "c", "e"])
    back = parse_edgelist(text)
    assert back.known_edges == FIG8.known_edges
    assert back.unknown_pairs == FIG8.unknown_pairs
    assert back.names == ("a", "b", "c", "e")
