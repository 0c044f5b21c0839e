"""Causal graphs, orderings and SCC condensation of partially known graphs.

Adjacency convention used everywhere in the package: ``adjacency[i, j] == 1``
iff ``x_j`` is a direct cause of ``x_i`` (row = effect, column = cause).
Node indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CyclicBlockError, CyclicGraphError, FormatError, ShapeError

__all__ = [
    "CausalGraph",
    "PartialGraphSpec",
    "BlockGraph",
    "validate_dag",
    "topological_order",
    "diameter",
    "transitive_closure",
    "total_effects",
    "structurally_leq",
    "structurally_eq",
    "strongly_connected_components",
    "condense_partial",
    "parse_edgelist",
    "format_edgelist",
]


def _as_binary_square(adjacency) -> np.ndarray:
    a = np.asarray(adjacency)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be a square matrix, got shape {a.shape}")
    if not np.isin(a, (0, 1)).all():
        raise ShapeError("adjacency must be binary")
    return a.astype(np.int8)


def topological_order(adjacency: np.ndarray) -> tuple[int, ...]:
    """Kahn's algorithm, smallest ready index first (deterministic)."""
    a = np.asarray(adjacency) != 0
    d = a.shape[0]
    indegree = a.sum(axis=1).astype(int)
    ready = sorted(i for i in range(d) if indegree[i] == 0)
    order: list[int] = []
    while ready:
        j = ready.pop(0)
        order.append(j)
        for i in np.flatnonzero(a[:, j]):
            indegree[i] -= 1
            if indegree[i] == 0:
                ready.append(int(i))
        ready.sort()
    if len(order) != d:
        raise CyclicGraphError("graph contains a directed cycle")
    return tuple(order)


@dataclass(frozen=True)
class CausalGraph:
    """Acyclic causal graph with a fixed causal ordering.

    ``ordering`` lists node indices causes-first; ``rank[i]`` is the position
    of node ``i`` in that list.
    """

    adjacency: np.ndarray
    ordering: tuple[int, ...]
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        adj = _as_binary_square(self.adjacency)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "ordering", tuple(int(i) for i in self.ordering))
        if sorted(self.ordering) != list(range(adj.shape[0])):
            raise ShapeError("ordering must be a permutation of the node indices")
        rank = self.rank
        causes, effects = np.nonzero(adj.T)
        if np.any(rank[causes] >= rank[effects]):
            raise CyclicGraphError("ordering is not consistent with the edges")
        if self.names is not None and len(self.names) != adj.shape[0]:
            raise ShapeError("one name per node expected")

    def __eq__(self, other):
        if not isinstance(other, CausalGraph):
            return NotImplemented
        return self.ordering == other.ordering and np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash((self.ordering, self.adjacency.tobytes()))

    @property
    def d(self) -> int:
        return self.adjacency.shape[0]

    @property
    def rank(self) -> np.ndarray:
        r = np.empty(len(self.ordering), dtype=int)
        r[list(self.ordering)] = np.arange(len(self.ordering))
        return r

    def parents(self, i: int) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.adjacency[i]))

    def children(self, j: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.adjacency[:, j]))

    def ancestors(self, i: int) -> tuple[int, ...]:
        row = transitive_closure(self)[i].copy()
        row[i] = 0
        return tuple(int(j) for j in np.flatnonzero(row))

    def descendants(self, j: int) -> tuple[int, ...]:
        col = transitive_closure(self)[:, j].copy()
        col[j] = 0
        return tuple(int(i) for i in np.flatnonzero(col))

    def edges(self) -> list[tuple[int, int]]:
        """List of ``(cause, effect)`` pairs."""
        effects, causes = np.nonzero(self.adjacency)
        return sorted(zip(causes.tolist(), effects.tolist()))

    def ordering_mask(self) -> np.ndarray:
        """Strictly lower-triangular mask (under the ordering) of allowed dependencies."""
        r = self.rank
        return (r[None, :] < r[:, None]).astype(np.int8)

    @classmethod
    def from_edges(cls, d: int, edges: Iterable[tuple[int, int]], names=None) -> "CausalGraph":
        a = np.zeros((d, d), dtype=np.int8)
        for cause, effect in edges:
            a[effect, cause] = 1
        return validate_dag(a, names=names)

    @classmethod
    def chain(cls, d: int) -> "CausalGraph":
        return cls.from_edges(d, [(i, i + 1) for i in range(d - 1)])


def validate_dag(adjacency, names: Sequence[str] | None = None) -> CausalGraph:
    """Check acyclicity and attach a causal ordering.

    >>> validate_dag([[0, 0, 0], [1, 0, 0], [0, 1, 0]]).ordering
    (0, 1, 2)
    """
    a = _as_binary_square(adjacency)
    if np.any(np.diag(a)):
        raise CyclicGraphError("self-loops are not allowed")
    order = topological_order(a)
    return CausalGraph(a, order, tuple(names) if names is not None else None)


def diameter(graph: CausalGraph) -> int:
    """Length, in edges, of the longest directed path (0 for edgeless graphs)."""
    longest = np.zeros(graph.d, dtype=int)
    for i in graph.ordering:
        pa = graph.parents(i)
        if pa:
            longest[i] = 1 + max(longest[j] for j in pa)
    return int(longest.max(initial=0))


def transitive_closure(graph: CausalGraph) -> np.ndarray:
    """Reflexive ancestor matrix: entry (i, j) is 1 iff j == i or x_j is an ancestor of x_i."""
    d = graph.d
    closure = np.eye(d, dtype=np.int8)
    for i in graph.ordering:
        for j in graph.parents(i):
            closure[i] |= closure[j]
    return closure


def total_effects(weights) -> np.ndarray:
    """Compacted linear map ``(I - W)^{-1}`` of a linear SCM with edge weights ``W``.

    Its support equals :func:`transitive_closure` of the support of ``W``.
    """
    w = np.asarray(weights, dtype=float)
    return np.linalg.inv(np.eye(w.shape[0]) - w)


def structurally_leq(a, b) -> bool:
    """True iff every zero of ``b`` is also a zero of ``a``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return bool(np.all((b != 0) | (a == 0)))


def structurally_eq(a, b) -> bool:
    return structurally_leq(a, b) and structurally_leq(b, a)


# -- partial knowledge -------------------------------------------------------


@dataclass(frozen=True)
class PartialGraphSpec:
    """Known edges plus unordered pairs whose relationship is unknown."""

    d: int
    known_edges: frozenset[tuple[int, int]]
    unknown_pairs: frozenset[tuple[int, int]]
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        known = frozenset((int(c), int(e)) for c, e in self.known_edges)
        unknown = frozenset(tuple(sorted((int(a), int(b)))) for a, b in self.unknown_pairs)
        object.__setattr__(self, "known_edges", known)
        object.__setattr__(self, "unknown_pairs", unknown)
        for pair in list(known) + list(unknown):
            if not all(0 <= v < self.d for v in pair):
                raise ShapeError(f"node index out of range in {pair}")
            if pair[0] == pair[1]:
                raise CyclicGraphError(f"self-loop {pair}")
        if {tuple(sorted(e)) for e in known} & unknown:
            raise ShapeError("a pair cannot be both known and unknown")
        if self.names is not None and len(self.names) != self.d:
            raise ShapeError("one name per node expected")


@dataclass(frozen=True)
class BlockGraph:
    """Condensation of a partial graph into strongly connected blocks.

    ``blocks`` are listed in a causal order of the block DAG and each block is
    itself listed in its chosen intra-block order.
    """

    blocks: tuple[tuple[int, ...], ...]
    block_adjacency: np.ndarray
    lifted_adjacency: np.ndarray
    names: tuple[str, ...] | None = field(default=None, compare=False)

    @property
    def d(self) -> int:
        return self.lifted_adjacency.shape[0]

    @property
    def graph(self) -> CausalGraph:
        order = tuple(i for block in self.blocks for i in block)
        return CausalGraph(self.lifted_adjacency, order, self.names)

    def block_of(self, node: int) -> int:
        for k, block in enumerate(self.blocks):
            if node in block:
                return k
        raise IndexError(node)

    def collapse(self, adjacency=None) -> np.ndarray:
        """Block-level adjacency implied by a node-level adjacency."""
        a = self.lifted_adjacency if adjacency is None else np.asarray(adjacency)
        k = len(self.blocks)
        out = np.zeros((k, k), dtype=np.int8)
        for p, effect_block in enumerate(self.blocks):
            for q, cause_block in enumerate(self.blocks):
                if p != q and a[np.ix_(effect_block, cause_block)].any():
                    out[p, q] = 1
        return out


def strongly_connected_components(successors: Sequence[Sequence[int]]) -> list[list[int]]:
    """Tarjan's algorithm (iterative). Components are emitted in reverse topological order."""
    n = len(successors)
    index = [-1] * n
    lowlink = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    components: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, child = work.pop()
            if child == 0:
                index[v] = lowlink[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            recurse = False
            succ = successors[v]
            while child < len(succ):
                w = succ[child]
                child += 1
                if index[w] == -1:
                    work.append((v, child))
                    work.append((w, 0))
                    recurse = True
                    break
                if on_stack[w]:
                    lowlink[v] = min(lowlink[v], index[w])
            if recurse:
                continue
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                components.append(sorted(comp))
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
    return components


def condense_partial(spec: PartialGraphSpec) -> BlockGraph:
    """Group nodes with unknown relations into SCC blocks and lift edges block-wise.

    Unknown pairs contribute edges in both directions before running Tarjan's
    algorithm.  Inside a block the order follows any known intra-block edges,
    breaking ties by ascending node index.  Every inter-block edge is expanded
    to connect all nodes of the cause block to all nodes of the effect block.
    """
    d = spec.d
    succ: list[set[int]] = [set() for _ in range(d)]
    for cause, effect in spec.known_edges:
        succ[cause].add(effect)
    for a, b in spec.unknown_pairs:
        succ[a].add(b)
        succ[b].add(a)
    components = strongly_connected_components([sorted(s) for s in succ])

    comp_of = np.empty(d, dtype=int)
    for k, comp in enumerate(components):
        comp_of[comp] = k
    k_total = len(components)
    comp_adj = np.zeros((k_total, k_total), dtype=np.int8)
    for cause, effect in spec.known_edges:
        if comp_of[cause] != comp_of[effect]:
            comp_adj[comp_of[effect], comp_of[cause]] = 1

    # block order: topological with smallest-member tie-breaking
    smallest = [min(c) for c in components]
    indegree = comp_adj.sum(axis=1).astype(int)
    ready = sorted((k for k in range(k_total) if indegree[k] == 0), key=smallest.__getitem__)
    block_order: list[int] = []
    while ready:
        k = ready.pop(0)
        block_order.append(k)
        for e in np.flatnonzero(comp_adj[:, k]):
            indegree[e] -= 1
            if indegree[e] == 0:
                ready.append(int(e))
        ready.sort(key=smallest.__getitem__)
    if len(block_order) != k_total:  # pragma: no cover - condensation is always acyclic
        raise CyclicBlockError("block graph is cyclic")

    blocks = []
    for k in block_order:
        members = components[k]
        local = np.zeros((len(members), len(members)), dtype=np.int8)
        pos = {v: p for p, v in enumerate(members)}
        for cause, effect in spec.known_edges:
            if cause in pos and effect in pos:
                local[pos[effect], pos[cause]] = 1
        try:
            local_order = topological_order(local)
        except CyclicGraphError as exc:
            raise CyclicBlockError(
                f"known edges inside block {members} form a cycle"
            ) from exc
        blocks.append(tuple(members[p] for p in local_order))

    relabel = {old: new for new, old in enumerate(block_order)}
    block_adj = np.zeros_like(comp_adj)
    for e in range(k_total):
        for c in range(k_total):
            if comp_adj[e, c]:
                block_adj[relabel[e], relabel[c]] = 1

    lifted = np.zeros((d, d), dtype=np.int8)
    for block in blocks:
        for p, effect in enumerate(block):
            for cause in block[:p]:
                lifted[effect, cause] = 1
    for e in range(len(blocks)):
        for c in range(len(blocks)):
            if block_adj[e, c]:
                lifted[np.ix_(blocks[e], blocks[c])] = 1

    block_adj.setflags(write=False)
    lifted.setflags(write=False)
    return BlockGraph(tuple(blocks), block_adj, lifted, spec.names)


# -- text serialization --------------------------------------------------------


def parse_edgelist(text: str) -> PartialGraphSpec:
    """Parse ``cause -> effect`` / ``a ?? b`` lines; a bare name declares a node.

    Nodes are numbered in order of first appearance.  ``#`` starts a comment.
    """
    names: list[str] = []
    index: dict[str, int] = {}

    def node(name: str) -> int:
        name = name.strip()
        if not name:
            raise FormatError("empty node name")
        if name not in index:
            index[name] = len(names)
            names.append(name)
        return index[name]

    known, unknown = set(), set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" in line:
            cause, effect = line.split("->", 1)
            known.add((node(cause), node(effect)))
        elif "??" in line:
            a, b = line.split("??", 1)
            unknown.add((node(a), node(b)))
        elif any(tok in line for tok in ("<-", "--", "?")):
            raise FormatError(f"line {lineno}: unrecognised edge syntax {raw!r}")
        else:
            node(line)
    return PartialGraphSpec(len(names), frozenset(known), frozenset(unknown), tuple(names))


def format_edgelist(graph: CausalGraph | PartialGraphSpec, names: Sequence[str] | None = None) -> str:
    if names is None:
        names = graph.names
    d = graph.d
    if names is None:
        names = [f"x{i + 1}" for i in range(d)]
    if isinstance(graph, CausalGraph):
        known, unknown = graph.edges(), []
    else:
        known, unknown = sorted(graph.known_edges), sorted(graph.unknown_pairs)
    # declare every node first so that parsing reproduces the indices
    lines = list(names[:d])
    lines += [f"{names[c]} -> {names[e]}" for c, e in known]
    lines += [f"{names[a]} ?? {names[b]}" for a, b in unknown]
    return "\n".join(lines) + "\n"
