"""Mixed graphs (path diagrams), their bidirected decomposition and the exact
maximum likelihood threshold.

Vertices are the integers ``1..p``. A directed edge ``(i, j)`` is ``i -> j``; a
bidirected edge is stored as the sorted pair ``(i, j)`` with ``i < j``.
Component indices are 0-based positions in ``ComponentDecomposition.components``.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from graphlib import CycleError, TopologicalSorter
from itertools import combinations
from typing import Iterable

from .errors import GraphError, GraphParseError

Edge = tuple[int, int]


@dataclass(frozen=True)
class MixedGraph:
    """Immutable mixed graph ``(V, D, B)`` on ``V = {1, ..., p}``.

    Duplicate edges are merged. An edge may be both directed and bidirected.
    """

    p: int
    directed: frozenset[Edge] = field(default_factory=frozenset)
    bidirected: frozenset[Edge] = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.p, int) or self.p < 1:
            raise GraphError(f"p must be a positive integer, got {self.p!r}")
        directed = frozenset((int(i), int(j)) for i, j in self.directed)
        bidirected = frozenset(
            (min(int(i), int(j)), max(int(i), int(j))) for i, j in self.bidirected
        )
        for kind, edges in (("directed", directed), ("bidirected", bidirected)):
            for i, j in edges:
                if i == j:
                    raise GraphError(f"self-loop on vertex {i} ({kind})")
                if not (1 <= i <= self.p and 1 <= j <= self.p):
                    raise GraphError(f"{kind} edge ({i}, {j}) has an endpoint outside 1..{self.p}")
        object.__setattr__(self, "directed", directed)
        object.__setattr__(self, "bidirected", bidirected)

    @classmethod
    def from_edges(cls, p: int, directed: Iterable[Edge] = (), bidirected: Iterable[Edge] = ()):
        return cls(p, frozenset(directed), frozenset(bidirected))

    @property
    def vertices(self) -> range:
        return range(1, self.p + 1)

    @property
    def n_edges(self) -> int:
        return len(self.directed) + len(self.bidirected)

    @cached_property
    def _parents(self) -> dict[int, tuple[int, ...]]:
        pa: dict[int, list[int]] = {v: [] for v in self.vertices}
        for i, j in self.directed:
            pa[j].append(i)
        return {v: tuple(sorted(ps)) for v, ps in pa.items()}

    @cached_property
    def _children(self) -> dict[int, tuple[int, ...]]:
        ch: dict[int, list[int]] = {v: [] for v in self.vertices}
        for i, j in self.directed:
            ch[i].append(j)
        return {v: tuple(sorted(cs)) for v, cs in ch.items()}

    @cached_property
    def _siblings(self) -> dict[int, tuple[int, ...]]:
        sib: dict[int, list[int]] = {v: [] for v in self.vertices}
        for i, j in self.bidirected:
            sib[i].append(j)
            sib[j].append(i)
        return {v: tuple(sorted(s)) for v, s in sib.items()}

    def parents(self, j: int) -> tuple[int, ...]:
        return self._parents[j]

    def children(self, i: int) -> tuple[int, ...]:
        return self._children[i]

    def siblings(self, i: int) -> tuple[int, ...]:
        """Bidirected neighbours of ``i``."""
        return self._siblings[i]

    def in_degree(self, j: int) -> int:
        return len(self._parents[j])

    def is_digraph(self) -> bool:
        return not self.bidirected

    def is_bidirected(self) -> bool:
        return not self.directed

    def adjacent(self, i: int, j: int) -> bool:
        return (
            (i, j) in self.directed
            or (j, i) in self.directed
            or (min(i, j), max(i, j)) in self.bidirected
        )

    def sorted_directed(self) -> list[Edge]:
        return sorted(self.directed)

    def sorted_bidirected(self) -> list[Edge]:
        return sorted(self.bidirected)

    def is_subgraph_of(self, other: MixedGraph) -> bool:
        return (
            self.p == other.p
            and self.directed <= other.directed
            and self.bidirected <= other.bidirected
        )

    def __str__(self) -> str:
        return (
            f"MixedGraph(p={self.p}, {len(self.directed)} directed, "
            f"{len(self.bidirected)} bidirected)"
        )


@dataclass(frozen=True)
class ComponentDecomposition:
    """Bidirected components ``C_j`` and their parent closures ``Pa(C_j)``."""

    components: tuple[tuple[int, ...], ...]
    parent_closures: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.components)

    def sizes(self) -> list[int]:
        return [len(pa) for pa in self.parent_closures]


@dataclass(frozen=True)
class MltReport:
    threshold_zero_mean: int
    threshold_unknown_mean: int
    achieving_component: int
    decomposition: ComponentDecomposition

    def to_dict(self) -> dict:
        return {
            "threshold_zero_mean": self.threshold_zero_mean,
            "threshold_unknown_mean": self.threshold_unknown_mean,
            "achieving_component": self.achieving_component,
            "components": [list(c) for c in self.decomposition.components],
            "parent_closures": [list(c) for c in self.decomposition.parent_closures],
        }


# ---------------------------------------------------------------------------
# File format

_HEADER = re.compile(r"^p (\d+)$")
_EDGE = re.compile(r"^(\d+) (->|<->) (\d+)$")


def parse_graph(text: str) -> MixedGraph:
    """Parse the edge-list format::

        # comment
        p 6
        1 -> 2
        4 <-> 5
    """
    p = None
    directed: set[Edge] = set()
    bidirected: set[Edge] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if p is None:
            m = _HEADER.match(line)
            if not m:
                raise GraphParseError(f"expected header 'p <integer>', got {line!r}", lineno)
            p = int(m.group(1))
            if p < 1:
                raise GraphParseError("p must be positive", lineno)
            continue
        m = _EDGE.match(line)
        if not m:
            raise GraphParseError(f"malformed edge {line!r}", lineno)
        a, arrow, b = int(m.group(1)), m.group(2), int(m.group(3))
        if a == b:
            raise GraphParseError(f"self-loop on vertex {a}", lineno)
        for v in (a, b):
            if not 1 <= v <= p:
                raise GraphParseError(f"vertex {v} out of range 1..{p}", lineno)
        if arrow == "->":
            directed.add((a, b))
        else:
            bidirected.add((min(a, b), max(a, b)))
    if p is None:
        raise GraphParseError("missing header 'p <integer>'")
    return MixedGraph.from_edges(p, directed, bidirected)


def serialize_graph(g: MixedGraph) -> str:
    lines = [f"p {g.p}"]
    lines += [f"{i} -> {j}" for i, j in g.sorted_directed()]
    lines += [f"{i} <-> {j}" for i, j in g.sorted_bidirected()]
    return "\n".join(lines) + "\n"


def read_graph(path) -> MixedGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


def write_graph(g: MixedGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_graph(g))


# ---------------------------------------------------------------------------
# Connectivity helpers

def _components(vertices: Iterable[int], neighbours) -> list[tuple[int, ...]]:
    """Connected components, each sorted, ordered by smallest vertex."""
    vertices = sorted(vertices)
    allowed = set(vertices)
    seen: set[int] = set()
    out = []
    for start in vertices:
        if start in seen:
            continue
        comp = []
        queue = deque([start])
        seen.add(start)
        while queue:
            v = queue.popleft()
            comp.append(v)
            for w in neighbours(v):
                if w in allowed and w not in seen:
                    seen.add(w)
                    queue.append(w)
        out.append(tuple(sorted(comp)))
    return out


def _is_connected(vertices: Iterable[int], neighbours) -> bool:
    vertices = list(vertices)
    return len(vertices) <= 1 or len(_components(vertices, neighbours)) == 1


def connected_components(g: MixedGraph) -> list[tuple[int, ...]]:
    """Vertex sets of the connected components of the whole mixed graph."""

    def nbrs(v):
        return g.parents(v) + g.children(v) + g.siblings(v)

    return _components(g.vertices, nbrs)


def induced_subgraph(g: MixedGraph, vertices: Iterable[int]) -> tuple[MixedGraph, tuple[int, ...]]:
    """Subgraph induced by ``vertices``, relabelled to ``1..k`` in sorted order.

    Returns the graph and the label map (new label ``k`` is ``labels[k - 1]``).
    """
    labels = tuple(sorted(set(vertices)))
    index = {v: k + 1 for k, v in enumerate(labels)}
    directed = [(index[i], index[j]) for i, j in g.directed if i in index and j in index]
    bidirected = [(index[i], index[j]) for i, j in g.bidirected if i in index and j in index]
    return MixedGraph.from_edges(len(labels), directed, bidirected), labels


# ---------------------------------------------------------------------------
# Decomposition and threshold

def parent_closure(g: MixedGraph, vertices: Iterable[int]) -> tuple[int, ...]:
    closure = set(vertices)
    for v in list(closure):
        closure.update(g.parents(v))
    return tuple(sorted(closure))


def bidirected_components(g: MixedGraph) -> ComponentDecomposition:
    comps = _components(g.vertices, g.siblings)
    return ComponentDecomposition(
        components=tuple(comps),
        parent_closures=tuple(parent_closure(g, c) for c in comps),
    )


def mlt_zero_mean(g: MixedGraph) -> MltReport:
    """Maximum likelihood threshold: the largest parent closure of a bidirected component."""
    dec = bidirected_components(g)
    sizes = dec.sizes()
    best = max(sizes)
    j = sizes.index(best)
    return MltReport(
        threshold_zero_mean=best,
        threshold_unknown_mean=best + 1,
        achieving_component=j,
        decomposition=dec,
    )


def is_acyclic(g: MixedGraph) -> bool:
    ts = TopologicalSorter({v: g.parents(v) for v in g.vertices})
    try:
        ts.prepare()
    except CycleError:
        return False
    return True


def saturate(g: MixedGraph) -> MixedGraph:
    """Complete every bidirected component to a clique."""
    extra = set(g.bidirected)
    for comp in bidirected_components(g).components:
        extra.update(combinations(comp, 2))
    return MixedGraph.from_edges(g.p, g.directed, extra)


def is_saturated(g: MixedGraph) -> bool:
    return all(
        all(pair in g.bidirected for pair in combinations(comp, 2))
        for comp in bidirected_components(g).components
    )


def component_subgraph(g: MixedGraph, j: int) -> tuple[MixedGraph, tuple[int, ...]]:
    """The graph ``G_j = (Pa(C_j), D_j, B_j)`` relabelled to ``1..|Pa(C_j)|``.

    ``D_j`` holds the directed edges with head in ``C_j``, ``B_j`` the bidirected
    edges inside ``C_j``. Returns the graph and its label map.
    """
    dec = bidirected_components(g)
    if not 0 <= j < len(dec):
        raise GraphError(f"component index {j} out of range 0..{len(dec) - 1}")
    comp = set(dec.components[j])
    labels = dec.parent_closures[j]
    index = {v: k + 1 for k, v in enumerate(labels)}
    directed = [(index[a], index[b]) for a, b in g.directed if b in comp]
    bidirected = [(index[a], index[b]) for a, b in g.bidirected if a in comp]
    return MixedGraph.from_edges(len(labels), directed, bidirected), labels


def _infer_component(gj: MixedGraph) -> set[int]:
    heads = {j for _, j in gj.directed}
    comp = heads | {v for e in gj.bidirected for v in e}
    if not comp:
        if gj.p != 1:
            raise GraphError("cannot infer the component of an edgeless graph with p > 1")
        comp = {1}
    return comp


def reduction_subgraph(gj: MixedGraph, component: Iterable[int] | None = None) -> tuple[MixedGraph, MixedGraph]:
    """Reduce a component subgraph to ``(H_j, H_j^<->)``.

    ``H_j`` keeps the bidirected part and, for every external parent, one
    outgoing edge (to its smallest-labelled child). ``H_j^<->`` turns those
    directed edges into bidirected ones; it is a connected bidirected graph.
    """
    comp = set(component) if component is not None else _infer_component(gj)
    if any(j not in comp for _, j in gj.directed):
        raise GraphError("directed edge with head outside the component")
    if any(a not in comp or b not in comp for a, b in gj.bidirected):
        raise GraphError("bidirected edge leaves the component")
    if not _is_connected(comp, gj.siblings):
        raise GraphError("bidirected part is not connected on the component")
    chosen = []
    for v in gj.vertices:
        if v in comp:
            continue
        kids = [c for c in gj.children(v) if c in comp]
        if not kids:
            raise GraphError(f"vertex {v} is neither in the component nor a parent of it")
        chosen.append((v, min(kids)))
    h = MixedGraph.from_edges(gj.p, chosen, gj.bidirected)
    h_bi = MixedGraph.from_edges(gj.p, (), set(gj.bidirected) | {tuple(sorted(e)) for e in chosen})
    return h, h_bi


def suffix_connected(g: MixedGraph, order: Iterable[int]) -> bool:
    """True iff every suffix ``order[i:]`` induces a connected bidirected subgraph."""
    order = list(order)
    if sorted(order) != list(g.vertices):
        return False
    return all(_is_connected(order[i:], g.siblings) for i in range(len(order)))


def peripheral_ordering(g: MixedGraph) -> tuple[int, ...]:
    """Order the vertices of a connected bidirected graph so every suffix is connected.

    Repeatedly removes the smallest-labelled vertex whose removal keeps the rest
    connected; the removal sequence is the ordering.
    """
    if g.directed:
        raise GraphError("peripheral ordering needs a purely bidirected graph")
    if not _is_connected(g.vertices, g.siblings):
        raise GraphError("bidirected graph is not connected")
    remaining = list(g.vertices)
    order = []
    while remaining:
        for v in remaining:
            rest = [w for w in remaining if w != v]
            if _is_connected(rest, g.siblings):
                order.append(v)
                remaining = rest
                break
        else:  # pragma: no cover - a connected graph always has a non-cut vertex
            raise GraphError("no removable vertex found")
    if not suffix_connected(g, order):  # pragma: no cover
        raise GraphError("internal error: ordering failed suffix-connectivity check")
    return tuple(order)


# ---------------------------------------------------------------------------
# Built-in graph families

FIG1A_DIRECTED = [(1, 2), (1, 3), (2, 3), (2, 4), (3, 4), (3, 5), (4, 6), (5, 6)]
FIG1B_DIRECTED = [(1, 2), (1, 3), (2, 3), (4, 2), (3, 4), (3, 5), (4, 6), (5, 6)]
FIG1B_BIDIRECTED = [(4, 5), (5, 6)]

GRAPH_KINDS = (
    "experiment",
    "directed-cycle",
    "bidirected-path",
    "bidirected-complete",
    "fig1a",
    "fig1b",
)


def experiment_edges(p: int) -> list[Edge]:
    """Cycle of length p/2, shortcut 4-cycles, and one covariate per cycle node."""
    h = p // 2
    e1 = [(i, i + 1) for i in range(1, h)] + [(h, 1)]
    e2 = [(i + 3, i) for i in range(1, h - 2)] + [(1, h - 2), (2, h - 1), (3, h)]
    e3 = [(h + i, i) for i in range(1, h + 1)]
    return e1 + e2 + e3


def make_graph(kind: str, p: int | None = None) -> MixedGraph:
    if kind == "experiment":
        if p is None or p < 12 or p % 2:
            raise GraphError(f"experiment graph needs an even p >= 12, got {p}")
        return MixedGraph.from_edges(p, experiment_edges(p))
    if kind == "directed-cycle":
        if p is None or p < 3:
            raise GraphError(f"directed cycle needs p >= 3, got {p}")
        return MixedGraph.from_edges(p, [(i, i % p + 1) for i in range(1, p + 1)])
    if kind == "bidirected-path":
        if p is None or p < 1:
            raise GraphError(f"bidirected path needs p >= 1, got {p}")
        return MixedGraph.from_edges(p, (), [(i, i + 1) for i in range(1, p)])
    if kind == "bidirected-complete":
        if p is None or p < 1:
            raise GraphError(f"complete bidirected graph needs p >= 1, got {p}")
        return MixedGraph.from_edges(p, (), combinations(range(1, p + 1), 2))
    if kind in ("fig1a", "fig1b"):
        if p not in (None, 6):
            raise GraphError(f"{kind} has p = 6, got {p}")
        if kind == "fig1a":
            return MixedGraph.from_edges(6, FIG1A_DIRECTED)
        return MixedGraph.from_edges(6, FIG1B_DIRECTED, FIG1B_BIDIRECTED)
    raise GraphError(f"unknown graph kind {kind!r}; choose from {', '.join(GRAPH_KINDS)}")
