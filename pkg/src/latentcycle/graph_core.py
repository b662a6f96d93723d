"""Directed graphs with latent vertices and the structural queries built on them.

Everything here is purely combinatorial: treks, trek separation, d-separation,
k-trek systems, triangles and random DAG generation. Graphs may contain
directed cycles; queries that only make sense on DAGs say so.

Trek searches only ever enumerate *simple* sides. Any directed walk that
avoids a vertex set contains a simple directed path that avoids the same set,
and if the two sides of a trek meet below the top, the suffixes starting at
the meeting vertex form a shorter trek that is blocked by nothing the original
was not blocked by. Separation answers are therefore unchanged by the
restriction.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

from latentcycle.errors import ResourceGuardError, ValidationError

VertexRef = Union[int, str]

OBSERVED = "observed"
LATENT = "latent"

#: Default cap on |V| for exhaustive choke-set enumeration.
MAX_EXHAUSTIVE_VERTICES = 14
#: Default cap on the number of partial trek systems visited.
MAX_KTREK_SEARCH = 2_000_000


@dataclass(frozen=True)
class Vertex:
    id: int
    label: str
    kind: str = OBSERVED


class DirectedGraph:
    """Immutable, possibly cyclic, directed graph.

    Parameters
    ----------
    vertices : sequence of Vertex
        Vertex ids must be exactly ``0..p-1`` in order.
    edges : iterable of (int, int)
        Directed edges ``(source, target)``.

    Notes
    -----
    Most query functions accept vertices either by integer id or by label.
    """

    def __init__(self, vertices: Sequence[Vertex], edges: Iterable[tuple[int, int]]):
        vertices = tuple(vertices)
        for pos, v in enumerate(vertices):
            if v.id != pos:
                raise ValidationError(f"vertex ids must be dense 0..p-1, got {v.id} at {pos}")
            if v.kind not in (OBSERVED, LATENT):
                raise ValidationError(f"unknown vertex kind {v.kind!r}")
        labels = [v.label for v in vertices]
        if len(set(labels)) != len(labels):
            raise ValidationError("vertex labels must be unique")
        p = len(vertices)
        edge_set = set()
        for s, t in edges:
            s, t = int(s), int(t)
            if not (0 <= s < p and 0 <= t < p):
                raise ValidationError(f"edge ({s}, {t}) uses an undeclared vertex")
            if s == t:
                raise ValidationError(f"self-loop on vertex {s}")
            edge_set.add((s, t))
        self._vertices = vertices
        self._edges = tuple(sorted(edge_set))
        self._index = {v.label: v.id for v in vertices}
        parents: list[list[int]] = [[] for _ in range(p)]
        children: list[list[int]] = [[] for _ in range(p)]
        for s, t in self._edges:
            parents[t].append(s)
            children[s].append(t)
        self._parents = tuple(tuple(sorted(x)) for x in parents)
        self._children = tuple(tuple(sorted(x)) for x in children)

    # construction helpers -------------------------------------------------
    @classmethod
    def from_labels(
        cls,
        observed: Sequence[str],
        latent: Sequence[str] = (),
        edges: Iterable[tuple[str, str]] = (),
    ) -> "DirectedGraph":
        """Build a graph from label lists; latents get the ids after observed ones."""
        verts = [Vertex(i, lab, OBSERVED) for i, lab in enumerate(observed)]
        verts += [Vertex(len(verts) + i, lab, LATENT) for i, lab in enumerate(latent)]
        index = {v.label: v.id for v in verts}
        try:
            edge_ids = [(index[a], index[b]) for a, b in edges]
        except KeyError as exc:
            raise ValidationError(f"edge mentions unknown label {exc.args[0]!r}") from None
        return cls(verts, edge_ids)

    @classmethod
    def from_dict(cls, d: dict) -> "DirectedGraph":
        """Inverse of :meth:`to_dict`.

        Edge endpoints may be ids or labels, and vertex ids default to list
        position.
        """
        try:
            raw = [dict(v, id=v.get("id", i)) for i, v in enumerate(d["vertices"])]
            verts = [
                Vertex(int(v["id"]), str(v["label"]), str(v.get("kind", OBSERVED)))
                for v in sorted(raw, key=lambda v: int(v["id"]))
            ]
            index = {v.label: v.id for v in verts}
            edges = [
                tuple(index[x] if isinstance(x, str) else int(x) for x in e) for e in d["edges"]
            ]
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ValidationError(f"malformed graph JSON: {exc}") from None
        return cls(verts, edges)

    def to_dict(self) -> dict:
        return {
            "vertices": [
                {"id": v.id, "label": v.label, "kind": v.kind} for v in self._vertices
            ],
            "edges": [list(e) for e in self._edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DirectedGraph":
        return cls.from_dict(json.loads(text))

    def with_edges(self, extra: Iterable[tuple[int, int]]) -> "DirectedGraph":
        """Return a copy with additional edges."""
        return DirectedGraph(self._vertices, list(self._edges) + list(extra))

    # basic accessors -------------------------------------------------------
    @property
    def p(self) -> int:
        return len(self._vertices)

    @property
    def vertices(self) -> tuple[Vertex, ...]:
        return self._vertices

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return self._edges

    @property
    def labels(self) -> list[str]:
        return [v.label for v in self._vertices]

    def label(self, v: int) -> str:
        return self._vertices[v].label

    def parents(self, v: VertexRef) -> tuple[int, ...]:
        return self._parents[self.id(v)]

    def children(self, v: VertexRef) -> tuple[int, ...]:
        return self._children[self.id(v)]

    def has_edge(self, s: VertexRef, t: VertexRef) -> bool:
        return self.id(t) in self._children[self.id(s)]

    def adjacent(self, a: VertexRef, b: VertexRef) -> bool:
        return self.has_edge(a, b) or self.has_edge(b, a)

    @property
    def observed(self) -> tuple[int, ...]:
        return tuple(v.id for v in self._vertices if v.kind == OBSERVED)

    @property
    def latent(self) -> tuple[int, ...]:
        return tuple(v.id for v in self._vertices if v.kind == LATENT)

    def id(self, v: VertexRef) -> int:
        """Resolve a label or an id to a vertex id."""
        if isinstance(v, (int, np.integer)):
            if not 0 <= int(v) < self.p:
                raise ValidationError(f"vertex id {v} out of range")
            return int(v)
        try:
            return self._index[v]
        except KeyError:
            raise ValidationError(f"unknown vertex label {v!r}") from None

    def ids(self, vs: Iterable[VertexRef]) -> tuple[int, ...]:
        return tuple(self.id(v) for v in vs)

    def adjacency_matrix(self) -> np.ndarray:
        """Boolean matrix ``M`` with ``M[s, t]`` true iff ``s -> t``."""
        m = np.zeros((self.p, self.p), dtype=bool)
        for s, t in self._edges:
            m[s, t] = True
        return m

    def ancestors(self, vs: Iterable[VertexRef]) -> set[int]:
        """Vertices with a directed path into ``vs`` (including ``vs``)."""
        return _closure(self.ids(vs), self._parents)

    def descendants(self, vs: Iterable[VertexRef]) -> set[int]:
        """Vertices reachable from ``vs`` (including ``vs``)."""
        return _closure(self.ids(vs), self._children)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, DirectedGraph)
            and self._vertices == other._vertices
            and self._edges == other._edges
        )

    def __hash__(self) -> int:
        return hash((self._vertices, self._edges))

    def __repr__(self) -> str:
        return f"DirectedGraph(p={self.p}, edges={len(self._edges)})"


def _closure(start: Iterable[int], nbrs: Sequence[Sequence[int]]) -> set[int]:
    seen = set(start)
    stack = list(seen)
    while stack:
        v = stack.pop()
        for u in nbrs[v]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return seen


def is_acyclic(g: DirectedGraph) -> bool:
    """Return True iff ``g`` has no directed cycle (Kahn's algorithm)."""
    indeg = [len(g.parents(v)) for v in range(g.p)]
    queue = deque(v for v in range(g.p) if indeg[v] == 0)
    seen = 0
    while queue:
        v = queue.popleft()
        seen += 1
        for c in g.children(v):
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    return seen == g.p


def topological_order(g: DirectedGraph) -> list[int]:
    """Topological order of a DAG, ties broken by vertex id."""
    import heapq

    indeg = [len(g.parents(v)) for v in range(g.p)]
    heap = [v for v in range(g.p) if indeg[v] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        v = heapq.heappop(heap)
        out.append(v)
        for c in g.children(v):
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(out) != g.p:
        raise ValidationError("graph has a directed cycle")
    return out


# ---------------------------------------------------------------------------
# d-separation
# ---------------------------------------------------------------------------
def d_separated(
    g: DirectedGraph,
    A: Iterable[VertexRef],
    B: Iterable[VertexRef],
    C: Iterable[VertexRef] = (),
) -> bool:
    """Decide whether ``A`` and ``B`` are d-separated given ``C``.

    Uses the reachability ("Bayes ball") formulation: a collider is open when
    it is an ancestor of ``C``, a non-collider is open when it is not in ``C``.

    Raises
    ------
    ValidationError
        If the three sets are not pairwise disjoint.
    """
    A, B, C = set(g.ids(A)), set(g.ids(B)), set(g.ids(C))
    if A & B or A & C or B & C:
        raise ValidationError("A, B and C must be pairwise disjoint")
    if not A or not B:
        return True
    anc_c = g.ancestors(C)
    # states: (vertex, arrived_from_child) ; "up" means we travel against edges
    visited: set[tuple[int, bool]] = set()
    queue = deque((a, True) for a in sorted(A))
    while queue:
        v, up = queue.popleft()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v in B:
            return False
        if up:
            if v in C:
                continue
            for u in g.parents(v):
                queue.append((u, True))
            for c in g.children(v):
                queue.append((c, False))
        else:
            if v not in C:
                for c in g.children(v):
                    queue.append((c, False))
            if v in anc_c:
                for u in g.parents(v):
                    queue.append((u, True))
    return True


# ---------------------------------------------------------------------------
# treks
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Trek:
    """A pair of directed paths sharing their first vertex ``top``."""

    top: int
    side_a: tuple[int, ...]
    side_b: tuple[int, ...]
    simple: bool = True

    def swapped(self) -> "Trek":
        return Trek(self.top, self.side_b, self.side_a, self.simple)


@dataclass(frozen=True)
class KTrek:
    """``k`` directed paths that all start at ``top``."""

    top: int
    sides: tuple[tuple[int, ...], ...]


def simple_paths(
    g: DirectedGraph, src: int, dst: int, max_len: Optional[int] = None
) -> Iterator[tuple[int, ...]]:
    """Yield all simple directed paths from ``src`` to ``dst`` in DFS order.

    ``max_len`` bounds the number of edges. The trivial path ``(src,)`` is
    yielded when ``src == dst``.
    """
    if src == dst:
        yield (src,)
        return
    path = [src]
    on_path = {src}

    def rec():
        v = path[-1]
        if max_len is not None and len(path) - 1 >= max_len:
            return
        for c in g.children(v):
            if c in on_path:
                continue
            if c == dst:
                yield tuple(path) + (c,)
                continue
            path.append(c)
            on_path.add(c)
            yield from rec()
            path.pop()
            on_path.discard(c)

    yield from rec()


def enumerate_simple_treks(g: DirectedGraph, x: VertexRef, y: VertexRef) -> list[Trek]:
    """All simple treks between ``x`` and ``y``.

    A trek is simple when each side is a simple directed path and the sides
    meet only at the top. Results are ordered by top id, then by the sides in
    DFS order.
    """
    x, y = g.id(x), g.id(y)
    if x == y:
        return [Trek(x, (x,), (x,))]
    tops = sorted(g.ancestors([x]) & g.ancestors([y]))
    out = []
    for t in tops:
        pa = list(simple_paths(g, t, x))
        pb = list(simple_paths(g, t, y))
        for a in pa:
            sa = set(a)
            for b in pb:
                if sa.isdisjoint(b[1:]):
                    out.append(Trek(t, a, b))
    return out


_INF = 1 << 30


def _choke_flow(
    g: DirectedGraph,
    A: Iterable[int],
    B: Iterable[int],
    cut_a: bool = True,
    limit: Optional[int] = None,
) -> int:
    """Maximum number of vertex-disjoint treks, i.e. the minimum choke-set size.

    Each vertex ``v`` gets an A-side copy and a B-side copy, both split into
    an in-node and an out-node joined by a unit arc (an infinite arc for the
    A-side when ``cut_a`` is false). A trek from ``a`` to ``b`` becomes a path
    source -> a(A) -> ... parents on the A-side ... -> top(A) -> top(B) ->
    ... children on the B-side ... -> b(B) -> sink, so Menger's theorem turns
    the minimum vertex cut into a maximum flow. Augmentation stops once the
    flow exceeds ``limit``.
    """
    p = g.p
    source, sink = 4 * p, 4 * p + 1

    def node(v: int, side: int, out: int) -> int:
        return 4 * v + 2 * side + out

    cap: list[dict[int, int]] = [dict() for _ in range(4 * p + 2)]

    def arc(u: int, w: int, c: int) -> None:
        cap[u][w] = cap[u].get(w, 0) + c
        cap[w].setdefault(u, 0)

    for v in range(p):
        arc(node(v, 0, 0), node(v, 0, 1), 1 if cut_a else _INF)
        arc(node(v, 1, 0), node(v, 1, 1), 1)
        arc(node(v, 0, 1), node(v, 1, 0), _INF)
    for s, t in g.edges:
        arc(node(t, 0, 1), node(s, 0, 0), _INF)
        arc(node(s, 1, 1), node(t, 1, 0), _INF)
    for a in set(A):
        arc(source, node(a, 0, 0), _INF)
    for b in set(B):
        arc(node(b, 1, 1), sink, _INF)

    flow = 0
    while limit is None or flow <= limit:
        prev = {source: source}
        queue = deque([source])
        while queue and sink not in prev:
            u = queue.popleft()
            for w, c in cap[u].items():
                if c > 0 and w not in prev:
                    prev[w] = u
                    queue.append(w)
        if sink not in prev:
            break
        # every augmenting path crosses a unit arc, so push exactly one unit
        w = sink
        while w != source:
            u = prev[w]
            cap[u][w] -= 1
            cap[w][u] += 1
            w = u
        flow += 1
    return flow


def t_separates(
    g: DirectedGraph,
    CA: Iterable[VertexRef],
    CB: Iterable[VertexRef],
    A: Iterable[VertexRef],
    B: Iterable[VertexRef],
) -> bool:
    """Return True iff ``(CA, CB)`` t-separates ``A`` from ``B``.

    Every trek from ``A`` to ``B`` must meet ``CA`` on its A-side or ``CB``
    on its B-side. Decided by reachability on the doubled graph, which is
    equivalent to checking every simple trek.
    """
    CA, CB = set(g.ids(CA)), set(g.ids(CB))
    A, B = set(g.ids(A)), set(g.ids(B))
    # BFS over (vertex, side) states
    seen: set[tuple[int, int]] = set()
    queue = deque((a, 0) for a in A if a not in CA)
    while queue:
        v, side = queue.popleft()
        if (v, side) in seen:
            continue
        seen.add((v, side))
        if side == 0:
            for u in g.parents(v):
                if u not in CA:
                    queue.append((u, 0))
            if v not in CB:
                queue.append((v, 1))
        else:
            if v in B:
                return False
            for c in g.children(v):
                if c not in CB:
                    queue.append((c, 1))
    return True


def has_trek(g: DirectedGraph, A: Iterable[VertexRef], B: Iterable[VertexRef]) -> bool:
    """True iff some trek connects ``A`` and ``B``."""
    return not t_separates(g, (), (), A, B)


def min_tsep_size(
    g: DirectedGraph,
    A: Iterable[VertexRef],
    B: Iterable[VertexRef],
    bound: Optional[int] = None,
    method: str = "flow",
    max_vertices: int = MAX_EXHAUSTIVE_VERTICES,
) -> Optional[int]:
    """Smallest ``|CA| + |CB|`` over choke-set pairs that t-separate A and B.

    Parameters
    ----------
    g : DirectedGraph
    A, B : iterable of vertices
    bound : int, optional
        Largest size of interest. When the minimum exceeds it, ``None`` is
        returned (the "exceeds bound" answer).
    method : {"flow", "exhaustive"}
        ``"flow"`` computes a minimum vertex cut in the doubled trek graph
        (Menger) by augmenting paths, polynomial in |V|. ``"exhaustive"`` enumerates choke-set
        pairs by increasing size and is kept as an independent cross-check.
    max_vertices : int
        Guard for the exhaustive method.

    Returns
    -------
    int or None
    """
    A, B = g.ids(A), g.ids(B)
    if bound is not None and bound < 0:
        raise ValidationError("bound must be non-negative")
    if method == "flow":
        if not A or not B:
            return 0
        value = _choke_flow(g, A, B, limit=bound)
    elif method == "exhaustive":
        if g.p > max_vertices:
            raise ResourceGuardError(
                f"exhaustive choke-set search on {g.p} vertices", max_vertices, "max_vertices"
            )
        value = None
        top = 2 * g.p if bound is None else min(bound, 2 * g.p)
        slots = [(v, 0) for v in range(g.p)] + [(v, 1) for v in range(g.p)]
        for size in range(top + 1):
            for combo in itertools.combinations(slots, size):
                ca = [v for v, s in combo if s == 0]
                cb = [v for v, s in combo if s == 1]
                if t_separates(g, ca, cb, A, B):
                    value = size
                    break
            if value is not None:
                break
        if value is None:
            return None
    else:
        raise ValidationError(f"unknown method {method!r}")
    if bound is not None and value > bound:
        return None
    return value


def min_b_side_choke(g: DirectedGraph, Z: Iterable[VertexRef], Y: Iterable[VertexRef]) -> int:
    """Smallest ``|C_Y|`` such that ``(∅, C_Y)`` t-separates ``Z`` from ``Y``.

    This is the graphical side of the GIN condition: ``(Z, Y)`` satisfies GIN
    in a generic linear non-Gaussian model iff the value is below ``|Y|``.
    """
    Z, Y = g.ids(Z), g.ids(Y)
    if not Z or not Y:
        return 0
    return _choke_flow(g, Z, Y, cut_a=False)


# ---------------------------------------------------------------------------
# k-trek systems
# ---------------------------------------------------------------------------
def every_ktrek_system_has_sided_intersection(
    g: DirectedGraph,
    S: Sequence[Iterable[VertexRef]],
    len_cap: Optional[int] = None,
    max_search: int = MAX_KTREK_SEARCH,
) -> bool:
    """Check whether every k-trek system between ``S_1..S_k`` has a sided intersection.

    A system is a set of ``n`` k-treks whose i-th endpoints exhaust ``S_i``.
    It has a sided intersection when two of its treks share a vertex on the
    same side. The search is exhaustive over simple sides of at most
    ``len_cap`` edges and stops at the first system without one.

    Raises
    ------
    ResourceGuardError
        If more than ``max_search`` partial systems are visited.
    """
    sets = [list(g.ids(s)) for s in S]
    k = len(sets)
    if k < 2:
        raise ValidationError("need at least two endpoint sets")
    n = len(sets[0])
    if any(len(s) != n for s in sets) or any(len(set(s)) != n for s in sets):
        raise ValidationError("endpoint sets must be duplicate-free and of equal size")
    if n == 0:
        return False

    path_cache: dict[tuple[int, int], list[tuple[int, ...]]] = {}

    def paths(t: int, v: int) -> list[tuple[int, ...]]:
        key = (t, v)
        if key not in path_cache:
            path_cache[key] = list(simple_paths(g, t, v, len_cap))
        return path_cache[key]

    anc = [g.ancestors([v]) for v in range(g.p)]
    used = [set() for _ in range(k)]  # endpoints consumed per side
    occupied = [set() for _ in range(k)]  # vertices already on each side
    budget = [max_search]

    def treks_for(ends: Sequence[int]) -> Iterator[tuple[tuple[int, ...], ...]]:
        tops = set.intersection(*(anc[v] for v in ends))
        for t in sorted(tops):
            if any(t in occupied[i] for i in range(k)):
                continue
            choices = []
            for i, v in enumerate(ends):
                ok = [pth for pth in paths(t, v) if occupied[i].isdisjoint(pth)]
                if not ok:
                    break
                choices.append(ok)
            else:
                yield from itertools.product(*choices)

    def rec(j: int) -> bool:
        """Return True if a system without sided intersection extends here."""
        if j == n:
            return True
        first = sets[0][j]
        rest_options = [[v for v in sets[i] if v not in used[i]] for i in range(1, k)]
        for tail in itertools.product(*rest_options):
            ends = (first,) + tail
            for sides in treks_for(ends):
                budget[0] -= 1
                if budget[0] < 0:
                    raise ResourceGuardError(
                        "k-trek system search", max_search, "max_search"
                    )
                for i in range(k):
                    used[i].add(ends[i])
                    occupied[i].update(sides[i])
                found = rec(j + 1)
                for i in range(k):
                    used[i].discard(ends[i])
                    occupied[i].difference_update(sides[i])
                if found:
                    return True
        return False

    return not rec(0)


# ---------------------------------------------------------------------------
# triangles
# ---------------------------------------------------------------------------
class Triangle(NamedTuple):
    x: int
    y: int
    z: int
    collider_at_y: bool


def is_collider(g: DirectedGraph, x: int, y: int, z: int) -> bool:
    """True iff ``x -> y <- z`` in ``g``."""
    return g.has_edge(x, y) and g.has_edge(z, y)


def find_triangles(g: DirectedGraph) -> list[Triangle]:
    """All pairwise-adjacent vertex triples, each once with ``x < y < z``.

    ``collider_at_y`` reports whether the middle vertex (in id order) is a
    collider of the other two.
    """
    adj = [set(g.parents(v)) | set(g.children(v)) for v in range(g.p)]
    out = []
    for x in range(g.p):
        for y in sorted(v for v in adj[x] if v > x):
            for z in sorted(v for v in adj[x] & adj[y] if v > y):
                out.append(Triangle(x, y, z, is_collider(g, x, y, z)))
    return out


# ---------------------------------------------------------------------------
# random graphs
# ---------------------------------------------------------------------------
def random_dag(
    p: int,
    expected_neighborhood_size: float,
    seed: Union[int, np.random.Generator],
    prefix: str = "X",
) -> DirectedGraph:
    """Random DAG with a given expected neighbourhood size.

    A vertex order is drawn uniformly at random and every forward pair
    becomes an edge with probability ``expected_neighborhood_size / (p - 1)``.

    Parameters
    ----------
    p : int
        Number of vertices (all observed, labelled ``X1..Xp``).
    expected_neighborhood_size : float
        Must lie in ``[0, p - 1]``.
    seed : int or numpy Generator
    """
    if p < 0:
        raise ValidationError("p must be non-negative")
    nb = float(expected_neighborhood_size)
    if p <= 1:
        if nb != 0:
            raise ValidationError("a graph with fewer than 2 vertices has no neighbours")
        prob = 0.0
    else:
        prob = nb / (p - 1)
    if not 0.0 <= prob <= 1.0 or not np.isfinite(prob):
        raise ValidationError(
            f"expected neighbourhood size {nb} outside [0, {max(p - 1, 0)}]"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(p)
    draws = rng.random((p, p))
    edges = []
    for i in range(p):
        for j in range(i + 1, p):
            if draws[i, j] < prob:
                edges.append((int(order[i]), int(order[j])))
    verts = [Vertex(i, f"{prefix}{i + 1}", OBSERVED) for i in range(p)]
    return DirectedGraph(verts, edges)
