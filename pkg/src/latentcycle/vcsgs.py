"""Very conservative SGS search, edge estimation and output-error classification.

The search starts from the complete undirected graph, removes every pair that
some conditioning set renders independent, classifies unshielded triples with
the all-subsets quantifiers, applies three orientation rules and finally
checks ambiguous triples against the Markov condition.

CI tests are plain callables ``ci(x, y, S) -> bool`` returning ``True`` for
independence; :func:`oracle_ci`, :func:`gaussian_ci` and :func:`nonparam_ci`
build the three supported backends.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from latentcycle.errors import LatentCycleError, ResourceGuardError, ValidationError
from latentcycle.graph_core import DirectedGraph, d_separated
from latentcycle.sem import Dataset, LinearSem
from latentcycle.stats_tests import (
    bins_per_axis,
    fisher_z_ci_test,
    histogram_estimate,
    l1_permutation_threshold,
)

UNDIRECTED = "undirected"
DIRECTED = "directed"
COLLIDER = "collider"
NONCOLLIDER = "noncollider"
AMBIGUOUS = "ambiguous"
APPARENT = "apparently_nonadjacent"
DEFINITE = "definitely_nonadjacent"

#: Default cap on the number of variables for the exhaustive subset loops.
MAX_VCSGS_VERTICES = 12
#: Cap on candidate orientations examined by the ambiguous-triple check.
MAX_EXTENSIONS = 100_000

CITest = Callable[[str, str, tuple], bool]


class CITestError(LatentCycleError):
    """A CI test failed; the message names the pair and conditioning set."""


# ---------------------------------------------------------------------------
# CI backends
# ---------------------------------------------------------------------------
def oracle_ci(graph: DirectedGraph) -> CITest:
    """d-separation in ``graph`` used as a perfect CI test."""

    def ci(x, y, S):
        return d_separated(graph, [x], [y], list(S))

    return ci


def gaussian_ci(data: Dataset, alpha: float = 0.01) -> CITest:
    def ci(x, y, S):
        return fisher_z_ci_test(data, x, y, list(S), alpha).independent

    return ci


def nonparam_ci(data: Dataset, alpha: float = 0.01, n_perm: int = 50, seed: int = 0) -> CITest:
    """Histogram L1 dependence against a within-cell permutation null."""

    def ci(x, y, S):
        return l1_permutation_threshold(data, x, y, list(S), alpha, n_perm, seed).independent

    return ci


class _CachedCI:
    def __init__(self, ci: CITest):
        self.ci = ci
        self.cache: dict = {}
        self.calls = 0

    def __call__(self, x: str, y: str, S: Iterable[str]) -> bool:
        a, b = sorted((x, y))
        key = (a, b, tuple(sorted(S)))
        if key not in self.cache:
            self.calls += 1
            try:
                self.cache[key] = bool(self.ci(a, b, key[2]))
            except Exception as exc:  # noqa: BLE001 - re-raised with context
                raise CITestError(f"CI test failed for ({a}, {b}) given {list(key[2])}: {exc}") from exc
        return self.cache[key]


# ---------------------------------------------------------------------------
# pattern graph
# ---------------------------------------------------------------------------
@dataclass
class PatternGraph:
    """Mixed graph returned by :func:`run_vcsgs`.

    Attributes
    ----------
    vertices : list of str
    undirected : set of frozenset
    directed : set of (str, str)
        ``(a, b)`` means ``a -> b``.
    triples : dict
        ``(x, y, z)`` with ``x < z`` maps to a collider/noncollider/ambiguous mark.
    nonadjacent : dict
        ``frozenset({a, b})`` maps to ``apparently_nonadjacent`` or
        ``definitely_nonadjacent``.
    """

    vertices: list
    undirected: set = field(default_factory=set)
    directed: set = field(default_factory=set)
    triples: dict = field(default_factory=dict)
    nonadjacent: dict = field(default_factory=dict)

    def adjacent(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.undirected or (a, b) in self.directed or (b, a) in self.directed

    def neighbors(self, v: str) -> list[str]:
        return [u for u in self.vertices if u != v and self.adjacent(u, v)]

    def is_undirected(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.undirected

    def is_directed(self, a: str, b: str) -> bool:
        return (a, b) in self.directed

    def orient(self, a: str, b: str) -> bool:
        """Turn ``a - b`` into ``a -> b``; returns whether anything changed."""
        key = frozenset((a, b))
        if key not in self.undirected:
            if (b, a) in self.directed:
                raise LatentCycleError(f"edge {a}-{b} already oriented the other way")
            return False
        self.undirected.discard(key)
        self.directed.add((a, b))
        return True

    def adjacencies(self) -> set:
        return set(self.undirected) | {frozenset(e) for e in self.directed}

    def mark(self, x: str, y: str, z: str) -> Optional[str]:
        a, c = sorted((x, z))
        return self.triples.get((a, y, c))

    def to_dict(self) -> dict:
        edges = [
            {"a": a, "b": b, "state": UNDIRECTED}
            for a, b in sorted(tuple(sorted(e)) for e in self.undirected)
        ]
        edges += [{"a": a, "b": b, "state": DIRECTED} for a, b in sorted(self.directed)]
        return {
            "vertices": list(self.vertices),
            "edges": edges,
            "triples": [
                {"x": x, "y": y, "z": z, "mark": m} for (x, y, z), m in sorted(self.triples.items())
            ],
            "nonadjacent": [
                {"a": a, "b": b, "mark": m}
                for (a, b), m in sorted((tuple(sorted(k)), v) for k, v in self.nonadjacent.items())
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "PatternGraph":
        h = cls(list(d["vertices"]))
        for e in d["edges"]:
            if e["state"] == UNDIRECTED:
                h.undirected.add(frozenset((e["a"], e["b"])))
            elif e["state"] == DIRECTED:
                h.directed.add((e["a"], e["b"]))
            else:
                raise ValidationError(f"unknown edge state {e['state']!r}")
        for t in d.get("triples", []):
            h.triples[(t["x"], t["y"], t["z"])] = t["mark"]
        for p in d.get("nonadjacent", []):
            h.nonadjacent[frozenset((p["a"], p["b"]))] = p["mark"]
        return h


def _subsets(items: Sequence[str]) -> Iterable[tuple]:
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


def unshielded_triples(h: PatternGraph) -> list[tuple[str, str, str]]:
    """``(x, y, z)`` with ``x < z``, both adjacent to ``y``, ``x`` and ``z`` not adjacent."""
    out = []
    for y in h.vertices:
        nb = sorted(h.neighbors(y))
        for x, z in itertools.combinations(nb, 2):
            if not h.adjacent(x, z):
                out.append((x, y, z))
    return out


# ---------------------------------------------------------------------------
# the search
# ---------------------------------------------------------------------------
def run_vcsgs(
    data: Optional[Dataset] = None,
    ci: Union[str, CITest] = "gaussian",
    alpha: float = 0.01,
    truth: Optional[DirectedGraph] = None,
    max_vertices: int = MAX_VCSGS_VERTICES,
    n_perm: int = 50,
    seed: int = 0,
    max_extensions: int = MAX_EXTENSIONS,
) -> PatternGraph:
    """Run the very conservative SGS search.

    Parameters
    ----------
    data : Dataset, optional
        Required unless ``ci`` is ``"oracle"`` or a callable.
    ci : {"gaussian", "nonparam", "oracle"} or callable
    alpha : float
    truth : DirectedGraph, optional
        Graph queried by the oracle backend.
    max_vertices : int
        Guard on the exponential subset loops.
    n_perm, seed : int
        Permutation settings for the nonparametric backend.
    max_extensions : int
        Cap for the ambiguous-triple Markov check.

    Returns
    -------
    PatternGraph
    """
    if callable(ci):
        if data is None and truth is None:
            raise ValidationError("need data or truth to know the variables")
        test = ci
    elif ci == "oracle":
        if truth is None:
            raise ValidationError("oracle mode needs the true graph")
        test = oracle_ci(truth)
    elif ci == "gaussian":
        test = gaussian_ci(_need(data), alpha)
    elif ci == "nonparam":
        test = nonparam_ci(_need(data), alpha, n_perm, seed)
    else:
        raise ValidationError(f"unknown CI mode {ci!r}")
    if data is not None:
        V = list(data.labels)
    else:
        V = [truth.label(v) for v in truth.observed]
    if len(V) < 2:
        raise ValidationError("need at least two variables")
    if len(V) > max_vertices:
        raise ResourceGuardError(f"VCSGS over {len(V)} variables", max_vertices, "max_vertices")
    cached = _CachedCI(test)

    h = PatternGraph(V)
    for x, y in itertools.combinations(V, 2):
        h.undirected.add(frozenset((x, y)))

    # adjacency removal
    for x, y in itertools.combinations(V, 2):
        rest = [v for v in V if v not in (x, y)]
        if any(cached(x, y, S) for S in _subsets(rest)):
            h.undirected.discard(frozenset((x, y)))
            h.nonadjacent[frozenset((x, y))] = APPARENT

    # triple classification
    colliders = []
    for x, y, z in unshielded_triples(h):
        rest_xz = [v for v in V if v not in (x, z, y)]
        with_y = all(not cached(x, z, S + (y,)) for S in _subsets(rest_xz))
        if with_y:
            h.triples[(x, y, z)] = COLLIDER
            colliders.append((x, y, z))
        elif all(not cached(x, z, S) for S in _subsets(rest_xz)):
            h.triples[(x, y, z)] = NONCOLLIDER
        else:
            h.triples[(x, y, z)] = AMBIGUOUS

    # collider orientation; an edge claimed in both directions stays undirected
    claims: dict = {}
    for x, y, z in colliders:
        for a in (x, z):
            claims.setdefault(frozenset((a, y)), set()).add((a, y))
    for key, dirs in sorted(claims.items(), key=lambda kv: sorted(kv[0])):
        if len(dirs) == 1:
            a, b = next(iter(dirs))
            h.orient(a, b)
    for x, y, z in colliders:
        if not (h.is_directed(x, y) and h.is_directed(z, y)):
            h.triples[(x, y, z)] = AMBIGUOUS

    apply_orientation_rules(h)
    _check_consistency(h)
    _ambiguous_markov_check(h, cached, max_extensions)
    return h


def _need(data):
    if data is None:
        raise ValidationError("this CI mode needs data")
    return data


def apply_orientation_rules(h: PatternGraph) -> int:
    """Apply the three orientation rules until nothing changes.

    Returns the number of edges oriented.
    """
    changed_total = 0
    while True:
        changed = 0
        # rule 1: X -> Y - Z with <X,Y,Z> a noncollider gives Y -> Z
        for x, y in sorted(h.directed):
            for z in sorted(h.neighbors(y)):
                if z != x and h.is_undirected(y, z) and h.mark(x, y, z) == NONCOLLIDER:
                    changed += h.orient(y, z)
        # rule 2: X -> Y -> Z with X - Z gives X -> Z
        for x, y in sorted(h.directed):
            for y2, z in sorted(h.directed):
                if y2 == y and z != x and h.is_undirected(x, z):
                    changed += h.orient(x, z)
        # rule 3: X -> Y <- Z, <X,W,Z> noncollider and W - Y gives W -> Y
        for (x, w, z), m in sorted(h.triples.items()):
            if m != NONCOLLIDER:
                continue
            for y in sorted(h.vertices):
                if (
                    y not in (x, w, z)
                    and h.is_directed(x, y)
                    and h.is_directed(z, y)
                    and h.is_undirected(w, y)
                ):
                    changed += h.orient(w, y)
        changed_total += changed
        if not changed:
            return changed_total


def _check_consistency(h: PatternGraph) -> None:
    for a, b in h.directed:
        if (b, a) in h.directed or frozenset((a, b)) in h.undirected:
            raise LatentCycleError(f"edge {a}-{b} has conflicting states")


def dag_extensions(
    h: PatternGraph, max_candidates: int = MAX_EXTENSIONS
) -> Optional[list[dict[str, set]]]:
    """All acyclic orientations of the undirected edges respecting the marks.

    Collider marks must stay colliders, noncollider marks must not become
    colliders, ambiguous triples are unconstrained. Returns ``None`` when more
    than ``max_candidates`` candidate orientations would be examined.

    Each extension maps a vertex to its parent set.
    """
    und = sorted(tuple(sorted(e)) for e in h.undirected)
    if 2 ** len(und) > max_candidates:
        return None
    out = []
    for bits in itertools.product((0, 1), repeat=len(und)):
        parents = {v: set() for v in h.vertices}
        for a, b in h.directed:
            parents[b].add(a)
        for (a, b), flip in zip(und, bits):
            if flip:
                parents[a].add(b)
            else:
                parents[b].add(a)
        if not _acyclic(parents):
            continue
        ok = True
        for (x, y, z), m in h.triples.items():
            coll = x in parents[y] and z in parents[y]
            if (m == COLLIDER and not coll) or (m == NONCOLLIDER and coll):
                ok = False
                break
        if ok:
            out.append(parents)
    return out


def _acyclic(parents: dict[str, set]) -> bool:
    indeg = {v: len(p) for v, p in parents.items()}
    kids: dict = {v: [] for v in parents}
    for v, ps in parents.items():
        for p in ps:
            kids[p].append(v)
    stack = [v for v, d in indeg.items() if d == 0]
    seen = 0
    while stack:
        v = stack.pop()
        seen += 1
        for c in kids[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                stack.append(c)
    return seen == len(parents)


def _descendants(parents: dict[str, set], v: str) -> set:
    kids: dict = {u: set() for u in parents}
    for u, ps in parents.items():
        for p in ps:
            kids[p].add(u)
    out, stack = set(), [v]
    while stack:
        u = stack.pop()
        for c in kids[u]:
            if c not in out:
                out.add(c)
                stack.append(c)
    return out


def markov_satisfied(parents: dict[str, set], ci: CITest) -> bool:
    """Local Markov condition: every vertex is independent of its non-descendant non-parents given its parents."""
    for v in sorted(parents):
        desc = _descendants(parents, v)
        for u in sorted(parents):
            if u == v or u in desc or u in parents[v]:
                continue
            if not ci(v, u, tuple(sorted(parents[v]))):
                return False
    return True


def _ambiguous_markov_check(h: PatternGraph, ci: CITest, max_extensions: int) -> None:
    if AMBIGUOUS not in h.triples.values():
        return
    exts = dag_extensions(h, max_extensions)
    if not exts:
        return  # cap exceeded or no consistent extension: leave everything apparent
    if all(markov_satisfied(p, ci) for p in exts):
        for key, mark in h.nonadjacent.items():
            if mark == APPARENT:
                h.nonadjacent[key] = DEFINITE


# ---------------------------------------------------------------------------
# edge estimation
# ---------------------------------------------------------------------------
@dataclass
class ConditionalTable:
    """Histogram estimate of ``p(y | pa(y))`` on the rescaled unit cube.

    ``density`` has shape ``(m,) * (1 + len(parents))`` with the ``y`` axis
    first; it holds conditional densities in rescaled units, so for every
    parent cell the values times the cell width ``1/m_y`` sum to one.
    Parent cells without data are NaN.
    """

    y: str
    parents: list
    bins: tuple
    density: np.ndarray

    def normalisation(self) -> np.ndarray:
        return np.nansum(self.density, axis=0) / self.bins[0]

    def to_dict(self) -> dict:
        return {
            "y": self.y,
            "parents": list(self.parents),
            "bins": list(self.bins),
            "density": [None if np.isnan(v) else float(v) for v in self.density.ravel()],
        }


@dataclass
class EstimatedModel:
    """Per-vertex conditional tables; ``None`` marks a table as Unknown."""

    vertices: list
    tables: dict
    lo: dict
    hi: dict
    reasons: dict = field(default_factory=dict)

    def is_unknown(self, v: str) -> bool:
        return self.tables.get(v) is None

    def to_dict(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "scale": {v: [self.lo[v], self.hi[v]] for v in self.vertices},
            "tables": {
                v: ("Unknown" if t is None else t.to_dict()) for v, t in self.tables.items()
            },
            "reasons": dict(self.reasons),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def conditional_table(data: Dataset, y: str, parents: Sequence[str], m: Optional[int] = None) -> ConditionalTable:
    """Histogram conditional density ``p(y | parents)`` as a joint over marginal ratio."""
    cols = [y] + list(parents)
    hist = histogram_estimate(data, cols, m)
    joint = hist.masses
    marg = joint.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(marg > 0, joint / np.where(marg > 0, marg, 1.0), np.nan) * hist.bins[0]
    return ConditionalTable(y, list(parents), hist.bins, dens)


def tv_violations(table: ConditionalTable, L: float) -> list[tuple]:
    """Adjacent parent cells whose conditional densities differ too much in L1.

    Cells ``c`` and ``c'`` one step apart along parent axis ``a`` violate
    smoothness when ``sum_y |p(y|c) - p(y|c')| / m_y > L / m_a``.
    """
    out = []
    dens = table.density
    my = table.bins[0]
    for ax in range(1, dens.ndim):
        ma = table.bins[ax]
        if ma < 2:
            continue
        a = np.take(dens, range(ma - 1), axis=ax)
        b = np.take(dens, range(1, ma), axis=ax)
        diff = np.abs(a - b).sum(axis=0) / my
        bad = np.argwhere(diff > L / ma)
        for idx in bad:
            out.append((ax, tuple(int(i) for i in idx)))
    return out


def edge_estimation(data: Dataset, H: PatternGraph, L: float = 2.0, m: Optional[int] = None) -> EstimatedModel:
    """Estimate ``p(y | pa(y))`` for every vertex whose incident edges are all oriented.

    Tables with an undirected incident edge, or whose estimate fails the
    TV smoothness check with constant ``L``, are marked Unknown.
    """
    if set(H.vertices) - set(data.labels):
        raise ValidationError("pattern and data have different variables")
    tables: dict = {}
    reasons: dict = {}
    X = data.values
    lo = {v: float(X[:, data.col(v)].min()) if data.n else 0.0 for v in H.vertices}
    hi = {v: float(X[:, data.col(v)].max()) if data.n else 0.0 for v in H.vertices}
    for y in H.vertices:
        if any(H.is_undirected(y, u) for u in H.neighbors(y)):
            tables[y] = None
            reasons[y] = "undirected incident edge"
            continue
        parents = sorted(a for a, b in H.directed if b == y)
        t = conditional_table(data, y, parents, m)
        if parents and tv_violations(t, L):
            tables[y] = None
            reasons[y] = "violates TV smoothness"
            continue
        tables[y] = t
    return EstimatedModel(list(H.vertices), tables, lo, hi, reasons)


def _sem_cell_density(
    sem: LinearSem, y: str, y_edges: np.ndarray, pa_values: dict[str, float]
) -> np.ndarray:
    """Average true conditional density of ``y`` on each cell, in rescaled units."""
    g = sem.graph
    yi = g.id(y)
    mu = sum(sem.coefficients[g.id(p), yi] * v for p, v in pa_values.items())
    F = sem.noise[yi].cdf(y_edges - mu)
    return np.diff(F) * (len(y_edges) - 1)


def conditional_probability_distance(M1: EstimatedModel, M2: Union[LinearSem, EstimatedModel]) -> float:
    """Largest cell-wise gap between estimated and true conditional densities.

    Unknown tables contribute zero. When ``M2`` is a DAG-shaped linear SEM,
    its conditional density given the true parents is the shifted noise
    density; it is averaged over each ``y`` cell and evaluated at the centres
    of the parent cells (extra true parents range over their cell centres).
    """
    if isinstance(M2, EstimatedModel):
        if set(M1.vertices) != set(M2.vertices):
            raise ValidationError("models are over different variables")
        best = 0.0
        for v in M1.vertices:
            t1, t2 = M1.tables.get(v), M2.tables.get(v)
            if t1 is None or t2 is None:
                continue
            if t1.parents != t2.parents or t1.bins != t2.bins:
                raise ValidationError(f"tables for {v} are on different grids")
            with np.errstate(invalid="ignore"):
                gap = np.nanmax(np.abs(t1.density - t2.density)) if t1.density.size else 0.0
            best = max(best, 0.0 if np.isnan(gap) else float(gap))
        return best
    g = M2.graph
    if set(M1.vertices) - set(g.labels):
        raise ValidationError("models are over different variables")
    best = 0.0
    for v in M1.vertices:
        t = M1.tables.get(v)
        if t is None:
            continue
        true_pa = [g.label(p) for p in g.parents(v)]
        if not set(t.parents) <= set(true_pa):
            raise ValidationError(f"estimated parents of {v} are not a subset of the true parents")
        extra = [p for p in true_pa if p not in t.parents]
        my = t.bins[0]
        y_edges = M1.lo[v] + (M1.hi[v] - M1.lo[v]) * np.linspace(0.0, 1.0, my + 1)

        def centres(u: str, mb: int) -> np.ndarray:
            return M1.lo[u] + (M1.hi[u] - M1.lo[u]) * (np.arange(mb) + 0.5) / mb

        pa_grid = [centres(p, b) for p, b in zip(t.parents, t.bins[1:])]
        extra_grid = [centres(p, my) for p in extra]
        for cell in itertools.product(*[range(len(c)) for c in pa_grid]):
            est = t.density[(slice(None),) + cell]
            if np.any(np.isnan(est)):
                continue
            base = {p: pa_grid[i][c] for i, (p, c) in enumerate(zip(t.parents, cell))}
            for ex in itertools.product(*extra_grid):
                vals = dict(base)
                vals.update(zip(extra, ex))
                truth = _sem_cell_density(M2, v, y_edges, vals)
                best = max(best, float(np.max(np.abs(est - truth))))
    return best


# ---------------------------------------------------------------------------
# error taxonomy
# ---------------------------------------------------------------------------
@dataclass
class ErrorReport:
    kind1: bool
    kind2: bool
    kind3: bool
    missing_edges: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def classify_errors(H: PatternGraph, truth: DirectedGraph) -> ErrorReport:
    """Classify the mistakes of ``H`` against a fully observed true DAG.

    Kind I is an extra adjacency. Kind II needs every adjacency to be right
    but some marked noncollider is a collider in the truth. Kind III needs
    adjacencies and noncolliders right but some orientation wrong. Missing
    edges are counted and never make the output wrong.
    """
    labels = set(truth.labels)
    if set(H.vertices) != labels:
        raise ValidationError("pattern and truth have different vertex sets")
    true_adj = {frozenset((truth.label(a), truth.label(b))) for a, b in truth.edges}
    est_adj = H.adjacencies()
    kind1 = bool(est_adj - true_adj)
    missing = len(true_adj - est_adj)
    kind2 = False
    if not kind1:
        for (x, y, z), m in H.triples.items():
            if m == NONCOLLIDER and truth.has_edge(x, y) and truth.has_edge(z, y):
                kind2 = True
                break
    kind3 = False
    if not kind1 and not kind2:
        kind3 = any(truth.has_edge(b, a) for a, b in H.directed)
    return ErrorReport(kind1, kind2, kind3, missing)
