"""Clusters, causal order and block cycles among latent variables.

The pipeline works on observed labels only and asks a *backend* three
questions:

``rank(A, B)``
    the rank of the cross-covariance of two observed sets,
``gin(Z, Y)``
    whether ``(Z, Y)`` satisfies the GIN condition,
``projected_independent(Z, Y, W)``
    whether ``omega^T Y`` is independent of ``W`` for a generic ``omega``
    orthogonal to ``Cov(Y, Z)``.

Three backends answer them: :class:`GraphOracle` (graph criteria on a known
graph), :class:`PopulationBackend` (exact answers from a linear SEM) and
:class:`SampleBackend` (statistical tests on data).

The stages are

1. :func:`find_causal_cyclic_clusters` groups observed variables that share
   latent parents and flags the clusters whose children feed back into them.
2. :func:`learn_latent_causal_order` peels off root clusters with the GIN
   ruler test; :func:`learn_order_between_latents` handles strata in which no
   single cluster is a root.
3. :func:`learn_order_for_cyclic_clusters` places cyclic clusters relative to
   the acyclic ones.
4. :func:`find_cycles_between_blocks` splits a stratum into groups of blocks
   that sit on a common cycle.

:func:`discover` runs all of them. :func:`true_structure` extracts the same
kind of result from a graph, and :func:`evaluate` compares the two.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from latentcycle.errors import ResourceGuardError, ValidationError
from latentcycle.graph_core import DirectedGraph, min_b_side_choke, min_tsep_size
from latentcycle.sem import Dataset, LinearSem, generic_sem, implied_covariance
from latentcycle.stats_tests import estimate_rank, gin_test, hsic_independence_test

#: Largest cluster size tried by the rank search, i.e. ``k + 1 <= 5``.
MAX_CLUSTER_K = 4
#: Cap on the observed variables searched for clusters.
MAX_OBSERVED = 24
#: Largest number of blocks in one stratum for the bipartition search.
MAX_STRATUM_BLOCKS = 10


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------
class Backend(Protocol):
    def rank(self, A: Sequence[str], B: Sequence[str]) -> int: ...

    def gin(self, Z: Sequence[str], Y: Sequence[str]) -> bool: ...

    def projected_independent(
        self, Z: Sequence[str], Y: Sequence[str], W: Sequence[str]
    ) -> bool: ...


def _key(*sets: Iterable[str]) -> tuple:
    return tuple(tuple(sorted(s)) for s in sets)


class _Cached:
    """Memoise backend answers on the sorted argument sets."""

    def __init__(self, backend):
        self.backend = backend
        self._cache: dict = {}
        self.calls = 0

    def _get(self, name, fn, *sets):
        key = (name,) + _key(*sets)
        if key not in self._cache:
            self.calls += 1
            self._cache[key] = fn(*[list(s) for s in sets])
        return self._cache[key]

    def rank(self, A, B) -> int:
        a, b = _key(A, B)
        if b < a:  # rank is symmetric in the two sets
            A, B = B, A
        return self._get("rank", self.backend.rank, A, B)

    def gin(self, Z, Y) -> bool:
        return self._get("gin", self.backend.gin, Z, Y)

    def projected_independent(self, Z, Y, W) -> bool:
        return self._get("proj", self.backend.projected_independent, Z, Y, W)


class PopulationBackend:
    """Exact answers from the population moments of a linear non-Gaussian SEM.

    Independence of two linear combinations of the noises is decided by
    Darmois-Skitovich: they are dependent iff some non-Gaussian noise loads
    on both.

    Parameters
    ----------
    sem : LinearSem
    rel_tol : float
        Singular values below ``rel_tol * sigma_max`` count as zero; loadings
        below ``rel_tol`` times the largest loading count as zero.
    seed : int
        Seeds the generic combination used by :meth:`projected_independent`.
    """

    def __init__(self, sem: LinearSem, rel_tol: float = 1e-9, seed: int = 0):
        self.sem = sem
        self.rel_tol = rel_tol
        self.cov = implied_covariance(sem)
        self.M = np.asarray(sem.mixing)
        self._nongauss = np.array([not nz.is_gaussian for nz in sem.noise])
        self._rng = np.random.default_rng(seed)
        self._ids = {lab: i for i, lab in enumerate(sem.graph.labels)}

    def _idx(self, labels) -> list[int]:
        try:
            return [self._ids[str(v)] for v in labels]
        except KeyError as e:
            raise ValidationError(f"unknown variable {e.args[0]!r}") from None

    def _rank_of(self, m: np.ndarray, scale: Optional[float] = None) -> int:
        """Numerical rank; singular values are compared with ``scale`` (default: the largest)."""
        if m.size == 0:
            return 0
        s = np.linalg.svd(m, compute_uv=False)
        ref = s[0] if scale is None else scale
        if ref <= 0:
            return 0
        return int(np.sum(s > self.rel_tol * ref))

    def rank(self, A, B) -> int:
        return self._rank_of(self.cov[np.ix_(self._idx(A), self._idx(B))])

    def _null_basis(self, Z, Y) -> np.ndarray:
        """Columns span the left null space of ``Cov(Y, Z)``."""
        yi, zi = self._idx(Y), self._idx(Z)
        if not zi:
            return np.eye(len(yi))
        cross = self.cov[np.ix_(yi, zi)]
        U, s, _ = np.linalg.svd(cross, full_matrices=True)
        r = self._rank_of(cross)
        return U[:, r:]

    def _shared_noise(self, load: np.ndarray, other: np.ndarray) -> bool:
        """True iff a non-Gaussian noise has nonzero weight in ``load`` and in ``other``."""
        scale = max(float(np.max(np.abs(self.M))), 1.0)
        tol = self.rel_tol * scale * 1e3
        a = np.abs(load) > tol * max(1.0, float(np.max(np.abs(load), initial=0.0)))
        b = np.any(np.abs(other) > tol, axis=1) if other.ndim == 2 else np.abs(other) > tol
        return bool(np.any(a & b & self._nongauss))

    def gin(self, Z, Y) -> bool:
        """Whether some ``omega`` in the null space makes ``omega^T Y`` independent of ``Z``."""
        if not Z:
            return True
        N = self._null_basis(Z, Y)
        if N.shape[1] == 0:
            return False
        yi, zi = self._idx(Y), self._idx(Z)
        MZ = self.M[:, zi]
        shared = self._nongauss & np.any(np.abs(MZ) > self.rel_tol * np.max(np.abs(self.M)), axis=1)
        if not shared.any():
            return True
        MY = self.M[np.ix_(np.flatnonzero(shared), yi)]
        K = MY @ N
        scale = float(np.linalg.norm(MY, 2)) * 1e3
        return self._rank_of(K, scale) < N.shape[1]

    def projected_independent(self, Z, Y, W) -> bool:
        N = self._null_basis(Z, Y)
        if N.shape[1] == 0:
            return False
        omega = N @ self._rng.standard_normal(N.shape[1])
        load = self.M[:, self._idx(Y)] @ omega
        return not self._shared_noise(load, self.M[:, self._idx(W)])


class GraphOracle:
    """Graph-criterion answers on a known graph.

    ``rank`` is the minimum t-separating choke-set size, ``gin`` holds iff the
    smallest B-side choke set between ``Z`` and ``Y`` is smaller than
    ``|Y|``. The projected-independence question has no purely graphical
    criterion here, so it is answered by a :class:`PopulationBackend` on a
    generic non-Gaussian SEM over the same graph.
    """

    def __init__(self, graph: DirectedGraph, seed: int = 0):
        self.graph = graph
        self.seed = seed
        self._population: Optional[PopulationBackend] = None

    def rank(self, A, B) -> int:
        return int(min_tsep_size(self.graph, A, B))

    def gin(self, Z, Y) -> bool:
        if not Z:
            return True
        return min_b_side_choke(self.graph, Z, Y) < len(Y)

    def projected_independent(self, Z, Y, W) -> bool:
        if self._population is None:
            self._population = PopulationBackend(generic_sem(self.graph, self.seed), seed=self.seed)
        return self._population.projected_independent(Z, Y, W)


class SampleBackend:
    """Statistical answers from data.

    Parameters
    ----------
    data : Dataset
    alpha : float
        Level of the rank tests.
    gin_alpha : float
        Level of the HSIC tests behind GIN and projected independence.
    n_perm : int
        Permutations per HSIC test.
    seed : int
    """

    def __init__(
        self,
        data: Dataset,
        alpha: float = 0.01,
        gin_alpha: float = 0.05,
        n_perm: int = 200,
        seed: int = 0,
    ):
        self.data = data
        self.alpha = alpha
        self.gin_alpha = gin_alpha
        self.n_perm = n_perm
        self.seed = seed

    def rank(self, A, B) -> int:
        return estimate_rank(self.data, list(A), list(B), alpha=self.alpha)

    def gin(self, Z, Y) -> bool:
        if not Z:
            return True
        if len(Y) < 2:
            return False
        res, _ = gin_test(self.data, list(Z), list(Y), self.gin_alpha, self.seed, self.n_perm)
        return res.independent

    def projected_independent(self, Z, Y, W) -> bool:
        Ym = self.data.values[:, self.data.cols(Y)]
        Ym = Ym - Ym.mean(axis=0)
        if Z:
            Zm = self.data.values[:, self.data.cols(Z)]
            Zm = Zm - Zm.mean(axis=0)
            cross = Ym.T @ Zm / len(Ym)
            U, s, _ = np.linalg.svd(cross, full_matrices=True)
            # the directions least correlated with Z; as many as the rank deficit allows
            r = estimate_rank(self.data, list(Y), list(Z), alpha=self.alpha)
            N = U[:, r:] if r < U.shape[1] else U[:, -1:]
        else:
            N = np.eye(len(Y))
        omega = N @ np.random.default_rng(self.seed).standard_normal(N.shape[1])
        Wm = self.data.values[:, self.data.cols(W)]
        res = hsic_independence_test(Ym @ omega, Wm, self.gin_alpha, self.n_perm, self.seed)
        return res.independent


# ---------------------------------------------------------------------------
# result types
# ---------------------------------------------------------------------------
@dataclass
class CausalCluster:
    """Observed variables that share the same latent parents.

    Attributes
    ----------
    members : tuple of str
    latent_count : int
        Number of latent parents.
    cyclic : bool
        True when the children also feed back into their latent parents.
    provenance : str
        Which check produced the latent count or the cyclic flag:
        ``"rank"`` for the cluster search, ``"gin"`` for the GIN cycle check
        and ``"rank_cycle"`` for the rank check on the last stratum.
    name : str
        Short identifier such as ``"c1"``; the latent block is ``L(c1)``.
    feedback : tuple of str
        Members with an edge into a latent parent, when known (ground truth
        only). Empty means "all members" for a cyclic cluster.
    """

    members: tuple[str, ...]
    latent_count: int
    cyclic: bool = False
    provenance: str = "rank"
    name: str = ""
    feedback: tuple[str, ...] = ()

    @property
    def block(self) -> str:
        return f"L({self.name})"

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "members": list(self.members),
            "latents": self.latent_count,
            "cyclic": self.cyclic,
            "provenance": self.provenance,
        }
        if self.feedback:
            d["feedback"] = list(self.feedback)
        return d


@dataclass
class PartialCausalOrder:
    """A strict partial order over clusters plus groups of blocks on a cycle.

    ``precedes`` holds pairs of cluster names and is transitively closed.
    ``strata`` is a readable layering consistent with it; clusters in the
    same stratum are not claimed to be ordered.
    """

    strata: list[list[str]]
    precedes: set[tuple[str, str]] = field(default_factory=set)
    block_cycles: list[list[str]] = field(default_factory=list)

    def before(self, a: str, b: str) -> bool:
        return (a, b) in self.precedes and (b, a) not in self.precedes


@dataclass
class DiscoveryResult:
    clusters: list[CausalCluster]
    order: PartialCausalOrder

    def cluster(self, name: str) -> CausalCluster:
        for c in self.clusters:
            if c.name == name:
                return c
        raise KeyError(name)

    def ordered_pairs(self) -> set[tuple[str, str]]:
        """Ordered observed pairs ``(x, y)`` whose clusters are strictly ordered."""
        out = set()
        for a, b in self.order.precedes:
            if not self.order.before(a, b):
                continue
            for x in self.cluster(a).members:
                for y in self.cluster(b).members:
                    out.add((x, y))
        return out

    def to_dict(self) -> dict:
        by_name = {c.name: c for c in self.clusters}
        return {
            "clusters": [c.to_dict() for c in self.clusters],
            "order": [[by_name[n].block for n in s] for s in self.order.strata],
            "precedes": sorted([by_name[a].block, by_name[b].block] for a, b in self.order.precedes),
            "block_cycles": [[by_name[n].block for n in g] for g in self.order.block_cycles],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscoveryResult":
        clusters = []
        for i, c in enumerate(d["clusters"]):
            clusters.append(
                CausalCluster(
                    tuple(map(str, c["members"])),
                    int(c.get("latents", 1)),
                    bool(c.get("cyclic", False)),
                    c.get("provenance", "file"),
                    c.get("name", f"c{i + 1}"),
                    tuple(map(str, c.get("feedback", ()))),
                )
            )
        block_to_name = {c.block: c.name for c in clusters}

        def name(ref: str) -> str:
            if ref in block_to_name:
                return block_to_name[ref]
            if any(c.name == ref for c in clusters):
                return ref
            raise ValidationError(f"order refers to unknown block {ref!r}")

        strata = [[name(r) for r in s] for s in d.get("order", [])]
        if "precedes" in d:
            rel = {(name(a), name(b)) for a, b in d["precedes"]}
        else:
            rel = _strata_relation(strata)
        cycles = [[name(r) for r in g] for g in d.get("block_cycles", [])]
        return cls(clusters, PartialCausalOrder(strata, _closure(rel), cycles))

    @classmethod
    def from_json(cls, text: str) -> "DiscoveryResult":
        return cls.from_dict(json.loads(text))


def _strata_relation(strata: Sequence[Sequence[str]]) -> set[tuple[str, str]]:
    rel = set()
    for i, s in enumerate(strata):
        for t in strata[i + 1 :]:
            rel.update((a, b) for a in s for b in t)
    return rel


def _closure(rel: Iterable[tuple[str, str]]) -> set[tuple[str, str]]:
    rel = set(rel)
    succ: dict[str, set[str]] = {}
    for a, b in rel:
        succ.setdefault(a, set()).add(b)
    out = set()
    for a in list(succ):
        stack, seen = list(succ[a]), set()
        while stack:
            b = stack.pop()
            if b in seen:
                continue
            seen.add(b)
            stack.extend(succ.get(b, ()))
        out.update((a, b) for b in seen if b != a)
    return out


# ---------------------------------------------------------------------------
# clusters
# ---------------------------------------------------------------------------
def _merge_overlapping(sets: list[set[str]]) -> list[set[str]]:
    merged: list[set[str]] = []
    for s in sets:
        s = set(s)
        keep = []
        for m in merged:
            if m & s:
                s |= m
            else:
                keep.append(m)
        merged = keep + [s]
    return merged


LATENT_RULES = ("floor", "ceil")


def _cyclic_latent_count(backend, members: Sequence[str], rule: str = "floor") -> int:
    """Latent count of a cyclic cluster from the ranks inside it.

    Inside a cyclic cluster every latent blocks treks on both sides, so the
    largest rank ``r`` of ``Sigma_{S'', S - S''}`` over splits of the cluster
    is twice the latent count when the parts are large enough. ``rule``
    picks how ``r / 2`` becomes an integer: ``"ceil"`` rounds up,
    ``"floor"`` rounds down. The result is never below one.
    """
    if rule not in LATENT_RULES:
        raise ValidationError(f"unknown latent-count rule {rule!r}; use one of {LATENT_RULES}")
    best = 0
    m = list(members)
    for size in range(1, len(m) // 2 + 1):
        for part in itertools.combinations(m, size):
            other = [x for x in m if x not in part]
            best = max(best, backend.rank(part, other))
    half = -(-best // 2) if rule == "ceil" else best // 2
    return max(1, half)


def find_causal_cyclic_clusters(
    backend,
    observed: Sequence[str],
    max_k: int = MAX_CLUSTER_K,
    latent_rule: str = "floor",
    max_observed: int = MAX_OBSERVED,
) -> list[CausalCluster]:
    """Group observed variables by shared latent parents and flag cyclic groups.

    For ``k = 1, 2, ...`` every ``(k+1)``-subset ``S`` of the still unclustered
    variables whose cross-covariance with all other observed variables has
    rank at most ``k`` is kept; overlapping subsets are merged and given
    ``k`` latents. A cluster whose members fail GIN against the rest has
    children that drive observed descendants through the latents, so it is
    marked cyclic and its latent count is recomputed by
    :func:`_cyclic_latent_count`.

    Parameters
    ----------
    backend
        Anything with ``rank`` and ``gin`` methods.
    observed : sequence of str
    max_k : int
        Largest ``k`` tried.
    latent_rule : {"floor", "ceil"}
        Rounding used by :func:`_cyclic_latent_count`.
    max_observed : int
        Guard on the subset enumeration, which grows as ``C(|V|, k+1)``.

    Returns
    -------
    list of CausalCluster
        Named ``c1, c2, ...`` in the order found.
    """
    observed = [str(x) for x in observed]
    if len(set(observed)) != len(observed):
        raise ValidationError("observed labels must be unique")
    if len(observed) > max_observed:
        raise ResourceGuardError(f"cluster search over {len(observed)} variables", max_observed, "max_observed")
    backend = backend if isinstance(backend, _Cached) else _Cached(backend)
    active = list(observed)
    clusters: list[CausalCluster] = []
    k = 1
    while k <= max_k and len(active) >= k + 1 and len(observed) - (k + 1) >= k + 1:
        found = []
        for S in itertools.combinations(active, k + 1):
            rest = [x for x in observed if x not in S]
            if backend.rank(S, rest) <= k:
                found.append(set(S))
        for group in _merge_overlapping(found):
            members = tuple(x for x in observed if x in group)
            clusters.append(CausalCluster(members, k, False, "rank"))
        done = set().union(*found) if found else set()
        active = [x for x in active if x not in done]
        k += 1
    for c in clusters:
        rest = [x for x in observed if x not in c.members]
        if rest and not backend.gin(rest, c.members):
            c.cyclic = True
            c.latent_count = _cyclic_latent_count(backend, c.members, latent_rule)
            c.provenance = "gin"
    for i, c in enumerate(clusters):
        c.name = f"c{i + 1}"
    return clusters


# ---------------------------------------------------------------------------
# causal order
# ---------------------------------------------------------------------------
def _eligible(parts: Sequence[CausalCluster]) -> bool:
    return all(len(c.members) >= 2 * c.latent_count for c in parts)


def ruler_test(
    backend,
    R: Sequence[CausalCluster],
    T: Sequence[CausalCluster],
    K: Optional[CausalCluster],
) -> bool:
    """GIN test that ``R`` is a root among the clusters not in ``T``.

    Each part ``c`` of ``R`` puts its first ``d = c.latent_count`` children
    in ``Y`` and the next ``d`` in ``Z``. Each earlier cluster in ``T`` does
    the same in the opposite roles, which removes its influence. ``K``
    contributes its first ``latent_count`` children to ``Y``. When ``K`` is
    cyclic a passing test places ``K`` after ``R``.
    """
    Z: list[str] = []
    Y: list[str] = []
    for c in R:
        d = c.latent_count
        Y += c.members[:d]
        Z += c.members[d : 2 * d]
    for t in T:
        d = t.latent_count
        Z += t.members[:d]
        Y += t.members[d : 2 * d]
    if K is not None:
        Y += K.members[: K.latent_count]
    return backend.gin(Z, Y)


def _is_root(backend, R, T, others) -> bool:
    if not _eligible(R):
        return False
    if not others:
        return ruler_test(backend, R, T, None)
    return all(ruler_test(backend, R, T, K) for K in others)


def learn_order_between_latents(
    backend,
    remaining: Sequence[CausalCluster],
    T: Sequence[CausalCluster],
) -> list[CausalCluster]:
    """Joint roots when no single cluster is a root.

    For ``k = 2, 3, ...`` a ``k``-subset of ``remaining`` is a joint root when
    its union, treated as one cluster, passes the ruler test against every
    other remaining cluster. The first ``k`` with any passing subset wins and
    the union of all passing subsets is returned. If none passes, all of
    ``remaining`` is returned.
    """
    remaining = list(remaining)
    for k in range(2, len(remaining) + 1):
        passing: list[CausalCluster] = []
        for sub in itertools.combinations(remaining, k):
            others = [c for c in remaining if c not in sub]
            if _is_root(backend, sub, T, others):
                passing += [c for c in sub if c not in passing]
        if passing:
            return [c for c in remaining if c in passing]
    return remaining


def find_cycles_between_blocks(
    backend,
    blocks: Sequence[CausalCluster],
    earlier: Sequence[CausalCluster],
    max_blocks: int = MAX_STRATUM_BLOCKS,
) -> list[list[str]]:
    """Groups of blocks in one stratum that lie on a common block cycle.

    Every bipartition ``(Ca, Cb)`` of ``blocks`` that passes the rank
    precondition ``rank(Sigma_{X^B, X^Ca + X^Cb}) < min(|L_Ca|, |L_Cb|)`` is
    tested in both directions: project the children of one side onto the
    directions orthogonal to their covariance with the earlier children
    ``X^B`` and test independence from the other side. Dependence both ways
    marks the bipartition as crossing a cycle; otherwise no cycle crosses it
    and both halves are searched recursively. Crossing bipartitions are
    refined by every non-crossing one found at the same level.

    Without earlier clusters there is nothing to project out, common causes
    cannot be told apart from cycles, and no groups are returned.

    Returns
    -------
    list of list of str
        Cluster names, one list per group, overlapping groups merged.
    """
    blocks = list(blocks)
    if len(blocks) > max_blocks:
        raise ResourceGuardError(f"bipartitions of {len(blocks)} blocks", max_blocks, "max_blocks")
    if not earlier or len(blocks) < 2:
        return []
    XB = [x for c in earlier for x in c.members]
    memo: dict[frozenset, set[frozenset]] = {}

    def children(part) -> list[str]:
        return [x for c in part for x in c.members]

    def latents(part) -> int:
        return sum(c.latent_count for c in part)

    def search(group: tuple[CausalCluster, ...]) -> set[frozenset]:
        key = frozenset(c.name for c in group)
        if key in memo:
            return memo[key]
        crossing, split = [], []
        first, rest = group[0], group[1:]
        for size in range(0, len(rest)):
            for extra in itertools.combinations(rest, size):
                Ca = (first,) + extra
                Cb = tuple(c for c in rest if c not in extra)
                Xa, Xb = children(Ca), children(Cb)
                if backend.rank(XB, Xa + Xb) >= min(latents(Ca), latents(Cb)):
                    continue
                dep_ab = not backend.projected_independent(XB, Xa, Xb)
                dep_ba = not backend.projected_independent(XB, Xb, Xa)
                if dep_ab and dep_ba:
                    crossing.append(({c.name for c in Ca}, {c.name for c in Cb}))
                else:
                    split.append((Ca, Cb))
        pairs = crossing
        for P, Q in split:
            refined = []
            for a, b in pairs:
                for side in ({c.name for c in P}, {c.name for c in Q}):
                    if a & side and b & side:
                        refined.append((a & side, b & side))
            pairs = refined
        out = {frozenset(a | b) for a, b in pairs}
        for P, Q in split:
            if len(P) > 1:
                out |= search(P)
            if len(Q) > 1:
                out |= search(Q)
        memo[key] = out
        return out

    groups = [set(g) for g in search(tuple(blocks))]
    order = [c.name for c in blocks]
    return [sorted(g, key=order.index) for g in _merge_overlapping(groups)]


def learn_latent_causal_order(
    backend,
    clusters: Sequence[CausalCluster],
    blocks: bool = True,
    max_blocks: int = MAX_STRATUM_BLOCKS,
) -> tuple[list[list[CausalCluster]], list[list[str]]]:
    """Order the acyclic clusters into strata of roots.

    At each step the clusters that pass the ruler test against all other
    remaining clusters form the next stratum. With ``blocks=True`` a step
    without any single root falls back to
    :func:`learn_order_between_latents` and every stratum with more than one
    cluster is searched for block cycles. Otherwise the remaining clusters are
    tied. A lone remaining cluster is the last stratum. Clusters with fewer
    than ``2 * latent_count`` children are never tested as roots but still act
    as the ``K`` of other tests.

    Returns
    -------
    strata : list of list of CausalCluster
    block_cycles : list of list of str
    """
    remaining = [c for c in clusters if not c.cyclic]
    T: list[CausalCluster] = []
    strata: list[list[CausalCluster]] = []
    cycles: list[list[str]] = []
    while remaining:
        if len(remaining) == 1:
            stratum = list(remaining)
        else:
            stratum = [
                c
                for c in remaining
                if _is_root(backend, [c], T, [k for k in remaining if k is not c])
            ]
            if not stratum:
                stratum = learn_order_between_latents(backend, remaining, T) if blocks else list(remaining)
            if blocks and len(stratum) > 1:
                cycles += find_cycles_between_blocks(backend, stratum, T, max_blocks)
        strata.append(stratum)
        T += stratum
        remaining = [c for c in remaining if c not in stratum]
    return strata, cycles


def learn_order_for_cyclic_clusters(
    backend,
    observed: Sequence[str],
    clusters: Sequence[CausalCluster],
    strata: list[list[CausalCluster]],
    latent_rule: str = "floor",
) -> set[tuple[str, str]]:
    """Mark late cyclic clusters and place every cyclic cluster.

    A cluster in the last stratum whose rank against all other observed
    variables is below its latent count has children that feed back into the
    latents without reaching anything else; it becomes cyclic and leaves the
    strata. Each cyclic cluster ``S`` is then placed after every acyclic
    cluster ``R`` for which the ruler test with ``K = S`` passes, using the
    strata before ``R`` as ``T``. Finally, for two clusters ``S`` (cyclic)
    and ``C``, ``S`` precedes ``C`` when GIN fails for ``(C, S)`` and holds
    for ``(S, C)``.

    ``strata`` is modified in place.

    Returns
    -------
    set of (str, str)
        Pairs of cluster names, not yet transitively closed.
    """
    if strata:
        last = strata[-1]
        for c in list(last):
            rest = [x for x in observed if x not in c.members]
            if rest and backend.rank(c.members, rest) < c.latent_count:
                c.cyclic = True
                c.latent_count = _cyclic_latent_count(backend, c.members, latent_rule)
                c.provenance = "rank_cycle"
                last.remove(c)
        if not last:
            strata.pop()
    rel = _strata_relation([[c.name for c in s] for s in strata])
    cyclic = [c for c in clusters if c.cyclic]
    for S in cyclic:
        for i in range(len(strata) - 1, -1, -1):
            T = [c for s in strata[:i] for c in s]
            for R in strata[i]:
                if _eligible([R]) and ruler_test(backend, [R], T, S):
                    rel.add((R.name, S.name))
    for S in cyclic:
        for C in clusters:
            if C is S:
                continue
            if not backend.gin(C.members, S.members) and backend.gin(S.members, C.members):
                rel.add((S.name, C.name))
    return rel


def _layers(names: Sequence[str], rel: set[tuple[str, str]], cycles) -> list[list[str]]:
    """Longest-path layering of a strict order, for display."""
    depth = {n: 0 for n in names}
    strict = {(a, b) for a, b in rel if (b, a) not in rel}
    for _ in range(len(names)):
        changed = False
        for a, b in strict:
            if depth[b] < depth[a] + 1:
                depth[b] = depth[a] + 1
                changed = True
        if not changed:
            break
    out: list[list[str]] = [[] for _ in range(max(depth.values(), default=-1) + 1)]
    for n in names:
        out[depth[n]].append(n)
    return out


def discover(
    backend,
    observed: Sequence[str],
    mode: str = "blocks",
    max_k: int = MAX_CLUSTER_K,
    latent_rule: str = "floor",
    max_blocks: int = MAX_STRATUM_BLOCKS,
    max_observed: int = MAX_OBSERVED,
) -> DiscoveryResult:
    """Run the whole pipeline.

    Parameters
    ----------
    backend : GraphOracle, PopulationBackend or SampleBackend
    observed : sequence of str
    mode : {"blocks", "cgin"}
        ``"cgin"`` skips the joint-root and block-cycle search; strata without
        a single root are tied.
    max_k : int
    latent_rule : {"floor", "ceil"}
        Rounding of half the largest within-cluster rank for cyclic clusters.
    max_blocks : int
        Cap on the clusters in one stratum searched for block cycles.
    max_observed : int
        Cap on the observed variables in the cluster search.

    Returns
    -------
    DiscoveryResult
    """
    if mode not in ("blocks", "cgin"):
        raise ValidationError(f"unknown discovery mode {mode!r}")
    observed = [str(x) for x in observed]
    cached = backend if isinstance(backend, _Cached) else _Cached(backend)
    clusters = find_causal_cyclic_clusters(cached, observed, max_k, latent_rule, max_observed)
    strata, cycles = learn_latent_causal_order(
        cached, clusters, blocks=(mode == "blocks"), max_blocks=max_blocks
    )
    rel = learn_order_for_cyclic_clusters(cached, observed, clusters, strata, latent_rule)
    rel = _closure(rel)
    names = [c.name for c in clusters]
    order = PartialCausalOrder(_layers(names, rel, cycles), rel, cycles)
    return DiscoveryResult(clusters, order)


# ---------------------------------------------------------------------------
# ground truth and metrics
# ---------------------------------------------------------------------------
def true_structure(graph: DirectedGraph) -> DiscoveryResult:
    """Clusters, order and block cycles read off a graph.

    Observed vertices are grouped by their set of latent parents. A member
    with an edge into one of those latents is a feedback member, and a
    cluster with any feedback member is cyclic.
    Block ``A`` precedes block ``B`` when a latent of ``A`` is a proper
    ancestor of a latent of ``B``; mutual precedence puts both on a block
    cycle and leaves them unordered.
    """
    latent = set(graph.latent)
    groups: dict[frozenset, list[int]] = {}
    for v in graph.observed:
        lp = frozenset(u for u in graph.parents(v) if u in latent)
        if lp:
            groups.setdefault(lp, []).append(v)
    clusters, lat_of = [], {}
    for lp, members in groups.items():
        name = "+".join(graph.label(u) for u in sorted(lp))
        feedback = tuple(graph.label(m) for m in members if any(graph.has_edge(m, u) for u in lp))
        clusters.append(
            CausalCluster(
                tuple(graph.label(m) for m in members),
                len(lp),
                bool(feedback),
                "truth",
                name,
                feedback,
            )
        )
        lat_of[name] = lp
    raw = set()
    for a, la in lat_of.items():
        desc = set()
        for u in la:
            desc |= graph.descendants([u]) - {u}
        for b, lb in lat_of.items():
            if a != b and desc & lb:
                raw.add((a, b))
    mutual = {(a, b) for a, b in raw if (b, a) in raw}
    comps = _merge_overlapping([{a, b} for a, b in mutual])
    names = [c.name for c in clusters]
    cycles = [sorted(g, key=names.index) for g in comps]
    rel = raw - mutual
    return DiscoveryResult(clusters, PartialCausalOrder(_layers(names, rel, cycles), rel, cycles))


def _ratio(num: int, den: int, label: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(label)
        return 1.0
    return num / den


@dataclass
class DiscoveryMetrics:
    """Recall and precision of clustering, causal order and cyclic flags.

    Clustering is scored on unordered pairs of observed variables that share
    a cluster, order on ordered pairs whose latent parents are strictly
    ordered, and cyclic flags on single variables. Ratios with an empty
    denominator are reported as 1 and named in ``undefined``.
    """

    cluster_recall: float
    cluster_precision: float
    latent_order_recall: float
    latent_order_precision: float
    cyclic_recall: float
    cyclic_precision: float
    block_cycles_match: bool = True
    undefined: list[str] = field(default_factory=list)

    @property
    def exact(self) -> bool:
        scores = (
            self.cluster_recall,
            self.cluster_precision,
            self.latent_order_recall,
            self.latent_order_precision,
            self.cyclic_recall,
            self.cyclic_precision,
        )
        return all(s == 1.0 for s in scores) and self.block_cycles_match

    def to_dict(self) -> dict:
        return {
            "cluster_recall": self.cluster_recall,
            "cluster_precision": self.cluster_precision,
            "latent_order_recall": self.latent_order_recall,
            "latent_order_precision": self.latent_order_precision,
            "cyclic_recall": self.cyclic_recall,
            "cyclic_precision": self.cyclic_precision,
            "block_cycles_match": self.block_cycles_match,
            "exact": self.exact,
            "undefined": list(self.undefined),
        }


def _same_cluster_pairs(r: DiscoveryResult) -> set[frozenset]:
    return {frozenset(p) for c in r.clusters for p in itertools.combinations(c.members, 2)}


def _cyclic_variables(r: DiscoveryResult) -> set[str]:
    return {x for c in r.clusters if c.cyclic for x in (c.feedback or c.members)}


def evaluate(found: DiscoveryResult, truth) -> DiscoveryMetrics:
    """Compare a discovery result with the ground truth.

    Parameters
    ----------
    found : DiscoveryResult
    truth : DiscoveryResult, DirectedGraph or LinearSem
        Graphs and SEMs go through :func:`true_structure` first.
    """
    if isinstance(truth, LinearSem):
        truth = truth.graph
    if isinstance(truth, DirectedGraph):
        truth = true_structure(truth)
    flags: list[str] = []
    fp, tp = _same_cluster_pairs(found), _same_cluster_pairs(truth)
    fo, to = found.ordered_pairs(), truth.ordered_pairs()
    fy, ty = _cyclic_variables(found), _cyclic_variables(truth)

    def cycle_sets(r: DiscoveryResult) -> set[frozenset]:
        return {
            frozenset(frozenset(r.cluster(n).members) for n in g) for g in r.order.block_cycles
        }

    return DiscoveryMetrics(
        _ratio(len(fp & tp), len(tp), "cluster_recall", flags),
        _ratio(len(fp & tp), len(fp), "cluster_precision", flags),
        _ratio(len(fo & to), len(to), "latent_order_recall", flags),
        _ratio(len(fo & to), len(fo), "latent_order_precision", flags),
        _ratio(len(fy & ty), len(ty), "cyclic_recall", flags),
        _ratio(len(fy & ty), len(fy), "cyclic_precision", flags),
        cycle_sets(found) == cycle_sets(truth),
        flags,
    )


def oracle_discover(
    graph: DirectedGraph, mode: str = "blocks", seed: int = 0, latent_rule: str = "floor"
) -> DiscoveryResult:
    """:func:`discover` with a :class:`GraphOracle` on ``graph``."""
    observed = [graph.label(v) for v in graph.observed]
    return discover(GraphOracle(graph, seed), observed, mode, latent_rule=latent_rule)
