"""Monte-Carlo study of Strong Faithfulness and k-Triangle-Faithfulness violations.

All decisions use exact population partial correlations. For every
conditioning set ``S`` one Schur complement of the covariance gives the
partial correlations of all pairs outside ``S``, so a graph needs ``2^p``
small solves, and each threshold check afterwards is a lookup.

Per-graph randomness comes from ``numpy.random.SeedSequence`` keyed by the
sweep seed and the graph's position, so results do not depend on the order
or parallelism of the sweep.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from latentcycle.errors import ResourceGuardError, ValidationError
from latentcycle.graph_core import d_separated, find_triangles, random_dag
from latentcycle.sem import LinearSem, NoiseSpec, implied_covariance, random_sem

#: Partial correlations at or below this magnitude count as exact zeros.
ZERO_CUTOFF = 1e-5
#: Largest graph for which every conditioning set is enumerated.
MAX_SIM_VERTICES = 10
#: Bins on |coefficient| for the edge-strength profile.
N_STRENGTH_BINS = 10
UNBOUNDED = math.inf


def all_partial_correlations(cov: np.ndarray, max_vertices: int = MAX_SIM_VERTICES) -> np.ndarray:
    """Partial correlations of every pair given every conditioning set.

    Returns
    -------
    ndarray of shape (2^p, p, p)
        Entry ``[mask, i, j]`` is ``rho(i, j | S)`` with ``S`` the bitmask
        ``mask``; entries with ``i`` or ``j`` in ``S`` and diagonal entries are NaN.
    """
    cov = np.asarray(cov, dtype=float)
    p = cov.shape[0]
    if p > max_vertices:
        raise ResourceGuardError(f"exhaustive partial correlations over {p} vertices", max_vertices, "max_vertices")
    out = np.full((1 << p, p, p), np.nan)
    for s in range(0, p - 1):
        # all conditioning sets of size s at once
        Ss = np.array(list(itertools.combinations(range(p), s)), dtype=np.intp)
        Ss = Ss.reshape(len(Ss), s)
        member = np.zeros((len(Ss), p), dtype=bool)
        if s:
            member[np.arange(len(Ss))[:, None], Ss] = True
        Ts = np.array([np.flatnonzero(~row) for row in member], dtype=np.intp)
        masks = (member * (1 << np.arange(p))).sum(axis=1)
        R = cov[Ts[:, :, None], Ts[:, None, :]]
        if s:
            Kss = cov[Ss[:, :, None], Ss[:, None, :]]
            Kst = cov[Ss[:, :, None], Ts[:, None, :]]
            R = R - np.swapaxes(Kst, 1, 2) @ np.linalg.solve(Kss, Kst)
        d = np.sqrt(np.einsum("bii->bi", R))
        C = R / (d[:, :, None] * d[:, None, :])
        t = p - s
        C[:, np.arange(t), np.arange(t)] = np.nan
        out[masks[:, None, None], Ts[:, :, None], Ts[:, None, :]] = C
    return out


def _masks_without(p: int, excluded: Iterable[int]) -> np.ndarray:
    bad = 0
    for v in excluded:
        bad |= 1 << v
    m = np.arange(1 << p)
    return m[(m & bad) == 0]


@dataclass
class TriangleEdge:
    """One edge ``x - z`` of a triangle whose third vertex is ``y``."""

    x: int
    z: int
    y: int
    collider: bool
    strength: float
    min_abs_rho: float

    @property
    def ratio(self) -> float:
        return self.min_abs_rho / abs(self.strength)


def triangle_edges(sem: LinearSem, table: Optional[np.ndarray] = None) -> list[TriangleEdge]:
    """Every (triangle, edge) pair with the smallest admissible partial correlation.

    The conditioning sets ``W`` exclude the edge's endpoints and contain the
    third vertex exactly when it is a collider of the other two.
    """
    g = sem.graph
    p = g.p
    if table is None:
        table = all_partial_correlations(implied_covariance(sem))
    out = []
    for t in find_triangles(g):
        verts = (t.x, t.y, t.z)
        for a, b in ((0, 2), (0, 1), (1, 2)):
            x, z = verts[a], verts[b]
            y = verts[3 - a - b]
            collider = g.has_edge(x, y) and g.has_edge(z, y)
            masks = _masks_without(p, (x, z))
            has_y = (masks >> y) & 1
            masks = masks[has_y == 1] if collider else masks[has_y == 0]
            e = sem.coefficients[x, z] if g.has_edge(x, z) else sem.coefficients[z, x]
            rho = float(np.min(np.abs(table[masks, x, z])))
            out.append(TriangleEdge(x, z, y, collider, float(e), rho))
    return out


def max_satisfiable_k(sem: LinearSem, table: Optional[np.ndarray] = None) -> float:
    """Largest ``k`` for which k-Triangle-Faithfulness holds; ``inf`` without triangles.

    This is the minimum over triangle edges and admissible ``W`` of
    ``|rho(X, Z | W)| / |e(X - Z)|``; the assumption is violated for every
    ``k`` above it.
    """
    edges = triangle_edges(sem, table)
    if not edges:
        return UNBOUNDED
    return min(te.ratio for te in edges)


def ktf_violated(sem: LinearSem, k: float, table: Optional[np.ndarray] = None) -> bool:
    """Whether some triangle has ``|rho(X,Z|W)| < k |e(X-Z)|``."""
    if k <= 0:
        raise ValidationError("k must be positive")
    return max_satisfiable_k(sem, table) < k


def min_nonzero_partial_correlation(sem: LinearSem, table: Optional[np.ndarray] = None) -> float:
    """Smallest ``|rho(i, j | S)|`` above the zero cutoff over d-connected triples.

    Returns ``inf`` when no partial correlation exceeds the cutoff.
    """
    if table is None:
        table = all_partial_correlations(implied_covariance(sem))
    vals = np.abs(table)
    with np.errstate(invalid="ignore"):
        # NaN compares false, so undefined entries become inf as well
        cand = np.where(vals > ZERO_CUTOFF, vals, np.inf)
    g = sem.graph
    # confirm d-connection for the winners; an exact zero never passes the cutoff,
    # so this loop only runs more than once on a numerical surprise
    flat = np.argsort(cand, axis=None)
    for idx in flat:
        v = cand.flat[idx]
        if not np.isfinite(v):
            return UNBOUNDED
        mask, i, j = np.unravel_index(idx, cand.shape)
        S = [u for u in range(g.p) if mask >> u & 1]
        if not d_separated(g, [int(i)], [int(j)], S):
            return float(v)
    return UNBOUNDED


def strong_faithfulness_violated(sem: LinearSem, lam: float, table: Optional[np.ndarray] = None) -> bool:
    """Whether some d-connected partial correlation has ``1e-5 < |rho| <= lam``."""
    if not 0 < lam < 1:
        raise ValidationError("lambda must lie in (0, 1)")
    return min_nonzero_partial_correlation(sem, table) <= lam


@dataclass
class ViolationReport:
    """Per-graph summary used by the sweeps."""

    graph_id: str
    triangles: int
    min_rho: float
    max_k: float
    edges: list = field(default_factory=list)

    def sf_violated(self, lam: float) -> bool:
        return self.min_rho <= lam

    def ktf_violated(self, k: float) -> bool:
        return self.triangles > 0 and self.max_k < k


def analyse(sem: LinearSem, graph_id: str = "", max_vertices: int = MAX_SIM_VERTICES) -> ViolationReport:
    table = all_partial_correlations(implied_covariance(sem), max_vertices)
    edges = triangle_edges(sem, table)
    tri = len(find_triangles(sem.graph))
    mk = min((te.ratio for te in edges), default=UNBOUNDED)
    return ViolationReport(graph_id, tri, min_nonzero_partial_correlation(sem, table), mk, edges)


def graph_seed(seed: int, p: int, nb: float, idx: int) -> np.random.SeedSequence:
    """Sub-seed for one simulated graph, independent of sweep order."""
    return np.random.SeedSequence([int(seed), int(p), int(round(nb * 1000)), int(idx)])


def simulate_sem(p: int, nb: float, seed: int, idx: int, noise_var: float = 1.0) -> LinearSem:
    """Random DAG with uniform ``[-1, 1]`` coefficients and Gaussian noise."""
    rng = np.random.default_rng(graph_seed(seed, p, nb, idx))
    g = random_dag(p, nb, rng)
    return random_sem(g, rng, regime="unit", noise=NoiseSpec.gaussian(noise_var))


def clamp_nb(p: int, nb: float) -> float:
    return float(min(max(nb, 0.0), max(p - 1, 0)))


def _analyse_job(job: tuple) -> ViolationReport:
    p, nb, seed, idx, noise_var, *cap = job
    return analyse(simulate_sem(p, nb, seed, idx, noise_var), max_vertices=cap[0] if cap else MAX_SIM_VERTICES)


def analyse_many(jobs: Sequence[tuple], workers: int = 1) -> list[ViolationReport]:
    """Run :func:`analyse` on ``(p, nb, seed, idx, noise_var[, max_vertices])`` jobs, in order.

    With ``workers > 1`` the jobs are spread over a process pool. Each job
    seeds itself, so the output does not depend on ``workers``.
    """
    jobs = list(jobs)
    if workers <= 1 or len(jobs) < 2:
        return [_analyse_job(j) for j in jobs]
    chunk = max(1, len(jobs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_analyse_job, jobs, chunksize=chunk))


def _rows_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


SWEEP_COLUMNS = ("p", "nb", "threshold", "assumption", "proportion", "stderr", "n_graphs")


def violation_sweep_rows(
    nodes: Sequence[int],
    nb_sizes: Sequence[float],
    thresholds: Sequence[float],
    n_graphs: int,
    seed: int = 0,
    noise_var: float = 1.0,
    workers: int = 1,
    max_vertices: int = MAX_SIM_VERTICES,
) -> list[dict]:
    """Violation proportions per (p, nb, threshold, assumption).

    ``nb`` values above ``p - 1`` are clamped and duplicate cells dropped.
    """
    if n_graphs < 1:
        raise ValidationError("n_graphs must be at least 1")
    rows = []
    for p in nodes:
        seen = set()
        for nb in nb_sizes:
            nbc = clamp_nb(p, nb)
            if nbc in seen:
                continue
            seen.add(nbc)
            reports = analyse_many(
                [(p, nbc, seed, i, noise_var, max_vertices) for i in range(n_graphs)], workers
            )
            for th in thresholds:
                for name, flag in (("SF", "sf_violated"), ("KTF", "ktf_violated")):
                    hits = sum(getattr(r, flag)(th) for r in reports)
                    prop = hits / n_graphs
                    rows.append(
                        {
                            "p": p,
                            "nb": nbc,
                            "threshold": float(th),
                            "assumption": name,
                            "proportion": prop,
                            "stderr": math.sqrt(prop * (1 - prop) / n_graphs),
                            "n_graphs": n_graphs,
                        }
                    )
    return rows


def violation_sweep(
    nodes: Sequence[int],
    nb_sizes: Sequence[float],
    thresholds: Sequence[float],
    n_graphs: int,
    seed: int = 0,
    noise_var: float = 1.0,
    workers: int = 1,
) -> str:
    """CSV text of :func:`violation_sweep_rows`."""
    rows = violation_sweep_rows(nodes, nb_sizes, thresholds, n_graphs, seed, noise_var, workers)
    return _rows_to_csv(SWEEP_COLUMNS, ([r[c] for c in SWEEP_COLUMNS] for r in rows))


def max_k_ensemble(
    p: int,
    nb_sizes: Sequence[float],
    n_graphs: int,
    seed: int = 0,
    workers: int = 1,
    max_vertices: int = MAX_SIM_VERTICES,
) -> list[float]:
    """Per-graph maximum satisfiable ``k`` across an ensemble (``inf`` when triangle-free)."""
    jobs = [(p, clamp_nb(p, nb), seed, i, 1.0, max_vertices) for nb in nb_sizes for i in range(n_graphs)]
    return [r.max_k for r in analyse_many(jobs, workers)]


PROFILE_COLUMNS = ("p", "nb", "k", "bin_lo", "bin_hi", "n_edges", "n_violations", "proportion")


def edge_strength_violation_profile_rows(
    p: int,
    nb_sizes: Sequence[float],
    k: float,
    n_graphs: int,
    seed: int = 0,
    n_bins: int = N_STRENGTH_BINS,
    workers: int = 1,
    max_vertices: int = MAX_SIM_VERTICES,
) -> list[dict]:
    """Triangle-edge violations binned by ``|coefficient|`` on 10 equal bins of [0, 1].

    An edge counts as violated when its own smallest admissible partial
    correlation falls below ``k |e|``.
    """
    rows = []
    edges_bins = np.linspace(0.0, 1.0, n_bins + 1)
    for nb in nb_sizes:
        nbc = clamp_nb(p, nb)
        tot = np.zeros(n_bins, dtype=int)
        bad = np.zeros(n_bins, dtype=int)
        for rep in analyse_many([(p, nbc, seed, i, 1.0, max_vertices) for i in range(n_graphs)], workers):
            for te in rep.edges:
                b = min(int(abs(te.strength) * n_bins), n_bins - 1)
                tot[b] += 1
                bad[b] += te.min_abs_rho < k * abs(te.strength)
        for b in range(n_bins):
            rows.append(
                {
                    "p": p,
                    "nb": nbc,
                    "k": float(k),
                    "bin_lo": float(edges_bins[b]),
                    "bin_hi": float(edges_bins[b + 1]),
                    "n_edges": int(tot[b]),
                    "n_violations": int(bad[b]),
                    "proportion": float(bad[b] / tot[b]) if tot[b] else 0.0,
                }
            )
    return rows


def edge_strength_violation_profile(
    p: int, nb_sizes: Sequence[float], k: float, n_graphs: int, seed: int = 0, workers: int = 1
) -> str:
    """CSV text of :func:`edge_strength_violation_profile_rows`."""
    rows = edge_strength_violation_profile_rows(p, nb_sizes, k, n_graphs, seed, workers=workers)
    return _rows_to_csv(PROFILE_COLUMNS, ([r[c] for c in PROFILE_COLUMNS] for r in rows))
