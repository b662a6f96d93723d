"""Statistical primitives: CI tests, histograms, cumulants, rank, HSIC, GIN and IN.

Every test returns a :class:`TestResult`. Its ``decision`` is ``"independent"``
when the null hypothesis is kept (``p_value > alpha``). For the rank test the
null is "rank at most r", so ``"independent"`` there means the rank
constraint holds.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from latentcycle.errors import ValidationError
from latentcycle.sem import Dataset

INDEPENDENT = "independent"
DEPENDENT = "dependent"

Columns = Union[int, str, Sequence[Union[int, str]]]

#: Largest sample size for which :func:`hsic_independence_test` permutes by default.
HSIC_PERMUTATION_MAX_N = 1000


@dataclass
class TestResult:
    statistic: float
    p_value: float
    alpha: float
    decision: str = field(init=False)
    degenerate: bool = False

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        self.p_value = float(min(max(self.p_value, 0.0), 1.0))
        self.decision = INDEPENDENT if self.p_value > self.alpha else DEPENDENT

    @property
    def independent(self) -> bool:
        return self.decision == INDEPENDENT


def _as_list(c: Columns) -> list:
    if isinstance(c, (str, int, np.integer)):
        return [c]
    return list(c)


def _matrix(data, cols: Columns) -> np.ndarray:
    """Columns of a Dataset or an ndarray as a 2-D float array."""
    cols = _as_list(cols)
    if isinstance(data, Dataset):
        return data.values[:, data.cols(cols)]
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr[:, cols]


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


# ---------------------------------------------------------------------------
# Gaussian CI test
# ---------------------------------------------------------------------------
def fisher_z_ci_test(
    data, i, j, S: Iterable = (), alpha: float = 0.01
) -> TestResult:
    """Fisher-z test of ``X_i _||_ X_j | X_S`` from the sample partial correlation.

    Parameters
    ----------
    data : Dataset or ndarray
    i, j : column label or index
    S : iterable of columns
    alpha : float

    Returns
    -------
    TestResult
        ``statistic`` is ``sqrt(n - |S| - 3) * |z|``.
    """
    S = list(S)
    X = _matrix(data, [i, j] + S)
    n = X.shape[0]
    if n <= len(S) + 3:
        raise ValidationError(f"Fisher-z needs n > |S| + 3 (n={n}, |S|={len(S)})")
    C = np.corrcoef(X, rowvar=False)
    if not np.all(np.isfinite(C)):
        raise ValidationError("constant column in Fisher-z test")
    try:
        P = np.linalg.inv(C)
    except np.linalg.LinAlgError:
        P = np.linalg.pinv(C)
    r = -P[0, 1] / math.sqrt(P[0, 0] * P[1, 1])
    if abs(r) >= 1.0 - 1e-15:
        return TestResult(math.inf, 0.0, alpha)
    z = 0.5 * math.log((1 + r) / (1 - r))
    stat = math.sqrt(n - len(S) - 3) * abs(z)
    return TestResult(stat, 2 * stats.norm.sf(stat), alpha)


# ---------------------------------------------------------------------------
# histograms and L1 dependence
# ---------------------------------------------------------------------------
def bins_per_axis(n: int, d: int) -> int:
    """Per-axis bin count ``max(2, floor(n^(1/(2+d))))`` in exact integer arithmetic."""
    if n < 1 or d < 1:
        raise ValidationError("need n >= 1 and d >= 1")
    m = int(round(n ** (1.0 / (2 + d))))
    while m > 0 and m ** (2 + d) > n:
        m -= 1
    while (m + 1) ** (2 + d) <= n:
        m += 1
    return max(2, m)


@dataclass
class HistogramDensity:
    """Equal-width histogram on the rescaled unit cube.

    Attributes
    ----------
    bins : tuple of int
        Bin count per axis (1 on a degenerate axis).
    edges : list of ndarray
        Bin boundaries on [0, 1] per axis.
    masses : ndarray
        Cell probabilities, shape ``bins``; they sum to one.
    degenerate : tuple of bool
        Axes whose column was constant.
    """

    bins: tuple
    edges: list
    masses: np.ndarray
    degenerate: tuple

    def density(self) -> np.ndarray:
        """Density values (mass divided by cell volume)."""
        vol = 1.0
        for b in self.bins:
            vol /= b
        return self.masses / vol


def rescale_unit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Affinely map each column onto [0, 1]; constant columns map to 0."""
    X = _as_2d(X)
    lo = X.min(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    hi = X.max(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    span = hi - lo
    degenerate = span <= 0
    safe = np.where(degenerate, 1.0, span)
    U = (X - lo) / safe
    U[:, degenerate] = 0.0
    return U, degenerate


def cell_indices(U: np.ndarray, bins: Sequence[int]) -> np.ndarray:
    """Bin index per row and axis for data already on [0, 1]."""
    b = np.asarray(bins)
    idx = np.floor(U * b).astype(np.intp)
    return np.minimum(idx, b - 1)


def histogram_estimate(data, dims: Columns, m: Optional[int] = None) -> HistogramDensity:
    """Histogram of the chosen columns after per-column rescaling to [0, 1].

    Parameters
    ----------
    data : Dataset or ndarray
    dims : columns
    m : int, optional
        Per-axis bin count; defaults to :func:`bins_per_axis`.
    """
    X = _matrix(data, dims)
    n, d = X.shape
    if n < 1:
        raise ValidationError("histogram needs at least one row")
    m = bins_per_axis(n, d) if m is None else int(m)
    U, degenerate = rescale_unit(X)
    bins = tuple(1 if degenerate[a] else m for a in range(d))
    idx = cell_indices(U, bins)
    flat = np.ravel_multi_index(idx.T, bins)
    counts = np.bincount(flat, minlength=int(np.prod(bins))).reshape(bins)
    edges = [np.linspace(0.0, 1.0, b + 1) for b in bins]
    return HistogramDensity(bins, edges, counts / n, tuple(bool(x) for x in degenerate))


def l1_dependence(data, x, y, A: Iterable = (), m: Optional[int] = None) -> float:
    """Plug-in ``|| p_{X,Y,A} - p_{X|A} p_{Y|A} p_A ||_1`` from a joint histogram.

    On cells with ``p_A > 0`` the product term is ``p_{X,A} p_{Y,A} / p_A``;
    the L1 norm of the density difference equals the sum of absolute cell
    mass differences.
    """
    A = _as_list(A) if A else []
    cols = [x, y] + A
    if len({str(c) for c in cols}) != len(cols):
        raise ValidationError("columns must be distinct")
    h = histogram_estimate(data, cols, m)
    P = h.masses
    pxa = P.sum(axis=1, keepdims=True)
    pya = P.sum(axis=0, keepdims=True)
    pa = P.sum(axis=(0, 1), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        prod = np.where(pa > 0, pxa * pya / np.where(pa > 0, pa, 1.0), 0.0)
    return float(np.abs(P - prod).sum())


def l1_permutation_threshold(
    data, x, y, A: Iterable = (), alpha: float = 0.01, n_perm: int = 100, seed: int = 0
) -> TestResult:
    """Nonparametric CI test: L1 dependence against a permutation null.

    ``y`` is shuffled within cells of the conditioning histogram, which keeps
    ``p_{Y|A}`` and destroys any residual dependence on ``x``.
    """
    A = _as_list(A) if A else []
    stat = l1_dependence(data, x, y, A)
    X = _matrix(data, [x, y] + A)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    if A:
        U, deg = rescale_unit(X[:, 2:])
        mA = bins_per_axis(n, len(A) + 2)
        cells = cell_indices(U, [1 if dg else mA for dg in deg])
        groups = np.unique(cells, axis=0, return_inverse=True)[1].ravel()
    else:
        groups = np.zeros(n, dtype=np.intp)
    members = [np.flatnonzero(groups == g) for g in np.unique(groups)]
    exceed = 0
    for _ in range(n_perm):
        Xp = X.copy()
        for mem in members:
            Xp[mem, 1] = X[rng.permutation(mem), 1]
        cols = list(range(Xp.shape[1]))
        if l1_dependence(Xp, 0, 1, cols[2:]) >= stat:
            exceed += 1
    return TestResult(stat, (1 + exceed) / (1 + n_perm), alpha)


# ---------------------------------------------------------------------------
# kernel independence
# ---------------------------------------------------------------------------
def _median_bandwidth(X: np.ndarray) -> float:
    sub = X[: min(len(X), 1000)]
    sq = np.sum(sub**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2 * sub @ sub.T
    d2 = d2[np.triu_indices(len(sub), 1)]
    d2 = d2[d2 > 1e-12]
    if d2.size == 0:
        return 1.0
    return math.sqrt(0.5 * float(np.median(d2)))


def _gram(X: np.ndarray) -> np.ndarray:
    X = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
    sig = _median_bandwidth(X)
    sq = np.sum(X**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
    return np.exp(-d2 / (2 * sig**2))


def _center(K: np.ndarray) -> np.ndarray:
    K = K - K.mean(axis=0, keepdims=True)
    return K - K.mean(axis=1, keepdims=True)


def _hsic_gamma_pvalue(K: np.ndarray, L: np.ndarray, Kc: np.ndarray, Lc: np.ndarray) -> float:
    """p-value from the two-moment gamma fit to the null of ``n * HSIC_b``."""
    n = K.shape[0]
    stat = float(np.sum(Kc * Lc)) / n
    v = (Kc * Lc / 6.0) ** 2
    var = (float(np.sum(v)) - float(np.trace(v))) / n / (n - 1)
    var *= 72.0 * (n - 4) * (n - 5) / n / (n - 1) / (n - 2) / (n - 3)
    mu_x = (float(np.sum(K)) - float(np.trace(K))) / n / (n - 1)
    mu_y = (float(np.sum(L)) - float(np.trace(L))) / n / (n - 1)
    mean = (1.0 + mu_x * mu_y - mu_x - mu_y) / n
    if var <= 0 or mean <= 0:
        return 1.0
    shape, scale = mean**2 / var, var * n / mean
    return float(stats.gamma.sf(stat, shape, scale=scale))


def hsic_independence_test(
    u,
    v,
    alpha: float = 0.05,
    n_perm: int = 200,
    seed: int = 0,
    method: str = "auto",
) -> TestResult:
    """HSIC independence test with Gaussian kernels and median-heuristic bandwidths.

    Parameters
    ----------
    u, v : array_like
        Samples with matching first dimension; 1-D or 2-D.
    alpha : float
    n_perm : int
        Number of shuffles of ``v``.
    seed : int
        Seeds the permutation sequence.
    method : {"auto", "permutation", "gamma"}
        Null distribution: ``n_perm`` shuffles of ``v``, or a gamma
        distribution matched to the first two null moments. ``"auto"``
        permutes up to :data:`HSIC_PERMUTATION_MAX_N` rows and uses the gamma
        fit beyond, where each shuffle costs ``O(n^2)``.

    Returns
    -------
    TestResult
        ``statistic`` is the biased HSIC estimate ``tr(K H L H) / n^2``.
        Zero-variance input yields a dependent decision flagged ``degenerate``.
    """
    U, V = _as_2d(u), _as_2d(v)
    n = U.shape[0]
    if V.shape[0] != n:
        raise ValidationError("u and v need the same number of rows")
    if n < 20:
        raise ValidationError("HSIC needs at least 20 rows")
    if np.all(U.std(axis=0) == 0) or np.all(V.std(axis=0) == 0):
        warnings.warn("zero-variance input to HSIC; reporting dependence", stacklevel=2)
        return TestResult(math.nan, 0.0, alpha, degenerate=True)
    if method == "auto":
        method = "permutation" if n <= HSIC_PERMUTATION_MAX_N else "gamma"
    if method not in ("permutation", "gamma"):
        raise ValidationError(f"unknown HSIC method {method!r}")
    K0, L0 = _gram(U), _gram(V)
    K, L = _center(K0), _center(L0)
    stat = float(np.sum(K * L)) / n**2
    if method == "gamma":
        return TestResult(stat, _hsic_gamma_pvalue(K0, L0, K, L), alpha)
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(n_perm):
        perm = rng.permutation(n)
        if float(np.sum(K * L[np.ix_(perm, perm)])) / n**2 >= stat:
            exceed += 1
    return TestResult(stat, (1 + exceed) / (1 + n_perm), alpha)


# ---------------------------------------------------------------------------
# cumulants
# ---------------------------------------------------------------------------
def _set_partitions(items: list) -> Iterable[list[list]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


def sample_cumulant(data, indices: Sequence) -> float:
    """Plug-in joint cumulant of ``k`` columns (``k`` in 2..4).

    Columns are centred first, so partitions with a singleton block vanish and
    the moment-cumulant formula reduces to the surviving partitions.
    """
    k = len(indices)
    if k not in (2, 3, 4):
        raise ValidationError(f"cumulant order {k} not supported")
    X = _matrix(data, list(indices))
    X = X - X.mean(axis=0)
    total = 0.0
    for part in _set_partitions(list(range(k))):
        if any(len(b) == 1 for b in part):
            continue
        L = len(part)
        term = (-1) ** (L - 1) * math.factorial(L - 1)
        for block in part:
            term *= float(np.mean(np.prod(X[:, block], axis=1)))
        total += term
    return total


# ---------------------------------------------------------------------------
# rank test
# ---------------------------------------------------------------------------
def _canonical_correlations(C: np.ndarray, a: int) -> np.ndarray:
    """Canonical correlations between the first ``a`` and the remaining variables."""
    Saa, Sbb, Sab = C[:a, :a], C[a:, a:], C[:a, a:]

    def inv_sqrt(S):
        w, V = np.linalg.eigh(S)
        w = np.maximum(w, 1e-300)
        return V @ np.diag(w**-0.5) @ V.T

    s = np.linalg.svd(inv_sqrt(Saa) @ Sab @ inv_sqrt(Sbb), compute_uv=False)
    return np.clip(s, 0.0, 1.0 - 1e-15)


def bartlett_statistic(rho: np.ndarray, n: int, p: int, q: int, r: int) -> tuple[float, int]:
    stat = -(n - (p + q + 3) / 2.0) * float(np.sum(np.log(1 - rho[r:] ** 2)))
    return stat, (p - r) * (q - r)


def rank_test(
    data_or_cov,
    A: Columns,
    B: Columns,
    r: int,
    alpha: float = 0.05,
    mode: str = "sample",
    rel_tol: float = 1e-9,
    method: str = "bartlett",
    n_boot: int = 200,
    seed: int = 0,
) -> TestResult:
    """Test ``rank(Sigma_{A,B}) <= r``.

    Parameters
    ----------
    data_or_cov : Dataset or ndarray
        A dataset in sample mode, a covariance matrix in population mode.
    A, B : columns
    r : int
    alpha : float
    mode : {"sample", "population"}
    rel_tol : float
        Population mode: singular values below ``rel_tol * sigma_max`` count as zero.
    method : {"bartlett", "bootstrap"}
        Sample mode: chi-square reference, or a parametric bootstrap from the
        closest Gaussian model whose trailing canonical correlations are zero.

    Returns
    -------
    TestResult
        In population mode ``statistic`` is the ratio ``sigma_{r+1} / sigma_1``
        and the p-value is 1 or 0.
    """
    A, B = _as_list(A), _as_list(B)
    if r < 0:
        raise ValidationError("r must be non-negative")
    if not A or not B:
        raise ValidationError("A and B must be non-empty")
    if mode == "population":
        if isinstance(data_or_cov, Dataset):
            raise ValidationError("population mode takes a covariance matrix")
        cov = np.asarray(data_or_cov, dtype=float)
        s = np.linalg.svd(cov[np.ix_(A, B)], compute_uv=False)
        if r >= len(s):
            return TestResult(0.0, 1.0, alpha)
        ratio = float(s[r] / s[0]) if s[0] > 0 else 0.0
        return TestResult(ratio, 1.0 if ratio < rel_tol else 0.0, alpha)
    if mode != "sample":
        raise ValidationError(f"unknown mode {mode!r}")
    X = _matrix(data_or_cov, A + B)
    n = X.shape[0]
    p, q = len(A), len(B)
    if r >= min(p, q):
        return TestResult(0.0, 1.0, alpha)
    C = np.cov(X, rowvar=False)
    rho = _canonical_correlations(C, p)
    stat, df = bartlett_statistic(rho, n, p, q, r)
    if method == "bartlett":
        return TestResult(stat, float(stats.chi2.sf(stat, df)), alpha)
    if method != "bootstrap":
        raise ValidationError(f"unknown rank-test method {method!r}")
    C0 = _reduced_rank_covariance(C, p, r)
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(C0)
    exceed = 0
    for _ in range(n_boot):
        Xb = rng.standard_normal((n, p + q)) @ chol.T
        rb = _canonical_correlations(np.cov(Xb, rowvar=False), p)
        if bartlett_statistic(rb, n, p, q, r)[0] >= stat:
            exceed += 1
    return TestResult(stat, (1 + exceed) / (1 + n_boot), alpha)


def _reduced_rank_covariance(C: np.ndarray, p: int, r: int) -> np.ndarray:
    """Covariance with the same blocks but canonical correlations beyond ``r`` set to 0."""
    Saa, Sbb, Sab = C[:p, :p], C[p:, p:], C[:p, p:]

    def sqrt_and_inv(S):
        w, V = np.linalg.eigh(S)
        w = np.maximum(w, 1e-300)
        return V @ np.diag(w**0.5) @ V.T, V @ np.diag(w**-0.5) @ V.T

    ra, ia = sqrt_and_inv(Saa)
    rb, ib = sqrt_and_inv(Sbb)
    U, s, Vt = np.linalg.svd(ia @ Sab @ ib, full_matrices=False)
    s[r:] = 0.0
    out = C.copy()
    out[:p, p:] = ra @ (U * s) @ Vt @ rb
    out[p:, :p] = out[:p, p:].T
    return out


def estimate_rank(data, A: Columns, B: Columns, alpha: float = 0.05, **kw) -> int:
    """Smallest ``r`` whose rank test keeps the null."""
    A, B = _as_list(A), _as_list(B)
    for r in range(min(len(A), len(B))):
        if rank_test(data, A, B, r, alpha, mode="sample", **kw).independent:
            return r
    return min(len(A), len(B))


# ---------------------------------------------------------------------------
# GIN and IN
# ---------------------------------------------------------------------------
def null_directions(M: np.ndarray, rel_tol: float = 1e-8, min_dim: int = 1) -> np.ndarray:
    """Orthonormal basis (columns) of approximate left null vectors of ``M``.

    Directions whose singular value is below ``rel_tol * sigma_max`` are kept;
    at least ``min_dim`` of the smallest directions are always returned.
    """
    U, s, _ = np.linalg.svd(M, full_matrices=True)
    full = np.zeros(U.shape[1])
    full[: len(s)] = s
    smax = s[0] if len(s) and s[0] > 0 else 1.0
    keep = full < rel_tol * smax
    if keep.sum() < min_dim:
        keep[np.argsort(full, kind="stable")[:min_dim]] = True
    return U[:, keep]


def gin_test(
    data,
    Z: Columns,
    Y: Columns,
    alpha: float = 0.05,
    seed: int = 0,
    n_perm: int = 200,
    rel_tol: float = 1e-8,
) -> tuple[TestResult, np.ndarray]:
    """Test the GIN condition for ``(Z, Y)``.

    ``omega`` spans directions with ``omega^T E[Y Z^T] ~ 0``: the exact null
    space when ``|Y| > |Z|`` or the cross-covariance is rank deficient, and
    the smallest singular direction otherwise. Each direction's projection
    ``omega^T Y`` is tested against ``Z`` with HSIC; the most dependent one
    decides.

    Returns
    -------
    (TestResult, ndarray)
        The decision and the chosen ``omega``.
    """
    Z, Y = _as_list(Z), _as_list(Y)
    if len(Y) < 2:
        raise ValidationError("GIN needs |Y| >= 2")
    Ym = _matrix(data, Y)
    Zm = _matrix(data, Z)
    Yc = Ym - Ym.mean(axis=0)
    Zc = Zm - Zm.mean(axis=0)
    cross = Yc.T @ Zc / len(Yc)  # |Y| x |Z|
    basis = null_directions(cross, rel_tol)
    worst: Optional[tuple[TestResult, np.ndarray]] = None
    for c in range(basis.shape[1]):
        omega = basis[:, c]
        res = hsic_independence_test(Ym @ omega, Zm, alpha, n_perm, seed)
        if worst is None or res.p_value < worst[0].p_value:
            worst = (res, omega)
    return worst


def in_test(
    data, Z: Columns, y, alpha: float = 0.05, seed: int = 0, n_perm: int = 200
) -> TestResult:
    """Test the IN condition: the residual of regressing ``y`` on ``Z`` is independent of ``Z``."""
    Z = _as_list(Z)
    Zm = _matrix(data, Z)
    yv = _matrix(data, [y])[:, 0]
    n = Zm.shape[0]
    if n <= len(Z) + 2:
        raise ValidationError("IN test needs n > |Z| + 2")
    Zc = Zm - Zm.mean(axis=0)
    yc = yv - yv.mean()
    G = Zc.T @ Zc / n
    if np.linalg.matrix_rank(G) < len(Z):
        raise ValidationError("singular Gram matrix in IN test")
    omega = np.linalg.solve(G, Zc.T @ yc / n)
    return hsic_independence_test(yc - Zc @ omega, Zm, alpha, n_perm, seed)
