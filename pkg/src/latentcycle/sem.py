"""Linear structural equation models over a :class:`DirectedGraph`.

The model is ``X = A^T X + eps``, i.e. ``(I - A)^T X = eps`` with
``A[j, i]`` the coefficient of the edge ``j -> i``. Writing
``M = (I - A)^{-1}`` the solution is ``X = M^T eps``, so every population
cumulant of ``X`` is a Tucker product of the (diagonal) noise cumulant tensor
with ``M``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from latentcycle.errors import ValidationError
from latentcycle.graph_core import DirectedGraph, VertexRef

GAUSSIAN = "gaussian"
UNIFORM = "uniform"
SHIFTED_EXPONENTIAL = "shifted_exponential"


@dataclass(frozen=True)
class NoiseSpec:
    """Distribution of one exogenous noise term.

    Parameters
    ----------
    dist : {"gaussian", "uniform", "shifted_exponential"}
    params : dict
        ``gaussian``: ``mean`` (default 0) and ``var``; ``uniform``: ``lo`` and
        ``hi``; ``shifted_exponential``: ``rate``. The exponential is centred,
        so its mean is zero.
    """

    dist: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        if self.dist == GAUSSIAN:
            if p.get("var", 1.0) <= 0:
                raise ValidationError("gaussian variance must be positive")
        elif self.dist == UNIFORM:
            if not p.get("lo", -1.0) < p.get("hi", 1.0):
                raise ValidationError("uniform noise needs lo < hi")
        elif self.dist == SHIFTED_EXPONENTIAL:
            if p.get("rate", 1.0) <= 0:
                raise ValidationError("exponential rate must be positive")
        else:
            raise ValidationError(f"unknown noise distribution {self.dist!r}")

    @classmethod
    def gaussian(cls, var: float = 1.0, mean: float = 0.0) -> "NoiseSpec":
        return cls(GAUSSIAN, {"mean": float(mean), "var": float(var)})

    @classmethod
    def uniform(cls, lo: float = -1.0, hi: float = 1.0) -> "NoiseSpec":
        return cls(UNIFORM, {"lo": float(lo), "hi": float(hi)})

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "NoiseSpec":
        return cls(SHIFTED_EXPONENTIAL, {"rate": float(rate)})

    @property
    def is_gaussian(self) -> bool:
        return self.dist == GAUSSIAN

    def cumulant(self, k: int) -> float:
        """Closed-form ``k``-th cumulant for ``k`` in 1..4."""
        p = self.params
        if k not in (1, 2, 3, 4):
            raise ValidationError(f"cumulant order {k} not supported")
        if self.dist == GAUSSIAN:
            return {1: p.get("mean", 0.0), 2: p.get("var", 1.0)}.get(k, 0.0)
        if self.dist == UNIFORM:
            lo, hi = p.get("lo", -1.0), p.get("hi", 1.0)
            w = hi - lo
            return {1: (lo + hi) / 2, 2: w**2 / 12, 3: 0.0, 4: -(w**4) / 120}[k]
        rate = p.get("rate", 1.0)
        if k == 1:
            return 0.0
        return math.factorial(k - 1) / rate**k

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.dist == GAUSSIAN:
            return rng.normal(p.get("mean", 0.0), math.sqrt(p.get("var", 1.0)), n)
        if self.dist == UNIFORM:
            return rng.uniform(p.get("lo", -1.0), p.get("hi", 1.0), n)
        scale = 1.0 / p.get("rate", 1.0)
        return rng.exponential(scale, n) - scale

    def cdf(self, x) -> np.ndarray:
        """Distribution function, vectorised over ``x``."""
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.dist == GAUSSIAN:
            return norm.cdf(x, p.get("mean", 0.0), math.sqrt(p.get("var", 1.0)))
        if self.dist == UNIFORM:
            lo, hi = p.get("lo", -1.0), p.get("hi", 1.0)
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        rate = p.get("rate", 1.0)
        shifted = np.maximum(x + 1.0 / rate, 0.0)
        return 1.0 - np.exp(-rate * shifted)

    def to_dict(self) -> dict:
        d = {"dist": self.dist}
        d.update(self.params)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        d = dict(d)
        dist = d.pop("dist")
        return cls(dist, {k: float(v) for k, v in d.items()})


class LinearSem:
    """Linear SEM: a graph, a coefficient matrix and one noise spec per vertex.

    Parameters
    ----------
    graph : DirectedGraph
    coefficients : array_like, shape (p, p)
        ``coefficients[j, i]`` is the strength of ``j -> i``. Must be nonzero
        exactly on the edges of ``graph``.
    noise : NoiseSpec or sequence of NoiseSpec
        A single spec is broadcast to all vertices.

    Raises
    ------
    ValidationError
        If the support of the coefficients differs from the edge set, or the
        spectral radius of the coefficient matrix is not below 1.
    """

    def __init__(
        self,
        graph: DirectedGraph,
        coefficients,
        noise: Union[NoiseSpec, Sequence[NoiseSpec]] = NoiseSpec.gaussian(),
    ):
        A = np.array(coefficients, dtype=float)
        p = graph.p
        if A.shape != (p, p):
            raise ValidationError(f"coefficient matrix must be {p}x{p}, got {A.shape}")
        support = A != 0
        if not np.array_equal(support, graph.adjacency_matrix()):
            raise ValidationError("coefficients must be nonzero exactly on the graph's edges")
        radius = float(np.max(np.abs(np.linalg.eigvals(A)))) if p else 0.0
        if radius >= 1.0:
            raise ValidationError(
                f"spectral radius of the coefficient matrix is {radius:.4g} >= 1; "
                "the cyclic model is not stationary and I - A may be singular"
            )
        if isinstance(noise, NoiseSpec):
            noise = [noise] * p
        noise = list(noise)
        if len(noise) != p:
            raise ValidationError("need one noise spec per vertex")
        self.graph = graph
        self.coefficients = A
        self.coefficients.setflags(write=False)
        self.noise = tuple(noise)
        self._mixing = np.linalg.inv(np.eye(p) - A)
        self._mixing.setflags(write=False)

    @property
    def p(self) -> int:
        return self.graph.p

    @property
    def mixing(self) -> np.ndarray:
        """``M = (I - A)^{-1}``; row ``j`` holds the loadings of noise ``j``."""
        return self._mixing

    def noise_cumulants(self, k: int) -> np.ndarray:
        return np.array([n.cumulant(k) for n in self.noise])

    def to_dict(self) -> dict:
        d = self.graph.to_dict()
        d["coefficients"] = self.coefficients.tolist()
        d["noise"] = [n.to_dict() for n in self.noise]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinearSem":
        graph = DirectedGraph.from_dict(d)
        coef = d.get("coefficients")
        if coef is None:
            raise ValidationError("SEM JSON needs a 'coefficients' matrix")
        noise = [NoiseSpec.from_dict(n) for n in d.get("noise", [])] or NoiseSpec.gaussian()
        return cls(graph, coef, noise)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LinearSem":
        return cls.from_dict(json.loads(text))


def implied_covariance(sem: LinearSem) -> np.ndarray:
    """Population covariance ``(I - A)^{-T} Sigma_eps (I - A)^{-1}``."""
    M = sem.mixing
    cov = M.T @ np.diag(sem.noise_cumulants(2)) @ M
    return (cov + cov.T) / 2


def implied_cumulant_tensor(sem: LinearSem, k: int):
    """Population order-``k`` cumulant tensor of all vertices.

    Returns
    -------
    CumulantTensor
        Axis labels are the vertex labels on every axis.
    """
    from latentcycle.tensor_constraints import CumulantTensor

    if k not in (2, 3, 4):
        raise ValidationError(f"cumulant order must be 2, 3 or 4, got {k}")
    if k == 2:
        values = implied_covariance(sem)
    else:
        M = sem.mixing
        kappa = sem.noise_cumulants(k)
        letters = "abcd"[:k]
        spec = ",".join(f"j{c}" for c in letters)
        values = np.einsum(f"j,{spec}->{letters}", kappa, *([M] * k))
    labels = [sem.graph.labels] * k
    return CumulantTensor(values, labels)


class Dataset:
    """Labelled ``n x p`` data matrix of i.i.d. rows."""

    def __init__(self, labels: Sequence[str], values):
        values = np.asarray(values, dtype=float)
        labels = [str(x) for x in labels]
        if values.ndim != 2:
            values = values.reshape(-1, len(labels))
        if values.shape[1] != len(labels):
            raise ValidationError(
                f"{values.shape[1]} columns but {len(labels)} labels"
            )
        if len(set(labels)) != len(labels):
            raise ValidationError("column labels must be unique")
        if not np.all(np.isfinite(values)):
            raise ValidationError("dataset contains missing or non-finite entries")
        self.labels = labels
        self.values = values
        self._index = {lab: i for i, lab in enumerate(labels)}

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def col(self, c: VertexRef) -> int:
        if isinstance(c, (int, np.integer)):
            if not 0 <= int(c) < self.p:
                raise ValidationError(f"column index {c} out of range")
            return int(c)
        try:
            return self._index[c]
        except KeyError:
            raise ValidationError(f"unknown column {c!r}") from None

    def cols(self, cs: Iterable[VertexRef]) -> list[int]:
        return [self.col(c) for c in cs]

    def select(self, cs: Iterable[VertexRef]) -> "Dataset":
        idx = self.cols(cs)
        return Dataset([self.labels[i] for i in idx], self.values[:, idx])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.labels)
        for row in self.values:
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        """Parse CSV text with a header row; lines starting with ``#`` are skipped."""
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        rows = list(csv.reader(lines))
        rows = [r for r in rows if r]
        if not rows:
            raise ValidationError("empty CSV")
        header = [h.strip() for h in rows[0]]
        try:
            body = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
        except ValueError as exc:
            raise ValidationError(f"non-numeric CSV entry: {exc}") from None
        if body.size == 0:
            body = np.zeros((0, len(header)))
        return cls(header, body)

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, p={self.p})"


def sample(
    sem: LinearSem,
    n: int,
    seed: Union[int, np.random.Generator],
    observed_only: bool = False,
) -> Dataset:
    """Draw ``n`` i.i.d. rows from the SEM.

    Noises are drawn vertex by vertex from one generator, then pushed through
    ``X = M^T eps``. ``n = 0`` yields an empty dataset with all columns.
    """
    if n < 0:
        raise ValidationError("sample size must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    eps = np.column_stack([spec.sample(rng, n) for spec in sem.noise]) if sem.p else np.zeros((n, 0))
    eps = eps.reshape(n, sem.p)
    X = eps @ sem.mixing
    data = Dataset(sem.graph.labels, X)
    if observed_only:
        data = data.select(list(sem.graph.observed))
    return data


def _check_pd(cov: np.ndarray) -> None:
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValidationError("covariance matrix is not positive definite") from None


def partial_correlation(cov, i: int, j: int, S: Iterable[int] = ()) -> float:
    """Partial correlation of ``i`` and ``j`` given ``S`` from a covariance matrix.

    Computed from the inverse of the ``{i, j} + S`` block, which equals
    conditioning the Gaussian by Schur complement.
    """
    cov = np.asarray(cov, dtype=float)
    S = [int(s) for s in S]
    if i == j or i in S or j in S:
        raise ValidationError("i and j must be distinct and outside S")
    idx = [int(i), int(j)] + S
    sub = cov[np.ix_(idx, idx)]
    _check_pd(sub)
    if not S:
        r = sub[0, 1] / math.sqrt(sub[0, 0] * sub[1, 1])
    else:
        P = np.linalg.inv(sub)
        r = -P[0, 1] / math.sqrt(P[0, 0] * P[1, 1])
    return float(np.clip(r, -1.0, 1.0))


def regression_coefficients(cov, y: int, A: Sequence[int]) -> tuple[np.ndarray, float]:
    """Population regression of ``y`` on ``A``: coefficients and residual variance."""
    cov = np.asarray(cov, dtype=float)
    A = list(A)
    if not A:
        return np.zeros(0), float(cov[y, y])
    beta = np.linalg.solve(cov[np.ix_(A, A)], cov[A, y])
    resid = float(cov[y, y] - cov[y, A] @ beta)
    return beta, resid


def tv_smoothness_l_bound(sem: LinearSem, y: VertexRef, A: Iterable[VertexRef]) -> float:
    """Smallest admissible TV-smoothness constant for a Gaussian conditional.

    For jointly Gaussian ``(Y, A)`` the conditional ``Y | A = a`` is normal with
    mean ``beta^T a`` and fixed variance, which gives
    ``L >= 2 phi(0) ||beta||_1 / sqrt(var(Y | A))``.
    """
    if not all(n.is_gaussian for n in sem.noise):
        raise ValidationError("the TV-smoothness bound is only defined for Gaussian noise")
    y = sem.graph.id(y)
    A = list(sem.graph.ids(A))
    beta, resid = regression_coefficients(implied_covariance(sem), y, A)
    if resid <= 0:
        raise ValidationError("var(Y | A) must be positive")
    return float(2 * norm.pdf(0.0) * np.sum(np.abs(beta)) / math.sqrt(resid))


# ---------------------------------------------------------------------------
# coefficient samplers
# ---------------------------------------------------------------------------
def sample_coefficients(
    graph: DirectedGraph,
    rng: np.random.Generator,
    regime: str = "unit",
    low: float = 0.5,
    high: float = 5.0,
) -> np.ndarray:
    """Random coefficients on the edges of ``graph``.

    ``regime="unit"`` draws from uniform ``[-1, 1]``; ``regime="gap"`` draws a
    magnitude from uniform ``[low, high]`` with a random sign. Exact zeros are
    redrawn so that the support always matches the graph.
    """
    A = np.zeros((graph.p, graph.p))
    for s, t in graph.edges:
        while True:
            if regime == "unit":
                a = rng.uniform(-1.0, 1.0)
            elif regime == "gap":
                a = rng.uniform(low, high) * rng.choice((-1.0, 1.0))
            else:
                raise ValidationError(f"unknown coefficient regime {regime!r}")
            if a != 0.0:
                break
        A[s, t] = a
    return A


def random_sem(
    graph: DirectedGraph,
    seed: Union[int, np.random.Generator],
    regime: str = "unit",
    noise: Union[NoiseSpec, Sequence[NoiseSpec]] = NoiseSpec.gaussian(),
    max_radius: float = 0.9,
    low: float = 0.5,
    high: float = 5.0,
) -> LinearSem:
    """SEM on ``graph`` with random coefficients.

    For cyclic graphs the coefficients are rescaled, if needed, until the
    spectral radius drops to ``max_radius``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    A = sample_coefficients(graph, rng, regime, low, high)
    if graph.p:
        radius = float(np.max(np.abs(np.linalg.eigvals(A))))
        if radius >= max_radius:
            A *= max_radius / radius * 0.999
    return LinearSem(graph, A, noise)


def generic_sem(graph: DirectedGraph, seed: int = 0, noise=None) -> LinearSem:
    """A generic non-Gaussian SEM used as a population oracle.

    Coefficient magnitudes lie in ``[0.2, 0.5]`` with random signs and
    exponential noise with random rates, so no accidental cancellation or
    symmetry is expected. Cyclic graphs are rescaled below spectral radius 0.9.
    """
    rng = np.random.default_rng(seed)
    if noise is None:
        noise = [NoiseSpec.exponential(float(rng.uniform(0.7, 1.5))) for _ in range(graph.p)]
    return random_sem(graph, rng, regime="gap", low=0.2, high=0.5, noise=noise)
