"""Cumulant tensors, the combinatorial hyperdeterminant and the tensor constraint.

The hyperdeterminant of an order-``k`` tensor ``T`` with extent ``n`` on every
axis is

    sum over permutations s_2..s_k of  sgn(s_2)...sgn(s_k) * prod_i T[i, s_2(i), ..., s_k(i)].

For ``k = 2`` this is the ordinary determinant. For odd ``k`` the value is not
invariant under reordering the axes, which is exactly what
:func:`odd_dim_axis_sensitivity` demonstrates.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from latentcycle.errors import ResourceGuardError, ValidationError
from latentcycle.graph_core import MAX_KTREK_SEARCH, every_ktrek_system_has_sided_intersection

#: Largest extent for which the permutation expansion is attempted when k >= 3.
MAX_HYPERDET_N = 5
#: Largest extent for the explicit expansion when k == 2 (LU is used beyond).
MAX_DET_EXPANSION_N = 8


class CumulantTensor:
    """Dense order-``k`` tensor with a label list per axis.

    Parameters
    ----------
    values : array_like
        Array of shape ``(n,) * k``.
    labels : sequence of sequence of str
        ``labels[a][i]`` names the variable at index ``i`` along axis ``a``.
    """

    def __init__(self, values, labels: Sequence[Sequence[str]]):
        values = np.asarray(values, dtype=float)
        labels = [list(map(str, ax)) for ax in labels]
        if values.ndim != len(labels):
            raise ValidationError("need one label list per axis")
        for ax, labs in enumerate(labels):
            if len(labs) != values.shape[ax]:
                raise ValidationError(f"axis {ax}: {len(labs)} labels for extent {values.shape[ax]}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("tensor entries must be finite")
        self.values = values
        self.labels = labels

    @property
    def order(self) -> int:
        return self.values.ndim

    @property
    def dim(self) -> int:
        return self.values.shape[0] if self.values.ndim else 0

    def index(self, axis: int, item) -> int:
        if isinstance(item, (int, np.integer)):
            return int(item)
        try:
            return self.labels[axis].index(str(item))
        except ValueError:
            raise ValidationError(f"label {item!r} not on axis {axis}") from None

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "dim": self.dim,
            "labels": self.labels,
            "values": [float(x) for x in self.values.ravel(order="C")],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "CumulantTensor":
        shape = tuple(len(ax) for ax in d["labels"])
        return cls(np.array(d["values"], dtype=float).reshape(shape), d["labels"])

    def __repr__(self) -> str:
        return f"CumulantTensor(order={self.order}, shape={self.values.shape})"


def subtensor(t: CumulantTensor, S: Sequence[Sequence]) -> CumulantTensor:
    """Restrict axis ``i`` of ``t`` to the items of ``S[i]``, keeping their order.

    Items may be integer positions or axis labels.
    """
    if len(S) != t.order:
        raise ValidationError(f"need {t.order} index sets, got {len(S)}")
    sizes = {len(s) for s in S}
    if len(sizes) != 1:
        raise ValidationError("all index sets must have the same size")
    idx = [[t.index(ax, item) for item in s] for ax, s in enumerate(S)]
    for ax, ii in enumerate(idx):
        if any(not 0 <= i < t.values.shape[ax] for i in ii):
            raise ValidationError(f"index out of range on axis {ax}")
    values = t.values[np.ix_(*idx)]
    labels = [[t.labels[ax][i] for i in ii] for ax, ii in enumerate(idx)]
    return CumulantTensor(values, labels)


@lru_cache(maxsize=None)
def _perms_with_signs(n: int) -> tuple[np.ndarray, np.ndarray]:
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp).reshape(-1, n)
    signs = np.empty(len(perms))
    for r, perm in enumerate(perms):
        # parity from the cycle decomposition
        seen = [False] * n
        sign = 1.0
        for i in range(n):
            if not seen[i]:
                j, length = i, 0
                while not seen[j]:
                    seen[j] = True
                    j = perm[j]
                    length += 1
                if length % 2 == 0:
                    sign = -sign
        signs[r] = sign
    return perms, signs


def hyperdeterminant(t, max_n: int = MAX_HYPERDET_N) -> float:
    """Combinatorial hyperdeterminant by direct permutation expansion.

    Parameters
    ----------
    t : CumulantTensor or ndarray
    max_n : int
        Guard on the extent when the order is 3 or more; the cost grows like
        ``(n!)^(k-1) * n``.

    Returns
    -------
    float

    Notes
    -----
    The summation runs over ``s_2`` in the outer loop and over the remaining
    permutations in a fixed vectorised order, so results are bit-reproducible.
    For ``k = 2`` and ``n > 8`` the LU determinant is used instead.
    """
    T = t.values if isinstance(t, CumulantTensor) else np.asarray(t, dtype=float)
    k = T.ndim
    if k < 2:
        raise ValidationError("hyperdeterminant needs order >= 2")
    n = T.shape[0]
    if any(s != n for s in T.shape):
        raise ValidationError("all axes must have the same extent")
    if n == 0:
        return 1.0
    if k == 2 and n > MAX_DET_EXPANSION_N:
        return float(np.linalg.det(T))
    if k >= 3 and n > max_n:
        raise ResourceGuardError(f"hyperdeterminant of extent {n} and order {k}", max_n, "max_n")
    perms, signs = _perms_with_signs(n)
    rows = np.arange(n)
    total = 0.0
    if k == 2:
        prods = np.prod(T[rows, perms], axis=1)
        return float(np.sum(signs * prods))
    # outer loop over sigma_2, vectorise the rest
    rest = k - 2
    grids = np.meshgrid(*([np.arange(len(perms))] * rest), indexing="ij")
    combos = [g.ravel() for g in grids]
    rest_sign = np.prod([signs[c] for c in combos], axis=0)
    rest_idx = [perms[c] for c in combos]  # each (m, n)
    for r2 in range(len(perms)):
        idx = (rows[None, :], perms[r2][None, :]) + tuple(rest_idx)
        prods = np.prod(T[idx], axis=1)
        total += signs[r2] * float(np.sum(rest_sign * prods))
    return float(total)


@dataclass
class TensorCheck:
    """Outcome of comparing the graphical and numeric sides of the tensor constraint."""

    graphical: bool
    numeric_det: float
    tolerance: float
    consistent: bool

    @property
    def numeric_zero(self) -> bool:
        return abs(self.numeric_det) < self.tolerance

    def to_dict(self) -> dict:
        return {
            "graphical": self.graphical,
            "numeric_det": self.numeric_det,
            "numeric_zero": self.numeric_zero,
            "tolerance": self.tolerance,
            "consistent": self.consistent,
        }


def zero_tolerance(sub: np.ndarray, rel: float = 1e-9) -> float:
    """Tolerance for an identically-zero population determinant."""
    n = sub.shape[0] if sub.ndim else 0
    return rel * (1.0 + float(np.max(np.abs(sub))) ** n) if sub.size else rel


def tensor_constraint_check(
    sem,
    S: Sequence[Sequence],
    len_cap: Optional[int] = None,
    rel_tol: float = 1e-9,
    max_search: int = MAX_KTREK_SEARCH,
    max_n: int = MAX_HYPERDET_N,
) -> TensorCheck:
    """Compare the k-trek criterion with the population hyperdeterminant.

    ``graphical`` is true when every k-trek system between the sets has a
    sided intersection; the theory says this should coincide with a vanishing
    determinant. ``consistent`` records whether it does. The flag is reported,
    not asserted, because the biconditional can fail for odd ``k``.
    """
    from latentcycle.sem import implied_cumulant_tensor

    k = len(S)
    if k < 2:
        raise ValidationError("need at least two endpoint sets")
    g = sem.graph
    sets = [list(g.ids(s)) for s in S]
    observed = set(g.observed)
    if any(v not in observed for s in sets for v in s):
        raise ValidationError("endpoint sets must contain observed vertices only")
    graphical = every_ktrek_system_has_sided_intersection(g, sets, len_cap, max_search)
    full = implied_cumulant_tensor(sem, k)
    sub = subtensor(full, sets)
    det = hyperdeterminant(sub, max_n)
    tol = zero_tolerance(sub.values, rel_tol)
    return TensorCheck(graphical, det, tol, graphical == (abs(det) < tol))


def axis_rotations(S: Sequence) -> list[tuple[int, ...]]:
    """The cyclic rotations of ``range(len(S))``."""
    k = len(S)
    return [tuple((r + i) % k for i in range(k)) for r in range(k)]


def odd_dim_axis_sensitivity(sem, S: Sequence[Sequence], names: Optional[Sequence[str]] = None) -> dict:
    """Hyperdeterminant of the order-3 subtensor for each rotation of the sets.

    Returns
    -------
    dict
        Maps a key such as ``"S2,S3,S1"`` (the sets in axis order) to the
        numeric determinant.
    """
    from latentcycle.sem import implied_cumulant_tensor

    if len(S) != 3:
        raise ValidationError("axis sensitivity is defined for three sets")
    names = list(names) if names is not None else [f"S{i + 1}" for i in range(3)]
    g = sem.graph
    sets = [list(g.ids(s)) for s in S]
    full = implied_cumulant_tensor(sem, 3)
    out = {}
    for rot in axis_rotations(sets):
        key = ",".join(names[i] for i in rot)
        out[key] = hyperdeterminant(subtensor(full, [sets[i] for i in rot]))
    return out


def sample_cumulant_tensor(data, columns: Sequence, k: int) -> CumulantTensor:
    """Plug-in order-``k`` cumulant tensor of the chosen columns."""
    from latentcycle.stats_tests import sample_cumulant

    idx = data.cols(columns)
    labs = [data.labels[i] for i in idx]
    n = len(idx)
    vals = np.zeros((n,) * k)
    for pos in itertools.combinations_with_replacement(range(n), k):
        c = sample_cumulant(data, [idx[i] for i in pos])
        for perm in set(itertools.permutations(pos)):
            vals[perm] = c
    return CumulantTensor(vals, [labs] * k)
