"""Small latent-variable graphs used as fixtures, examples and oracle cases.

Observed vertices come first (ids ``0..n_obs-1``), latents after them. Edge
lists name vertices by label; ``a <-> b`` pairs are written as two edges.
"""

from __future__ import annotations

from typing import Callable

from latentcycle.graph_core import DirectedGraph


def _both(a: str, bs) -> list[tuple[str, str]]:
    out = []
    for b in bs:
        out += [(a, b), (b, a)]
    return out


def _fan(a: str, bs) -> list[tuple[str, str]]:
    return [(a, b) for b in bs]


def _xs(*idx: int, prefix: str = "X") -> list[str]:
    return [f"{prefix}{i}" for i in idx]


def two_factor_six_indicators() -> DirectedGraph:
    """Two latents, both parents of all six indicators."""
    xs = _xs(*range(1, 7))
    return DirectedGraph.from_labels(xs, ["L1", "L2"], _fan("L1", xs) + _fan("L2", xs))


def spider() -> DirectedGraph:
    """Spider model: hub ``L`` over six indicators, each with its own leg latent.

    ``Li -> L`` and ``Li -> Xi`` for every i, plus ``L -> Xi``.
    """
    xs = _xs(*range(1, 7))
    legs = [f"L{i}" for i in range(1, 7)]
    edges = _fan("L", xs)
    for i in range(1, 7):
        edges += [(f"L{i}", "L"), (f"L{i}", f"X{i}")]
    return DirectedGraph.from_labels(xs, ["L"] + legs, edges)


def two_cluster_chain() -> DirectedGraph:
    """``L1 -> L2``; L1 measures X1, X2 and L2 measures X3, X4."""
    return DirectedGraph.from_labels(
        _xs(1, 2, 3, 4),
        ["L1", "L2"],
        [("L1", "L2"), ("L1", "X1"), ("L1", "X2"), ("L2", "X3"), ("L2", "X4")],
    )


def star(n: int = 3) -> DirectedGraph:
    """One latent ``L`` with ``n`` pure children."""
    xs = _xs(*range(1, n + 1))
    return DirectedGraph.from_labels(xs, ["L"], _fan("L", xs))


def cycles_under_one_latent() -> DirectedGraph:
    """``L <-> Xi`` for six indicators: every child also feeds back into L."""
    xs = _xs(*range(1, 7))
    return DirectedGraph.from_labels(xs, ["L"], _both("L", xs))


def confounded_cyclic_cluster() -> DirectedGraph:
    """Cyclic cluster {X3,X4,X5} under L1, with L1, L2, L3 sharing confounders L4, L5."""
    edges = []
    for c in ("L4", "L5"):
        edges += _fan(c, ["L1", "L2", "L3"])
    edges += _fan("L2", ["X1", "X2"]) + _fan("L3", ["X6", "X7"])
    edges += _both("L1", ["X3", "X4", "X5"])
    return DirectedGraph.from_labels(_xs(*range(1, 8)), ["L1", "L2", "L3", "L4", "L5"], edges)


def cyclic_cluster_in_chain() -> DirectedGraph:
    """``L2 -> L1 -> L3`` with the middle latent in a cycle with its children."""
    edges = [("L2", "L1"), ("L1", "L3")]
    edges += _fan("L2", ["X1", "X2"]) + _fan("L3", ["X6", "X7"])
    edges += _both("L1", ["X3", "X4", "X5"])
    return DirectedGraph.from_labels(_xs(*range(1, 8)), ["L1", "L2", "L3"], edges)


def collider_cyclic_cluster() -> DirectedGraph:
    """``L2 -> L1 <- L3`` with the collider latent in a cycle with its children."""
    edges = [("L2", "L1"), ("L3", "L1")]
    edges += _fan("L2", ["X1", "X2"]) + _fan("L3", ["X6", "X7"])
    edges += _both("L1", ["X3", "X4", "X5"])
    return DirectedGraph.from_labels(_xs(*range(1, 8)), ["L1", "L2", "L3"], edges)


def two_block_cycle(reverse: bool = False) -> DirectedGraph:
    """Two 2-latent blocks with edges both ways between them, under a common root L5.

    ``reverse=False`` uses ``L2 -> L4`` and ``L3 -> L1``; ``reverse=True``
    uses ``L1 -> L3`` and ``L4 -> L2`` and lets L5 feed only L1.
    """
    x14, x58 = _xs(1, 2, 3, 4), _xs(5, 6, 7, 8)
    edges = _fan("L1", x14) + _fan("L2", x14) + _fan("L3", x58) + _fan("L4", x58)
    if reverse:
        edges += [("L1", "L3"), ("L4", "L2"), ("L5", "L1")]
    else:
        edges += [("L2", "L4"), ("L3", "L1")]
        edges += _fan("L5", ["L1", "L2", "L3", "L4"])
    edges += _fan("L5", ["X9", "X10"])
    return DirectedGraph.from_labels(
        _xs(*range(1, 11)), ["L1", "L2", "L3", "L4", "L5"], edges
    )


def shared_children_two_latents() -> DirectedGraph:
    """X3..X5 have two latent parents, L0 and L1, with L1 a collider of L2, L3."""
    edges = [("L3", "L1"), ("L2", "L1")]
    edges += _fan("L0", ["X3", "X4", "X5"]) + _fan("L1", ["X3", "X4", "X5"])
    edges += _fan("L2", ["X1", "X2"]) + _fan("L3", ["X6", "X7"])
    return DirectedGraph.from_labels(_xs(*range(1, 8)), ["L0", "L1", "L2", "L3"], edges)


def four_cluster_chain(cyclic: bool = True) -> DirectedGraph:
    """Complete latent DAG ``L1 < L2 < L3 < L4``, three children each.

    With ``cyclic=True`` the children of L3 and L4 also feed back into them.
    """
    edges = [("L1", "L2"), ("L1", "L3"), ("L1", "L4"), ("L2", "L3"), ("L2", "L4"), ("L3", "L4")]
    edges += _fan("L1", _xs(1, 2, 3)) + _fan("L2", _xs(4, 5, 6))
    if cyclic:
        edges += _both("L3", _xs(7, 8, 9)) + _both("L4", _xs(10, 11, 12))
    else:
        edges += _fan("L3", _xs(7, 8, 9)) + _fan("L4", _xs(10, 11, 12))
    return DirectedGraph.from_labels(_xs(*range(1, 13)), ["L1", "L2", "L3", "L4"], edges)


def three_cluster_chain() -> DirectedGraph:
    """A 2-latent root block {L1, L2} over two cyclic single-latent clusters."""
    x14 = _xs(1, 2, 3, 4)
    edges = _fan("L1", x14 + ["L3", "L4"]) + _fan("L2", x14 + ["L3", "L4"])
    edges += [("L3", "L4")]
    edges += _both("L3", _xs(5, 6, 7)) + _both("L4", _xs(8, 9, 10))
    return DirectedGraph.from_labels(_xs(*range(1, 11)), ["L1", "L2", "L3", "L4"], edges)


def nested_block_cycles() -> DirectedGraph:
    """Two pairs of 2-latent blocks, each pair joined by a block cycle.

    L1 (children X1, X2) is the root of everything. Blocks {L3,L4} and {L5,L6}
    form one cyclic pair (``L5 -> L3``, ``L4 -> L6``); {L7,L8} and {L9,L10}
    form the other (``L9 -> L7``, ``L8 -> L10``). Every block latent feeds L2,
    whose children are Y9 and Y10.
    """
    xs = _xs(1, 2, 6, 7, 8, 9, 10, 11, 12, 13)
    ys = _xs(*range(1, 11), prefix="Y")
    latents = [f"L{i}" for i in range(1, 11)]
    edges = _fan("L1", ["X1", "X2"] + [f"L{i}" for i in range(3, 11)])
    edges += _fan("L2", ["Y9", "Y10"])
    for lat, kids in (
        (("L3", "L4"), _xs(6, 7, 8, 9)),
        (("L5", "L6"), _xs(10, 11, 12, 13)),
        (("L7", "L8"), _xs(1, 2, 3, 4, prefix="Y")),
        (("L9", "L10"), _xs(5, 6, 7, 8, prefix="Y")),
    ):
        for lt in lat:
            edges += _fan(lt, kids)
    edges += [("L5", "L3"), ("L4", "L6"), ("L9", "L7"), ("L8", "L10")]
    edges += [(f"L{i}", "L2") for i in range(3, 11)]
    return DirectedGraph.from_labels(xs + ys, latents, edges)


def odd_order_counterexample() -> DirectedGraph:
    """Two roots L1, L2 meeting in L3; the standard odd-order tensor counterexample.

    Endpoint sets: S1 = {X5, X6}, S2 = {X3, X4}, S3 = {X1, X2}; see
    :data:`ODD_ORDER_SETS`.
    """
    edges = _fan("L1", ["X1", "X3", "L3"]) + _fan("L2", ["X2", "X4", "L3"])
    edges += _fan("L3", ["X5", "X6"])
    return DirectedGraph.from_labels(_xs(*range(1, 7)), ["L1", "L2", "L3"], edges)


ODD_ORDER_SETS = (("X5", "X6"), ("X3", "X4"), ("X1", "X2"))


def tetrad_star() -> DirectedGraph:
    """One latent with four children: the classic vanishing-tetrad case."""
    return star(4)


CATALOG: dict[str, Callable[[], DirectedGraph]] = {
    "two_factor_six_indicators": two_factor_six_indicators,
    "spider": spider,
    "two_cluster_chain": two_cluster_chain,
    "star3": star,
    "tetrad_star": tetrad_star,
    "cycles_under_one_latent": cycles_under_one_latent,
    "confounded_cyclic_cluster": confounded_cyclic_cluster,
    "cyclic_cluster_in_chain": cyclic_cluster_in_chain,
    "collider_cyclic_cluster": collider_cyclic_cluster,
    "two_block_cycle": two_block_cycle,
    "two_block_cycle_reverse": lambda: two_block_cycle(reverse=True),
    "shared_children_two_latents": shared_children_two_latents,
    "four_cluster_chain": four_cluster_chain,
    "four_cluster_chain_acyclic": lambda: four_cluster_chain(cyclic=False),
    "three_cluster_chain": three_cluster_chain,
    "nested_block_cycles": nested_block_cycles,
    "odd_order_counterexample": odd_order_counterexample,
}


def get(name: str) -> DirectedGraph:
    """Look up a catalogue graph by name."""
    try:
        return CATALOG[name]()
    except KeyError:
        raise KeyError(f"unknown reference graph {name!r}; known: {sorted(CATALOG)}") from None
