import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentcycle import reference_graphs as rg
from latentcycle.errors import ResourceGuardError, ValidationError
from latentcycle.latent_discovery import (
    CausalCluster,
    DiscoveryResult,
    GraphOracle,
    PartialCausalOrder,
    PopulationBackend,
    _merge_overlapping,
    discover,
    evaluate,
    find_causal_cyclic_clusters,
    oracle_discover,
    true_structure,
)
from latentcycle.sem import NoiseSpec, generic_sem, random_sem

ORACLE_GRAPHS = [
    "two_cluster_chain",
    "confounded_cyclic_cluster",
    "cyclic_cluster_in_chain",
    "collider_cyclic_cluster",
    "two_block_cycle",
    "three_cluster_chain",
]


def observed(g):
    return [g.label(v) for v in g.observed]


@pytest.mark.parametrize("name", ORACLE_GRAPHS)
def test_oracle_discovery_is_exact(name):
    g = rg.get(name)
    m = evaluate(oracle_discover(g), g)
    assert m.exact, m.to_dict()


def test_two_cluster_chain_by_hand():
    res = oracle_discover(rg.two_cluster_chain())
    members = sorted(c.members for c in res.clusters)
    assert members == [("X1", "X2"), ("X3", "X4")]
    pairs = res.ordered_pairs()
    assert ("X1", "X3") in pairs and ("X3", "X1") not in pairs


@pytest.mark.parametrize("name", ["confounded_cyclic_cluster", "cyclic_cluster_in_chain"])
def test_cyclic_flags_carry_their_provenance(name):
    res = oracle_discover(rg.get(name))
    cyc = [c for c in res.clusters if c.cyclic]
    assert len(cyc) == 1
    assert set(cyc[0].members) == {"X3", "X4", "X5"}
    assert cyc[0].provenance in ("gin", "rank_cycle")
    assert all(c.provenance == "rank" for c in res.clusters if not c.cyclic)


def test_population_backend_matches_the_oracle():
    g = rg.cyclic_cluster_in_chain()
    sem = random_sem(g, 3, regime="gap", noise=NoiseSpec.exponential(1.0))
    m = evaluate(discover(PopulationBackend(sem), observed(g)), g)
    assert m.exact, m.to_dict()


def test_no_cluster_sits_in_two_strata():
    res = oracle_discover(rg.four_cluster_chain())
    flat = [n for s in res.order.strata for n in s]
    assert len(flat) == len(set(flat)) == len(res.clusters)


def test_block_cycle_is_reported():
    g = rg.two_block_cycle()
    res = oracle_discover(g)
    truth = true_structure(g)
    assert truth.order.block_cycles
    assert len(res.order.block_cycles) == len(truth.order.block_cycles)


def test_both_latent_rules_run():
    g = rg.confounded_cyclic_cluster()
    for rule in ("floor", "ceil"):
        res = oracle_discover(g, latent_rule=rule)
        assert all(c.latent_count >= 1 for c in res.clusters)
    with pytest.raises(ValidationError):
        oracle_discover(g, latent_rule="round")


def test_guards_and_validation():
    g = rg.nested_block_cycles()
    with pytest.raises(ResourceGuardError) as info:
        find_causal_cyclic_clusters(GraphOracle(g), observed(g), max_observed=10)
    assert info.value.flag == "max_observed"
    with pytest.raises(ResourceGuardError) as info:
        discover(GraphOracle(g), observed(g), max_blocks=1)
    assert info.value.flag == "max_blocks"
    with pytest.raises(ValidationError):
        discover(GraphOracle(g), observed(g), mode="magic")
    with pytest.raises(ValidationError):
        find_causal_cyclic_clusters(GraphOracle(g), ["X1", "X1"])


def test_discovery_result_json_round_trip():
    res = oracle_discover(rg.four_cluster_chain())
    back = DiscoveryResult.from_json(res.to_json())
    assert back.to_dict() == res.to_dict()
    assert evaluate(back, res).exact


def test_from_dict_rejects_unknown_block():
    d = {"clusters": [{"members": ["X1", "X2"]}], "order": [["L(zz)"]]}
    with pytest.raises(ValidationError):
        DiscoveryResult.from_dict(d)


def _result(clusters, strata=(), cycles=()):
    cs = [CausalCluster(tuple(m), 1, cyc, "test", f"c{i + 1}") for i, (m, cyc) in enumerate(clusters)]
    rel = set()
    for i, a in enumerate(strata):
        for b in strata[i + 1 :]:
            rel |= {(x, y) for x in a for y in b}
    return DiscoveryResult(cs, PartialCausalOrder([list(s) for s in strata], rel, [list(c) for c in cycles]))


def test_split_cluster_keeps_precision_and_loses_recall():
    truth = _result([(("A", "B", "C", "D"), False)])
    found = _result([(("A", "B"), False), (("C", "D"), False)])
    m = evaluate(found, truth)
    # true pairs: 6; found pairs AB, CD both correct
    assert m.cluster_precision == 1.0
    assert m.cluster_recall == pytest.approx(2 / 6)


def test_missed_cycles_give_zero_recall_and_undefined_precision():
    truth = _result([(("A", "B"), True), (("C", "D"), False)])
    found = _result([(("A", "B"), False), (("C", "D"), False)])
    m = evaluate(found, truth)
    assert m.cyclic_recall == 0.0
    assert m.cyclic_precision == 1.0
    assert "cyclic_precision" in m.undefined
    assert not m.exact


def test_reversed_order_scores_zero():
    truth = _result([(("A", "B"), False), (("C", "D"), False)], strata=[["c1"], ["c2"]])
    found = _result([(("A", "B"), False), (("C", "D"), False)], strata=[["c2"], ["c1"]])
    m = evaluate(found, truth)
    assert m.latent_order_recall == 0.0 and m.latent_order_precision == 0.0


def test_true_structure_reads_feedback_members():
    truth = true_structure(rg.confounded_cyclic_cluster())
    cyc = [c for c in truth.clusters if c.cyclic]
    assert len(cyc) == 1 and cyc[0].feedback


@settings(max_examples=40, deadline=None)
@given(st.permutations([{"a", "b"}, {"b", "c"}, {"d"}, {"e", "f"}, {"f", "a"}, {"g"}]))
def test_merging_does_not_depend_on_input_order(sets):
    merged = _merge_overlapping([set(s) for s in sets])
    assert sorted(sorted(m) for m in merged) == [["a", "b", "c", "e", "f"], ["d"], ["g"]]


@settings(max_examples=15, deadline=None)
@given(
    name=st.sampled_from(["two_cluster_chain", "confounded_cyclic_cluster", "three_cluster_chain", "spider"]),
    seed=st.integers(0, 1000),
)
def test_oracle_and_population_ranks_agree(name, seed):
    g = rg.get(name)
    pop = PopulationBackend(generic_sem(g, seed))
    orc = GraphOracle(g)
    obs = observed(g)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        perm = list(rng.permutation(obs))
        cut = int(rng.integers(1, len(obs)))
        A, B = perm[:cut], perm[cut:]
        assert pop.rank(A, B) == orc.rank(A, B)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_oracle_and_population_gin_agree_on_two_cluster_chain(seed):
    g = rg.two_cluster_chain()
    pop = PopulationBackend(random_sem(g, seed, regime="gap", noise=NoiseSpec.exponential(1.0)))
    orc = GraphOracle(g)
    obs = observed(g)
    for Y in itertools.combinations(obs, 2):
        rest = [x for x in obs if x not in Y]
        for Z in itertools.chain.from_iterable(itertools.combinations(rest, r) for r in (1, 2)):
            assert pop.gin(list(Z), list(Y)) == orc.gin(list(Z), list(Y)), (Z, Y)
