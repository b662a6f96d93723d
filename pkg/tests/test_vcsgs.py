import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentcycle.errors import ResourceGuardError, ValidationError
from latentcycle.graph_core import DirectedGraph, random_dag
from latentcycle.sem import LinearSem, NoiseSpec, random_sem, sample
from latentcycle.vcsgs import (
    AMBIGUOUS,
    APPARENT,
    COLLIDER,
    NONCOLLIDER,
    PatternGraph,
    apply_orientation_rules,
    classify_errors,
    conditional_probability_distance,
    conditional_table,
    dag_extensions,
    edge_estimation,
    run_vcsgs,
    tv_violations,
    unshielded_triples,
)


def graph(edges, labels=("X", "Y", "Z")):
    return DirectedGraph.from_labels(list(labels), edges=edges)


def test_oracle_collider_is_oriented():
    g = graph([("X", "Y"), ("Z", "Y")])
    h = run_vcsgs(ci="oracle", truth=g)
    assert h.directed == {("X", "Y"), ("Z", "Y")}
    assert h.triples[("X", "Y", "Z")] == COLLIDER
    assert h.nonadjacent[frozenset(("X", "Z"))] == APPARENT


def test_oracle_chain_stays_undirected():
    g = graph([("X", "Y"), ("Y", "Z")])
    h = run_vcsgs(ci="oracle", truth=g)
    assert not h.directed
    assert h.triples[("X", "Y", "Z")] == NONCOLLIDER
    assert len(h.undirected) == 2


def test_orientation_rule_one_propagates():
    h = PatternGraph(["W", "X", "Y", "Z"], directed={("W", "X")}, undirected={frozenset(("X", "Y"))})
    h.triples[("W", "X", "Y")] = NONCOLLIDER
    assert apply_orientation_rules(h) == 1
    assert h.is_directed("X", "Y")


def test_orientation_rule_two_avoids_cycles():
    h = PatternGraph(
        ["X", "Y", "Z"],
        directed={("X", "Y"), ("Y", "Z")},
        undirected={frozenset(("X", "Z"))},
    )
    apply_orientation_rules(h)
    assert h.is_directed("X", "Z")


def test_unshielded_triples_of_a_path():
    h = PatternGraph(["X", "Y", "Z"], undirected={frozenset(("X", "Y")), frozenset(("Y", "Z"))})
    assert unshielded_triples(h) == [("X", "Y", "Z")]


def test_dag_extensions_respect_noncollider_marks():
    h = PatternGraph(["X", "Y", "Z"], undirected={frozenset(("X", "Y")), frozenset(("Y", "Z"))})
    h.triples[("X", "Y", "Z")] = NONCOLLIDER
    exts = dag_extensions(h)
    # four orientations minus the collider
    assert len(exts) == 3
    h.triples[("X", "Y", "Z")] = AMBIGUOUS
    assert len(dag_extensions(h)) == 4
    assert dag_extensions(h, max_candidates=2) is None


def test_pattern_json_round_trip():
    g = random_dag(5, 2.0, 4)
    h = run_vcsgs(ci="oracle", truth=g)
    back = PatternGraph.from_dict(json.loads(h.to_json()))
    assert back.directed == h.directed
    assert back.undirected == h.undirected
    assert back.triples == h.triples
    assert back.nonadjacent == h.nonadjacent


def test_guards_and_validation():
    g = random_dag(13, 2.0, 0)
    with pytest.raises(ResourceGuardError) as info:
        run_vcsgs(ci="oracle", truth=g)
    assert info.value.flag == "max_vertices"
    with pytest.raises(ValidationError):
        run_vcsgs(ci="oracle")
    with pytest.raises(ValidationError):
        run_vcsgs(ci="bogus", truth=g)


def test_gaussian_mode_on_a_strong_collider():
    g = graph([("X", "Y"), ("Z", "Y")])
    sem = random_sem(g, 0, regime="gap", low=0.8, high=1.2)
    h = run_vcsgs(sample(sem, 5000, 0), ci="gaussian")
    err = classify_errors(h, g)
    assert not (err.kind1 or err.kind2 or err.kind3)
    assert h.directed == {("X", "Y"), ("Z", "Y")}


def test_classify_errors_flags_each_kind():
    g = graph([("X", "Y"), ("Z", "Y")])
    extra = PatternGraph(["X", "Y", "Z"], undirected={frozenset(p) for p in [("X", "Y"), ("Y", "Z"), ("X", "Z")]})
    assert classify_errors(extra, g).kind1
    wrong_mark = PatternGraph(["X", "Y", "Z"], undirected={frozenset(("X", "Y")), frozenset(("Y", "Z"))})
    wrong_mark.triples[("X", "Y", "Z")] = NONCOLLIDER
    assert classify_errors(wrong_mark, g).kind2
    reversed_edge = PatternGraph(["X", "Y", "Z"], directed={("Y", "X")}, undirected={frozenset(("Y", "Z"))})
    assert classify_errors(reversed_edge, g).kind3
    missing = PatternGraph(["X", "Y", "Z"], directed={("X", "Y")})
    report = classify_errors(missing, g)
    assert report.missing_edges == 1
    assert not (report.kind1 or report.kind2 or report.kind3)


def _directed_chain(coef=0.5):
    g = graph([("X", "Y"), ("Y", "Z")])
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 2] = coef
    H = PatternGraph(["X", "Y", "Z"], directed={("X", "Y"), ("Y", "Z")})
    return LinearSem(g, A, NoiseSpec.gaussian()), H


def test_edge_estimation_marks_undirected_vertices_unknown():
    sem, _ = _directed_chain()
    d = sample(sem, 500, 0)
    H = PatternGraph(["X", "Y", "Z"], directed={("X", "Y")}, undirected={frozenset(("Y", "Z"))})
    model = edge_estimation(d, H)
    assert model.is_unknown("Y") and model.is_unknown("Z")
    assert not model.is_unknown("X")
    assert model.reasons["Z"] == "undirected incident edge"


def test_conditional_tables_are_normalised():
    sem, H = _directed_chain()
    d = sample(sem, 4000, 1)
    t = conditional_table(d, "Y", ["X"])
    sums = np.nansum(t.density, axis=0) / t.bins[0]
    filled = ~np.all(np.isnan(t.density), axis=0)
    assert np.allclose(sums[filled], 1.0)


def test_tv_violations_with_tiny_constant():
    sem, H = _directed_chain(0.9)
    d = sample(sem, 4000, 2)
    t = conditional_table(d, "Y", ["X"])
    assert tv_violations(t, 1e-6)
    assert not tv_violations(t, 1e6)


def test_distance_to_itself_is_zero_and_json_works():
    sem, H = _directed_chain()
    d = sample(sem, 2000, 3)
    model = edge_estimation(d, H)
    assert conditional_probability_distance(model, model) == 0.0
    assert conditional_probability_distance(model, sem) > 0.0
    assert json.loads(model.to_json())["vertices"] == ["X", "Y", "Z"]


def test_distance_shrinks_with_more_data():
    sem, H = _directed_chain()
    small = np.mean([conditional_probability_distance(edge_estimation(sample(sem, 300, s), H), sem) for s in range(5)])
    large = np.mean([conditional_probability_distance(edge_estimation(sample(sem, 8000, s), H), sem) for s in range(5)])
    assert large < small


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), p=st.integers(3, 6))
def test_oracle_mode_makes_no_errors(seed, p):
    g = random_dag(p, min(2.0, p - 1), seed)
    h = run_vcsgs(ci="oracle", truth=g)
    err = classify_errors(h, g)
    assert not (err.kind1 or err.kind2 or err.kind3)
    assert err.missing_edges == 0
