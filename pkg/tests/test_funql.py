import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (TABLE_M, TABLE_M1, TABLE_M2, TABLE_M3, all_subtrees, oracle_compose,
                     oracle_part_of, oracle_substitute, oracle_type, random_mr)
from segparse.errors import CompositionError, MalformedMr, MrTypeError, TargetNotFound
from segparse.funql import (
    anonymize_mr,
    canonical_equal,
    compose,
    denotation_type,
    entity_literals,
    find_ghost_entities,
    fn,
    is_part_of,
    lit,
    mr_symbols,
    parse_mr,
    parse_signature_table,
    placeholder,
    serialize_mr,
    skeleton,
    substitute_mr,
    symbols_to_mr,
    type_or_none,
)

mr_trees = st.builds(lambda seed: random_mr(random.Random(seed)), st.integers(0, 10**9))


# -- text format ------------------------------------------------------------

def test_parse_serialize_example():
    m = parse_mr(TABLE_M)
    assert serialize_mr(m) == TABLE_M
    assert m.size() == 7


def test_double_quotes_and_spaces_normalize():
    a = parse_mr(TABLE_M)
    b = parse_mr('count( river( traverse_2( state( next_to_2( stateid("colorado") ) ) ) ) )')
    assert canonical_equal(a, b)


def test_single_node_perturbation_is_unequal():
    a = parse_mr(TABLE_M)
    b = parse_mr(TABLE_M.replace("traverse_2", "traverse_1"))
    assert not canonical_equal(a, b)


@pytest.mark.parametrize("text", [
    "count(river(traverse_2(state_0))",    # unbalanced
    "count(river,state_0)",               # arity
    "frobnicate(state_0)",                # unknown symbol
    "count()",
    "",
])
def test_malformed(text):
    with pytest.raises(MalformedMr):
        parse_mr(text)


def test_quoted_literal_with_escape_roundtrips():
    m = fn("cityid", lit("coeur d'alene"), lit("id"))
    assert parse_mr(serialize_mr(m)) == m


@given(mr_trees)
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(m):
    assert canonical_equal(parse_mr(serialize_mr(m)), m)
    assert symbols_to_mr(mr_symbols(m)) == m


# -- typing -----------------------------------------------------------------

@pytest.mark.parametrize("text,tag", [
    (TABLE_M1, "$state$"),
    (TABLE_M2, "$river$"),
    (TABLE_M3, "$num$"),
    ("largest(city(loc_2(state_0)))", "$city$"),
    ("elevation_2(100)", "$place$"),
])
def test_denotation_type(text, tag):
    assert denotation_type(parse_mr(text)) == tag


def test_type_errors():
    with pytest.raises(MrTypeError):
        denotation_type(parse_mr("elevation_2(state_0)"))
    with pytest.raises(MrTypeError):
        denotation_type(lit("colorado"))


def test_signature_table_validation():
    with pytest.raises(ValueError):
        parse_signature_table("foo\t$planet$\t$state$\n")
    with pytest.raises(ValueError):
        parse_signature_table("foo\t\t=\n")


@given(mr_trees)
@settings(max_examples=200, deadline=None)
def test_type_matches_oracle(m):
    assert denotation_type(m) == oracle_type(m)
    for _, s in all_subtrees(m):
        assert type_or_none(s) == oracle_type(s)


# -- part-of and substitution -------------------------------------------------

def test_is_part_of_examples():
    whole = parse_mr(TABLE_M)
    assert is_part_of(parse_mr(TABLE_M1), whole)
    assert is_part_of(whole, whole)
    assert not is_part_of(parse_mr("state(traverse_2(stateid('colorado')))"), whole)


def test_placeholder_in_part_matches_typed_subtree():
    whole = parse_mr(TABLE_M)
    assert is_part_of(parse_mr(TABLE_M2), whole)
    assert is_part_of(parse_mr(TABLE_M3), whole)
    assert not is_part_of(parse_mr("river(traverse_2($city$))"), whole)


def test_substitute_examples():
    whole = parse_mr(TABLE_M)
    out = substitute_mr(whole, parse_mr(TABLE_M1), placeholder("$state$"))
    assert serialize_mr(out) == "count(river(traverse_2($state$)))"
    assert substitute_mr(whole, whole, placeholder("$num$")) == placeholder("$num$")
    with pytest.raises(TargetNotFound):
        substitute_mr(whole, parse_mr("state_0"), placeholder("$state$"))


def test_substitute_is_leftmost():
    whole = parse_mr("exclude(state(state_0),state(state_0))")
    out = substitute_mr(whole, parse_mr("state(state_0)"), placeholder("$state$"))
    assert serialize_mr(out) == "exclude($state$,state(state_0))"


@given(mr_trees, st.data())
@settings(max_examples=200, deadline=None)
def test_part_of_and_substitute_against_oracles(m, data):
    subs = all_subtrees(m)
    _, s = data.draw(st.sampled_from(subs))
    assert is_part_of(s, m) and oracle_part_of(s, m)
    tag = oracle_type(s)
    if tag is None:
        return
    p = placeholder(tag)
    reduced = substitute_mr(m, s, p)
    assert reduced == oracle_substitute(m, s, p)
    if sum(node == s for _, node in subs) == 1 and sum(node == p for _, node in subs) == 0:
        assert substitute_mr(reduced, p, s) == m


# -- ghosts -------------------------------------------------------------------

def test_ghost_examples():
    m = parse_mr(TABLE_M1)
    assert find_ghost_entities(m, ["the", "states", "bordering"]) == ["colorado"]
    assert find_ghost_entities(m, ["the", "states", "bordering", "Colorado"]) == []
    assert find_ghost_entities(parse_mr("state(next_to_2(state_0))"), ["border", "state_0"]) == []


def test_ghost_multiword_and_partial_mention():
    m = parse_mr("intersection(state(loc_1(cityid('new york',_))),state(next_to_2(state_1)))")
    assert entity_literals(m) == ["new york", "state_1"]
    assert find_ghost_entities(m, "state with new york".split()) == ["state_1"]
    assert find_ghost_entities(m, "york state_1".split()) == ["new york"]


# -- composition --------------------------------------------------------------

def test_compose_running_example():
    parts = [parse_mr(t) for t in (TABLE_M1, TABLE_M2, TABLE_M3)]
    assert compose(parts) == parse_mr(TABLE_M)
    assert compose(parts[:1]) == parts[0]


def test_compose_stack_discipline():
    # two independent partials feed one binary predicate
    parts = [parse_mr("state(state_0)"), parse_mr("river(river_0)"),
             parse_mr("exclude(river(traverse_2($state$)),$river$)")]
    out = compose(parts)
    assert serialize_mr(out) == "exclude(river(traverse_2(state(state_0))),river(river_0))"


def test_compose_missing_slot():
    with pytest.raises(CompositionError):
        compose([parse_mr(TABLE_M1), parse_mr("count($river$)")])
    with pytest.raises(CompositionError):
        compose([])


def test_compose_matches_oracle_on_synthetic(synth_small):
    for inst in synth_small:
        partials = [p for _, p in inst.gold_spans]
        assert compose(partials) == oracle_compose(partials) == inst.mr


# -- anonymization --------------------------------------------------------------

def test_skeleton_and_anonymize():
    m = parse_mr(TABLE_M)
    anon = anonymize_mr(m, {"state_0": "colorado"})
    assert serialize_mr(anon) == "count(river(traverse_2(state(next_to_2(state_0)))))"
    assert skeleton(anon) == skeleton(parse_mr("count(river(traverse_2(state(next_to_2(state_3)))))"))
    assert skeleton(anon) != skeleton(parse_mr("count(river(traverse_2(state(next_to_1(state_0)))))"))
