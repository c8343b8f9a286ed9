import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segparse.errors import GrammarError, SplitError
from segparse.funql import compose, denotation_type, serialize_mr, skeleton
from segparse.synth import (
    GoldParser,
    GoldSegmenter,
    GrammarParser,
    GrammarRule,
    compositional_split,
    generate,
    realize,
)


def test_depth_one_is_whole_utterance(rules):
    for inst in generate(rules, 50, 1, seed=3):
        assert inst.depth == 1
        span, partial = inst.gold_spans[0]
        assert span.is_whole(len(inst.utterance))
        assert partial == inst.mr


def test_deterministic(rules):
    a = generate(rules, 1000, 3, seed=5)
    b = generate(rules, 1000, 3, seed=5)
    assert [(x.utterance, x.mr, x.gold_spans) for x in a] == \
           [(x.utterance, x.mr, x.gold_spans) for x in b]


def test_depths_cover_range(rules):
    depths = {inst.depth for inst in generate(rules, 300, 4, seed=0)}
    assert depths == {1, 2, 3, 4}


@given(st.integers(0, 10**6), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_gold_decomposition_is_consistent(seed, depth):
    from segparse.synth import default_rules
    rules = default_rules()
    grammar = GrammarParser(rules)
    for inst in generate(rules, 5, depth, seed):
        denotation_type(inst.mr)
        assert compose([p for _, p in inst.gold_spans]) == inst.mr
        for utt, (span, partial) in zip(inst.gold_utterances(), inst.gold_spans):
            assert span.is_valid(len(utt))
            # each gold span realizes exactly its partial MR under the grammar
            assert grammar.parse(span.slice(utt)) == partial
        assert inst.gold_spans[-1][0].is_whole(len(inst.gold_utterances()[-1]))


def test_rule_validation():
    with pytest.raises(GrammarError):
        GrammarRule.from_strings("$state$", "state border $river$", "state(next_to_2($state$))")
    with pytest.raises(GrammarError):
        GrammarRule.from_strings("$river$", "state border $state$", "state(next_to_2($state$))")
    with pytest.raises(GrammarError):
        generate([], 5, 1, 0)


def test_unreachable_depth():
    flat = [GrammarRule.from_strings("$state$", "the largest state", "largest(state(all))")]
    with pytest.raises(GrammarError):
        generate(flat, 5, 2, 0)


def test_realize_offsets(rules):
    by_text = {" ".join(r.surface): r for r in rules}
    chain = [by_text["how many $river$"], by_text["river run through $state$"],
             by_text["state border $state$"]]
    inst = realize(chain)
    assert inst.utterance == "how many river run through state border state_0".split()
    assert serialize_mr(inst.mr) == "count(river(traverse_2(state(next_to_2(state_0)))))"
    assert [(s.start, s.end) for s, _ in inst.gold_spans] == [(6, 8), (3, 6), (1, 3)]


def test_compositional_split_properties(rules):
    data = generate(rules, 2000, 3, seed=1)
    train, test = compositional_split(data, 0.2, seed=1)
    train_sk = {skeleton(i.mr) for i in train}
    test_sk = {skeleton(i.mr) for i in test}
    assert not train_sk & test_sk
    assert not {" ".join(i.utterance) for i in train} & {" ".join(i.utterance) for i in test}
    all_sk = {skeleton(i.mr) for i in data}
    assert abs(len(test_sk) / len(all_sk) - 0.2) < 0.02
    assert compositional_split(data, 0.2, seed=1) == (train, test)


def test_split_needs_two_skeletons(rules):
    one = [r for r in rules if " ".join(r.surface) == "the largest state"]
    data = generate(one, 20, 1, seed=0)
    with pytest.raises(SplitError):
        compositional_split(data, 0.5, seed=0)


def test_standard_split_only_separates_utterances():
    from types import SimpleNamespace
    from segparse.funql import parse_mr
    mr = parse_mr("state(next_to_2(state_0))")
    data = [SimpleNamespace(utterance=f"state border state_0 variant {k}".split(), mr=mr)
            for k in range(20)]
    train, test = compositional_split(data, 0.2, seed=2, mode="standard")
    assert len(test) == 4
    assert not {" ".join(i.utterance) for i in train} & {" ".join(i.utterance) for i in test}
    with pytest.raises(SplitError):
        compositional_split(data, 0.2, seed=2)


def test_oracles(synth_small, rules):
    seg, parser = GoldSegmenter(synth_small), GoldParser(synth_small)
    grammar = GrammarParser(rules)
    for inst in synth_small[:50]:
        utts = inst.gold_utterances()
        for utt, (span, partial) in zip(utts, inst.gold_spans):
            assert seg.predict_span(utt) == span
            assert parser.parse_tokens(span.slice(utt)).mr == partial
        assert grammar.parse(inst.utterance) == inst.mr
    assert grammar.parse("river run through".split()) is None
    assert parser.parse_tokens(["unknown"]).parse_failed
