import random
import zlib

import pytest

from oracles import TABLE_M, TABLE_M1, TABLE_M2, TABLE_M3, TABLE_Q, all_subtrees, oracle_type
from segparse.dataset import Instance, from_synth
from segparse.decoding import DecodeResult
from segparse.funql import (find_ghost_entities, fn, is_part_of, lit, parse_mr, placeholder,
                            serialize_mr, substitute_mr)
from segparse.pseudo import (ParseCache, PseudoSignal, best_span, derive_all, derive_signals,
                             good_spans, has_ghost, load_signals, save_signals)
from segparse.spans import Span
from segparse.synth import GrammarParser, generate


class DictParser:
    """Stub parser answering from a fixed table; counts how often it is called."""

    def __init__(self, table):
        self.table = {tuple(k.split()): parse_mr(v) for k, v in table.items()}
        self.calls = 0

    def parse_batch(self, token_lists, beam=1):
        self.calls += len(token_lists)
        return [DecodeResult([], 0.0, self.table.get(tuple(t))) for t in token_lists]

    def parse_tokens(self, tokens, beam=1):
        return self.parse_batch([tokens], beam)[0]


RUNNING = DictParser({
    "the states bordering colorado": TABLE_M1,
    "the states bordering": TABLE_M1,                       # ghost: colorado unmentioned
    "run through the states bordering colorado": "state(traverse_2(stateid('colorado')))",
    "rivers run through $state$": TABLE_M2,
    "how many $river$": TABLE_M3,
    "states bordering colorado": "state(next_to_2(stateid('colorado')))",
})


def running_instance():
    return Instance(list(TABLE_Q), parse_mr(TABLE_M))


def test_good_and_flagged_spans():
    good, flagged = good_spans(running_instance(), RUNNING)
    assert (Span(6, 9), parse_mr(TABLE_M1)) in good
    assert (Span(7, 9), parse_mr(TABLE_M1)) in good
    assert all(s != Span(4, 9) for s, _ in good + flagged)      # parse is not part of M
    assert [s for s, _ in flagged] == [Span(6, 8)]


def test_best_span_running_example():
    sig = best_span(running_instance(), RUNNING)
    # "states bordering colorado" is shorter and also good
    assert sig.best_span == Span(7, 9)
    strict = DictParser({k: v for k, v in
                         [(" ".join(k), serialize_mr(v)) for k, v in RUNNING.table.items()]
                         if k != "states bordering colorado"})
    sig = best_span(running_instance(), strict)
    assert sig.best_span == Span(6, 9)
    assert sig.partial_mr == parse_mr(TABLE_M1)
    assert " ".join(sig.reduced_utterance) == "how many rivers run through $state$"
    assert serialize_mr(sig.reduced_mr) == "count(river(traverse_2($state$)))"


def test_no_good_span_gives_whole_utterance():
    inst = running_instance()
    sig = best_span(inst, DictParser({}))
    assert sig.is_whole and sig.partial_mr == inst.mr
    assert sig.reduced_utterance == inst.utterance and sig.reduced_mr == inst.mr


def test_leftmost_tie():
    inst = Instance(["a", "state_0", "c", "state_0"],
                    parse_mr("exclude(state(state_0),state(state_0))"))
    parser = DictParser({"a state_0": "state(state_0)", "c state_0": "state(state_0)"})
    sig = best_span(inst, parser)
    assert sig.best_span == Span(1, 2)
    assert serialize_mr(sig.reduced_mr) == "exclude($state$,state(state_0))"


def test_recursive_derivation_running_example():
    table = {" ".join(k): serialize_mr(v) for k, v in RUNNING.table.items()}
    del table["states bordering colorado"]
    parser = DictParser(table)
    [chain] = derive_signals([running_instance()], parser)
    assert [s.best_span for s in chain] == [Span(6, 9), Span(3, 6), Span(1, 3)]
    assert [s.level for s in chain] == [1, 2, 3]
    assert chain[-1].is_whole and chain[-1].partial_mr == parse_mr(TABLE_M3)
    signals, derived = derive_all([running_instance()], parser)
    assert len(signals) == 3
    assert (["the", "states", "bordering", "colorado"], parse_mr(TABLE_M1)) in derived
    assert ("rivers run through $state$".split(), parse_mr(TABLE_M2)) in derived
    assert ("how many $river$".split(), parse_mr(TABLE_M3)) in derived
    # the last reduced pair equals the closing whole pair; kept once
    assert len(derived) == len({(tuple(t), m) for t, m in derived}) == 4
    single, _ = derive_all([running_instance()], parser, recurse=False)
    assert len(single) == 1


def test_atomic_instance():
    inst = Instance("how many $river$".split(), parse_mr(TABLE_M3))
    signals, derived = derive_all([inst], DictParser({}))
    assert signals == [(inst.utterance, Span(1, 3))]
    assert derived == [(inst.utterance, inst.mr)]


def test_ghost_placeholder_is_flagged():
    assert has_ghost(parse_mr("river(traverse_2($state$))"), ["rivers", "run", "through"])
    assert not has_ghost(parse_mr("river(traverse_2($state$))"), ["through", "$state$"])
    assert has_ghost(parse_mr("exclude($state$,$state$)"), ["$state$", "and"])


# -- brute-force oracle ----------------------------------------------------------

class NoisyParser:
    """Deterministic junk: for each span, a subtree of some MR, possibly ghosted."""

    def __init__(self, pool):
        self.pool = pool

    def parse_batch(self, token_lists, beam=1):
        out = []
        for toks in token_lists:
            rng = random.Random(zlib.crc32(" ".join(toks).encode()))
            m = rng.choice(self.pool)
            subs = [s for _, s in all_subtrees(m)]
            pick = rng.choice(subs + [None, lit("state_0"), fn("state", lit("state_9"))])
            out.append(DecodeResult([], 0.0, pick))
        return out

    def parse_tokens(self, tokens, beam=1):
        return self.parse_batch([tokens])[0]


def oracle_signal(tokens, mr, parser):
    n, best = len(tokens), None
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            if j - i + 1 >= n:
                continue
            piece = tokens[i - 1:j]
            m = parser.parse_tokens(piece).mr
            if m is None or m.kind != "function":
                continue
            tag = oracle_type(m)
            if tag is None or tag == "$num$":
                continue
            if not any(s == m for _, s in all_subtrees(mr)):
                continue
            if find_ghost_entities(m, piece) or \
                    any(piece.count(p) < serialize_mr(m).count(p) for p in
                        ("$state$", "$city$", "$river$", "$place$", "$mountain$", "$lake$")):
                continue
            key = (j - i + 1, i)
            if best is None or key < best[0]:
                best = (key, Span(i, j), m)
    return best


@pytest.mark.parametrize("parser_kind", ["grammar", "noisy"])
def test_best_span_agrees_with_brute_force(rules, parser_kind):
    data = [from_synth(i) for i in generate(rules, 300, 3, seed=21)]
    parser = GrammarParser(rules) if parser_kind == "grammar" else \
        NoisyParser([i.mr for i in data[:40]])
    cache = ParseCache(parser)
    for inst in data:
        sig = best_span(inst, parser, cache=cache)
        ref = oracle_signal(inst.utterance, inst.mr, parser)
        if ref is None:
            assert sig.is_whole
        else:
            assert (sig.best_span, sig.partial_mr) == (ref[1], ref[2])


def test_signal_invariants_and_termination(rules):
    data = [from_synth(i) for i in generate(rules, 400, 4, seed=4)]
    chains = derive_signals(data, GrammarParser(rules))
    for inst, chain in zip(data, chains):
        assert len(chain) <= len(inst.utterance)
        assert chain[-1].is_whole
        for sig in chain:
            if sig.is_whole:
                continue
            assert is_part_of(sig.partial_mr, inst.mr) or sig.level > 1
            assert not find_ghost_entities(sig.partial_mr, sig.best_span.slice(sig.utterance))
            p = placeholder(oracle_type(sig.partial_mr))
            assert substitute_mr(sig.reduced_mr, p, sig.partial_mr) == \
                (inst.mr if sig.level == 1 else chain[sig.level - 2].reduced_mr)
            assert len(sig.reduced_utterance) == len(sig.utterance) - sig.best_span.length + 1


def test_cache_parses_each_span_once(rules):
    data = [from_synth(i) for i in generate(rules, 200, 3, seed=8)]
    counting = DictParser({})
    derive_signals(data + data, counting)
    distinct = {tuple(s.slice(i.utterance)) for i in data
                for s in [Span(a, b) for a in range(1, len(i.utterance) + 1)
                          for b in range(a + 1, len(i.utterance) + 1)]
                if s.length < len(i.utterance)}
    assert counting.calls == len(distinct)


def test_signal_jsonl_roundtrip(tmp_path, rules):
    data = [from_synth(i) for i in generate(rules, 50, 3, seed=2)]
    chains = derive_signals(data, GrammarParser(rules))
    save_signals(chains, tmp_path / "a.jsonl")
    again = load_signals(tmp_path / "a.jsonl")
    flat = [s for c in chains for s in c]
    assert [s.to_json() for s in again] == [s.to_json() for s in flat]
    assert isinstance(again[0], PseudoSignal)
