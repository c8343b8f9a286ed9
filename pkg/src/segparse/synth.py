"""Synthetic GEO-like dataset with known decompositions.

Every rule realizes one typed phrase.  Its surface template holds at most one
slot, written as a placeholder token (``$state$``), and its FunQL template holds
the matching placeholder, so a rule's templates are exactly the reduced
utterance and reduced MR that the segment-and-parse loop sees at that level.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

from .decoding import DecodeResult
from .errors import GrammarError, MrTypeError, SplitError
from .funql import (
    INSERTABLE_TAGS,
    MARKER_TYPES,
    MrNode,
    PLACEHOLDER,
    TYPE_TAGS,
    canonical_equal,
    compose,
    denotation_type,
    iter_subtrees,
    lit,
    parse_mr,
    placeholders,
    replace_at,
    skeleton,
)
from .spans import Span


@dataclass(frozen=True)
class GrammarRule:
    result: str
    surface: tuple[str, ...]
    mr: MrNode

    @classmethod
    def from_strings(cls, result: str, surface: str, mr: str) -> "GrammarRule":
        rule = cls(result, tuple(surface.split()), parse_mr(mr))
        rule.validate()
        return rule

    @property
    def slot(self) -> Optional[str]:
        slots = [t for t in self.surface if t in TYPE_TAGS]
        return slots[0] if slots else None

    @property
    def slot_index(self) -> Optional[int]:
        for i, t in enumerate(self.surface):
            if t in TYPE_TAGS:
                return i
        return None

    def validate(self):
        surface_slots = [t for t in self.surface if t in TYPE_TAGS]
        mr_slots = placeholders(self.mr)
        if len(surface_slots) > 1:
            raise GrammarError(f"rule {' '.join(self.surface)!r} has more than one slot")
        if surface_slots != mr_slots:
            raise GrammarError(
                f"rule {' '.join(self.surface)!r}: surface slots {surface_slots} "
                f"disagree with MR slots {mr_slots}")
        if surface_slots and surface_slots[0] not in INSERTABLE_TAGS:
            raise GrammarError(f"slot type {surface_slots[0]} cannot be filled")
        if len(self.surface) < 2:
            raise GrammarError("a rule must realize at least two tokens")
        try:
            t = denotation_type(self.mr)
        except MrTypeError as e:
            raise GrammarError(f"rule MR does not typecheck: {e}") from e
        if t != self.result:
            raise GrammarError(f"rule MR has type {t}, declared {self.result}")

    def fill(self, filler: MrNode) -> MrNode:
        path = next(p for p, n in iter_subtrees(self.mr) if n.kind == PLACEHOLDER)
        return replace_at(self.mr, path, filler)


_DEFAULT_RULE_TEXT = [
    # questions with numeric answers
    ("$num$", "how many $river$", "count($river$)"),
    ("$num$", "how many $state$", "count($state$)"),
    ("$num$", "how many $city$", "count($city$)"),
    ("$num$", "how many $lake$", "count($lake$)"),
    ("$num$", "how many $mountain$", "count($mountain$)"),
    ("$num$", "what be the population of $state$", "population_1($state$)"),
    ("$num$", "what be the population of $city$", "population_1($city$)"),
    ("$num$", "what be the area of $state$", "area_1($state$)"),
    ("$num$", "how long be $river$", "len($river$)"),
    ("$num$", "how high be $mountain$", "elevation_1($mountain$)"),
    ("$num$", "how high be $place$", "elevation_1($place$)"),
    # states
    ("$state$", "state border $state$", "state(next_to_2($state$))"),
    ("$state$", "state $river$ run through", "state(traverse_1($river$))"),
    ("$state$", "state that contain $city$", "state(loc_1($city$))"),
    ("$state$", "state that have $mountain$", "state(loc_1($mountain$))"),
    ("$state$", "state with $lake$", "state(loc_1($lake$))"),
    ("$state$", "the smallest state that border $state$", "smallest(state(next_to_2($state$)))"),
    ("$state$", "the largest state", "largest(state(all))"),
    # cities
    ("$city$", "city in $state$", "city(loc_2($state$))"),
    ("$city$", "capital of $state$", "capital(loc_2($state$))"),
    ("$city$", "the largest city of $state$", "largest(city(loc_2($state$)))"),
    ("$city$", "city that $river$ cross", "city(traverse_1($river$))"),
    # rivers
    ("$river$", "river run through $state$", "river(traverse_2($state$))"),
    ("$river$", "river that flow through $city$", "river(traverse_2($city$))"),
    ("$river$", "the longest river in $state$", "longest(river(loc_2($state$)))"),
    ("$river$", "the longest river overall", "longest(river(all))"),
    # lakes, mountains, places
    ("$lake$", "lake in $state$", "lake(loc_2($state$))"),
    ("$mountain$", "mountain in $state$", "mountain(loc_2($state$))"),
    ("$mountain$", "the highest mountain of $state$", "highest(mountain(loc_2($state$)))"),
    ("$place$", "the highest point of $state$", "high_point_1($state$)"),
    ("$place$", "the lowest point of $state$", "low_point_1($state$)"),
    # paraphrases and slot-first phrasings: the same functions in other word orders
    ("$num$", "what be the density of $state$", "density_1($state$)"),
    ("$num$", "$state$ have how many people", "population_1($state$)"),
    ("$num$", "what be the size of $state$", "size($state$)"),
    ("$state$", "state adjacent to $state$", "state(next_to_2($state$))"),
    ("$state$", "the biggest state that border $state$", "largest(state(next_to_2($state$)))"),
    ("$state$", "state whose capital be $city$", "state(capital_2($city$))"),
    ("$city$", "$state$ 's capital", "capital(loc_2($state$))"),
    ("$city$", "major city of $state$", "major(city(loc_2($state$)))"),
    ("$city$", "the smallest city along $river$", "smallest(city(traverse_1($river$)))"),
    ("$river$", "$state$ 's major river", "major(river(loc_2($state$)))"),
    ("$river$", "the shortest river through $state$", "shortest(river(traverse_2($state$)))"),
    ("$river$", "river longer than $river$", "river(longer($river$))"),
    ("$lake$", "the largest lake of $state$", "largest(lake(loc_2($state$)))"),
    ("$place$", "$state$ 's tallest peak", "highest(place(loc_2($state$)))"),
    ("$mountain$", "mountain higher than $mountain$", "mountain(higher_2($mountain$))"),
    ("$place$", "$state$ 's high point", "high_point_1($state$)"),
    ("$place$", "place higher than $place$", "place(higher_2($place$))"),
]


def default_rules() -> list[GrammarRule]:
    return [GrammarRule.from_strings(*r) for r in _DEFAULT_RULE_TEXT]


_TAG_MARKER = {tag: f"{name}_0" for name, tag in MARKER_TYPES.items()
               if name != "country" and tag in INSERTABLE_TAGS}


def entity_marker(tag: str) -> str:
    return _TAG_MARKER[tag]


@dataclass
class SynthInstance:
    utterance: list[str]
    mr: MrNode
    gold_spans: list[tuple[Span, MrNode]]
    """Innermost first; each span indexes the utterance as reduced by the previous steps."""

    @property
    def depth(self) -> int:
        return len(self.gold_spans)

    def gold_utterances(self) -> list[list[str]]:
        """The utterance seen at each step of the gold decomposition."""
        out = [list(self.utterance)]
        for span, partial in self.gold_spans[:-1]:
            cur = out[-1]
            tag = denotation_type(partial)
            out.append(cur[:span.start - 1] + [tag] + cur[span.end:])
        return out


def _reachable_depth(rules: Sequence[GrammarRule]) -> dict[str, int]:
    """Deepest chain (up to a cap) each type can head; 0 when unproducible."""
    cap = 64
    best = {t: 0 for t in TYPE_TAGS}
    for _ in range(cap):
        changed = False
        for r in rules:
            d = 1 if r.slot is None else 1 + best[r.slot]
            d = min(max(d, 1), cap)
            if d > best[r.result]:
                best[r.result] = d
                changed = True
        if not changed:
            break
    return best


def _check_rules(rules: Sequence[GrammarRule]):
    if not rules:
        raise GrammarError("empty rule set")
    for r in rules:
        r.validate()
        if r.slot is not None and r.slot not in _TAG_MARKER:
            raise GrammarError(f"no entity marker for slot type {r.slot}")


def _sample_chain(rules, depth, rng, reach) -> list[GrammarRule]:
    chain: list[GrammarRule] = []
    need = None
    for level in range(depth):
        remaining = depth - level
        if remaining == 1:
            options = [r for r in rules if need is None or r.result == need]
        else:
            options = [r for r in rules
                       if (need is None or r.result == need)
                       and r.slot is not None and reach[r.slot] >= remaining - 1]
        if not options:
            raise GrammarError(f"no rule produces {need or 'a root'} at depth {remaining}")
        rule = rng.choice(options)
        chain.append(rule)
        need = rule.slot
    return chain


def realize(chain: Sequence[GrammarRule]) -> SynthInstance:
    """Build an instance from an outer-to-inner chain of rule applications."""
    inner = chain[-1]
    filler = lit(entity_marker(inner.slot)) if inner.slot else None
    partials = [inner.fill(filler) if filler is not None else inner.mr]
    tokens = [entity_marker(inner.slot) if t == inner.slot else t for t in inner.surface] \
        if inner.slot else list(inner.surface)
    mr = partials[0]
    starts = [0]
    for rule in reversed(chain[:-1]):
        k = rule.slot_index
        tokens = list(rule.surface[:k]) + tokens + list(rule.surface[k + 1:])
        mr = rule.fill(mr)
        starts = [s + k for s in starts] + [0]
        partials.append(rule.mr)
    # starts[i] is the offset of the i-th phrase (innermost first) in the full utterance
    rules_inner_first = list(reversed(chain))
    gold = []
    for rule, start, partial in zip(rules_inner_first, starts, partials):
        gold.append((Span(start + 1, start + len(rule.surface)), partial))
    return SynthInstance(tokens, mr, gold)


def generate(rules: Sequence[GrammarRule], n: int, max_depth: int, seed: int) -> list[SynthInstance]:
    """Sample ``n`` instances with depth uniform over ``[1, max_depth]``."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    rules = list(rules)
    _check_rules(rules)
    reach = _reachable_depth(rules)
    if max(reach.values()) < max_depth:
        raise GrammarError(f"rules cannot nest to depth {max_depth}")
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        depth = rng.randint(1, max_depth)
        inst = realize(_sample_chain(rules, depth, rng, reach))
        if not canonical_equal(compose([p for _, p in inst.gold_spans]), inst.mr):
            raise GrammarError(f"decomposition of {' '.join(inst.utterance)} does not compose")
        denotation_type(inst.mr)
        out.append(inst)
    return out


def compositional_split(instances: Sequence, held_out_fraction: float, seed: int,
                        mode: str = "compositional"):
    """Split into (train, test).

    ``compositional`` holds out a fraction of anonymized MR skeletons; every
    skeleton lands on exactly one side.  ``standard`` only keeps utterances
    disjoint and holds out roughly that fraction of instances.
    """
    if not 0 < held_out_fraction < 1:
        raise ValueError("held_out_fraction must be in (0, 1)")
    rng = random.Random(seed)
    if mode == "compositional":
        key = lambda inst: skeleton(inst.mr)  # noqa: E731
    elif mode == "standard":
        key = lambda inst: " ".join(inst.utterance)  # noqa: E731
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    groups = sorted({key(i) for i in instances})
    if len(groups) < 2:
        raise SplitError(f"need at least two distinct groups to split, found {len(groups)}")
    rng.shuffle(groups)
    if mode == "compositional":
        n_test = min(max(1, round(held_out_fraction * len(groups))), len(groups) - 1)
        test_keys = set(groups[:n_test])
    else:
        sizes: dict[str, int] = {}
        for inst in instances:
            sizes[key(inst)] = sizes.get(key(inst), 0) + 1
        target = held_out_fraction * len(instances)
        test_keys, total = set(), 0
        for g in groups:
            if total >= target or len(test_keys) == len(groups) - 1:
                break
            test_keys.add(g)
            total += sizes[g]
    train = [i for i in instances if key(i) not in test_keys]
    test = [i for i in instances if key(i) in test_keys]
    train_utts = {" ".join(i.utterance) for i in train}
    test = [i for i in test if " ".join(i.utterance) not in train_utts]
    if not train or not test:
        raise SplitError("split left one side empty")
    return train, test


class GrammarParser:
    """Exact parser for token spans derivable from a rule set.

    Used as an oracle base parser: a span parses only if the whole span is one
    typed phrase of the grammar.  Entity markers and placeholder tokens stand
    for phrases of their own type.
    """

    def __init__(self, rules: Iterable[GrammarRule]):
        self.rules = list(rules)

    def parse(self, tokens: Sequence[str]) -> Optional[MrNode]:
        toks = tuple(tokens)

        @lru_cache(maxsize=None)
        def phrase(i: int, j: int, tag: str) -> Optional[MrNode]:
            if j - i == 1:
                t = toks[i]
                if t == tag:
                    return MrNode(PLACEHOLDER, tag)
                if _TAG_MARKER.get(tag) == t:
                    return lit(t)
            for rule in self.rules:
                if rule.result == tag:
                    m = match(rule, i, j)
                    if m is not None:
                        return m
            return None

        def match(rule: GrammarRule, i: int, j: int) -> Optional[MrNode]:
            surface = rule.surface
            k = rule.slot_index
            if k is None:
                return rule.mr if toks[i:j] == surface else None
            suffix = len(surface) - k - 1
            if j - i < len(surface):
                return None
            if toks[i:i + k] != surface[:k] or toks[j - suffix:j] != surface[k + 1:]:
                return None
            inner = phrase(i + k, j - suffix, rule.slot)
            return None if inner is None else rule.fill(inner)

        if not toks:
            return None
        for rule in self.rules:
            m = match(rule, 0, len(toks))
            if m is not None:
                return m
        return None

    def parse_batch(self, token_lists: Sequence[Sequence[str]], beam: int = 1) -> list[DecodeResult]:
        out = []
        for toks in token_lists:
            mr = self.parse(toks)
            out.append(DecodeResult([], 0.0 if mr is not None else float("-inf"), mr))
        return out

    def parse_tokens(self, tokens: Sequence[str], beam: int = 1) -> DecodeResult:
        return self.parse_batch([tokens], beam)[0]


class GoldSegmenter:
    """Oracle segmenter replaying the generator's decompositions."""

    def __init__(self, instances: Iterable[SynthInstance]):
        self.table: dict[tuple[str, ...], Span] = {}
        for inst in instances:
            for utt, (span, _) in zip(inst.gold_utterances(), inst.gold_spans):
                self.table[tuple(utt)] = span

    def predict_span(self, tokens: Sequence[str]) -> Span:
        return self.table.get(tuple(tokens), Span.whole(len(tokens)))


class GoldParser:
    """Oracle parser returning the gold partial MR for each gold span."""

    def __init__(self, instances: Iterable[SynthInstance]):
        self.table: dict[tuple[str, ...], MrNode] = {}
        for inst in instances:
            for utt, (span, partial) in zip(inst.gold_utterances(), inst.gold_spans):
                self.table[tuple(span.slice(utt))] = partial

    def parse_batch(self, token_lists, beam: int = 1) -> list[DecodeResult]:
        out = []
        for toks in token_lists:
            mr = self.table.get(tuple(toks))
            out.append(DecodeResult([], 0.0 if mr is not None else float("-inf"), mr))
        return out

    def parse_tokens(self, tokens: Sequence[str], beam: int = 1) -> DecodeResult:
        return self.parse_batch([tokens], beam)[0]

