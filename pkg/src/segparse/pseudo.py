"""Pseudo supervision for the segmenter and the parser.

A frozen preliminary parser parses every proper span of a training utterance.
A span is good when its parse is a piece of the target MR; the best span is
the shortest good span without ghosts (entities or placeholders the span never
mentions), ties going to the leftmost.  Reducing the utterance and the MR by
the best span gives the next level of derivation.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .funql import (
    FUNCTION,
    INSERTABLE_TAGS,
    MrNode,
    find_ghost_entities,
    find_subtree,
    is_part_of,
    parse_mr,
    placeholder,
    placeholders,
    serialize_mr,
    substitute_mr,
    type_or_none,
)
from .spans import Span, candidate_spans, reduce_utterance


@dataclass
class PseudoSignal:
    utterance: list[str]
    best_span: Span
    partial_mr: MrNode
    reduced_utterance: list[str]
    reduced_mr: MrNode
    level: int = 1

    @property
    def is_whole(self) -> bool:
        return self.best_span.is_whole(len(self.utterance))

    def training_pairs(self) -> list[tuple[list[str], MrNode]]:
        if self.is_whole:
            return [(list(self.utterance), self.partial_mr)]
        return [(self.best_span.slice(self.utterance), self.partial_mr),
                (list(self.reduced_utterance), self.reduced_mr)]

    def to_json(self) -> dict:
        return {"utterance": " ".join(self.utterance), "span": self.best_span.to_list(),
                "partial_mr": serialize_mr(self.partial_mr),
                "reduced_utterance": " ".join(self.reduced_utterance),
                "reduced_mr": serialize_mr(self.reduced_mr), "level": self.level}

    @classmethod
    def from_json(cls, obj: dict) -> "PseudoSignal":
        return cls(obj["utterance"].split(), Span(*obj["span"]), parse_mr(obj["partial_mr"]),
                   obj["reduced_utterance"].split(), parse_mr(obj["reduced_mr"]),
                   int(obj.get("level", 1)))


class ParseCache:
    """Memoizes span parses by token tuple; spans repeat heavily across a dataset."""

    def __init__(self, parser, beam: int = 1):
        self.parser = parser
        self.beam = beam
        self.table: dict[tuple[str, ...], Optional[MrNode]] = {}

    def parse_many(self, token_lists: Iterable[Sequence[str]]) -> list[Optional[MrNode]]:
        keys = [tuple(t) for t in token_lists]
        missing = list(dict.fromkeys(k for k in keys if k not in self.table))
        if missing:
            results = self.parser.parse_batch([list(k) for k in missing], beam=self.beam)
            for k, r in zip(missing, results):
                self.table[k] = r.mr
        return [self.table[k] for k in keys]


def has_ghost(parse: MrNode, span_tokens: Sequence[str]) -> bool:
    if find_ghost_entities(parse, span_tokens):
        return True
    available = Counter(span_tokens)
    return any(c > available[tag] for tag, c in Counter(placeholders(parse)).items())


def _usable(parse: Optional[MrNode], mr: MrNode) -> bool:
    # reduction needs an exact occurrence to substitute and an insertable type
    if parse is None or parse.kind != FUNCTION:
        return False
    if type_or_none(parse) not in INSERTABLE_TAGS:
        return False
    return is_part_of(parse, mr) and find_subtree(parse, mr) is not None


def _classify(tokens, mr, spans, parses):
    good, flagged = [], []
    for span, parse in zip(spans, parses):
        if not _usable(parse, mr):
            continue
        if has_ghost(parse, span.slice(tokens)):
            flagged.append((span, parse))
        else:
            good.append((span, parse))
    return good, flagged


def good_spans(instance, parser, beam: int = 1, cache: Optional[ParseCache] = None):
    """Return ``(good, flagged)`` lists of ``(Span, parse)``; flagged spans carry ghosts."""
    cache = cache or ParseCache(parser, beam)
    tokens = instance.utterance
    spans = candidate_spans(len(tokens))
    parses = cache.parse_many([s.slice(tokens) for s in spans])
    return _classify(tokens, instance.mr, spans, parses)


def make_signal(tokens: Sequence[str], mr: MrNode, good, level: int = 1) -> PseudoSignal:
    """Pick the shortest, then leftmost, good span; fall back to the whole utterance."""
    if not good:
        return PseudoSignal(list(tokens), Span.whole(len(tokens)), mr, list(tokens), mr, level)
    span, partial = min(good, key=lambda sp: (sp[0].length, sp[0].start))
    tag = type_or_none(partial)
    return PseudoSignal(list(tokens), span, partial, reduce_utterance(tokens, span, tag),
                        substitute_mr(mr, partial, placeholder(tag)), level)


def best_span(instance, parser, beam: int = 1, cache: Optional[ParseCache] = None) -> PseudoSignal:
    good, _ = good_spans(instance, parser, beam, cache)
    return make_signal(instance.utterance, instance.mr, good)


def derive_signals(dataset: Sequence, parser, beam: int = 1, recurse: bool = True,
                   cache: Optional[ParseCache] = None) -> list[list[PseudoSignal]]:
    """Per-instance signal chains, innermost first.

    Levels are processed in lockstep across the dataset so that span parses are
    batched; the result does not depend on this ordering.
    """
    cache = cache or ParseCache(parser, beam)
    chains: list[list[PseudoSignal]] = [[] for _ in dataset]
    active = [(i, list(inst.utterance), inst.mr) for i, inst in enumerate(dataset)]
    level = 1
    while active:
        requests = [(i, toks, mr, candidate_spans(len(toks))) for i, toks, mr in active]
        cache.parse_many([s.slice(toks) for _, toks, _, spans in requests for s in spans])
        nxt = []
        for i, toks, mr, spans in requests:
            parses = cache.parse_many([s.slice(toks) for s in spans])
            good, _ = _classify(toks, mr, spans, parses)
            sig = make_signal(toks, mr, good, level)
            chains[i].append(sig)
            if recurse and not sig.is_whole:
                nxt.append((i, sig.reduced_utterance, sig.reduced_mr))
        active = nxt
        level += 1
    return chains


def collect(chains: Sequence[Sequence[PseudoSignal]]):
    """Flatten signal chains into A (utterance, span) and D-hat (tokens, MR).

    D-hat pairs are deduplicated within each instance.
    """
    signals, derived = [], []
    for chain in chains:
        seen = set()
        for sig in chain:
            signals.append((list(sig.utterance), sig.best_span))
            for toks, m in sig.training_pairs():
                key = (tuple(toks), m)
                if key not in seen:
                    seen.add(key)
                    derived.append((toks, m))
    return signals, derived


def derive_all(dataset: Sequence, parser, beam: int = 1, recurse: bool = True,
               cache: Optional[ParseCache] = None):
    return collect(derive_signals(dataset, parser, beam, recurse, cache))


def save_signals(chains: Sequence[Sequence[PseudoSignal]], path):
    with open(path, "w", encoding="utf-8") as f:
        for chain in chains:
            for sig in chain:
                f.write(json.dumps(sig.to_json(), sort_keys=True) + "\n")


def load_signals(path) -> list[PseudoSignal]:
    with open(path, encoding="utf-8") as f:
        return [PseudoSignal.from_json(json.loads(line)) for line in f if line.strip()]
