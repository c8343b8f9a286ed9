"""Token spans and utterance reduction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True, order=True)
class Span:
    """Contiguous token range, 1-based and inclusive at both ends."""

    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def is_whole(self, n: int) -> bool:
        return self.start == 1 and self.end == n

    def is_valid(self, n: int) -> bool:
        return (1 <= self.start < self.end <= n) or self.is_whole(n)

    def slice(self, tokens: Sequence[str]) -> list[str]:
        return list(tokens[self.start - 1:self.end])

    @classmethod
    def whole(cls, n: int) -> "Span":
        return cls(1, n)

    def to_list(self) -> list[int]:
        return [self.start, self.end]


def reduce_utterance(tokens: Sequence[str], span: Span, tag: str) -> list[str]:
    """Replace ``span`` in ``tokens`` by the single placeholder token ``tag``."""
    if not span.is_valid(len(tokens)) or span.is_whole(len(tokens)):
        raise ValueError(f"cannot reduce {span} in an utterance of length {len(tokens)}")
    return list(tokens[:span.start - 1]) + [tag] + list(tokens[span.end:])


def candidate_spans(n: int) -> list[Span]:
    """Every proper span of length 2..n-1, ordered by length then start."""
    return [Span(i, i + length - 1)
            for length in range(2, n)
            for i in range(1, n - length + 2)]
