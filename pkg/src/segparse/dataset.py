"""Dataset files, tokenization and vocabularies.

Datasets are JSONL, one instance per line::

    {"utterance": "how many river run through state_0",
     "mr": "count(river(traverse_2(state_0)))",
     "entities": {"state_0": "colorado"},          # optional
     "gold_spans": [[5, 6, "..."], ...],           # optional, synthetic data
     "split": "test"}                              # optional label
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import IoError, MalformedMr, MarkerMismatch, MrTypeError
from .funql import (
    INSERTABLE_TAGS,
    MrNode,
    TYPE_TAGS,
    anonymize_mr,
    is_marker,
    mr_symbols,
    parse_mr,
    serialize_mr,
    typecheck,
)
from .spans import Span

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)

_PUNCT_RE = re.compile(r"\$[a-z]+\$|[\w]+(?:[._:/'-][\w]+)*|[^\w\s]")


def tokenize(text: str, mode: str = "whitespace", lowercase: bool = True) -> list[str]:
    if lowercase:
        text = text.lower()
    if mode == "whitespace":
        return text.split()
    if mode == "punct":
        return _PUNCT_RE.findall(text)
    raise ValueError(f"unknown tokenizer {mode!r}")


@dataclass
class Instance:
    utterance: list[str]
    mr: MrNode
    entity_map: dict[str, str] = field(default_factory=dict)
    gold_spans: Optional[list[tuple[Span, MrNode]]] = None
    label: Optional[str] = None

    @property
    def depth(self) -> Optional[int]:
        return len(self.gold_spans) if self.gold_spans is not None else None

    def to_json(self) -> dict:
        d = {"utterance": " ".join(self.utterance), "mr": serialize_mr(self.mr)}
        if self.entity_map:
            d["entities"] = dict(self.entity_map)
        if self.gold_spans is not None:
            d["gold_spans"] = [[s.start, s.end, serialize_mr(m)] for s, m in self.gold_spans]
        if self.label is not None:
            d["split"] = self.label
        return d


def from_synth(inst, label: Optional[str] = None) -> Instance:
    markers = {t: t for t in inst.utterance if is_marker(t)}
    return Instance(list(inst.utterance), inst.mr, markers, list(inst.gold_spans), label)


def instance_from_json(obj: dict, *, tokenizer: str = "whitespace", lowercase: bool = True,
                       anonymize: bool = False) -> Instance:
    if "utterance" not in obj or "mr" not in obj:
        raise MalformedMr("missing 'utterance' or 'mr' field")
    utterance = tokenize(obj["utterance"], tokenizer, lowercase)
    mr = parse_mr(obj["mr"])
    entities = obj.get("entities")
    if entities is not None:
        missing = [t for t in utterance if is_marker(t) and t not in entities]
        if missing:
            raise MarkerMismatch(f"markers {missing} missing from the entity map")
        if anonymize:
            mr = anonymize_mr(mr, entities)
    try:
        typecheck(mr)
    except MrTypeError as e:
        raise MalformedMr(str(e)) from e
    gold = None
    if obj.get("gold_spans") is not None:
        gold = [(Span(int(s), int(e)), parse_mr(m)) for s, e, m in obj["gold_spans"]]
    return Instance(utterance, mr, dict(entities or {}), gold, obj.get("split"))


def load_dataset(path, *, tokenizer: str = "whitespace", lowercase: bool = True,
                 anonymize: bool = False) -> list[Instance]:
    """Read and validate a JSONL dataset.

    Errors carry the 1-based line number of the offending record.
    """
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    out = []
    with f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise IoError(f"{path}:{lineno}: invalid JSON: {e}") from e
            try:
                out.append(instance_from_json(obj, tokenizer=tokenizer, lowercase=lowercase,
                                              anonymize=anonymize))
            except MalformedMr as e:
                raise MalformedMr(f"{path}:{lineno}: {e}") from e
            except MarkerMismatch as e:
                raise MarkerMismatch(f"{path}:{lineno}: {e}") from e
    return out


def save_dataset(instances: Iterable[Instance], path):
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(inst.to_json(), sort_keys=True) + "\n")


def write_jsonl(rows: Iterable[dict], path):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


class SymbolTable:
    """Bijective token/index mapping; unknown tokens map to ``<unk>``."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in symbol table")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, self.stoi[UNK])

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index(t) for t in tokens]

    def token(self, i: int) -> str:
        return self.itos[i]

    def dumps(self) -> str:
        return "".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos))

    @classmethod
    def loads(cls, text: str) -> "SymbolTable":
        pairs = []
        for line in text.splitlines():
            if line:
                tok, idx = line.rsplit("\t", 1)
                pairs.append((int(idx), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError("vocabulary indices are not contiguous")
        return cls([t for _, t in pairs])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dumps())

    @classmethod
    def load(cls, path) -> "SymbolTable":
        with open(path, encoding="utf-8") as f:
            return cls.loads(f.read())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


@dataclass
class Vocabulary:
    source: SymbolTable
    target: SymbolTable

    def fingerprint(self) -> str:
        return hashlib.sha256(
            (self.source.fingerprint() + self.target.fingerprint()).encode()).hexdigest()[:16]


def _ranked(counts: Counter, reserved: Sequence[str]) -> list[str]:
    rest = sorted((t for t in counts if t not in reserved), key=lambda t: (-counts[t], t))
    return list(reserved) + rest


def build_vocab(instances: Sequence[Instance], min_count: int = 1) -> Vocabulary:
    """Source tokens below ``min_count`` are dropped (map to ``<unk>``); every
    MR symbol is kept.  Ordering is by descending count, then lexicographic."""
    if not instances:
        raise ValueError("cannot build a vocabulary from no instances")
    src_counts: Counter = Counter()
    tgt_counts: Counter = Counter()
    for inst in instances:
        src_counts.update(inst.utterance)
        tgt_counts.update(mr_symbols(inst.mr))
    src_counts = Counter({t: c for t, c in src_counts.items() if c >= min_count})
    src_reserved = SPECIALS + INSERTABLE_TAGS
    tgt_reserved = SPECIALS + TYPE_TAGS + ("(", ")", ",")
    return Vocabulary(SymbolTable(_ranked(src_counts, src_reserved)),
                      SymbolTable(_ranked(tgt_counts, tgt_reserved)))
