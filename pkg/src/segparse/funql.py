"""FunQL meaning representations.

Trees are immutable ``MrNode`` values. Function arities and argument types come
from a tab-separated signature table (``data/geo_signatures.tsv`` by default)::

    name<TAB>argtype,argtype<TAB>rettype

An argument type is a type tag such as ``$state$``, ``*`` (any typed value) or
``lit`` (a literal).  A return type of ``=`` means "the type of the first
argument".
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterator, Mapping, Sequence

from .errors import CompositionError, MalformedMr, MrTypeError, TargetNotFound

FUNCTION = "function"
PLACEHOLDER = "placeholder"
LITERAL = "literal"

TYPE_TAGS = ("$state$", "$city$", "$river$", "$place$", "$mountain$", "$lake$", "$num$")
# $num$ is a valid denotation but is never written back into an utterance.
INSERTABLE_TAGS = TYPE_TAGS[:-1]

ENTITY_CONSTRUCTORS = frozenset({"stateid", "cityid", "riverid", "placeid", "countryid"})

MARKER_TYPES = {
    "state": "$state$",
    "city": "$city$",
    "river": "$river$",
    "place": "$place$",
    "mountain": "$mountain$",
    "lake": "$lake$",
    "country": "$place$",
    "num": "$num$",
}
MARKER_RE = re.compile(r"(%s)_\d+" % "|".join(MARKER_TYPES))
NUMBER_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)")
PLACEHOLDER_RE = re.compile(r"\$[a-z]+\$")

ANY = "*"
LIT = "lit"
SAME = "="


@dataclass(frozen=True)
class MrNode:
    kind: str
    name: str
    children: tuple["MrNode", ...] = ()

    def __str__(self) -> str:
        return serialize_mr(self)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)


def fn(name: str, *children: MrNode) -> MrNode:
    return MrNode(FUNCTION, name, tuple(children))


def lit(value: str) -> MrNode:
    return MrNode(LITERAL, value)


def placeholder(tag: str) -> MrNode:
    if tag not in TYPE_TAGS:
        raise ValueError(f"unknown type tag {tag!r}")
    return MrNode(PLACEHOLDER, tag)


def is_marker(name: str) -> bool:
    return MARKER_RE.fullmatch(name) is not None


def is_placeholder_token(token: str) -> bool:
    return token in TYPE_TAGS


@dataclass(frozen=True)
class FunctionSignature:
    name: str
    arg_types: tuple[str, ...]
    return_type: str

    @property
    def arity(self) -> int:
        return len(self.arg_types)


Signatures = Mapping[str, FunctionSignature]


def parse_signature_table(text: str) -> dict[str, FunctionSignature]:
    table = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise ValueError(f"signature line {lineno}: expected 3 tab-separated fields")
        name, args, ret = (p.strip() for p in parts)
        arg_types = tuple(a.strip() for a in args.split(",")) if args else ()
        for t in arg_types:
            if t not in TYPE_TAGS and t not in (ANY, LIT):
                raise ValueError(f"signature line {lineno}: bad argument type {t!r}")
        if ret not in TYPE_TAGS and ret != SAME:
            raise ValueError(f"signature line {lineno}: bad return type {ret!r}")
        if ret == SAME and not arg_types:
            raise ValueError(f"signature line {lineno}: '=' needs an argument")
        table[name] = FunctionSignature(name, arg_types, ret)
    return table


def load_signatures(path=None) -> dict[str, FunctionSignature]:
    if path is None:
        text = resources.files("segparse").joinpath("data/geo_signatures.tsv").read_text()
    else:
        with open(path) as f:
            text = f.read()
    return parse_signature_table(text)


DEFAULT_SIGNATURES = load_signatures()


# --------------------------------------------------------------------------
# text format

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<quoted>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
      | (?P<tag>\$[a-z]+\$)
      | (?P<word>[A-Za-z0-9_.+\-]+)
      | (?P<punct>[(),])
    )""",
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise MalformedMr(f"unexpected character at offset {pos} in {text!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


def parse_mr(text: str, signatures: Signatures = DEFAULT_SIGNATURES) -> MrNode:
    """Parse a serialized FunQL expression.

    Raises ``MalformedMr`` on unbalanced parentheses, unknown function names and
    arity mismatches.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise MalformedMr("empty meaning representation")
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, None)

    def term() -> MrNode:
        nonlocal pos
        kind, value = peek()
        if kind is None:
            raise MalformedMr(f"unexpected end of input in {text!r}")
        pos += 1
        if kind == "quoted":
            return lit(_unquote(value))
        if kind == "tag":
            if value not in TYPE_TAGS:
                raise MalformedMr(f"unknown placeholder {value!r}")
            return MrNode(PLACEHOLDER, value)
        if kind == "punct":
            raise MalformedMr(f"unexpected {value!r} in {text!r}")
        if peek()[1] == "(":
            pos += 1
            children = [term()]
            while peek()[1] == ",":
                pos += 1
                children.append(term())
            if peek()[1] != ")":
                raise MalformedMr(f"unbalanced parentheses in {text!r}")
            pos += 1
            sig = signatures.get(value)
            if sig is None:
                raise MalformedMr(f"unknown function {value!r}")
            if sig.arity != len(children):
                raise MalformedMr(
                    f"{value} takes {sig.arity} argument(s), got {len(children)}")
            return MrNode(FUNCTION, value, tuple(children))
        sig = signatures.get(value)
        if sig is not None:
            if sig.arity:
                raise MalformedMr(f"{value} takes {sig.arity} argument(s), got 0")
            return MrNode(FUNCTION, value)
        if value == "_" or is_marker(value) or NUMBER_RE.fullmatch(value):
            return lit(value)
        raise MalformedMr(f"unknown symbol {value!r}")

    node = term()
    if pos != len(tokens):
        raise MalformedMr(f"trailing input after position {pos} in {text!r}")
    return node


def _literal_text(name: str) -> str:
    if name == "_" or is_marker(name) or NUMBER_RE.fullmatch(name):
        return name
    return "'" + name.replace("\\", "\\\\").replace("'", "\\'") + "'"


def serialize_mr(m: MrNode) -> str:
    if m.kind == LITERAL:
        return _literal_text(m.name)
    if m.kind == PLACEHOLDER or not m.children:
        return m.name
    return m.name + "(" + ",".join(serialize_mr(c) for c in m.children) + ")"


def mr_symbols(m: MrNode) -> list[str]:
    """Flatten a tree into the decoder's output symbol sequence."""
    out: list[str] = []

    def walk(n: MrNode):
        if n.kind == LITERAL:
            out.append(_literal_text(n.name))
        elif n.kind == PLACEHOLDER or not n.children:
            out.append(n.name)
        else:
            out.extend((n.name, "("))
            for i, c in enumerate(n.children):
                if i:
                    out.append(",")
                walk(c)
            out.append(")")

    walk(m)
    return out


def symbols_to_mr(symbols: Sequence[str], signatures: Signatures = DEFAULT_SIGNATURES) -> MrNode:
    return parse_mr(" ".join(symbols), signatures)


# --------------------------------------------------------------------------
# typing

def _literal_type(name: str) -> str | None:
    m = MARKER_RE.fullmatch(name)
    if m:
        return MARKER_TYPES[m.group(1)]
    if NUMBER_RE.fullmatch(name):
        return "$num$"
    return None


def denotation_type(m: MrNode, signatures: Signatures = DEFAULT_SIGNATURES) -> str:
    """Answer type of ``m``; also typechecks the whole tree."""
    if m.kind == PLACEHOLDER:
        return m.name
    if m.kind == LITERAL:
        t = _literal_type(m.name)
        if t is None:
            raise MrTypeError(f"bare literal {serialize_mr(m)} has no denotation type")
        return t
    sig = signatures.get(m.name)
    if sig is None:
        raise MrTypeError(f"unknown function {m.name!r}")
    if sig.arity != len(m.children):
        raise MrTypeError(f"{m.name} takes {sig.arity} argument(s), got {len(m.children)}")
    child_types = []
    for expected, child in zip(sig.arg_types, m.children):
        if expected == LIT:
            if child.kind != LITERAL:
                raise MrTypeError(f"{m.name} expects a literal, got {serialize_mr(child)}")
            child_types.append(None)
            continue
        actual = denotation_type(child, signatures)
        if expected != ANY and actual != expected:
            raise MrTypeError(
                f"{m.name} expects {expected}, got {actual} from {serialize_mr(child)}")
        child_types.append(actual)
    if sig.return_type == SAME:
        if child_types[0] is None:
            raise MrTypeError(f"{m.name} cannot take its type from a literal")
        return child_types[0]
    return sig.return_type


def typecheck(m: MrNode, signatures: Signatures = DEFAULT_SIGNATURES) -> str | None:
    """Like ``denotation_type`` but a bare untyped literal is accepted (returns None)."""
    if m.kind == LITERAL and _literal_type(m.name) is None:
        return None
    return denotation_type(m, signatures)


@lru_cache(maxsize=65536)
def _type_or_none(m: MrNode) -> str | None:
    try:
        return denotation_type(m)
    except MrTypeError:
        return None


def type_or_none(m: MrNode, signatures: Signatures = DEFAULT_SIGNATURES) -> str | None:
    if signatures is DEFAULT_SIGNATURES:
        return _type_or_none(m)
    try:
        return denotation_type(m, signatures)
    except MrTypeError:
        return None


# --------------------------------------------------------------------------
# tree algebra

def iter_subtrees(m: MrNode, path: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], MrNode]]:
    """Pre-order walk yielding ``(path, subtree)``."""
    yield path, m
    for i, c in enumerate(m.children):
        yield from iter_subtrees(c, path + (i,))


def replace_at(m: MrNode, path: Sequence[int], replacement: MrNode) -> MrNode:
    if not path:
        return replacement
    i = path[0]
    kids = list(m.children)
    kids[i] = replace_at(kids[i], path[1:], replacement)
    return MrNode(m.kind, m.name, tuple(kids))


def _matches(part: MrNode, node: MrNode, signatures: Signatures) -> bool:
    if part.kind == PLACEHOLDER:
        if node.kind == PLACEHOLDER:
            return node.name == part.name
        return type_or_none(node, signatures) == part.name
    if part.kind != node.kind or part.name != node.name or len(part.children) != len(node.children):
        return False
    return all(_matches(p, n, signatures) for p, n in zip(part.children, node.children))


def find_part(part: MrNode, whole: MrNode, signatures: Signatures = DEFAULT_SIGNATURES):
    """Path of the leftmost pre-order subtree of ``whole`` matched by ``part``, or None."""
    for path, node in iter_subtrees(whole):
        if _matches(part, node, signatures):
            return path
    return None


def is_part_of(part: MrNode, whole: MrNode, signatures: Signatures = DEFAULT_SIGNATURES) -> bool:
    """True iff ``part`` equals some subtree of ``whole``.

    A placeholder in ``part`` matches any subtree of ``whole`` with that
    denotation type.
    """
    return find_part(part, whole, signatures) is not None


def find_subtree(target: MrNode, whole: MrNode):
    for path, node in iter_subtrees(whole):
        if node == target:
            return path
    return None


def substitute_mr(whole: MrNode, target: MrNode, replacement: MrNode) -> MrNode:
    """Replace the leftmost pre-order occurrence of ``target`` in ``whole``."""
    path = find_subtree(target, whole)
    if path is None:
        raise TargetNotFound(f"{serialize_mr(target)} does not occur in {serialize_mr(whole)}")
    return replace_at(whole, path, replacement)


def placeholders(m: MrNode) -> list[str]:
    return [n.name for _, n in iter_subtrees(m) if n.kind == PLACEHOLDER]


def entity_literals(m: MrNode) -> list[str]:
    """Entity names in ``m``: first argument of a constructor, or a bare marker."""
    found = []
    for _, n in iter_subtrees(m):
        if n.kind == FUNCTION and n.name in ENTITY_CONSTRUCTORS and n.children:
            first = n.children[0]
            if first.kind == LITERAL and first.name != "_":
                found.append(first.name)
        elif n.kind == LITERAL and is_marker(n.name):
            found.append(n.name)
    # markers inside a constructor were collected twice
    return list(dict.fromkeys(found))


def _mentioned(surface: str, tokens: Sequence[str]) -> bool:
    words = surface.lower().split()
    if not words:
        return True
    n = len(words)
    return any(list(tokens[k:k + n]) == words for k in range(len(tokens) - n + 1))


def find_ghost_entities(m: MrNode, span_tokens: Sequence[str]) -> list[str]:
    """Entity literals of ``m`` whose surface form is absent from ``span_tokens``."""
    lowered = [t.lower() for t in span_tokens]
    return [e for e in entity_literals(m) if not _mentioned(e, lowered)]


def compose(partials: Sequence[MrNode], signatures: Signatures = DEFAULT_SIGNATURES) -> MrNode:
    """Stitch the partial trees of successive reductions into one tree.

    Each finished partial is pushed on a stack; a later partial pops the most
    recent entries and fills the leftmost placeholder of each one's type.
    """
    if not partials:
        raise CompositionError("nothing to compose")
    stack: list[MrNode] = []
    for partial in partials:
        filled = partial
        while stack:
            tag = denotation_type(stack[-1], signatures)
            slot = next((p for p, n in iter_subtrees(filled)
                         if n.kind == PLACEHOLDER and n.name == tag), None)
            if slot is None:
                break
            filled = replace_at(filled, slot, stack.pop())
        stack.append(filled)
    if len(stack) != 1:
        unplaced = ", ".join(serialize_mr(s) for s in stack[:-1])
        raise CompositionError(f"no placeholder left for {unplaced}")
    return stack[0]


def canonical_equal(a: MrNode, b: MrNode) -> bool:
    # literal quoting is normalized at parse time, so structure is enough
    return a == b


def skeleton(m: MrNode) -> str:
    """Entity-anonymized serialization used to group instances into templates."""
    def walk(n: MrNode) -> str:
        if n.kind == LITERAL:
            t = _literal_type(n.name)
            return "<%s>" % (t.strip("$") if t else "lit")
        if n.kind == PLACEHOLDER or not n.children:
            return n.name
        return n.name + "(" + ",".join(walk(c) for c in n.children) + ")"
    return walk(m)


def anonymize_mr(m: MrNode, entity_map: Mapping[str, str]) -> MrNode:
    """Replace constructor calls whose entity appears in ``entity_map`` by its marker."""
    by_value = {v.lower(): k for k, v in entity_map.items()}

    def walk(n: MrNode) -> MrNode:
        if n.kind == FUNCTION and n.name in ENTITY_CONSTRUCTORS and n.children:
            first = n.children[0]
            if first.kind == LITERAL and first.name.lower() in by_value:
                return lit(by_value[first.name.lower()])
        if not n.children:
            return n
        return MrNode(n.kind, n.name, tuple(walk(c) for c in n.children))

    return walk(m)
