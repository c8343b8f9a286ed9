"""Decoder results and the value recognizer used by the restricted copy."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import MalformedMr, MrTypeError
from .funql import MARKER_RE, MrNode, NUMBER_RE, is_marker, symbols_to_mr, typecheck

VALUE_PATTERNS = {
    "integer": r"[+-]?\d+",
    "decimal": r"[+-]?\d*\.\d+",
    "date_iso": r"\d{4}-\d{2}-\d{2}",
    "date_mdy": r"\d{1,2}/\d{1,2}/\d{2,4}",
    "cell": r"[A-Z]{1,3}\d+(?::[A-Z]{1,3}\d+)?",
    "marker": MARKER_RE.pattern,
    "placeholder": r"\$[a-z]+\$",
}
_VALUE_RE = re.compile("|".join(f"(?:{p})" for p in VALUE_PATTERNS.values()))


def is_value(token: str) -> bool:
    return _VALUE_RE.fullmatch(token) is not None


def copy_symbol(token: str) -> str:
    """Output symbol produced when ``token`` is copied from the input."""
    if is_marker(token) or NUMBER_RE.fullmatch(token) or re.fullmatch(VALUE_PATTERNS["placeholder"], token):
        return token
    return "'" + token.replace("\\", "\\\\").replace("'", "\\'") + "'"


def is_value_symbol(symbol: str) -> bool:
    """True when ``symbol`` could only have come from copying a value token."""
    if len(symbol) >= 2 and symbol[0] == symbol[-1] == "'":
        return is_value(symbol[1:-1])
    return is_value(symbol)


@dataclass
class DecodeResult:
    symbols: list[str]
    log_prob: float
    mr: Optional[MrNode] = None
    attention: list[list[float]] = field(default_factory=list)

    @property
    def parse_failed(self) -> bool:
        return self.mr is None


def result_from_symbols(symbols: Sequence[str], log_prob: float, attention=None) -> DecodeResult:
    try:
        mr = symbols_to_mr(symbols)
        typecheck(mr)
    except (MalformedMr, MrTypeError):
        mr = None
    return DecodeResult(list(symbols), float(log_prob), mr, attention or [])
