"""Text parsing shared by response verification and metric scoring."""

from __future__ import annotations

import re

_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?")
_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def extract_numbers(text: str) -> list[float]:
    """All maximal number substrings, in reading order.

    A number is an optional sign, digits, and an optional decimal fraction;
    anything else, including scientific notation, splits into parts.
    """
    return [float(m) for m in _NUMBER.findall(text)]


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on runs of non-alphanumeric characters."""
    return [t for t in _NON_ALNUM.split(text.lower()) if t]


def count_mentions(tokens: list[str], label: str) -> int:
    """Occurrences of the label's token sequence inside the token list."""
    needle = tokenize(label)
    if not needle or len(needle) > len(tokens):
        return 0
    n = len(needle)
    return sum(1 for i in range(len(tokens) - n + 1) if tokens[i : i + n] == needle)
