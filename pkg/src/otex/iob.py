"""IOB-1 tagging of opinion target spans.

``I`` marks tokens inside an expression, ``O`` tokens outside any expression,
and ``B`` appears only on the first token of an expression that directly
follows another expression.  Spans are ``(start, end)`` token indices, both
inclusive.
"""
from __future__ import annotations

from typing import Iterable, List, NamedTuple, Sequence

from .errors import ValidationError

I, O, B = 0, 1, 2
TAG_NAMES = ("I", "O", "B")
TAG_CODES = {name: code for code, name in enumerate(TAG_NAMES)}


class TokenSpan(NamedTuple):
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def validate_spans(n: int, spans: Iterable[Sequence[int]]) -> List[TokenSpan]:
    """Return the spans sorted, raising if any is out of range or two overlap."""
    out = sorted(TokenSpan(int(s), int(e)) for s, e in spans)
    prev_end = -1
    for s, e in out:
        if not 0 <= s <= e < n:
            raise ValidationError(f"span ({s}, {e}) outside sentence of length {n}")
        if s <= prev_end:
            raise ValidationError(f"span ({s}, {e}) overlaps a preceding span")
        prev_end = e
    return out


def encode(n: int, spans: Iterable[Sequence[int]]) -> List[int]:
    tags = [O] * n
    prev_end = None
    for s, e in validate_spans(n, spans):
        for k in range(s, e + 1):
            tags[k] = I
        if prev_end is not None and prev_end == s - 1:
            tags[s] = B
        prev_end = e
    return tags


def decode(tags: Sequence[int]) -> List[TokenSpan]:
    """Recover spans from any tag sequence.

    A run of ``I`` forms a span; ``B`` closes the open span and starts a new
    one, so an orphan ``B`` (after ``O`` or at position 0) simply starts a span.
    """
    spans = []
    start = None
    for k, t in enumerate(tags):
        if t == I:
            if start is None:
                start = k
        elif t == B:
            if start is not None:
                spans.append(TokenSpan(start, k - 1))
            start = k
        elif t == O:
            if start is not None:
                spans.append(TokenSpan(start, k - 1))
                start = None
        else:
            raise ValueError(f"unknown tag code {t!r}")
    if start is not None:
        spans.append(TokenSpan(start, len(tags) - 1))
    return spans


def tags_from_names(names: Iterable[str]) -> List[int]:
    try:
        return [TAG_CODES[x] for x in names]
    except KeyError as exc:
        raise ValidationError(f"unknown tag {exc.args[0]!r}; expected one of I, O, B") from None


def tag_names(tags: Iterable[int]) -> List[str]:
    return [TAG_NAMES[t] for t in tags]
