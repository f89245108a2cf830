import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otex import iob
from otex.errors import ValidationError
from otex.iob import B, I, O, TokenSpan, decode, encode


def test_tag_codes_are_stable():
    assert (I, O, B) == (0, 1, 2)
    assert iob.tag_names([0, 1, 2]) == ["I", "O", "B"]
    assert iob.tags_from_names("IOB") == [I, O, B]
    with pytest.raises(ValidationError):
        iob.tags_from_names(["X"])


def test_encode_wine_list_example():
    # "The wine list is also really nice ."
    assert encode(8, [(1, 2)]) == [O, I, I, O, O, O, O, O]


def test_encode_adjacent_spans_use_b():
    assert encode(3, [(0, 0), (1, 2)]) == [I, B, I]


def test_encode_empty():
    assert encode(4, []) == [O] * 4


def test_encode_rejects_bad_spans():
    with pytest.raises(ValidationError):
        encode(3, [(0, 1), (1, 2)])
    with pytest.raises(ValidationError):
        encode(3, [(2, 3)])
    with pytest.raises(ValidationError):
        encode(3, [(2, 1)])


def test_decode_examples():
    assert decode([O, I, I, O, O, O, O, O]) == [(1, 2)]
    assert decode([I, B, I]) == [(0, 0), (1, 2)]


def test_decode_orphan_b_starts_a_span():
    assert decode([B, O, B]) == [(0, 0), (2, 2)]
    assert decode([O, B, I]) == [(1, 2)]


def test_decode_returns_token_spans():
    (span,) = decode([I, I])
    assert isinstance(span, TokenSpan) and span.length == 2


def random_spans(rng, n):
    spans, k = [], 0
    while k < n:
        k += int(rng.integers(0, 3))
        if k >= n:
            break
        end = min(n - 1, k + int(rng.integers(0, 3)))
        spans.append(TokenSpan(k, end))
        k = end + 1
    return spans


def test_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = int(rng.integers(0, 31))
        spans = random_spans(rng, n)
        assert decode(encode(n, spans)) == spans


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.booleans(), min_size=n, max_size=n),
                                                      st.lists(st.booleans(), min_size=n, max_size=n))))
def test_b_only_after_a_span_end(case):
    n, inside, breaks = case
    # build spans from an inside mask, splitting runs wherever a break is set
    spans, start = [], None
    for k in range(n):
        if inside[k] and start is not None and breaks[k]:
            spans.append((start, k - 1))
            start = k
        elif inside[k] and start is None:
            start = k
        elif not inside[k] and start is not None:
            spans.append((start, k - 1))
            start = None
    if start is not None:
        spans.append((start, n - 1))
    tags = encode(n, spans)
    ends = {e for _, e in spans}
    for p, tag in enumerate(tags):
        if tag == B:
            assert p - 1 in ends
    assert decode(tags) == spans


def _check_decoded(tags, spans):
    prev = -1
    for s, e in spans:
        assert prev < s <= e < len(tags)
        prev = e


def test_decode_is_total_exhaustive():
    for n in range(9):
        for tags in itertools.product((I, O, B), repeat=n):
            _check_decoded(tags, decode(tags))


def test_decode_rejects_unknown_codes():
    with pytest.raises(ValueError):
        decode([7])
