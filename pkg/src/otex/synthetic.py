"""Seeded synthetic corpora for smoke tests, gradient checks and sanity runs."""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np

from .data import Corpus, Sentence, Token
from .evaluation import DEFAULT_SUFFIXES
from .iob import TokenSpan

CONSONANTS = "bcdfgklmnprstvz"
VOWELS = "aeiou"
# endings for non-target words; none of them ends like a target suffix
NEUTRAL_ENDINGS = ("ed", "er", "s", "al", "ous", "ment", "ent", "um", "o", "")


def _syllables(rng: np.random.Generator, lo: int, hi: int) -> str:
    n = int(rng.integers(lo, hi + 1))
    return "".join(rng.choice(list(CONSONANTS)) + rng.choice(list(VOWELS)) for _ in range(n))


def make_stems(n: int, rng: np.random.Generator, exclude=()) -> List[str]:
    seen = set(exclude)
    stems = []
    while len(stems) < n:
        s = _syllables(rng, 1, 3)
        if s not in seen:
            seen.add(s)
            stems.append(s)
    return stems


def build_sentence(sid: str, words: Sequence[str], spans: Sequence[TokenSpan]) -> Sentence:
    tokens, pos = [], 0
    for w in words:
        tokens.append(Token(w, pos, pos + len(w)))
        pos += len(w) + 1
    return Sentence(sid, " ".join(words), tokens, list(spans))


def _place_spans(rng, n_tokens: int, n_spans: int, max_span: int) -> List[TokenSpan]:
    """Random non-overlapping, non-adjacent spans."""
    for _ in range(100):
        spans = []
        taken = np.zeros(n_tokens + 2, dtype=bool)
        for _ in range(n_spans):
            length = int(rng.integers(1, max_span + 1))
            start = int(rng.integers(0, n_tokens - length + 1))
            # keep a gap of one token on both sides
            if taken[start:start + length + 2].any():
                break
            taken[start:start + length + 2] = True
            spans.append(TokenSpan(start, start + length - 1))
        else:
            return sorted(spans)
    return [TokenSpan(0, 0)]


def planted_corpus(n: int, seed: int, min_len: int = 5, max_len: int = 12, max_span: int = 3,
                   n_fillers: int = 60, n_targets: int = 30, prefix: str = "syn") -> Corpus:
    """Random sentences with 1-2 target spans drawn from a separate target lexicon."""
    rng = np.random.default_rng(seed)
    fillers = make_stems(n_fillers, rng)
    targets = [t.capitalize() for t in make_stems(n_targets, rng, exclude=fillers)]
    sentences = []
    for k in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        spans = _place_spans(rng, length, int(rng.integers(1, 3)), max_span)
        words = [str(rng.choice(fillers)) for _ in range(length)]
        for sp in spans:
            for i in range(sp.start, sp.end + 1):
                words[i] = str(rng.choice(targets))
        sentences.append(build_sentence(f"{prefix}{k}", words, spans))
    return Corpus(sentences)


def suffix_corpus(n: int, seed: int, stems: Optional[Sequence[str]] = None, suffixes=DEFAULT_SUFFIXES,
                  min_len: int = 5, max_len: int = 12, prefix: str = "suf") -> Corpus:
    """Sentences whose targets are exactly the words carrying one of ``suffixes``.

    Every word is a random stem plus an ending; targets are single tokens and
    never adjacent, so context carries no information about them.
    """
    rng = np.random.default_rng(seed)
    stems = list(stems) if stems is not None else make_stems(200, rng)
    bare = [s.lstrip("-") for s in suffixes]

    def neutral_word():
        while True:
            w = str(rng.choice(stems)) + str(rng.choice(NEUTRAL_ENDINGS))
            if not any(w.endswith(b) for b in bare):
                return w

    sentences = []
    for k in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        spans = _place_spans(rng, length, int(rng.integers(1, 3)), 1)
        words = [neutral_word() for _ in range(length)]
        for sp in spans:
            words[sp.start] = str(rng.choice(stems)) + str(rng.choice(bare))
        sentences.append(build_sentence(f"{prefix}{k}", words, spans))
    return Corpus(sentences)


def micro_batch() -> Corpus:
    """Two short fixed sentences used by the gradient check."""
    return Corpus([
        build_sentence("g0", ["The", "wine", "list", "is", "nice", "."], [TokenSpan(1, 2)]),
        build_sentence("g1", ["Moules", "were", "ok", ",", "ravioli", "salty"], [TokenSpan(0, 0), TokenSpan(4, 4)]),
    ])
