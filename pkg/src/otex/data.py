"""Corpus ingestion, tokenization, vocabularies and batching."""
from __future__ import annotations

import logging
import unicodedata
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence

import numpy as np

from . import iob
from .errors import FormatError, ValidationError
from .iob import TokenSpan

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
PAD_ID, UNK_ID = 0, 1


class Token(NamedTuple):
    text: str
    char_start: int
    char_end: int


@dataclass
class Sentence:
    id: str
    text: str
    tokens: List[Token]
    spans: List[TokenSpan] = field(default_factory=list)
    char_spans: List[tuple] = field(default_factory=list)

    @property
    def words(self) -> List[str]:
        return [t.text for t in self.tokens]

    def surface(self, span: TokenSpan) -> str:
        return self.text[self.tokens[span.start].char_start:self.tokens[span.end].char_end]


@dataclass
class Corpus:
    sentences: List[Sentence]
    split: str = "train"

    def __post_init__(self):
        seen = set()
        for s in self.sentences:
            if s.id in seen:
                raise ValidationError(f"duplicate sentence id {s.id!r}")
            seen.add(s.id)

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    @property
    def num_targets(self) -> int:
        return sum(len(s.char_spans) if s.char_spans else len(s.spans) for s in self.sentences)

    def subset(self, sentences: Sequence[Sentence]) -> "Corpus":
        return Corpus(list(sentences), self.split)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> List[Token]:
    """Whitespace split, then peel leading and trailing punctuation off each chunk.

    Every peeled punctuation character becomes its own token; punctuation
    inside a chunk ("wait-staff", "don't") stays put.
    """
    tokens = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        lo, hi = i, j
        head = []
        while lo < hi and _is_punct(text[lo]):
            head.append(Token(text[lo], lo, lo + 1))
            lo += 1
        tail = []
        while hi > lo and _is_punct(text[hi - 1]):
            tail.append(Token(text[hi - 1], hi - 1, hi))
            hi -= 1
        tokens.extend(head)
        if lo < hi:
            tokens.append(Token(text[lo:hi], lo, hi))
        tokens.extend(reversed(tail))
        i = j
    return tokens


def align_spans(tokens: Sequence[Token], char_spans, stats: Optional[Counter] = None) -> List[TokenSpan]:
    """Map character spans onto the tokens they overlap.

    Spans touching no token are dropped (counted under ``stats['unaligned']``);
    overlapping results are merged.
    """
    found = []
    for cs, ce in char_spans:
        hit = [k for k, t in enumerate(tokens) if t.char_start < ce and cs < t.char_end]
        if not hit:
            if stats is not None:
                stats["unaligned"] += 1
            logger.warning("character span (%d, %d) covers no token", cs, ce)
            continue
        found.append((hit[0], hit[-1]))
    merged: List[TokenSpan] = []
    for s, e in sorted(found):
        if merged and s <= merged[-1].end:
            if stats is not None:
                stats["merged"] += 1
            merged[-1] = TokenSpan(merged[-1].start, max(e, merged[-1].end))
        else:
            merged.append(TokenSpan(s, e))
    return merged


def parse_semeval_xml(path, split: str = "train") -> Corpus:
    """Read an ABSA-2016 style file (Reviews/Review/sentences/sentence/Opinions/Opinion)."""
    path = Path(path)
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        line, col = exc.position
        raise FormatError(f"{path}:{line}:{col}: malformed XML ({exc})") from None
    stats: Counter = Counter()
    sentences = []
    for node in root.iter("sentence"):
        sid = node.get("id")
        text_node = node.find("text")
        if sid is None or text_node is None:
            raise FormatError(f"{path}: sentence without id or text element")
        text = text_node.text or ""
        char_spans = []
        for op in node.iter("Opinion"):
            target = op.get("target")
            if target is None or target == "NULL":
                continue
            try:
                start, end = int(op.get("from")), int(op.get("to"))
            except (TypeError, ValueError):
                raise ValidationError(f"{path}: sentence {sid}: opinion without integer from/to") from None
            if not 0 <= start < end <= len(text):
                raise ValidationError(f"{path}: sentence {sid}: offsets ({start}, {end}) outside text of length {len(text)}")
            if (start, end) not in char_spans:
                char_spans.append((start, end))
        char_spans.sort()
        tokens = tokenize(text)
        spans = align_spans(tokens, char_spans, stats)
        sentences.append(Sentence(sid, text, tokens, spans, char_spans))
    if stats:
        logger.info("%s: alignment stats %s", path, dict(stats))
    return Corpus(sentences, split)


def _sentence_from_words(sid: str, words: Sequence[str], spans=()) -> Sentence:
    tokens, pos = [], 0
    for w in words:
        tokens.append(Token(w, pos, pos + len(w)))
        pos += len(w) + 1
    return Sentence(sid, " ".join(words), tokens, list(spans))


def parse_conll(path, split: str = "train") -> Corpus:
    """One ``token<TAB>tag`` per line, blank lines between sentences."""
    sentences, words, tags = [], [], []

    def flush():
        if words:
            sid = f"s{len(sentences)}"
            sentences.append(_sentence_from_words(sid, words, iob.decode(tags)))
            words.clear()
            tags.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in iob.TAG_CODES:
                raise FormatError(f"{path}:{lineno}: expected 'token<TAB>tag' with tag in I/O/B")
            words.append(parts[0])
            tags.append(iob.TAG_CODES[parts[1]])
    flush()
    return Corpus(sentences, split)


def parse_plain(path, split: str = "test") -> Corpus:
    """One untokenized sentence per line; ids s0, s1, ..."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    sentences = [Sentence(f"s{k}", ln, tokenize(ln)) for k, ln in enumerate(lines) if ln.strip()]
    return Corpus(sentences, split)


def read_corpus(path, fmt: str = "auto", split: str = "train") -> Corpus:
    path = Path(path)
    if fmt == "auto":
        suffix = path.suffix.lower()
        if suffix == ".xml":
            fmt = "xml"
        elif suffix in (".conll", ".tsv", ".iob"):
            fmt = "conll"
        else:
            fmt = "text"
    if fmt == "xml":
        return parse_semeval_xml(path, split)
    if fmt == "conll":
        return parse_conll(path, split)
    if fmt == "text":
        return parse_plain(path, split)
    raise ValueError(f"unknown corpus format {fmt!r}")


class Vocab:
    """Symbol to index map with ``PAD`` = 0 and ``UNK`` = 1."""

    def __init__(self, symbols: Sequence[str], kind: str = "word"):
        self.kind = kind
        self.symbols = [PAD, UNK] + [s for s in symbols if s not in (PAD, UNK)]
        self.index: Dict[str, int] = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise ValidationError("vocabulary symbols must be unique")

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, sym):
        return sym in self.index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.kind == other.kind and self.symbols == other.symbols

    def lookup(self, sym: str) -> int:
        return self.index.get(sym, UNK_ID)

    def words(self) -> List[str]:
        """Non-reserved symbols in index (frequency) order."""
        return self.symbols[2:]


def build_vocab(corpus, kind: str = "word", max_size: int = 50000) -> Vocab:
    """Keep the ``max_size`` most frequent symbols; ties are broken lexicographically."""
    if max_size < 1:
        raise ValidationError("max_size must be at least 1")
    sentences = list(corpus)
    if not sentences:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    for s in sentences:
        for tok in s.tokens:
            if kind == "word":
                counts[tok.text.lower()] += 1
            elif kind == "char":
                counts.update(ch for ch in tok.text if not ch.isspace())
            else:
                raise ValueError(f"unknown vocabulary kind {kind!r}")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([sym for sym, _ in ranked[:max_size]], kind)


def read_embedding_file(path, dim: Optional[int] = None, stats: Optional[Counter] = None) -> Dict[str, np.ndarray]:
    """Parse a text embedding file; the first occurrence of a repeated token wins."""
    entries: Dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                header_dim = int(parts[1])
                if dim is not None and header_dim != dim:
                    raise FormatError(f"{path}:1: header declares dimension {header_dim}, expected {dim}")
                dim = header_dim
                continue
            if dim is None:
                dim = len(parts) - 1
            if len(parts) - 1 != dim:
                raise FormatError(f"{path}:{lineno}: expected {dim} values, found {len(parts) - 1}")
            tok = parts[0]
            if tok in entries:
                if stats is not None:
                    stats["duplicates"] += 1
                continue
            try:
                entries[tok] = np.array(parts[1:], dtype=np.float32)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric embedding value") from None
    return entries


@dataclass
class LoadedEmbeddings:
    matrix: np.ndarray
    coverage: float
    duplicates: int


def load_embeddings(path, vocab: Vocab, dim: int, rng: Optional[np.random.Generator] = None) -> LoadedEmbeddings:
    """Build a ``[dim x |vocab|]`` matrix from a pretrained file.

    Columns for symbols missing from the file (including ``UNK``) keep the
    random initialization used for untrained embedding tables.
    """
    from .layers import init_embedding

    rng = rng if rng is not None else np.random.default_rng(0)
    stats: Counter = Counter()
    entries = read_embedding_file(path, dim, stats)
    matrix = init_embedding(dim, len(vocab), rng)
    hits = 0
    for idx, sym in enumerate(vocab.symbols):
        if idx < 2:
            continue
        vec = entries.get(sym)
        if vec is not None:
            matrix[:, idx] = vec
            hits += 1
    n = len(vocab) - 2
    coverage = hits / n if n else 0.0
    if stats["duplicates"]:
        logger.warning("%s: %d duplicate tokens ignored", path, stats["duplicates"])
    return LoadedEmbeddings(matrix, coverage, stats["duplicates"])


class EncodedSentence(NamedTuple):
    word_ids: np.ndarray
    char_ids: List[np.ndarray]
    tags: np.ndarray


def encode_sentence(s: Sentence, wv: Vocab, cv: Vocab) -> EncodedSentence:
    word_ids = np.array([wv.lookup(t.text.lower()) for t in s.tokens], dtype=np.int64)
    char_ids = [np.array([cv.lookup(ch) for ch in t.text], dtype=np.int64) for t in s.tokens]
    tags = np.array(iob.encode(len(s.tokens), s.spans), dtype=np.int64)
    return EncodedSentence(word_ids, char_ids, tags)


def batches(items: Sequence, size: int, seed: int, epoch: int = 0) -> Iterator[list]:
    """Seeded shuffle for ``epoch``, then consecutive groups of at most ``size``."""
    if size < 1:
        raise ValidationError("batch size must be at least 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    for k in range(0, len(order), size):
        yield [items[i] for i in order[k:k + size]]
