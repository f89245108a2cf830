"""Exact-match scoring and the error-analysis utilities."""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import iob
from .data import UNK_ID, Corpus, EncodedSentence, Sentence, Vocab
from .errors import CapabilityError, ValidationError
from .iob import TokenSpan

DEFAULT_SUFFIXES = ("-ing", "-ly", "-able", "-ish", "-less", "-ize")
STANDARD_SUBSETS = ("all", "no_oov", "oov_sentence", "oov_opinion", "multiword_2", "multiword_3", "multiword_4")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, fp, fn)


def exact_match_prf(gold: Mapping[str, Iterable], pred: Mapping[str, Iterable]) -> PRF:
    """Micro-averaged precision/recall/F1 over spans keyed by sentence id.

    A predicted span counts only if the same (start, end) appears in that
    sentence's gold set.
    """
    if set(gold) != set(pred):
        missing = sorted(set(gold) ^ set(pred))[:5]
        raise ValidationError(f"gold and predicted sentence ids differ (e.g. {missing})")
    tp = fp = fn = 0
    for sid, gold_spans in gold.items():
        g = {tuple(s) for s in gold_spans}
        p = {tuple(s) for s in pred[sid]}
        hit = len(g & p)
        tp += hit
        fp += len(p) - hit
        fn += len(g) - hit
    return PRF.from_counts(tp, fp, fn)


class SubsetSpec(NamedTuple):
    kind: str
    k: Optional[int] = None

    @property
    def name(self) -> str:
        return f"multiword_{self.k}" if self.kind == "multiword" else self.kind

    @classmethod
    def parse(cls, name: str) -> "SubsetSpec":
        if name.startswith("multiword_"):
            k = int(name.split("_", 1)[1])
            if k < 2:
                raise ValidationError("multiword subsets need k >= 2")
            return cls("multiword", k)
        if name not in ("all", "no_oov", "oov_sentence", "oov_opinion"):
            raise ValidationError(f"unknown subset {name!r}")
        return cls(name)


def _unknown(word: str, wv: Vocab) -> bool:
    return wv.lookup(word.lower()) == UNK_ID


def subset_filter(sentences: Iterable[Sentence], wv: Vocab, spec: SubsetSpec) -> List[Sentence]:
    out = []
    for s in sentences:
        words = s.words
        if spec.kind == "all":
            keep = True
        elif spec.kind == "no_oov":
            keep = not any(_unknown(w, wv) for w in words)
        elif spec.kind == "oov_sentence":
            keep = any(_unknown(w, wv) for w in words)
        elif spec.kind == "oov_opinion":
            keep = any(_unknown(words[k], wv) for sp in s.spans for k in range(sp.start, sp.end + 1))
        elif spec.kind == "multiword":
            keep = any(sp.end - sp.start + 1 >= spec.k for sp in s.spans)
        else:
            raise ValidationError(f"unknown subset kind {spec.kind!r}")
        if keep:
            out.append(s)
    return out


def predict_spans(model, sentences: Sequence[Sentence]) -> Dict[str, List[TokenSpan]]:
    encs = [model.encode(s) for s in sentences]
    tags = model.predict(encs)
    return {s.id: iob.decode(t) for s, t in zip(sentences, tags)}


def evaluate(model, corpus: Corpus, specs: Sequence[SubsetSpec]) -> Dict[str, PRF]:
    """Tag the corpus once and score each requested subset on its own."""
    sentences = list(corpus)
    pred = predict_spans(model, sentences)
    table = {}
    for spec in specs:
        chosen = subset_filter(sentences, model.word_vocab, spec)
        gold = {s.id: s.spans for s in chosen}
        table[spec.name] = exact_match_prf(gold, {sid: pred[sid] for sid in gold})
    return table


def tagging_f1(model, encs: Sequence[EncodedSentence]) -> float:
    """Exact-match F1 of the model's decoded tags against the encoded gold tags."""
    tags = model.predict(list(encs))
    gold = {str(k): iob.decode(e.tags.tolist()) for k, e in enumerate(encs)}
    pred = {str(k): iob.decode(t) for k, t in enumerate(tags)}
    return exact_match_prf(gold, pred).f1


def format_metrics(table: Mapping[str, PRF], header: Optional[str] = None) -> str:
    lines = [f"# {header}"] if header else []
    for name, prf in table.items():
        for metric in ("precision", "recall", "f1"):
            lines.append(f"{name}\t{metric}\t{getattr(prf, metric):.4f}")
    return "\n".join(lines) + "\n"


def format_comparison(a: Mapping[str, PRF], b: Mapping[str, PRF], header: Optional[str] = None) -> str:
    """Side-by-side metrics of two models with a ``b - a`` delta column."""
    lines = [f"# {header}"] if header else []
    lines.append("subset\tmetric\tmodel_a\tmodel_b\tdelta")
    for name in a:
        for metric in ("precision", "recall", "f1"):
            va, vb = getattr(a[name], metric), getattr(b[name], metric)
            lines.append(f"{name}\t{metric}\t{va:.4f}\t{vb:.4f}\t{vb - va:+.4f}")
    return "\n".join(lines) + "\n"


def nearest_neighbors(embeddings: Mapping[str, np.ndarray], query: str, k: int) -> List[Tuple[str, float]]:
    """Top-``k`` tokens by cosine similarity to ``query`` (itself excluded)."""
    if query not in embeddings:
        raise KeyError(query)
    if k < 1:
        raise ValueError("k must be at least 1")
    q = np.asarray(embeddings[query], dtype=np.float64)
    qn = np.linalg.norm(q)
    scored = []
    for tok, vec in embeddings.items():
        if tok == query:
            continue
        v = np.asarray(vec, dtype=np.float64)
        denom = qn * np.linalg.norm(v)
        cos = float(q @ v / denom) if denom > 0 else 0.0
        scored.append((-cos, tok))
    scored.sort()
    return [(tok, -neg) for neg, tok in scored[:k]]


def _norm_suffix(s: str) -> str:
    return s[1:] if s.startswith("-") else s


def suffix_groups(tokens: Sequence[str], suffixes: Sequence[str] = DEFAULT_SUFFIXES, top: int = 2000) -> Dict[str, str]:
    """Label the ``top`` most frequent tokens by the longest suffix they end with.

    ``tokens`` must be ranked by frequency.  Tokens matching no suffix (or
    consisting of the suffix alone) are left out.
    """
    if not suffixes:
        raise ValueError("need at least one suffix")
    by_length = sorted(suffixes, key=lambda s: -len(_norm_suffix(s)))
    groups = {}
    for tok in tokens[:top]:
        for suf in by_length:
            bare = _norm_suffix(suf)
            if tok.endswith(bare) and len(tok) > len(bare):
                groups[tok] = "-" + bare
                break
    return groups


def export_embeddings(model, tokens: Sequence[str], source: str = "word",
                      labels: Optional[Mapping[str, str]] = None) -> str:
    """Tab-separated vectors, one row per token, in the given order."""
    if source == "word":
        emb = model.params["word.emb"]
        rows = np.stack([emb[:, model.word_vocab.lookup(t.lower())] for t in tokens]) if tokens else np.zeros((0, emb.shape[0]))
    elif source == "charword":
        if not model.has_chars:
            raise CapabilityError("character-level export requested from a word-only model")
        rows = model.char_word_vectors(tokens) if tokens else np.zeros((0, model.config.char_dim))
    else:
        raise ValueError(f"unknown embedding source {source!r}")
    dim = rows.shape[1]
    head = ["token"] + (["label"] if labels is not None else []) + [f"d{i}" for i in range(dim)]
    buf = io.StringIO()
    buf.write("\t".join(head) + "\n")
    for tok, row in zip(tokens, rows):
        cells = [tok] + ([labels.get(tok, "")] if labels is not None else []) + [f"{x:.6f}" for x in row]
        buf.write("\t".join(cells) + "\n")
    return buf.getvalue()


def read_export(text: str) -> Tuple[List[str], Optional[List[str]], np.ndarray]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValidationError("empty embedding export")
    head = lines[0].split("\t")
    labelled = len(head) > 1 and head[1] == "label"
    start = 2 if labelled else 1
    tokens, labels, rows = [], [] if labelled else None, []
    for ln in lines[1:]:
        cells = ln.split("\t")
        tokens.append(cells[0])
        if labelled:
            labels.append(cells[1])
        rows.append([float(x) for x in cells[start:]])
    return tokens, labels, np.array(rows, dtype=np.float64).reshape(len(rows), len(head) - start)


def _power_iteration(cov: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    start = int(np.argmax(np.linalg.norm(cov, axis=0)))
    v = cov[:, start].copy()
    norm = np.linalg.norm(v)
    if norm == 0:
        return v
    v /= norm
    for _ in range(max_iter):
        w = cov @ v
        n = np.linalg.norm(w)
        if n == 0:
            return w
        w /= n
        if np.dot(w, v) < 0:
            w = -w
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return v


def pca_project(vectors, tol: float = 1e-9, max_iter: int = 1000) -> np.ndarray:
    """Coordinates on the top two principal directions (power iteration with deflation).

    Each output column is signed so its first clearly non-zero entry is positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("pca_project needs at least two row vectors")
    x = x - x.mean(axis=0)
    cov = x.T @ x / (x.shape[0] - 1)
    if not np.any(np.abs(cov) > 0) or np.trace(cov) <= 1e-300:
        raise ValidationError("data has zero variance")
    d = x.shape[1]
    directions = []
    for _ in range(min(2, d)):
        v = _power_iteration(cov, tol, max_iter)
        for u in directions:
            v = v - (u @ v) * u
        n = np.linalg.norm(v)
        if n < 1e-12:
            # no variance left: any unit vector orthogonal to what we have
            basis = np.eye(d)
            for u in directions:
                basis = basis - np.outer(basis @ u, u)
            v = basis[int(np.argmax(np.linalg.norm(basis, axis=1)))]
            n = np.linalg.norm(v)
        v = v / n
        directions.append(v)
        lam = v @ cov @ v
        cov = cov - lam * np.outer(v, v)
    coords = x @ np.stack(directions, axis=1)
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((coords.shape[0], 2 - coords.shape[1]))])
    for j in range(2):
        col = coords[:, j]
        scale = np.max(np.abs(col))
        nz = np.flatnonzero(np.abs(col) > 1e-9 * max(scale, 1e-300))
        if nz.size and col[nz[0]] < 0:
            coords[:, j] = -col
    return coords


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def closest_token(word: str, candidates: Iterable[str]) -> Optional[str]:
    best = None
    for c in candidates:
        key = (edit_distance(word, c), c)
        if best is None or key < best:
            best = key
    return best[1] if best else None

