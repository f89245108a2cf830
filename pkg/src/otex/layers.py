"""Embedding lookup, GRU recurrences and the two tagging models.

Sequences are ``[dim x length]`` matrices, one column per timestep.  The GRU
follows the interpolation convention in which the update gate weights the
candidate state::

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    g = elu(Wh x + Uh (r * h) + bh)
    h' = (1 - z) * h + z * g
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from . import iob
from .data import PAD_ID, EncodedSentence, Sentence, Vocab, encode_sentence
from .errors import CapabilityError, ContractError, ShapeError, ValidationError
from .numerics import (
    Graph,
    Tensor,
    add,
    add_bias,
    concat,
    dropout_mask,
    elu,
    matmul,
    mul,
    one_minus,
    sigmoid,
    softmax,
    take,
    take_columns,
    transpose,
)

WORD_ONLY = "word-only"
CHAR_WORD = "char+word"
VARIANTS = (WORD_ONLY, CHAR_WORD)
TAG_DIM = 3
GATES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")
INIT_SCALE = 0.08


class GruParams(NamedTuple):
    Wz: Tensor
    Uz: Tensor
    bz: Tensor
    Wr: Tensor
    Ur: Tensor
    br: Tensor
    Wh: Tensor
    Uh: Tensor
    bh: Tensor

    @property
    def hidden(self) -> int:
        return self.Uz.shape[0]


class BiGruParams(NamedTuple):
    forward: GruParams
    backward: GruParams


class EmbeddingTable(NamedTuple):
    matrix: Tensor
    trainable: bool = True

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[1]

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


class CharWordEncoderParams(NamedTuple):
    char_table: EmbeddingTable
    char_bigru: BiGruParams
    Wcw: Tensor
    bcw: Tensor


class TagProjectionParams(NamedTuple):
    Wtag: Tensor
    btag: Tensor


class BoundModel(NamedTuple):
    """Model parameters as tensors, optionally attached to a graph."""

    word_table: EmbeddingTable
    sentence_bigru: BiGruParams
    tag_proj: TagProjectionParams
    char_encoder: Optional[CharWordEncoderParams]


# primitives ------------------------------------------------------------------


def embed_lookup(table: EmbeddingTable, ids) -> Tensor:
    """Columns of ``table`` for ``ids`` as a ``[dim x len(ids)]`` matrix."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab_size):
        raise IndexError(f"embedding id outside [0, {table.vocab_size})")
    return take_columns(table.matrix, ids)


def gru_step(p: GruParams, x: Tensor, h_prev: Tensor) -> Tensor:
    """One timestep, written out gate by gate."""
    if x.shape[0] != p.Wz.shape[1] or h_prev.shape[0] != p.hidden:
        raise ShapeError(f"gru_step: input {x.shape} / state {h_prev.shape} do not fit weights {p.Wz.shape}")
    z = sigmoid(add_bias(add(matmul(p.Wz, x), matmul(p.Uz, h_prev)), p.bz))
    r = sigmoid(add_bias(add(matmul(p.Wr, x), matmul(p.Ur, h_prev)), p.br))
    g = elu(add_bias(add(matmul(p.Wh, x), matmul(p.Uh, mul(r, h_prev))), p.bh))
    return add(mul(one_minus(z), h_prev), mul(z, g))


class _Stacked(NamedTuple):
    W: Tensor  # [3h x in] rows z, r, h
    b: Tensor
    Uzr: Tensor  # [2h x h]
    Uh: Tensor
    hidden: int


def _stack(p: GruParams) -> _Stacked:
    return _Stacked(
        concat([p.Wz, p.Wr, p.Wh], axis=0),
        concat([p.bz, p.br, p.bh], axis=0),
        concat([p.Uz, p.Ur], axis=0),
        p.Uh,
        p.hidden,
    )


def _scan(s: _Stacked, proj: Tensor, steps: int, width: int, h0: Tensor, masks=None) -> List[Tensor]:
    """Run the recurrence over precomputed input projections.

    ``proj`` is ``[3h x steps*width]`` laid out step-major; each step advances
    ``width`` independent sequences.  ``masks[t]`` (0/1 constant, ``[h x
    width]``) freezes finished sequences: their update gate is forced to zero
    so the state passes through unchanged.
    """
    h = s.hidden
    rows_zr, rows_h = slice(0, 2 * h), slice(2 * h, 3 * h)
    rows_z, rows_r = slice(0, h), slice(h, 2 * h)
    state = h0
    states = []
    for t in range(steps):
        col = take(proj, (slice(None), slice(t * width, (t + 1) * width)))
        zr = sigmoid(add(take(col, rows_zr), matmul(s.Uzr, state)))
        z = take(zr, rows_z)
        r = take(zr, rows_r)
        g = elu(add(take(col, rows_h), matmul(s.Uh, mul(r, state))))
        if masks is not None and masks[t] is not None:
            z = mul(z, masks[t])
        state = add(mul(one_minus(z), state), mul(z, g))
        states.append(state)
    return states


def _zeros(like: Tensor, shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=like.dtype))


def gru_sequence(p: GruParams, xs: Tensor, h0: Optional[Tensor] = None) -> Tensor:
    """Hidden state for every column of ``xs`` (``[in x n]``), as ``[h x n]``."""
    if xs.data.ndim != 2:
        raise ShapeError("gru_sequence expects a [dim x length] matrix")
    n = xs.shape[1]
    if n == 0:
        raise ContractError("gru_sequence over an empty sequence")
    s = _stack(p)
    if h0 is None:
        h0 = _zeros(xs, (s.hidden, 1))
    elif h0.data.ndim == 1:
        h0 = take(h0, (slice(None), None))
    proj = add_bias(matmul(s.W, xs), s.b)
    return concat(_scan(s, proj, n, 1, h0), axis=1)


def _reverse_columns(m: Tensor) -> Tensor:
    return take(m, (slice(None), slice(None, None, -1)))


def bigru(p: BiGruParams, xs: Tensor) -> Tensor:
    """Per-timestep ``[forward : backward]`` states, ``[2h x n]``."""
    fwd = gru_sequence(p.forward, xs)
    bwd = _reverse_columns(gru_sequence(p.backward, _reverse_columns(xs)))
    return concat([fwd, bwd], axis=0)


def _final_states(p: GruParams, table: EmbeddingTable, seqs: Sequence[np.ndarray]) -> Tensor:
    """Last state of each id sequence, run side by side; ``[h x len(seqs)]``."""
    width = len(seqs)
    lengths = np.array([len(q) for q in seqs])
    steps = int(lengths.max())
    ids = np.full((steps, width), PAD_ID, dtype=np.int64)
    for k, q in enumerate(seqs):
        ids[: len(q), k] = q
    s = _stack(p)
    x = embed_lookup(table, ids.reshape(-1))
    proj = add_bias(matmul(s.W, x), s.b)
    dtype = proj.dtype
    masks = []
    for t in range(steps):
        alive = lengths > t
        masks.append(None if alive.all() else Tensor(np.broadcast_to(alive.astype(dtype), (s.hidden, width))))
    h0 = Tensor(np.zeros((s.hidden, width), dtype=dtype))
    return _scan(s, proj, steps, width, h0, masks)[-1]


def char_word_embed_batch(p: CharWordEncoderParams, words: Sequence[Sequence[int]]) -> Tensor:
    """Character-level embeddings for several words at once, ``[d_chr x len(words)]``.

    The forward GRU's final state is taken at the last character and the
    backward GRU's at the first character.
    """
    seqs = [np.asarray(w, dtype=np.int64) for w in words]
    if not seqs or any(len(q) == 0 for q in seqs):
        raise ContractError("character sequences must be non-empty")
    last_fwd = _final_states(p.char_bigru.forward, p.char_table, seqs)
    first_bwd = _final_states(p.char_bigru.backward, p.char_table, [q[::-1] for q in seqs])
    g = concat([last_fwd, first_bwd], axis=0)
    return add_bias(matmul(p.Wcw, g), p.bcw)


def char_word_embed(p: CharWordEncoderParams, chars: Sequence[int]) -> Tensor:
    return take(char_word_embed_batch(p, [chars]), (slice(None), 0))


def project_tags(p: TagProjectionParams, states: Tensor) -> Tensor:
    """Column-wise tag distributions, ``[3 x n]``."""
    return softmax(add_bias(matmul(p.Wtag, states), p.btag), axis=0)


# model -----------------------------------------------------------------------


@dataclass
class ModelConfig:
    variant: str = CHAR_WORD
    word_vocab_size: int = 50000
    char_vocab_size: int = 100
    hidden: int = 100
    char_dim: int = 100
    word_dim: int = 100
    dropout: float = 0.5
    train_word_embeddings: bool = True
    seed: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.hidden < 2 or self.hidden % 2:
            raise ValidationError("hidden size must be a positive even number (split across directions)")
        if min(self.word_vocab_size, self.char_vocab_size, self.word_dim, self.char_dim) < 1:
            raise ValidationError("sizes must be positive")
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must be in [0, 1)")

    @property
    def has_chars(self) -> bool:
        return self.variant == CHAR_WORD

    @property
    def sentence_input_dim(self) -> int:
        return self.word_dim + (self.char_dim if self.has_chars else 0)

    def to_items(self) -> Dict[str, str]:
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_items(cls, items: Dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            if f.type in ("int", int):
                kwargs[f.name] = int(raw)
            elif f.type in ("float", float):
                kwargs[f.name] = float(raw)
            elif f.type in ("bool", bool):
                kwargs[f.name] = raw == "True"
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


def init_embedding(dim: int, size: int, rng: np.random.Generator) -> np.ndarray:
    bound = 0.5 / dim
    return rng.uniform(-bound, bound, size=(dim, size)).astype(np.float32)


def param_shapes(cfg: ModelConfig) -> Dict[str, tuple]:
    shapes = {"word.emb": (cfg.word_dim, cfg.word_vocab_size)}

    def gru(prefix, n_in, n_h):
        for gate in "zrh":
            shapes[f"{prefix}.W{gate}"] = (n_h, n_in)
            shapes[f"{prefix}.U{gate}"] = (n_h, n_h)
            shapes[f"{prefix}.b{gate}"] = (n_h,)

    half = cfg.hidden // 2
    gru("sent.fwd", cfg.sentence_input_dim, half)
    gru("sent.bwd", cfg.sentence_input_dim, half)
    shapes["tag.W"] = (TAG_DIM, cfg.hidden)
    shapes["tag.b"] = (TAG_DIM,)
    if cfg.has_chars:
        d = cfg.char_dim
        shapes["char.emb"] = (d, cfg.char_vocab_size)
        gru("char.fwd", d, d)
        gru("char.bwd", d, d)
        shapes["cw.W"] = (d, 2 * d)
        shapes["cw.b"] = (d,)
    return shapes


def init_params(cfg: ModelConfig, word_embeddings: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in sorted(param_shapes(cfg).items()):
        leaf = name.rsplit(".", 1)[1]
        if leaf == "emb":
            params[name] = init_embedding(shape[0], shape[1], rng)
        elif leaf.startswith("b"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            params[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(np.float32)
    if word_embeddings is not None:
        if word_embeddings.shape != params["word.emb"].shape:
            raise ShapeError(f"pretrained matrix {word_embeddings.shape} != {params['word.emb'].shape}")
        params["word.emb"] = np.array(word_embeddings, dtype=np.float32)
    return params


def bind(params: Dict[str, Tensor], cfg: ModelConfig) -> BoundModel:
    def gru(prefix):
        return GruParams(*(params[f"{prefix}.{g}"] for g in GATES))

    char = None
    if cfg.has_chars:
        char = CharWordEncoderParams(
            EmbeddingTable(params["char.emb"]),
            BiGruParams(gru("char.fwd"), gru("char.bwd")),
            params["cw.W"],
            params["cw.b"],
        )
    return BoundModel(
        EmbeddingTable(params["word.emb"], cfg.train_word_embeddings),
        BiGruParams(gru("sent.fwd"), gru("sent.bwd")),
        TagProjectionParams(params["tag.W"], params["tag.b"]),
        char,
    )


def forward_batch(
    m: BoundModel,
    encs: Sequence[EncodedSentence],
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> List[Tensor]:
    """Tag distributions (``[3 x n]``) for independent sentences.

    Word lookups and character encodings are shared across the batch (each
    distinct word is encoded once); every sentence then runs its own BiGRU.
    Dropout is applied to the sentence input and to the BiGRU output when an
    ``rng`` is given.
    """
    if not encs or any(len(e.word_ids) == 0 for e in encs):
        raise ContractError("every sentence needs at least one token")
    all_ids = np.concatenate([e.word_ids for e in encs])
    xw_all = embed_lookup(m.word_table, all_ids)
    xc_all, positions = None, None
    if m.char_encoder is not None:
        index: Dict[tuple, int] = {}
        positions = []
        for e in encs:
            positions.append([index.setdefault(tuple(c.tolist()), len(index)) for c in e.char_ids])
        xc_all = char_word_embed_batch(m.char_encoder, [list(k) for k in index])
    outputs = []
    offset = 0
    for k, e in enumerate(encs):
        n = len(e.word_ids)
        x = take(xw_all, (slice(None), slice(offset, offset + n)))
        offset += n
        if xc_all is not None:
            x = concat([x, take_columns(xc_all, positions[k])], axis=0)
        if rng is not None and dropout > 0:
            x = mul(x, Tensor(dropout_mask(x.shape, dropout, rng, x.dtype)))
        states = bigru(m.sentence_bigru, x)
        if rng is not None and dropout > 0:
            states = mul(states, Tensor(dropout_mask(states.shape, dropout, rng, states.dtype)))
        outputs.append(project_tags(m.tag_proj, states))
    return outputs


# argmax priority: O, then I, then B
_TIE_ORDER = np.array([iob.O, iob.I, iob.B])


def argmax_tags(probs: np.ndarray) -> List[int]:
    """Row-wise argmax of an ``[n x 3]`` array with ties resolved O > I > B."""
    probs = np.asarray(probs)
    return [int(t) for t in _TIE_ORDER[np.argmax(probs[:, _TIE_ORDER], axis=1)]]


class Model:
    """Parameters, configuration and vocabularies of one tagger."""

    def __init__(self, config: ModelConfig, word_vocab: Vocab, char_vocab: Vocab,
                 params: Optional[Dict[str, np.ndarray]] = None,
                 word_embeddings: Optional[np.ndarray] = None):
        if len(word_vocab) != config.word_vocab_size or len(char_vocab) != config.char_vocab_size:
            raise ValidationError("vocabulary sizes disagree with the model configuration")
        self.config = config
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.params = params if params is not None else init_params(config, word_embeddings)
        expected = param_shapes(config)
        for name, shape in expected.items():
            if name not in self.params or self.params[name].shape != shape:
                raise ValidationError(f"parameter {name!r} missing or not of shape {shape}")
        if set(self.params) != set(expected):
            raise ValidationError(f"unexpected parameters {sorted(set(self.params) - set(expected))}")

    @classmethod
    def create(cls, variant: str, word_vocab: Vocab, char_vocab: Vocab,
               word_embeddings: Optional[np.ndarray] = None, **kwargs) -> "Model":
        cfg = ModelConfig(variant=variant, word_vocab_size=len(word_vocab),
                          char_vocab_size=len(char_vocab), **kwargs)
        return cls(cfg, word_vocab, char_vocab, word_embeddings=word_embeddings)

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def has_chars(self) -> bool:
        return self.config.has_chars

    def encode(self, sentence: Sentence) -> EncodedSentence:
        return encode_sentence(sentence, self.word_vocab, self.char_vocab)

    def trainable_names(self) -> List[str]:
        names = sorted(self.params)
        if not self.config.train_word_embeddings:
            names.remove("word.emb")
        return names

    def tensors(self, graph: Optional[Graph] = None) -> Dict[str, Tensor]:
        """A tensor per parameter; trainable ones are registered on ``graph`` when given."""
        trainable = set(self.trainable_names())
        out = {}
        for name in sorted(self.params):
            value = self.params[name]
            if graph is not None and name in trainable:
                out[name] = graph.param(name, value)
            else:
                dtype = graph.dtype if graph is not None else value.dtype
                out[name] = Tensor(np.asarray(value, dtype=dtype))
        return out

    def bind(self, graph: Optional[Graph] = None) -> BoundModel:
        return bind(self.tensors(graph), self.config)

    def probabilities(self, encs: Sequence[EncodedSentence]) -> List[np.ndarray]:
        """Inference-mode ``[n x 3]`` tag distributions (no dropout, no graph)."""
        return [q.data.T for q in forward_batch(self.bind(), encs)]

    def predict(self, encs: Sequence[EncodedSentence], batch_size: int = 32) -> List[List[int]]:
        out = []
        for k in range(0, len(encs), batch_size):
            out.extend(argmax_tags(p) for p in self.probabilities(encs[k:k + batch_size]))
        return out

    def word_vectors(self) -> Dict[str, np.ndarray]:
        emb = self.params["word.emb"]
        return {w: emb[:, i] for i, w in enumerate(self.word_vocab.symbols) if i >= 2}

    def char_word_vectors(self, words: Sequence[str]) -> np.ndarray:
        """``[len(words) x d_chr]`` character-level embeddings."""
        if not self.has_chars:
            raise CapabilityError("word-only model has no character encoder")
        m = self.bind()
        ids = [[self.char_vocab.lookup(ch) for ch in w] for w in words]
        return char_word_embed_batch(m.char_encoder, ids).data.T.copy()


def model_forward(model: Model, enc: EncodedSentence, mode: str = "infer",
                  rng: Optional[np.random.Generator] = None, graph: Optional[Graph] = None) -> Tensor:
    """``[n x 3]`` distributions over (I, O, B) for one sentence."""
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    bound = model.bind(graph)
    if mode == "train":
        rng = rng if rng is not None else np.random.default_rng(model.config.seed)
        (q,) = forward_batch(bound, [enc], model.config.dropout, rng)
    else:
        (q,) = forward_batch(bound, [enc])
    return transpose(q)


def predict_tags(model: Model, enc: EncodedSentence) -> List[int]:
    return argmax_tags(model_forward(model, enc).data)
