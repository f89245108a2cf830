"""Binary model container.

Layout (little-endian)::

    b"OTEM" | u32 version | u32 meta_len | meta (UTF-8 key=value lines)
    | u32 n_params | n_params x (u32 name_len | name | u32 rank | rank x u32 dim | float32 data)

Parameters are written in sorted name order.  Vocabularies travel in the
metadata block as JSON lists so a model file is self-contained.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import Vocab
from .errors import FormatError
from .layers import Model, ModelConfig

MAGIC = b"OTEM"
VERSION = 1


def _meta_lines(model: Model) -> str:
    items = dict(model.config.to_items())
    items["word_vocab"] = json.dumps(model.word_vocab.words(), ensure_ascii=False)
    items["char_vocab"] = json.dumps(model.char_vocab.words(), ensure_ascii=False)
    return "".join(f"{k}={v}\n" for k, v in items.items())


def dumps(model: Model) -> bytes:
    meta = _meta_lines(model).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("model file truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def loads(buf: bytes) -> Model:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not a model file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported model format version {version}")
    meta = r.take(r.u32()).decode("utf-8")
    items = {}
    for line in meta.splitlines():
        if line:
            key, _, value = line.partition("=")
            items[key] = value
    try:
        word_vocab = Vocab(json.loads(items.pop("word_vocab")), "word")
        char_vocab = Vocab(json.loads(items.pop("char_vocab")), "char")
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"model metadata lacks vocabularies: {exc}") from None
    config = ModelConfig.from_items(items)
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        params[name] = data
    if r.pos != len(buf):
        raise FormatError("trailing bytes after parameter records")
    return Model(config, word_vocab, char_vocab, params)


def load_model(path) -> Model:
    return loads(Path(path).read_bytes())
