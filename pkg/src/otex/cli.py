"""Command-line interface: ``otex {train,grid,tag,eval,analyze,gradcheck}``.

Machine-readable results go to files (or stdout where noted); a short human
summary goes to stdout.  Exit codes: 0 success, 1 failed check, 2 bad usage
or input.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import checkpoint, iob
from .data import Corpus, build_vocab, load_embeddings, read_corpus, read_embedding_file
from .errors import CapabilityError, OtexError
from .evaluation import (
    DEFAULT_SUFFIXES,
    STANDARD_SUBSETS,
    SubsetSpec,
    closest_token,
    evaluate,
    export_embeddings,
    format_comparison,
    format_metrics,
    nearest_neighbors,
    pca_project,
    predict_spans,
    read_export,
    suffix_groups,
)
from .layers import CHAR_WORD, VARIANTS, WORD_ONLY, Model
from .numerics import grad_check_detail
from .synthetic import micro_batch
from .training import TrainConfig, loss_from_tensors, train

logger = logging.getLogger("otex")

OUTPUT_DIR_ENV = "OTEX_OUTPUT_DIR"
GRADCHECK_THRESHOLD = 1e-4


class UsageError(Exception):
    pass


def _int_list(text: str) -> List[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


# key -> (type, default); shared by flags and config files
MODEL_KEYS = {
    "variant": (str, CHAR_WORD),
    "vocab": (int, 50000),
    "hidden": (int, 100),
    "char_dim": (int, 100),
    "word_dim": (int, 100),
    "embeddings": (str, None),
    "freeze_embeddings": (bool, False),
}
TRAIN_KEYS = {
    "train": (str, None),
    "format": (str, "auto"),
    "dropout": (float, 0.5),
    "lr": (float, 1e-3),
    "batch_size": (int, 5),
    "max_norm": (float, 5.0),
    "l2": (float, 1e-5),
    "max_epochs": (int, 150),
    "patience": (int, 25),
    "val_fraction": (float, 0.2),
    "seed": (int, 1),
    "out_dir": (str, None),
}
GRID_KEYS = {
    "vocab_sizes": (_int_list, "10000,20000,50000"),
    "hidden_sizes": (_int_list, "60,100,200"),
    "char_dims": (_int_list, "20,50,100"),
    "folds": (int, 5),
}


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {raw!r}")


def read_config_file(path) -> Dict[str, str]:
    items = {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        items[key.replace("-", "_")] = value
    return items


def resolve(args, keys: Dict[str, tuple]) -> Dict[str, object]:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    from_file = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(from_file) - set(keys))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, (kind, default) in keys.items():
        value = getattr(args, key, None)
        if value is None:
            value = from_file.get(key, default)
        if value is None:
            out[key] = None
            continue
        try:
            out[key] = _parse_bool(value) if kind is bool else kind(value)
        except ValueError:
            raise UsageError(f"bad value for {key}: {value!r}") from None
    return out


def _add_keys(p: argparse.ArgumentParser, keys: Dict[str, tuple]):
    for key, (kind, default) in keys.items():
        flag = "--" + key.replace("_", "-")
        if kind is bool:
            p.add_argument(flag, dest=key, action="store_const", const=True, default=None)
        else:
            p.add_argument(flag, dest=key, default=None, help=f"default: {default}")


def _existing(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing {what} path")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _out_dir(opts) -> Path:
    d = Path(opts.get("out_dir") or os.environ.get(OUTPUT_DIR_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def make_model(corpus: Corpus, opts: Dict[str, object], vocab_size: Optional[int] = None,
               hidden: Optional[int] = None, char_dim: Optional[int] = None) -> Model:
    wv = build_vocab(corpus, "word", vocab_size or opts["vocab"])
    cv = build_vocab(corpus, "char", 1000)
    emb = None
    if opts.get("embeddings"):
        loaded = load_embeddings(_existing(opts["embeddings"], "embedding file"), wv, opts["word_dim"],
                                 np.random.default_rng(opts["seed"]))
        logger.info("pretrained embedding coverage %.3f", loaded.coverage)
        emb = loaded.matrix
    return Model.create(
        opts["variant"], wv, cv, word_embeddings=emb,
        hidden=hidden or opts["hidden"], char_dim=char_dim or opts["char_dim"],
        word_dim=opts["word_dim"], dropout=opts["dropout"],
        train_word_embeddings=not opts["freeze_embeddings"], seed=opts["seed"],
    )


def train_config(opts, **overrides) -> TrainConfig:
    kw = dict(
        batch_size=opts["batch_size"], max_norm=opts["max_norm"], l2_coeff=opts["l2"],
        learning_rate=opts["lr"], dropout_rate=opts["dropout"], max_epochs=opts["max_epochs"],
        patience=opts["patience"] if opts["patience"] else None, val_fraction=opts["val_fraction"],
        seed=opts["seed"],
    )
    kw.update(overrides)
    return TrainConfig(**kw)


# commands -----------------------------------------------------------------------


def cmd_train(args) -> int:
    opts = resolve(args, {**MODEL_KEYS, **TRAIN_KEYS, "model": (str, None), "report": (str, None)})
    corpus = read_corpus(_existing(opts["train"], "training data"), opts["format"], "train")
    if opts["variant"] not in VARIANTS:
        raise UsageError(f"--variant must be one of {', '.join(VARIANTS)}")
    out = _out_dir(opts)
    model = make_model(corpus, opts)
    encs = [model.encode(s) for s in corpus]
    started = time.time()
    report = train(model, encs, train_config(opts))
    model_path = Path(opts["model"] or out / "model.otem")
    report_path = Path(opts["report"] or out / "train_report.tsv")
    checkpoint.save_model(model, model_path)
    report_path.write_text(report.to_text(), encoding="utf-8")
    print(f"{model.variant}: best validation F1 {report.best_f1:.4f} at epoch {report.best_epoch} "
          f"({report.stop_reason}, {time.time() - started:.0f}s)")
    print(f"model written to {model_path}; report to {report_path}")
    return 0


def grid_configs(variant: str, vocab_sizes, hidden_sizes, char_dims) -> List[tuple]:
    """All (|V|, r, d_chr) combinations; word-only runs carry ``None`` for d_chr."""
    dims = char_dims if variant == CHAR_WORD else [None]
    return list(itertools.product(vocab_sizes, hidden_sizes, dims))


def cv_folds(n: int, k: int, seed: int) -> List[np.ndarray]:
    """Seeded shuffle, then ``k`` contiguous slices."""
    if not 2 <= k <= n:
        raise UsageError(f"cannot make {k} folds from {n} sentences")
    order = np.random.default_rng(seed).permutation(n)
    return [part for part in np.array_split(order, k)]


def cross_validate(corpus: Corpus, opts, vocab_size: int, hidden: int, char_dim: Optional[int], folds: int):
    """Per-epoch validation F1 averaged over folds; returns (best mean, its epoch)."""
    sentences = list(corpus)
    per_fold = []
    for held in cv_folds(len(sentences), folds, opts["seed"]):
        held_set = set(held.tolist())
        train_part = corpus.subset([s for i, s in enumerate(sentences) if i not in held_set])
        val_part = [sentences[i] for i in held]
        model = make_model(train_part, opts, vocab_size, hidden, char_dim)
        report = train(
            model, [model.encode(s) for s in train_part], train_config(opts, patience=None),
            val_encs=[model.encode(s) for s in val_part],
        )
        per_fold.append([r.val_f1 for r in report.epochs])
    mean = np.mean(np.array(per_fold), axis=0)
    best = int(np.argmax(mean))
    return float(mean[best]), best + 1


def cmd_grid(args) -> int:
    keys = {**MODEL_KEYS, **TRAIN_KEYS, **GRID_KEYS, "output": (str, None)}
    opts = resolve(args, keys)
    if opts["variant"] not in VARIANTS:
        raise UsageError(f"--variant must be one of {', '.join(VARIANTS)}")
    combos = grid_configs(opts["variant"], opts["vocab_sizes"], opts["hidden_sizes"], opts["char_dims"])
    if args.dry_run:
        for v, r, d in combos:
            print(f"{v}\t{r}\t{'-' if d is None else d}")
        print(f"{len(combos)} {opts['variant']} configurations")
        return 0
    corpus = read_corpus(_existing(opts["train"], "training data"), opts["format"], "train")
    rows = []
    for v, r, d in combos:
        score, epoch = cross_validate(corpus, opts, v, r, d, opts["folds"])
        rows.append((score, v, r, d, epoch))
        print(f"|V|={v} r={r} d_chr={'-' if d is None else d}: mean F1 {score:.4f} (epoch {epoch})")
    rows.sort(key=lambda row: (-row[0], row[1], row[2], row[3] or 0))
    lines = ["|V|\tr\td_chr\tmean_f1"]
    lines += [f"{v}\t{r}\t{'-' if d is None else d}\t{s:.4f}" for s, v, r, d, _ in rows]
    text = "\n".join(lines) + "\n"
    out = Path(opts["output"] or _out_dir(opts) / f"grid_{opts['variant']}.tsv")
    out.write_text(text, encoding="utf-8")
    print(f"table written to {out}")
    return 0


def _check_variant(model: Model, requested: Optional[str]):
    if requested and requested != model.variant:
        raise CapabilityError(f"model file holds a {model.variant} model, {requested} requested")


def cmd_tag(args) -> int:
    model = checkpoint.load_model(_existing(args.model, "model file"))
    _check_variant(model, args.variant)
    corpus = read_corpus(_existing(args.input, "input"), args.format, "test")
    sentences = list(corpus)
    pred = predict_spans(model, sentences) if sentences else {}
    lines = []
    conll = []
    for s in sentences:
        for sp in pred[s.id]:
            lines.append(f"{s.id}\t{sp.start}\t{sp.end}\t{s.surface(sp)}")
        if args.conll_output:
            tags = iob.tag_names(iob.encode(len(s.tokens), pred[s.id]))
            conll.extend(f"{tok.text}\t{t}" for tok, t in zip(s.tokens, tags))
            conll.append("")
    text = "".join(line + "\n" for line in lines)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"{len(lines)} spans in {len(sentences)} sentences written to {args.output}")
    else:
        sys.stdout.write(text)
    if args.conll_output:
        Path(args.conll_output).write_text("\n".join(conll) + ("\n" if conll else ""), encoding="utf-8")
    return 0


def cmd_eval(args) -> int:
    model = checkpoint.load_model(_existing(args.model, "model file"))
    _check_variant(model, args.variant)
    gold = read_corpus(_existing(args.gold, "gold corpus"), args.format, "test")
    specs = [SubsetSpec.parse(name) for name in args.subsets.split(",")]
    header = f"corpus={args.gold} model={args.model}"
    table = evaluate(model, gold, specs)
    if args.compare:
        other = checkpoint.load_model(_existing(args.compare, "comparison model"))
        text = format_comparison(table, evaluate(other, gold, specs), header + f" compare={args.compare}")
    else:
        text = format_metrics(table, header)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _embedding_space(args) -> Dict[str, np.ndarray]:
    if args.embeddings:
        return read_embedding_file(_existing(args.embeddings, "embedding file"))
    return checkpoint.load_model(_existing(args.model, "model file")).word_vectors()


def cmd_analyze(args) -> int:
    if args.mode == "neighbors":
        space = _embedding_space(args)
        if args.word not in space:
            hint = closest_token(args.word, space)
            raise UsageError(f"unknown word {args.word!r}; closest known word: {hint!r}")
        for tok, cos in nearest_neighbors(space, args.word, args.k):
            print(f"{tok}\t{cos:.4f}")
        return 0
    if args.mode == "suffix-export":
        model = checkpoint.load_model(_existing(args.model, "model file"))
        groups = suffix_groups(model.word_vocab.words(), args.suffixes.split(","), args.top)
        tokens = list(groups)
        text = export_embeddings(model, tokens, args.source, groups)
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"{len(tokens)} suffix-labelled {args.source} vectors written to {args.output}")
        return 0
    if args.mode == "pca":
        tokens, labels, matrix = read_export(_existing(args.input, "export file").read_text(encoding="utf-8"))
        coords = pca_project(matrix)
        head = "token\t" + ("label\t" if labels is not None else "") + "x\ty"
        rows = [head]
        for k, tok in enumerate(tokens):
            lab = f"{labels[k]}\t" if labels is not None else ""
            rows.append(f"{tok}\t{lab}{coords[k, 0]:.6f}\t{coords[k, 1]:.6f}")
        Path(args.output).write_text("\n".join(rows) + "\n", encoding="utf-8")
        print(f"{len(tokens)} points projected to {args.output}")
        return 0
    raise UsageError(f"unknown analyze mode {args.mode!r}")


def gradcheck_models(seed: int = 3):
    """Tiny float64-checkable instances of both variants on the fixed micro-batch."""
    corpus = micro_batch()
    wv = build_vocab(corpus, "word", 8)
    cv = build_vocab(corpus, "char", 100)
    out = {}
    for variant in (WORD_ONLY, CHAR_WORD):
        model = Model.create(variant, wv, cv, hidden=4, char_dim=3, word_dim=4, dropout=0.0, seed=seed)
        # non-zero biases so their gradient paths are exercised
        rng = np.random.default_rng(seed + 1)
        for name, value in model.params.items():
            if name.rsplit(".", 1)[1].startswith("b"):
                model.params[name] = rng.uniform(-0.1, 0.1, value.shape).astype(np.float32)
        out[variant] = (model, [model.encode(s) for s in corpus])
    return out


def run_gradcheck(eps: float = 1e-5, max_entries: Optional[int] = None) -> Dict[str, Dict[str, float]]:
    cfg = TrainConfig(dropout_rate=0.0, l2_coeff=1e-2)
    results = {}
    for variant, (model, encs) in gradcheck_models().items():
        def f(tensors, model=model, encs=encs):
            return loss_from_tensors(tensors, model.config, encs, cfg)

        results[variant] = grad_check_detail(f, model.params, eps=eps, max_entries=max_entries)
    return results


def cmd_gradcheck(args) -> int:
    started = time.time()
    results = run_gradcheck(args.eps, args.max_entries)
    failed = []
    for variant, detail in results.items():
        for name, err in detail.items():
            print(f"{variant}\t{name}\t{err:.3e}")
            if not err < args.threshold:
                failed.append((variant, name, err))
        print(f"{variant}\tmax\t{max(detail.values()):.3e}")
    print(f"elapsed\t{time.time() - started:.1f}s")
    if failed:
        for variant, name, err in failed:
            print(f"FAIL {variant} parameter {name}: relative error {err:.3e} >= {args.threshold:g}", file=sys.stderr)
        return 1
    print(f"gradient check passed (threshold {args.threshold:g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otex", description="Opinion target extraction with word and character BiGRU taggers")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model with early stopping")
    p.add_argument("--config")
    _add_keys(p, {**MODEL_KEYS, **TRAIN_KEYS})
    p.add_argument("--model", help="output model file")
    p.add_argument("--report", help="output training report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="cross-validated hyperparameter grid")
    p.add_argument("--config")
    _add_keys(p, {**MODEL_KEYS, **TRAIN_KEYS, **GRID_KEYS})
    p.add_argument("--output")
    p.add_argument("--dry-run", action="store_true", help="only list the configurations")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("tag", help="extract opinion targets")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="auto", choices=("auto", "xml", "conll", "text"))
    p.add_argument("--output")
    p.add_argument("--conll-output")
    p.add_argument("--variant", choices=VARIANTS)
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("eval", help="exact-match scores on subsets")
    p.add_argument("--model", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--format", default="auto", choices=("auto", "xml", "conll", "text"))
    p.add_argument("--compare", help="second model file; adds a delta column")
    p.add_argument("--subsets", default=",".join(STANDARD_SUBSETS))
    p.add_argument("--output")
    p.add_argument("--variant", choices=VARIANTS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="embedding analyses")
    modes = p.add_subparsers(dest="mode", required=True)
    q = modes.add_parser("neighbors")
    src = q.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--embeddings")
    q.add_argument("--word", required=True)
    q.add_argument("--k", type=int, default=3)
    q = modes.add_parser("suffix-export")
    q.add_argument("--model", required=True)
    q.add_argument("--source", choices=("word", "charword"), default="charword")
    q.add_argument("--suffixes", default=",".join(DEFAULT_SUFFIXES))
    q.add_argument("--top", type=int, default=2000)
    q.add_argument("--output", required=True)
    q = modes.add_parser("pca")
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--output", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference check of both models")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=GRADCHECK_THRESHOLD)
    p.add_argument("--max-entries", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, OtexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
