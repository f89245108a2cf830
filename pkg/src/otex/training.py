"""Objective, Adam, early stopping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import EncodedSentence, batches
from .errors import ValidationError
from .layers import Model, bind, forward_batch
from .numerics import (
    Graph,
    Tensor,
    add,
    backward,
    cross_entropy,
    dropout_mask,  # noqa: F401  re-exported
    global_norm_clip,
    scale,
    square_sum,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 5
    max_norm: float = 5.0
    l2_coeff: float = 1e-5
    l2_params: Tuple[str, ...] = ("tag.W", "cw.W")
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_rate: float = 0.5
    max_epochs: int = 150
    patience: Optional[int] = 25
    val_fraction: float = 0.2
    seed: int = 1
    # stop as soon as validation F1 reaches this value
    target_f1: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValidationError("val_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.patience is not None and self.patience < 1:
            raise ValidationError("patience must be at least 1 (or None to disable early stopping)")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be at least 1")
        rates = (self.max_norm, self.l2_coeff, self.learning_rate, self.adam_eps, self.dropout_rate)
        if min(rates) < 0 or self.dropout_rate >= 1:
            raise ValidationError("rates must be non-negative and dropout below 1")


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_f1: float


@dataclass
class TrainReport:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = -1.0
    stop_reason: str = ""

    def to_text(self) -> str:
        lines = [f"{r.epoch}\t{r.loss:.6f}\t{r.val_f1:.4f}" for r in self.epochs]
        lines.append(f"best_epoch\t{self.best_epoch}")
        lines.append(f"stop_reason\t{self.stop_reason}")
        return "\n".join(lines) + "\n"


def loss_from_tensors(tensors, model_cfg, batch: Sequence[EncodedSentence], cfg: TrainConfig,
                      rng: Optional[np.random.Generator] = None) -> Tensor:
    """Token-averaged cross-entropy plus L2 on ``cfg.l2_params``.

    Dropout is active only when ``rng`` is supplied.
    """
    if not batch:
        raise ValidationError("empty batch")
    qs = forward_batch(bind(tensors, model_cfg), batch, cfg.dropout_rate, rng)
    total = None
    for q, enc in zip(qs, batch):
        ce = cross_entropy(q, enc.tags)
        total = ce if total is None else add(total, ce)
    n_tokens = sum(len(e.tags) for e in batch)
    loss = scale(total, 1.0 / n_tokens)
    if cfg.l2_coeff > 0:
        for name in cfg.l2_params:
            if name in tensors:
                loss = add(loss, scale(square_sum(tensors[name]), cfg.l2_coeff))
    return loss


def batch_loss(model: Model, batch: Sequence[EncodedSentence], cfg: TrainConfig,
               graph: Optional[Graph] = None, rng: Optional[np.random.Generator] = None) -> Tensor:
    graph = graph if graph is not None else Graph()
    return loss_from_tensors(model.tensors(graph), model.config, batch, cfg, rng)


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              cfg: TrainConfig) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


def split_train_val(items: Sequence, val_fraction: float, seed: int) -> Tuple[list, list]:
    """Seeded shuffle, the first ``val_fraction`` of it becomes validation data."""
    order = np.random.default_rng(seed).permutation(len(items))
    n_val = int(round(len(items) * val_fraction))
    n_val = min(max(n_val, 1), len(items) - 1)
    val = [items[i] for i in order[:n_val]]
    train = [items[i] for i in order[n_val:]]
    return train, val


def train(model: Model, train_encs: Sequence[EncodedSentence], cfg: TrainConfig,
          val_encs: Optional[Sequence[EncodedSentence]] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainReport:
    """Optimise ``model`` in place and leave it at its best validation epoch.

    Without ``val_encs`` the training data is split by ``cfg.val_fraction``.
    """
    from .evaluation import tagging_f1

    if not train_encs:
        raise ValidationError("cannot train on an empty corpus")
    if val_encs is None:
        if len(train_encs) < 2:
            raise ValidationError("need at least two sentences to carve out a validation split")
        train_encs, val_encs = split_train_val(list(train_encs), cfg.val_fraction, cfg.seed)
    model.config.dropout = cfg.dropout_rate
    names = model.trainable_names()
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 1])
    report = TrainReport()
    best_params = None
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for batch in batches(train_encs, cfg.batch_size, cfg.seed, epoch):
            graph = Graph()
            loss = batch_loss(model, batch, cfg, graph, rng)
            grads = backward(graph, loss)
            grads = {k: grads[k] for k in names}
            if cfg.max_norm > 0:
                grads = global_norm_clip(grads, cfg.max_norm)
            adam_step(state, model.params, grads, cfg)
            losses.append(float(loss.data))
        val_f1 = tagging_f1(model, val_encs)
        record = EpochRecord(epoch, float(np.mean(losses)), val_f1)
        report.epochs.append(record)
        logger.info("epoch %d loss %.4f val_f1 %.4f", epoch, record.loss, val_f1)
        if on_epoch is not None:
            on_epoch(record)
        if val_f1 > report.best_f1:
            report.best_f1 = val_f1
            report.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            stale = 0
        else:
            stale += 1
        if cfg.target_f1 is not None and val_f1 >= cfg.target_f1:
            report.stop_reason = "target_reached"
            break
        if cfg.patience is not None and stale >= cfg.patience:
            report.stop_reason = "patience"
            break
    else:
        report.stop_reason = "max_epochs"
    model.params = best_params
    return report

