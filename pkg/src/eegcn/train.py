"""Loss, metrics, the training loop, GCN-depth sweeps and ablation runs."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .corpus import LABELS, EmbeddingTable, Example
from .model import (N_CLASSES, EncodedExample, ModelConfig, ModelParams, encode_examples,
                    forward_logits, init_params, predict)
from .syntax import SdiTable, compute_sdi_table

log = logging.getLogger(__name__)

EPOCH_LOG_HEADER = ("epoch", "train_loss", "test_acc", "test_macro_f1")
SWEEP_HEADER = ("layers", "acc", "macro_f1")

VARIANTS = {
    "full": {},
    "no-dependency": {"no_dependency": True},
    "no-edge-weight": {"no_edge_weight": True},
    "no-bidirectional": {"no_bidirectional": True},
}


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    l2: float = 1e-5
    seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.l2 < 0:
            raise ValueError("lr and batch_size must be positive; epochs and l2 nonnegative")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 when set")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


# --------------------------------------------------------------------------
# loss


def compute_loss(logits: ad.DiffTensor, labels: Sequence[int],
                 weights: Sequence[ad.DiffTensor] = (), l2: float = 0.0) -> ad.DiffTensor:
    """Mean negative log-likelihood over the batch plus ``l2 * ||weights||_2``.

    ``logits`` is ``(batch, 3)``; probabilities are never formed, the
    likelihood comes from a max-shifted log-softmax.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim == 1:
        logits = ad.stack([logits])
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"{labels.shape[0] if labels.ndim else 0} labels for "
                         f"{logits.shape[0]} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"label out of range 0..{logits.shape[1] - 1}: {labels.tolist()}")
    logp = ad.log_softmax(logits)
    picked = ad.pick(logp, (np.arange(labels.size), labels))
    loss = ad.scale(ad.sum_(picked), -1.0 / labels.size)
    if l2 and weights:
        loss = ad.add(loss, ad.scale(ad.l2norm(weights), l2))
    return loss


# --------------------------------------------------------------------------
# metrics


def _check_pairs(preds, golds):
    preds = np.asarray(preds, dtype=np.int64)
    golds = np.asarray(golds, dtype=np.int64)
    if preds.shape != golds.shape or preds.ndim != 1:
        raise ValueError("preds and golds must be 1-D sequences of equal length")
    if preds.size == 0:
        raise ValueError("cannot score an empty prediction set")
    for arr in (preds, golds):
        if arr.min() < 0 or arr.max() >= N_CLASSES:
            raise ValueError(f"class ids must lie in 0..{N_CLASSES - 1}")
    return preds, golds


def confusion_matrix(preds, golds) -> np.ndarray:
    """Rows are gold classes, columns predicted classes."""
    preds, golds = _check_pairs(preds, golds)
    return kernels.confusion_counts(preds, golds, N_CLASSES)


def accuracy(preds, golds) -> float:
    C = confusion_matrix(preds, golds)
    return float(np.trace(C) / C.sum())


def per_class_scores(C: np.ndarray):
    tp = np.diag(C).astype(np.float64)
    predicted = C.sum(axis=0)
    actual = C.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    absent = (predicted == 0) & (actual == 0)
    return precision, recall, f1, absent


def macro_f1(preds, golds) -> float:
    """Unweighted mean F1 over all three classes; a class never seen scores 0."""
    _, _, f1, _ = per_class_scores(confusion_matrix(preds, golds))
    return float(f1.mean())


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    precision: list
    recall: list
    f1: list
    confusion: list
    count: int
    absent_classes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, preds, golds, **extra) -> "MetricsReport":
        C = confusion_matrix(preds, golds)
        precision, recall, f1, absent = per_class_scores(C)
        return cls(
            accuracy=float(np.trace(C) / C.sum()),
            macro_f1=float(f1.mean()),
            precision=precision.tolist(),
            recall=recall.tolist(),
            f1=f1.tolist(),
            confusion=C.tolist(),
            count=int(C.sum()),
            absent_classes=[LABELS[k] for k in np.flatnonzero(absent)],
            extra=dict(extra),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["classes"] = list(LABELS)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def evaluate(encoded: Sequence[EncodedExample], params: ModelParams,
             config: ModelConfig, **extra) -> MetricsReport:
    preds, _ = predict(encoded, params, config)
    return MetricsReport.from_predictions(preds, [e.label for e in encoded], **extra)


# --------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_acc: float
    test_macro_f1: float


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_report: MetricsReport | None
    log: list
    final_state: dict


def _norm_summary(params: ModelParams) -> str:
    return ", ".join(f"{name}={np.linalg.norm(t.data):.4g}"
                     for name, t in params.tensors.items())


def train_epochs(params: ModelParams, config: ModelConfig,
                 train_set: Sequence[EncodedExample], test_set: Sequence[EncodedExample],
                 train_config: TrainConfig,
                 on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Mini-batch Adam over shuffled epochs; keeps the best-test-accuracy state.

    With ``epochs=0`` nothing is updated and the initial state is returned.
    """
    streams = np.random.SeedSequence(train_config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(streams[0])
    dropout_rng = np.random.default_rng(streams[1])
    plist = params.list()
    weights = params.weight_matrices()
    adam = ad.AdamState.for_params(plist, lr=train_config.lr)

    best_state = params.state_dict()
    best_epoch, best_acc, best_report = 0, -1.0, None
    records = []
    stale = 0
    n = len(train_set)
    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, train_config.batch_size), 1):
            batch = [train_set[k] for k in order[lo:lo + train_config.batch_size]]
            with ad.GradientTape() as tape:
                logits = ad.stack([forward_logits(enc, params, config, training=True,
                                                  rng=dropout_rng) for enc in batch])
                loss = compute_loss(logits, [enc.label for enc in batch], weights,
                                    train_config.l2)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLossError(f"non-finite loss {value} at epoch {epoch}, "
                                         f"batch {b}; parameter norms: {_norm_summary(params)}")
            ad.backward(tape, loss, plist)
            ad.adam_step(plist, adam)
            total += value * len(batch)
        report = evaluate(test_set, params, config, epoch=epoch) if test_set else None
        record = EpochRecord(epoch, total / max(n, 1),
                             report.accuracy if report else float("nan"),
                             report.macro_f1 if report else float("nan"))
        records.append(record)
        log.info("epoch %d loss %.6f test acc %.4f f1 %.4f", epoch, record.train_loss,
                 record.test_acc, record.test_macro_f1)
        if on_epoch is not None:
            on_epoch(record)
        if report is not None and report.accuracy > best_acc:
            best_acc, best_epoch, best_report = report.accuracy, epoch, report
            best_state = params.state_dict()
            stale = 0
        else:
            stale += 1
            if report is None:
                best_state, best_epoch = params.state_dict(), epoch
        if train_config.patience is not None and stale >= train_config.patience:
            log.info("no test improvement for %d epochs, stopping", stale)
            break
    return TrainResult(best_state, best_epoch, best_report, records, params.state_dict())


# --------------------------------------------------------------------------
# experiments


@dataclass
class Experiment:
    """Everything a run needs besides the configs."""

    train: list
    test: list
    embeddings: EmbeddingTable
    sdi: SdiTable

    @classmethod
    def build(cls, train: Sequence[Example], test: Sequence[Example],
              embeddings: EmbeddingTable) -> "Experiment":
        # relation statistics come from the training parses only
        return cls(list(train), list(test), embeddings,
                   compute_sdi_table(ex.parse for ex in train))


@dataclass
class RunResult:
    params: ModelParams
    config: ModelConfig
    train: TrainResult
    report: MetricsReport
    unseen_relations: dict


def run_experiment(exp: Experiment, config: ModelConfig, train_config: TrainConfig,
                   on_epoch=None) -> RunResult:
    if exp.embeddings.dim != config.d_w:
        raise ValueError(f"embedding file width {exp.embeddings.dim} != d_w {config.d_w}")
    vocab = exp.embeddings.vocab
    train_enc = encode_examples(exp.train, vocab, exp.sdi, config)
    unseen = Counter()
    test_enc = encode_examples(exp.test, vocab, exp.sdi, config, unseen)
    params = init_params(config, exp.embeddings.matrix, np.random.default_rng(config.seed))
    result = train_epochs(params, config, train_enc, test_enc, train_config, on_epoch)
    params.load_state(result.best_state)
    report = evaluate(test_enc, params, config, epoch=result.best_epoch,
                      unseen_relations=dict(sorted(unseen.items())))
    return RunResult(params, config, result, report, dict(unseen))


def layer_sweep(layer_values: Sequence[int], exp: Experiment, config: ModelConfig,
                train_config: TrainConfig) -> list[tuple]:
    """One run per GCN depth, same seed; rows are ``(layers, acc, macro_f1)``."""
    if not layer_values:
        raise ValueError("layer sweep needs at least one depth")
    rows = []
    for layers in layer_values:
        run = run_experiment(exp, replace(config, gcn_layers=int(layers)), train_config)
        rows.append((int(layers), run.report.accuracy, run.report.macro_f1))
    return rows


def variant_config(variant: str, config: ModelConfig) -> ModelConfig:
    try:
        flags = VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}") from None
    base = replace(config, no_dependency=False, no_edge_weight=False, no_bidirectional=False)
    return replace(base, **flags)


def run_ablation(variant: str, exp: Experiment, config: ModelConfig,
                 train_config: TrainConfig) -> RunResult:
    run = run_experiment(exp, variant_config(variant, config), train_config)
    run.report.extra["variant"] = variant
    return run


# --------------------------------------------------------------------------
# artifacts


def _fmt(x: float) -> str:
    return repr(float(x))


def write_epoch_log(path, records: Sequence[EpochRecord]):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_LOG_HEADER)
        for r in records:
            w.writerow([r.epoch, _fmt(r.train_loss), _fmt(r.test_acc), _fmt(r.test_macro_f1)])


def write_sweep(path, rows: Sequence[tuple]):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for layers, acc, f1 in rows:
            w.writerow([layers, _fmt(acc), _fmt(f1)])
