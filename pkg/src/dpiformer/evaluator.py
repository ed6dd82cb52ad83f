"""Accuracy, precision, recall and F1 from confusion matrices, and model evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import model as M
from .errors import ClassCountMismatch, EmptyMatrix, EmptyPayload, LabelOutOfRange, LengthMismatch
from .tokenizer import TokenizedDataset, encode
from .trainer import predict_logits

AVERAGING_MODES = ("binary_positive_class", "weighted", "macro")


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # counts[true, predicted]

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    averaging: str
    per_class: List[dict] = field(default_factory=list)


def confusion(preds, truth, n_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise LengthMismatch(f"preds {preds.shape} and truth {truth.shape} differ")
    for name, arr in (("preds", preds), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"{name} contains labels outside [0, {n_classes})")
    flat = np.bincount(truth * n_classes + preds, minlength=n_classes * n_classes)
    return ConfusionMatrix(flat.reshape(n_classes, n_classes))


def _ratio(num, den) -> float:
    return float(num) / float(den) if den else 0.0


def _f1(p, r) -> float:
    return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0


def metrics_from_confusion(cm: ConfusionMatrix, averaging: str = "weighted") -> Metrics:
    """Metrics under ``averaging``; undefined ratios are reported as 0.

    ``binary_positive_class`` treats label 1 as the positive (malicious) class.
    """
    if averaging not in AVERAGING_MODES:
        raise ValueError(f"averaging must be one of {AVERAGING_MODES}")
    c = cm.counts
    total = cm.total
    if total <= 0:
        raise EmptyMatrix("confusion matrix has no samples")
    tp = np.diag(c)
    predicted = c.sum(axis=0)
    support = c.sum(axis=1)
    per_class = []
    for k in range(cm.n_classes):
        p = _ratio(tp[k], predicted[k])
        r = _ratio(tp[k], support[k])
        per_class.append({"precision": p, "recall": r, "f1": _f1(p, r), "support": int(support[k])})
    accuracy = _ratio(np.trace(c), total)
    if averaging == "binary_positive_class":
        if cm.n_classes != 2:
            raise ValueError("binary averaging needs exactly two classes")
        pos = per_class[1]
        precision, recall, f1 = pos["precision"], pos["recall"], pos["f1"]
    else:
        if averaging == "weighted":
            w = [pc["support"] / total for pc in per_class]
        else:
            w = [1.0 / cm.n_classes] * cm.n_classes
        precision = sum(wi * pc["precision"] for wi, pc in zip(w, per_class))
        recall = sum(wi * pc["recall"] for wi, pc in zip(w, per_class))
        f1 = sum(wi * pc["f1"] for wi, pc in zip(w, per_class))
    return Metrics(accuracy, precision, recall, f1, averaging, per_class)


def default_averaging(n_classes: int) -> str:
    return "binary_positive_class" if n_classes == 2 else "weighted"


def predict(params, config: M.ModelConfig, dataset: TokenizedDataset, batch_size: int = 64) -> np.ndarray:
    """Argmax label per sample; ties go to the smaller class index."""
    return np.argmax(predict_logits(params, config, dataset, batch_size), axis=1)


def evaluate(params, config: M.ModelConfig, dataset: TokenizedDataset, batch_size: int = 64,
             averaging: Optional[str] = None, class_names: Optional[list] = None,
             checkpoint_digest: Optional[str] = None, dataset_digest: Optional[str] = None):
    """Eval-mode predictions over ``dataset``. Returns ``(metrics, confusion, report)``."""
    if dataset.n_classes != config.num_labels:
        raise ClassCountMismatch(
            f"dataset has {dataset.n_classes} classes, checkpoint has num_labels={config.num_labels}")
    if len(dataset) == 0:
        raise EmptyMatrix("dataset is empty")
    averaging = averaging or default_averaging(config.num_labels)
    preds = predict(params, config, dataset, batch_size)
    cm = confusion(preds, dataset.labels, config.num_labels)
    metrics = metrics_from_confusion(cm, averaging)
    names = class_names or [str(i) for i in range(config.num_labels)]
    report = {
        "mode": "binary" if config.num_labels == 2 else "multiclass",
        "averaging": averaging,
        "n_samples": cm.total,
        "class_names": list(names),
        "confusion": cm.counts.tolist(),
        "accuracy": metrics.accuracy,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "per_class": [dict(name=n, **pc) for n, pc in zip(names, metrics.per_class)],
        "checkpoint_digest": checkpoint_digest,
        "dataset_digest": dataset_digest,
    }
    return metrics, cm, report


def infer(params, config: M.ModelConfig, payload: bytes):
    """``(label, probabilities)`` for one payload, truncated to the model window."""
    if not payload:
        raise EmptyPayload("cannot classify an empty payload")
    seq = encode(payload, config.max_positions)
    ids = seq.ids[None, : seq.true_len]
    mask = seq.mask[None, : seq.true_len]
    logits, _ = M.forward(params, config, ids, mask, mode="eval")
    z = logits[0].astype(np.float64)
    z -= z.max()
    probs = np.exp(z) / np.exp(z).sum()
    return int(np.argmax(logits[0])), probs


def format_table(metrics: Metrics) -> str:
    """Summary row in percent with two decimals."""
    head = f"{'Accuracy':>10} {'Precision':>10} {'Recall':>10} {'F1-Score':>10}"
    row = (f"{100 * metrics.accuracy:>10.2f} {100 * metrics.precision:>10.2f} "
           f"{100 * metrics.recall:>10.2f} {100 * metrics.f1:>10.2f}")
    return head + "\n" + row
