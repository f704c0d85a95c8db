"""Prediction against a stored knowledge graph, and evaluation metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .encoder import encode
from .errors import DimensionError
from .gcn import GcnParams, gcn_forward
from .graph import KnowledgeGraph, isolated_extensions
from .synth import LabeledSet

CHUNK = 512


def aggregate_predict(gcn: GcnParams, graph: KnowledgeGraph, features) -> np.ndarray:
    """Class probabilities for query features via knowledge aggregation.

    Each query is attached to its own copy of the stored graph, so a
    prediction never depends on which other queries share the call.
    """
    features = np.asarray(features, dtype=np.float64)
    out = np.empty((features.shape[0], gcn.num_classes))
    for start in range(0, features.shape[0], CHUNK):
        chunk = features[start:start + CHUNK]
        F_bar, A_bar = isolated_extensions(graph, chunk)
        pred, _ = gcn_forward(gcn, F_bar, A_bar)
        out[start:start + CHUNK] = pred.P[:, -1, :]
    return out


def predict(checkpoint: Checkpoint, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != checkpoint.encoder.input_dim:
        raise DimensionError(f"inputs {x.shape} vs checkpoint input_dim {checkpoint.encoder.input_dim}")
    features, _ = encode(checkpoint.encoder, x)
    return aggregate_predict(checkpoint.gcn, checkpoint.graph, features)


@dataclass
class Metrics:
    per_class_accuracy: np.ndarray
    accuracy: float
    confusion: np.ndarray
    mean_entropy: float

    def csv_rows(self) -> list[list]:
        rows = [["metric", "value"], ["accuracy", f"{self.accuracy:.9g}"], ["mean_entropy", f"{self.mean_entropy:.9g}"]]
        rows += [[f"class_{k}_accuracy", f"{a:.9g}"] for k, a in enumerate(self.per_class_accuracy)]
        return rows


def metrics_from_predictions(labels, probabilities, num_classes: int) -> Metrics:
    y = np.asarray(labels, dtype=np.int64)
    p = np.asarray(probabilities, dtype=np.float64)
    pred = p.argmax(axis=1)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
    entropy = -(p * np.log(np.maximum(p, 1e-12))).sum(axis=1)
    return Metrics(per_class, float(np.trace(confusion) / y.size), confusion, float(entropy.mean()))


def evaluate(checkpoint: Checkpoint, testset: LabeledSet) -> Metrics:
    if len(testset) == 0:
        raise DimensionError("cannot evaluate on an empty test set")
    probs = predict(checkpoint, testset.inputs)
    return metrics_from_predictions(testset.labels, probs, checkpoint.K)


def write_metrics_csv(metrics: Metrics, path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(metrics.csv_rows())


def write_per_sample_csv(labels, probabilities, path) -> None:
    pred = probabilities.argmax(axis=1)
    conf = probabilities.max(axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "true", "pred", "confidence"])
        for i, (t, q, c) in enumerate(zip(labels, pred, conf)):
            w.writerow([i, int(t), int(q), f"{c:.9g}"])


def write_embeddings_csv(checkpoint: Checkpoint, testset: LabeledSet, path) -> None:
    features, _ = encode(checkpoint.encoder, testset.inputs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"e{j}" for j in range(features.shape[1])] + ["label"])
        for row, label in zip(features, testset.labels):
            w.writerow([f"{v:.9g}" for v in row] + [int(label)])
