"""Per-domain class prototypes: batch estimates, pseudo-labels and the EMA bank."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ColdStartError, ConfigError, LabelError, NumericError, ProbabilityError, ShapeError

DEFAULT_BETA = 0.7
DEFAULT_THRESHOLD = 0.8


@dataclass
class PrototypeBank:
    """Global prototypes for M sources plus the target (last domain index)."""

    prototypes: np.ndarray
    initialized: np.ndarray
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.initialized = np.asarray(self.initialized, dtype=bool)
        if self.prototypes.ndim != 3 or self.initialized.shape != self.prototypes.shape[:2]:
            raise ShapeError(
                f"prototypes {self.prototypes.shape} and flags {self.initialized.shape} disagree"
            )
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta", f"must lie in [0, 1), got {self.beta}")

    @classmethod
    def empty(cls, num_domains: int, num_classes: int, dim: int, beta: float = DEFAULT_BETA):
        return cls(np.zeros((num_domains, num_classes, dim)), np.zeros((num_domains, num_classes), bool), beta)

    @property
    def num_domains(self) -> int:
        return self.prototypes.shape[0]

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[1]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[2]

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(self.prototypes.copy(), self.initialized.copy(), self.beta)

    def missing(self) -> list[tuple[int, int]]:
        return [(int(m), int(k)) for m, k in zip(*np.nonzero(~self.initialized))]

    def require_complete(self) -> None:
        missing = self.missing()
        if missing:
            raise ColdStartError(missing)


@dataclass
class PseudoLabelResult:
    labels: np.ndarray
    accepted: np.ndarray
    confidence: np.ndarray


def estimate_prototypes(features, labels, mask, num_classes: int):
    """Class-wise mean of the masked feature rows; empty classes give zeros."""
    z = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    keep = np.asarray(mask, dtype=bool)
    if z.ndim != 2 or y.shape != (z.shape[0],) or keep.shape != y.shape:
        raise ShapeError(f"features {z.shape}, labels {y.shape}, mask {keep.shape} disagree")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(y[keep], minlength=num_classes).astype(np.int64)
    sums = np.zeros((num_classes, z.shape[1]))
    np.add.at(sums, y[keep], z[keep])
    estimates = np.zeros_like(sums)
    present = counts > 0
    estimates[present] = sums[present] / counts[present, None]
    return estimates, counts


def assign_pseudo_labels(probabilities, threshold: float = DEFAULT_THRESHOLD) -> PseudoLabelResult:
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"probabilities must be 2-D, got {p.shape}")
    bad = np.flatnonzero((np.abs(p.sum(axis=1) - 1.0) > 1e-5) | (p < 0).any(axis=1) | ~np.isfinite(p).all(axis=1))
    if bad.size:
        raise ProbabilityError(int(bad[0]), "not on the probability simplex")
    labels = p.argmax(axis=1) if p.shape[0] else np.zeros(0, np.int64)
    confidence = p.max(axis=1) if p.shape[0] else np.zeros(0)
    return PseudoLabelResult(labels.astype(np.int64), confidence >= threshold, confidence)


def reject_all(n: int) -> PseudoLabelResult:
    return PseudoLabelResult(np.zeros(n, np.int64), np.zeros(n, bool), np.zeros(n))


def ema_update(bank: PrototypeBank, domain_index: int, estimates, counts) -> PrototypeBank:
    """Blend fresh estimates into one domain's prototypes.

    First touch copies the estimate; classes with zero count are left alone.
    Returns a new bank.
    """
    if not 0 <= domain_index < bank.num_domains:
        raise ShapeError(f"domain_index {domain_index} outside [0, {bank.num_domains})")
    est = np.asarray(estimates, dtype=np.float64)
    counts = np.asarray(counts)
    if est.shape != (bank.num_classes, bank.dim):
        raise ShapeError(f"estimates {est.shape} vs ({bank.num_classes}, {bank.dim})")
    hit = counts > 0
    if not np.isfinite(est[hit]).all():
        raise NumericError(f"non-finite prototype estimate for domain {domain_index}")
    out = bank.copy()
    row = out.prototypes[domain_index]
    fresh = hit & ~out.initialized[domain_index]
    blend = hit & out.initialized[domain_index]
    row[fresh] = est[fresh]
    row[blend] = bank.beta * row[blend] + (1.0 - bank.beta) * est[blend]
    out.initialized[domain_index] |= hit
    return out


def fill_uninitialized(bank: PrototypeBank) -> PrototypeBank:
    """Seed empty slots with the mean of the same class over initialized domains.

    Needed before the first graph can be built: the target has no accepted
    pseudo-labels on the first iteration. Filled slots count as initialized
    afterwards, so later estimates are blended into them.
    """
    if bank.initialized.all():
        return bank
    out = bank.copy()
    still_missing = []
    for m, k in bank.missing():
        donors = bank.initialized[:, k]
        if not donors.any():
            still_missing.append((m, k))
            continue
        out.prototypes[m, k] = bank.prototypes[donors, k].mean(axis=0)
        out.initialized[m, k] = True
    if still_missing:
        raise ColdStartError(still_missing)
    return out
