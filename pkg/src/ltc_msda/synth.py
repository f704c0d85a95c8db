"""Synthetic multi-domain classification problems.

Every class is anchored on a circle of radius 3 in the first two input
dimensions. A domain is the anchor set pushed through an affine map
(per-axis scale, then a rotation of the (x0, x1) plane, then a translation)
plus isotropic Gaussian noise.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SizeError

ANCHOR_RADIUS = 3.0


@dataclass(frozen=True)
class DomainSpec:
    class_count: int
    input_dim: int = 2
    samples_per_class: int = 200
    rotation: float = 0.0
    translation: tuple[float, ...] | None = None
    scale: tuple[float, ...] | None = None
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.class_count) < 2:
            raise ConfigError("class_count", f"must be >= 2, got {self.class_count}")
        if int(self.input_dim) < 2:
            raise ConfigError("input_dim", f"must be >= 2, got {self.input_dim}")
        if int(self.samples_per_class) < 1:
            raise ConfigError("samples_per_class", f"must be >= 1, got {self.samples_per_class}")
        if not np.isfinite(self.noise_std) or self.noise_std < 0:
            raise ConfigError("noise_std", f"must be finite and >= 0, got {self.noise_std}")
        if not np.isfinite(self.rotation):
            raise ConfigError("rotation", "must be finite")
        for name in ("translation", "scale"):
            value = getattr(self, name)
            if value is None:
                continue
            value = tuple(float(v) for v in value)
            if len(value) != self.input_dim:
                raise ConfigError(name, f"expected {self.input_dim} entries, got {len(value)}")
            if not all(np.isfinite(value)):
                raise ConfigError(name, "entries must be finite")
            object.__setattr__(self, name, value)
        if self.scale is not None and min(self.scale) <= 0:
            raise ConfigError("scale", "entries must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "must fit in an unsigned 64-bit integer")

    @property
    def translation_vector(self) -> np.ndarray:
        if self.translation is None:
            return np.zeros(self.input_dim)
        return np.asarray(self.translation, dtype=np.float64)

    @property
    def scale_vector(self) -> np.ndarray:
        if self.scale is None:
            return np.ones(self.input_dim)
        return np.asarray(self.scale, dtype=np.float64)


@dataclass
class LabeledSet:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise SizeError("inputs must be 2-D and labels 1-D")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise SizeError(
                f"{self.inputs.shape[0]} input rows but {self.labels.shape[0]} labels"
            )

    def __len__(self):
        return self.labels.shape[0]

    def to_csv(self, path) -> None:
        dim = self.inputs.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"x{j}" for j in range(dim)] + ["label"])
            for row, label in zip(self.inputs, self.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])

    @classmethod
    def from_csv(cls, path) -> "LabeledSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "label":
            raise SizeError(f"{path}: last column must be 'label'")
        inputs = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), len(header) - 1)
        labels = np.array([int(r[-1]) for r in body], dtype=np.int64)
        return cls(inputs, labels)


@dataclass
class DomainBatch:
    source_batches: list[tuple[np.ndarray, np.ndarray]]
    target_inputs: np.ndarray
    per_domain_size: int

    @property
    def num_sources(self) -> int:
        return len(self.source_batches)


def class_anchors(class_count: int, input_dim: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(class_count) / class_count
    anchors = np.zeros((class_count, input_dim))
    anchors[:, 0] = ANCHOR_RADIUS * np.cos(angles)
    anchors[:, 1] = ANCHOR_RADIUS * np.sin(angles)
    return anchors


def _rotation(angle: float, input_dim: int) -> np.ndarray:
    rot = np.eye(input_dim)
    c, s = np.cos(angle), np.sin(angle)
    rot[:2, :2] = [[c, -s], [s, c]]
    return rot


def apply_transform(spec: DomainSpec, points: np.ndarray) -> np.ndarray:
    """Scale, rotate, then translate row vectors."""
    rot = _rotation(spec.rotation, spec.input_dim)
    return (points * spec.scale_vector) @ rot.T + spec.translation_vector


def invert_transform(spec: DomainSpec, points: np.ndarray) -> np.ndarray:
    rot = _rotation(spec.rotation, spec.input_dim)
    return ((points - spec.translation_vector) @ rot) / spec.scale_vector


def generate_domain(spec: DomainSpec) -> LabeledSet:
    k, n_per = spec.class_count, spec.samples_per_class
    labels = np.repeat(np.arange(k, dtype=np.int64), n_per)
    base = class_anchors(k, spec.input_dim)[labels]
    inputs = apply_transform(spec, base)
    if spec.noise_std > 0:
        rng = np.random.default_rng(spec.seed)
        inputs = inputs + spec.noise_std * rng.standard_normal(inputs.shape)
    return LabeledSet(inputs, labels)


def sample_batch(sets: list[LabeledSet], per_domain_size: int, rng: np.random.Generator) -> DomainBatch:
    """Draw ``per_domain_size`` rows without replacement from every domain.

    The last set is the target; its labels are dropped.
    """
    if len(sets) < 2:
        raise SizeError("need at least one source and one target set")
    if per_domain_size < 1:
        raise SizeError(f"per_domain_size must be >= 1, got {per_domain_size}")
    smallest = min(len(s) for s in sets)
    if per_domain_size > smallest:
        raise SizeError(f"per_domain_size {per_domain_size} exceeds smallest set size {smallest}")
    picks = []
    for s in sets:
        idx = rng.permutation(len(s))[:per_domain_size]
        picks.append((s.inputs[idx], s.labels[idx]))
    *sources, (target_inputs, _) = picks
    return DomainBatch(sources, target_inputs, per_domain_size)
