"""Experiment configuration files and resolved manifests.

A config file is INI-style: ``key = value`` lines grouped in sections.

``[experiment]``  name
``[train]``       TrainConfig fields (K is required; M defaults to the number
                  of source sections)
``[source.N]``    one section per source domain
``[target]``      the target domain, plus ``test_seed`` and optionally
                  ``test_samples_per_class`` for the held-out target test set

Domain keys: samples_per_class, rotation, translation, scale, noise_std,
seed. Vector values are comma separated. The data seed of every domain is
mixed with the experiment seed, so ``--seed`` changes data and weights alike.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .state import TrainConfig
from .synth import DomainSpec, generate_domain
from .trainer import Benchmark

_INT_FIELDS = {"M", "K", "d", "input_dim", "hidden_dim", "per_domain_size", "epochs", "iterations_per_epoch", "seed"}
_BOOL_FIELDS = {"use_cls_proto", "use_cls_tgt"}
_STR_FIELDS = {"output_dir", "proto_grad"}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_DOMAIN_KEYS = {"samples_per_class", "rotation", "translation", "scale", "noise_std", "seed"}
_TARGET_EXTRA = {"test_seed", "test_samples_per_class"}


@dataclass
class DomainEntry:
    """A domain section before mixing in the experiment seed."""

    name: str
    samples_per_class: int = 200
    rotation: float = 0.0
    translation: tuple[float, ...] | None = None
    scale: tuple[float, ...] | None = None
    noise_std: float = 0.0
    seed: int = 0


@dataclass
class ExperimentManifest:
    name: str
    train: TrainConfig
    sources: list[DomainEntry]
    target: DomainEntry
    test_seed: int
    test_samples_per_class: int
    extras: dict = field(default_factory=dict)

    def with_train(self, **changes) -> "ExperimentManifest":
        return dataclasses.replace(self, train=self.train.replace(**changes))

    def domain_spec(self, entry: DomainEntry, seed: int | None = None, samples: int | None = None) -> DomainSpec:
        mixed = np.random.SeedSequence([self.train.seed, entry.seed if seed is None else seed])
        return DomainSpec(
            class_count=self.train.K,
            input_dim=self.train.input_dim,
            samples_per_class=entry.samples_per_class if samples is None else samples,
            rotation=entry.rotation,
            translation=entry.translation,
            scale=entry.scale,
            noise_std=entry.noise_std,
            seed=int(mixed.generate_state(1, np.uint64)[0]),
        )

    def benchmark(self) -> Benchmark:
        sources = [generate_domain(self.domain_spec(e)) for e in self.sources]
        target = generate_domain(self.domain_spec(self.target))
        test = generate_domain(self.domain_spec(self.target, self.test_seed, self.test_samples_per_class))
        return Benchmark(sources, target, test)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "train": self.train.to_dict(),
            "sources": [dataclasses.asdict(e) for e in self.sources],
            "target": dataclasses.asdict(self.target),
            "test_seed": self.test_seed,
            "test_samples_per_class": self.test_samples_per_class,
            "resolved_domains": [dataclasses.asdict(self.domain_spec(e)) for e in self.sources]
            + [dataclasses.asdict(self.domain_spec(self.target))],
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentManifest":
        def entry(d):
            d = dict(d)
            for key in ("translation", "scale"):
                if d.get(key) is not None:
                    d[key] = tuple(d[key])
            return DomainEntry(**d)

        return cls(
            name=data["name"],
            train=TrainConfig(**data["train"]),
            sources=[entry(d) for d in data["sources"]],
            target=entry(data["target"]),
            test_seed=int(data["test_seed"]),
            test_samples_per_class=int(data["test_samples_per_class"]),
            extras=dict(data.get("extras", {})),
        )

    def write(self, path, created_at: str | None = None) -> None:
        data = self.to_dict()
        if created_at is not None:
            data["created_at"] = created_at
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return lineno
    return None


class _Parser:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def fail(self, section: str, key: str, message: str):
        line = _line_of(self.text, section, key)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(key, f"{message} ([{section}] at {where})")

    def convert(self, section: str, key: str, raw: str, kind):
        try:
            if kind is bool:
                low = raw.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                    raise ValueError(raw)
                return low in ("true", "1", "yes", "on")
            if kind is tuple:
                return tuple(float(v) for v in raw.split(","))
            if kind is int:
                return int(raw.strip())
            if kind is float:
                return float(raw.strip())
            return raw.strip()
        except ValueError:
            self.fail(section, key, f"cannot parse {raw!r} as {kind.__name__}")

    def domain(self, cp, section: str, extra=frozenset()) -> tuple[DomainEntry, dict]:
        kinds = {"samples_per_class": int, "rotation": float, "translation": tuple, "scale": tuple, "noise_std": float, "seed": int}
        values, other = {}, {}
        for key, raw in cp.items(section):
            if key in kinds:
                values[key] = self.convert(section, key, raw, kinds[key])
            elif key in extra:
                other[key] = self.convert(section, key, raw, int)
            else:
                self.fail(section, key, "unknown domain key")
        return DomainEntry(name=section, **values), other


def parse_config(text: str, source: str = "<config>", seed: int | None = None) -> ExperimentManifest:
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError("syntax", str(exc).replace("\n", " ")) from exc
    p = _Parser(text, source)
    if not cp.has_section("train"):
        raise ConfigError("train", f"{source}: missing [train] section")
    train = {}
    for key, raw in cp.items("train"):
        if key not in _TRAIN_FIELDS:
            p.fail("train", key, "unknown training field")
        kind = int if key in _INT_FIELDS else bool if key in _BOOL_FIELDS else str if key in _STR_FIELDS else float
        train[key] = p.convert("train", key, raw, kind)
    if "K" not in train:
        raise ConfigError("K", f"{source}: required field 'K' missing from [train]")
    source_sections = sorted(
        (s for s in cp.sections() if s.startswith("source")),
        key=lambda s: [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)],
    )
    if not source_sections:
        raise ConfigError("source", f"{source}: need at least one [source.N] section")
    if not cp.has_section("target"):
        raise ConfigError("target", f"{source}: missing [target] section")
    for s in cp.sections():
        if s not in ("experiment", "train", "target") and not s.startswith("source"):
            raise ConfigError(s, f"{source}: unknown section [{s}]")
    if "M" in train and train["M"] != len(source_sections):
        p.fail("train", "M", f"M={train['M']} but {len(source_sections)} source sections are defined")
    train["M"] = len(source_sections)
    if seed is not None:
        train["seed"] = seed
    sources = [p.domain(cp, s)[0] for s in source_sections]
    target, extra = p.domain(cp, "target", _TARGET_EXTRA)
    name = cp.get("experiment", "name", fallback=Path(source).stem) if cp.has_section("experiment") else Path(source).stem
    return ExperimentManifest(
        name=name,
        train=TrainConfig(**train),
        sources=sources,
        target=target,
        test_seed=extra.get("test_seed", target.seed + 1),
        test_samples_per_class=extra.get("test_samples_per_class", target.samples_per_class),
    )


def load_experiment(path, seed: int | None = None) -> ExperimentManifest:
    """Read a config file, or a manifest.json written by a previous run."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        manifest = ExperimentManifest.from_dict(json.loads(text))
        return manifest.with_train(seed=seed) if seed is not None else manifest
    return parse_config(text, str(path), seed)
