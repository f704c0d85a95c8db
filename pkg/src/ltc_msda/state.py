"""Training configuration and mutable-by-replacement training state."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams
from .errors import ConfigError
from .gcn import GcnParams
from .graph import KnowledgeGraph
from .optim import Moments
from .prototypes import PrototypeBank

PROTO_GRAD_MODES = ("none", "through-batch")


@dataclass(frozen=True)
class TrainConfig:
    M: int
    K: int
    d: int = 32
    input_dim: int = 2
    hidden_dim: int = 64
    per_domain_size: int = 32
    epochs: int = 30
    iterations_per_epoch: int = 30
    learning_rate: float = 2e-4
    beta: float = 0.7
    sigma: float = 0.5
    lambda1: float = 20.0
    lambda2: float = 0.001
    pseudo_threshold: float = 0.8
    seed: int = 0
    output_dir: str = "out"
    proto_grad: str = "none"
    use_cls_proto: bool = True
    use_cls_tgt: bool = True

    def __post_init__(self):
        positive_ints = ("M", "K", "d", "input_dim", "hidden_dim", "per_domain_size")
        for name in positive_ints:
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, f"must be a positive integer, got {getattr(self, name)}")
        if self.K < 2:
            raise ConfigError("K", "need at least two classes")
        for name in ("epochs", "iterations_per_epoch", "seed"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta", f"must lie in [0, 1), got {self.beta}")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ConfigError("sigma", f"must be > 0, got {self.sigma}")
        for name in ("lambda1", "lambda2"):
            if not getattr(self, name) >= 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        # learning_rate = 0 is allowed as an explicit null-update probe
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate", f"must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.pseudo_threshold <= 1.0:
            raise ConfigError("pseudo_threshold", f"must lie in [0, 1], got {self.pseudo_threshold}")
        if self.proto_grad not in PROTO_GRAD_MODES:
            raise ConfigError("proto_grad", f"must be one of {PROTO_GRAD_MODES}, got {self.proto_grad!r}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainState:
    encoder: EncoderParams
    gcn: GcnParams
    bank: PrototypeBank
    encoder_moments: Moments
    gcn_moments: Moments
    step: int
    rng: np.random.Generator
    graph: KnowledgeGraph | None = None

    @classmethod
    def initial(cls, config: TrainConfig) -> "TrainState":
        init_seq, sample_seq = np.random.SeedSequence(config.seed).spawn(2)
        init_rng = np.random.default_rng(init_seq)
        encoder = EncoderParams.init(init_rng, config.input_dim, config.d, config.hidden_dim)
        gcn = GcnParams.init(init_rng, config.d, config.K)
        bank = PrototypeBank.empty(config.M + 1, config.K, config.d, config.beta)
        return cls(
            encoder,
            gcn,
            bank,
            Moments.zeros_like(encoder),
            Moments.zeros_like(gcn),
            0,
            np.random.default_rng(sample_seq),
        )
