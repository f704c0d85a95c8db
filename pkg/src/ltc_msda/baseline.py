"""Source-only reference: the same encoder with a softmax head on pooled sources."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams, encode, encode_backward
from .gcn import softmax
from .optim import Moments, optimizer_update
from .params import ParamSet
from .state import TrainConfig, TrainState
from .synth import sample_batch


@dataclass
class HeadParams(ParamSet):
    W: np.ndarray
    b: np.ndarray


@dataclass
class SourceOnlyModel:
    encoder: EncoderParams
    head: HeadParams

    def predict(self, inputs) -> np.ndarray:
        features, _ = encode(self.encoder, inputs)
        return softmax(features @ self.head.W + self.head.b)

    def accuracy(self, testset) -> float:
        return float((self.predict(testset.inputs).argmax(axis=1) == testset.labels).mean())


def fit_source_only(config: TrainConfig, benchmark) -> SourceOnlyModel:
    """Train on pooled source batches with the LtC budget.

    Uses the same initial encoder, the same batch sampler stream, learning
    rate and number of iterations as ``trainer.fit`` for this config.
    """
    state = TrainState.initial(config)
    encoder, rng = state.encoder, state.rng
    head = HeadParams(np.zeros((config.d, config.K)), np.zeros(config.K))
    enc_m, head_m = Moments.zeros_like(encoder), Moments.zeros_like(head)
    sets = benchmark.training_sets
    step = 0
    for _ in range(config.epochs * config.iterations_per_epoch):
        batch = sample_batch(sets, config.per_domain_size, rng)
        x = np.vstack([xs for xs, _ in batch.source_batches])
        y = np.concatenate([ys for _, ys in batch.source_batches])
        features, trace = encode(encoder, x)
        probs = softmax(features @ head.W + head.b)
        g_logits = probs.copy()
        g_logits[np.arange(len(y)), y] -= 1.0
        g_logits /= len(y)
        head_grads = HeadParams(features.T @ g_logits, g_logits.sum(axis=0))
        enc_grads, _ = encode_backward(encoder, trace, g_logits @ head.W.T)
        step += 1
        encoder, enc_m = optimizer_update(encoder, enc_grads, enc_m, config.learning_rate, step)
        head, head_m = optimizer_update(head, head_grads, head_m, config.learning_rate, step)
    return SourceOnlyModel(encoder, head)
