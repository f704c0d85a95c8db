"""One LtC-MSDA training iteration, the fit loop and the metrics CSV.

Gradient boundary: stored prototypes are statistics, not parameters. The
encoder objective reaches the encoder through the query rows of the
extended feature matrix, through the query-prototype affinities, and
through the local relation term. With ``proto_grad="through-batch"`` the
prototype gradient is also routed into the batch features that produced
this iteration's estimates.
"""
from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .encoder import EncoderParams, encode, encode_backward
from .errors import DivergenceError, LtcError
from .gcn import GcnParams, gcn_backward, gcn_forward
from .graph import KnowledgeGraph, build_graph, extend_graph, pairwise_affinity_backward
from .inference import aggregate_predict, evaluate
from .losses import (
    LossReport,
    assemble_report,
    global_relation_loss,
    local_relation_loss,
    prototype_cls_loss,
    source_cls_loss,
    target_entropy_loss,
)
from .optim import optimizer_update
from .prototypes import (
    PrototypeBank,
    PseudoLabelResult,
    assign_pseudo_labels,
    ema_update,
    estimate_prototypes,
    fill_uninitialized,
    reject_all,
)
from .state import TrainConfig, TrainState
from .synth import DomainBatch, LabeledSet, sample_batch

METRICS_HEADER = ["iter", "epoch", "ral_global", "ral_local", "cls_proto", "cls_src", "cls_tgt", "target_acc"]


@dataclass
class Benchmark:
    sources: list[LabeledSet]
    target: LabeledSet
    target_test: LabeledSet

    @property
    def training_sets(self) -> list[LabeledSet]:
        return [*self.sources, self.target]


@dataclass
class StackedBatch:
    inputs: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    mask: np.ndarray
    num_sources: int
    per_domain: int

    def domain_rows(self, m: int) -> np.ndarray:
        return np.arange(m * self.per_domain, (m + 1) * self.per_domain)


@dataclass
class BankUpdate:
    bank: PrototypeBank
    counts: np.ndarray
    first_touch: np.ndarray


@dataclass
class StepResult:
    report: LossReport
    objective: float
    encoder_grads: EncoderParams
    gcn_grads: GcnParams
    bank: PrototypeBank
    graph: KnowledgeGraph


def stack_batch(batch: DomainBatch, pseudo: PseudoLabelResult) -> StackedBatch:
    b, M = batch.per_domain_size, batch.num_sources
    inputs = np.vstack([x for x, _ in batch.source_batches] + [batch.target_inputs])
    labels = np.concatenate([y for _, y in batch.source_batches] + [pseudo.labels]).astype(np.int64)
    mask = np.concatenate([np.ones(M * b, bool), pseudo.accepted])
    domains = np.repeat(np.arange(M + 1), b)
    return StackedBatch(inputs, labels, domains, mask, M, b)


def pseudo_label(state: TrainState, target_inputs, config: TrainConfig) -> PseudoLabelResult:
    """Label target rows with the previous iteration's graph and current weights.

    Before any graph exists every row is rejected.
    """
    n = len(target_inputs)
    if state.graph is None or state.graph.num_vertices == 0:
        return reject_all(n)
    features, _ = encode(state.encoder, target_inputs)
    return assign_pseudo_labels(aggregate_predict(state.gcn, state.graph, features), config.pseudo_threshold)


def update_bank(bank: PrototypeBank, features, sb: StackedBatch) -> BankUpdate:
    counts = np.zeros(bank.initialized.shape, dtype=np.int64)
    first_touch = np.zeros(bank.initialized.shape, dtype=bool)
    for m in range(sb.num_sources + 1):
        rows = sb.domain_rows(m)
        est, cnt = estimate_prototypes(features[rows], sb.labels[rows], sb.mask[rows], bank.num_classes)
        first_touch[m] = (cnt > 0) & ~bank.initialized[m]
        counts[m] = cnt
        bank = ema_update(bank, m, est, cnt)
    return BankUpdate(fill_uninitialized(bank), counts, first_touch)


def _check_finite(parts: dict) -> None:
    for name, value in parts.items():
        if not np.isfinite(value):
            raise DivergenceError(name, value)


def forward_backward(
    encoder: EncoderParams,
    gcn: GcnParams,
    bank: PrototypeBank,
    sb: StackedBatch,
    config: TrainConfig,
    frozen_bank: bool = False,
) -> StepResult:
    """Losses and gradients of both objectives for one stacked batch.

    With ``frozen_bank`` the given bank is used as-is (no EMA update); this is
    the probe used for end-to-end gradient checks.
    """
    M, K = config.M, config.K
    features, etrace = encode(encoder, sb.inputs)
    if frozen_bank:
        upd = BankUpdate(bank, np.zeros(bank.initialized.shape, np.int64), np.zeros(bank.initialized.shape, bool))
    else:
        upd = update_bank(bank, features, sb)
    bank = upd.bank
    graph = build_graph(bank, config.sigma)
    ext = extend_graph(graph, features)
    pred, gtrace = gcn_forward(gcn, ext.F_bar, ext.A_bar, ext.proto_rows)

    n_proto = graph.num_vertices
    query = lambda rows: rows + n_proto  # noqa: E731
    g_val, g_grad_A = global_relation_loss(graph.A, M, K)
    l_val, l_grad_z = local_relation_loss(
        features, sb.labels, sb.domains, sb.mask, bank.prototypes, bank.initialized, len(sb.labels)
    )
    p_val, p_grad = prototype_cls_loss(pred, M, K)
    s_val, s_grad = source_cls_loss(
        pred, [query(sb.domain_rows(m)) for m in range(M)], [sb.labels[sb.domain_rows(m)] for m in range(M)]
    )
    t_val, t_grad = target_entropy_loss(pred, query(sb.domain_rows(M)))
    parts = {"ral_global": g_val, "ral_local": l_val, "cls_proto": p_val, "cls_src": s_val, "cls_tgt": t_val}
    _check_finite(parts)
    report = assemble_report(parts, config.lambda1, config.lambda2)

    w_proto = 1.0 if config.use_cls_proto else 0.0
    w_tgt = 1.0 if config.use_cls_tgt else 0.0
    grad_P = s_grad + w_proto * p_grad + w_tgt * t_grad
    objective = s_val + w_proto * p_val + w_tgt * t_val + config.lambda1 * g_val + config.lambda2 * l_val

    gcn_grads, g_F_bar, g_A_bar = gcn_backward(gcn, gtrace, grad_P)

    # query-prototype affinities: S sits at A_bar[:P, P:] and its transpose
    g_S = g_A_bar[:n_proto, n_proto:] + g_A_bar[n_proto:, :n_proto].T
    g_F_from_S, g_q_from_S = pairwise_affinity_backward(graph.F, features, ext.S, g_S, config.sigma)
    g_features = g_F_bar[n_proto:] + g_q_from_S + config.lambda2 * l_grad_z

    if config.proto_grad == "through-batch" and not frozen_bank:
        g_A = g_A_bar[:n_proto, :n_proto] + config.lambda1 * g_grad_A
        gx, gy = pairwise_affinity_backward(graph.F, graph.F, graph.A, g_A, config.sigma)
        g_F = g_F_bar[:n_proto] + g_F_from_S + gx + gy
        g_protos = g_F.reshape(M + 1, K, -1)
        # local term: d/dc of |z - c|^2 is the negative of d/dz
        np.add.at(g_protos, (sb.domains[sb.mask], sb.labels[sb.mask]), -config.lambda2 * l_grad_z[sb.mask])
        factor = np.where(upd.first_touch, 1.0, 1.0 - bank.beta) / np.maximum(upd.counts, 1)
        factor = np.where(upd.counts > 0, factor, 0.0)
        rows = np.flatnonzero(sb.mask)
        g_features[rows] += factor[sb.domains[rows], sb.labels[rows], None] * g_protos[sb.domains[rows], sb.labels[rows]]

    encoder_grads, _ = encode_backward(encoder, etrace, g_features)
    return StepResult(report, float(objective), encoder_grads, gcn_grads, bank, graph)


def train_step(state: TrainState, batch: DomainBatch, config: TrainConfig):
    """Run one iteration and return (new_state, pre-update LossReport)."""
    pseudo = pseudo_label(state, batch.target_inputs, config)
    sb = stack_batch(batch, pseudo)
    res = forward_backward(state.encoder, state.gcn, state.bank, sb, config)
    step = state.step + 1
    encoder, enc_m = optimizer_update(state.encoder, res.encoder_grads, state.encoder_moments, config.learning_rate, step)
    gcn, gcn_m = optimizer_update(state.gcn, res.gcn_grads, state.gcn_moments, config.learning_rate, step)
    new_state = TrainState(encoder, gcn, res.bank, enc_m, gcn_m, step, state.rng, res.graph)
    return new_state, res.report


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def _ensure_writable(output_dir: Path) -> None:
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryFile(dir=output_dir):
            pass
    except OSError as exc:
        raise OSError(f"output directory {output_dir} is not writable: {exc}") from exc


def fit(config: TrainConfig, benchmark: Benchmark, output_dir=None) -> Checkpoint:
    """Train for epochs x iterations_per_epoch steps.

    Writes ``metrics.csv`` (one row per iteration, target accuracy on the
    held-out target set at each epoch's last iteration) and
    ``checkpoint.ltcg`` into the output directory.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    _ensure_writable(out)
    if len(benchmark.sources) != config.M:
        raise LtcError(f"config has M={config.M} but benchmark provides {len(benchmark.sources)} sources")
    state = TrainState.initial(config)
    sets = benchmark.training_sets
    tmp_metrics = out / "metrics.csv.tmp"
    with open(tmp_metrics, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for epoch in range(config.epochs):
            for it in range(config.iterations_per_epoch):
                batch = sample_batch(sets, config.per_domain_size, state.rng)
                state, report = train_step(state, batch, config)
                acc = ""
                if it == config.iterations_per_epoch - 1:
                    acc = _fmt(evaluate(Checkpoint.from_state(state, config.sigma), benchmark.target_test).accuracy)
                writer.writerow(
                    [state.step, epoch + 1] + [_fmt(v) for v in report.parts().values()] + [acc]
                )
    os.replace(tmp_metrics, out / "metrics.csv")
    ckpt = Checkpoint.from_state(state, config.sigma)
    save_checkpoint(ckpt, out / "checkpoint.ltcg")
    return ckpt


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
