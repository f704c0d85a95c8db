"""Experiment runner: ``ltc-msda {run,ablate,sweep,eval,export-graph}``."""
from __future__ import annotations

import argparse
import csv
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .baseline import fit_source_only
from .checkpoint import load_checkpoint
from .config import ExperimentManifest, load_experiment
from .errors import ConfigError, DivergenceError, LtcError
from .graph import save_matrix_csv
from .inference import evaluate, predict, write_embeddings_csv, write_metrics_csv, write_per_sample_csv
from .trainer import fit

ABLATION_TERMS = ("ral_global", "ral_local", "cls_proto", "cls_tgt")
SWEEP_PARAMS = {"sigma": "sigma", "lambda1": "lambda1", "lambda2": "lambda2"}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _seeds(args, manifest: ExperimentManifest) -> list[int]:
    if args.seeds:
        try:
            return [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError("seeds", f"expected comma-separated integers, got {args.seeds!r}")
    if args.seed is not None:
        return [args.seed]
    return [manifest.train.seed]


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("LTC_THREADS", "1")))
    except ValueError:
        return 1


def _train_cell(manifest_dict: dict, out_dir: str, source_only: bool = False) -> float:
    """Train one (config, seed) cell and return its final target accuracy."""
    manifest = ExperimentManifest.from_dict(manifest_dict)
    out = Path(out_dir)
    bench = manifest.benchmark()
    if source_only:
        return fit_source_only(manifest.train, bench).accuracy(bench.target_test)
    ckpt = fit(manifest.train, bench, out)
    metrics = evaluate(ckpt, bench.target_test)
    write_metrics_csv(metrics, out / "eval_metrics.csv")
    return metrics.accuracy


def _run_cells(cells: list[tuple[dict, str, bool]]) -> list[float]:
    # resolved manifests go down before any compute
    for m_dict, cell_dir, _ in cells:
        Path(cell_dir).mkdir(parents=True, exist_ok=True)
        ExperimentManifest.from_dict(m_dict).write(Path(cell_dir) / "manifest.json", created_at=_now())
    workers = _workers()
    if workers == 1 or len(cells) == 1:
        return [_train_cell(*c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_cell, *zip(*cells)))


def _summary(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def cmd_run(args) -> int:
    base = load_experiment(args.config)
    seeds = _seeds(args, base)
    out = Path(args.out or base.train.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for s in seeds:
        m = base.with_train(seed=s)
        cell_dir = out if len(seeds) == 1 else out / f"seed_{s}"
        m = m.with_train(output_dir=str(cell_dir))
        cells.append((m.to_dict(), str(cell_dir), args.source_only))
    if len(seeds) > 1:
        resolved = base.with_train(output_dir=str(out))
        resolved.extras = {"seeds": seeds}
        resolved.write(out / "manifest.json", created_at=_now())
    accs = _run_cells(cells)
    if len(seeds) == 1:
        print(f"target_acc={_fmt(accs[0])}")
        return 0
    mean, std = _summary(accs)
    _write_csv(out / "summary.csv", ["seed", "target_acc"], [[s, _fmt(a)] for s, a in zip(seeds, accs)])
    for s, a in zip(seeds, accs):
        print(f"seed={s} target_acc={_fmt(a)}")
    print(f"target_acc={_fmt(mean)} std={_fmt(std)}")
    return 0


def _combo_name(active: set[str]) -> str:
    order = ("cls_src", "cls_proto", "cls_tgt", "ral_global", "ral_local")
    return "+".join(t for t in order if t in active)


def ablation_combos(toggles: list[str]) -> list[tuple[str, dict]]:
    """Every on/off assignment of ``toggles``; untoggled terms stay on."""
    unknown = [t for t in toggles if t not in ABLATION_TERMS]
    if unknown:
        raise ConfigError("toggles", f"unknown toggle(s) {unknown}; choose from {list(ABLATION_TERMS)}")
    combos = []
    for bits in itertools.product((False, True), repeat=len(toggles)):
        off = {t for t, on in zip(toggles, bits) if not on}
        active = {"cls_src", *ABLATION_TERMS} - off
        combos.append((_combo_name(active), off))
    return combos


def _apply_off(manifest: ExperimentManifest, off: set[str]) -> ExperimentManifest:
    changes = {}
    if "ral_global" in off:
        changes["lambda1"] = 0.0
    if "ral_local" in off:
        changes["lambda2"] = 0.0
    if "cls_proto" in off:
        changes["use_cls_proto"] = False
    if "cls_tgt" in off:
        changes["use_cls_tgt"] = False
    return manifest.with_train(**changes)


def cmd_ablate(args) -> int:
    toggles = [t.strip() for t in (args.toggles or "").split(",") if t.strip()]
    combos = ablation_combos(toggles)
    base = load_experiment(args.config)
    seeds = _seeds(args, base)
    out = Path(args.out or base.train.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = base.with_train(output_dir=str(out))
    resolved.extras = {"ablation": {"toggles": toggles, "combos": [c for c, _ in combos], "seeds": seeds}}
    resolved.write(out / "manifest.json", created_at=_now())
    cells, keys = [], []
    for combo, off in combos:
        for s in seeds:
            cell_dir = out / "cells" / combo / f"seed_{s}"
            m = _apply_off(base, off).with_train(seed=s, output_dir=str(cell_dir))
            cells.append((m.to_dict(), str(cell_dir), False))
            keys.append((combo, s))
    accs = _run_cells(cells)
    _write_csv(out / "ablation.csv", ["combo", "seed", "target_acc"], [[c, s, _fmt(a)] for (c, s), a in zip(keys, accs)])
    summary = []
    for combo, _ in combos:
        mean, std = _summary([a for (c, _), a in zip(keys, accs) if c == combo])
        summary.append([combo, _fmt(mean), _fmt(std)])
        print(f"{combo}: target_acc={_fmt(mean)} std={_fmt(std)}")
    _write_csv(out / "ablation_summary.csv", ["combo", "mean_target_acc", "std_target_acc"], summary)
    return 0


def _parse_values(param: str, raw: str) -> list[float]:
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("values", f"expected comma-separated numbers, got {raw!r}")
    if not values:
        raise ConfigError("values", "need at least one value")
    for v in values:
        if param == "sigma" and not v > 0:
            raise ConfigError("values", f"sigma must be > 0, got {v}")
        if param != "sigma" and not v >= 0:
            raise ConfigError("values", f"{param} must be >= 0, got {v}")
    return values


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise ConfigError("param", f"must be one of {sorted(SWEEP_PARAMS)}, got {args.param!r}")
    values = _parse_values(args.param, args.values or "")
    base = load_experiment(args.config)
    seeds = _seeds(args, base)
    out = Path(args.out or base.train.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = base.with_train(output_dir=str(out))
    resolved.extras = {"sweep": {"param": args.param, "values": values, "seeds": seeds}}
    resolved.write(out / "manifest.json", created_at=_now())
    cells, keys = [], []
    for v in values:
        for s in seeds:
            cell_dir = out / "cells" / f"{args.param}={v:g}" / f"seed_{s}"
            m = base.with_train(**{SWEEP_PARAMS[args.param]: v, "seed": s, "output_dir": str(cell_dir)})
            cells.append((m.to_dict(), str(cell_dir), False))
            keys.append((v, s))
    accs = _run_cells(cells)
    _write_csv(
        out / "sweep.csv",
        ["param", "value", "seed", "target_acc"],
        [[args.param, _fmt(v), s, _fmt(a)] for (v, s), a in zip(keys, accs)],
    )
    summary = []
    for v in values:
        mean, std = _summary([a for (vv, _), a in zip(keys, accs) if vv == v])
        summary.append([args.param, _fmt(v), _fmt(mean), _fmt(std)])
        print(f"{args.param}={_fmt(v)}: target_acc={_fmt(mean)} std={_fmt(std)}")
    _write_csv(out / "sweep_summary.csv", ["param", "value", "mean_target_acc", "std_target_acc"], summary)
    return 0


def cmd_eval(args) -> int:
    manifest = load_experiment(args.config, seed=args.seed)
    ckpt = load_checkpoint(args.checkpoint, manifest.train.M, manifest.train.K)
    test = manifest.benchmark().target_test
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    metrics = evaluate(ckpt, test)
    write_metrics_csv(metrics, out / "eval_metrics.csv")
    if args.per_sample:
        write_per_sample_csv(test.labels, predict(ckpt, test.inputs), out / "per_sample.csv")
    if args.embeddings:
        write_embeddings_csv(ckpt, test, out / "emb.csv")
    print(f"target_acc={_fmt(metrics.accuracy)}")
    return 0


def cmd_export_graph(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix_csv(ckpt.graph.A, out / "A.csv")
    save_matrix_csv(ckpt.graph.F, out / "F.csv")
    print(f"wrote {out / 'A.csv'} and {out / 'F.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltc-msda", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config (.cfg) or manifest.json")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--seeds", default=None, help="comma-separated seeds; repeats the command per seed")
        p.add_argument("--out", default=None, help="output directory (default: output_dir from the config)")

    p = sub.add_parser("run", help="train and evaluate")
    common(p)
    p.add_argument("--source-only", action="store_true", help="train the pooled-source baseline instead")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="train one model per on/off combination of loss terms")
    common(p)
    p.add_argument("--toggles", default="", help=f"comma-separated subset of {','.join(ABLATION_TERMS)}")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="train one model per parameter value")
    common(p)
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's held-out target set")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--per-sample", action="store_true", help="also write per_sample.csv")
    p.add_argument("--embeddings", action="store_true", help="also write emb.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-graph", help="dump the stored A and F matrices as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except (LtcError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
