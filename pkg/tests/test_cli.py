import csv
import io
from importlib.resources import files
from pathlib import Path

import numpy as np
import pytest

from ltc_msda.cli import main
from ltc_msda.checkpoint import load_checkpoint
from test_config import BASIC

TOY = str(files("ltc_msda") / "configs" / "toy.cfg")


def strict_csv(path, header):
    """Parse a CSV insisting on the exact header, equal row widths and a final newline."""
    text = Path(path).read_text()
    assert text.endswith("\n")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == header
    assert all(len(r) == len(header) for r in rows)
    return rows[1:]


@pytest.fixture()
def basic_cfg(tmp_path):
    path = tmp_path / "basic.cfg"
    path.write_text(BASIC)
    return str(path)


def _files(d: Path):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file() and p.name != "manifest.json"}


def test_run_twice_is_byte_identical(tmp_path, capsys):
    assert main(["run", "--config", TOY, "--seed", "1", "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", TOY, "--seed", "1", "--out", str(tmp_path / "b")]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert set(map(str, a)) >= {"metrics.csv", "checkpoint.ltcg", "eval_metrics.csv"}
    assert a == b
    out = capsys.readouterr().out.splitlines()
    assert out[0] == out[1] and out[0].startswith("target_acc=")
    strict_csv(tmp_path / "a" / "metrics.csv", ["iter", "epoch", "ral_global", "ral_local", "cls_proto", "cls_src", "cls_tgt", "target_acc"])


def test_missing_k_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(BASIC.replace("K = 3\n", ""))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "K" in capsys.readouterr().err


def test_untrained_model_scores_chance(tmp_path, capsys):
    cfg = Path(TOY).read_text().replace("epochs = 30", "epochs = 0")
    path = tmp_path / "zero.cfg"
    path.write_text(cfg)
    assert main(["run", "--config", str(path), "--seed", "1", "--out", str(tmp_path / "o")]) == 0
    acc = float(capsys.readouterr().out.strip().split("=")[1])
    n = 5 * 200
    assert abs(acc - 0.2) <= 3 * np.sqrt(0.2 * 0.8 / n)
    assert (tmp_path / "o" / "metrics.csv").read_text().count("\n") == 1


def test_unknown_toggle(tmp_path, basic_cfg):
    assert main(["ablate", "--config", basic_cfg, "--toggles", "ral_global,dropout", "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("values", ["0.5,-1,2", "0,1", "a,b"])
def test_invalid_sweep_values(tmp_path, basic_cfg, values):
    assert main(["sweep", "--config", basic_cfg, "--param", "sigma", "--values", values, "--out", str(tmp_path / "o")]) == 2


def test_negative_lambda_rejected(tmp_path, basic_cfg):
    assert main(["sweep", "--config", basic_cfg, "--param", "lambda1", "--values", "1,-0.5", "--out", str(tmp_path / "o")]) == 2


def test_single_value_sweep_matches_run(tmp_path, basic_cfg, capsys):
    main(["run", "--config", basic_cfg, "--seed", "3", "--out", str(tmp_path / "run")])
    run_acc = capsys.readouterr().out.strip().split("=")[1]
    assert main(["sweep", "--config", basic_cfg, "--seed", "3", "--param", "sigma", "--values", "0.5", "--out", str(tmp_path / "sw")]) == 0
    rows = strict_csv(tmp_path / "sw" / "sweep.csv", ["param", "value", "seed", "target_acc"])
    assert rows == [["sigma", "0.5", "3", run_acc]]
    cell = tmp_path / "sw" / "cells" / "sigma=0.5" / "seed_3"
    assert (cell / "checkpoint.ltcg").read_bytes() == (tmp_path / "run" / "checkpoint.ltcg").read_bytes()


def test_noop_ablation_matches_run(tmp_path, basic_cfg, capsys):
    main(["run", "--config", basic_cfg, "--seed", "2", "--out", str(tmp_path / "run")])
    run_acc = capsys.readouterr().out.strip().split("=")[1]
    assert main(["ablate", "--config", basic_cfg, "--seed", "2", "--out", str(tmp_path / "ab")]) == 0
    rows = strict_csv(tmp_path / "ab" / "ablation.csv", ["combo", "seed", "target_acc"])
    assert rows == [["cls_src+cls_proto+cls_tgt+ral_global+ral_local", "2", run_acc]]


def test_ablation_rows_per_seed(tmp_path, basic_cfg):
    assert main(["ablate", "--config", basic_cfg, "--seeds", "1,2", "--toggles", "ral_global,ral_local", "--out", str(tmp_path / "ab")]) == 0
    rows = strict_csv(tmp_path / "ab" / "ablation.csv", ["combo", "seed", "target_acc"])
    assert len(rows) == 8
    combos = {r[0] for r in rows}
    assert combos == {"cls_src+cls_proto+cls_tgt", "cls_src+cls_proto+cls_tgt+ral_global",
                      "cls_src+cls_proto+cls_tgt+ral_local", "cls_src+cls_proto+cls_tgt+ral_global+ral_local"}
    strict_csv(tmp_path / "ab" / "ablation_summary.csv", ["combo", "mean_target_acc", "std_target_acc"])
    assert (tmp_path / "ab" / "manifest.json").exists()
    assert all((tmp_path / "ab" / "cells" / c / "seed_1" / "manifest.json").exists() for c in combos)


def test_multi_seed_run_summary(tmp_path, basic_cfg, capsys):
    assert main(["run", "--config", basic_cfg, "--seeds", "1,2", "--out", str(tmp_path / "o")]) == 0
    rows = strict_csv(tmp_path / "o" / "summary.csv", ["seed", "target_acc"])
    assert [r[0] for r in rows] == ["1", "2"]
    assert "std=" in capsys.readouterr().out.splitlines()[-1]


def test_eval_and_export(tmp_path, basic_cfg, capsys):
    main(["run", "--config", basic_cfg, "--seed", "1", "--out", str(tmp_path / "run")])
    run_acc = capsys.readouterr().out.strip()
    ckpt = str(tmp_path / "run" / "checkpoint.ltcg")
    assert main(["eval", "--config", basic_cfg, "--seed", "1", "--checkpoint", ckpt, "--per-sample", "--embeddings", "--out", str(tmp_path / "ev")]) == 0
    assert capsys.readouterr().out.strip() == run_acc
    strict_csv(tmp_path / "ev" / "per_sample.csv", ["index", "true", "pred", "confidence"])
    emb = strict_csv(tmp_path / "ev" / "emb.csv", [f"e{j}" for j in range(32)] + ["label"])
    assert len(emb) == 21
    strict_csv(tmp_path / "ev" / "eval_metrics.csv", ["metric", "value"])
    assert main(["export-graph", "--checkpoint", ckpt, "--out", str(tmp_path / "g")]) == 0
    ck = load_checkpoint(ckpt)
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "g" / "A.csv", delimiter=","), ck.graph.A)
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "g" / "F.csv", delimiter=","), ck.graph.F)


def test_eval_dimension_mismatch(tmp_path, basic_cfg):
    main(["run", "--config", basic_cfg, "--seed", "1", "--out", str(tmp_path / "run")])
    other = tmp_path / "k4.cfg"
    other.write_text(BASIC.replace("K = 3", "K = 4"))
    assert main(["eval", "--config", str(other), "--checkpoint", str(tmp_path / "run" / "checkpoint.ltcg")]) == 1


def test_rerun_from_manifest(tmp_path, basic_cfg):
    main(["run", "--config", basic_cfg, "--seed", "5", "--out", str(tmp_path / "a")])
    main(["run", "--config", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_parallel_cells_match_serial(tmp_path, basic_cfg, monkeypatch):
    main(["sweep", "--config", basic_cfg, "--seeds", "1,2", "--param", "lambda2", "--values", "0,0.001", "--out", str(tmp_path / "s")])
    monkeypatch.setenv("LTC_THREADS", "2")
    main(["sweep", "--config", basic_cfg, "--seeds", "1,2", "--param", "lambda2", "--values", "0,0.001", "--out", str(tmp_path / "p")])
    assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "p" / "sweep.csv").read_bytes()
