import csv
import json

import numpy as np
import pytest

from config.settings import RunConfig
from core.models import Split
from services.bundle_store import load_bundle
from ui.cli import ABLATION_METRICS, SWEEP_COLUMNS, build_parser, format_stats, run_cli

SMALL = [
    "--n-states", "4",
    "--n-objects", "5",
    "--seen-fraction", "0.8",
    "--samples-per-pair", "6",
    "--feature-dim", "8",
    "--proto-dim", "6",
    "--hidden", "10",
    "--k", "3",
    "--batch-size", "16",
    "--epochs", "1",
    "--lr", "1e-3",
]


def cli(command, output_dir, *extra):
    return run_cli([command, *SMALL, "--output-dir", str(output_dir), *extra])


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_every_config_field_has_a_flag():
    parser = build_parser()
    for name in RunConfig.model_fields:
        args = parser.parse_args(["train", f"--{name}", "1"])
        assert getattr(args, name) == "1"
    args = parser.parse_args(["train", "--seen-fraction", "0.5", "--force"])
    assert args.seen_fraction == "0.5" and args.force == "true"
    assert not hasattr(parser.parse_args(["train"]), "seed")


def test_gen_data_default_desk_counts(tmp_path, capsys):
    assert run_cli(["gen-data", "--output-dir", str(tmp_path)]) == 0
    stats = load_bundle(tmp_path / "bundle.meta", tmp_path / "bundle.feat").describe()
    assert (stats.test_seen_pairs, stats.test_unseen_pairs) == (60, 20)
    assert capsys.readouterr().out.strip() == format_stats("synthetic", stats)


def test_gen_data_refuses_to_overwrite(tmp_path):
    assert cli("gen-data", tmp_path) == 0
    before = (tmp_path / "bundle.feat").read_bytes()
    assert cli("gen-data", tmp_path, "--data-seed", "9") == 1
    assert (tmp_path / "bundle.feat").read_bytes() == before
    assert cli("gen-data", tmp_path, "--data-seed", "9", "--force") == 0
    assert (tmp_path / "bundle.feat").read_bytes() != before


def test_gen_data_is_byte_reproducible(tmp_path):
    assert cli("gen-data", tmp_path / "a") == 0
    assert cli("gen-data", tmp_path / "b") == 0
    for name in ("bundle.meta", "bundle.feat"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_data_rejects_full_seen_fraction(tmp_path):
    assert run_cli(["gen-data", "--output-dir", str(tmp_path), "--seen-fraction", "1.0"]) == 1
    assert not (tmp_path / "bundle.meta").exists()


def test_invalid_setting_exits_with_one(tmp_path):
    assert cli("train", tmp_path, "--tau-s", "0") == 1
    assert cli("train", tmp_path, "--variant", "half") == 1


def test_train_then_eval_twice(tmp_path, capsys):
    assert cli("train", tmp_path) == 0
    for name in ("best.ckpt", "final.ckpt", "train_log.csv"):
        assert (tmp_path / name).is_file()
    log = (tmp_path / "train_log.csv").read_text(encoding="utf-8").splitlines()
    assert log[0] == "epoch,L_cls,L_scl,L_ocl,L_D,L_G_adv,L_cls_re,val_auc"
    assert len(log) == 2

    capsys.readouterr()
    assert cli("eval", tmp_path) == 0
    first = {p: (tmp_path / p).read_bytes() for p in ("report_test.json", "curve_test.csv")}
    printed = capsys.readouterr().out.splitlines()
    assert printed[1].startswith("test")
    assert cli("eval", tmp_path) == 0
    assert first == {p: (tmp_path / p).read_bytes() for p in first}
    assert set(json.loads(first["report_test.json"])) >= {"auc", "best_hm"}

    assert cli("eval", tmp_path, "--split", "val") == 0
    assert (tmp_path / "report_val.json").is_file()


def test_eval_on_train_split_rejected(tmp_path):
    assert cli("train", tmp_path, "--epochs", "0") == 0
    assert cli("eval", tmp_path, "--split", Split.TRAIN.value) == 1


def test_eval_rejects_mismatched_bundle(tmp_path):
    assert cli("train", tmp_path, "--epochs", "0") == 0
    assert cli("eval", tmp_path, "--n-states", "5") == 1


def test_missing_checkpoint_exits_with_one(tmp_path):
    assert cli("eval", tmp_path, "--checkpoint", str(tmp_path / "nope.ckpt")) == 1


def test_train_from_saved_bundle(tmp_path):
    assert cli("gen-data", tmp_path / "data") == 0
    paths = ["--metadata-path", str(tmp_path / "data" / "bundle.meta"), "--features-path", str(tmp_path / "data" / "bundle.feat")]
    assert cli("train", tmp_path / "run", *paths) == 0
    assert cli("train", tmp_path / "half", *paths[:2]) == 1


def test_runaway_learning_rate_is_a_numerical_abort(tmp_path):
    with np.errstate(all="ignore"):
        assert cli("train", tmp_path, "--lr", "1e300", "--epochs", "3") == 2


def test_ablation_without_training_is_flat(tmp_path, capsys):
    assert cli("ablate", tmp_path, "--epochs", "0", "--n-seeds", "1") == 0
    rows = read_rows(tmp_path / "ablation.csv")
    assert [r["variant"] for r in rows] == ["base", "cts", "stm", "full"]
    assert list(rows[0]) == ["variant"] + ABLATION_METRICS
    for row in rows[1:]:
        assert {m: row[m] for m in ABLATION_METRICS} == {m: rows[0][m] for m in ABLATION_METRICS}
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 5


def test_multi_seed_ablation_reports_means(tmp_path):
    assert cli("ablate", tmp_path, "--epochs", "0", "--n-seeds", "2", "--seed", "3") == 0
    rows = read_rows(tmp_path / "ablation.csv")
    assert len(rows) == 4
    assert len(rows[0]) == 1 + 3 * len(ABLATION_METRICS)
    for row in rows:
        for m in ABLATION_METRICS:
            seeds = [float(row[f"{m}_seed3"]), float(row[f"{m}_seed4"])]
            assert float(row[f"{m}_mean"]) == pytest.approx(np.mean(seeds))


def test_sweep_covers_the_grid(tmp_path):
    assert cli("sweep", tmp_path, "--epochs", "0", "--alpha-grid", "0.1,0.2", "--beta-grid", "0 0.5") == 0
    rows = read_rows(tmp_path / "sweep.csv")
    assert list(rows[0]) == SWEEP_COLUMNS
    assert [(float(r["alpha"]), float(r["beta"])) for r in rows] == [(0.1, 0.0), (0.1, 0.5), (0.2, 0.0), (0.2, 0.5)]
