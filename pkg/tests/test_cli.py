import json
from pathlib import Path

import numpy as np

from armsense.cli import run
from armsense.container import read_dataset, write_dataset
from armsense.types import Location, Velocity

from helpers import toy_class_dataset


def _latest_run(out: Path) -> Path:
    return out / (out / "latest").read_text().strip()


def _write_toy_dataset(path: Path, n_per_class=4, velocities=(Velocity.V2,), locations=(Location.L1,)):
    samples = []
    for v in velocities:
        for loc in locations:
            batch = toy_class_dataset(n_per_class, seed=int(v) * 10 + int(loc))
            samples += [
                type(s)(
                    s.sniffer1,
                    s.sniffer2,
                    type(s.meta)(s.meta.label, v, loc, s.meta.source),
                )
                for s in batch
            ]
    write_dataset(path, samples)
    return samples


TINY_FLAGS = ["--model-preset", "tiny", "--lr", "0.003", "--max-epochs", "2", "--patience", "2"]


def test_synth_writes_dataset(tmp_path):
    out = tmp_path / "runs"
    dataset = tmp_path / "data"
    code = run(
        ["synth", "--count", "2", "--seed", "3", "--dataset", str(dataset), "--out", str(out)]
    )
    assert code == 0
    samples = read_dataset(dataset)
    assert len(samples) == 16
    run_dir = _latest_run(out)
    assert (run_dir / "config.json").exists()
    echo = json.loads((run_dir / "config.json").read_text())
    assert echo["seed"] == 3


def test_synth_deterministic_across_runs(tmp_path):
    for name in ("a", "b"):
        assert (
            run(
                [
                    "synth",
                    "--count",
                    "1",
                    "--seed",
                    "7",
                    "--dataset",
                    str(tmp_path / name),
                    "--out",
                    str(tmp_path / "runs"),
                ]
            )
            == 0
        )
    a = read_dataset(tmp_path / "a")
    b = read_dataset(tmp_path / "b")
    for s, t in zip(a, b):
        assert np.array_equal(s.sniffer1.data, t.sniffer1.data)


def test_synth_complementary_dataset(tmp_path):
    dataset = tmp_path / "comp"
    code = run(
        [
            "synth",
            "--complementary",
            "--count",
            "1",
            "--seed",
            "2",
            "--dataset",
            str(dataset),
            "--out",
            str(tmp_path / "runs"),
        ]
    )
    assert code == 0
    assert len(read_dataset(dataset)) == 8


def test_import_subcommand_roundtrip(tmp_path):
    # import validates container invariants, so the source must be full-shape
    src = tmp_path / "src"
    assert (
        run(
            [
                "synth",
                "--count",
                "1",
                "--seed",
                "5",
                "--dataset",
                str(src),
                "--out",
                str(tmp_path / "runs"),
            ]
        )
        == 0
    )
    dest = tmp_path / "dest"
    code = run(
        [
            "import",
            "--dataset",
            str(src),
            "--adapter",
            "identity",
            "--dest",
            str(dest),
            "--out",
            str(tmp_path / "runs"),
        ]
    )
    assert code == 0
    imported = read_dataset(dest)
    original = read_dataset(src)
    assert len(imported) == len(original) == 8
    for a, b in zip(imported, original):
        assert np.array_equal(a.sniffer1.data, b.sniffer1.data)


def test_preprocess_subcommand_downsamples(tmp_path):
    src = tmp_path / "src"
    _write_toy_dataset(src, n_per_class=1, velocities=(Velocity.V2,))
    dest = tmp_path / "dest"
    code = run(
        [
            "preprocess",
            "--dataset",
            str(src),
            "--dest",
            str(dest),
            "--rate",
            "10",
            "--out",
            str(tmp_path / "runs"),
        ]
    )
    assert code == 0
    out = read_dataset(dest)
    assert all(s.sniffer1.rate_hz == 10 for s in out)
    assert (dest / "preprocessing.json").exists()


def test_train_and_eval_roundtrip(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=4)
    out = tmp_path / "runs"
    assert run(["train", "--dataset", str(data), "--out", str(out), "--seed", "0", *TINY_FLAGS]) == 0
    train_dir = _latest_run(out)
    assert (train_dir / "classifier" / "weights.rfsw").exists()
    assert (train_dir / "curves.csv").exists()
    metrics = json.loads((train_dir / "metrics.json").read_text())
    assert "test" in metrics

    assert (
        run(
            [
                "eval",
                "--dataset",
                str(data),
                "--classifier",
                str(train_dir / "classifier"),
                "--out",
                str(out),
            ]
        )
        == 0
    )
    eval_dir = _latest_run(out)
    payload = json.loads((eval_dir / "metrics.json").read_text())
    assert 0.0 <= payload["accuracy"] <= 1.0


def test_cv_creates_fold_reports(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=4)
    out = tmp_path / "runs"
    code = run(
        ["cv", "--dataset", str(data), "--out", str(out), "--seed", "1", "--folds", "2", *TINY_FLAGS]
    )
    assert code == 0
    run_dir = _latest_run(out)
    report = json.loads((run_dir / "report.json").read_text())
    assert len(report["folds"]) == 2
    assert (run_dir / "confusion_fold0.csv").exists()
    assert (run_dir / "summary_table.csv").exists()


def test_cv_rerun_same_seed_byte_identical_metrics(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=4)
    payloads = []
    for sub in ("r1", "r2"):
        out = tmp_path / sub
        assert (
            run(
                [
                    "cv",
                    "--dataset",
                    str(data),
                    "--out",
                    str(out),
                    "--seed",
                    "5",
                    "--folds",
                    "2",
                    *TINY_FLAGS,
                ]
            )
            == 0
        )
        payloads.append((_latest_run(out) / "report.json").read_bytes())
    assert payloads[0] == payloads[1]


def test_lovo_requires_all_velocities(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=3, velocities=(Velocity.V1, Velocity.V2))
    code = run(["lovo", "--dataset", str(data), "--out", str(tmp_path / "runs"), *TINY_FLAGS])
    assert code == 1


def test_lovo_emits_layout(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=3, velocities=(Velocity.V1, Velocity.V2, Velocity.V3))
    out = tmp_path / "runs"
    assert run(["lovo", "--dataset", str(data), "--out", str(out), *TINY_FLAGS]) == 0
    run_dir = _latest_run(out)
    assert (run_dir / "per_class_accuracy.csv").exists()
    assert (run_dir / "lovo.json").exists()


def test_sweep_freq_grid(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=4, velocities=(Velocity.V1,))
    out = tmp_path / "runs"
    code = run(
        [
            "sweep-freq",
            "--dataset",
            str(data),
            "--out",
            str(out),
            "--rate",
            "30",
            "--rate",
            "15",
            *TINY_FLAGS,
        ]
    )
    assert code == 0
    run_dir = _latest_run(out)
    sweep = json.loads((run_dir / "sweep.json").read_text())
    assert set(sweep["grid"]) == {"30", "15"}
    assert (run_dir / "sweep_grid.svg").exists()


def test_sweep_loc_matrix(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=3, locations=tuple(Location))
    out = tmp_path / "runs"
    assert run(["sweep-loc", "--dataset", str(data), "--out", str(out), *TINY_FLAGS]) == 0
    run_dir = _latest_run(out)
    loc = json.loads((run_dir / "location.json").read_text())
    assert set(loc["accuracy"]) == {"L1", "L2", "L3", "L4", "MIX"}


def test_report_rerenders_sweep(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=4, velocities=(Velocity.V1,))
    out = tmp_path / "runs"
    assert (
        run(
            [
                "sweep-freq",
                "--dataset",
                str(data),
                "--out",
                str(out),
                "--rate",
                "30",
                *TINY_FLAGS,
            ]
        )
        == 0
    )
    sweep_dir = _latest_run(out)
    assert run(["report", "--run", str(sweep_dir), "--out", str(out)]) == 0
    report_dir = _latest_run(out)
    assert (report_dir / "sweep_grid.csv").exists()


def test_invalid_max_epochs_is_validation_error(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data)
    code = run(
        ["train", "--dataset", str(data), "--out", str(tmp_path / "runs"), "--max-epochs", "0"]
    )
    assert code == 1


def test_unknown_flag_is_validation_error(tmp_path):
    assert run(["train", "--nonsense"]) == 1


def test_missing_dataset_is_validation_error(tmp_path):
    code = run(["cv", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "runs")])
    assert code == 1


def test_run_dirs_never_collide(tmp_path):
    out = tmp_path / "runs"
    dirs = set()
    for i in range(3):
        assert (
            run(
                [
                    "synth",
                    "--count",
                    "1",
                    "--seed",
                    "0",
                    "--dataset",
                    str(tmp_path / f"d{i}"),
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        dirs.add(_latest_run(out))
    assert len(dirs) == 3


def test_rerun_from_echoed_config_reproduces_metrics(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=4)
    out1 = tmp_path / "r1"
    assert (
        run(
            [
                "cv",
                "--dataset",
                str(data),
                "--out",
                str(out1),
                "--seed",
                "4",
                "--folds",
                "2",
                *TINY_FLAGS,
            ]
        )
        == 0
    )
    first = _latest_run(out1)
    out2 = tmp_path / "r2"
    echo = json.loads((first / "config.json").read_text())
    echo["out"] = str(out2)
    rerun_cfg = tmp_path / "rerun.json"
    rerun_cfg.write_text(json.dumps(echo))
    assert run(["cv", "--config", str(rerun_cfg)]) == 0
    second = _latest_run(out2)
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()


def _dir_fingerprint(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_subcommands_do_not_mutate_input_dataset(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=4)
    before = _dir_fingerprint(data)
    assert (
        run(
            [
                "cv",
                "--dataset",
                str(data),
                "--out",
                str(tmp_path / "runs"),
                "--folds",
                "2",
                *TINY_FLAGS,
            ]
        )
        == 0
    )
    assert _dir_fingerprint(data) == before


def test_cv_parallel_workers_match_sequential(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data, n_per_class=4)
    reports = []
    for workers, sub in (("1", "w1"), ("2", "w2")):
        out = tmp_path / sub
        assert (
            run(
                [
                    "cv",
                    "--dataset",
                    str(data),
                    "--out",
                    str(out),
                    "--seed",
                    "2",
                    "--folds",
                    "2",
                    "--workers",
                    workers,
                    *TINY_FLAGS,
                ]
            )
            == 0
        )
        reports.append((_latest_run(out) / "report.json").read_bytes())
    assert reports[0] == reports[1]


def test_config_file_with_flag_precedence(tmp_path):
    data = tmp_path / "data"
    _write_toy_dataset(data)
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"seed": 9, "folds": 2, "model_preset": "tiny",
                                    "lr": 0.003, "max_epochs": 1, "patience": 1}))
    out = tmp_path / "runs"
    code = run(
        [
            "cv",
            "--dataset",
            str(data),
            "--config",
            str(cfg_file),
            "--seed",
            "11",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    echo = json.loads((_latest_run(out) / "config.json").read_text())
    assert echo["seed"] == 11  # flag wins
    assert echo["folds"] == 2  # file fills the rest
