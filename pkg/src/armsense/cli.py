"""Command-line entry point wiring the toolkit into reproducible runs.

Every subcommand writes its artifacts into a fresh timestamped directory under
--out, together with a config.json echo of the fully resolved run settings; a
`latest` pointer file names the newest run. Exit codes: 0 success, 1 invalid
request, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import functools
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .autodiff import make_rng
from .container import read_dataset, write_dataset
from .errors import ArmsenseError
from .ingest import adapter_names, import_external
from .models import ModelConfig, build_bivtc, build_vit, paper_preset, tiny_preset
from .preprocess import SubcarrierMask, downsample
from .protocols import (
    SWEEP_RATES,
    SplitSpec,
    cv_protocol,
    freq_sweep,
    location_protocol,
    lovo_protocol,
)
from .reporting import bar_chart_svg, write_csv, write_history_csv, write_json
from .synth import GenSpec, gen_complementary_dataset, gen_dataset
from .training import (
    TrainConfig,
    evaluate,
    fit,
    load_classifier,
    save_classifier,
)
from .types import Location, Sample, SnifferId, Velocity

PRESETS = {"paper": paper_preset, "tiny": tiny_preset}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; bad usage is a validation error
        self.print_usage(sys.stderr)
        raise SystemExit(_fail(1, message))


def _fail(code: int, message: str) -> int:
    print(f"armsense: error: {message}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="armsense", description=__doc__)
    parser.add_argument("--version", action="version", version=f"armsense {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=None, help="directory for run outputs")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON config file; flags override it")
        p.add_argument("--workers", type=int, default=None, help="worker pool size")

    def model_flags(p):
        p.add_argument("--model-preset", choices=sorted(PRESETS), default=None)
        p.add_argument("--model", choices=["bivtc", "vit"], default=None)
        p.add_argument("--sniffer", type=int, choices=[1, 2], default=None)
        p.add_argument("--depth", type=int, default=None)
        p.add_argument("--embed-dim", type=int, default=None)
        p.add_argument("--dropout", type=float, default=None)

    def train_flags(p):
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--weight-decay", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--max-epochs", type=int, default=None)
        p.add_argument("--patience", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--synth-spec", default=None, help="JSON generation spec")
    p.add_argument("--count", type=int, default=None, help="samples per class cell")
    p.add_argument("--velocity", action="append", default=None, choices=["V1", "V2", "V3"])
    p.add_argument("--location", action="append", default=None, choices=["L1", "L2", "L3", "L4"])
    p.add_argument("--noise-std", type=float, default=None)
    p.add_argument("--complementary", action="store_true", help="mirrored-pair dataset")
    p.add_argument("--dataset", default=None, help="output dataset directory")

    p = sub.add_parser("import", help="import a foreign dataset layout")
    common(p)
    p.add_argument("--dataset", default=None, help="source directory")
    p.add_argument("--adapter", default=None, help=f"one of {adapter_names()}")
    p.add_argument("--dest", default=None, help="output canonical dataset directory")

    p = sub.add_parser("preprocess", help="downsample / re-mask a dataset")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--dest", default=None)
    p.add_argument("--rate", type=int, default=None)
    p.add_argument("--mask", default=None, help="JSON subcarrier mask file (echoed only)")

    p = sub.add_parser("train", help="fit one model on a dataset split")
    common(p)
    model_flags(p)
    train_flags(p)
    p.add_argument("--dataset", default=None)

    p = sub.add_parser("eval", help="evaluate a saved classifier")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--classifier", default=None, help="directory from `train`")

    p = sub.add_parser("cv", help="Monte-Carlo cross-validation protocol")
    common(p)
    model_flags(p)
    train_flags(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--folds", type=int, default=None)

    p = sub.add_parser("lovo", help="leave-one-velocity-out protocol")
    common(p)
    model_flags(p)
    train_flags(p)
    p.add_argument("--dataset", default=None)

    p = sub.add_parser("sweep-freq", help="sampling-rate sweep")
    common(p)
    model_flags(p)
    train_flags(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--rate", action="append", type=int, default=None)
    p.add_argument("--folds", type=int, default=None)

    p = sub.add_parser("sweep-loc", help="sniffer-placement protocol")
    common(p)
    model_flags(p)
    train_flags(p)
    p.add_argument("--dataset", default=None)

    p = sub.add_parser("report", help="re-render a run's JSON into CSV/SVG")
    common(p)
    p.add_argument("--run", default=None, help="existing run directory")

    return parser


# ---------------------------------------------------------------------------
# config resolution: flags > config file > defaults
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "out": "runs",
    "seed": 0,
    "workers": os.cpu_count() or 1,
    "model_preset": "paper",
    "model": "bivtc",
    "sniffer": 1,
    "adapter": "identity",
    "folds": 5,
}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if getattr(args, "config", None):
        cfg.update(json.loads(Path(args.config).read_text()))
    for key, value in vars(args).items():
        if key == "config":
            continue
        if value is None:
            continue
        if value is False and key in cfg:  # unset store_true flags don't override
            continue
        cfg[key] = value
    for key, value in _DEFAULTS.items():
        cfg.setdefault(key, value)
    return cfg


def _model_config(cfg: dict) -> ModelConfig:
    base = PRESETS[cfg.get("model_preset", "paper")]()
    overrides = {}
    if cfg.get("depth") is not None:
        overrides["depth"] = cfg["depth"]
    if cfg.get("embed_dim") is not None:
        overrides["embed_dim"] = cfg["embed_dim"]
    if cfg.get("dropout") is not None:
        overrides["dropout_p"] = cfg["dropout"]
    return dataclasses.replace(base, **overrides) if overrides else base


def _train_config(cfg: dict) -> TrainConfig:
    base = TrainConfig(seed=cfg["seed"])
    overrides = {}
    for flag, field_name in (
        ("lr", "lr"),
        ("weight_decay", "weight_decay"),
        ("batch_size", "batch_size"),
        ("max_epochs", "max_epochs"),
        ("patience", "patience"),
    ):
        if cfg.get(flag) is not None:
            overrides[field_name] = cfg[flag]
    return dataclasses.replace(base, **overrides) if overrides else base


def _builder(cfg: dict):
    model_cfg = _model_config(cfg)
    if cfg.get("model", "bivtc") == "vit":
        return functools.partial(
            _build_vit_seeded, model_cfg, SnifferId(cfg.get("sniffer", 1))
        )
    return functools.partial(_build_bivtc_seeded, model_cfg)


def _build_bivtc_seeded(model_cfg: ModelConfig, seed: int):
    return build_bivtc(model_cfg, make_rng(seed))


def _build_vit_seeded(model_cfg: ModelConfig, sniffer: SnifferId, seed: int):
    return build_vit(model_cfg, make_rng(seed), sniffer=sniffer)


def make_run_dir(out_root: Path, command: str, seed: int) -> Path:
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    run_dir = out_root / f"{command}-{stamp}-seed{seed}"
    counter = 1
    while run_dir.exists():  # accidental overwrite must be impossible
        run_dir = out_root / f"{command}-{stamp}-seed{seed}-{counter}"
        counter += 1
    run_dir.mkdir()
    (out_root / "latest").write_text(run_dir.name + "\n")
    return run_dir


def _echo_config(run_dir: Path, cfg: dict) -> None:
    write_json(run_dir / "config.json", cfg)


def _require(cfg: dict, key: str) -> str:
    value = cfg.get(key)
    if not value:
        raise ValueError(f"--{key.replace('_', '-')} is required (flag or config file)")
    return value


def _load_samples(cfg: dict) -> list[Sample]:
    return read_dataset(Path(_require(cfg, "dataset")))


def _group_by(samples, key):
    groups: dict = {}
    for s in samples:
        groups.setdefault(key(s), []).append(s)
    return groups


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_synth(cfg: dict, run_dir: Path) -> None:
    dest = Path(cfg.get("dataset") or run_dir / "dataset")
    if cfg.get("complementary"):
        samples = gen_complementary_dataset(
            count_per_class=cfg.get("count", 20),
            noise_std=cfg.get("noise_std", GenSpec(1).noise_std),
            seed=cfg["seed"],
        )
    else:
        spec_kwargs: dict = {}
        if cfg.get("synth_spec"):
            spec_kwargs.update(json.loads(Path(cfg["synth_spec"]).read_text()))
        if cfg.get("count") is not None:
            spec_kwargs["count_per_class"] = cfg["count"]
        if cfg.get("velocity"):
            spec_kwargs["velocities"] = tuple(Velocity[v] for v in cfg["velocity"])
        if cfg.get("location"):
            spec_kwargs["locations"] = tuple(Location[v] for v in cfg["location"])
        if cfg.get("noise_std") is not None:
            spec_kwargs["noise_std"] = cfg["noise_std"]
        spec_kwargs.setdefault("count_per_class", 20)
        spec_kwargs["seed"] = cfg["seed"]
        if "velocities" in spec_kwargs and isinstance(spec_kwargs["velocities"], list):
            spec_kwargs["velocities"] = tuple(Velocity[v] for v in spec_kwargs["velocities"])
        if "locations" in spec_kwargs and isinstance(spec_kwargs["locations"], list):
            spec_kwargs["locations"] = tuple(Location[v] for v in spec_kwargs["locations"])
        samples = gen_dataset(GenSpec(**spec_kwargs))
    write_dataset(dest, samples)
    write_json(run_dir / "summary.json", {"samples": len(samples), "dataset": str(dest)})
    print(f"wrote {len(samples)} samples to {dest}")


def _cmd_import(cfg: dict, run_dir: Path) -> None:
    result = import_external(Path(_require(cfg, "dataset")), cfg.get("adapter", "identity"))
    write_dataset(Path(_require(cfg, "dest")), result.samples)
    write_json(
        run_dir / "import.json",
        {
            "imported": len(result.samples),
            "failures": [{"key": f.key, "error": f.error} for f in result.failures],
        },
    )
    print(f"imported {len(result.samples)} samples, {len(result.failures)} failures")


def _cmd_preprocess(cfg: dict, run_dir: Path) -> None:
    samples = _load_samples(cfg)
    rate = cfg.get("rate")
    if rate is not None:
        samples = [
            Sample(
                downsample(s.sniffer1, rate),
                downsample(s.sniffer2, rate),
                s.meta,
                s.sample_id,
            )
            for s in samples
        ]
    dest = Path(_require(cfg, "dest"))
    mask_indices = None
    if cfg.get("mask"):
        mask_indices = list(SubcarrierMask.load(Path(cfg["mask"])).keep)
    write_dataset(dest, samples)
    echo = {"samples": len(samples), "rate": rate, "mask": mask_indices, "dest": str(dest)}
    write_json(run_dir / "preprocess.json", echo)
    # reproducibility: the applied configuration lives next to the manifest too
    write_json(dest / "preprocessing.json", echo)
    print(f"wrote {len(samples)} preprocessed samples to {cfg['dest']}")


def _cmd_train(cfg: dict, run_dir: Path) -> None:
    samples = _load_samples(cfg)
    split = SplitSpec(folds=1)
    from .protocols import mc_splits

    train, val, test = mc_splits(samples, split, cfg["seed"])[0]
    builder = _builder(cfg)
    model = builder(cfg["seed"])
    result = fit(model, train, val, _train_config(cfg))
    save_classifier(run_dir / "classifier", result.classifier)
    write_history_csv(run_dir / "curves.csv", result.history)
    metrics = evaluate(result.classifier, test)
    write_json(
        run_dir / "metrics.json",
        {
            "best_epoch": result.best_epoch,
            "stopped_epoch": result.stopped_epoch,
            "test": metrics.to_dict(),
        },
    )
    print(f"test accuracy {metrics.accuracy:.4f} (best epoch {result.best_epoch})")


def _cmd_eval(cfg: dict, run_dir: Path) -> None:
    samples = _load_samples(cfg)
    clf = load_classifier(Path(_require(cfg, "classifier")))
    metrics = evaluate(clf, samples)
    write_json(run_dir / "metrics.json", metrics.to_dict())
    print(f"accuracy {metrics.accuracy:.4f} on {len(samples)} samples")


def _cmd_cv(cfg: dict, run_dir: Path) -> None:
    samples = _load_samples(cfg)
    report = cv_protocol(
        samples,
        _builder(cfg),
        _train_config(cfg),
        SplitSpec(folds=cfg.get("folds", 5)),
        seed=cfg["seed"],
        workers=cfg.get("workers", 1),
    )
    report.write(run_dir)
    summary = report.summary()
    write_csv(
        run_dir / "summary_table.csv",
        ["model", "precision", "recall", "f1", "accuracy"],
        [
            [
                cfg.get("model", "bivtc"),
                *(
                    f"{100 * summary[k]['mean']:.2f}+-{100 * summary[k]['std']:.2f}"
                    for k in ("macro_precision", "macro_recall", "macro_f1", "accuracy")
                ),
            ]
        ],
    )
    print(f"cv accuracy {summary['accuracy']['mean']:.4f} +- {summary['accuracy']['std']:.4f}")


def _cmd_lovo(cfg: dict, run_dir: Path) -> None:
    samples = _load_samples(cfg)
    by_velocity = _group_by(samples, lambda s: s.meta.velocity)
    result = lovo_protocol(by_velocity, _builder(cfg), _train_config(cfg), seed=cfg["seed"])
    result.write(run_dir)
    for arm in result.arms:
        print(f"held out {arm.held_out.name}: accuracy {arm.metrics.accuracy:.4f}")


def _cmd_sweep_freq(cfg: dict, run_dir: Path) -> None:
    samples = _load_samples(cfg)
    rates = tuple(cfg.get("rate") or SWEEP_RATES)
    present = sorted({s.meta.velocity for s in samples})
    result = freq_sweep(
        samples,
        _builder(cfg),
        _train_config(cfg),
        rates=rates,
        velocities=tuple(present),
        seed=cfg["seed"],
        split_spec=SplitSpec(folds=cfg.get("folds", 1)),
        workers=cfg.get("workers", 1),
    )
    result.write(run_dir)
    print(f"sweep grid written for rates {rates}")


def _cmd_sweep_loc(cfg: dict, run_dir: Path) -> None:
    samples = _load_samples(cfg)
    by_location = _group_by(samples, lambda s: s.meta.location)
    result = location_protocol(by_location, _builder(cfg), _train_config(cfg), seed=cfg["seed"])
    result.write(run_dir)
    for name, acc in result.same_location.items():
        print(f"{name} same-location accuracy {acc:.4f}")


def _cmd_report(cfg: dict, run_dir: Path) -> None:
    src = Path(_require(cfg, "run"))
    rendered = []
    for json_file in sorted(src.glob("*.json")):
        payload = json.loads(json_file.read_text())
        if not isinstance(payload, dict):
            continue
        if isinstance(payload.get("grid"), dict):
            grid = payload["grid"]
            rates = sorted(grid, key=lambda r: -int(r))
            vnames = sorted(grid[rates[0]])
            write_csv(
                run_dir / "sweep_grid.csv",
                ["rate_hz"] + vnames,
                [[r] + [round(100 * grid[r][v], 2) for v in vnames] for r in rates],
            )
            bar_chart_svg(
                run_dir / "sweep_grid.svg",
                "accuracy by sampling rate",
                [f"{r} Hz" for r in rates],
                {v: [100 * grid[r][v] for r in rates] for v in vnames},
            )
            rendered.append(json_file.name)
        elif isinstance(payload.get("folds"), list):
            rows = [
                [i, m["accuracy"], m["macro_precision"], m["macro_recall"], m["macro_f1"]]
                for i, m in enumerate(payload["folds"])
            ]
            write_csv(
                run_dir / "folds.csv",
                ["fold", "accuracy", "precision", "recall", "f1"],
                rows,
            )
            rendered.append(json_file.name)
    write_json(run_dir / "report.json", {"rendered": rendered, "source": str(src)})
    print(f"re-rendered {len(rendered)} report(s) from {src}")


_COMMANDS = {
    "synth": _cmd_synth,
    "import": _cmd_import,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "cv": _cmd_cv,
    "lovo": _cmd_lovo,
    "sweep-freq": _cmd_sweep_freq,
    "sweep-loc": _cmd_sweep_loc,
    "report": _cmd_report,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = resolve_config(args)
    try:
        _train_config(cfg)  # surfaces invalid optimization settings early
        run_dir = make_run_dir(Path(cfg.get("out", "runs")), cfg["command"], cfg["seed"])
        _echo_config(run_dir, cfg)
    except (ValueError, ArmsenseError, OSError, json.JSONDecodeError) as exc:
        return _fail(1, str(exc))
    log = run_dir / "run.log"
    try:
        _COMMANDS[cfg["command"]](cfg, run_dir)
        log.write_text(f"{cfg['command']}: ok\n")
    except (ValueError, ArmsenseError, FileNotFoundError, json.JSONDecodeError) as exc:
        log.write_text(f"{cfg['command']}: validation error: {exc}\n")
        return _fail(1, str(exc))
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        log.write_text(f"{cfg['command']}: runtime failure: {type(exc).__name__}: {exc}\n")
        return _fail(2, f"{type(exc).__name__}: {exc}")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
