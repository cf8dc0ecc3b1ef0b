"""Command-line pipeline driver.

One declarative config (YAML) holds every hyperparameter; flags override
individual keys. All artifacts of a configuration land in a run directory
named by the hash of the effective config, so identical configs resume in
place and different configs never collide.

Exit codes: 0 ok, 2 usage error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np
import yaml

from . import pipeline
from .align import save_transform
from .errors import DataError, NumericError
from .gcn import GcnModel
from .params import load_checkpoint, save_checkpoint
from .sgt import SgtModel
from .spectral import save_embedding
from .synthetic import make_dataset

DEFAULTS = {
    "seed": 0,
    "out_root": "runs",
    "run_dir": None,
    "manifest": None,
    "reference": None,
    # synthetic cohort
    "n_subjects": 30,
    "subdivisions": 3,
    "amplitude": 0.05,
    "parcel_count": 32,
    # embedding
    "k": 3,
    "eig_tol": 1e-8,
    # oracle alignment
    "max_iter": 100,
    "align_tol": 1e-9,
    # transform network
    "sgt_epochs": 200,
    "sgt_lr": 1e-6,
    "sgt_optimizer": "gd",
    "batch_size": 4,
    "n_subsample": 1000,
    # parcellation network
    "gcn_epochs": 60,
    "gcn_lr": 1e-3,
    "lam": 1.0,
    "sigma0": 100.0,
    "classes": 32,
    "strategy": "pretrained",
    # studies
    "sizes": [50, 100, 500, 1000],
    "bench_max_iter": 100,
}

COMMANDS = ("generate", "embed", "align-oracle", "train-sgt", "train-e2e",
            "parcellate", "evaluate", "bench", "subsample-study", "table1")


def load_config(path: str | None, overrides: list[str]) -> dict:
    config = dict(DEFAULTS)
    if path:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise DataError(f"{path}: config must be a mapping")
        for key in loaded:
            if key not in DEFAULTS:
                raise DataError(f"{path}: unknown config key {key!r}")
        config.update(loaded)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        config[key] = yaml.safe_load(value)
    return config


def config_hash(config: dict) -> str:
    hashed = {k: v for k, v in config.items() if k != "run_dir"}
    blob = json.dumps(hashed, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def run_dir_of(config: dict) -> str:
    """Directory for this configuration's artifacts.

    Named by the config hash so identical configs resume in place; an
    explicit run_dir key pins the directory instead, letting commands that
    legitimately vary a key (say, evaluating one trained run under several
    strategies) share artifacts.
    """
    path = config["run_dir"] or os.path.join(config["out_root"],
                                             config_hash(config))
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "config.yaml"), "w") as fh:
        yaml.safe_dump(config, fh, sort_keys=True)
    return path


class UsageError(Exception):
    pass


def write_csv(path: str, rows: list[dict]) -> None:
    if not rows:
        raise DataError(f"no rows to write to {path}")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _need_manifest(config: dict) -> str:
    manifest = config.get("manifest")
    if not manifest:
        raise UsageError("this command needs manifest=... (config or --set)")
    if not os.path.exists(manifest):
        raise DataError(f"manifest not found: {manifest}")
    return manifest


def _subjects(config: dict, with_targets: bool):
    subjects = pipeline.load_subjects(_need_manifest(config), k=config["k"],
                                      tol=config["eig_tol"],
                                      seed=config["seed"])
    reference = pipeline.pick_reference(subjects, config.get("reference"))
    if with_targets:
        pipeline.compute_oracle_targets(subjects, reference,
                                        max_iter=config["max_iter"],
                                        tol=config["align_tol"])
    return subjects, reference


def _load_sgt(path: str) -> SgtModel:
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    return SgtModel(load_checkpoint(path))


def cmd_generate(config: dict, run_dir: str) -> None:
    out = os.path.join(run_dir, "dataset")
    records = make_dataset(config["n_subjects"], config["seed"], out,
                           subdivisions=config["subdivisions"],
                           amplitude=config["amplitude"],
                           parcel_count=config["parcel_count"])
    print(f"wrote {len(records)} subjects to {out}/manifest.txt")


def cmd_embed(config: dict, run_dir: str) -> None:
    subjects, _ = _subjects(config, with_targets=False)
    out = os.path.join(run_dir, "embeddings")
    os.makedirs(out, exist_ok=True)
    for s in subjects:
        save_embedding(s.embedding,
                       os.path.join(out, f"{s.record.subject_id}.emb"))
    print(f"wrote {len(subjects)} embeddings to {out}")


def cmd_align_oracle(config: dict, run_dir: str) -> None:
    subjects, reference = _subjects(config, with_targets=True)
    out = os.path.join(run_dir, "transforms")
    os.makedirs(out, exist_ok=True)
    rows = []
    for s in subjects:
        save_transform(s.alignment,
                       os.path.join(out, f"{s.record.subject_id}.t3"))
        rows.append({
            "subject": s.record.subject_id,
            "residual": s.alignment.residual,
            "iterations": s.alignment.iterations,
        })
    write_csv(os.path.join(run_dir, "oracle_alignment.csv"), rows)
    print(f"reference {reference.record.subject_id}; "
          f"transforms in {out}, report in {run_dir}/oracle_alignment.csv")


def cmd_train_sgt(config: dict, run_dir: str) -> None:
    subjects, _ = _subjects(config, with_targets=True)
    checkpoint = os.path.join(run_dir, "sgt.ckpt")
    pipeline.train_aligner(subjects, seed=config["seed"],
                           epochs=config["sgt_epochs"], lr=config["sgt_lr"],
                           n_subsample=config["n_subsample"],
                           batch_size=config["batch_size"],
                           optimizer=config["sgt_optimizer"],
                           log_path=os.path.join(run_dir, "sgt_training.csv"),
                           checkpoint_path=checkpoint)
    print(f"checkpoint {checkpoint}, log {run_dir}/sgt_training.csv")


def cmd_train_e2e(config: dict, run_dir: str) -> None:
    subjects, _ = _subjects(config, with_targets=True)
    sgt_path = os.path.join(run_dir, "sgt.ckpt")
    if os.path.exists(sgt_path):
        sgt_model = _load_sgt(sgt_path)
    else:
        sgt_model = pipeline.train_aligner(
            subjects, seed=config["seed"], epochs=config["sgt_epochs"],
            lr=config["sgt_lr"], n_subsample=config["n_subsample"],
            batch_size=config["batch_size"],
            optimizer=config["sgt_optimizer"])
    logs = []
    gcn_model, sgt_model, rows = pipeline.train_parcellation(
        subjects, "e2e", sgt_model=sgt_model, gcn_seed=config["seed"],
        epochs=config["gcn_epochs"], lr=config["gcn_lr"],
        sgt_lr=config["sgt_lr"], lam=config["lam"], seed=config["seed"],
        n_subsample=config["n_subsample"], sigma0=config["sigma0"],
        classes=config["classes"], log_hook=logs.append)
    save_checkpoint(gcn_model.store, os.path.join(run_dir, "gcn.ckpt"))
    save_checkpoint(sgt_model.store, os.path.join(run_dir, "sgt_e2e.ckpt"))
    write_csv(os.path.join(run_dir, "e2e_training.csv"), rows)
    print(f"checkpoints {run_dir}/gcn.ckpt, {run_dir}/sgt_e2e.ckpt")


def cmd_parcellate(config: dict, run_dir: str) -> None:
    strategy = config["strategy"]
    with_targets = strategy == "oracle"
    subjects, _ = _subjects(config, with_targets=with_targets)
    gcn_path = os.path.join(run_dir, "gcn.ckpt")
    if not os.path.exists(gcn_path):
        raise DataError(f"checkpoint not found: {gcn_path} (run train-e2e)")
    gcn_model = GcnModel(load_checkpoint(gcn_path))
    sgt_model = None
    if strategy in ("pretrained", "e2e"):
        name = "sgt_e2e.ckpt" if strategy == "e2e" else "sgt.ckpt"
        sgt_model = _load_sgt(os.path.join(run_dir, name))
    out = os.path.join(run_dir, "parcellations")
    os.makedirs(out, exist_ok=True)
    from .mesh import save_labels
    from .gcn import gcn_forward, predict_labels
    for s in subjects:
        coords = pipeline._strategy_coords(s, strategy, sgt_model,
                                           config["n_subsample"],
                                           config["seed"] + 1)
        probs = gcn_forward(gcn_model, coords, s.feature, s.src, s.dst).data
        save_labels(predict_labels(probs),
                    os.path.join(out, f"{s.record.subject_id}.labels.txt"))
    print(f"wrote {len(subjects)} labelings to {out}")


def cmd_evaluate(config: dict, run_dir: str) -> None:
    strategy = config["strategy"]
    subjects, _ = _subjects(config, with_targets=strategy == "oracle")
    gcn_path = os.path.join(run_dir, "gcn.ckpt")
    if not os.path.exists(gcn_path):
        raise DataError(f"checkpoint not found: {gcn_path} (run train-e2e)")
    gcn_model = GcnModel(load_checkpoint(gcn_path))
    sgt_model = None
    if strategy in ("pretrained", "e2e"):
        name = "sgt_e2e.ckpt" if strategy == "e2e" else "sgt.ckpt"
        sgt_model = _load_sgt(os.path.join(run_dir, name))
    rows = pipeline.evaluate_split(pipeline.split_of(subjects, "test"),
                                   gcn_model, strategy, sgt_model,
                                   config["n_subsample"],
                                   classes=config["classes"])
    write_csv(os.path.join(run_dir, "evaluation.csv"), rows)
    print(f"report {run_dir}/evaluation.csv")


def cmd_bench(config: dict, run_dir: str) -> None:
    subjects, reference = _subjects(config, with_targets=False)
    sgt_path = os.path.join(run_dir, "sgt.ckpt")
    sgt_model = _load_sgt(sgt_path)
    rows = pipeline.bench_alignment(subjects, reference, sgt_model,
                                    n_subsample=config["n_subsample"],
                                    seed=config["seed"] + 99,
                                    max_iter=config["bench_max_iter"],
                                    tol=config["align_tol"])
    oracle = float(np.median([r["oracle_ms"] for r in rows]))
    learned = float(np.median([r["sgt_ms"] for r in rows]))
    rows.append({
        "subject": "MEDIAN",
        "oracle_ms": oracle,
        "sgt_ms": learned,
        "speedup": oracle / learned,
    })
    write_csv(os.path.join(run_dir, "bench.csv"), rows)
    print(f"median speedup {oracle / learned:.1f}x; report {run_dir}/bench.csv")


def cmd_subsample_study(config: dict, run_dir: str) -> None:
    subjects, _ = _subjects(config, with_targets=True)
    rows = pipeline.subsample_study(subjects, list(config["sizes"]),
                                    seed=config["seed"],
                                    epochs=config["sgt_epochs"],
                                    lr=config["sgt_lr"],
                                    batch_size=config["batch_size"])
    write_csv(os.path.join(run_dir, "subsample_study.csv"), rows)
    print(f"report {run_dir}/subsample_study.csv")


def cmd_table1(config: dict, run_dir: str) -> None:
    subjects, _ = _subjects(config, with_targets=True)
    rows = pipeline.run_table1(subjects, seed=config["seed"],
                               sgt_epochs=config["sgt_epochs"],
                               gcn_epochs=config["gcn_epochs"],
                               lr=config["gcn_lr"], sgt_lr=config["sgt_lr"],
                               lam=config["lam"],
                               n_subsample=config["n_subsample"],
                               sigma0=config["sigma0"],
                               classes=config["classes"])
    write_csv(os.path.join(run_dir, "table1.csv"), rows)
    print(f"report {run_dir}/table1.csv")


HANDLERS = {
    "generate": cmd_generate,
    "embed": cmd_embed,
    "align-oracle": cmd_align_oracle,
    "train-sgt": cmd_train_sgt,
    "train-e2e": cmd_train_e2e,
    "parcellate": cmd_parcellate,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "subsample-study": cmd_subsample_study,
    "table1": cmd_table1,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectralign",
        description="Spectral embedding, alignment, and parcellation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="YAML config file (defaults for missing keys)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--manifest", default=None,
                       help="shorthand for --set manifest=...")
        p.add_argument("--seed", type=int, default=None,
                       help="shorthand for --set seed=...")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        config = load_config(args.config, args.overrides)
        if args.manifest is not None:
            config["manifest"] = args.manifest
        if args.seed is not None:
            config["seed"] = args.seed
        run_dir = run_dir_of(config)
        HANDLERS[args.command](config, run_dir)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
