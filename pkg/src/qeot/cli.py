"""Command-line entry point.

Subcommands: gen-data, train, eval, inspect. Every run-config field is
exposed as a flag; precedence is defaults < config file (--config) <
flags. Outputs land under --out-dir/--run-dir, defaulting to
$QEOT_RUN_DIR (or ./qeot_runs), with a config echo written next to
them. Exit codes: 0 success, 1 runtime failure (e.g. NaN loss), 2
invalid input or configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import RunConfig, apply_overrides, load_config
from .data import generate, load_jsonl, save_jsonl
from .errors import DataError, InvalidInputError, QeotError
from .evaluation import evaluate_dataset
from .figures import save_heatmap, save_loss_curves, save_metrics_bar
from .loss import joint_loss
from .matcher import hungarian, match_cost
from .model import QEOTModel
from .optim import AdamW
from .training import load_checkpoint, run_training


def _output_root() -> str:
    return os.environ.get("QEOT_RUN_DIR", os.path.join(".", "qeot_runs"))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file (flags override it)")
    for f in dataclasses.fields(RunConfig):
        types = {"int": int, "float": float}
        ftype = types.get(f.type, f.type if isinstance(f.type, type) else str)
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=ftype,
                            default=None, help=f"override {f.name} (default {f.default})")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)}
    return apply_overrides(cfg, overrides)


def _write_echo(cfg: RunConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as f:
        f.write(cfg.to_text())


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    out_dir = args.out_dir or os.path.join(_output_root(), "data")
    train, test = generate(cfg.dataset_spec())
    _write_echo(cfg, out_dir)
    save_jsonl(train, os.path.join(out_dir, "train.jsonl"))
    save_jsonl(test, os.path.join(out_dir, "test.jsonl"))
    n_triples = sum(len(s.gold) for s in train) + sum(len(s.gold) for s in test)
    print(f"wrote {len(train)} train / {len(test)} test samples "
          f"({n_triples} triples) to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    data_dir = args.data_dir or os.path.join(_output_root(), "data")
    run_dir = args.run_dir or os.path.join(_output_root(), "run")
    train_path = os.path.join(data_dir, "train.jsonl")
    if not os.path.exists(train_path):
        raise DataError(f"no training data at {train_path} (run gen-data first)")
    train_samples = load_jsonl(train_path)
    _write_echo(cfg, run_dir)
    model, optimizer, log_path = run_training(
        cfg, train_samples, run_dir, resume=args.resume, echo=print)
    save_loss_curves(log_path, os.path.join(run_dir, "loss_curves.png"))
    with open(log_path, "r", encoding="utf-8") as f:
        final = None
        for line in f:
            if line.strip():
                final = line.strip()
    print(final)
    print(f"checkpoint: {os.path.join(run_dir, 'checkpoint-final.ckpt')}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    model = QEOTModel(cfg.model_config(), seed=cfg.seed)
    load_checkpoint(args.checkpoint, model)
    samples = load_jsonl(args.data)
    if args.per_sample:
        os.makedirs(os.path.dirname(os.path.abspath(args.per_sample)), exist_ok=True)
    report = evaluate_dataset(model, samples, iou_threshold=cfg.iou_threshold,
                              per_sample_path=args.per_sample)
    print(report.to_json())
    if args.out_dir:
        _write_echo(cfg, args.out_dir)
        with open(os.path.join(args.out_dir, "metrics.json"), "w", encoding="utf-8") as f:
            f.write(report.to_json() + "\n")
        save_metrics_bar(report, os.path.join(args.out_dir, "metrics.png"))
    return 0


def cmd_inspect(args) -> int:
    cfg = _resolve_config(args)
    model = QEOTModel(cfg.model_config(), seed=cfg.seed)
    load_checkpoint(args.checkpoint, model)
    samples = load_jsonl(args.data)
    by_id = {s.id: s for s in samples}
    if args.sample_id not in by_id:
        raise DataError(f"sample id '{args.sample_id}' not found in {args.data}")
    sample = by_id[args.sample_id]
    out_dir = args.out_dir or os.path.join(_output_root(), "inspect", args.sample_id)
    _write_echo(cfg, out_dir)

    maps = model.inspect(sample)
    named = {
        "selective_text_img": ("selective attention: text self-sim over image values",
                               "image position", "token"),
        "selective_img_text": ("selective attention: image self-sim over text values",
                               "token", "image position"),
        "cross_reading_text_img": ("cross reading: token query vs image key",
                                   "image position", "token"),
        "cross_reading_img_text": ("cross reading: image query vs token key",
                                   "token", "image position"),
    }
    for name, (title, xlabel, ylabel) in named.items():
        matrix = maps[name]
        np.savetxt(os.path.join(out_dir, f"{name}.csv"), matrix, delimiter=",")
        save_heatmap(matrix, os.path.join(out_dir, f"{name}.png"), title, xlabel, ylabel)

    cross = maps["decoder_cross_attention"][-1]  # last layer, head-averaged (Q, L)
    np.savetxt(os.path.join(out_dir, "decoder_cross_attention.csv"), cross, delimiter=",")
    save_heatmap(cross, os.path.join(out_dir, "decoder_cross_attention.png"),
                 "decoder cross-attention (last layer)", "memory position", "query")

    gates = np.stack([maps["gate_text"].mean(axis=1), maps["gate_img"].mean(axis=1)], axis=1)
    header = "gate_text_mean,gate_img_mean"
    np.savetxt(os.path.join(out_dir, "gate_summary.csv"), gates, delimiter=",",
               header=header, comments="")
    save_heatmap(gates.T, os.path.join(out_dir, "gate_summary.png"),
                 "mean gate per token", "token", "branch")

    # decoded prediction and its match against gold, for orientation
    with_output, _ = model.forward(sample)
    cost = match_cost(with_output, sample.gold, cfg.loss_weights()) \
        if len(sample.gold) <= cfg.Q else None
    lb = joint_loss(with_output, sample.gold, cfg.loss_weights())
    summary = {
        "id": sample.id,
        "matched_pairs": lb.matched_pairs,
        "loss": {"total": lb.total, "ent": lb.ent, "rel": lb.rel,
                 "l1": lb.l1, "giou": lb.giou},
    }
    if cost is not None:
        summary["match_cost"] = np.asarray(cost).tolist()
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    print(f"wrote inspection dumps for {sample.id} to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qeot",
        description="Query-based entity-object triple extraction on synthetic data. "
                    "Output root defaults to $QEOT_RUN_DIR.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--out-dir", help="where train.jsonl/test.jsonl go")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--data-dir", help="directory holding train.jsonl")
    p.add_argument("--run-dir", help="output directory for logs and checkpoints")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset JSONL to score")
    p.add_argument("--per-sample", help="optional per-sample JSONL dump path")
    p.add_argument("--out-dir", help="also write metrics.json and metrics.png here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("inspect", help="dump attention/gate maps for one sample")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset JSONL holding the sample")
    p.add_argument("--sample-id", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QeotError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
