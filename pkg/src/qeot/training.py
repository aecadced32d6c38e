"""Training loop: deterministic batch schedule, JSONL step log,
checkpointing with optimizer state, and exact resume."""

from __future__ import annotations

import json
import os

import numpy as np

from .checkpoint import load_records, save_records
from .config import RunConfig
from .data import SyntheticSample
from .errors import DataError
from .loss import LossBreakdown, train_step
from .model import QEOTModel
from .optim import AdamW
from .rng import Stream, fold

META_STEP = "meta/step"


def batch_indices(seed: int, step: int, n_train: int, batch_size: int) -> list[int]:
    """Sample indices for one step; a pure function of (seed, step) so a
    resumed run replays the identical schedule."""
    stream = Stream(fold(seed, "batch", step))
    return [stream.below(n_train) for _ in range(batch_size)]


def save_checkpoint(path: str, model: QEOTModel, optimizer: AdamW, step: int) -> None:
    records = model.to_records()
    records.update(optimizer.state_records())
    records[META_STEP] = np.array(float(step))
    save_records(path, records)


def load_checkpoint(path: str, model: QEOTModel, optimizer: AdamW | None = None) -> int:
    """Restore parameters (and moments when an optimizer is given);
    returns the step count stored in the checkpoint."""
    records = load_records(path)
    model.load_records({k: v for k, v in records.items()
                        if not k.startswith("opt/") and k != META_STEP})
    if optimizer is not None:
        optimizer.load_state_records(records)
    return int(records.get(META_STEP, np.array(0.0)))


def _mean_breakdown(breakdowns: list[LossBreakdown]) -> dict[str, float]:
    return {
        "total": float(np.mean([b.total for b in breakdowns])),
        "ent": float(np.mean([b.ent for b in breakdowns])),
        "rel": float(np.mean([b.rel for b in breakdowns])),
        "l1": float(np.mean([b.l1 for b in breakdowns])),
        "giou": float(np.mean([b.giou for b in breakdowns])),
    }


def run_training(cfg: RunConfig, train_samples: list[SyntheticSample], run_dir: str,
                 resume: str | None = None, log_every: int = 100,
                 echo=None) -> tuple[QEOTModel, AdamW, str]:
    """Train for cfg.steps steps; returns (model, optimizer, log path).

    Writes train_log.jsonl (one JSON line per step), periodic
    checkpoint-<step>.ckpt files and checkpoint-final.ckpt under run_dir.
    """
    if not train_samples:
        raise DataError("training dataset is empty")
    os.makedirs(run_dir, exist_ok=True)
    model = QEOTModel(cfg.model_config(), seed=cfg.seed)
    optimizer = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    start_step = 0
    if resume is not None:
        start_step = load_checkpoint(resume, model, optimizer)

    weights = cfg.loss_weights()
    log_path = os.path.join(run_dir, "train_log.jsonl")
    mode = "a" if start_step > 0 else "w"
    last: dict[str, float] = {}
    with open(log_path, mode, encoding="utf-8") as log:
        for step in range(start_step, cfg.steps):
            batch = [train_samples[i] for i in
                     batch_indices(cfg.seed, step, len(train_samples), cfg.batch_size)]
            breakdowns = train_step(model, batch, weights, optimizer,
                                    empty_class_weight=cfg.empty_class_weight)
            last = _mean_breakdown(breakdowns)
            log.write(json.dumps({"step": step, **last, "lr": cfg.lr}) + "\n")
            if echo is not None and (step % log_every == 0 or step + 1 == cfg.steps):
                echo(f"step {step}: total {last['total']:.4f} "
                     f"(ent {last['ent']:.4f} rel {last['rel']:.4f} "
                     f"l1 {last['l1']:.4f} giou {last['giou']:.4f})")
            if cfg.checkpoint_every > 0 and (step + 1) % cfg.checkpoint_every == 0 \
                    and step + 1 < cfg.steps:
                save_checkpoint(os.path.join(run_dir, f"checkpoint-{step + 1:06d}.ckpt"),
                                model, optimizer, step + 1)
    save_checkpoint(os.path.join(run_dir, "checkpoint-final.ckpt"), model, optimizer, cfg.steps)
    return model, optimizer, log_path
