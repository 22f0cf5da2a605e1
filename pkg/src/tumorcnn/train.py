"""Fold training, evaluation and checkpointing."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import checkpoint, data, metrics, nn, reports
from . import rng as rngmod
from .config import ExperimentConfig
from .cv import FoldPlan, make_folds
from .errors import ContractError, TumorCNNError
from .optim import AdamW
from .tensor import dtype_for

log = logging.getLogger(__name__)


def build_model(cfg: ExperimentConfig, classes: int) -> nn.Model:
    spec = nn.build_proposed_cnn((168, 168, 3), classes, slope=cfg.leaky_slope, dropout=cfg.dropout)
    return nn.Model(spec, dtype_for(cfg.precision)).init(cfg.seed)


def make_optimizer(cfg: ExperimentConfig) -> AdamW:
    return AdamW(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay)


def policy_for(cfg: ExperimentConfig) -> data.AugmentPolicy:
    return data.AugmentPolicy(enabled=cfg.augment)


def train_epoch(model: nn.Model, opt: AdamW, source, subset: Sequence[int], cfg: ExperimentConfig,
                epoch: int, fold: int = 0,
                on_step: Optional[Callable[[int, data.Batch, float], None]] = None) -> list[float]:
    """One pass over ``subset``; returns the per-batch losses."""
    losses = []
    stream = data.batches(source, subset, cfg.batch_size, epoch, cfg.seed, train=True,
                          policy=policy_for(cfg), dtype=model.dtype.type)
    for step, batch in enumerate(stream):
        model.zero_grads()
        model.forward(batch.images, train=True, gen=rngmod.stream(rngmod.DROPOUT, cfg.seed, fold, epoch, step))
        loss = model.backward(batch.labels)
        opt.step(model.params, model.grads)
        losses.append(loss)
        if on_step is not None:
            on_step(step, batch, loss)
    return losses


def predict(model: nn.Model, source, subset: Sequence[int], batch_size: int = 32) -> np.ndarray:
    out = [model.forward(b.images) for b in
           data.batches(source, subset, batch_size, train=False, dtype=model.dtype.type)]
    return np.concatenate(out, axis=0)


def evaluate(model: nn.Model, source, subset: Sequence[int], batch_size: int = 32) -> metrics.MetricsReport:
    probs = predict(model, source, subset, batch_size)
    truth = np.asarray(source.labels)[np.asarray(subset, dtype=np.int64)]
    return metrics.evaluate(truth, probs, source.class_names)


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    model: nn.Model
    optimizer: AdamW
    config: ExperimentConfig
    class_names: list[str]
    fold: int
    epoch: int


def save_checkpoint(path: str | Path, model: nn.Model, opt: AdamW, cfg: ExperimentConfig,
                    class_names: Sequence[str], fold: int, epoch: int) -> None:
    tensors = dict(model.params)
    tensors.update(opt.state_tensors())
    tensors["meta.fold"] = np.array(fold, dtype=np.float32)
    tensors["meta.epoch"] = np.array(epoch, dtype=np.float32)
    tensors["meta.config"] = checkpoint.encode_text(cfg.to_ini())
    tensors["meta.classes"] = checkpoint.encode_text("\n".join(class_names))
    checkpoint.write_tensors(path, tensors)


def load_checkpoint(path: str | Path) -> Checkpoint:
    tensors = checkpoint.read_tensors(path)
    cfg = ExperimentConfig.from_ini(checkpoint.decode_text(tensors["meta.config"]))
    names = checkpoint.decode_text(tensors["meta.classes"]).split("\n")
    model = build_model(cfg, len(names))
    for key, p in model.params.items():
        if key not in tensors or tensors[key].shape != p.shape:
            raise ContractError(f"checkpoint {path} lacks a compatible tensor {key!r}")
        p[...] = tensors[key]
    opt = make_optimizer(cfg)
    opt.load_state(tensors, model.dtype)
    return Checkpoint(model, opt, cfg, names, int(tensors["meta.fold"]), int(tensors["meta.epoch"]))


# ---------------------------------------------------------------------------
# Experiment


def load_source(cfg: ExperimentConfig) -> data.DatasetIndex:
    index = data.scan_dataset(cfg.data)
    if cfg.subsample and cfg.subsample < len(index):
        skipped = index.skipped
        index = index.subsample(cfg.subsample, cfg.seed)
        index.skipped = skipped
    return index


def plan_for(cfg: ExperimentConfig, source) -> FoldPlan:
    return make_folds(source.labels, cfg.folds, cfg.seed, cfg.strategy, source.class_names)


def run_fold(cfg: ExperimentConfig, source, plan: FoldPlan, fold: int, fold_dir: str | Path) -> metrics.MetricsReport:
    """Train on the fold's training split, evaluate on its test split, write everything."""
    fold_dir = Path(fold_dir)
    fold_dir.mkdir(parents=True, exist_ok=True)
    train_idx, test_idx = plan.train(fold), plan.test(fold)
    model = build_model(cfg, len(source.class_names))
    opt = make_optimizer(cfg)
    with open(fold_dir / "loss.log", "w") as loss_log, \
            open(fold_dir / "steps.log", "w") as steps_log, \
            open(fold_dir / "order.log", "w") as order_log:
        loss_log.write("epoch,mean_train_loss\n")
        steps_log.write("epoch,step,loss\n")
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            order: list[int] = []

            def on_step(step, batch, loss):
                order.extend(batch.indices.tolist())
                steps_log.write(f"{epoch},{step},{loss!r}\n")

            losses = train_epoch(model, opt, source, train_idx, cfg, epoch, fold, on_step)
            mean = float(np.mean(losses))
            loss_log.write(f"{epoch},{mean!r}\n")
            order_log.write(f"{epoch}:{','.join(map(str, order))}\n")
            for fh in (loss_log, steps_log, order_log):
                fh.flush()
            log.info("fold %d epoch %d: mean loss %.4f (%.1fs)", fold, epoch, mean, time.perf_counter() - t0)
    save_checkpoint(fold_dir / "checkpoint.mcn", model, opt, cfg, source.class_names, fold, cfg.epochs)
    report = evaluate(model, source, test_idx, cfg.batch_size)
    reports.write_fold_reports(report, fold, fold_dir)
    log.info("fold %d: test accuracy %.4f, macro F1 %.4f", fold, report.accuracy, report.macro_f1)
    return report


@dataclass
class RunResult:
    plan: FoldPlan
    reports: dict[int, metrics.MetricsReport] = field(default_factory=dict)
    failed: dict[int, str] = field(default_factory=dict)


def fold_dir(out: str | Path, fold: int) -> Path:
    return Path(out) / f"fold_{fold:02d}"


def run_experiment(cfg: ExperimentConfig, source=None) -> RunResult:
    """Cross-validated training; a failing fold is recorded and the run continues."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if source is None:
        source = load_source(cfg)
    cfg.save(out / "config.ini")
    if isinstance(source, data.DatasetIndex):
        data.write_skip_report(source, out / "skipped.txt")
    plan = plan_for(cfg, source)
    plan.save(out / "folds.json")
    result = RunResult(plan)
    n_folds = cfg.max_folds or cfg.folds
    for fold in range(n_folds):
        try:
            result.reports[fold] = run_fold(cfg, source, plan, fold, fold_dir(out, fold))
        except (TumorCNNError, ArithmeticError, ValueError, OSError) as exc:
            log.error("fold %d failed: %s", fold, exc)
            result.failed[fold] = str(exc)
    if result.reports:
        reports.write_summary(metrics.aggregate([result.reports[f] for f in sorted(result.reports)]), out)
    return result
