"""Training loop: batching, optimization, metrics stream, checkpoints.

All randomness flows from one seed: numpy SeedSequence(seed) is split into
(model init, batch shuffling, dropout) streams, in that order. With
``deterministic=True`` the loop runs single-threaded and zeroes the
wall-clock column of the metrics stream so two runs with the same seed
produce byte-identical CSV files and checkpoints.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import truncate_partition
from .errors import NumericsError, ValidationError
from .graphs import Graph, HopPartition
from .layer import build_hop_masks
from .model import (Batch, Model, ModelConfig, build_model, forward_model,
                    loss_and_metric, metric_direction)
from .optim import Adam, ParamStore, save_checkpoint

METRICS_HEADER = ("epoch", "split", "loss", "metric", "lr", "seconds")


def make_batch(graphs: list[Graph], parts: list[HopPartition], k_max: int) -> Batch:
    """Merge graphs into one disjoint union with block-diagonal masks."""
    if len(graphs) != len(parts):
        raise ValidationError("graphs and partitions differ in length")
    parts = [truncate_partition(p, k_max) for p in parts]
    masks = build_hop_masks(parts)
    node_ids = node_feat = None
    if graphs[0].node_ids is not None:
        node_ids = np.concatenate([g.node_ids for g in graphs])
    else:
        node_feat = np.concatenate([g.node_feat for g in graphs], axis=0)
    graph_labels = None
    if graphs[0].graph_label is not None:
        graph_labels = np.asarray([g.graph_label for g in graphs])
    node_labels = None
    if graphs[0].node_labels is not None:
        node_labels = np.concatenate([g.node_labels for g in graphs])
    return Batch(masks=masks, node_ids=node_ids, node_feat=node_feat,
                 graph_labels=graph_labels, node_labels=node_labels)


def split_dataset(n: int, seed: int, train_frac: float = 0.8,
                  val_frac: float = 0.1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic train/val/test index split."""
    order = np.random.default_rng(np.random.SeedSequence([seed, 0xD5])).permutation(n)
    n_train = int(round(train_frac * n))
    n_val = int(round(val_frac * n))
    if n_train == 0 or n_val == 0 or n_train + n_val >= n:
        n_train = max(1, n - 2)
        n_val = 1
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


@dataclass
class TrainRun:
    """Result of one training run."""

    cfg: ModelConfig
    model: Model
    opt: Adam
    metrics: list[dict] = field(default_factory=list)
    best_params: ParamStore | None = None
    best_val_metric: float | None = None
    best_epoch: int = -1
    param_count: int = 0
    max_eig_per_epoch: list = field(default_factory=list)

    def rows(self, split: str) -> list[dict]:
        return [m for m in self.metrics if m["split"] == split]


def _batches(index: np.ndarray, batch_size: int, rng: np.random.Generator | None):
    order = index if rng is None else rng.permutation(index)
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def evaluate(model: Model, graphs: list[Graph], parts: list[HopPartition],
             index: np.ndarray, batch_size: int) -> tuple[float, float]:
    """Loss and metric over a split, batched in fixed order, eval mode."""
    cfg = model.cfg
    total_loss = 0.0
    weighted_metric = 0.0
    n = 0
    for idx in _batches(index, batch_size, rng=None):
        batch = make_batch([graphs[i] for i in idx], [parts[i] for i in idx], cfg.k_hops)
        pred = forward_model(model, batch, train=False)
        loss, metric = loss_and_metric(cfg, pred, batch)
        w = len(idx)
        total_loss += float(loss.data) * w
        weighted_metric += metric * w
        n += w
    return total_loss / n, weighted_metric / n


def train(cfg: ModelConfig, graphs: list[Graph], parts: list[HopPartition],
          seed: int, splits=None, out_dir=None, deterministic: bool = False,
          stop_at_train_metric: float | None = None,
          log=print) -> TrainRun:
    """Train a model; returns the run with the best-validation checkpoint.

    ``splits`` may supply explicit (train, val, test) index arrays; otherwise
    a seeded 80/10/10 split is used. ``stop_at_train_metric`` stops early once
    the train-split metric reaches the given value (at or above for accuracy,
    at or below for MAE).
    """
    if len(graphs) != len(parts):
        raise ValidationError("graphs and partitions differ in length")
    seq = np.random.SeedSequence(seed)
    _, shuffle_seed, dropout_seed = seq.spawn(3)
    model = build_model(cfg, seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    if splits is None:
        splits = split_dataset(len(graphs), seed)
    train_idx, val_idx, test_idx = splits
    n_batches = int(np.ceil(len(train_idx) / cfg.batch_size))
    total_steps = cfg.epochs * n_batches
    opt = Adam(model.store, peak_lr=cfg.lr, weight_decay=cfg.weight_decay,
               total_steps=total_steps)
    direction = metric_direction(cfg)
    run = TrainRun(cfg=cfg, model=model, opt=opt, param_count=model.store.num_params())
    log(f"training {cfg.preset or 'model'}: {run.param_count} params, "
        f"{len(train_idx)}/{len(val_idx)}/{len(test_idx)} split, "
        f"{total_steps} steps (warmup {opt.warmup_steps})")

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        for idx in _batches(train_idx, cfg.batch_size, shuffle_rng):
            batch = make_batch([graphs[i] for i in idx], [parts[i] for i in idx],
                               cfg.k_hops)
            model.store.zero_grads()
            pred = forward_model(model, batch, train=True, rng=dropout_rng)
            loss, _ = loss_and_metric(cfg, pred, batch)
            if not np.isfinite(loss.data):
                raise NumericsError(
                    f"loss diverged at epoch {epoch} "
                    f"(max |lambda| = {model.max_eigenvalue_magnitude():.6f})"
                )
            loss.backward()
            opt.step()
        max_mag = model.max_eigenvalue_magnitude()
        run.max_eig_per_epoch.append(max_mag)
        if not max_mag < 1.0:
            raise NumericsError(f"stability violated: max |lambda| = {max_mag}")
        elapsed = 0.0 if deterministic else time.perf_counter() - t0
        lr_now = opt.current_lr()
        train_loss, train_metric = evaluate(model, graphs, parts, train_idx, cfg.batch_size)
        run.metrics.append({"epoch": epoch, "split": "train", "loss": train_loss,
                            "metric": train_metric, "lr": lr_now, "seconds": elapsed})
        if len(val_idx):
            val_loss, val_metric = evaluate(model, graphs, parts, val_idx, cfg.batch_size)
            run.metrics.append({"epoch": epoch, "split": "val", "loss": val_loss,
                                "metric": val_metric, "lr": lr_now, "seconds": 0.0})
            better = (run.best_val_metric is None
                      or direction * val_metric > direction * run.best_val_metric)
            if better:
                run.best_val_metric = val_metric
                run.best_epoch = epoch
                run.best_params = model.store.clone()
        if epoch == 1 or epoch % 25 == 0 or epoch == cfg.epochs:
            log(f"  epoch {epoch}: train loss {train_loss:.4f} metric {train_metric:.4f}")
        if (stop_at_train_metric is not None
                and direction * train_metric >= direction * stop_at_train_metric):
            log(f"  early stop at epoch {epoch}: train metric {train_metric:.4f}")
            break

    if run.best_params is None:
        run.best_params = model.store.clone()
        run.best_epoch = len(run.rows("train"))
    if len(test_idx):
        best_model = Model(cfg=cfg, store=model.store, layer_params=model.layer_params)
        current = model.store.clone()
        model.store.copy_from(run.best_params)
        test_loss, test_metric = evaluate(best_model, graphs, parts, test_idx,
                                          cfg.batch_size)
        model.store.copy_from(current)
        run.metrics.append({"epoch": run.best_epoch, "split": "test",
                            "loss": test_loss, "metric": test_metric,
                            "lr": 0.0, "seconds": 0.0})
    if out_dir is not None:
        write_metrics_csv(out_dir / "metrics.csv", run.metrics)
        save_checkpoint(out_dir / "best.ckpt", run.best_params)
        save_checkpoint(out_dir / "last.ckpt", model.store, opt)
    return run


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([
                r["epoch"], r["split"], f"{r['loss']:.10g}", f"{r['metric']:.10g}",
                f"{r['lr']:.10g}", f"{r['seconds']:.3f}",
            ])


def read_metrics_csv(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            out.append({"epoch": int(row["epoch"]), "split": row["split"],
                        "loss": float(row["loss"]), "metric": float(row["metric"]),
                        "lr": float(row["lr"]), "seconds": float(row["seconds"])})
    return out
