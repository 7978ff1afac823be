"""Deterministic minibatch training loop and the ``train_run`` entry point."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import schedules
from ..checkpoint import save_checkpoint
from ..nn import (
    HARD,
    FreezeMask,
    NetworkSpec,
    NonFiniteLossError,
    OptimizerState,
    dense_stack_layers,
    evaluate,
    init_params,
    loss_and_grad,
    optimizer_step,
)
from .config import RunConfig, dump_json
from .data import Dataset, augment_batch, epoch_batches, make_dataset

LOG_FIELDS = ("epoch", "iteration", "lr", "train_loss", "train_acc", "val_loss", "val_acc")


@dataclass
class FreezeWindow:
    mask: np.ndarray
    start_iter: int
    end_iter: int


@dataclass
class FitResult:
    params: np.ndarray
    checkpoints: dict[str, np.ndarray] = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)
    diverged: bool = False
    iterations: int = 0


def _metrics(net, w, data: Dataset) -> dict:
    tl, ta = evaluate(net, w, data.x_train, data.y_train)
    vl, va = evaluate(net, w, data.x_val, data.y_val)
    return {"train_loss": tl, "train_acc": ta, "val_loss": vl, "val_acc": va}


def fit(
    net: NetworkSpec,
    w0: np.ndarray,
    data: Dataset,
    *,
    schedule: schedules.Schedule,
    epochs: int,
    batch_size: int,
    seed: int,
    optimizer: dict | None = None,
    augment: bool = False,
    freeze: list[FreezeWindow] = (),
    checkpoint_epochs: list[int] = (),
    checkpoint_iters: list[int] = (),
    targets: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    loss_kind=HARD,
    log_every_epoch: bool = True,
) -> FitResult:
    """Train from ``w0``; batch order and augmentation depend only on ``seed``.

    ``targets(xb, yb)`` maps a (possibly augmented) batch to the labels fed to
    the loss (hard labels by default). Checkpoints are keyed ``"epoch-N"``
    (parameters after N full epochs) and ``"iter-N"`` (after N updates).
    A non-finite loss halts training with ``diverged=True``.
    """
    opt = dict(optimizer or {"kind": "sgd-momentum", "momentum": 0.9, "weight_decay": 0.0})
    lr_scale = float(opt.pop("lr_scale", 1.0))
    w = np.array(w0, dtype=np.float64)
    state = OptimizerState(size=w.size, **opt)
    n = len(data.x_train)
    ipe = math.ceil(n / batch_size)
    ck_epochs, ck_iters = set(checkpoint_epochs), set(checkpoint_iters)
    res = FitResult(w)

    def record(epoch, it, lr):
        row = {"epoch": epoch, "iteration": it, "lr": lr, **_metrics(net, w, data)}
        res.log.append(row)

    if 0 in ck_epochs:
        res.checkpoints["epoch-0"] = w.copy()
    if 0 in ck_iters:
        res.checkpoints["iter-0"] = w.copy()
    record(0, 0, schedules.lr_at(schedule, 0, 0, ipe))
    g = 0
    for epoch in range(epochs):
        aug_rng = np.random.default_rng([seed, epoch, 1])
        for k, idx in enumerate(epoch_batches(n, batch_size, seed, epoch)):
            xb, yb = data.x_train[idx], data.y_train[idx]
            if augment:
                xb = augment_batch(xb, aug_rng)
            labels = yb if targets is None else targets(xb, yb)
            lr = lr_scale * schedules.lr_at(schedule, epoch, k, ipe)
            try:
                _, grad = loss_and_grad(net, w, xb, labels, loss_kind)
            except NonFiniteLossError:
                res.diverged = True
                break
            mask = None
            for fw in freeze:
                if fw.start_iter <= g < fw.end_iter:
                    mask = fw.mask if mask is None else (mask | fw.mask)
            w = optimizer_step(state, w, grad, lr, mask)
            g += 1
            if not np.all(np.isfinite(w)):
                res.diverged = True
                break
            if g in ck_iters:
                res.checkpoints[f"iter-{g}"] = w.copy()
                record(epoch + (k + 1) / ipe, g, lr)
        if res.diverged:
            record(epoch + 1, g, math.nan)
            break
        if epoch + 1 in ck_epochs:
            res.checkpoints[f"epoch-{epoch + 1}"] = w.copy()
        if log_every_epoch and not (g in ck_iters and k == ipe - 1):
            record(epoch + 1, g, lr)
    res.params = w
    res.iterations = g
    return res


@dataclass
class RunResult:
    config: RunConfig
    net: NetworkSpec
    data: Dataset
    fit: FitResult

    @property
    def checkpoints(self) -> dict[str, np.ndarray]:
        return self.fit.checkpoints

    @property
    def log(self) -> list[dict]:
        return self.fit.log

    @property
    def diverged(self) -> bool:
        return self.fit.diverged

    @property
    def final(self) -> np.ndarray:
        return self.fit.params


def freeze_windows(config: RunConfig, net: NetworkSpec) -> list[FreezeWindow]:
    layout = net.layout()
    out = []
    for f in config.freeze:
        layers = dense_stack_layers(net) if f["layers"] == "dense-stack" else f["layers"]
        mask = FreezeMask.of_layers(layout, layers).vector(layout)
        out.append(FreezeWindow(mask, int(f.get("start_iter", 0)), int(f["end_iter"])))
    return out


def train_run(config: RunConfig, out_dir=None, data: Dataset | None = None) -> RunResult:
    """Run one configured training job, optionally writing its artifacts to ``out_dir``.

    Artifacts: ``config.json`` (fully resolved), ``metrics.csv``, and one
    ``.llab`` checkpoint per saved epoch / iteration. A diverged run keeps its
    partial artifacts and writes ``DIVERGED``.
    """
    net = config.net()
    data = data if data is not None else make_dataset(config.dataset)
    w0 = init_params(net, config.seed, config.init_scale)
    ck_epochs = sorted(set(config.resolved_checkpoint_epochs()) | {0, config.epochs})
    result = fit(
        net,
        w0,
        data,
        schedule=config.schedule_spec(),
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed,
        optimizer=config.optimizer,
        augment=config.augment,
        freeze=freeze_windows(config, net),
        checkpoint_epochs=ck_epochs,
        checkpoint_iters=config.checkpoint_iters,
    )
    run = RunResult(config, net, data, result)
    if out_dir is not None:
        write_run(run, out_dir)
    return run


def write_log_csv(rows: list[dict], path, fields=LOG_FIELDS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in fields})
    return path


def write_run(run: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(run.config.resolved(), out / "config.json")
    write_log_csv(run.log, out / "metrics.csv")
    for label, w in run.checkpoints.items():
        kind, n = label.split("-")
        meta = {
            "seed": run.config.seed,
            kind: int(n),
            "run": run.config.name,
            "schedule": run.config.schedule,
            "dataset": run.config.dataset,
        }
        save_checkpoint(out / f"{label}.llab", run.net, w, meta)
    flag = out / "DIVERGED"
    if run.diverged:
        flag.write_text("non-finite loss; training halted\n")
    elif flag.exists():
        flag.unlink()
    return out
