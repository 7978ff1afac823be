"""Run configuration: a flat, JSON-compatible description of one training run."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .. import schedules
from ..nn import NetworkSpec
from .networks import resolve_network


@dataclass
class RunConfig:
    dataset: dict
    network: Any  # preset name or NetworkSpec dict
    schedule: dict
    optimizer: dict = field(default_factory=lambda: {"kind": "sgd-momentum", "momentum": 0.9, "weight_decay": 5e-4})
    batch_size: int = 100
    epochs: int = 10
    seed: int = 0
    init_scale: float = 1.0
    augment: bool = False
    checkpoint_epochs: list = field(default_factory=list)  # ints, or "restarts"
    checkpoint_iters: list = field(default_factory=list)
    freeze: list = field(default_factory=list)  # [{"layers": "dense-stack" | [i, ...], "start_iter": a, "end_iter": b}]
    name: str = "run"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        net = self.net()
        sched = self.schedule_spec()
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be > 0")
        for e in self.checkpoint_epochs:
            if e != "restarts" and not (isinstance(e, int) and 0 <= e <= self.epochs):
                raise ValueError(f"checkpoint epoch {e!r} outside [0, {self.epochs}]")
        if "restarts" in self.checkpoint_epochs and not isinstance(sched, schedules.CosineRestarts):
            raise ValueError("'restarts' checkpoints need a cosine_restarts schedule")
        for f in self.freeze:
            if f["layers"] != "dense-stack" and any(not 0 <= i < len(net.layers) for i in f["layers"]):
                raise ValueError(f"freeze layers {f['layers']} out of range")
        if self.optimizer.get("kind") not in ("sgd-momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer.get('kind')!r}")

    def net(self) -> NetworkSpec:
        return resolve_network(self.network)

    def schedule_spec(self) -> schedules.Schedule:
        return schedules.from_dict(self.schedule)

    def resolved_checkpoint_epochs(self) -> list[int]:
        out = set()
        for e in self.checkpoint_epochs:
            if e == "restarts":
                out.update(int(r) for r in schedules.restart_epochs(self.schedule_spec(), self.epochs))
            else:
                out.add(int(e))
        return sorted(out)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def resolved(self) -> dict:
        """Fully expanded config (network spelled out, restart epochs listed)."""
        d = self.to_dict()
        d["network"] = self.net().to_dict()
        d["checkpoint_epochs"] = self.resolved_checkpoint_epochs()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update(copy.deepcopy(changes))
        return RunConfig.from_dict(d)


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text()))


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def config_diff(a: RunConfig, b: RunConfig, ignore: tuple[str, ...] = ("name",)) -> list[str]:
    """Dotted paths of every leaf that differs between two configs."""
    out: list[str] = []

    def walk(x, y, prefix):
        if isinstance(x, dict) and isinstance(y, dict):
            for k in sorted(set(x) | set(y)):
                walk(x.get(k), y.get(k), f"{prefix}.{k}" if prefix else k)
        elif x != y:
            out.append(prefix)

    da, db = a.to_dict(), b.to_dict()
    for k in ignore:
        da.pop(k, None)
        db.pop(k, None)
    walk(da, db, "")
    return out


def changed_knobs(a: RunConfig, b: RunConfig) -> list[str]:
    """Top-level config keys that differ (``optimizer.kind`` and ``optimizer.lr_scale`` are one knob)."""
    return sorted({p.split(".", 1)[0] for p in config_diff(a, b)})
