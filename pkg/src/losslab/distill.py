"""Knowledge distillation: pure soft-target training of a student against a frozen teacher."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import schedules
from .nn import HARD, NetworkSpec, SoftTarget, forward, init_params, log_softmax, softmax


def soften(logits: np.ndarray, temperature: float) -> np.ndarray:
    """``softmax(logits / T)`` row-wise."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    return softmax(np.asarray(logits, dtype=np.float64) / temperature)


def kd_loss(student_logits: np.ndarray, teacher_logits: np.ndarray, temperature: float) -> float:
    """Batch-mean cross-entropy of the softened student against the softened teacher."""
    if student_logits.shape != teacher_logits.shape:
        raise ValueError(f"class counts differ: {student_logits.shape} vs {teacher_logits.shape}")
    p = soften(teacher_logits, temperature)
    logq = log_softmax(np.asarray(student_logits, dtype=np.float64) / temperature)
    return float(-(p * logq).sum(axis=1).mean())


def kd_loss_grad(student_logits: np.ndarray, teacher_logits: np.ndarray, temperature: float) -> np.ndarray:
    """Gradient of :func:`kd_loss` with respect to the student logits."""
    n = student_logits.shape[0]
    return (soften(student_logits, temperature) - soften(teacher_logits, temperature)) / (temperature * n)


def kl_to_teacher(student_logits: np.ndarray, teacher_logits: np.ndarray, temperature: float = 1.0) -> float:
    """Mean KL(teacher || student) of the softened distributions."""
    logp = log_softmax(teacher_logits / temperature)
    logq = log_softmax(student_logits / temperature)
    return float((np.exp(logp) * (logp - logq)).sum(axis=1).mean())


@dataclass
class DistillConfig:
    teacher_net: NetworkSpec
    teacher_params: np.ndarray
    student_net: NetworkSpec
    temperature: float = 5.0
    schedule: schedules.Schedule = field(default_factory=lambda: schedules.Constant(0.01))
    optimizer: dict = field(default_factory=lambda: {"kind": "sgd-momentum", "momentum": 0.9, "weight_decay": 5e-4})
    epochs: int = 10
    batch_size: int = 50
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        t_shape, s_shape = self.teacher_net.input_shape, self.student_net.input_shape
        if t_shape != s_shape or self.teacher_net.n_classes != self.student_net.n_classes:
            raise ValueError(
                f"teacher/student mismatch: inputs {t_shape} vs {s_shape}, "
                f"classes {self.teacher_net.n_classes} vs {self.student_net.n_classes}"
            )


@dataclass
class DistillReport:
    epochs: list[int]
    student_train_loss: list[float]
    student_val_acc: list[float]
    baseline_train_loss: list[float]
    baseline_val_acc: list[float]
    student_kl_to_teacher: float
    baseline_kl_to_teacher: float
    temperature: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DistillResult:
    student: np.ndarray
    baseline: np.ndarray
    init: np.ndarray
    report: DistillReport


def teacher_logits(config: DistillConfig, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    parts = [forward(config.teacher_net, config.teacher_params, x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(parts)


def student_logits(net: NetworkSpec, w: np.ndarray, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    return np.concatenate([forward(net, w, x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)])


def distill_train(config: DistillConfig, data) -> DistillResult:
    """Train a distilled student and a hard-label baseline from one init and one batch order."""
    from .harness.train import fit

    teacher_before = config.teacher_params.copy()
    w0 = init_params(config.student_net, config.seed)

    def soft_targets(xb, yb):
        return soften(forward(config.teacher_net, config.teacher_params, xb)[0], config.temperature)

    common = dict(
        schedule=config.schedule,
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed,
        optimizer=config.optimizer,
        augment=config.augment,
    )
    student = fit(config.student_net, w0, data, targets=soft_targets, loss_kind=SoftTarget(config.temperature), **common)
    baseline = fit(config.student_net, w0, data, loss_kind=HARD, **common)
    if not np.array_equal(teacher_before, config.teacher_params):
        raise RuntimeError("teacher parameters changed during distillation")

    t_val = teacher_logits(config, data.x_val)
    report = DistillReport(
        epochs=[int(r["epoch"]) for r in student.log],
        student_train_loss=[r["train_loss"] for r in student.log],
        student_val_acc=[r["val_acc"] for r in student.log],
        baseline_train_loss=[r["train_loss"] for r in baseline.log],
        baseline_val_acc=[r["val_acc"] for r in baseline.log],
        student_kl_to_teacher=kl_to_teacher(student_logits(config.student_net, student.params, data.x_val), t_val),
        baseline_kl_to_teacher=kl_to_teacher(student_logits(config.student_net, baseline.params, data.x_val), t_val),
        temperature=config.temperature,
    )
    return DistillResult(student.params, baseline.params, w0, report)
