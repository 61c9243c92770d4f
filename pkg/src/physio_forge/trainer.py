"""Multi-task SGD training: batch schedules, extra-data filters and the epoch loop."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .autodiff.tensor import backward
from .data import DatasetHandle, InputBank, TASK_CODES, load_inputs
from .errors import NumericalError, ParameterError, ScheduleError
from .models.checkpoint import save_checkpoint
from .models.config import ArchitectureConfig
from .models.network import JointModel

STRATEGIES = ("random", "simultaneous", "alternating", "task_by_task")
FILTERS = ("both", "bonafide_only", "attack_only")


@dataclass(frozen=True)
class ScheduleSpec:
    """How each epoch's minibatches are composed from the two tasks' data.

    ``u_spoof``/``u_forgery`` are the per-task step counts used by the
    alternating and task-by-task strategies; ``None`` means
    ``ceil(|D_task| / batch_size)``. ``primary_task`` names the task whose
    data is kept whole when ``extra_data_filter`` trims the other task.
    """

    strategy: str = "random"
    batch_size: int = 64
    seed: int = 0
    extra_data_filter: str = "both"
    primary_task: Optional[str] = None
    u_spoof: Optional[int] = None
    u_forgery: Optional[int] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"unknown sampling strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.extra_data_filter not in FILTERS:
            raise ParameterError(f"unknown extra-data filter {self.extra_data_filter!r}; expected one of {FILTERS}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.strategy == "simultaneous" and self.batch_size % 2:
            raise ParameterError(f"simultaneous sampling needs an even batch_size, got {self.batch_size}")
        if self.primary_task is not None and self.primary_task not in TASK_CODES:
            raise ParameterError(f"unknown primary task {self.primary_task!r}")
        if self.extra_data_filter != "both" and self.primary_task is None:
            raise ParameterError("an extra-data filter needs a primary task")
        for u in (self.u_spoof, self.u_forgery):
            if u is not None and u < 0:
                raise ParameterError("step counts must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    epochs: int = 30
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int = 20
    seed: int = 0
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 < self.lr_decay_epoch <= self.epochs:
            raise ParameterError(f"lr_decay_epoch must lie in [1, {self.epochs}], got {self.lr_decay_epoch}")
        if not self.lr_decay_factor > 0:
            raise ParameterError("lr_decay_factor must be positive")


@dataclass(frozen=True)
class TaskBatch:
    """One step's samples.

    ``index`` addresses the merged pool, spoof samples first, then forgery.
    """

    index: np.ndarray
    tasks: tuple[str, ...]

    def mix(self) -> str:
        n_s = sum(t == "spoof" for t in self.tasks)
        return f"S:{n_s}/F:{len(self.tasks) - n_s}"


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Learning rate for a 1-based epoch; one decay step at ``lr_decay_epoch``."""
    if not 1 <= epoch <= config.epochs:
        raise ParameterError(f"epoch {epoch} outside [1, {config.epochs}]")
    return config.lr * (config.lr_decay_factor if epoch >= config.lr_decay_epoch else 1.0)


def apply_extra_data_filter(own: DatasetHandle, other: DatasetHandle, data_filter: str) -> DatasetHandle:
    """Merge the primary task's data with (a filtered view of) the other task's."""
    if data_filter not in FILTERS:
        raise ParameterError(f"unknown extra-data filter {data_filter!r}")
    if data_filter == "bonafide_only":
        other = other.filter(label="bonafide")
    elif data_filter == "attack_only":
        other = other.filter(label="attack")
    return DatasetHandle.merge([own, other])


def _stream(n: int, rng: np.random.Generator, offset: int) -> Iterator[int]:
    """Endless shuffled indices ``offset .. offset + n - 1``; reshuffles on wraparound."""
    while True:
        yield from (offset + rng.permutation(n)).tolist()


def _take(stream: Iterator[int], k: int) -> list[int]:
    return [next(stream) for _ in range(k)]


def _steps(n: int, batch: int) -> int:
    return math.ceil(n / batch)


def make_schedule(spec: ScheduleSpec, d_spoof: DatasetHandle, d_forgery: DatasetHandle, epoch: int) -> list[TaskBatch]:
    """Deterministic batch descriptors for one epoch, given ``(spec.seed, epoch)``.

    A dataset may be empty only under random sampling (single-task training).
    """
    n_s, n_f = len(d_spoof), len(d_forgery)
    B = spec.batch_size
    if n_s + n_f == 0:
        raise ScheduleError("both datasets are empty")
    if spec.strategy != "random" and (n_s == 0 or n_f == 0):
        empty = "spoof" if n_s == 0 else "forgery"
        raise ScheduleError(f"{spec.strategy} sampling needs both tasks, but the {empty} dataset is empty")
    tags = np.array(["spoof"] * n_s + ["forgery"] * n_f)

    def batch(idx) -> TaskBatch:
        idx = np.asarray(idx, dtype=np.int64)
        return TaskBatch(idx, tuple(tags[idx].tolist()))

    if spec.strategy == "random":
        rng = np.random.default_rng([spec.seed, epoch])
        perm = rng.permutation(n_s + n_f)
        chunks = [perm[i : i + B] for i in range(0, perm.size, B)]
        if len(chunks) > 1 and chunks[-1].size == 1:
            # batch norm needs two samples; fold a lone remainder into the previous batch
            chunks[-2] = np.concatenate(chunks[-2:])
            chunks.pop()
        return [batch(c) for c in chunks]

    s_stream = _stream(n_s, np.random.default_rng([spec.seed, epoch, 0]), 0)
    f_stream = _stream(n_f, np.random.default_rng([spec.seed, epoch, 1]), n_s)
    if spec.strategy == "simultaneous":
        half = B // 2
        return [batch(_take(s_stream, half) + _take(f_stream, half)) for _ in range(_steps(n_s + n_f, B))]

    u_s = _steps(n_s, B) if spec.u_spoof is None else spec.u_spoof
    u_f = _steps(n_f, B) if spec.u_forgery is None else spec.u_forgery
    if spec.strategy == "alternating":
        order = ["spoof" if i % 2 == 0 else "forgery" for i in range(u_s + u_f)]
    else:
        order = ["spoof"] * u_s + ["forgery"] * u_f
    return [batch(_take(s_stream if t == "spoof" else f_stream, B)) for t in order]


@dataclass
class Batch:
    """Materialized inputs for one step."""

    inputs: dict[str, np.ndarray]
    labels: np.ndarray
    tasks: np.ndarray
    ids: list[str]


def sgd_step(model, batch: Batch, lr: float, step: Optional[tuple[int, int]] = None) -> float:
    """Single backward of the overall loss, then ``p <- p - lr * grad``; grads are cleared afterwards."""
    if lr < 0:
        raise ParameterError(f"lr must be non-negative, got {lr}")
    out = model.forward(batch.inputs, batch.tasks, training=True)
    loss = model.loss(out, batch.labels, batch.tasks)
    value = loss.item()
    if not np.isfinite(value):
        where = f"epoch {step[0]} step {step[1]}" if step else "step"
        raise NumericalError(f"non-finite loss {value} at {where}; batch ids: {', '.join(batch.ids)}")
    backward(loss)
    for p in model.parameters():
        if p.grad is not None:
            p.data -= lr * p.grad
    model.zero_grad()
    return value


def model_tasks(d_spoof: DatasetHandle, d_forgery: DatasetHandle) -> tuple[str, ...]:
    return tuple(t for t, d in (("spoof", d_spoof), ("forgery", d_forgery)) if len(d))


def branch_shapes(arch: ArchitectureConfig) -> dict[str, tuple[int, int]]:
    shapes = {}
    if arch.modality in ("appearance", "both"):
        shapes["app"] = arch.app_input
    if arch.modality in ("rppg", "both"):
        shapes["mst"] = arch.mst_input
        shapes["wav"] = arch.wav_input
    return shapes


@dataclass
class TrainResult:
    model: JointModel
    losses: list[float]  # mean loss per epoch
    steps: int


def train(
    config: TrainConfig,
    d_spoof: DatasetHandle,
    d_forgery: DatasetHandle,
    checkpoint: Optional[str | os.PathLike] = None,
    log: Optional[str | os.PathLike] = None,
    config_text: str = "",
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Run ``config.epochs`` epochs of the configured schedule.

    Passing one empty dataset trains a single-task (separate) model. The
    extra-data filter trims the non-primary task's data before scheduling.
    ``log`` receives one ``epoch step S:n/F:m loss lr`` line per step, and a
    companion ``<log>.batches`` file lists each step's sample ids. The
    checkpoint is written only after the last epoch completes.
    """
    sched = config.schedule
    if sched.extra_data_filter != "both" and len(d_spoof) and len(d_forgery):
        own, other = (d_spoof, d_forgery) if sched.primary_task == "spoof" else (d_forgery, d_spoof)
        merged = apply_extra_data_filter(own, other, sched.extra_data_filter)
        d_spoof, d_forgery = merged.filter(task="spoof"), merged.filter(task="forgery")
    tasks = model_tasks(d_spoof, d_forgery)
    if not tasks:
        raise ScheduleError("no training data")
    arch = config.architecture
    model = JointModel(arch, tasks=tasks, seed=config.seed)
    pool = DatasetHandle.merge([d_spoof, d_forgery])
    bank: InputBank = load_inputs(pool, branch_shapes(arch))
    labels = bank.labels
    ids = [r.id for r in bank.records]

    log_fh = batch_fh = None
    if log is not None:
        log = Path(log)
        log_fh = open(log, "w", encoding="utf-8")
        batch_fh = open(f"{log}.batches", "w", encoding="utf-8")
        log_fh.write("# epoch step task_mix loss lr\n")
        batch_fh.write("# epoch step ids\n")
    losses, total = [], 0
    try:
        for epoch in range(1, config.epochs + 1):
            lr = lr_at(epoch, config)
            epoch_losses = []
            for step, tb in enumerate(make_schedule(sched, d_spoof, d_forgery, epoch), start=1):
                batch = Batch(bank.select(tb.index), labels[tb.index], np.asarray(tb.tasks), [ids[i] for i in tb.index])
                value = sgd_step(model, batch, lr, (epoch, step))
                epoch_losses.append(value)
                total += 1
                if log_fh:
                    log_fh.write(f"{epoch} {step} {tb.mix()} {value:.6f} {lr:.6g}\n")
                    batch_fh.write(f"{epoch} {step} {','.join(batch.ids)}\n")
            losses.append(float(np.mean(epoch_losses)))
            if on_epoch:
                on_epoch(epoch, losses[-1])
    finally:
        if log_fh:
            log_fh.close()
            batch_fh.close()
    if checkpoint is not None:
        save_checkpoint(checkpoint, config_text, model.state_dict())
    return TrainResult(model, losses, total)


def read_log(path: str | os.PathLike) -> list[dict]:
    """Parse a training log and its ``.batches`` companion into per-step records."""
    path = Path(path)
    steps = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#") or not line.strip():
            continue
        epoch, step, mix, loss, lr = line.split()
        s, f = (int(part.split(":")[1]) for part in mix.split("/"))
        steps.append({"epoch": int(epoch), "step": int(step), "S": s, "F": f, "loss": float(loss), "lr": float(lr)})
    companion = Path(f"{path}.batches")
    if companion.is_file():
        rows = [l for l in companion.read_text(encoding="utf-8").splitlines() if l and not l.startswith("#")]
        for rec, row in zip(steps, rows):
            rec["ids"] = row.split(" ", 2)[2].split(",")
    return steps


def task_sequence(batches: Sequence[TaskBatch]) -> list[str]:
    """Per-batch task code (``S``, ``F`` or ``M`` for mixed)."""
    out = []
    for b in batches:
        kinds = set(b.tasks)
        out.append(TASK_CODES[kinds.pop()] if len(kinds) == 1 else "M")
    return out
