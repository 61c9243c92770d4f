"""Binary detection metrics (AUC, EER, TPR@FPR) and the intra/cross evaluation protocol.

Scores are bonafide likelihoods: higher means more likely bonafide. Labels are
1 for bonafide and 0 for attack.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import MetricUndefinedError, ParameterError

FPR_TARGETS = (0.10, 0.01)


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray
    dataset: str = ""
    domain: str = ""

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        labels = np.asarray(self.labels).reshape(-1)
        if scores.shape != labels.shape:
            raise ParameterError(f"{scores.size} scores but {labels.size} labels")
        if not np.all((labels == 0) | (labels == 1)):
            raise ParameterError("labels must be 0 (attack) or 1 (bonafide)")
        if not np.all(np.isfinite(scores)):
            raise ParameterError("scores must be finite")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted (bonafide, attack) scores; raises if either class is missing."""
        pos = np.sort(self.scores[self.labels == 1])
        neg = np.sort(self.scores[self.labels == 0])
        if pos.size == 0 or neg.size == 0:
            name = f" for {self.dataset}" if self.dataset else ""
            raise MetricUndefinedError(f"need both bonafide and attack samples{name} ({pos.size} vs {neg.size})")
        return pos, neg


def _score_set(s, labels=None) -> ScoreSet:
    if isinstance(s, ScoreSet):
        return s
    if labels is None:
        raise ParameterError("labels are required when scores are given as an array")
    return ScoreSet(s, labels)


def auc(s, labels=None) -> float:
    """Probability that a random bonafide outscores a random attack, ties counted 1/2."""
    pos, neg = _score_set(s, labels).split()
    below = np.searchsorted(neg, pos, side="left")
    at_or_below = np.searchsorted(neg, pos, side="right")
    # twice the Mann-Whitney U, kept integral until the final division
    u2 = int(np.sum(below + at_or_below))
    return u2 / (2 * pos.size * neg.size)


def _counts_at(pos: np.ndarray, neg: np.ndarray, thresholds: np.ndarray):
    """Per threshold: attacks scoring >= th and bonafides scoring < th."""
    n_fa = neg.size - np.searchsorted(neg, thresholds, side="left")
    n_fr = np.searchsorted(pos, thresholds, side="left")
    return n_fa, n_fr


def eer(s, labels=None) -> float:
    """Equal error rate from a sweep over the distinct scores.

    At each threshold, FAR is the share of attacks scoring at or above it and
    FRR the share of bonafides below it. The threshold minimizing
    ``|FAR - FRR|`` is chosen (lowest on ties) and the mean of the two rates
    there is returned.
    """
    ss = _score_set(s, labels)
    pos, neg = ss.split()
    P, N = pos.size, neg.size
    thresholds = np.unique(ss.scores)
    n_fa, n_fr = _counts_at(pos, neg, thresholds)
    # |FAR - FRR| scaled by N * P to stay in integers
    gap = np.abs(n_fa.astype(np.int64) * P - n_fr.astype(np.int64) * N)
    k = int(np.argmin(gap))
    return int(n_fa[k] * P + n_fr[k] * N) / (2 * N * P)


def tpr_at_fpr(s, fpr_target: float, labels=None) -> float:
    """Best TPR over thresholds whose FPR stays within ``fpr_target`` (step ROC, no interpolation)."""
    if not 0.0 <= fpr_target <= 1.0:
        raise ParameterError(f"fpr_target must lie in [0, 1], got {fpr_target}")
    ss = _score_set(s, labels)
    pos, neg = ss.split()
    thresholds = np.append(np.unique(ss.scores), np.inf)
    n_fp = neg.size - np.searchsorted(neg, thresholds, side="left")
    n_tp = pos.size - np.searchsorted(pos, thresholds, side="left")
    ok = n_fp / neg.size <= fpr_target
    return float(n_tp[ok].max() / pos.size)


@dataclass(frozen=True)
class DatasetScore:
    scope: str  # intra or cross
    task: str
    dataset: str
    n: int
    auc: float
    eer: float


@dataclass(frozen=True)
class MergedScore:
    scope: str
    task: str
    n: int
    auc: float
    tpr: dict[float, float]


@dataclass
class ProtocolResult:
    mode: str
    datasets: list[DatasetScore] = field(default_factory=list)
    merged: list[MergedScore] = field(default_factory=list)

    def merged_for(self, scope: str, task: str) -> MergedScore:
        for m in self.merged:
            if m.scope == scope and m.task == task:
                return m
        raise KeyError(f"no merged {scope} block for task {task!r}")

    def report(self) -> str:
        """Flat ``key: value`` lines."""
        lines = [f"mode: {self.mode}"]
        for d in self.datasets:
            key = f"{d.scope}.{d.task}.{d.dataset}"
            lines += [f"{key}.n: {d.n}", f"{key}.auc: {d.auc:.6f}", f"{key}.eer: {d.eer:.6f}"]
        for m in self.merged:
            key = f"{m.scope}.{m.task}.merged"
            lines += [f"{key}.n: {m.n}", f"{key}.auc: {m.auc:.6f}"]
            for target, value in m.tpr.items():
                lines.append(f"{key}.tpr@fpr={target:.2f}: {value:.6f}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        """Tab-separated table: one row per dataset, then one merged row per (scope, task)."""
        head = ["block", "scope", "task", "dataset", "n", "auc", "eer"] + [f"tpr@fpr={t:.2f}" for t in FPR_TARGETS]
        rows = ["\t".join(head)]
        for d in self.datasets:
            rows.append("\t".join(["dataset", d.scope, d.task, d.dataset, str(d.n), f"{d.auc:.6f}", f"{d.eer:.6f}", "", ""]))
        for m in self.merged:
            tprs = [f"{m.tpr[t]:.6f}" for t in FPR_TARGETS]
            rows.append("\t".join(["merged", m.scope, m.task, "*", str(m.n), f"{m.auc:.6f}", ""] + tprs))
        return "\n".join(rows) + "\n"


ModelSpec = Union[object, str, os.PathLike]


def _resolve_model(spec):
    if isinstance(spec, (str, os.PathLike)):
        from .config import model_from_checkpoint

        return model_from_checkpoint(spec)
    return spec


def score_dataset(model, handle) -> np.ndarray:
    """Bonafide probabilities for every sample of ``handle`` under ``model``."""
    from .data import load_inputs
    from .trainer import branch_shapes

    bank = load_inputs(handle, branch_shapes(model.arch))
    return model.score(bank.arrays, bank.tasks)


def run_protocol(
    models: Union[ModelSpec, Mapping[str, ModelSpec]],
    intra: Sequence[Union[str, os.PathLike]] = (),
    cross: Sequence[Union[str, os.PathLike]] = (),
    mode: str = "joint",
) -> ProtocolResult:
    """Score every sample of the intra and cross manifests and summarize.

    ``models`` is one model (or checkpoint path) serving both tasks in joint
    mode, or a ``{task: model}`` mapping in separate mode. Datasets are the
    (task, domain) groups within each manifest; TPR@FPR is computed on the
    pooled scores of each (scope, task).
    """
    from .data import load_dataset

    if mode not in ("joint", "separate"):
        raise ParameterError(f"unknown protocol mode {mode!r}")
    if mode == "separate":
        if not isinstance(models, Mapping):
            raise ParameterError("separate mode needs a {task: model} mapping")
        per_task = {task: _resolve_model(m) for task, m in models.items()}
    else:
        model = _resolve_model(models)
        per_task = {task: model for task in model.tasks}
    result = ProtocolResult(mode)
    for scope, manifests in (("intra", intra), ("cross", cross)):
        pooled: dict[str, list[ScoreSet]] = {}
        for manifest in manifests:
            handle = load_dataset(manifest)
            for task in dict.fromkeys(s.task for s in handle.samples):
                if task not in per_task:
                    raise ParameterError(f"no model serves task {task!r} in {manifest}")
                sub = handle.filter(task=task)
                scores = score_dataset(per_task[task], sub)
                labels = np.array([s.y for s in sub.samples])
                domains = np.array([s.domain for s in sub.samples])
                for domain in sub.domains():
                    m = domains == domain
                    ss = ScoreSet(scores[m], labels[m], dataset=domain, domain=scope)
                    result.datasets.append(DatasetScore(scope, task, domain, int(m.sum()), auc(ss), eer(ss)))
                pooled.setdefault(task, []).append(ScoreSet(scores, labels))
        for task, sets in pooled.items():
            merged = ScoreSet(np.concatenate([s.scores for s in sets]), np.concatenate([s.labels for s in sets]), dataset=f"{scope}/{task}")
            tpr = {t: tpr_at_fpr(merged, t) for t in FPR_TARGETS}
            result.merged.append(MergedScore(scope, task, merged.scores.size, auc(merged), tpr))
    return result


def write_result(result: ProtocolResult, report_path: Union[str, os.PathLike], table_path: Optional[Union[str, os.PathLike]] = None) -> None:
    Path(report_path).write_text(result.report(), encoding="utf-8")
    if table_path is not None:
        Path(table_path).write_text(result.table(), encoding="utf-8")
