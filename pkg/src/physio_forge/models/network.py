"""Encoders, heads, fusion and the joint spoof/forgery model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..autodiff import ops
from ..autodiff.norm import NormState, batch_norm, layer_norm
from ..autodiff.tensor import Tensor
from ..errors import DimensionError, ParameterError
from .config import TASKS, ArchitectureConfig, EncoderConfig, HeadConfig
from .layers import BlockList, ConvBlock, Linear, Module, TaskDict, route

BONAFIDE, ATTACK = 1, 0


def _check_tasks(tasks: Sequence[str], allowed: Sequence[str]) -> np.ndarray:
    tasks = np.asarray(tasks)
    bad = sorted(set(tasks.tolist()) - set(allowed))
    if bad:
        raise ParameterError(f"unknown task id(s) {bad}; model serves {tuple(allowed)}")
    return tasks


class SplitEncoder(Module):
    """Conv blocks with a shared prefix and per-task suffix, then global pooling and a projection."""

    def __init__(self, cfg: EncoderConfig, n_shared: int, tasks: Sequence[str], rng: np.random.Generator):
        if not 0 <= n_shared <= len(cfg.block_channels):
            raise ParameterError(f"n_shared={n_shared} outside [0, {len(cfg.block_channels)}]")
        self.cfg = cfg
        widths = [cfg.input_shape[2], *cfg.block_channels]
        self.shared = BlockList([ConvBlock(widths[i], widths[i + 1], rng) for i in range(n_shared)])
        specific = {}
        n_layers = len(cfg.block_channels)
        if n_shared < n_layers:
            for task in tasks:
                specific[task] = BlockList(
                    [ConvBlock(widths[i], widths[i + 1], rng) for i in range(n_shared, n_layers)]
                )
        self.specific = TaskDict(specific)
        self.proj = Linear(cfg.block_channels[-1], cfg.feature_dim, rng)

    def __call__(self, x: Tensor, tasks: np.ndarray, training: bool) -> Tensor:
        if x.ndim != 4 or x.shape[1:] != tuple(self.cfg.input_shape):
            raise DimensionError(f"encoder expects [B, {', '.join(map(str, self.cfg.input_shape))}], got {x.shape}")
        h = self.shared(x, training)
        if self.specific.items:
            h = route(h, tasks, lambda task, rows: self.specific[task](rows, training))
        return self.proj(ops.global_avg_pool(h))


class HeadSet(Module):
    """Classification head(s) following one of the three head settings."""

    def __init__(self, n_in: int, cfg: HeadConfig, tasks: Sequence[str], rng: np.random.Generator):
        self.cfg = cfg
        self.tasks = tuple(tasks)
        if cfg.mode == "separate_2heads_2class":
            self.heads = TaskDict({t: Linear(n_in, 1, rng) for t in self.tasks})
        else:
            self.head = Linear(n_in, 3 if cfg.mode == "shared_1head_3class" else 1, rng)

    def __call__(self, features: Tensor, tasks: np.ndarray) -> Tensor:
        tasks = _check_tasks(tasks, self.tasks)
        if self.cfg.mode == "separate_2heads_2class":
            out = route(features, tasks, lambda task, rows: self.heads[task](rows))
        else:
            out = self.head(features)
        if self.cfg.mode == "shared_1head_3class":
            return out
        return ops.reshape(out, (out.shape[0],))

    def loss(self, logits: Tensor, labels: np.ndarray, tasks: np.ndarray) -> Tensor:
        if self.cfg.mode == "shared_1head_3class":
            return ops.cross_entropy(logits, three_class_labels(labels, tasks))
        return ops.bce_loss(logits, labels)

    def score(self, logits: np.ndarray) -> np.ndarray:
        """Bonafide probability in [0, 1]."""
        if self.cfg.mode == "shared_1head_3class":
            return ops.softmax_np(logits)[:, 0]
        return ops.sigmoid_np(logits)


def three_class_labels(labels, tasks) -> np.ndarray:
    """bonafide -> 0, spoof attack -> 1, forgery attack -> 2."""
    labels = np.asarray(labels)
    tasks = np.asarray(tasks)
    out = np.where(tasks == "spoof", 1, 2)
    return np.where(labels == BONAFIDE, 0, out)


def weighted_norm(
    features: Tensor, theta: float, bn_state: NormState, ln_state: NormState, training: bool
) -> Tensor:
    """``theta * LN(F) + (1 - theta) * BN(F)``."""
    if not 0.0 <= theta <= 1.0:
        raise ParameterError(f"theta must lie in [0, 1], got {theta}")
    ln = layer_norm(features, ln_state)
    bn = batch_norm(features, bn_state, training)
    return ops.add(ops.mul(ln, theta), ops.mul(bn, 1.0 - theta))


class Fusion(Module):
    def __init__(self, kind: str, app_dim: int, rppg_dim: int, out_dim: int, theta: float, rng):
        self.kind = kind
        self.theta = theta
        self.linear = Linear(app_dim + rppg_dim, out_dim, rng, gain=np.sqrt(2.0))
        if kind == "weighted_norm":
            # affine-free: the following linear layer absorbs any scale/shift
            self.bn_app = NormState(app_dim, affine=False)
            self.ln_app = NormState(app_dim, affine=False)
            self.bn_rppg = NormState(rppg_dim, affine=False)
            self.ln_rppg = NormState(rppg_dim, affine=False)

    def normalized(self, f_app: Tensor, f_rppg: Tensor, training: bool) -> tuple[Tensor, Tensor]:
        if self.kind != "weighted_norm":
            return f_app, f_rppg
        return (
            weighted_norm(f_app, self.theta, self.bn_app, self.ln_app, training),
            weighted_norm(f_rppg, self.theta, self.bn_rppg, self.ln_rppg, training),
        )

    def __call__(self, f_app: Tensor, f_rppg: Tensor, training: bool) -> Tensor:
        if f_app.shape[0] != f_rppg.shape[0]:
            raise DimensionError(f"fusion batch mismatch: {f_app.shape} vs {f_rppg.shape}")
        a, r = self.normalized(f_app, f_rppg, training)
        return ops.relu(self.linear(ops.concat([a, r], axis=1)))


@dataclass
class Outputs:
    logits: dict[str, Tensor]
    features: dict[str, Tensor]
    final: str


class JointModel(Module):
    """Appearance, two-branch physiological, or fused model serving one or two tasks."""

    def __init__(self, arch: ArchitectureConfig, tasks: Sequence[str] = TASKS, seed: int = 0):
        self.arch = arch
        self.tasks = tuple(tasks)
        rng = np.random.default_rng(seed)
        fd = arch.feature_dim
        n_shared = arch.n_shared if len(self.tasks) > 1 else arch.n_layers
        if arch.modality in ("appearance", "both"):
            self.app = SplitEncoder(arch.encoder("app"), n_shared, self.tasks, rng)
            self.head_app = HeadSet(fd, arch.head, self.tasks, rng)
        if arch.modality in ("rppg", "both"):
            self.mst = SplitEncoder(arch.encoder("mst"), n_shared, self.tasks, rng)
            self.wav = SplitEncoder(arch.encoder("wav"), n_shared, self.tasks, rng)
            self.head_mst = HeadSet(fd, arch.head, self.tasks, rng)
            self.head_wav = HeadSet(fd, arch.head, self.tasks, rng)
            self.head_rppg = HeadSet(2 * fd, arch.head, self.tasks, rng)
        if arch.modality == "both":
            self.fusion = Fusion(arch.fusion, fd, 2 * fd, fd, arch.theta, rng)
            self.head_fuse = HeadSet(fd, arch.head, self.tasks, rng)

    @property
    def final_head(self) -> str:
        return {"appearance": "app", "rppg": "rppg", "both": "fuse"}[self.arch.modality]

    def forward(self, inputs: dict[str, np.ndarray], tasks: Sequence[str], training: bool) -> Outputs:
        tasks = _check_tasks(tasks, self.tasks)
        B = len(tasks)
        for key, arr in inputs.items():
            if arr.shape[0] != B:
                raise DimensionError(f"input {key!r} has batch {arr.shape[0]}, expected {B}")
        logits, feats = {}, {}
        if hasattr(self, "app"):
            feats["app"] = self.app(Tensor(inputs["app"]), tasks, training)
            logits["app"] = self.head_app(feats["app"], tasks)
        if hasattr(self, "mst"):
            feats["mst"] = self.mst(Tensor(inputs["mst"]), tasks, training)
            feats["wav"] = self.wav(Tensor(inputs["wav"]), tasks, training)
            feats["rppg"] = ops.concat([feats["mst"], feats["wav"]], axis=1)
            logits["mst"] = self.head_mst(feats["mst"], tasks)
            logits["wav"] = self.head_wav(feats["wav"], tasks)
            logits["rppg"] = self.head_rppg(feats["rppg"], tasks)
        if hasattr(self, "fusion"):
            feats["fuse"] = self.fusion(feats["app"], feats["rppg"], training)
            logits["fuse"] = self.head_fuse(feats["fuse"], tasks)
        return Outputs(logits, feats, self.final_head)

    def loss(self, out: Outputs, labels: np.ndarray, tasks: Sequence[str]) -> Tensor:
        tasks = np.asarray(tasks)
        lg = out.logits
        parts = {
            name: getattr(self, f"head_{name}").loss(lg[name], labels, tasks) for name in lg
        }
        if self.arch.modality == "appearance":
            return parts["app"]
        rppg = rppg_overall_loss(parts["rppg"], parts["mst"], parts["wav"], self.arch.alpha)
        if self.arch.modality == "rppg":
            return rppg
        return fuse_overall_loss(parts["fuse"], parts["app"], rppg, self.arch.beta)

    def score(self, inputs: dict[str, np.ndarray], tasks: Sequence[str], batch: int = 256) -> np.ndarray:
        """Evaluation-mode bonafide probabilities."""
        tasks = np.asarray(tasks)
        head = getattr(self, f"head_{self.final_head}")
        scores = []
        for lo in range(0, len(tasks), batch):
            sl = slice(lo, lo + batch)
            out = self.forward({k: v[sl] for k, v in inputs.items()}, tasks[sl], training=False)
            scores.append(head.score(out.logits[self.final_head].data))
        return np.concatenate(scores) if scores else np.zeros(0)


def rppg_overall_loss(main, mst, wav, alpha: float = 0.5) -> Tensor:
    """``L_main + alpha * (L_mst + L_wav)``; each argument is a scalar loss tensor."""
    if alpha < 0:
        raise ParameterError(f"alpha must be non-negative, got {alpha}")
    return ops.weighted_sum([(1.0, main), (alpha, ops.add(mst, wav))])


def fuse_overall_loss(fuse, app, rppg_overall, beta: float = 0.5) -> Tensor:
    """``L_fuse + beta * (L_app + L_rppg_overall)``."""
    if beta < 0:
        raise ParameterError(f"beta must be non-negative, got {beta}")
    return ops.weighted_sum([(1.0, fuse), (beta, ops.add(app, rppg_overall))])


# functional entry points


def encoder_forward(x, encoder: SplitEncoder, tasks: Optional[Sequence[str]] = None, training: bool = True) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if tasks is None:
        tasks = [next(iter(encoder.specific.items), TASKS[0])] * x.shape[0]
    return encoder(x, np.asarray(tasks), training)


def two_branch_forward(mst, wav, model: JointModel, tasks: Sequence[str], training: bool = True):
    """Returns ``(logit_main, logit_mst, logit_wav, F_rPPG)``."""
    if mst.shape[0] != wav.shape[0]:
        raise DimensionError(f"MSTmap batch {mst.shape[0]} != WaveletMap batch {wav.shape[0]}")
    tasks = _check_tasks(tasks, model.tasks)
    f_mst = model.mst(mst if isinstance(mst, Tensor) else Tensor(mst), tasks, training)
    f_wav = model.wav(wav if isinstance(wav, Tensor) else Tensor(wav), tasks, training)
    f_rppg = ops.concat([f_mst, f_wav], axis=1)
    return (
        model.head_rppg(f_rppg, tasks),
        model.head_mst(f_mst, tasks),
        model.head_wav(f_wav, tasks),
        f_rppg,
    )


def fuse_concat(f_app: Tensor, f_rppg: Tensor, linear: Linear) -> Tensor:
    """``ReLU(Linear(Concat(F_app, F_rppg)))``."""
    if f_app.shape[0] != f_rppg.shape[0]:
        raise DimensionError(f"fusion batch mismatch: {f_app.shape} vs {f_rppg.shape}")
    return ops.relu(linear(ops.concat([f_app, f_rppg], axis=1)))


def fuse_weighted_norm(
    f_app: Tensor,
    f_rppg: Tensor,
    theta: float,
    states: tuple[NormState, NormState, NormState, NormState],
    linear: Linear,
    training: bool = True,
) -> Tensor:
    """Weighted BN/LN per modality, then concat -> linear -> ReLU.

    ``states`` is ``(bn_app, ln_app, bn_rppg, ln_rppg)``.
    """
    bn_a, ln_a, bn_r, ln_r = states
    a = weighted_norm(f_app, theta, bn_a, ln_a, training)
    r = weighted_norm(f_rppg, theta, bn_r, ln_r, training)
    return fuse_concat(a, r, linear)


def head_forward(features: Tensor, heads: HeadSet, tasks: Sequence[str]) -> Tensor:
    return heads(features, np.asarray(tasks))
