"""Encoders, heads, fusion, joint model and checkpoints."""

from __future__ import annotations

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TASKS, ArchitectureConfig, EncoderConfig, HeadConfig
from .network import (
    Fusion,
    HeadSet,
    JointModel,
    SplitEncoder,
    fuse_concat,
    fuse_overall_loss,
    fuse_weighted_norm,
    head_forward,
    rppg_overall_loss,
    three_class_labels,
    two_branch_forward,
    weighted_norm,
)


def split_shared_specific(arch: ArchitectureConfig, n_shared: int, seed: int = 0, tasks=TASKS) -> JointModel:
    """Joint model whose encoders share their first ``n_shared`` blocks across tasks."""
    from dataclasses import replace

    return JointModel(replace(arch, n_shared=n_shared), tasks=tasks, seed=seed)


__all__ = [
    "TASKS", "ArchitectureConfig", "EncoderConfig", "HeadConfig", "Fusion", "HeadSet", "JointModel",
    "SplitEncoder", "fuse_concat", "fuse_overall_loss", "fuse_weighted_norm", "head_forward",
    "load_checkpoint", "rppg_overall_loss", "save_checkpoint", "split_shared_specific",
    "three_class_labels", "two_branch_forward", "weighted_norm",
]
