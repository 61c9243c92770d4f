"""Sample manifests and model-ready input tensors."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ManifestError
from .mapio import read_map

LABELS = {"bonafide": 1, "attack": 0}
TASK_CODES = {"spoof": "S", "forgery": "F"}
HEADER = "# id\ttask\tlabel\tdomain\tmst_path\twav_path\tapp_path"


@dataclass(frozen=True)
class SampleRecord:
    id: str
    task: str
    label: str
    domain: str
    mst_path: str
    wav_path: str
    app_path: str

    @property
    def y(self) -> int:
        return LABELS[self.label]


@dataclass
class DatasetHandle:
    samples: list[SampleRecord]
    root: Path = field(default_factory=Path)

    @property
    def task(self) -> str | None:
        tasks = {s.task for s in self.samples}
        return tasks.pop() if len(tasks) == 1 else None

    def __len__(self) -> int:
        return len(self.samples)

    def filter(self, task: str | None = None, label: str | None = None, domain: str | None = None) -> "DatasetHandle":
        keep = [
            s
            for s in self.samples
            if (task is None or s.task == task)
            and (label is None or s.label == label)
            and (domain is None or s.domain == domain)
        ]
        return DatasetHandle(keep, self.root)

    def domains(self) -> list[str]:
        return list(dict.fromkeys(s.domain for s in self.samples))

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    @classmethod
    def merge(cls, handles: Iterable["DatasetHandle"]) -> "DatasetHandle":
        handles = list(handles)
        samples = [s for h in handles for s in h.samples]
        root = handles[0].root if handles else Path()
        if any(h.root != root for h in handles):
            # keep per-sample absolute paths when roots differ
            samples = [
                SampleRecord(
                    s.id, s.task, s.label, s.domain,
                    str(h.root / s.mst_path), str(h.root / s.wav_path), str(h.root / s.app_path),
                )
                for h in handles
                for s in h.samples
            ]
            root = Path("/")
        return cls(samples, root)


def write_manifest(path: str | os.PathLike, samples: Sequence[SampleRecord]) -> None:
    lines = [HEADER]
    for s in samples:
        lines.append("\t".join([s.id, s.task, s.label, s.domain, s.mst_path, s.wav_path, s.app_path]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(manifest: str | os.PathLike, check_files: bool = True) -> DatasetHandle:
    """Parse a manifest; paths inside are relative to the manifest's directory."""
    path = Path(manifest)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    samples = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 7:
            raise ManifestError(f"{path}:{lineno}: expected 7 tab-separated fields, got {len(cols)}")
        rec = SampleRecord(*cols)
        if rec.task not in TASK_CODES:
            raise ManifestError(f"{path}:{lineno}: unknown task {rec.task!r}")
        if rec.label not in LABELS:
            raise ManifestError(f"{path}:{lineno}: unknown label {rec.label!r}")
        if check_files:
            for rel in (rec.mst_path, rec.wav_path, rec.app_path):
                if not (root / rel).is_file():
                    raise ManifestError(f"{path}:{lineno}: missing file {root / rel}")
        samples.append(rec)
    return DatasetHandle(samples, root)


def adaptive_avg_pool(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average ``[H, W, ...]`` over near-equal bins down to ``[out_h, out_w, ...]``."""
    H, W = arr.shape[:2]
    if out_h > H or out_w > W:
        raise ValueError(f"cannot pool {arr.shape[:2]} up to {(out_h, out_w)}")
    rows = np.linspace(0, H, out_h + 1).round().astype(int)
    cols = np.linspace(0, W, out_w + 1).round().astype(int)
    tmp = np.add.reduceat(arr, rows[:-1], axis=0) / np.diff(rows).reshape((-1,) + (1,) * (arr.ndim - 1))
    return np.add.reduceat(tmp, cols[:-1], axis=1) / np.diff(cols).reshape((1, -1) + (1,) * (arr.ndim - 2))


def prepare_branch(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Native map -> encoder input ``[h, w, 3]``; single-channel maps are replicated."""
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"expected a [H, W] or [H, W, 3] map, got {arr.shape}")
    if arr.shape[:2] == tuple(shape):
        return arr
    return adaptive_avg_pool(arr, *shape)


@dataclass
class InputBank:
    """All samples of a dataset converted to encoder inputs, kept in memory."""

    records: list[SampleRecord]
    arrays: dict[str, np.ndarray]

    @property
    def tasks(self) -> np.ndarray:
        return np.array([r.task for r in self.records])

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=np.float64)

    def select(self, index) -> dict[str, np.ndarray]:
        return {k: v[index] for k, v in self.arrays.items()}


def load_inputs(handle: DatasetHandle, shapes: dict[str, tuple[int, int]]) -> InputBank:
    """Read each sample's maps and pool them to the encoder input shapes.

    ``shapes`` maps branch name (``mst``, ``wav``, ``app``) to ``(h, w)``;
    branches not listed are skipped.
    """
    attr = {"mst": "mst_path", "wav": "wav_path", "app": "app_path"}
    arrays = {k: np.zeros((len(handle), *shapes[k], 3)) for k in shapes}
    for i, rec in enumerate(handle.samples):
        for branch, shape in shapes.items():
            p = handle.resolve(getattr(rec, attr[branch]))
            if not p.is_file():
                raise ManifestError(f"missing file {p}")
            arrays[branch][i] = prepare_branch(read_map(p), shape)
    return InputBank(list(handle.samples), arrays)
