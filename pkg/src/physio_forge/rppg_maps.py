"""Multi-scale spatio-temporal maps and the global pulse signal.

Input boundary is a :class:`RegionTraceSet`: the mean RGB value of each of K
facial regions in every frame. Producing those traces from video (landmarks,
skin masks) is left to a front end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DimensionError, ParameterError

CHANNELS = {"red": 0, "green": 1, "blue": 2}


@dataclass
class RegionTraceSet:
    values: np.ndarray  # [K, T_raw, 3]
    fps: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise DimensionError(f"region traces must be [K, T, 3], got {self.values.shape}")
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise DimensionError(f"need at least one region and one frame, got {self.values.shape}")
        if not self.fps > 0:
            raise ParameterError(f"fps must be positive, got {self.fps}")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("region traces contain non-finite values")

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class MSTmap:
    values: np.ndarray  # [2**K - 1, T, 3]
    subset_index: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass
class Signal:
    samples: np.ndarray
    fps: float
    degenerate: bool = False


def enumerate_subsets(K: int) -> list[tuple[int, ...]]:
    """All non-empty subsets of ``range(K)``, by size and then lexicographically."""
    if not isinstance(K, (int, np.integer)) or not 1 <= K <= 16:
        raise ParameterError(f"region count must be an integer in [1, 16], got {K!r}")
    return [s for r in range(1, K + 1) for s in combinations(range(K), r)]


def pad_or_truncate(trace: RegionTraceSet, T: int) -> RegionTraceSet:
    """Keep the first ``T`` frames, or repeat the final frame up to ``T``."""
    if T < 1:
        raise ParameterError(f"target length must be >= 1, got {T}")
    vals = trace.values
    if vals.shape[1] >= T:
        return RegionTraceSet(vals[:, :T].copy(), trace.fps)
    tail = np.repeat(vals[:, -1:, :], T - vals.shape[1], axis=1)
    return RegionTraceSet(np.concatenate([vals, tail], axis=1), trace.fps)


def minmax_rows(x: np.ndarray, axis: int) -> np.ndarray:
    """Min-max scale to [0, 1] along ``axis``; constant slices become zeros."""
    lo = x.min(axis=axis, keepdims=True)
    hi = x.max(axis=axis, keepdims=True)
    span = hi - lo
    flat = span <= 1e-12 * (1.0 + np.abs(hi))
    out = (x - lo) / np.where(flat, 1.0, span)
    return np.where(flat, 0.0, np.clip(out, 0.0, 1.0))


def subset_matrix(K: int) -> np.ndarray:
    """Averaging weights ``[2**K - 1, K]`` matching :func:`enumerate_subsets`."""
    subsets = enumerate_subsets(K)
    weights = np.zeros((len(subsets), K))
    for row, members in enumerate(subsets):
        weights[row, list(members)] = 1.0 / len(members)
    return weights


def build_mstmap(trace: RegionTraceSet, T: int = 300) -> MSTmap:
    traces = pad_or_truncate(trace, T).values
    raw = np.einsum("sk,ktc->stc", subset_matrix(trace.K), traces)
    return MSTmap(minmax_rows(raw, axis=1), enumerate_subsets(trace.K))


def global_signal(trace: RegionTraceSet, T: int = 300, channel: str = "green") -> Signal:
    """Region-averaged trace of one colour channel, standardized to zero mean and unit variance.

    ``channel`` is one of ``red``, ``green``, ``blue`` or ``mean`` (average of all three).
    """
    vals = pad_or_truncate(trace, T).values.mean(axis=0)
    if channel == "mean":
        raw = vals.mean(axis=1)
    elif channel in CHANNELS:
        raw = vals[:, CHANNELS[channel]]
    else:
        raise ParameterError(f"unknown channel selector {channel!r}")
    centered = raw - raw.mean()
    std = centered.std()
    if std <= 1e-12 * (1.0 + np.abs(raw).max()):
        return Signal(np.zeros(T), trace.fps, degenerate=True)
    out = centered / std
    return Signal(out - out.mean(), trace.fps)
