from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ParameterError

TASKS = ("spoof", "forgery")
HEAD_MODES = ("shared_1head_2class", "shared_1head_3class", "separate_2heads_2class")
HEAD_ALIASES = {"1h2c": "shared_1head_2class", "1h3c": "shared_1head_3class", "2h2c": "separate_2heads_2class"}
FUSIONS = ("none", "concat", "weighted_norm")
MODALITIES = ("appearance", "rppg", "both")


@dataclass(frozen=True)
class EncoderConfig:
    input_shape: tuple[int, int, int]
    block_channels: tuple[int, ...] = (16, 32, 64)
    feature_dim: int = 128

    def __post_init__(self):
        if self.feature_dim < 2:
            raise ParameterError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if len(self.block_channels) < 1:
            raise ParameterError("an encoder needs at least one block")
        h, w, _ = self.input_shape
        if min(h, w) >> len(self.block_channels) < 1:
            raise ParameterError(f"input {self.input_shape} too small for {len(self.block_channels)} pooling blocks")


@dataclass(frozen=True)
class HeadConfig:
    mode: str = "shared_1head_2class"

    def __post_init__(self):
        mode = HEAD_ALIASES.get(self.mode, self.mode)
        if mode not in HEAD_MODES:
            raise ParameterError(f"unknown head mode {self.mode!r}; expected one of {HEAD_MODES}")
        object.__setattr__(self, "mode", mode)

    @property
    def n_classes(self) -> int:
        return 3 if self.mode == "shared_1head_3class" else 2


@dataclass(frozen=True)
class ArchitectureConfig:
    """Architecture knobs.

    ``n_layers`` is the number of conv blocks per encoder; the first
    ``n_shared`` are shared by both tasks and the rest are duplicated per task.
    ``fusion`` must be ``none`` unless ``modality`` is ``both``.
    """

    modality: str = "both"
    fusion: str = "weighted_norm"
    head: HeadConfig = field(default_factory=HeadConfig)
    n_shared: int = 2
    theta: float = 0.8
    alpha: float = 0.5
    beta: float = 0.5
    block_channels: tuple[int, ...] = (16, 32, 64)
    feature_dim: int = 128
    mst_input: tuple[int, int] = (16, 64)
    wav_input: tuple[int, int] = (32, 16)
    app_input: tuple[int, int] = (32, 32)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ParameterError(f"unknown modality {self.modality!r}")
        if self.fusion not in FUSIONS:
            raise ParameterError(f"unknown fusion {self.fusion!r}")
        if (self.modality == "both") == (self.fusion == "none"):
            raise ParameterError(f"fusion {self.fusion!r} is incompatible with modality {self.modality!r}")
        if not 0 <= self.n_shared <= self.n_layers:
            raise ParameterError(f"n_shared={self.n_shared} outside [0, {self.n_layers}]")
        if not 0.0 <= self.theta <= 1.0:
            raise ParameterError(f"theta must lie in [0, 1], got {self.theta}")
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("alpha and beta must be non-negative")
        for shape in (self.mst_input, self.wav_input, self.app_input):
            EncoderConfig((shape[0], shape[1], 3), tuple(self.block_channels), self.feature_dim)

    @property
    def n_layers(self) -> int:
        return len(self.block_channels)

    @property
    def n_specific(self) -> int:
        return self.n_layers - self.n_shared

    def encoder(self, branch: str) -> EncoderConfig:
        h, w = {"mst": self.mst_input, "wav": self.wav_input, "app": self.app_input}[branch]
        return EncoderConfig((h, w, 3), tuple(self.block_channels), self.feature_dim)
