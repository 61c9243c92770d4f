"""Flat ``key = value`` run configuration shared by every CLI subcommand.

Precedence, lowest first: built-in defaults, the ``PHYSIO_FORGE_SEED``
environment variable (seed only), a config file, explicit overrides (flags).
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Optional

from .errors import ParameterError
from .models.config import TASKS, ArchitectureConfig, HeadConfig
from .synthbench import BenchmarkSpec, default_domains
from .trainer import ScheduleSpec, TrainConfig

SEED_ENV = "PHYSIO_FORGE_SEED"
MODES = ("joint", "separate")


@dataclass(frozen=True)
class RunConfig:
    # run
    seed: int = 0
    mode: str = "joint"
    task: str = "spoof"
    data_dir: str = "data"
    out_dir: str = "run"
    # schedule
    sampling: str = "random"
    batch_size: int = 64
    extra_data: str = "both"
    u_spoof: Optional[int] = None
    u_forgery: Optional[int] = None
    # optimization
    lr: float = 0.001
    epochs: int = 30
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int = 20
    # architecture
    modality: str = "both"
    fusion: str = "weighted_norm"
    heads: str = "1h2c"
    n_shared: int = 2
    theta: float = 0.8
    alpha: float = 0.5
    beta: float = 0.5
    block_channels: tuple[int, ...] = (16, 32, 64)
    feature_dim: int = 128
    mst_input: tuple[int, int] = (16, 64)
    wav_input: tuple[int, int] = (32, 16)
    app_input: tuple[int, int] = (32, 32)
    # benchmark
    samples_per_class: int = 200
    train_fraction: float = 0.5
    n_intra_domains: int = 2
    n_cross_domains: int = 2
    K: int = 6
    T: int = 300
    frames_min: int = 270
    frames_max: int = 330
    voices_per_octave: int = 48

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.task not in TASKS:
            raise ParameterError(f"unknown task {self.task!r}; expected one of {TASKS}")
        # building the typed configs runs their validation
        self.train_config()
        self.benchmark()

    @property
    def model_tasks(self) -> tuple[str, ...]:
        return TASKS if self.mode == "joint" else (self.task,)

    def architecture(self) -> ArchitectureConfig:
        return ArchitectureConfig(
            modality=self.modality,
            fusion=self.fusion,
            head=HeadConfig(self.heads),
            n_shared=self.n_shared,
            theta=self.theta,
            alpha=self.alpha,
            beta=self.beta,
            block_channels=tuple(self.block_channels),
            feature_dim=self.feature_dim,
            mst_input=tuple(self.mst_input),
            wav_input=tuple(self.wav_input),
            app_input=tuple(self.app_input),
        )

    def schedule(self) -> ScheduleSpec:
        return ScheduleSpec(
            strategy=self.sampling,
            batch_size=self.batch_size,
            seed=self.seed,
            extra_data_filter=self.extra_data,
            primary_task=self.task if self.extra_data != "both" else None,
            u_spoof=self.u_spoof,
            u_forgery=self.u_forgery,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            lr_decay_factor=self.lr_decay_factor,
            lr_decay_epoch=self.lr_decay_epoch,
            seed=self.seed,
            architecture=self.architecture(),
            schedule=self.schedule(),
        )

    def benchmark(self) -> BenchmarkSpec:
        if self.n_intra_domains < 1 or self.n_cross_domains < 0:
            raise ParameterError("need at least one intra domain and a non-negative cross-domain count")
        return BenchmarkSpec(
            seed=self.seed,
            samples_per_class=self.samples_per_class,
            train_fraction=self.train_fraction,
            K=self.K,
            T=self.T,
            frames_min=self.frames_min,
            frames_max=self.frames_max,
            voices_per_octave=self.voices_per_octave,
            domains=default_domains(self.n_intra_domains, self.n_cross_domains),
        )


FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, text: str):
    default = FIELDS[key].default
    text = text.strip()
    try:
        if key in ("u_spoof", "u_forgery"):
            return None if text.lower() in ("auto", "none", "") else int(text)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            sep = "x" if key.endswith("_input") else ","
            return tuple(int(p) for p in text.split(sep))
    except ValueError:
        raise ParameterError(f"bad value for {key}: {text!r}") from None
    return text


def _format_value(key: str, value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, (tuple, list)):
        return ("x" if key.endswith("_input") else ",").join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines to a dict of typed values; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in FIELDS:
            raise ParameterError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _parse_value(key, value)
    return out


PATH_KEYS = ("data_dir", "out_dir")


def dump(config: RunConfig, include_paths: bool = True) -> str:
    """Every key with its resolved value; checkpoints omit the path keys so they stay location-independent."""
    lines = ["# resolved physio-forge run configuration"]
    for key, value in asdict(config).items():
        if include_paths or key not in PATH_KEYS:
            lines.append(f"{key} = {_format_value(key, value)}")
    return "\n".join(lines) + "\n"


def resolve(
    config_file: Optional[str | os.PathLike] = None,
    overrides: Optional[Mapping[str, object]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Defaults < ``PHYSIO_FORGE_SEED`` < config file < overrides."""
    env = os.environ if env is None else env
    values: dict = {}
    if env.get(SEED_ENV):
        values["seed"] = _parse_value("seed", env[SEED_ENV])
    if config_file is not None:
        path = Path(config_file)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ParameterError(f"cannot read config file {path}: {exc.strerror}") from exc
        values.update(parse_text(text, str(path)))
    for key, value in (overrides or {}).items():
        if key not in FIELDS:
            raise ParameterError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = _parse_value(key, value) if isinstance(value, str) else value
    return RunConfig(**values)


def write_resolved(config: RunConfig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_text(dump(config), encoding="utf-8")
    return path


def model_from_checkpoint(path: str | os.PathLike):
    """Rebuild a model from a checkpoint's embedded config and load its tensors."""
    from .models.checkpoint import load_checkpoint
    from .models.network import JointModel

    text, state = load_checkpoint(path)
    cfg = RunConfig(**parse_text(text, f"{path} (embedded config)"))
    model = JointModel(cfg.architecture(), tasks=cfg.model_tasks, seed=cfg.seed)
    model.load_state_dict(state)
    return model


def with_overrides(config: RunConfig, **kw) -> RunConfig:
    return replace(config, **kw)
