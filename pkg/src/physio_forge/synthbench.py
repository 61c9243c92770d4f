"""Deterministic synthetic benchmark for joint spoof/forgery detection.

Bonafide traces carry a periodic pulse; spoof traces carry broadband flicker
with no coherent rhythm; forgery traces keep a weak, phase-scrambled pulse.
Appearance patches add a high-frequency grid (spoof) or a blending seam
(forgery) on top of a smooth face-like blob. Cross domains raise noise and
drift and shift the colour tint.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cwt import cached_filterbank, wavelet_map
from .data import DatasetHandle, SampleRecord, load_dataset, write_manifest
from .errors import ParameterError
from .mapio import write_map
from .rppg_maps import RegionTraceSet, build_mstmap

CLASSES = ("bonafide", "spoof", "forgery")
SKIN = np.array([0.75, 0.55, 0.45])
PULSE_WEIGHTS = np.array([0.35, 1.0, 0.55])
FLICKER_WEIGHTS = np.array([0.9, 1.0, 0.95])
FORGERY_ATTENUATION = 0.15


@dataclass(frozen=True)
class DomainSpec:
    name: str
    fps: float = 30.0
    noise_sigma: float = 0.3
    illumination_drift: float = 0.5
    motion_rate: float = 0.0  # artifact events per second
    tint: tuple[float, float, float] = (0.0, 0.0, 0.0)
    texture_freq: float = 1.5  # shading cycles per patch
    grain: float = 0.01

    def __post_init__(self):
        if not self.fps > 0:
            raise ParameterError(f"domain {self.name}: fps must be positive")
        if self.noise_sigma < 0 or self.grain < 0 or self.motion_rate < 0:
            raise ParameterError(f"domain {self.name}: noise levels must be non-negative")

    def shifted(self, name: str, tint: Sequence[float]) -> "DomainSpec":
        """Cross-domain counterpart: noise x3, drift x2, new tint."""
        return replace(
            self,
            name=name,
            noise_sigma=3.0 * self.noise_sigma,
            illumination_drift=2.0 * self.illumination_drift,
            motion_rate=2.0 * self.motion_rate,
            tint=tuple(tint),
            grain=2.0 * self.grain,
        )


@dataclass(frozen=True)
class SampleSpec:
    cls: str
    task: str
    seed: int
    bpm: float = 72.0
    n_frames: int = 300
    K: int = 6

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ParameterError(f"unknown sample class {self.cls!r}")
        if not 48.0 <= self.bpm <= 150.0:
            raise ParameterError(f"heart rate {self.bpm} bpm outside [48, 150]")


def _base_trace(spec: SampleSpec, domain: DomainSpec, rng: np.random.Generator):
    n, K = spec.n_frames, spec.K
    t = np.arange(n) / domain.fps
    dc = 100.0 * (SKIN + np.asarray(domain.tint)) * rng.uniform(0.85, 1.15, size=(K, 1))
    gains = rng.uniform(0.7, 1.3, size=K)
    return t, dc, gains


def _nuisance(n: int, K: int, t: np.ndarray, dc: np.ndarray, domain: DomainSpec, rng) -> np.ndarray:
    """Illumination drift, motion bumps and sensor noise, shape [K, n, 3]."""
    f_drift = rng.uniform(0.05, 0.2)
    drift = domain.illumination_drift * np.sin(2 * np.pi * f_drift * t + rng.uniform(0, 2 * np.pi))
    events = rng.poisson(domain.motion_rate * t[-1]) if len(t) > 1 else 0
    motion = np.zeros(n)
    for _ in range(events):
        center, amp = rng.uniform(0, t[-1]), 3.0 * rng.choice([-1.0, 1.0])
        motion += amp * np.exp(-0.5 * ((t - center) / 0.25) ** 2)
    common = (drift + motion)[None, :, None] * (dc[:, None, :] / 100.0)
    return common + domain.noise_sigma * rng.standard_normal((K, n, 3))


def broadband(n: int, fps: float, rng: np.random.Generator, low: float = 0.3) -> np.ndarray:
    """Unit-rms noise with a flat amplitude spectrum above ``low`` Hz and random phases."""
    freqs = np.fft.rfftfreq(n, 1.0 / fps)
    spec = np.where(freqs >= low, 1.0, 0.0) * np.exp(2j * np.pi * rng.uniform(size=freqs.size))
    if n % 2 == 0:
        spec[-1] = spec[-1].real
    x = np.fft.irfft(spec, n)
    return x / x.std()


def gen_bonafide_trace(spec: SampleSpec, domain: DomainSpec) -> RegionTraceSet:
    """DC + pulse (with a 0.3x second harmonic) per region, plus domain nuisances."""
    if spec.cls != "bonafide":
        raise ParameterError("gen_bonafide_trace needs a bonafide sample spec")
    rng = np.random.default_rng(spec.seed)
    t, dc, gains = _base_trace(spec, domain, rng)
    f = spec.bpm / 60.0
    phase = rng.uniform(0, 2 * np.pi) + rng.uniform(-0.4, 0.4, size=spec.K)
    harm_phase = rng.uniform(0, 2 * np.pi)
    wave = np.cos(2 * np.pi * f * t[None, :] + phase[:, None]) + 0.3 * np.cos(
        2 * np.pi * 2 * f * t[None, :] + 2 * phase[:, None] + harm_phase
    )
    pulse = gains[:, None, None] * wave[:, :, None] * PULSE_WEIGHTS
    values = dc[:, None, :] + pulse + _nuisance(spec.n_frames, spec.K, t, dc, domain, rng)
    return RegionTraceSet(values, domain.fps)


def gen_attack_trace(spec: SampleSpec, domain: DomainSpec) -> RegionTraceSet:
    """Spoof: broadband flicker, no rhythm. Forgery: attenuated pulse, phase-scrambled about once a second."""
    if spec.cls == "bonafide":
        raise ParameterError("gen_attack_trace needs a spoof or forgery sample spec")
    rng = np.random.default_rng(spec.seed)
    t, dc, gains = _base_trace(spec, domain, rng)
    n = spec.n_frames
    if spec.cls == "spoof":
        flicker = broadband(n, domain.fps, rng)
        signal = gains[:, None, None] * flicker[None, :, None] * FLICKER_WEIGHTS
    else:
        f = spec.bpm / 60.0
        seg_phase = np.zeros(n)
        start = 0
        while start < n:
            length = max(1, int(round(domain.fps * rng.uniform(0.8, 1.2))))
            # each segment jumps by up to a quarter cycle from the previous one
            jump = rng.uniform(-0.5 * np.pi, 0.5 * np.pi) if start else 0.0
            seg_phase[start : start + length] = seg_phase[start - 1] + jump if start else 0.0
            start += length
        region_phase = rng.uniform(-0.4, 0.4, size=spec.K)
        arg = 2 * np.pi * f * t[None, :] + seg_phase[None, :] + region_phase[:, None]
        wave = FORGERY_ATTENUATION * (np.cos(arg) + 0.3 * np.cos(2 * arg))
        blend = 0.25 * broadband(n, domain.fps, rng)
        signal = gains[:, None, None] * (wave[:, :, None] * PULSE_WEIGHTS + blend[None, :, None] * FLICKER_WEIGHTS)
    values = dc[:, None, :] + signal + _nuisance(n, spec.K, t, dc, domain, rng)
    return RegionTraceSet(values, domain.fps)


def gen_trace(spec: SampleSpec, domain: DomainSpec) -> RegionTraceSet:
    return gen_bonafide_trace(spec, domain) if spec.cls == "bonafide" else gen_attack_trace(spec, domain)


def gen_appearance_patch(spec: SampleSpec, domain: DomainSpec, size: int = 32) -> np.ndarray:
    """``[size, size, 3]`` patch in roughly [0, 1]."""
    rng = np.random.default_rng([spec.seed, 1])
    yy, xx = np.mgrid[0:size, 0:size] / size
    cy, cx = rng.uniform(0.48, 0.52, size=2)
    width = rng.uniform(0.2, 0.3)
    blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
    radius = np.hypot(yy - cy, xx - cx)
    shading = 0.05 * np.cos(2 * np.pi * domain.texture_freq * radius + rng.uniform(0, 2 * np.pi))
    base = 0.25 + 0.5 * blob + shading
    patch = base[:, :, None] * (SKIN + np.asarray(domain.tint))
    if spec.cls == "spoof":
        fx, fy = rng.uniform(0.3, 0.45, size=2) * rng.choice([-1, 1], size=2)
        grid = np.cos(2 * np.pi * size * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
        patch = patch + 0.06 * grid[:, :, None]
    elif spec.cls == "forgery":
        seam = int(rng.integers(size // 2 - 4, size // 2 + 5))
        shift = rng.uniform(0.12, 0.2) * rng.choice([-1, 1]) * np.array([1.0, 0.8, 0.6])
        patch[:, seam:, :] += shift
    patch = patch + domain.grain * rng.standard_normal(patch.shape)
    return patch


@dataclass(frozen=True)
class BenchmarkSpec:
    """Domains per task and sample counts.

    Intra domains are split into train and test; cross domains are test only.
    """

    seed: int = 0
    samples_per_class: int = 200
    train_fraction: float = 0.5
    K: int = 6
    T: int = 300
    frames_min: int = 270
    frames_max: int = 330
    voices_per_octave: int = 48
    domains: dict[str, dict[str, tuple[DomainSpec, ...]]] = field(default_factory=lambda: default_domains())

    def __post_init__(self):
        if self.samples_per_class < 1:
            raise ParameterError("samples_per_class must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ParameterError("train_fraction must lie in (0, 1)")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ParameterError("need 1 <= frames_min <= frames_max")


def default_domains(n_intra: int = 2, n_cross: int = 2) -> dict[str, dict[str, tuple[DomainSpec, ...]]]:
    out = {}
    for t_i, task in enumerate(("spoof", "forgery")):
        intra = tuple(
            DomainSpec(
                f"{task}_intra_{chr(97 + i)}",
                noise_sigma=0.25 + 0.1 * i + 0.05 * t_i,
                illumination_drift=0.4 + 0.2 * i,
                tint=(0.02 * i, -0.01 * t_i, 0.0),
                texture_freq=1.0 + 0.5 * i,
            )
            for i in range(n_intra)
        )
        cross = tuple(
            intra[i % n_intra].shifted(f"{task}_cross_{chr(97 + i)}", (0.08 - 0.16 * (i % 2), 0.04, -0.05 + 0.03 * t_i))
            for i in range(n_cross)
        )
        out[task] = {"intra": intra, "cross": cross}
    return out


def sample_seed(master_seed: int, sample_id: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{sample_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def attack_class(task: str) -> str:
    return "spoof" if task == "spoof" else "forgery"


def make_sample(bench: BenchmarkSpec, domain: DomainSpec, task: str, label: str, sample_id: str):
    """Regenerate one sample's (MSTmap, WaveletMap, appearance) arrays from its id."""
    seed = sample_seed(bench.seed, sample_id)
    rng = np.random.default_rng([seed, 7])
    n_frames = int(rng.integers(bench.frames_min, bench.frames_max + 1))
    bpm = float(rng.uniform(48.0, 150.0))
    cls = "bonafide" if label == "bonafide" else attack_class(task)
    spec = SampleSpec(cls, task, seed, bpm=bpm, n_frames=n_frames, K=bench.K)
    trace = gen_trace(spec, domain)
    mst = build_mstmap(trace, bench.T).values
    fb = cached_filterbank(bench.T, float(domain.fps), bench.voices_per_octave)
    wav = wavelet_map(trace, bench.T, fb).values
    app = gen_appearance_patch(spec, domain)
    return mst, wav, app


def gen_dataset(bench: BenchmarkSpec, out_dir: str | os.PathLike) -> dict[str, Path]:
    """Write every sample's maps plus ``train.tsv``, ``test_intra.tsv`` and ``test_cross.tsv``.

    Returns the manifest paths keyed by split.
    """
    out = Path(out_dir)
    maps = out / "maps"
    try:
        maps.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {maps}: {exc.strerror}") from exc
    splits: dict[str, list[SampleRecord]] = {"train": [], "test_intra": [], "test_cross": []}
    n_train = int(round(bench.train_fraction * bench.samples_per_class))
    for task in ("spoof", "forgery"):
        for scope in ("intra", "cross"):
            for domain in bench.domains[task][scope]:
                for label in ("bonafide", "attack"):
                    for i in range(bench.samples_per_class):
                        sid = f"{domain.name}-{label}-{i:04d}"
                        arrays = make_sample(bench, domain, task, label, sid)
                        rels = []
                        for suffix, arr in zip(("mst", "wav", "app"), arrays):
                            rel = f"maps/{sid}.{suffix}.pfm"
                            target = out / rel
                            try:
                                write_map(target, arr)
                            except OSError as exc:
                                raise OSError(f"cannot write {target}: {exc.strerror}") from exc
                            rels.append(rel)
                        rec = SampleRecord(sid, task, label, domain.name, *rels)
                        if scope == "cross":
                            splits["test_cross"].append(rec)
                        elif i < n_train:
                            splits["train"].append(rec)
                        else:
                            splits["test_intra"].append(rec)
    paths = {}
    for split, recs in splits.items():
        paths[split] = out / f"{split}.tsv"
        write_manifest(paths[split], recs)
    return paths


def load_benchmark(out_dir: str | os.PathLike) -> dict[str, DatasetHandle]:
    out = Path(out_dir)
    return {split: load_dataset(out / f"{split}.tsv") for split in ("train", "test_intra", "test_cross")}
