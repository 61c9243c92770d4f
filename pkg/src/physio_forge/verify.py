"""Self-checks of the numerical core against independent oracles.

Each suite returns the largest error it observed and whether that error is
within tolerance. The CLI ``verify`` subcommand runs them all.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from . import metrics
from .autodiff import grad_check
from .cwt import build_filterbank, cwt_direct_oracle, cwt_forward
from .models.config import ArchitectureConfig, HeadConfig
from .models.network import JointModel
from .rppg_maps import RegionTraceSet, build_mstmap, enumerate_subsets

GRAD_TOL = 1e-4
CWT_TOL = 1e-6
AUC_TOL = 1e-12

# modality, fusion pairs covering appearance-only, two-branch rPPG and both fusions
BRANCH_VARIANTS = (("appearance", "none"), ("rppg", "none"), ("both", "concat"), ("both", "weighted_norm"))


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    cases: int
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max error {self.max_error:.3e} (tol {self.tolerance:.0e}, {self.cases} cases, {self.seconds:.1f}s)"


# gradient suite


def tiny_architecture(modality: str, fusion: str, head: str, n_shared: int) -> ArchitectureConfig:
    """Two 2-channel blocks on 4x4 inputs: small enough for exhaustive finite differences."""
    return ArchitectureConfig(
        modality=modality,
        fusion=fusion,
        head=HeadConfig(head),
        n_shared=n_shared,
        block_channels=(2, 2),
        feature_dim=3,
        mst_input=(4, 4),
        wav_input=(4, 4),
        app_input=(4, 4),
    )


def architecture_variants() -> list[ArchitectureConfig]:
    """Every branch variant x head mode x ``n_shared`` in {0, N/2, N}."""
    return [
        tiny_architecture(modality, fusion, head, n_shared)
        for (modality, fusion), head, n_shared in itertools.product(BRANCH_VARIANTS, ("1h2c", "1h3c", "2h2c"), (0, 1, 2))
    ]


def model_grad_error(arch: ArchitectureConfig, seed: int = 0, epsilon: float = 1e-5) -> float:
    """grad_check of the overall training loss of a joint model on a fixed mixed batch."""
    model = JointModel(arch, seed=seed)
    rng = np.random.default_rng([seed, 1])
    inputs = {k: rng.normal(size=(4, *getattr(arch, f"{k}_input"), 3)) for k in ("mst", "wav", "app")}
    tasks = np.array(["spoof", "forgery", "spoof", "forgery"])
    labels = np.array([1.0, 0.0, 0.0, 1.0])
    return grad_check(lambda: model.loss(model.forward(inputs, tasks, True), labels, tasks), model.parameters(), epsilon)


def suite_grad() -> tuple[float, int]:
    errors = [model_grad_error(arch) for arch in architecture_variants()]
    return max(errors), len(errors)


# CWT suite


def cwt_relative_error(signal: np.ndarray, fb) -> float:
    """Relative L2 distance between the FFT transform and row-by-row quadrature."""
    fast = cwt_forward(signal, fb).values
    direct = np.stack([cwt_direct_oracle(signal, fb, k) for k in range(fb.n_scales)])
    return float(np.linalg.norm(fast - direct) / np.linalg.norm(direct))


def suite_cwt(n_signals: int = 3, n: int = 256, fps: float = 30.0) -> tuple[float, int]:
    fb = build_filterbank(n, fps)
    rng = np.random.default_rng(2024)
    errors = [cwt_relative_error(rng.standard_normal(n), fb) for _ in range(n_signals)]
    return max(errors), n_signals


# metric suite


def auc_pairs(scores, labels) -> Fraction:
    """O(P*N) Mann-Whitney count, ties counted 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(Fraction(1) if p > q else Fraction(1, 2) if p == q else Fraction(0) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def eer_sweep(scores, labels) -> Fraction:
    """Exhaustive sweep over distinct scores in exact arithmetic."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    best = None
    for th in sorted(set(scores)):
        far = Fraction(sum(q >= th for q in neg), len(neg))
        frr = Fraction(sum(p < th for p in pos), len(pos))
        gap = abs(far - frr)
        if best is None or gap < best[0]:
            best = (gap, (far + frr) / 2)
    return best[1]


def tpr_sweep(scores, labels, target: float) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    best = 0.0
    for th in sorted(set(scores)) + [float("inf")]:
        fpr = sum(q >= th for q in neg) / len(neg)
        if fpr <= target:
            best = max(best, sum(p >= th for p in pos) / len(pos))
    return best


def random_score_set(rng: np.random.Generator, max_size: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Random sizes and class balance, with heavy ties from coarse rounding."""
    n = int(rng.integers(2, max_size + 1))
    labels = rng.integers(0, 2, size=n)
    labels[:2] = (0, 1)
    rng.shuffle(labels)
    scores = np.round(rng.normal(labels * rng.uniform(0, 2), 1.0), int(rng.integers(0, 3)))
    return scores, labels


def suite_metrics(n_sets: int = 100, max_size: int = 60) -> tuple[float, int]:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(n_sets):
        scores, labels = random_score_set(rng, max_size)
        s, y = scores.tolist(), labels.tolist()
        worst = max(worst, abs(metrics.auc(scores, labels) - float(auc_pairs(s, y))))
        if metrics.eer(scores, labels) != float(eer_sweep(s, y)):
            worst = max(worst, 1.0)
        for t in metrics.FPR_TARGETS:
            if metrics.tpr_at_fpr(scores, t, labels) != tpr_sweep(s, y, t):
                worst = max(worst, 1.0)
    return worst, n_sets


# map suite


def suite_maps() -> tuple[float, int]:
    """MSTmap rows against a per-subset loop, plus the [0, 1] range."""
    rng = np.random.default_rng(11)
    K, T = 4, 40
    trace = RegionTraceSet(rng.normal(size=(K, T, 3)) + 50.0, 30.0)
    mst = build_mstmap(trace, T).values
    worst = 0.0
    for row, subset in enumerate(enumerate_subsets(K)):
        mean = trace.values[list(subset)].mean(axis=0)
        lo, hi = mean.min(axis=0), mean.max(axis=0)
        worst = max(worst, float(np.abs(mst[row] - (mean - lo) / (hi - lo)).max()))
    if mst.min() < 0 or mst.max() > 1:
        worst = max(worst, 1.0)
    return worst, len(enumerate_subsets(K))


SUITES: dict[str, tuple[Callable[[], tuple[float, int]], float]] = {
    "grad": (suite_grad, GRAD_TOL),
    "cwt": (suite_cwt, CWT_TOL),
    "metrics": (suite_metrics, AUC_TOL),
    "maps": (suite_maps, 1e-12),
}


def run_suite(name: str) -> SuiteResult:
    fn, tol = SUITES[name]
    start = time.perf_counter()
    err, cases = fn()
    return SuiteResult(name, bool(err < tol), float(err), tol, cases, time.perf_counter() - start)


def run_all(names=None) -> list[SuiteResult]:
    return [run_suite(n) for n in (names or SUITES)]
