"""Continuous wavelet transform with a generalized Morse filterbank.

The filterbank is defined in the frequency domain,
``Psi(w) = a * w**beta * exp(-w**gamma)`` for ``w > 0`` and zero otherwise,
with ``a`` chosen so the peak gain is 2. Scales are spaced
``voices_per_octave`` per octave between ``min_freq`` and Nyquist. Boundary
handling is circular.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, ParameterError
from .rppg_maps import RegionTraceSet, Signal, global_signal

MIN_FREQ = 0.5


def morse_peak(gamma: float, beta: float) -> float:
    """Radian frequency where ``w**beta * exp(-w**gamma)`` is maximal."""
    return (beta / gamma) ** (1.0 / gamma)


def morse_response(omega: np.ndarray, gamma: float, beta: float) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64)
    out = np.zeros_like(omega)
    pos = omega > 0
    w = omega[pos]
    log_a = np.log(2.0) + (beta / gamma) * (1.0 + np.log(gamma / beta))
    out[pos] = np.exp(log_a + beta * np.log(w) - w**gamma)
    return out


@dataclass(frozen=True)
class Filterbank:
    n_samples: int
    fps: float
    voices_per_octave: int
    gamma: float
    beta: float
    scales: np.ndarray  # increasing, in samples
    peak_freqs: np.ndarray  # Hz, decreasing
    freq_responses: np.ndarray  # [S, n_samples] on the DFT grid

    @property
    def n_scales(self) -> int:
        return len(self.scales)


def scale_count(min_freq: float, max_freq: float, voices_per_octave: int) -> int:
    return int(np.floor(np.log2(max_freq / min_freq) * voices_per_octave + 1e-9)) + 1


def build_filterbank(
    n_samples: int,
    fps: float,
    voices_per_octave: int = 48,
    gamma: float = 3.0,
    beta: float = 20.0,
    min_freq: float = MIN_FREQ,
    max_freq: float | None = None,
) -> Filterbank:
    if n_samples < 16:
        raise ParameterError(f"n_samples must be >= 16, got {n_samples}")
    if not fps > 0:
        raise ParameterError(f"fps must be positive, got {fps}")
    if voices_per_octave < 1 or gamma <= 0 or beta <= 0:
        raise ParameterError(f"invalid Morse/voice parameters: voices={voices_per_octave}, gamma={gamma}, beta={beta}")
    nyquist = fps / 2.0
    max_freq = nyquist if max_freq is None else max_freq
    if not 0 < min_freq < max_freq <= nyquist:
        raise ParameterError(f"frequency range must satisfy 0 < {min_freq} < {max_freq} <= {nyquist}")
    n_scales = scale_count(min_freq, max_freq, voices_per_octave)
    peak_freqs = max_freq * 2.0 ** (-np.arange(n_scales) / voices_per_octave)
    # scale d puts the wavelet peak at omega_peak / d radians per sample
    scales = morse_peak(gamma, beta) * fps / (2.0 * np.pi * peak_freqs)
    k = np.arange(n_samples)
    omega = 2.0 * np.pi * k / n_samples
    omega[k > n_samples // 2] = 0.0
    responses = morse_response(scales[:, None] * omega[None, :], gamma, beta)
    return Filterbank(n_samples, fps, voices_per_octave, gamma, beta, scales, peak_freqs, responses)


@lru_cache(maxsize=16)
def cached_filterbank(n_samples: int, fps: float, voices_per_octave: int = 48) -> Filterbank:
    return build_filterbank(n_samples, fps, voices_per_octave)


@dataclass
class WaveletMap:
    values: np.ndarray  # [S, T], non-negative
    scale_axis: np.ndarray
    time_axis: np.ndarray

    def as_channels(self, n: int = 3) -> np.ndarray:
        """``[S, T, n]`` copy for encoders that expect colour channels."""
        return np.repeat(self.values[:, :, None], n, axis=2)


def _samples(signal) -> np.ndarray:
    return np.asarray(signal.samples if isinstance(signal, Signal) else signal, dtype=np.float64)


def cwt_coefficients(signal, fb: Filterbank) -> np.ndarray:
    s = _samples(signal)
    if s.ndim != 1 or s.shape[0] != fb.n_samples:
        raise DimensionError(f"signal length {s.shape} does not match filterbank n_samples={fb.n_samples}")
    spectrum = np.fft.fft(s)
    return np.fft.ifft(spectrum[None, :] * np.conj(fb.freq_responses), axis=1)


def cwt_forward(signal, fb: Filterbank) -> WaveletMap:
    """Magnitude of the analytic wavelet coefficients at every scale and shift."""
    mags = np.abs(cwt_coefficients(signal, fb))
    return WaveletMap(mags, fb.peak_freqs.copy(), np.arange(fb.n_samples))


def time_domain_wavelet(fb: Filterbank, scale_index: int) -> np.ndarray:
    return np.fft.ifft(fb.freq_responses[scale_index])


def cwt_direct_oracle(signal, fb: Filterbank, scale_index: int, tau: int | None = None):
    """Trapezoidal quadrature of the wavelet inner product at one scale.

    Integrates ``S(t) * conj(psi_d(t - tau))`` over one period with unit
    sample spacing, returning the magnitude at shift ``tau`` or, when ``tau``
    is None, at every shift. O(n^2) per scale; only used to validate
    :func:`cwt_forward`.
    """
    s = _samples(signal)
    n = fb.n_samples
    psi = time_domain_wavelet(fb, scale_index)
    t = np.arange(n + 1)
    taus = np.arange(n) if tau is None else np.array([tau])
    integrand = s[t % n][None, :] * np.conj(psi[(t[None, :] - taus[:, None]) % n])
    out = np.abs(np.trapezoid(integrand, dx=1.0, axis=1))
    return out if tau is None else float(out[0])


def wavelet_map(trace: RegionTraceSet, T: int = 300, fb: Filterbank | None = None, channel: str = "green") -> WaveletMap:
    """Global pulse signal -> CWT magnitudes -> min-max scaled to [0, 1]."""
    sig = global_signal(trace, T, channel)
    fb = fb if fb is not None else cached_filterbank(T, float(trace.fps))
    wm = cwt_forward(sig, fb)
    if sig.degenerate:
        wm.values = np.zeros_like(wm.values)
        return wm
    lo, hi = wm.values.min(), wm.values.max()
    wm.values = (wm.values - lo) / (hi - lo) if hi > lo else np.zeros_like(wm.values)
    return wm
