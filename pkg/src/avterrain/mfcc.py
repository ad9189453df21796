"""MFCC descriptors for long audio analysis windows.

Each frame of a stream gets one cepstral vector computed over a single long
window (seconds, not the usual 25 ms), so the whole window is transformed by
one zero-padded FFT instead of a short-time framing loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

LOG_FLOOR = 1e-10

_WINDOWS = {
    "hamming": np.hamming,
    "hann": np.hanning,
    "rect": np.ones,
}


@dataclass(frozen=True)
class MfccConfig:
    n_coeffs: int = 26
    fft_size: int = 65536
    n_mel_filters: int = 26
    preemphasis: float = 0.97
    window_fn: str = "hamming"

    def __post_init__(self):
        if self.n_coeffs < 1 or self.n_mel_filters < 1:
            raise ValueError("n_coeffs and n_mel_filters must be positive")
        if self.n_coeffs > self.n_mel_filters:
            raise ValueError(
                f"n_coeffs ({self.n_coeffs}) exceeds n_mel_filters ({self.n_mel_filters})"
            )
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0.0 <= self.preemphasis < 1.0:
            raise ValueError(f"preemphasis must lie in [0, 1), got {self.preemphasis}")
        if self.window_fn not in _WINDOWS:
            raise ValueError(
                f"unknown window_fn {self.window_fn!r}; choose from {sorted(_WINDOWS)}"
            )


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=float) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=float) / 2595.0) - 1.0)


def mel_filter_centers(sample_rate: float, n_filters: int) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters spanning 0..Nyquist."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2))
    return edges[1:-1]


def mel_filterbank(sample_rate: float, fft_size: int, n_filters: int) -> np.ndarray:
    """Triangular mel filterbank of shape (n_filters, fft_size // 2 + 1).

    Triangles are evaluated at the exact bin frequencies rather than snapped
    to bin indices, which matters little at 2**16 points but keeps narrow
    low-frequency filters non-empty for small FFTs.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _check_window(window: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    window = np.asarray(window, dtype=float)
    if window.ndim != 1:
        raise ValueError("audio window must be one-dimensional")
    if window.size == 0:
        raise ValueError("empty audio window")
    if window.size > cfg.fft_size:
        raise ValueError(
            f"window of {window.size} samples is longer than fft_size {cfg.fft_size}"
        )
    return window


def _log_mel_batch(windows: np.ndarray, sample_rate: float, cfg: MfccConfig,
                   fbank: np.ndarray) -> np.ndarray:
    # windows: (n, L)
    padded = np.zeros((windows.shape[0], cfg.fft_size))
    n = windows.shape[1]
    padded[:, :n] = windows
    padded[:, 1:n] -= cfg.preemphasis * windows[:, :-1]
    padded[:, :n] *= _WINDOWS[cfg.window_fn](n)
    spectrum = scipy.fft.rfft(padded, axis=1)
    power = spectrum.real**2
    power += spectrum.imag**2
    energies = (power @ fbank.T) / cfg.fft_size
    return np.log(np.maximum(energies, LOG_FLOOR))


def log_mel_energies(window, sample_rate: float, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Floored log mel-filterbank energies of one window (before the DCT)."""
    window = _check_window(window, cfg)
    fbank = mel_filterbank(sample_rate, cfg.fft_size, cfg.n_mel_filters)
    return _log_mel_batch(window[None, :], sample_rate, cfg, fbank)[0]


def compute_mfcc(window, sample_rate: float, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """MFCC vector of a single PCM window.

    Coefficient 0 is kept. The DCT is orthonormal, so a global gain change only
    moves coefficient 0.
    """
    log_e = log_mel_energies(window, sample_rate, cfg)
    return scipy.fft.dct(log_e, type=2, norm="ortho")[: cfg.n_coeffs]


def mfcc_batch(windows, sample_rate: float, cfg: MfccConfig = MfccConfig(),
               chunk: int = 32) -> np.ndarray:
    """MFCCs of a (n_windows, window_len) array, computed in FFT chunks."""
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 2:
        raise ValueError("expected a 2-D array of windows")
    _check_window(windows[0] if len(windows) else np.empty(0), cfg)
    fbank = mel_filterbank(sample_rate, cfg.fft_size, cfg.n_mel_filters)
    out = np.empty((len(windows), cfg.n_coeffs))
    for lo in range(0, len(windows), chunk):
        log_e = _log_mel_batch(windows[lo:lo + chunk], sample_rate, cfg, fbank)
        out[lo:lo + chunk] = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, : cfg.n_coeffs]
    return out


def mfcc_stream(stream, cfg: MfccConfig = MfccConfig(), chunk: int = 32) -> np.ndarray:
    """One MFCC vector per frame of an aligned stream, shape (n_frames, n_coeffs)."""
    n = stream.n_frames
    if stream.window_samples > cfg.fft_size:
        raise ValueError(
            f"window of {stream.window_samples} samples is longer than fft_size {cfg.fft_size}"
        )
    fbank = mel_filterbank(stream.sample_rate, cfg.fft_size, cfg.n_mel_filters)
    out = np.empty((n, cfg.n_coeffs))
    for lo in range(0, n, chunk):
        idx = range(lo, min(n, lo + chunk))
        block = np.stack([stream.audio_window(t) for t in idx])
        log_e = _log_mel_batch(block, stream.sample_rate, cfg, fbank)
        out[lo:lo + len(idx)] = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, : cfg.n_coeffs]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite MFCC coefficients")
    return out
