"""Log-frequency spectrogram front end.

Audio at 22.05 kHz is framed at exactly 20 frames per second. The hop is
1102.5 samples, so frame ``t`` is centred on sample ``round(t * 1102.5)``
(half-up rounding). Each frame is Hann-windowed over 2048 samples, its
magnitude spectrum is pooled by 78 triangular filters spaced uniformly in
log-frequency between 60 Hz and 6 kHz, and the result is compressed with
``log(1 + x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal.windows import hann

from .errors import DimensionError

SAMPLE_RATE = 22050
FPS = 20
HOP = SAMPLE_RATE / FPS
FRAME_SIZE = 2048
N_FFT_BINS = FRAME_SIZE // 2 + 1
N_BANDS = 78
FMIN = 60.0
FMAX = 6000.0
EXCERPT_FRAMES = 40

WINDOW = "hann"
PAD_MODE = "reflect"
COMPRESSION = "log1p"


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DimensionError(f"audio must be mono (1-D), got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    values: np.ndarray  # (N_BANDS, T)
    frame_rate: int = FPS

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


@dataclass
class AudioExcerpt:
    values: np.ndarray  # (N_BANDS, EXCERPT_FRAMES)
    end_frame: int


def frame_centers(n_samples: int) -> np.ndarray:
    n_frames = int(np.ceil(n_samples / HOP))
    return np.floor(np.arange(n_frames) * HOP + 0.5).astype(np.int64)


def stft_magnitude(signal: AudioSignal) -> np.ndarray:
    """Return the (T, 1025) magnitude spectrogram of ``signal``."""
    if signal.sample_rate != SAMPLE_RATE:
        raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, got {signal.sample_rate}")
    x = signal.samples
    if len(x) == 0:
        raise ValueError("cannot compute a spectrogram of an empty signal")
    half = FRAME_SIZE // 2
    padded = np.pad(x, half, mode=PAD_MODE)
    centers = frame_centers(len(x))
    # frame t covers x[c - half : c + half], i.e. padded[c : c + FRAME_SIZE]
    frames = padded[centers[:, None] + np.arange(FRAME_SIZE)[None, :]]
    return np.abs(np.fft.rfft(frames * _window(), axis=1))


@lru_cache(maxsize=1)
def _window() -> np.ndarray:
    return hann(FRAME_SIZE, sym=False)


def filter_frequencies() -> np.ndarray:
    """Corner frequencies: ``N_BANDS + 2`` points, geometric from FMIN to FMAX."""
    return np.geomspace(FMIN, FMAX, N_BANDS + 2)


def filter_centers() -> np.ndarray:
    return filter_frequencies()[1:-1]


@lru_cache(maxsize=1)
def _filterbank() -> np.ndarray:
    bin_hz = SAMPLE_RATE / FRAME_SIZE
    corners = filter_frequencies() / bin_hz  # fractional FFT bin positions
    bins = np.arange(N_FFT_BINS, dtype=np.float64)
    bank = np.zeros((N_BANDS, N_FFT_BINS))
    for i in range(N_BANDS):
        lo, mid, hi = corners[i : i + 3]
        rising = (bins - lo) / (mid - lo)
        falling = (hi - bins) / (hi - mid)
        row = np.clip(np.minimum(rising, falling), 0.0, None)
        if row.sum() == 0.0:
            # narrow low-frequency filter falling between two FFT bins
            row[int(np.floor(mid + 0.5))] = 1.0
        bank[i] = row / row.sum()
    bank.setflags(write=False)
    return bank


def build_log_filterbank() -> np.ndarray:
    """Return the (78, 1025) triangular log-frequency filterbank.

    Rows are ordered by ascending centre frequency and each sums to one.
    """
    return _filterbank().copy()


def spectrogram(signal: AudioSignal) -> Spectrogram:
    mag = stft_magnitude(signal)
    return Spectrogram(np.log1p(_filterbank() @ mag.T))


def excerpt(spec: Spectrogram, end_frame: int) -> AudioExcerpt:
    """Cut the 40 frames ending at ``end_frame`` (inclusive), zero-filling the left."""
    t = spec.frames
    if not 0 <= end_frame < t:
        raise IndexError(f"end_frame {end_frame} outside [0, {t})")
    start = end_frame - EXCERPT_FRAMES + 1
    out = np.zeros((spec.bins, EXCERPT_FRAMES))
    src = spec.values[:, max(start, 0) : end_frame + 1]
    out[:, EXCERPT_FRAMES - src.shape[1] :] = src
    return AudioExcerpt(out, end_frame)


def read_wav(path: str | Path) -> AudioSignal:
    """Read a PCM16 or float WAV; stereo is averaged to mono, no resampling."""
    rate, data = wavfile.read(str(path))
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: sample rate must be {SAMPLE_RATE} Hz, got {rate}")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return AudioSignal(data, rate)


def write_wav(path: str | Path, signal: AudioSignal) -> None:
    """Write a 64-bit float WAV so samples round-trip exactly."""
    wavfile.write(str(path), signal.sample_rate, signal.samples.astype(np.float64))
