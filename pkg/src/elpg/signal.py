"""EEG preprocessing: trimming, zero-phase FIR band filtering, baseline
removal, electrode-wise normalization, windowing and band decomposition."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy import signal as sps

from .errors import InputError, NormalizationError

FIR_TAPS = 251


@dataclass(frozen=True)
class BandSpec:
    name: str
    lo: float
    hi: float

    def validate(self, fs: float) -> None:
        if not 0 < self.lo < self.hi:
            raise InputError(f"band {self.name}: need 0 < lo < hi, got {self.lo}-{self.hi} Hz")
        if self.hi >= fs / 2:
            raise InputError(f"band {self.name}: upper edge {self.hi} Hz reaches Nyquist {fs / 2} Hz")


DELTA = BandSpec("delta", 0.5, 4.0)
THETA = BandSpec("theta", 4.0, 8.0)
ALPHA = BandSpec("alpha", 8.0, 13.0)
BETA = BandSpec("beta", 13.0, 30.0)
DEFAULT_BANDS = (DELTA, THETA, ALPHA, BETA)
BROADBAND = BandSpec("broadband", 0.3, 30.0)


@dataclass
class Recording:
    """Multi-channel EEG: ``samples`` is (n_channels, n_samples) in microvolts,
    ``coords`` is (n_channels, 3) in millimetres."""

    samples: np.ndarray
    fs: float
    coords: np.ndarray
    subject_id: str = ""
    label: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 2:
            raise InputError(f"samples must be (N>=2, S), got {self.samples.shape}")
        if self.coords.shape != (self.samples.shape[0], 3):
            raise InputError(f"coords must be ({self.samples.shape[0]}, 3), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise InputError("coords must be finite")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs


@dataclass
class WindowedRecording:
    """Windows of shape (T, N, L) cut from a recording with 50 % overlap by default."""

    windows: np.ndarray
    fs: float
    window_sec: float = 4.0
    overlap: float = 0.5

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]


def window_count(n_samples: int, window_len: int, hop: int) -> int:
    if n_samples < window_len:
        return 0
    return (n_samples - window_len) // hop + 1


def _window_geometry(fs, window_sec, overlap):
    L = int(round(window_sec * fs))
    hop = int(round(L * (1.0 - overlap)))
    if L < 1 or hop < 1:
        raise InputError(f"window of {window_sec} s with overlap {overlap} is empty at fs={fs}")
    return L, hop


def trim_edges(rec: Recording, head_sec: float = 10.0, tail_sec: float = 10.0) -> Recording:
    head = int(round(head_sec * rec.fs))
    tail = int(round(tail_sec * rec.fs))
    if rec.n_samples <= head + tail:
        raise InputError(
            f"recording of {rec.duration:.1f} s is too short to trim {head_sec}+{tail_sec} s"
        )
    return replace(rec, samples=rec.samples[:, head: rec.n_samples - tail].copy())


def design_bandpass(band: BandSpec, fs: float, numtaps: int = FIR_TAPS) -> np.ndarray:
    """Hamming-windowed sinc band-pass taps."""
    band.validate(fs)
    return sps.firwin(numtaps, [band.lo, band.hi], pass_zero=False, window="hamming", fs=fs)


def filter_array(x: np.ndarray, band: BandSpec, fs: float, numtaps: int = FIR_TAPS) -> np.ndarray:
    """Zero-phase (forward-backward) band-pass along the last axis."""
    taps = design_bandpass(band, fs, numtaps)
    n = x.shape[-1]
    padlen = min(3 * numtaps, n - 1)
    return sps.filtfilt(taps, [1.0], x, axis=-1, padlen=padlen)


def fir_bandpass(rec: Recording, band: BandSpec) -> Recording:
    return replace(rec, samples=filter_array(rec.samples, band, rec.fs))


def baseline_and_normalize(rec: Recording, window_sec: float = 4.0, overlap: float = 0.5) -> Recording:
    """Subtract block means on the window hop grid, then scale each electrode to unit l2 norm.

    Removing the mean of every hop-length block makes every window on that
    grid (a union of whole blocks) zero-mean, and the later scaling keeps it so.
    """
    L, hop = _window_geometry(rec.fs, window_sec, overlap)
    x = rec.samples.copy()
    S = x.shape[1]
    for start in range(0, S, hop):
        block = x[:, start: start + hop]
        block -= block.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(x, axis=1)
    dead = np.flatnonzero(norms <= 1e-300)
    if dead.size:
        raise NormalizationError(f"channel {int(dead[0])} is all-zero after baseline removal")
    return replace(rec, samples=x / norms[:, None])


def segment_windows(rec: Recording, window_sec: float = 4.0, overlap: float = 0.5) -> WindowedRecording:
    L, hop = _window_geometry(rec.fs, window_sec, overlap)
    T = window_count(rec.n_samples, L, hop)
    if T == 0:
        raise InputError(f"recording of {rec.n_samples} samples is shorter than one {L}-sample window")
    idx = np.arange(T)[:, None] * hop + np.arange(L)[None, :]
    windows = rec.samples[:, idx].transpose(1, 0, 2).copy()
    return WindowedRecording(windows=windows, fs=rec.fs, window_sec=window_sec, overlap=overlap)


def band_decompose(win: WindowedRecording, bands: Sequence[BandSpec] = DEFAULT_BANDS) -> np.ndarray:
    """Filter every window into each band; returns (T, N, B, L)."""
    for b in bands:
        b.validate(win.fs)
    return np.stack([filter_array(win.windows, b, win.fs) for b in bands], axis=2)


def identity_cleaner(rec: Recording) -> Recording:
    """Default artifact-removal hook; an ICA cleaner can be swapped in here."""
    return rec


@dataclass(frozen=True)
class PreprocessParams:
    head_sec: float = 10.0
    tail_sec: float = 10.0
    window_sec: float = 4.0
    overlap: float = 0.5
    front_band: BandSpec = BROADBAND
    bands: tuple[BandSpec, ...] = DEFAULT_BANDS

    def fingerprint(self) -> str:
        bands = ";".join(f"{b.name}:{b.lo!r}-{b.hi!r}" for b in self.bands)
        return (f"trim={self.head_sec!r},{self.tail_sec!r}|win={self.window_sec!r},{self.overlap!r}"
                f"|front={self.front_band.lo!r}-{self.front_band.hi!r}|bands={bands}|taps={FIR_TAPS}")


def preprocess(rec: Recording, params: PreprocessParams = PreprocessParams(),
               cleaner: Callable[[Recording], Recording] = identity_cleaner) -> tuple[Recording, np.ndarray]:
    """Run the full cleaning chain.

    Returns the cleaned broadband recording (the Pearson seed source) and the
    (T, N, B, L) band-limited windows.
    """
    rec = trim_edges(rec, params.head_sec, params.tail_sec)
    rec = fir_bandpass(rec, params.front_band)
    rec = cleaner(rec)
    rec = baseline_and_normalize(rec, params.window_sec, params.overlap)
    win = segment_windows(rec, params.window_sec, params.overlap)
    return rec, band_decompose(win, params.bands)
