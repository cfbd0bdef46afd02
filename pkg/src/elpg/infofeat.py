"""Per-band differential entropy and within-channel cross-band mutual information.

All quantities are in nats. The Gaussian estimators here are the ones used
for model inputs; :func:`mutual_information_histogram` is an independent
plug-in estimator kept for cross-checking.
"""

from __future__ import annotations

import struct
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .errors import DomainError, InputError, LengthError

VAR_FLOOR = 1e-12
RHO_FLOOR = 1e-12  # lower bound on 1 - rho**2
_LOG_2PI_E = np.log(2.0 * np.pi * np.e)


def band_pairs(n_bands: int) -> list[tuple[int, int]]:
    """Ordered band pairs: (0,1), (0,2), ..., (B-2,B-1)."""
    return list(combinations(range(n_bands), 2))


def differential_entropy(x) -> float:
    """Gaussian differential entropy ``0.5 * ln(2*pi*e*var)`` of one window."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise InputError("differential_entropy: need at least 2 samples")
    var = x.var()
    if var <= 0:
        raise DomainError("differential_entropy: zero variance")
    return 0.5 * (_LOG_2PI_E + np.log(var))


def _check_pair(b1, b2, min_len):
    b1 = np.asarray(b1, dtype=np.float64)
    b2 = np.asarray(b2, dtype=np.float64)
    if b1.shape != b2.shape or b1.ndim != 1:
        raise InputError(f"need two equal-length 1-D signals, got {b1.shape} and {b2.shape}")
    if b1.size < min_len:
        raise InputError(f"need at least {min_len} samples, got {b1.size}")
    return b1, b2


def mutual_information(b1, b2) -> float:
    """Gaussian MI estimate ``-0.5 * ln(1 - rho**2)`` from the Pearson correlation."""
    b1, b2 = _check_pair(b1, b2, 8)
    c1, c2 = b1 - b1.mean(), b2 - b2.mean()
    v1, v2 = np.dot(c1, c1), np.dot(c2, c2)
    if v1 <= 0 or v2 <= 0:
        raise DomainError("mutual_information: zero variance input")
    rho = np.dot(c1, c2) / np.sqrt(v1 * v2)
    return max(0.0, -0.5 * np.log(max(1.0 - rho * rho, RHO_FLOOR)))


def mutual_information_histogram(b1, b2, bins: int = 16) -> float:
    """Plug-in MI from an equal-width ``bins`` x ``bins`` joint histogram."""
    b1, b2 = _check_pair(b1, b2, 1)
    if bins < 2:
        raise InputError("mutual_information_histogram: bins must be >= 2")
    joint, _, _ = np.histogram2d(b1, b2, bins=bins)
    p = joint / joint.sum()
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (px @ py)[nz])))


class Features(NamedTuple):
    de: np.ndarray  # (T, N, B)
    mi: np.ndarray  # (T, N, B(B-1)/2)


def extract_features(bandsig: np.ndarray) -> Features:
    """DE for every (window, channel, band) and MI for every (window, channel, band pair).

    Degenerate (silent) windows are floored rather than raising, so the
    result is always finite.
    """
    bandsig = np.asarray(bandsig, dtype=np.float64)
    if bandsig.ndim != 4:
        raise InputError(f"expected (T, N, B, L) band signals, got {bandsig.shape}")
    centred = bandsig - bandsig.mean(axis=-1, keepdims=True)
    var = np.maximum((centred**2).mean(axis=-1), VAR_FLOOR)
    de = 0.5 * (_LOG_2PI_E + np.log(var))
    pairs = band_pairs(bandsig.shape[2])
    mi = np.empty(bandsig.shape[:2] + (len(pairs),))
    for k, (i, j) in enumerate(pairs):
        cov = (centred[:, :, i] * centred[:, :, j]).mean(axis=-1)
        rho = cov / np.sqrt(var[:, :, i] * var[:, :, j])
        mi[:, :, k] = -0.5 * np.log(np.maximum(1.0 - rho**2, RHO_FLOOR))
    return Features(de=de, mi=np.maximum(mi, 0.0))


# feature cache: u64 T, N, B, P then DE then MI, f64 little-endian


def encode_features(feats: Features) -> bytes:
    T, N, B = feats.de.shape
    P = feats.mi.shape[2]
    if feats.mi.shape[:2] != (T, N):
        raise InputError("DE and MI tensors disagree on (T, N)")
    return (struct.pack("<4Q", T, N, B, P)
            + np.ascontiguousarray(feats.de, dtype="<f8").tobytes()
            + np.ascontiguousarray(feats.mi, dtype="<f8").tobytes())


def decode_features(buf: bytes) -> Features:
    if len(buf) < 32:
        raise LengthError("feature cache header truncated")
    T, N, B, P = struct.unpack_from("<4Q", buf, 0)
    n_de, n_mi = T * N * B, T * N * P
    if len(buf) != 32 + 8 * (n_de + n_mi):
        raise LengthError(f"feature cache payload is {len(buf) - 32} bytes, expected {8 * (n_de + n_mi)}")
    de = np.frombuffer(buf, "<f8", n_de, 32).astype(np.float64).reshape(T, N, B)
    mi = np.frombuffer(buf, "<f8", n_mi, 32 + 8 * n_de).astype(np.float64).reshape(T, N, P)
    return Features(de=de, mi=mi)
