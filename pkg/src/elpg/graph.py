"""Graph construction: Pearson seed, learnable edge mask, distance prior,
parcellation, sinusoidal positional codes, normalization and top-k pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, InputError, IsolatedNodeError, ParcellationError, SchemaError
from .tensor import Tensor, as_tensor

DIST_DELTA = 6.0  # mm^2
N_GROUPS = 9
POS_FREQS = 4


def pearson_seed(samples: np.ndarray) -> np.ndarray:
    """|Pearson correlation| between channels of an (N, S) array, zero diagonal."""
    x = np.asarray(samples, dtype=np.float64)
    centred = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centred**2).sum(axis=1))
    flat = np.flatnonzero(norms <= 1e-300)
    if flat.size:
        raise DomainError(f"pearson_seed: channel {int(flat[0])} is constant")
    z = centred / norms[:, None]
    A0 = np.clip(np.abs(z @ z.T), 0.0, 1.0)
    np.fill_diagonal(A0, 0.0)
    return A0


@dataclass
class EdgeMask:
    """Trainable per-edge multiplier ``sigmoid(logits)``; zero logits give 0.5."""

    logits: Tensor

    @classmethod
    def init(cls, n_nodes: int) -> "EdgeMask":
        return cls(Tensor(np.zeros((n_nodes, n_nodes)), requires_grad=True, name="edge_mask.logits"))

    def values(self) -> Tensor:
        return self.logits.sigmoid()


def apply_edge_mask(seed, mask: EdgeMask) -> Tensor:
    return as_tensor(seed) * mask.values()


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    c = np.asarray(coords, dtype=np.float64)
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def distance_prior(coords: np.ndarray, delta: float = DIST_DELTA) -> np.ndarray:
    """``min(1, max(0.1, delta / d**2))`` with distances in mm; zero diagonal."""
    d = pairwise_distances(coords)
    off = ~np.eye(len(d), dtype=bool)
    if np.any(d[off] == 0):
        i, j = np.argwhere((d == 0) & off)[0]
        raise InputError(f"electrodes {i} and {j} coincide")
    with np.errstate(divide="ignore"):
        prior = np.minimum(1.0, np.maximum(0.1, delta / d**2))
    prior[~off] = 0.0
    return prior


@dataclass
class Parcellation:
    """Channel-to-group assignment; every group must have at least one member."""

    group_of: np.ndarray
    n_groups: int = N_GROUPS

    def __post_init__(self):
        self.group_of = np.asarray(self.group_of, dtype=np.int64)
        if self.group_of.ndim != 1:
            raise ParcellationError("group_of must be one-dimensional")
        if np.any((self.group_of < 0) | (self.group_of >= self.n_groups)):
            raise ParcellationError(f"group indices must lie in 0..{self.n_groups - 1}")
        counts = np.bincount(self.group_of, minlength=self.n_groups)
        if np.any(counts == 0):
            raise ParcellationError(f"group {int(np.flatnonzero(counts == 0)[0])} is empty")

    @property
    def n_channels(self) -> int:
        return len(self.group_of)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.group_of == k)

    def membership(self) -> np.ndarray:
        """(K, N) 0/1 matrix."""
        return (self.group_of[None, :] == np.arange(self.n_groups)[:, None]).astype(np.float64)

    @classmethod
    def contiguous(cls, n_channels: int, n_groups: int = N_GROUPS) -> "Parcellation":
        if n_channels < n_groups:
            raise ParcellationError(f"{n_channels} channels cannot fill {n_groups} groups")
        return cls(np.arange(n_channels) * n_groups // n_channels, n_groups)

    def permuted(self, perm: np.ndarray) -> "Parcellation":
        """Parcellation of channels reordered so new channel i is old channel perm[i]."""
        return Parcellation(self.group_of[perm], self.n_groups)

    def to_text(self) -> str:
        return "".join(f"{i} {g}\n" for i, g in enumerate(self.group_of))

    @classmethod
    def from_text(cls, text: str, n_groups: int = N_GROUPS) -> "Parcellation":
        pairs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise SchemaError(f"parcellation line {lineno}: expected 'channel group'")
            try:
                ch, grp = int(parts[0]), int(parts[1])
            except ValueError:
                raise SchemaError(f"parcellation line {lineno}: non-integer entry") from None
            if ch in pairs:
                raise SchemaError(f"parcellation line {lineno}: channel {ch} assigned twice")
            pairs[ch] = grp
        if sorted(pairs) != list(range(len(pairs))):
            raise ParcellationError("parcellation must assign channels 0..N-1 exactly once")
        return cls(np.array([pairs[i] for i in range(len(pairs))]), n_groups)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path, n_groups: int = N_GROUPS) -> "Parcellation":
        return cls.from_text(Path(path).read_text(), n_groups)


def rescale_coords(coords: np.ndarray, ref: np.ndarray | None = None) -> np.ndarray:
    """Min-max rescale each axis to [0, 1] using the bounds of ``ref`` (default: coords)."""
    c = np.asarray(coords, dtype=np.float64)
    ref = c if ref is None else np.asarray(ref, dtype=np.float64)
    lo, hi = ref.min(axis=0), ref.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (c - lo) / span


def sinusoidal_embed(p: np.ndarray, n_freqs: int = POS_FREQS) -> np.ndarray:
    """[sin(f pi p_x), cos(f pi p_x), ...] for f = 1, 2, ..., 2**(n_freqs-1) on each axis."""
    p = np.asarray(p, dtype=np.float64)
    cols = []
    for axis in range(p.shape[-1]):
        for k in range(n_freqs):
            arg = (2.0**k) * math.pi * p[..., axis]
            cols += [np.sin(arg), np.cos(arg)]
    return np.stack(cols, axis=-1)


def positional_embed(coords: np.ndarray, n_freqs: int = POS_FREQS) -> np.ndarray:
    """(N, 6 * n_freqs) codes of montage-rescaled electrode positions."""
    return sinusoidal_embed(rescale_coords(coords), n_freqs)


def normalize_operator(S) -> Tensor:
    """``D^-1/2 S D^-1/2`` with row-sum degrees; S may carry leading batch axes."""
    S = as_tensor(S)
    deg = S.sum(axis=-1)
    bad = np.argwhere(deg.data <= 0)
    if bad.size:
        raise IsolatedNodeError(f"node {int(bad[0][-1])} has zero degree")
    dinv = deg ** -0.5
    return S * dinv.reshape(*dinv.shape, 1) * dinv.reshape(*dinv.shape[:-1], 1, dinv.shape[-1])


def combine_and_normalize(A, prior: np.ndarray) -> Tensor:
    return normalize_operator(as_tensor(A) + prior)


def topk_mask(A: np.ndarray, keep_frac: float = 0.25) -> np.ndarray:
    """Boolean mask of the ``ceil(keep_frac * n)`` largest entries of each row.

    Ties go to the lower column index.
    """
    if not 0.0 < keep_frac <= 1.0:
        raise InputError(f"keep_frac must lie in (0, 1], got {keep_frac}")
    A = np.asarray(A)
    n = A.shape[-1]
    k = math.ceil(keep_frac * n - 1e-9)
    order = np.argsort(-A, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(A.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask


def topk_sparsify(A, keep_frac: float = 0.25):
    """Zero all but the top ``keep_frac`` entries per row; no renormalization."""
    if isinstance(A, Tensor):
        return A * topk_mask(A.data, keep_frac).astype(np.float64)
    A = np.asarray(A, dtype=np.float64)
    return np.where(topk_mask(A, keep_frac), A, 0.0)
