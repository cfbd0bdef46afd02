"""Channel-band attention mask, its Bernoulli-KL sparsity penalty, and the
weight-shared BiLSTM that turns per-window features into node embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError
from .tensor import Tensor, as_tensor, concat

KL_CLAMP = 1e-6


@dataclass
class ChannelBandMask:
    """Rank-1 mask ``sigmoid(chan_logits) outer sigmoid(band_logits)``."""

    chan_logits: Tensor
    band_logits: Tensor

    @classmethod
    def init(cls, n_channels: int, n_bands: int, logit: float = 0.0) -> "ChannelBandMask":
        return cls(Tensor(np.full(n_channels, logit), requires_grad=True, name="mask.chan_logits"),
                   Tensor(np.full(n_bands, logit), requires_grad=True, name="mask.band_logits"))

    def values(self) -> Tensor:
        a_chan = self.chan_logits.sigmoid().reshape(-1, 1)
        a_band = self.band_logits.sigmoid().reshape(1, -1)
        return a_chan @ a_band


@dataclass(frozen=True)
class SparsityPrior:
    p0: float = 0.2
    beta: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.p0 < 1.0:
            raise InputError(f"p0 must lie strictly inside (0, 1), got {self.p0}")
        if self.beta < 0:
            raise InputError(f"beta must be >= 0, got {self.beta}")


def apply_mask(de, mask: ChannelBandMask) -> Tensor:
    """Scale DE features (..., N, B) by the mask, identically for every window."""
    de = as_tensor(de)
    A = mask.values()
    if de.shape[-2:] != A.shape:
        raise ShapeError(f"apply_mask: features {de.shape} do not end in mask shape {A.shape}")
    return de * A


def kl_sparsity(mask: ChannelBandMask, prior: SparsityPrior) -> Tensor:
    """``beta * sum KL(Bernoulli(q) || Bernoulli(p0))`` over mask cells."""
    q = mask.values().clip(KL_CLAMP, 1.0 - KL_CLAMP)
    p0 = prior.p0
    kl = q * (q / p0).log() + (1.0 - q) * ((1.0 - q) / (1.0 - p0)).log()
    return kl.sum() * prior.beta


@dataclass
class LstmDirection:
    w_ih: Tensor  # (I, 4H), gate order i, f, g, o
    w_hh: Tensor  # (H, 4H)
    bias: Tensor  # (4H,)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]


@dataclass
class BiLstmParams:
    fwd: LstmDirection
    bwd: LstmDirection

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int = 10, hidden: int = 64) -> "BiLstmParams":
        k = 1.0 / np.sqrt(hidden)

        def direction(tag):
            bias = rng.uniform(-k, k, 4 * hidden)
            bias[hidden: 2 * hidden] = 1.0  # forget gate
            return LstmDirection(
                Tensor(rng.uniform(-k, k, (input_size, 4 * hidden)), True, f"bilstm.{tag}.w_ih"),
                Tensor(rng.uniform(-k, k, (hidden, 4 * hidden)), True, f"bilstm.{tag}.w_hh"),
                Tensor(bias, True, f"bilstm.{tag}.bias"),
            )

        return cls(direction("fwd"), direction("bwd"))

    def tensors(self) -> list[Tensor]:
        return [self.fwd.w_ih, self.fwd.w_hh, self.fwd.bias,
                self.bwd.w_ih, self.bwd.w_hh, self.bwd.bias]


def _run_direction(x: Tensor, p: LstmDirection, reverse: bool, aggregate: str) -> Tensor:
    """x is (batch, T, I); returns (batch, H)."""
    batch, T, _ = x.shape
    H = p.hidden
    xw = x @ p.w_ih + p.bias  # (batch, T, 4H), input projection for all steps at once
    h = c = None
    outputs = []
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        z = xw[:, t, :] if h is None else xw[:, t, :] + h @ p.w_hh
        i = z[:, :H].sigmoid()
        f = z[:, H: 2 * H].sigmoid()
        g = z[:, 2 * H: 3 * H].tanh()
        o = z[:, 3 * H:].sigmoid()
        c = i * g if c is None else f * c + i * g
        h = o * c.tanh()
        outputs.append(h)
    if aggregate == "last":
        return h
    if aggregate == "mean":
        total = outputs[0]
        for out in outputs[1:]:
            total = total + out
        return total * (1.0 / T)
    raise InputError(f"unknown aggregate {aggregate!r}; use 'last' or 'mean'")


def bilstm_encode(seq, params: BiLstmParams, aggregate: str = "last") -> Tensor:
    """Encode (..., T, N, I) per-channel sequences into (..., N, 2H) node features.

    One BiLSTM is shared by all channels; each channel's length-T sequence is
    run forwards and backwards and the two final hidden states concatenated.
    """
    seq = as_tensor(seq)
    if seq.ndim < 3:
        raise ShapeError(f"bilstm_encode: expected (..., T, N, I), got {seq.shape}")
    *lead, T, N, I = seq.shape
    if T < 1:
        raise InputError("bilstm_encode: need at least one time step")
    if I != params.fwd.w_ih.shape[0]:
        raise ShapeError(f"bilstm_encode: input size {I} != {params.fwd.w_ih.shape[0]}")
    nd = seq.ndim
    order = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    x = seq.transpose(order).reshape(-1, T, I)
    h_f = _run_direction(x, params.fwd, False, aggregate)
    h_b = _run_direction(x, params.bwd, True, aggregate)
    out = concat([h_f, h_b], axis=-1)
    return out.reshape(*lead, N, out.shape[-1])
