"""The ELPG-DTFS network: features -> masked BiLSTM node embeddings ->
virtual-center pooling -> global attention -> two gated spectral GCN layers
-> max-pool + MLP head.

Every forward function accepts optional leading batch axes, so a minibatch of
subjects (each with its own seed adjacency) goes through one tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .attention import BiLstmParams, ChannelBandMask, SparsityPrior, apply_mask, bilstm_encode, kl_sparsity
from .errors import LengthError, ParcellationError, SchemaError, ShapeError
from .graph import (
    EdgeMask,
    Parcellation,
    distance_prior,
    normalize_operator,
    positional_embed,
    rescale_coords,
    sinusoidal_embed,
    topk_mask,
)
from .tensor import Tensor, as_tensor, concat, dump_tensor, load_tensor

GATE_CLOSED_BIAS = -40.0
_MASK_NEG = -1e30  # additive logit for non-members in grouped softmax


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int
    n_bands: int = 4
    hidden: int = 64
    heads: int = 6
    keep_frac: float = 0.25
    n_groups: int = 9
    pos_freqs: int = 4
    head_hidden: int = 64
    gate_bias: float = -4.0
    aggregate: str = "last"
    pool_virtual: bool = True
    use_attention: bool = True
    use_mi: bool = True
    use_prior_gate: bool = True
    learn_edge_mask: bool = True

    @property
    def channels(self) -> int:
        return 2 * self.hidden

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def n_pairs(self) -> int:
        return self.n_bands * (self.n_bands - 1) // 2

    @property
    def n_nodes(self) -> int:
        return self.n_channels + self.n_groups


class Montage:
    """Everything that depends only on electrode geometry and parcellation."""

    def __init__(self, coords: np.ndarray, parcellation: Parcellation, pos_freqs: int = 4):
        self.coords = np.asarray(coords, dtype=np.float64)
        self.parcellation = parcellation
        N, K = len(self.coords), parcellation.n_groups
        if parcellation.n_channels != N:
            raise ParcellationError(f"parcellation covers {parcellation.n_channels} channels, montage has {N}")
        self.dist_prior = distance_prior(self.coords)
        self.pos_embed = positional_embed(self.coords, pos_freqs)
        self.membership = parcellation.membership()  # (K, N)
        M = N + K
        self.virtual_edges = np.zeros((M, M))
        self.virtual_edges[N:, :N] = self.membership
        self.virtual_edges[:N, N:] = self.membership.T
        self.prior_raw = build_prior_features(parcellation, self.coords, self.dist_prior, pos_freqs)

    @property
    def n_channels(self) -> int:
        return len(self.coords)

    @property
    def n_groups(self) -> int:
        return self.parcellation.n_groups

    def permuted(self, perm: np.ndarray) -> "Montage":
        return Montage(self.coords[perm], self.parcellation.permuted(perm), self.pos_embed.shape[1] // 6)


def build_prior_features(parc: Parcellation, coords: np.ndarray, dist: np.ndarray,
                         pos_freqs: int = 4) -> np.ndarray:
    """Raw (N+K, K + 6F + 2) prior features before the trainable lift.

    Per channel: group one-hot, positional code, mean and max of its
    distance-prior row. A virtual node takes its group's one-hot, the code of
    its members' centroid and the mean of its members' distance statistics.
    """
    N, K = len(coords), parc.n_groups
    onehot = np.eye(K)[parc.group_of]
    pos = positional_embed(coords, pos_freqs)
    ordered = np.sort(dist, axis=1)  # order-free sums: equal rows give bit-equal stats
    stats = np.stack([ordered.mean(axis=1), ordered[:, -1]], axis=1)
    real = np.concatenate([onehot, pos, stats], axis=1)
    virt = []
    for k in range(K):
        m = parc.members(k)
        centroid = rescale_coords(coords[m].mean(axis=0, keepdims=True), ref=coords)
        virt.append(np.concatenate([np.eye(K)[k], sinusoidal_embed(centroid, pos_freqs)[0],
                                    stats[m].mean(axis=0)]))
    return np.concatenate([real, np.array(virt)], axis=0)


def _glorot(rng, shape, name, scale=1.0):
    limit = scale * np.sqrt(6.0 / (shape[0] + shape[-1]))
    return Tensor(rng.uniform(-limit, limit, shape), requires_grad=True, name=name)


def _zeros(shape, name, value=0.0):
    return Tensor(np.full(shape, value), requires_grad=True, name=name)


@dataclass
class VirtualCenterParams:
    w_p: Tensor  # (C, C)
    q: Tensor  # (C,)


@dataclass
class GlobalAttentionParams:
    w_q: Tensor  # (C, heads*d_k)
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor  # (heads*d_k, C)
    heads: int
    keep_frac: float = 0.25


@dataclass
class PriorGate:
    w_g: Tensor  # (C, C)
    b_g: Tensor  # (C,)


@dataclass
class ClassifierHead:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


class AttentionOutput(NamedTuple):
    adjacency: Tensor  # head-averaged, top-k sparsified (..., M, M)
    features: Tensor  # (..., M, C)
    dense: Tensor  # head-averaged attention before sparsification


def virtual_pool(X_node, parc: Parcellation, params: VirtualCenterParams) -> Tensor:
    """Attention-pool each group's node rows into one virtual node: (..., K, C)."""
    X = as_tensor(X_node)
    if X.shape[-2] != parc.n_channels:
        raise ShapeError(f"virtual_pool: {X.shape[-2]} nodes vs {parc.n_channels} parcellated channels")
    scores = (X @ params.w_p.T).tanh() @ params.q.reshape(-1, 1)  # (..., N, 1)
    member_bias = np.where(parc.membership() > 0, 0.0, _MASK_NEG)  # (K, N)
    logits = scores.transpose(*range(scores.ndim - 2), scores.ndim - 1, scores.ndim - 2) + member_bias
    weights = logits.softmax(axis=-1)  # (..., K, N)
    return weights @ X


def global_attention(H, params: GlobalAttentionParams) -> AttentionOutput:
    H = as_tensor(H)
    *lead, M, C = H.shape
    nh = params.heads
    dk = params.w_q.shape[1] // nh
    nd = len(lead)

    def split(t):  # (..., M, nh*dk) -> (..., nh, M, dk)
        return t.reshape(*lead, M, nh, dk).transpose(*range(nd), nd + 1, nd, nd + 2)

    Q, K, V = split(H @ params.w_q), split(H @ params.w_k), split(H @ params.w_v)
    att = ((Q @ K.transpose(*range(nd + 1), nd + 2, nd + 1)) * (1.0 / np.sqrt(dk))).softmax(axis=-1)
    dense = att.mean(axis=nd)
    sparse = dense * topk_mask(dense.data, params.keep_frac).astype(np.float64)
    heads_out = (att @ V).transpose(*range(nd), nd + 1, nd, nd + 2).reshape(*lead, M, nh * dk)
    return AttentionOutput(sparse, heads_out @ params.w_o, dense)


def gcn_layer(H, L, W) -> Tensor:
    """``ReLU(L H W)``."""
    return (as_tensor(L) @ as_tensor(H) @ as_tensor(W)).relu()


def gate_values(P, gate: PriorGate) -> Tensor:
    return (as_tensor(P) @ gate.w_g + gate.b_g).sigmoid()


def prior_gate(H_data, P, gate: PriorGate) -> Tensor:
    """``H + sigmoid(P W_g + b_g) * P``."""
    P = as_tensor(P)
    if P.shape != H_data.shape[-2:]:
        raise ShapeError(f"prior_gate: prior {P.shape} vs features {H_data.shape}")
    return H_data + gate_values(P, gate) * P


def classify(H_final, head: ClassifierHead) -> Tensor:
    pooled = as_tensor(H_final).max(axis=-2, keepdims=True)  # (..., 1, C)
    logits = (pooled @ head.w1 + head.b1).relu() @ head.w2 + head.b2
    return logits.reshape(*logits.shape[:-2], logits.shape[-1])


def flops_report(n_nodes: int, dim: int, keep_frac: float = 0.25) -> tuple[float, float]:
    """(attention, GCN) operation counts: ``N^2 d`` and ``keep_frac N^2 d``."""
    attn = n_nodes * n_nodes * dim
    gcn = keep_frac * attn
    return attn, int(gcn) if float(gcn).is_integer() else gcn


class ElpgModel:
    """Parameter container and forward pass."""

    def __init__(self, cfg: ModelConfig, montage: Montage, seed: int = 0):
        if montage.n_channels != cfg.n_channels or montage.n_groups != cfg.n_groups:
            raise ShapeError("montage does not match model config")
        self.cfg = cfg
        self.montage = montage
        rng = np.random.default_rng(seed)
        C, B, F = cfg.channels, cfg.n_bands, 6 * cfg.pos_freqs
        hk = cfg.heads * cfg.head_dim
        self.mask = ChannelBandMask.init(cfg.n_channels, B)
        self.bilstm = BiLstmParams.init(rng, B + cfg.n_pairs, cfg.hidden)
        self.w_pos = _glorot(rng, (F, C), "pos.w")
        self.edge_mask = EdgeMask.init(cfg.n_channels)
        self.vpool = VirtualCenterParams(_glorot(rng, (C, C), "vpool.w_p"),
                                         Tensor(rng.uniform(-0.1, 0.1, C), True, "vpool.q"))
        self.attn = GlobalAttentionParams(_glorot(rng, (C, hk), "attn.w_q"), _glorot(rng, (C, hk), "attn.w_k"),
                                          _glorot(rng, (C, hk), "attn.w_v"), _glorot(rng, (hk, C), "attn.w_o"),
                                          cfg.heads, cfg.keep_frac)
        self.gcn_w = [_glorot(rng, (C, C), "gcn1.w"), _glorot(rng, (C, C), "gcn2.w")]
        n_raw = montage.prior_raw.shape[1]
        # half-scale lift keeps the gated prior well below the data path at init
        self.w_lift = _glorot(rng, (n_raw, C), "prior.w_lift", scale=0.5)
        self.b_lift = _zeros(C, "prior.b_lift")
        self.gates = [PriorGate(_zeros((C, C), f"gate{i}.w"), _zeros(C, f"gate{i}.b", cfg.gate_bias))
                      for i in (1, 2)]
        self.head = ClassifierHead(_glorot(rng, (C, cfg.head_hidden), "head.w1"), _zeros(cfg.head_hidden, "head.b1"),
                                   _glorot(rng, (cfg.head_hidden, 2), "head.w2"), _zeros(2, "head.b2"))
        if not cfg.use_prior_gate:
            self.close_gates()

    # parameters ------------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        ps = [self.mask.chan_logits, self.mask.band_logits, *self.bilstm.tensors(), self.w_pos,
              self.edge_mask.logits, self.vpool.w_p, self.vpool.q,
              self.attn.w_q, self.attn.w_k, self.attn.w_v, self.attn.w_o, *self.gcn_w,
              self.w_lift, self.b_lift]
        for g in self.gates:
            ps += [g.w_g, g.b_g]
        ps += [self.head.w1, self.head.b1, self.head.w2, self.head.b2]
        return ps

    def frozen_names(self) -> set[str]:
        cfg, frozen = self.cfg, set()
        if not cfg.use_attention:
            frozen |= {"mask.chan_logits", "mask.band_logits"}
        if not cfg.learn_edge_mask:
            frozen.add("edge_mask.logits")
        if not cfg.use_prior_gate:
            frozen |= {"gate1.w", "gate1.b", "gate2.w", "gate2.b", "prior.w_lift", "prior.b_lift"}
        return frozen

    def trainable(self) -> list[Tensor]:
        frozen = self.frozen_names()
        return [p for p in self.parameters() if p.name not in frozen]

    @staticmethod
    def no_decay_names(params) -> set[str]:
        """Biases and mask logits are excluded from weight decay."""
        return {p.name for p in params
                if p.name.endswith((".b", ".bias", "_logits", ".logits", ".b1", ".b2", ".b_lift"))}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            arr = np.asarray(state[p.name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{p.name}: checkpoint shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def close_gates(self) -> None:
        for g in self.gates:
            g.w_g.data = np.zeros_like(g.w_g.data)
            g.b_g.data = np.full_like(g.b_g.data, GATE_CLOSED_BIAS)

    # forward ---------------------------------------------------------------
    def prior_matrix(self) -> Tensor:
        return as_tensor(self.montage.prior_raw) @ self.w_lift + self.b_lift

    def node_features(self, de, mi) -> Tensor:
        de = as_tensor(de)
        mi = as_tensor(mi)
        if self.cfg.use_attention:
            de = apply_mask(de, self.mask)
        if not self.cfg.use_mi:
            mi = as_tensor(np.zeros(mi.shape))
        X = bilstm_encode(concat([de, mi], axis=-1), self.bilstm, self.cfg.aggregate)
        return X + as_tensor(self.montage.pos_embed) @ self.w_pos

    def operator(self, seed, attn_adjacency: Tensor) -> Tensor:
        N, K = self.cfg.n_channels, self.cfg.n_groups
        seed = as_tensor(seed)
        A = seed * self.edge_mask.values() + self.montage.dist_prior
        lead = A.shape[:-2]
        A = concat([A, np.zeros(lead + (N, K))], axis=-1)
        A = concat([A, np.zeros(lead + (K, N + K))], axis=-2)
        return normalize_operator(A + self.montage.virtual_edges + attn_adjacency)

    def forward(self, de, mi, seed, return_trace: bool = False):
        """Logits (..., 2) for DE (..., T, N, B), MI (..., T, N, P) and seed (..., N, N)."""
        X = self.node_features(de, mi)
        V = virtual_pool(X, self.montage.parcellation, self.vpool)
        H0 = concat([X, V], axis=-2)
        att = global_attention(H0, self.attn)
        L = self.operator(seed, att.adjacency)
        H = H0 + att.features
        P = self.prior_matrix()
        trace = {"H0": H0, "attention": att, "L": L, "P": P}
        for i, (W, gate) in enumerate(zip(self.gcn_w, self.gates), 1):
            H = gcn_layer(H, L, W)
            trace[f"H_data{i}"] = H
            if self.cfg.use_prior_gate:
                H = prior_gate(H, P, gate)
        if not self.cfg.pool_virtual:
            H = H[..., : self.cfg.n_channels, :]
        logits = classify(H, self.head)
        return (logits, trace) if return_trace else logits

    __call__ = forward

    def kl_penalty(self, prior: SparsityPrior) -> Tensor | float:
        if not self.cfg.use_attention or prior.beta == 0:
            return 0.0
        return kl_sparsity(self.mask, prior)


def ablated_config(cfg: ModelConfig, *, disable_prior_gate=False, freeze_edge_mask=False,
                   drop_mi=False, drop_attention_and_mi=False) -> ModelConfig:
    return replace(
        cfg,
        use_prior_gate=cfg.use_prior_gate and not disable_prior_gate,
        learn_edge_mask=cfg.learn_edge_mask and not freeze_edge_mask,
        use_mi=cfg.use_mi and not (drop_mi or drop_attention_and_mi),
        use_attention=cfg.use_attention and not drop_attention_and_mi,
    )


# checkpoint: concatenated tensor dumps + "name shape" text manifest


def save_checkpoint(model: ElpgModel, path) -> tuple[Path, Path]:
    path = Path(path)
    params = model.parameters()
    path.write_bytes(b"".join(dump_tensor(p) for p in params))
    manifest = path.with_suffix(path.suffix + ".txt")
    manifest.write_text("".join(f"{p.name} {'x'.join(map(str, p.shape)) or 'scalar'}\n" for p in params))
    return path, manifest


def read_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    manifest = path.with_suffix(path.suffix + ".txt")
    names = []
    for line in manifest.read_text().splitlines():
        parts = line.split()
        if len(parts) != 2:
            raise SchemaError(f"bad checkpoint manifest line: {line!r}")
        names.append(parts)
    buf, offset, state = path.read_bytes(), 0, {}
    for name, shape in names:
        t, offset = load_tensor(buf, offset)
        expected = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        if t.shape != expected:
            raise SchemaError(f"{name}: manifest shape {expected} != payload shape {t.shape}")
        state[name] = t.data
    if offset != len(buf):
        raise LengthError("checkpoint has trailing bytes")
    return state


def load_checkpoint(model: ElpgModel, path) -> None:
    model.load_state_dict(read_checkpoint(path))
