"""The station-set regression network and its ablation variants.

Multi-modal station encoders (a Siamese 1-D ResNet over the P and S
windows plus a scalar MLP), a pre-norm transformer encoder over the
station set, attention pooling, and a tanh-bounded regression head.
Variants: "full", "no_scalar" (waveforms only), and "deepsets"
(per-station MLP + masked mean pooling instead of attention).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import AllMasked, ShapeError

VARIANTS = ("full", "no_scalar", "deepsets")


@dataclass
class ModelConfig:
    d_model: int = 128
    n_layers: int = 3
    n_heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    resnet_blocks: int = 3
    conv_kernel: int = 7
    channels: tuple = (64, 128, 192, 192)  # stem output + per-block outputs
    tower_dims: tuple = (48, 48, 32)  # P, S, scalar
    scalar_hidden: int = 64
    pool_hidden: int = 64
    head_hidden: int = 64
    norm_groups: int = 8
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if len(self.channels) != self.resnet_blocks + 1:
            raise ValueError("channels must list the stem plus one entry per block")
        if any(c % self.norm_groups for c in self.channels):
            raise ValueError("all channel counts must be divisible by norm_groups")
        if self.variant != "no_scalar" and sum(self.tower_dims) != self.d_model:
            raise ValueError("tower dims must sum to d_model")

    @property
    def fusion_in(self) -> int:
        if self.variant == "no_scalar":
            return self.tower_dims[0] + self.tower_dims[1]
        return sum(self.tower_dims)

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "dropout": self.dropout,
            "resnet_blocks": self.resnet_blocks,
            "conv_kernel": self.conv_kernel,
            "channels": list(self.channels),
            "tower_dims": list(self.tower_dims),
            "scalar_hidden": self.scalar_hidden,
            "pool_hidden": self.pool_hidden,
            "head_hidden": self.head_hidden,
            "norm_groups": self.norm_groups,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        d["tower_dims"] = tuple(d["tower_dims"])
        return cls(**d)

    @classmethod
    def desk(cls, variant: str = "full") -> "ModelConfig":
        """Small CPU-friendly preset used by the acceptance protocol."""
        return cls(
            d_model=64,
            n_layers=2,
            n_heads=2,
            d_ff=128,
            channels=(16, 32, 32, 48),
            tower_dims=(24, 24, 16),
            pool_hidden=32,
            head_hidden=48,
            variant=variant,
        )

    @classmethod
    def tiny(cls, variant: str = "full") -> "ModelConfig":
        """Toy setting for exhaustive finite-difference gradient checks."""
        return cls(
            d_model=8,
            n_layers=2,
            n_heads=2,
            d_ff=16,
            channels=(4, 4, 4, 4),
            tower_dims=(3, 3, 2),
            scalar_hidden=6,
            pool_hidden=8,
            head_hidden=8,
            norm_groups=2,
            variant=variant,
        )


@dataclass
class Batch:
    """Padded station-set batch; mask is True for real stations."""

    p_win: torch.Tensor  # (B, N, 6, T)
    s_win: torch.Tensor  # (B, N, 6, T)
    scalars: torch.Tensor  # (B, N, 20)
    mask: torch.Tensor  # (B, N) bool
    labels: torch.Tensor | None = None  # (B, 6)

    @property
    def n_events(self) -> int:
        return self.p_win.shape[0]


def collate_records(records, dtype=torch.float32) -> Batch:
    """Pad a list of EventRecords to the max station count with a mask."""
    n_max = max(r.n_stations for r in records)
    t_len = records[0].stations[0].window_len
    b = len(records)
    p = torch.zeros(b, n_max, 6, t_len, dtype=dtype)
    s = torch.zeros(b, n_max, 6, t_len, dtype=dtype)
    sc = torch.zeros(b, n_max, 20, dtype=dtype)
    mask = torch.zeros(b, n_max, dtype=torch.bool)
    labels = torch.zeros(b, 6, dtype=dtype)
    for i, rec in enumerate(records):
        for j, st in enumerate(rec.stations):
            p[i, j] = torch.as_tensor(st.p_win, dtype=dtype)
            s[i, j] = torch.as_tensor(st.s_win, dtype=dtype)
            sc[i, j] = torch.as_tensor(st.scalars, dtype=dtype)
        mask[i, : rec.n_stations] = True
        labels[i] = torch.as_tensor(rec.label, dtype=dtype)
    return Batch(p_win=p, s_win=s, scalars=sc, mask=mask, labels=labels)


@dataclass
class ForwardTrace:
    """Cached intermediates of one forward pass for diagnostics."""

    embeddings: torch.Tensor  # (B, N, d) station embeddings before the encoder
    attention: list  # per layer (B, heads, N, N), empty unless captured
    pool_weights: torch.Tensor  # (B, N), zero at masked positions
    pooled: torch.Tensor  # (B, d)
    pred: torch.Tensor  # (B, 6)


class _ResBlock(nn.Module):
    def __init__(self, c_in, c_out, kernel, groups):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv1d(c_in, c_out, kernel, stride=2, padding=pad)
        self.gn1 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel, padding=pad)
        self.gn2 = nn.GroupNorm(groups, c_out)
        self.skip = nn.Conv1d(c_in, c_out, 1, stride=2)

    def forward(self, x):
        h = torch.relu(self.gn1(self.conv1(x)))
        h = self.gn2(self.conv2(h))
        return torch.relu(h + self.skip(x))


class _WaveTrunk(nn.Module):
    """Shared (Siamese) 1-D ResNet over the 6-channel P or S window."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.channels
        self.stem = nn.Conv1d(6, ch[0], cfg.conv_kernel, padding=cfg.conv_kernel // 2)
        self.stem_gn = nn.GroupNorm(cfg.norm_groups, ch[0])
        self.blocks = nn.ModuleList(
            _ResBlock(ch[i], ch[i + 1], cfg.conv_kernel, cfg.norm_groups)
            for i in range(cfg.resnet_blocks)
        )

    def forward(self, x):
        h = torch.relu(self.stem_gn(self.stem(x)))
        for block in self.blocks:
            h = block(h)
        return h.mean(dim=-1)  # global average pool over time


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = nn.MultiheadAttention(
            cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True
        )
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff),
            nn.ReLU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.d_ff, cfg.d_model),
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, pad_mask, need_weights=False):
        h = self.ln1(x)
        upd, weights = self.attn(
            h,
            h,
            h,
            key_padding_mask=pad_mask,
            need_weights=need_weights,
            average_attn_weights=False,
        )
        keep = (~pad_mask).unsqueeze(-1).to(x.dtype)
        x = x + self.drop(upd) * keep
        x = x + self.drop(self.ff(self.ln2(x))) * keep
        return x, weights


class _AttentionPool(nn.Module):
    def __init__(self, d_model, hidden):
        super().__init__()
        self.v = nn.Linear(d_model, hidden, bias=False)
        self.w = nn.Linear(hidden, 1, bias=False)

    def forward(self, h, mask):
        scores = self.w(torch.tanh(self.v(h))).squeeze(-1)
        scores = scores.masked_fill(~mask, float("-inf"))
        a = torch.softmax(scores, dim=1)
        z = torch.einsum("bn,bnd->bd", a, h)
        return z, a


class SourceNet(nn.Module):
    """Permutation-invariant regressor from a station set to (dev5, Mw)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = _WaveTrunk(cfg)
        c_last = cfg.channels[-1]
        self.p_proj = nn.Linear(c_last, cfg.tower_dims[0])
        self.s_proj = nn.Linear(c_last, cfg.tower_dims[1])
        if cfg.variant != "no_scalar":
            self.scalar_mlp = nn.Sequential(
                nn.Linear(20, cfg.scalar_hidden),
                nn.ReLU(),
                nn.Linear(cfg.scalar_hidden, cfg.tower_dims[2]),
            )
        else:
            self.scalar_mlp = None
        self.fusion = nn.Linear(cfg.fusion_in, cfg.d_model)
        if cfg.variant == "deepsets":
            self.station_mlp = nn.Sequential(
                nn.Linear(cfg.d_model, cfg.d_ff),
                nn.ReLU(),
                nn.Linear(cfg.d_ff, cfg.d_model),
            )
            self.layers = None
            self.final_ln = None
            self.pool = None
        else:
            self.station_mlp = None
            self.layers = nn.ModuleList(_EncoderLayer(cfg) for _ in range(cfg.n_layers))
            self.final_ln = nn.LayerNorm(cfg.d_model)
            self.pool = _AttentionPool(cfg.d_model, cfg.pool_hidden)
        self.head = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.head_hidden),
            nn.ReLU(),
            nn.Linear(cfg.head_hidden, 6),
        )

    def encode_stations(self, p_win, s_win, scalars):
        """Per-station embeddings h (B, N, d); pure, mask-independent."""
        b, n, c, t = p_win.shape
        if c != 6:
            raise ShapeError(f"expected 6 waveform channels, got {c}")
        flat_p = self.trunk(p_win.reshape(b * n, c, t))
        flat_s = self.trunk(s_win.reshape(b * n, c, t))
        parts = [self.p_proj(flat_p), self.s_proj(flat_s)]
        if self.scalar_mlp is not None:
            parts.append(self.scalar_mlp(scalars.reshape(b * n, -1)))
        h = self.fusion(torch.cat(parts, dim=-1))
        return h.reshape(b, n, -1)

    def transformer_encode(self, h, mask, need_weights=False):
        """Contextualize embeddings across the set; masked rows pass through."""
        if not torch.all(mask.any(dim=1)):
            raise AllMasked("every event needs at least one unmasked station")
        pad = ~mask
        attn = []
        for layer in self.layers:
            h, w = layer(h, pad, need_weights=need_weights)
            if need_weights:
                attn.append(w)
        return self.final_ln(h), attn

    def attention_pool(self, h, mask):
        if not torch.all(mask.any(dim=1)):
            raise AllMasked("every event needs at least one unmasked station")
        return self.pool(h, mask)

    def forward(self, batch: Batch, need_weights: bool = False):
        h = self.encode_stations(batch.p_win, batch.s_win, batch.scalars)
        mask = batch.mask
        attn = []
        if self.cfg.variant == "deepsets":
            if not torch.all(mask.any(dim=1)):
                raise AllMasked("every event needs at least one unmasked station")
            g = self.station_mlp(h)
            a = mask.to(h.dtype)
            a = a / a.sum(dim=1, keepdim=True)
            z = torch.einsum("bn,bnd->bd", a, g)
        else:
            enc, attn = self.transformer_encode(h, mask, need_weights=need_weights)
            z, a = self.attention_pool(enc, mask)
        raw = self.head(z)
        pred = torch.cat([torch.tanh(raw[:, :5]), raw[:, 5:]], dim=1)
        trace = ForwardTrace(
            embeddings=h, attention=attn, pool_weights=a, pooled=z, pred=pred
        )
        return pred, trace


def init_params(cfg: ModelConfig, seed: int = 0) -> SourceNet:
    """Build a model with seeded fan-in-scaled uniform initialization."""
    torch.manual_seed(seed)
    return SourceNet(cfg)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def set_deterministic(flag: bool = True):
    """Force deterministic torch kernels (single-run reproducibility)."""
    torch.use_deterministic_algorithms(flag)
