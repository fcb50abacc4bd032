"""Encoder-decoder over spectrogram frames and subword tokens."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ParameterError
from ..lexicon import PAD_ID


@dataclass
class ModelConfig:
    embed_dim: int = 64
    enc_layers: int = 2
    enc_heads: int = 4
    dec_layers: int = 2
    dec_heads: int = 2
    ff_dim: int = 128
    dropout: float = 0.1
    vocab_size: int = 64
    n_freq: int = 129
    max_frames: int = 4096
    max_tokens: int = 64
    frame_stack: int = 1  # consecutive frames concatenated before projection

    def __post_init__(self):
        for name in ("enc_heads", "dec_heads"):
            h = getattr(self, name)
            if h < 1 or self.embed_dim % h:
                raise ParameterError(f"embed_dim {self.embed_dim} not divisible by {name}={h}")
        if self.vocab_size < 4:
            raise ParameterError("vocab_size must cover the specials plus at least one symbol")
        if self.frame_stack < 1:
            raise ParameterError("frame_stack must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def paper_preset(vocab_size: int) -> ModelConfig:
    return ModelConfig(embed_dim=768, enc_layers=12, enc_heads=12, dec_layers=6, dec_heads=4, ff_dim=3072,
                       dropout=0.1, vocab_size=vocab_size)


def toy_preset(vocab_size: int, **overrides) -> ModelConfig:
    base = dict(embed_dim=64, enc_layers=2, enc_heads=4, dec_layers=2, dec_heads=2, ff_dim=128,
                dropout=0.1, vocab_size=vocab_size)
    base.update(overrides)
    return ModelConfig(**base)


PRESETS = {"paper": paper_preset, "toy": toy_preset}


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention; the last weights are kept on ``self.last_weights``."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.dh = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)
        self.last_weights = None

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.dh).transpose(1, 2)

    def forward(self, query, memory, key_pad_mask=None, causal: bool = False):
        q, k, v = self._split(self.q(query)), self._split(self.k(memory)), self._split(self.v(memory))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.dh)
        blocked = None
        if key_pad_mask is not None:
            blocked = key_pad_mask[:, None, None, :]
        if causal:
            tq, tk = scores.shape[-2:]
            fut = torch.ones(tq, tk, dtype=torch.bool, device=scores.device).triu(1)
            blocked = fut if blocked is None else blocked | fut
        if blocked is not None:
            scores = scores.masked_fill(blocked, float("-inf"))
        w = torch.softmax(scores, dim=-1)
        self.last_weights = w.detach()
        out = self.drop(w) @ v
        b, h, t, dh = out.shape
        return self.o(out.transpose(1, 2).reshape(b, t, h * dh))


class FeedForward(nn.Module):
    def __init__(self, dim, hidden, dropout):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Dropout(dropout), nn.Linear(hidden, dim))

    def forward(self, x):
        return self.net(x)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        self.n1, self.n2 = nn.LayerNorm(d), nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, cfg.enc_heads, cfg.dropout)
        self.ff = FeedForward(d, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, pad_mask):
        h = self.n1(x)
        x = x + self.drop(self.attn(h, h, pad_mask))
        return x + self.drop(self.ff(self.n2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        self.n1, self.n2, self.n3 = nn.LayerNorm(d), nn.LayerNorm(d), nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.dec_heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(d, cfg.dec_heads, cfg.dropout)
        self.ff = FeedForward(d, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, y, memory, mem_mask, tgt_mask=None):
        h = self.n1(y)
        y = y + self.drop(self.self_attn(h, h, tgt_mask, causal=True))
        y = y + self.drop(self.cross_attn(self.n2(y), memory, mem_mask))
        return y + self.drop(self.ff(self.n3(y)))


class Encoder(nn.Module):
    """Frame stacking, input projection, sinusoidal positions, self-attention stack."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("in_mean", torch.zeros(cfg.n_freq))
        self.register_buffer("in_std", torch.ones(cfg.n_freq))
        self.proj = nn.Linear(cfg.n_freq * cfg.frame_stack, cfg.embed_dim)
        self.register_buffer("pe", sinusoidal_encoding(cfg.max_frames, cfg.embed_dim).float(), persistent=False)
        self.drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.enc_layers))
        self.norm = nn.LayerNorm(cfg.embed_dim)

    def stack(self, frames, pad_mask):
        x = (frames - self.in_mean) / self.in_std
        x = x.masked_fill(pad_mask[..., None], 0.0)
        s = self.cfg.frame_stack
        if s > 1:
            b, t, f = x.shape
            extra = (-t) % s
            if extra:
                x = F.pad(x, (0, 0, 0, extra))
                pad_mask = F.pad(pad_mask, (0, extra), value=True)
            x = x.reshape(b, (t + extra) // s, s * f)
            pad_mask = pad_mask.reshape(b, -1, s).all(dim=2)
        return x, pad_mask

    def forward(self, frames, pad_mask):
        x, mask = self.stack(frames, pad_mask)
        if x.shape[1] > self.pe.shape[0]:
            raise ParameterError(f"{x.shape[1]} frames exceed max_frames={self.pe.shape[0]}")
        x = self.drop(self.proj(x) + self.pe[: x.shape[1]].to(x.dtype))
        for layer in self.layers:
            x = layer(x, mask)
        return self.norm(x), mask


class Seq2Seq(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.encoder = Encoder(cfg)
        self.embed = nn.Embedding(cfg.vocab_size, d)
        self.register_buffer("pe", sinusoidal_encoding(cfg.max_tokens + 1, d).float(), persistent=False)
        self.drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.dec_layers))
        self.norm = nn.LayerNorm(d)
        self.out = nn.Linear(d, cfg.vocab_size)

    def encode(self, frames, pad_mask):
        return self.encoder(frames, pad_mask)

    def decode(self, memory, mem_mask, tokens):
        """Logits for every position of ``tokens`` (B, L), which starts with <bos>."""
        L = tokens.shape[1]
        if L > self.pe.shape[0]:
            raise ParameterError(f"{L} tokens exceed max_tokens={self.cfg.max_tokens}")
        y = self.embed(tokens) * math.sqrt(self.cfg.embed_dim) + self.pe[:L].to(memory.dtype)
        y = self.drop(y)
        tgt_mask = tokens == PAD_ID
        for layer in self.layers:
            y = layer(y, memory, mem_mask, tgt_mask)
        return self.out(self.norm(y))

    def forward(self, frames, pad_mask, tokens):
        memory, mem_mask = self.encode(frames, pad_mask)
        return self.decode(memory, mem_mask, tokens)


class UnitClassifier(nn.Module):
    """Encoder + masked mean pooling + linear head, for pseudo-label pretraining."""

    def __init__(self, cfg: ModelConfig, n_classes: int):
        super().__init__()
        self.encoder = Encoder(cfg)
        self.head = nn.Linear(cfg.embed_dim, n_classes)

    def forward(self, frames, pad_mask):
        h, mask = self.encoder(frames, pad_mask)
        keep = (~mask).to(h.dtype)[..., None]
        pooled = (h * keep).sum(dim=1) / keep.sum(dim=1).clamp_min(1.0)
        return self.head(pooled)
