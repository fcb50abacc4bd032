"""Spectrogram frontend: trace -> log-power STFT frames."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from ..signal_core import RealSeries, resample, stft

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FrontendConfig:
    rate_hz: float = 1000.0
    window: int = 256
    hop: int = 10
    window_fn: str = "hann"

    @property
    def n_freq(self) -> int:
        return self.window // 2 + 1


@dataclass
class FrameSequence:
    frames: np.ndarray  # (T, F) float32
    pad_mask: np.ndarray  # (T,) bool, True = padding

    @property
    def n_real(self) -> int:
        return int((~self.pad_mask).sum())


def featurize_series(x: RealSeries, cfg: FrontendConfig | None = None, min_len: int = 0) -> FrameSequence:
    """Per-frame log power.  ``min_len`` zero-pads both sides of short inputs
    up to that many samples (used for isolated units)."""
    cfg = cfg or FrontendConfig()
    if abs(x.sample_rate_hz - cfg.rate_hz) > 1e-9:
        x = resample(x, cfg.rate_hz)
    v = np.nan_to_num(np.asarray(x.values, dtype=np.float64))
    if v.size < min_len:
        extra = min_len - v.size
        v = np.pad(v, (extra // 2, extra - extra // 2))
    if v.size < cfg.window:
        raise ParameterError(f"trace of {v.size} samples is shorter than one {cfg.window}-sample window")
    spec = stft(RealSeries(v, cfg.rate_hz), cfg.window, cfg.hop, window=cfg.window_fn)
    frames = np.log(np.maximum(spec.frames, LOG_FLOOR)).astype(np.float32)
    return FrameSequence(frames, np.zeros(frames.shape[0], dtype=bool))


def featurize_trace(trace, cfg: FrontendConfig | None = None, min_len: int = 0) -> FrameSequence:
    """``MotionTrace`` or ``RealSeries``; gap samples are zero-filled first."""
    if hasattr(trace, "filled"):
        trace = RealSeries(trace.filled(), trace.values.sample_rate_hz, trace.values.t0_s)
    return featurize_series(trace, cfg, min_len)


def pad_batch(seqs) -> tuple:
    """Stack into ``(B, T_max, F)`` frames and a ``(B, T_max)`` padding mask."""
    if not seqs:
        raise ParameterError("empty batch")
    t_max = max(s.frames.shape[0] for s in seqs)
    f = seqs[0].frames.shape[1]
    frames = np.zeros((len(seqs), t_max, f), dtype=np.float32)
    mask = np.ones((len(seqs), t_max), dtype=bool)
    for i, s in enumerate(seqs):
        t = s.frames.shape[0]
        frames[i, :t] = s.frames
        mask[i, :t] = s.pad_mask
    return frames, mask
