"""Shared DSP primitives: sample containers, STE, STFT, FIR filtering, mixing.

Every function here is pure: inputs are never modified and a new container is
returned.  Containers carry their sample rate so downstream code never has to
pass it around separately.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np
from scipy import signal as sps

from .errors import ParameterError, SizingError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class IqRecording:
    samples: np.ndarray
    sample_rate_hz: float
    t0_s: float = 0.0
    channel: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.complex128))
        if self.samples.ndim != 1:
            raise ParameterError("IqRecording samples must be one-dimensional")
        if not self.sample_rate_hz > 0:
            raise ParameterError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self)) / self.sample_rate_hz


@dataclass(frozen=True)
class RealSeries:
    values: np.ndarray
    sample_rate_hz: float
    t0_s: float = 0.0
    channel: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise ParameterError("RealSeries values must be one-dimensional")
        if not self.sample_rate_hz > 0:
            raise ParameterError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    def __len__(self):
        return self.values.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self)) / self.sample_rate_hz


Signal = Union[IqRecording, RealSeries]


@dataclass(frozen=True)
class Spectrogram:
    frames: np.ndarray  # (T, F) power
    frame_rate_hz: float
    freq_resolution_hz: float
    window_len: int
    hop: int
    freqs_hz: np.ndarray = field(repr=False, default=None)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]


def _data(x) -> tuple[np.ndarray, float]:
    if isinstance(x, IqRecording):
        return x.samples, x.sample_rate_hz
    if isinstance(x, RealSeries):
        return x.values, x.sample_rate_hz
    raise TypeError(f"expected IqRecording or RealSeries, got {type(x).__name__}")


def _like(x: Signal, data: np.ndarray, t0_s: float | None = None) -> Signal:
    t0 = x.t0_s if t0_s is None else t0_s
    if isinstance(x, IqRecording):
        return replace(x, samples=data, t0_s=t0)
    return replace(x, values=np.real(data) if np.iscomplexobj(data) else data, t0_s=t0)


def frame_count(n: int, window_len: int, hop: int) -> int:
    if n < window_len:
        return 0
    return (n - window_len) // hop + 1


def running_sum(values: np.ndarray, width: int) -> np.ndarray:
    """Sum of every length-``width`` window of a non-negative array ("valid" mode).

    Windows made entirely of exact zeros return exactly 0, which a plain
    cumulative-sum difference would not guarantee.
    """
    values = np.asarray(values, dtype=np.float64)
    cs = np.concatenate(([0.0], np.cumsum(values)))
    out = cs[width:] - cs[:-width]
    nz = np.concatenate(([0], np.cumsum(values != 0)))
    out[(nz[width:] - nz[:-width]) == 0] = 0.0
    return np.maximum(out, 0.0)


def short_time_energy(x: Signal, window: int) -> RealSeries:
    """E[t] = sum_{k=t}^{t+W-1} |x[k]|^2, length len(x) - W + 1."""
    data, fs = _data(x)
    if window < 1:
        raise ParameterError(f"STE window must be >= 1, got {window}")
    if len(data) < window:
        raise SizingError(f"signal of length {len(data)} shorter than STE window {window}")
    return RealSeries(running_sum(np.abs(data) ** 2, window), fs, t0_s=x.t0_s)


def _taper(name: str, n: int) -> np.ndarray:
    if name in ("rect", "rectangular", "boxcar"):
        return np.ones(n)
    return sps.get_window(name, n, fftbins=True)


def stft(x: Signal, window_len: int, hop: int, window: str = "hann") -> Spectrogram:
    """Power spectrogram without padding; real input gives one-sided bins."""
    data, fs = _data(x)
    if window_len < 2 or hop < 1:
        raise ParameterError(f"need window_len >= 2 and hop >= 1, got {window_len}, {hop}")
    if len(data) < window_len:
        raise SizingError(f"signal of length {len(data)} shorter than STFT window {window_len}")
    segs = np.lib.stride_tricks.sliding_window_view(data, window_len)[::hop]
    segs = segs * _taper(window, window_len)
    if np.iscomplexobj(data):
        spec = np.fft.fft(segs, axis=1)
        freqs = np.fft.fftfreq(window_len, 1.0 / fs)
    else:
        spec = np.fft.rfft(segs, axis=1)
        freqs = np.fft.rfftfreq(window_len, 1.0 / fs)
    power = spec.real ** 2 + spec.imag ** 2
    return Spectrogram(power, fs / hop, fs / window_len, window_len, hop, freqs)


def design_fir(sample_rate_hz: float, low_hz: float, high_hz: float, taps: int = 255,
               window: str = "hamming") -> np.ndarray:
    nyq = sample_rate_hz / 2
    if not (0 <= low_hz < high_hz <= nyq):
        raise ParameterError(f"band [{low_hz}, {high_hz}] Hz invalid for Nyquist {nyq} Hz")
    if taps < 1 or taps % 2 == 0:
        raise ParameterError(f"FIR tap count must be odd, got {taps}")
    if low_hz == 0 and high_hz == nyq:
        h = np.zeros(taps)
        h[taps // 2] = 1.0
        return h
    if low_hz == 0:
        return sps.firwin(taps, high_hz, window=window, fs=sample_rate_hz)
    if high_hz == nyq:
        return sps.firwin(taps, low_hz, window=window, pass_zero=False, fs=sample_rate_hz)
    return sps.firwin(taps, [low_hz, high_hz], window=window, pass_zero=False, fs=sample_rate_hz)


def apply_fir(data: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Zero-phase application of an odd-length linear-phase FIR (same-length output)."""
    half = len(h) // 2
    if len(data) == 0:
        return data.copy()
    padded = np.pad(data, half, mode="symmetric")
    return np.convolve(padded, h, mode="valid")


def fir_filter(x: Signal, band: tuple[float, float], taps: int = 255) -> Signal:
    """Windowed-sinc (Hamming) FIR; ``band[0] == 0`` gives a low-pass."""
    data, fs = _data(x)
    h = design_fir(fs, band[0], band[1], taps)
    return _like(x, apply_fir(data, h))


def frequency_shift(x: IqRecording, shift_hz: float) -> IqRecording:
    """Multiply by exp(-j 2 pi shift k / fs); a tone at +shift lands on DC."""
    if not isinstance(x, IqRecording):
        raise TypeError("frequency_shift needs an IqRecording")
    if abs(shift_hz) >= x.sample_rate_hz / 2:
        raise ParameterError(f"|shift| {shift_hz} Hz must be below Nyquist {x.sample_rate_hz / 2} Hz")
    k = np.arange(len(x))
    return replace(x, samples=x.samples * np.exp(-2j * np.pi * shift_hz * k / x.sample_rate_hz))


def moving_average(x: Signal, n: int) -> Signal:
    """Centered n-point moving average with symmetric edge padding (n odd)."""
    if n < 1 or n % 2 == 0:
        raise ParameterError(f"moving average length must be odd and positive, got {n}")
    if n == 1:
        return x
    data, _ = _data(x)
    return _like(x, apply_fir(data, np.full(n, 1.0 / n)))


def decimate(x: Signal, factor: int) -> Signal:
    """Keep every ``factor``-th sample; the caller is responsible for anti-aliasing."""
    if factor < 1:
        raise ParameterError(f"decimation factor must be >= 1, got {factor}")
    data, fs = _data(x)
    out = _like(x, data[::factor])
    return replace(out, sample_rate_hz=fs / factor)


def resample(x: RealSeries, rate_hz: float) -> RealSeries:
    """Polyphase resampling to ``rate_hz`` (rational ratio approximated to 1e-6)."""
    if rate_hz == x.sample_rate_hz:
        return x
    from fractions import Fraction

    ratio = Fraction(rate_hz / x.sample_rate_hz).limit_denominator(1_000_000)
    y = sps.resample_poly(x.values, ratio.numerator, ratio.denominator)
    return RealSeries(y, rate_hz, t0_s=x.t0_s, channel=x.channel)


# --------------------------------------------------------------------------- #
# on-disk format: little-endian float32 (I, Q) pairs + JSON sidecar manifest

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_series(path, x: Signal, channel: str | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(x, IqRecording):
        buf = np.empty(2 * len(x), dtype="<f4")
        buf[0::2] = x.samples.real
        buf[1::2] = x.samples.imag
        kind, columns = "iq", 2
    else:
        buf = x.values.astype("<f4")
        kind, columns = "real", 1
    path.write_bytes(buf.tobytes())
    meta = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "columns": columns,
        "sample_rate_hz": float(x.sample_rate_hz),
        "t0_s": float(x.t0_s),
        "channel": channel if channel is not None else x.channel,
        "n_samples": len(x),
    }
    if extra:
        meta.update(extra)
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    return json.loads(_sidecar(Path(path)).read_text())


def read_series(path) -> Signal:
    path = Path(path)
    meta = read_manifest(path)
    raw = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
    fs, t0, ch = meta["sample_rate_hz"], meta.get("t0_s", 0.0), meta.get("channel", "")
    if meta["kind"] == "iq":
        return IqRecording(raw[0::2] + 1j * raw[1::2], fs, t0, ch)
    if meta.get("columns", 1) == 2:
        raw = raw[0::2]
    return RealSeries(raw, fs, t0, ch)
