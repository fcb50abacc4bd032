"""From raw receiver samples to a clean lip-motion trace.

Chain: shift the first tag sideband to DC and low-pass it, decimate, take the
sample-to-sample phase difference, smooth and low-pass that, drop windows whose
RMS is an outlier (median + alpha * MAD), then keep the VMD modes whose centre
frequencies fall inside the articulation band.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .signal_core import (IqRecording, RealSeries, decimate, fir_filter,
                          frequency_shift, moving_average, read_series, write_series)
from .vmd import VmdResult, vmd

NO_ARTICULATION = "no articulation detected"


@dataclass
class GateReport:
    window_len_s: float
    alpha: float
    g: RealSeries
    kept: list
    discarded: list
    threshold: float = float("inf")
    rounds: int = 0
    disabled: bool = False
    n_samples: int = 0
    sample_rate_hz: float = 0.0

    def gaps(self, t0_s: float = 0.0) -> list:
        """Discarded windows as merged ``(start_s, end_s)`` intervals."""
        out = []
        w = int(round(self.window_len_s * self.sample_rate_hz))
        for i in self.discarded:
            a = t0_s + i * w / self.sample_rate_hz
            b = t0_s + min((i + 1) * w, self.n_samples) / self.sample_rate_hz
            if out and abs(out[-1][1] - a) < 1e-12:
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
        return out


@dataclass
class MotionTrace:
    values: RealSeries
    gaps: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    diagnostic: str = ""

    @property
    def is_empty(self) -> bool:
        return len(self.values) == 0

    def gap_mask(self) -> np.ndarray:
        """Boolean mask of samples that fall inside a gap."""
        t = self.values.times()
        mask = np.zeros(len(t), dtype=bool)
        for a, b in self.gaps:
            mask |= (t >= a - 1e-12) & (t < b - 1e-12)
        return mask

    def filled(self) -> np.ndarray:
        """Sample values with gap samples replaced by zeros."""
        v = np.array(self.values.values, copy=True)
        v[self.gap_mask() | ~np.isfinite(v)] = 0.0
        return v

    def spans(self) -> list:
        """Gap-free index ranges ``[(i0, i1), ...]`` (end exclusive)."""
        bad = self.gap_mask() | ~np.isfinite(self.values.values)
        spans, start = [], None
        for i, b in enumerate(bad):
            if not b and start is None:
                start = i
            elif b and start is not None:
                spans.append((start, i))
                start = None
        if start is not None:
            spans.append((start, len(bad)))
        return spans


def isolate_backscatter(r: IqRecording, delta_f1_hz: float, bandwidth_hz: float, taps: int = 255) -> IqRecording:
    """Bring the first-order tag sideband at +delta_f1 to DC and low-pass to ``bandwidth_hz / 2``."""
    nyq = r.sample_rate_hz / 2
    if bandwidth_hz <= 0:
        raise ParameterError("bandwidth_hz must be positive")
    if bandwidth_hz >= 2 * delta_f1_hz:
        raise ParameterError(f"bandwidth {bandwidth_hz} Hz reaches DC from the {delta_f1_hz} Hz sideband; "
                             "the direct path would leak")
    if delta_f1_hz + bandwidth_hz / 2 >= nyq:
        raise ParameterError(f"sideband {delta_f1_hz} +/- {bandwidth_hz / 2} Hz exceeds Nyquist {nyq} Hz")
    shifted = frequency_shift(r, delta_f1_hz)
    return fir_filter(shifted, (0.0, bandwidth_hz / 2), taps)


def phase_difference(s: IqRecording, return_quality: bool = False):
    """``angle(s[t] conj(s[t-1]))`` in (-pi, pi]; zero-magnitude pairs give 0."""
    if len(s) < 2:
        raise ParameterError("phase difference needs at least two samples")
    z = s.samples[1:] * np.conj(s.samples[:-1])
    dead = z == 0
    d = np.angle(z)
    d[d == -np.pi] = np.pi
    d[dead] = 0.0
    out = RealSeries(d, s.sample_rate_hz, t0_s=s.t0_s + 1.0 / s.sample_rate_hz, channel=s.channel)
    if return_quality:
        return out, int(dead.sum())
    return out


def _gate_values(g: np.ndarray, alpha: float, rounds: int | None):
    kept = np.ones(g.size, dtype=bool)
    threshold, n = float("inf"), 0
    while rounds is None or n < rounds:
        cur = g[kept]
        med = np.median(cur)
        mad = np.median(np.abs(cur - med))
        threshold = float(med + alpha * mad)
        n += 1
        new = kept & (g <= threshold)
        if new.sum() == kept.sum():
            break
        kept = new
    return kept, threshold, n


def mad_gate(dphi: RealSeries, window_s: float = 0.5, alpha: float = 3.0, rounds: int | None = None) -> GateReport:
    """Flag non-overlapping windows whose RMS exceeds median + alpha * MAD.

    The threshold is re-estimated on the surviving windows until nothing more
    is discarded (``rounds=None``); ``rounds=1`` is the single-pass rule.  With
    fewer than three windows the gate is disabled and everything is kept.
    """
    if not window_s > 0:
        raise ParameterError("gate window must be positive")
    if not alpha > 0:
        raise ParameterError("alpha must be positive")
    w = max(1, int(round(window_s * dphi.sample_rate_hz)))
    v = dphi.values
    n_win = int(np.ceil(len(v) / w)) if len(v) else 0
    g = np.array([np.sqrt(np.mean(v[i * w:(i + 1) * w] ** 2)) for i in range(n_win)])
    report = GateReport(window_s, alpha, RealSeries(g, 1.0 / window_s, t0_s=dphi.t0_s),
                        kept=list(range(n_win)), discarded=[], n_samples=len(v),
                        sample_rate_hz=dphi.sample_rate_hz)
    if n_win < 3:
        report.disabled = True
        return report
    kept, thr, n = _gate_values(g, alpha, rounds)
    report.kept = [int(i) for i in np.flatnonzero(kept)]
    report.discarded = [int(i) for i in np.flatnonzero(~kept)]
    report.threshold = thr
    report.rounds = n
    return report


def reconstruct_lip_trace(v: VmdResult, keep_band=(1.0, 50.0), gaps=(), t0_s: float = 0.0,
                          envelope_hz: float = 50.0) -> MotionTrace:
    """Sum the modes whose centre frequency lies in ``keep_band`` (inclusive)."""
    low, high = keep_band
    if not (0 <= low < high <= envelope_hz):
        raise ParameterError(f"keep band {keep_band} must lie inside 0-{envelope_hz} Hz")
    if v.modes.shape[0] < 1:
        raise ParameterError("VMD result has no modes")
    keep = [k for k, c in enumerate(v.center_freqs_hz) if low <= c <= high]
    prov = {"vmd_modes_kept": keep, "vmd_center_freqs_hz": [float(c) for c in v.center_freqs_hz],
            "keep_band_hz": [float(low), float(high)]}
    if not keep:
        return MotionTrace(RealSeries(np.zeros(0), v.sample_rate_hz, t0_s), list(gaps), prov, NO_ARTICULATION)
    values = v.modes[keep].sum(axis=0)
    trace = MotionTrace(RealSeries(values, v.sample_rate_hz, t0_s), list(gaps), prov)
    if trace.gaps:
        values = values.copy()
        values[trace.gap_mask()] = np.nan
        trace.values = RealSeries(values, v.sample_rate_hz, t0_s)
    return trace


@dataclass
class IsolationConfig:
    delta_f1_hz: float = 2000.0
    bandwidth_hz: float = 200.0
    trace_rate_hz: float = 1000.0
    taps: int = 255
    smooth: int = 5
    lowpass_hz: float = 50.0
    gating: bool = True
    gate_window_s: float = 0.5
    alpha: float = 3.0
    gate_rounds: int | None = None
    vmd: bool = True
    vmd_modes: int = 4
    vmd_penalty: float = 2000.0
    vmd_tol: float = 1e-6
    vmd_max_iter: int = 500
    keep_band: tuple = (1.0, 50.0)

    @classmethod
    def from_dict(cls, d: dict) -> "IsolationConfig":
        d = dict(d)
        if "keep_band" in d:
            d["keep_band"] = tuple(d["keep_band"])
        return cls(**d)


@dataclass
class IsolationReport:
    gate: GateReport | None
    vmd: VmdResult | None
    dead_samples: int
    filtered: RealSeries = field(repr=False, default=None)


def filtered_phase_trace(r: IqRecording, cfg: IsolationConfig):
    """Sideband isolation, decimation, phase difference, smoothing and low-pass."""
    iso = isolate_backscatter(r, cfg.delta_f1_hz, cfg.bandwidth_hz, cfg.taps)
    factor = int(round(r.sample_rate_hz / cfg.trace_rate_hz))
    if factor < 1 or abs(r.sample_rate_hz / factor - cfg.trace_rate_hz) > 1e-6:
        raise ParameterError(f"trace rate {cfg.trace_rate_hz} Hz must divide sample rate {r.sample_rate_hz} Hz")
    if cfg.trace_rate_hz / 2 < cfg.bandwidth_hz / 2:
        raise ParameterError("trace rate too low for the isolation bandwidth")
    iso = decimate(iso, factor)
    dphi, dead = phase_difference(iso, return_quality=True)
    dphi = moving_average(dphi, cfg.smooth)
    dphi = fir_filter(dphi, (0.0, cfg.lowpass_hz), cfg.taps)
    return dphi, dead


def extract_motion_trace(r: IqRecording, cfg: IsolationConfig | None = None):
    """Full isolation chain; returns ``(MotionTrace, IsolationReport)``."""
    cfg = cfg or IsolationConfig()
    dphi, dead = filtered_phase_trace(r, cfg)
    gate = None
    gaps = []
    work = dphi.values
    if cfg.gating:
        gate = mad_gate(dphi, cfg.gate_window_s, cfg.alpha, cfg.gate_rounds)
        gaps = gate.gaps(dphi.t0_s)
        if gaps:
            work = work.copy()
            w = int(round(cfg.gate_window_s * dphi.sample_rate_hz))
            for i in gate.discarded:
                work[i * w:(i + 1) * w] = 0.0
    prov = {"delta_f1_hz": cfg.delta_f1_hz, "filter_band_hz": [0.0, cfg.lowpass_hz],
            "bandwidth_hz": cfg.bandwidth_hz}
    result = None
    if cfg.vmd:
        init = (np.arange(cfg.vmd_modes) + 0.5) * cfg.lowpass_hz / cfg.vmd_modes
        result = vmd(RealSeries(work, dphi.sample_rate_hz), cfg.vmd_modes, cfg.vmd_penalty, cfg.vmd_tol,
                     cfg.vmd_max_iter, init_freqs_hz=init)
        trace = reconstruct_lip_trace(result, cfg.keep_band, gaps, dphi.t0_s, envelope_hz=cfg.lowpass_hz)
    else:
        vals = work.copy()
        trace = MotionTrace(RealSeries(vals, dphi.sample_rate_hz, dphi.t0_s), gaps)
        if gaps:
            vals[trace.gap_mask()] = np.nan
    trace.provenance.update(prov)
    return trace, IsolationReport(gate, result, dead, dphi)


# --------------------------------------------------------------------------- #
# trace files: RealSeries format, gap list and provenance in the sidecar

def write_trace(path, trace: MotionTrace) -> Path:
    extra = {"gaps": [[float(a), float(b)] for a, b in trace.gaps],
             "provenance": json.loads(json.dumps(trace.provenance, default=float)),
             "diagnostic": trace.diagnostic}
    return write_series(path, RealSeries(trace.filled(), trace.values.sample_rate_hz, trace.values.t0_s),
                        channel="motion-trace", extra=extra)


def read_trace(path) -> MotionTrace:
    from .signal_core import read_manifest

    meta = read_manifest(path)
    series = read_series(path)
    trace = MotionTrace(series, [tuple(g) for g in meta.get("gaps", [])], meta.get("provenance", {}),
                        meta.get("diagnostic", ""))
    if trace.gaps:
        vals = series.values.copy()
        vals[trace.gap_mask()] = np.nan
        trace.values = RealSeries(vals, series.sample_rate_hz, series.t0_s)
    return trace
