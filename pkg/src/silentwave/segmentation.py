"""Energy-based lip-motion unit segmentation.

Coarse pass: a sample is active when the centred short-window mean power
exceeds the trailing long-window mean power; active runs become candidate
regions.  Fine pass: inside each region a smoothed fine-window STE curve is
searched for prominent peaks, and a boundary is placed at the deepest point
between two adjacent peaks whose heights differ by more than
``lambda2 * (max - min)`` of the region's STE.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import hilbert

from .errors import ParameterError
from .isolation import MotionTrace
from .signal_core import RealSeries, running_sum

# relative slack on the activity comparison so a flat trace never trips it on rounding noise
_ACTIVITY_EPS = 1e-9


@dataclass(frozen=True)
class SegmenterParams:
    w_s: float = 0.2
    w_l: float = 5.0
    w_f: float = 0.1
    lambda1: float = 0.1
    lambda2: float = 0.3
    min_region_s: float = 0.05
    edge_floor: float = 1e-3

    def __post_init__(self):
        if not (0 < self.w_s < self.w_l):
            raise ParameterError("need 0 < w_s < w_l")
        if not self.w_f > 0:
            raise ParameterError("w_f must be positive")
        if not (0 < self.lambda1 < 1) or not (0 < self.lambda2 < 1):
            raise ParameterError("lambda1 and lambda2 must lie in (0, 1)")
        if not 0 <= self.edge_floor < 1:
            raise ParameterError("edge_floor must lie in [0, 1)")


@dataclass
class UnitSegment:
    start_s: float
    end_s: float
    trace_slice: RealSeries
    source_utterance: str = ""

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ParameterError(f"segment start {self.start_s} must precede end {self.end_s}")


def centered_mean(p: np.ndarray, width: int) -> np.ndarray:
    """Mean of ``p`` over a centred window, shrinking at the edges."""
    n = p.size
    half = width // 2
    cs = np.concatenate(([0.0], np.cumsum(p)))
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx - half + width, 0, n)
    out = (cs[hi] - cs[lo]) / (hi - lo)
    nz = np.concatenate(([0], np.cumsum(p != 0)))
    out[(nz[hi] - nz[lo]) == 0] = 0.0
    return np.maximum(out, 0.0)


def trailing_mean(p: np.ndarray, width: int) -> np.ndarray:
    """Mean over the trailing ``width`` samples; before a full window exists,
    the first full window stands in."""
    n = p.size
    full = running_sum(p, width) / width  # value at index t+width-1
    out = np.empty(n)
    out[width - 1:] = full
    out[:width - 1] = full[0]
    return out


def _runs(mask: np.ndarray) -> list:
    if not mask.any():
        return []
    d = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def activity_mask(x: np.ndarray, fs: float, p: SegmenterParams, diagnostics: list | None = None) -> np.ndarray:
    power = x ** 2
    ns = max(1, int(round(p.w_s * fs)))
    nl = max(1, int(round(p.w_l * fs)))
    e_s = centered_mean(power, ns)
    if power.size < nl:
        e_l = np.full(power.size, power.mean())
        if diagnostics is not None:
            diagnostics.append(f"span of {power.size / fs:.2f}s shorter than long window {p.w_l}s; "
                               "using the global mean as baseline")
    else:
        e_l = trailing_mean(power, nl)
    return e_s > e_l * (1 + _ACTIVITY_EPS)


def find_peaks(ste: np.ndarray, min_prominence: float) -> list:
    """Interior local maxima (plateaus reduced to their first sample) with
    prominence above ``min_prominence``; prominence is measured to the lower
    of the two flanking valleys, region edges bounding the outermost ones."""
    n = ste.size
    cand = []
    i = 1
    while i < n - 1:
        j = i
        while j + 1 < n and ste[j + 1] == ste[i]:
            j += 1
        if ste[i - 1] < ste[i] and j < n - 1 and ste[j + 1] < ste[i]:
            cand.append(i)
        i = j + 1
    peaks = []
    for k, c in enumerate(cand):
        lo = cand[k - 1] if k > 0 else 0
        hi = cand[k + 1] if k + 1 < len(cand) else n - 1
        left_valley = ste[lo:c + 1].min()
        right_valley = ste[c:hi + 1].min()
        if ste[c] - min(left_valley, right_valley) > min_prominence:
            peaks.append(c)
    return peaks


def split_region(ste: np.ndarray, lambda1: float, lambda2: float) -> list:
    """Interior split indices for one region's fine STE curve."""
    if ste.size < 3:
        return []
    top = ste.max()
    peaks = [i for i in find_peaks(ste, lambda1 * top) if ste[i] > lambda1 * top]
    delta = lambda2 * (top - ste.min())
    cuts = []
    for a, b in zip(peaks, peaks[1:]):
        if abs(ste[b] - ste[a]) > delta:
            v = a + int(np.argmin(ste[a:b + 1]))  # argmin keeps the earliest index on ties
            if 0 < v < ste.size and (not cuts or v > cuts[-1]):
                cuts.append(v)
    return cuts


def relax_edges(ste: np.ndarray, regions: list, floor_frac: float, quiet: float = 0.0) -> list:
    """Slide each region edge outward while the fine STE keeps falling and
    stays above both ``floor_frac`` of the region peak and the ``quiet``
    level, without overrunning a neighbour.  The coarse comparison against a
    long-window mean cuts bursts well inside their tails; this moves the cut
    to the foot of the slope."""
    out = []
    for k, (a, b) in enumerate(regions):
        floor = max(floor_frac * ste[a:b].max(), quiet)
        lo = out[-1][1] if out else 0
        hi = regions[k + 1][0] if k + 1 < len(regions) else ste.size
        while a > lo and ste[a - 1] < ste[a] and ste[a] > floor:
            a -= 1
        while b < hi and ste[b] < ste[b - 1] and ste[b - 1] > floor:
            b += 1
        out.append((a, b))
    return out


def _segment_span(x: np.ndarray, fs: float, p: SegmenterParams, diagnostics):
    active = activity_mask(x, fs, p, diagnostics)
    nf = max(1, int(round(p.w_f * fs)))
    fine = centered_mean(centered_mean(x ** 2, nf), nf)
    # edges walk on envelope energy: no carrier ripple to stall on, no extra smoothing spread
    env = centered_mean(np.abs(hilbert(x)) ** 2, nf) if x.size > 1 else x ** 2
    min_len = p.min_region_s * fs
    regions = [(a, b) for a, b in _runs(active) if b - a >= min_len]
    # typical envelope energy outside activity: the level a relaxed edge should not sink below
    quiet = float(np.median(env[~active])) if not active.all() else 0.0
    out = []
    for a, b in relax_edges(env, regions, p.edge_floor, quiet):
        cuts = split_region(fine[a:b], p.lambda1, p.lambda2)
        edges = [a] + [a + c for c in cuts] + [b]
        out.extend((s, e) for s, e in zip(edges, edges[1:]) if e > s)
    return out


def segment_units(trace: MotionTrace, params: SegmenterParams | None = None, utterance_id: str = "",
                  diagnostics: list | None = None) -> list:
    """Candidate lip-motion units, sorted and disjoint, never crossing a gap."""
    p = params or SegmenterParams()
    if trace.is_empty:
        raise ParameterError("cannot segment an empty trace")
    fs = trace.values.sample_rate_hz
    t0 = trace.values.t0_s
    vals = trace.values.values
    units = []
    for i0, i1 in trace.spans():
        for s, e in _segment_span(vals[i0:i1], fs, p, diagnostics):
            a, b = i0 + s, i0 + e
            units.append(UnitSegment(t0 + a / fs, t0 + b / fs, RealSeries(vals[a:b], fs, t0 + a / fs),
                                     utterance_id))
    return units


def write_segments(path, units) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start_s", "end_s", "utterance"])
        for u in units:
            w.writerow([f"{u.start_s:.6f}", f"{u.end_s:.6f}", u.source_utterance])
    return path


def read_segments(path) -> list:
    with Path(path).open() as fh:
        return [(float(r["start_s"]), float(r["end_s"]), r.get("utterance", "")) for r in csv.DictReader(fh)]
