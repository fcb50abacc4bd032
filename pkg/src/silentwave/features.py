"""Unit descriptors, standardisation and k-means pseudo-labels.

Layout of the 67-dim vector (frozen, see ``FEATURE_NAMES``):

    [0..13]   raw unit: 9 STE statistics + 5 spectral descriptors
    [14..27]  the same 14 on the first difference
    [28..41]  the same 14 on the second difference
    [42..66]  mean energy of 25 equal-duration sub-segments of the raw unit

STE statistics (max, min, mean, std, skewness, excess kurtosis, Q1, Q2, Q3)
are computed from the sorted STE values and every window sum is taken over
sorted samples, so they are bit-identical for a time-reversed unit.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError

STE_STATS = ("ste_max", "ste_min", "ste_mean", "ste_std", "ste_skew", "ste_kurt", "ste_q1", "ste_q2", "ste_q3")
SPECTRAL = ("spec_centroid", "spec_spread", "spec_entropy", "spec_skew", "spec_kurt")
ORDERS = ("raw", "d1", "d2")
N_SUBSEGMENTS = 25
FEATURE_NAMES = tuple(f"{o}_{n}" for o in ORDERS for n in STE_STATS + SPECTRAL) + tuple(
    f"sub_mean_{i:02d}" for i in range(N_SUBSEGMENTS))
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 67


@dataclass(frozen=True)
class FeatureParams:
    ste_window: int = 20  # samples at trace rate
    min_samples: int = 50


def _sorted_sum(a: np.ndarray, axis=-1):
    return np.sort(a, axis=axis).sum(axis=axis)


def _moments(values: np.ndarray, weights: np.ndarray | None = None):
    """(mean, std, skewness, excess kurtosis); zero variance gives 0 for the last three."""
    if weights is None:
        v = np.sort(values)
        mean = v.sum() / v.size
        d = np.sort(v - mean)
        var = np.sort(d ** 2).sum() / v.size
        # spread at rounding level (e.g. a constant summed in a different order) counts as none
        if v[-1] == v[0] or var <= (16 * np.finfo(float).eps * np.abs(v).max()) ** 2:
            return float(mean), 0.0, 0.0, 0.0
        m3 = np.sort(d ** 3).sum() / v.size
        m4 = np.sort(d ** 4).sum() / v.size
    else:
        mean = np.dot(values, weights)
        d = values - mean
        var = np.dot(d ** 2, weights)
        if var <= 0:
            return float(mean), 0.0, 0.0, 0.0
        m3 = np.dot(d ** 3, weights)
        m4 = np.dot(d ** 4, weights)
    return float(mean), float(np.sqrt(var)), float(m3 / var ** 1.5), float(m4 / var ** 2 - 3.0)


def short_time_energy_sorted(x: np.ndarray, window: int) -> np.ndarray:
    """Sliding windowed energy, each window summed in sorted order."""
    w = min(window, x.size)
    return _sorted_sum(sliding_window_view(x ** 2, w), axis=1)


def ste_statistics(x: np.ndarray, window: int) -> np.ndarray:
    e = np.sort(short_time_energy_sorted(x, window))
    mean, std, skew, kurt = _moments(e)
    q1, q2, q3 = np.quantile(e, [0.25, 0.5, 0.75])
    return np.array([e[-1], e[0], mean, std, skew, kurt, q1, q2, q3])


def spectral_descriptors(x: np.ndarray, fs: float) -> np.ndarray:
    """Centroid and spread in Hz, entropy in bits, skewness and excess kurtosis
    of the normalised power spectrum of the Hann-windowed, mean-removed unit."""
    x = x - x.mean()
    p = np.abs(np.fft.rfft(x * np.hanning(x.size))) ** 2
    total = p.sum()
    if total <= 0:
        return np.zeros(len(SPECTRAL))
    P = p / total
    f = np.fft.rfftfreq(x.size, 1.0 / fs)
    centroid, spread, skew, kurt = _moments(f, P)
    nz = P[P > 0]
    entropy = float(-(nz * np.log2(nz)).sum())
    return np.array([centroid, spread, entropy, skew, kurt])


def subsegment_edges(n: int, parts: int = N_SUBSEGMENTS) -> np.ndarray:
    """Split points for ``parts`` pieces whose lengths differ by at most one
    sample and read the same backwards, so edge[i] + edge[parts-i] == n."""
    q, r = divmod(n, parts)
    lengths = np.full(parts, q)
    if r % 2:
        lengths[parts // 2] += 1
    pairs = r // 2
    for j in range(pairs):
        i = (j * (parts // 2)) // pairs
        lengths[i] += 1
        lengths[parts - 1 - i] += 1
    return np.concatenate(([0], np.cumsum(lengths)))


def subsegment_means(x: np.ndarray, parts: int = N_SUBSEGMENTS) -> np.ndarray:
    e = subsegment_edges(x.size, parts)
    return np.array([_sorted_sum(x[a:b] ** 2) / (b - a) for a, b in zip(e[:-1], e[1:])])


def extract_features(seg, params: FeatureParams | None = None) -> np.ndarray:
    """67-dim descriptor of a unit (``UnitSegment`` or ``RealSeries``)."""
    p = params or FeatureParams()
    series = getattr(seg, "trace_slice", seg)
    x = np.asarray(series.values, dtype=np.float64)
    fs = series.sample_rate_hz
    if x.size < max(p.min_samples, N_SUBSEGMENTS, 3):
        raise ParameterError(f"segment has {x.size} samples, need at least {p.min_samples}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("segment contains non-finite samples")
    parts = []
    for sig in (x, np.diff(x), np.diff(x, n=2)):
        parts.append(ste_statistics(sig, p.ste_window))
        parts.append(spectral_descriptors(sig, fs))
    parts.append(subsegment_means(x))
    return np.concatenate(parts)


# --------------------------------------------------------------------------- #
# standardisation

@dataclass
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray  # bool per dim; std forced to 1 there

    def apply(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "degenerate": self.degenerate.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(np.array(d["mean"]), np.array(d["std"]), np.array(d["degenerate"], dtype=bool))


def fit_scaler(vectors) -> FeatureScaler:
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ParameterError("fitting a scaler needs at least two vectors")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    degenerate = np.ptp(X, axis=0) == 0
    # a constant column maps to exactly 0
    mean[degenerate] = X[0, degenerate]
    std[degenerate] = 1.0
    return FeatureScaler(mean, std, degenerate)


def apply_scaler(scaler: FeatureScaler, v) -> np.ndarray:
    return scaler.apply(v)


# --------------------------------------------------------------------------- #
# k-means

@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    seed: int
    inertia: float
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0

    def predict(self, v) -> np.ndarray | int:
        X = np.asarray(v, dtype=np.float64)
        single = X.ndim == 1
        labels = _assign(np.atleast_2d(X), self.centroids)[0]
        return int(labels[0]) if single else labels

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps({"k": self.k, "seed": self.seed, "inertia": self.inertia,
                                    "n_iter": self.n_iter, "inertia_history": self.inertia_history,
                                    "centroids": self.centroids.tolist()}))
        return path

    @classmethod
    def load(cls, path) -> "ClusterModel":
        d = json.loads(Path(path).read_text())
        return cls(d["k"], np.array(d["centroids"], dtype=np.float64), d["seed"], d["inertia"],
                   d.get("inertia_history", []), d.get("n_iter", 0))


def _sqdist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = np.empty((X.shape[0], C.shape[0]))
    for j in range(C.shape[0]):
        d[:, j] = ((X - C[j]) ** 2).sum(axis=1)
    return d


def _assign(X, C):
    d = _sqdist(X, C)
    labels = np.argmin(d, axis=1)  # first minimum, so ties go to the lowest id
    return labels, float(d[np.arange(X.shape[0]), labels].sum())


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(X, C, max_iter):
    labels, inertia = _assign(X, C)
    history = [inertia]
    it = 0
    for it in range(1, max_iter + 1):
        C = C.copy()
        for j in range(C.shape[0]):
            members = X[labels == j]
            if len(members):  # an empty cluster keeps its centroid
                C[j] = members.mean(axis=0)
        new_labels, inertia = _assign(X, C)
        history.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return C, labels, history, it


def _hartigan_pass(X, labels, k):
    """One sweep of single-point transfers, each strictly lowering the
    within-cluster sum of squares.  Returns (labels, moved)."""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    C = np.array([X[labels == j].mean(axis=0) if counts[j] else np.zeros(X.shape[1]) for j in range(k)])
    moved = False
    for i in range(X.shape[0]):
        a = labels[i]
        if counts[a] <= 1:
            continue
        d = ((C - X[i]) ** 2).sum(axis=1)
        remove = counts[a] / (counts[a] - 1) * d[a]
        add = counts / (counts + 1) * d
        add[a] = np.inf
        j = int(np.argmin(add))
        if add[j] < remove * (1 - 1e-12):
            C[a] = (counts[a] * C[a] - X[i]) / (counts[a] - 1)
            C[j] = (counts[j] * C[j] + X[i]) / (counts[j] + 1)
            counts[a] -= 1
            counts[j] += 1
            labels[i] = j
            moved = True
    return labels, moved


def _fit_once(X, C, max_iter):
    """Lloyd to convergence, then Hartigan transfers, repeated until neither moves."""
    k = C.shape[0]
    history, total_it = [], 0
    for _ in range(max_iter):
        C, labels, h, it = _lloyd(X, C, max_iter)
        history.extend(h if not history else h[1:])
        total_it += it
        labels, moved = _hartigan_pass(X, labels, k)
        if not moved:
            break
        C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
    return C, labels, history, total_it


def kmeans(vectors, k: int, seed: int = 0, max_iter: int = 300, n_init: int = 10) -> ClusterModel:
    """Best of ``n_init`` fits from k-means++ starts, all drawn from one seeded
    stream.  Each fit runs Lloyd iterations followed by Hartigan single-point
    transfers, which escape many of Lloyd's poor fixed points."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError("kmeans expects a 2-D array")
    if k < 1:
        raise ParameterError("k must be >= 1")
    n_distinct = np.unique(X, axis=0).shape[0]
    if k > n_distinct:
        raise ParameterError(f"k={k} exceeds the {n_distinct} distinct points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        C, labels, history, it = _fit_once(X, _kmeanspp(X, k, rng), max_iter)
        if best is None or history[-1] < best[2][-1]:
            best = (C, labels, history, it)
    C, labels, history, it = best
    return ClusterModel(k, C, seed, history[-1], history, it)


def predict(model: ClusterModel, v):
    return model.predict(v)


@dataclass
class PseudoLabels:
    labels: np.ndarray
    counts: dict

    def distribution(self) -> dict:
        n = max(1, len(self.labels))
        return {k: c / n for k, c in sorted(self.counts.items())}


def assign_pseudo_labels(model: ClusterModel, vectors) -> PseudoLabels:
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    labels = model.predict(X) if len(X) else np.zeros(0, dtype=np.int64)
    return PseudoLabels(labels, dict(Counter(int(l) for l in labels)))


# --------------------------------------------------------------------------- #
# feature table io

def write_feature_table(path, matrix, rows: list) -> Path:
    """``<path>.npy`` holds the float64 matrix, ``<path>.rows.json`` one record per row."""
    path = Path(path)
    M = np.asarray(matrix, dtype=np.float64)
    if M.shape[0] != len(rows):
        raise ParameterError(f"{M.shape[0]} feature rows but {len(rows)} row records")
    np.save(path.with_suffix(".npy"), M)
    path.with_suffix(".rows.json").write_text(json.dumps({"names": list(FEATURE_NAMES), "rows": rows}))
    return path.with_suffix(".npy")


def read_feature_table(path):
    path = Path(path)
    M = np.load(path.with_suffix(".npy"))
    meta = json.loads(path.with_suffix(".rows.json").read_text())
    return M, meta["rows"]
