"""Synthetic backscatter scenes driven by a rigid-body lip-motion model.

An articulator point moves as ``L + v t + R(t) l`` where ``R(t)`` rotates by
``|omega| t`` about the fixed axis ``omega / |omega|``.  The tag-reflected path
picks up the round-trip Doppler phase of that point; the tag's square-wave
switching at ``delta_f1_hz`` moves it onto odd sidebands of the carrier.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .signal_core import IqRecording, write_series

log = logging.getLogger(__name__)

MAX_LEVER_ARM_M = 0.05


def _vec3(x, name):
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ParameterError(f"{name} must be a 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class KinematicMotif:
    L: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    l: np.ndarray
    duration_s: float
    opening_depth: float = 0.5

    def __post_init__(self):
        for name in ("L", "v", "omega", "l"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        if not self.duration_s > 0:
            raise ParameterError(f"motif duration must be positive, got {self.duration_s}")
        if np.linalg.norm(self.l) > MAX_LEVER_ARM_M + 1e-12:
            raise ParameterError(f"|l| = {np.linalg.norm(self.l):.4f} m exceeds mouth scale {MAX_LEVER_ARM_M} m")

    @property
    def angular_speed(self) -> float:
        return float(np.linalg.norm(self.omega))

    @property
    def axis(self) -> np.ndarray:
        """Unit rotation axis; +z by convention when the motif does not rotate."""
        w = self.angular_speed
        return self.omega / w if w > 0 else np.array([0.0, 0.0, 1.0])

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "KinematicMotif":
        return cls(**d)


def _check_time(m: KinematicMotif, t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > m.duration_s):
        raise ParameterError(f"time outside motif support [0, {m.duration_s}] s")
    return t


def _rotate(m: KinematicMotif, t: np.ndarray) -> np.ndarray:
    # Rodrigues' formula, vectorised over t; returns (..., 3)
    k = m.axis
    theta = m.angular_speed * t[..., None]
    kxl = np.cross(k, m.l)
    return m.l * np.cos(theta) + kxl * np.sin(theta) + k * (k @ m.l) * (1 - np.cos(theta))


def articulator_position(m: KinematicMotif, t):
    """Position ``L + v t + R(t) l`` (metres) at local time(s) ``t``."""
    t = _check_time(m, t)
    return m.L + m.v * t[..., None] + _rotate(m, t)


def articulator_velocity(m: KinematicMotif, t):
    """Velocity ``v + omega x (R(t) l)`` (m/s)."""
    t = _check_time(m, t)
    return m.v + np.cross(m.omega, _rotate(m, t))


@dataclass(frozen=True)
class InterfererProfile:
    """Bursty external mover seen through the tag sideband.

    Doppler follows ``doppler_hz + swing_hz * sin(2 pi swing_rate_hz tau)`` for
    ``tau`` in the burst; the path amplitude is Hann-tapered over the burst.
    """

    start_s: float
    duration_s: float
    doppler_hz: float = 35.0
    swing_hz: float = 15.0
    swing_rate_hz: float = 1.8
    via_tag: bool = True


@dataclass(frozen=True)
class Interferer:
    gain: complex
    profile: InterfererProfile


@dataclass(frozen=True)
class SceneConfig:
    carrier_hz: float = 2.4e9
    wave_speed: float = 3.0e8
    delta_f1_hz: float = 2000.0
    duty: float = 0.5
    direct_gain: complex = 1.0 + 0.0j
    tag_gain: complex = 0.3 + 0.0j
    interferers: tuple = ()
    snr_db: float = 20.0
    sample_rate_hz: float = 20000.0
    propagation_dir: tuple = (1.0, 0.0, 0.0)
    source: str = "constant"  # or "ofdm"
    ofdm_spacing_hz: float = 1250.0
    ofdm_subcarriers: int = 12
    isolation_bandwidth_hz: float = 200.0
    lead_s: float = 0.5
    tail_s: float = 0.5

    def __post_init__(self):
        e = np.asarray(self.propagation_dir, dtype=np.float64)
        if e.shape != (3,) or abs(np.linalg.norm(e) - 1.0) > 1e-9:
            raise ParameterError("propagation_dir must be a unit 3-vector")
        if not self.sample_rate_hz > 0:
            raise ParameterError("sample_rate_hz must be positive")
        if not (0 < self.delta_f1_hz < self.sample_rate_hz / 2):
            raise ParameterError("delta_f1_hz must lie in (0, Nyquist)")
        if not (0 < self.duty < 1):
            raise ParameterError("duty must be in (0, 1)")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ParameterError("snr_db must be finite or +inf")
        if self.source not in ("constant", "ofdm"):
            raise ParameterError(f"unknown source {self.source!r}")

    @property
    def e_hat(self) -> np.ndarray:
        return np.asarray(self.propagation_dir, dtype=np.float64)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        for key in ("direct_gain", "tag_gain"):
            if key in d:
                d[key] = _to_complex(d[key])
        if "propagation_dir" in d:
            d["propagation_dir"] = tuple(float(x) for x in d["propagation_dir"])
        if "interferers" in d:
            d["interferers"] = tuple(
                Interferer(_to_complex(i["gain"]), InterfererProfile(**i["profile"])) for i in d["interferers"]
            )
        return cls(**d)


def _to_complex(x) -> complex:
    if isinstance(x, (list, tuple)):
        return complex(float(x[0]), float(x[1]))
    return complex(x)


def doppler_shift(m: KinematicMotif, cfg: SceneConfig, t):
    """Monostatic Doppler ``(2 f / c) velocity . e_hat`` in Hz."""
    if not cfg.carrier_hz > 0:
        raise ParameterError("carrier_hz must be positive")
    return (2.0 * cfg.carrier_hz / cfg.wave_speed) * (articulator_velocity(m, t) @ cfg.e_hat)


def doppler_phase(m: KinematicMotif, cfg: SceneConfig, t):
    """Closed-form ``2 pi * integral_0^t f_D``: the radial displacement in carrier cycles."""
    disp = articulator_position(m, t) - articulator_position(m, 0.0)
    return 2.0 * np.pi * (2.0 * cfg.carrier_hz / cfg.wave_speed) * (disp @ cfg.e_hat)


def opening_trajectory(m: KinematicMotif, t):
    """Mouth-opening proxy in [0, 1]: a raised-cosine hump over the motif."""
    t = _check_time(m, t)
    return np.sin(np.pi * t / m.duration_s) ** 2


@dataclass
class UtteranceScript:
    tokens: list
    motifs: list
    inter_unit_gap_s: float = 0.5
    labels: list | None = None

    def __post_init__(self):
        if len(self.tokens) != len(self.motifs):
            raise ParameterError(f"{len(self.tokens)} tokens but {len(self.motifs)} motifs")
        if self.inter_unit_gap_s < 0:
            raise ParameterError("inter_unit_gap_s must be >= 0")


@dataclass
class SceneAnnotation:
    token_ids: list
    labels: list
    unit_boundaries_s: list
    doppler_hz: np.ndarray = field(repr=False)
    sample_rate_hz: float = 0.0
    warnings: list = field(default_factory=list)


def _square_wave(n: int, cfg: SceneConfig) -> np.ndarray:
    k = np.arange(n)
    frac = np.mod(k * cfg.delta_f1_hz / cfg.sample_rate_hz, 1.0)
    return np.where(frac < cfg.duty, 1.0, -1.0)


def _source(n: int, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.source == "constant":
        return np.ones(n, dtype=np.complex128)
    # static random-phase subcarriers on a fixed grid, unit average power
    half = cfg.ofdm_subcarriers // 2
    idx = np.arange(-half, half + 1)
    phases = rng.uniform(0, 2 * np.pi, size=idx.size)
    t = np.arange(n) / cfg.sample_rate_hz
    x = np.exp(1j * (2 * np.pi * cfg.ofdm_spacing_hz * np.outer(t, idx) + phases)).sum(axis=1)
    return x / np.sqrt(idx.size)


def _timeline(script: UtteranceScript, cfg: SceneConfig):
    spans, t = [], cfg.lead_s
    for i, m in enumerate(script.motifs):
        if i:
            t += script.inter_unit_gap_s
        spans.append((t, t + m.duration_s))
        t += m.duration_s
    return spans, t + cfg.tail_s


def synthesize_scene(script: UtteranceScript, cfg: SceneConfig, seed: int,
                     include_direct: bool = True, include_tag: bool = True):
    """Render ``r = h_d x + h_b(t) m(t) x + interferers + noise``.

    Returns ``(IqRecording, SceneAnnotation)``.  Random draws happen in a fixed
    order regardless of which paths are enabled, so the same seed always gives
    the same noise realisation.
    """
    fs = cfg.sample_rate_hz
    spans, total_s = _timeline(script, cfg)
    n = int(round(total_s * fs))
    rng = np.random.default_rng(seed)
    x = _source(n, cfg, rng)
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    sq = _square_wave(n, cfg)
    t_abs = np.arange(n) / fs

    f_d = np.zeros(n)
    phase = np.zeros(n)
    amp = np.ones(n)
    warnings = []
    half_bw = cfg.isolation_bandwidth_hz / 2
    acc = 0.0
    for (start, stop), m in zip(spans, script.motifs):
        i0 = int(math.ceil(start * fs - 1e-9))
        i1 = min(int(math.floor(stop * fs + 1e-9)), n - 1)
        phase[i0:] = acc
        tau = np.clip(t_abs[i0:i1 + 1] - start, 0.0, m.duration_s)
        local = doppler_phase(m, cfg, tau)
        phase[i0:i1 + 1] = acc + local
        acc += float(local[-1])
        phase[i1 + 1:] = acc
        f_d[i0:i1 + 1] = doppler_shift(m, cfg, tau)
        amp[i0:i1 + 1] = 1.0 + m.opening_depth * opening_trajectory(m, tau)
        peak = float(np.max(np.abs(f_d[i0:i1 + 1])))
        if peak > half_bw:
            warnings.append(f"motif at {start:.3f}s peaks at {peak:.1f} Hz Doppler, beyond isolation half-band {half_bw:.1f} Hz")

    r = np.zeros(n, dtype=np.complex128)
    if include_direct:
        r += cfg.direct_gain * x
    if include_tag:
        r += cfg.tag_gain * amp * np.exp(1j * phase) * sq * x
    for itf in cfg.interferers:
        p = itf.profile
        inside = (t_abs >= p.start_s) & (t_abs < p.start_s + p.duration_s)
        tau = np.where(inside, t_abs - p.start_s, 0.0)
        inst = p.doppler_hz + p.swing_hz * np.sin(2 * np.pi * p.swing_rate_hz * tau)
        ph = 2 * np.pi * np.cumsum(np.where(inside, inst, 0.0)) / fs
        env = np.where(inside, np.sin(np.pi * tau / p.duration_s) ** 2, 0.0)
        path = itf.gain * env * np.exp(1j * ph) * x
        r += path * sq if p.via_tag else path

    if math.isfinite(cfg.snr_db):
        p_ref = abs(cfg.direct_gain) ** 2 * float(np.mean(np.abs(x) ** 2))
        if p_ref == 0:
            p_ref = float(np.mean(np.abs(x) ** 2))
        sigma2 = p_ref / 10 ** (cfg.snr_db / 10)
        r += np.sqrt(sigma2 / 2) * noise

    ann = SceneAnnotation(
        token_ids=list(script.tokens),
        labels=list(script.labels) if script.labels else [str(t) for t in script.tokens],
        unit_boundaries_s=[(float(a), float(b)) for a, b in spans],
        doppler_hz=f_d,
        sample_rate_hz=fs,
        warnings=warnings,
    )
    return IqRecording(r, fs), ann


# --------------------------------------------------------------------------- #
# motif banks and corpus generation

@dataclass(frozen=True)
class MotifTemplate:
    """A base motif plus the per-utterance jitter applied to it."""

    base: KinematicMotif
    speed_jitter: float = 0.05
    amp_jitter: float = 0.10

    def sample(self, rng: np.random.Generator) -> KinematicMotif:
        s = 1.0 + rng.uniform(-self.speed_jitter, self.speed_jitter)
        a = 1.0 + rng.uniform(-self.amp_jitter, self.amp_jitter)
        b = self.base
        l = b.l * a
        norm = np.linalg.norm(l)
        if norm > MAX_LEVER_ARM_M:
            l = l * (MAX_LEVER_ARM_M / norm)
        return replace(b, v=b.v * s, omega=b.omega * s, l=l, duration_s=b.duration_s / s,
                       opening_depth=b.opening_depth * a)


def default_motif_bank(token_ids, cfg: SceneConfig | None = None,
                       rates_hz=(4.0, 8.0, 12.0, 16.0, 20.0, 24.0, 28.0, 32.0, 36.0, 40.0),
                       durations_s=(0.3, 0.45, 0.6), doppler_amps_hz=(20.0, 10.0),
                       drift_mps: float = 0.02, speed_jitter: float = 0.05,
                       amp_jitter: float = 0.10) -> dict:
    """Assign each token a distinct (rotation rate, duration, Doppler swing) motif.

    The lever arm is sized so the rotational Doppler swing equals the requested
    amplitude at every rate.  Combinations are enumerated rate-fastest, then
    duration, then amplitude.
    """
    cfg = cfg or SceneConfig()
    k_d = 2.0 * cfg.carrier_hz / cfg.wave_speed
    e = cfg.e_hat
    # rotate about an axis orthogonal to e_hat so the swing is fully radial
    axis = np.cross(e, [0.0, 0.0, 1.0])
    if np.linalg.norm(axis) < 1e-9:
        axis = np.cross(e, [0.0, 1.0, 0.0])
    axis /= np.linalg.norm(axis)
    lever_dir = np.cross(axis, e)
    combos = [(r, d, a) for a in doppler_amps_hz for d in durations_s for r in rates_hz]
    ids = list(token_ids)
    if len(ids) > len(combos):
        raise ParameterError(f"{len(ids)} tokens but only {len(combos)} distinct motif combinations")
    bank = {}
    for tok, (rate, dur, swing) in zip(ids, combos):
        w = 2 * np.pi * rate
        lever = min(swing / (k_d * w), MAX_LEVER_ARM_M)
        base = KinematicMotif(L=0.5 * e, v=drift_mps * e, omega=w * axis, l=lever * lever_dir,
                              duration_s=dur, opening_depth=0.5)
        bank[tok] = MotifTemplate(base, speed_jitter, amp_jitter)
    return bank


def utterance_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint32)[0])


def _render_one(job):
    (index, sentence_index, rep, sentence, token_ids, labels, bank, cfg, gap, seed, out_dir) = job
    useed = utterance_seed(seed, index)
    rng = np.random.default_rng(useed)
    motifs = [bank[t].sample(rng) for t in token_ids]
    script = UtteranceScript(token_ids, motifs, gap, labels)
    rec, ann = synthesize_scene(script, cfg, useed)
    rel = f"utt_{index:05d}.iq"
    write_series(Path(out_dir) / rel, rec, channel=f"utterance-{index}")
    return {
        "utterance_id": index,
        "iq_path": rel,
        "transcript": sentence,
        "token_ids": [int(t) for t in token_ids],
        "unit_boundaries_s": [[round(a, 9), round(b, 9)] for a, b in ann.unit_boundaries_s],
        "seed": useed,
        "sentence_index": sentence_index,
        "repetition": rep,
        "warnings": ann.warnings,
    }


def generate_corpus(sentences, lexicon, motif_bank: dict, n_per_sentence: int, seed: int,
                    out_dir, cfg: SceneConfig | None = None, inter_unit_gap_s: float = 0.5,
                    workers: int = 1) -> dict:
    """Render ``n_per_sentence`` jittered utterances per sentence into ``out_dir``.

    Writes ``manifest.jsonl`` (one record per utterance) and ``rejected.json``;
    returns ``{"rows": [...], "rejected": [...], "manifest": path}``.
    """
    from .errors import UntokenizableWordError

    cfg = cfg or SceneConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs, rejected, index = [], [], 0
    for si, sentence in enumerate(sentences):
        try:
            ids = lexicon.tokenize(sentence).content_ids()
        except UntokenizableWordError as exc:
            rejected.append({"sentence_index": si, "sentence": sentence, "word": exc.word, "reason": str(exc)})
            continue
        missing = [t for t in ids if t not in motif_bank]
        if missing:
            rejected.append({"sentence_index": si, "sentence": sentence, "word": None,
                             "reason": f"no motif for token ids {missing}"})
            continue
        labels = [lexicon.token(t) for t in ids]
        for rep in range(n_per_sentence):
            jobs.append((index, si, rep, sentence, ids, labels, motif_bank, cfg, inter_unit_gap_s, seed, str(out_dir)))
            index += 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_render_one, jobs))
    else:
        rows = [_render_one(j) for j in jobs]
    manifest = out_dir / "manifest.jsonl"
    with manifest.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    (out_dir / "rejected.json").write_text(json.dumps(rejected, indent=2) + "\n")
    if rejected:
        log.warning("rejected %d sentence(s) during corpus generation", len(rejected))
    return {"rows": rows, "rejected": rejected, "manifest": manifest}


def read_manifest_rows(path) -> list:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]
