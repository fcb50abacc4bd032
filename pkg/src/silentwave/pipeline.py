"""Stage orchestration with content-hash caching.

Stages run in a fixed order; each one's cache key hashes its own config
sections together with the keys of the stages it reads from, so changing a
setting re-runs exactly the stages downstream of it.  Outputs live in
``<out>/seed_<n>/<stage>-<key prefix>/`` and a stage counts as cached only
once its ``done.json`` (holding the full key) has been written.
"""
from __future__ import annotations

import json
import logging
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, config_hash
from .errors import ParameterError, SilentwaveError, StageError

log = logging.getLogger(__name__)

STAGES = ("simulate", "isolate", "segment", "features", "pretrain", "train", "decode", "eval")

# config sections and upstream stages feeding each stage's cache key
DEPENDS = {
    "simulate": (("corpus", "scene", "motifs", "lexicon"), ()),
    "isolate": (("isolation",), ("simulate",)),
    "segment": (("segmentation",), ("isolate",)),
    "features": (("features", "split"), ("segment",)),
    "pretrain": (("pretrain", "model", "frontend"), ("features",)),
    "train": (("train", "model", "frontend"), ("pretrain",)),
    "decode": (("decode",), ("train",)),
    "eval": ((), ("decode",)),
}


def make_sentences(words, n: int, min_words: int, max_words: int, min_count: int,
                   rng: np.random.Generator, max_tries: int = 1000) -> list:
    """Random word sequences (no repeats within a sentence) in which every word
    occurs at least ``min_count`` times across the set."""
    words = list(words)
    if len(set(words)) != len(words):
        raise ParameterError("word list contains duplicates")
    if not 1 <= min_words <= max_words <= len(words):
        raise ParameterError("need 1 <= min_words <= max_words <= len(words)")
    for _ in range(max_tries):
        sents = []
        for _ in range(n):
            k = int(rng.integers(min_words, max_words + 1))
            sents.append(" ".join(rng.choice(words, size=k, replace=False)))
        counts = {w: 0 for w in words}
        for s in sents:
            for w in s.split():
                counts[w] += 1
        if min(counts.values()) >= min_count:
            return sents
    raise ParameterError(f"could not cover every word {min_count} times in {n} sentences")


def split_indices(rows: list, mode: str, test_fraction: float, seed: int) -> tuple:
    """(train, test) utterance positions.  ``utterance`` draws a random subset
    of utterances; ``sentence`` holds out every rendition of a random subset of
    sentences."""
    if not 0 < test_fraction < 1:
        raise ParameterError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    n = len(rows)
    if mode == "utterance":
        n_test = max(1, int(round(n * test_fraction)))
        test = set(rng.permutation(n)[:n_test].tolist())
    elif mode == "sentence":
        sids = sorted({r["sentence_index"] for r in rows})
        n_test = max(1, int(round(len(sids) * test_fraction)))
        held = set(np.asarray(sids)[rng.permutation(len(sids))[:n_test]].tolist())
        test = {i for i, r in enumerate(rows) if r["sentence_index"] in held}
    else:
        raise ParameterError(f"unknown split mode {mode!r}")
    return [i for i in range(n) if i not in test], sorted(test)


@dataclass
class StageRecord:
    name: str
    key: str
    path: Path
    seconds: float = 0.0
    cached: bool = False


@dataclass
class SeedRun:
    cfg: PipelineConfig
    seed: int
    root: Path
    records: dict = field(default_factory=dict)

    # ------------------------------------------------------------ keys
    def key(self, stage: str) -> str:
        sections, upstream = DEPENDS[stage]
        payload = {"stage": stage, "version": __version__, "seed": self.seed,
                   "config": {s: self.cfg.raw.get(s) for s in sections},
                   "upstream": {u: self.key(u) for u in upstream}}
        return config_hash(payload)

    def stage_dir(self, stage: str) -> Path:
        return self.root / f"{stage}-{self.key(stage)[:16]}"

    def is_cached(self, stage: str) -> bool:
        done = self.stage_dir(stage) / "done.json"
        if not done.exists():
            return False
        stored = json.loads(done.read_text()).get("key")
        if stored != self.key(stage):
            raise StageError(stage, f"stale cache at {done.parent}: stored key does not match configuration")
        return True

    # ------------------------------------------------------------ driver
    def run(self, upto: str = "eval", force: bool = False) -> dict:
        if upto not in STAGES:
            raise ParameterError(f"unknown stage {upto!r}; choose from {', '.join(STAGES)}")
        for stage in STAGES[: STAGES.index(upto) + 1]:
            self.ensure(stage, force=force)
        return self.records

    def ensure(self, stage: str, force: bool = False) -> Path:
        if stage in self.records:
            return self.records[stage].path
        d = self.stage_dir(stage)
        if not force and self.is_cached(stage):
            self.records[stage] = StageRecord(stage, self.key(stage), d, 0.0, True)
            return d
        for u in DEPENDS[stage][1]:
            self.ensure(u, force=False)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        t0 = time.perf_counter()
        try:
            getattr(self, f"_stage_{stage}")(d)
        except SilentwaveError as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(stage, str(exc)) from exc
        except (OSError, ValueError, RuntimeError, TypeError, KeyError) as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        dt = time.perf_counter() - t0
        (d / "done.json").write_text(json.dumps({"key": self.key(stage), "stage": stage}, sort_keys=True))
        self.records[stage] = StageRecord(stage, self.key(stage), d, dt, False)
        log.info("seed %d: %s done in %.1fs", self.seed, stage, dt)
        return d

    # ------------------------------------------------------------ helpers
    def _path(self, stage: str) -> Path:
        return self.ensure(stage)

    def rows(self) -> list:
        from .simulator import read_manifest_rows

        return read_manifest_rows(self._path("simulate") / "corpus" / "manifest.jsonl")

    def lexicon(self):
        from .lexicon import Lexicon

        return Lexicon.load(self._path("simulate") / "lexicon.txt")

    def split(self) -> tuple:
        s = self.cfg.section("split")
        return split_indices(self.rows(), s.get("mode", "utterance"), float(s.get("test_fraction", 0.2)), self.seed)

    def trace(self, row):
        from .isolation import read_trace

        return read_trace(self._path("isolate") / f"utt_{row['utterance_id']:05d}.trace")

    def frontend(self):
        from .decoder.frontend import FrontendConfig

        return FrontendConfig(**self.cfg.section("frontend"))

    def model_config(self):
        from .decoder.model import PRESETS

        m = self.cfg.section("model")
        preset = m.pop("preset", "toy")
        if preset not in PRESETS:
            raise ParameterError(f"unknown model preset {preset!r}")
        m["n_freq"] = self.frontend().n_freq
        cfg = PRESETS[preset](self.lexicon().vocab_size)
        for k, v in m.items():
            setattr(cfg, k, v)
        cfg.__post_init__()
        return cfg

    def train_params(self, section: str):
        from .decoder.train import TrainParams

        s = self.cfg.section(section)
        s.pop("enabled", None)
        s.setdefault("threads", self.cfg.section("train").get("threads", 1))
        return TrainParams(seed=self.seed, **s)

    def _map(self, fn, jobs):
        workers = int(self.cfg.raw.get("workers", 1))
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(fn, jobs))
        return [fn(j) for j in jobs]

    # ------------------------------------------------------------ stages
    def _stage_simulate(self, d: Path):
        from .lexicon import build_lexicon, word_frequencies
        from .simulator import SceneConfig, default_motif_bank, generate_corpus

        c = self.cfg.section("corpus")
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1]))
        sentences = make_sentences(c["words"], int(c["n_sentences"]), int(c["min_words"]), int(c["max_words"]),
                                   int(c.get("min_word_count", 1)), rng)
        lx = self.cfg.section("lexicon")
        lex = build_lexicon(word_frequencies(sentences, lx.get("lowercase", True)), int(lx.get("max_size", 1000)),
                            lx.get("lowercase", True))
        lex.save(d / "lexicon.txt")
        (d / "sentences.json").write_text(json.dumps(sentences, indent=1) + "\n")
        scene = SceneConfig.from_dict(self.cfg.section("scene"))
        used = sorted({t for s in sentences for t in lex.tokenize(s).content_ids()})
        m = self.cfg.section("motifs")
        bank = default_motif_bank(range(len(used)), scene, rates_hz=tuple(m["rates_hz"]),
                                  durations_s=tuple(m["durations_s"]), doppler_amps_hz=tuple(m["doppler_amps_hz"]),
                                  speed_jitter=m.get("speed_jitter", 0.05), amp_jitter=m.get("amp_jitter", 0.1))
        bank = {tok: bank[i] for i, tok in enumerate(used)}
        generate_corpus(sentences, lex, bank, int(c["n_per_sentence"]), self.seed, d / "corpus", scene,
                        float(c["inter_unit_gap_s"]), int(self.cfg.raw.get("workers", 1)))

    def _stage_isolate(self, d: Path):
        src = self._path("simulate") / "corpus"
        iso = self.cfg.section("isolation")
        jobs = [(str(src / r["iq_path"]), str(d / f"utt_{r['utterance_id']:05d}.trace"), iso) for r in self.rows()]
        summary = self._map(_isolate_one, jobs)
        (d / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")

    def _stage_segment(self, d: Path):
        from .segmentation import SegmenterParams, segment_units, write_segments

        params = SegmenterParams(**self.cfg.section("segmentation"))
        units, notes = [], []
        for r in self.rows():
            diag = []
            units.extend(segment_units(self.trace(r), params, str(r["utterance_id"]), diag))
            notes.extend(f"utterance {r['utterance_id']}: {m}" for m in diag)
        write_segments(d / "segments.csv", units)
        (d / "diagnostics.json").write_text(json.dumps(notes, indent=1) + "\n")

    def _units(self):
        """(row position, RealSeries slice) for every segmented unit."""
        from .segmentation import read_segments
        from .signal_core import RealSeries

        rows = self.rows()
        pos = {str(r["utterance_id"]): i for i, r in enumerate(rows)}
        traces = {}
        out = []
        for start, end, utt in read_segments(self._path("segment") / "segments.csv"):
            i = pos[utt]
            if i not in traces:
                traces[i] = self.trace(rows[i])
            v = traces[i].values
            a = int(round((start - v.t0_s) * v.sample_rate_hz))
            b = int(round((end - v.t0_s) * v.sample_rate_hz))
            out.append((i, RealSeries(v.values[a:b], v.sample_rate_hz, start)))
        return out

    def _stage_features(self, d: Path):
        from .features import (FeatureParams, assign_pseudo_labels, extract_features, fit_scaler, kmeans,
                               write_feature_table)

        f = self.cfg.section("features")
        fp = FeatureParams(int(f.get("ste_window", 20)), int(f.get("min_samples", 50)))
        train, _ = self.split()
        train = set(train)
        vecs, meta, skipped = [], [], 0
        for u, (i, seg) in enumerate(self._units()):
            if len(seg) < fp.min_samples:
                skipped += 1
                continue
            vecs.append(extract_features(seg, fp))
            meta.append({"unit": u, "row": i, "start_s": seg.t0_s, "end_s": seg.t0_s + len(seg) / seg.sample_rate_hz,
                         "train": i in train})
        X = np.array(vecs)
        fit_rows = np.array([m["train"] for m in meta])
        if fit_rows.sum() < 2:
            raise ParameterError("fewer than two training units to cluster")
        scaler = fit_scaler(X[fit_rows])
        Z = scaler.apply(X)
        k = min(int(f.get("k", 64)), np.unique(Z[fit_rows], axis=0).shape[0])
        model = kmeans(Z[fit_rows], k, seed=self.seed, max_iter=int(f.get("max_iter", 300)),
                       n_init=int(f.get("n_init", 10)))
        labels = assign_pseudo_labels(model, Z)
        write_feature_table(d / "features", X, meta)
        (d / "scaler.json").write_text(json.dumps(scaler.to_dict()))
        model.save(d / "clusters.json")
        (d / "labels.json").write_text(json.dumps({"labels": labels.labels.tolist(), "skipped_short": skipped,
                                                   "distribution": labels.distribution()}, sort_keys=True))

    def _stage_pretrain(self, d: Path):
        from .decoder.checkpoint import save_state
        from .decoder.frontend import featurize_series
        from .decoder.train import pretrain_units, unit_accuracy
        from .features import read_feature_table

        s = self.cfg.section("pretrain")
        if not s.get("enabled", True):
            (d / "skipped").write_text("pretraining disabled\n")
            return
        _, meta = read_feature_table(self._path("features") / "features")
        labels = json.loads((self._path("features") / "labels.json").read_text())["labels"]
        fe = self.frontend()
        units = {m["unit"]: j for j, m in enumerate(meta)}
        frames, ys = [], []
        for u, (_, seg) in enumerate(self._units()):
            j = units.get(u)
            if j is None or not meta[j]["train"]:
                continue
            frames.append(featurize_series(seg, fe, min_len=fe.window))
            ys.append(labels[j])
        # compact the label ids so the head has no dead classes
        uniq = sorted(set(ys))
        remap = {c: n for n, c in enumerate(uniq)}
        ys = [remap[y] for y in ys]
        cfg = self.model_config()
        res = pretrain_units(frames, ys, cfg, self.train_params("pretrain"), n_classes=len(uniq))
        save_state(d / "encoder.ckpt", res.model.encoder.state_dict(), cfg.to_dict(), {"kind": "encoder"})
        (d / "curve.json").write_text(json.dumps({"loss": res.losses, "accuracy": res.accuracies,
                                                  "final_accuracy": unit_accuracy(res.model, frames, ys)}))

    def _frames(self, rows_idx):
        from .decoder.frontend import featurize_trace

        rows, fe = self.rows(), self.frontend()
        return [featurize_trace(self.trace(rows[i]), fe) for i in rows_idx]

    def _stage_train(self, d: Path):
        from .decoder.checkpoint import load_state, save_model
        from .decoder.train import train_seq2seq

        rows, lex = self.rows(), self.lexicon()
        train, _ = self.split()
        data = list(zip(self._frames(train), [lex.tokenize(rows[i]["transcript"]) for i in train]))
        init = None
        enc = self._path("pretrain") / "encoder.ckpt"
        if enc.exists():
            init, _, _ = load_state(enc)
        res = train_seq2seq(data, self.model_config(), self.train_params("train"), init)
        save_model(d / "model.ckpt", res.model, {"seed": self.seed, "pretrained": init is not None})
        (d / "curve.json").write_text(json.dumps({"loss": res.losses}))

    def _stage_decode(self, d: Path):
        from .decoder.checkpoint import load_model
        from .decoder.search import decode_batch

        model, _ = load_model(self._path("train") / "model.ckpt")
        rows, lex = self.rows(), self.lexicon()
        _, test = self.split()
        dc = self.cfg.section("decode")
        results = decode_batch(model, self._frames(test), int(dc.get("beam", 4)), int(dc.get("max_len", 32)),
                               dc.get("length_penalty"))
        with (d / "hypotheses.jsonl").open("w") as fh:
            for i, r in zip(test, results):
                fh.write(json.dumps({"utterance_id": rows[i]["utterance_id"], "reference": rows[i]["transcript"],
                                     "hypothesis": lex.detokenize(r.tokens), "tokens": list(r.tokens.ids),
                                     "score": round(r.score, 6), "finished": r.finished}, sort_keys=True) + "\n")

    def _stage_eval(self, d: Path):
        from .metrics import evaluate

        with (self._path("decode") / "hypotheses.jsonl").open() as fh:
            hyps = [json.loads(line) for line in fh if line.strip()]
        ev = evaluate([(h["reference"], h["hypothesis"]) for h in hyps])
        write_metrics(d / "metrics.json", {"seed": self.seed, **ev.summary(), "rows": ev.rows})


def _isolate_one(job):
    from .isolation import IsolationConfig, extract_motion_trace, write_trace
    from .signal_core import read_series

    src, dst, iso = job
    trace, rep = extract_motion_trace(read_series(src), IsolationConfig.from_dict(iso))
    write_trace(dst, trace)
    discarded = [] if rep.gate is None else [int(i) for i in rep.gate.discarded]
    return {"trace": Path(dst).name, "discarded_windows": discarded,
            "diagnostic": trace.diagnostic}


def write_metrics(path, obj) -> Path:
    """Canonical JSON: sorted keys, floats rounded to 12 significant digits."""
    path = Path(path)
    path.write_text(json.dumps(_round(obj), sort_keys=True, indent=1) + "\n")
    return path


def _round(x):
    if isinstance(x, float):
        return float(f"{x:.12g}")
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    return x


def run_pipeline(cfg: PipelineConfig, out, seeds=None, upto: str = "eval", force: bool = False) -> dict:
    """Run every seed through ``upto`` and write the aggregate report.

    Returns ``{"runs": {seed: SeedRun}, "metrics": dict | None, "report": str}``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg.seeds if seeds is None else list(seeds)
    runs = {}
    wall = time.perf_counter()
    for s in seeds:
        run = SeedRun(cfg, s, out / f"seed_{s}")
        run.run(upto, force=force)
        runs[s] = run
    wall = time.perf_counter() - wall
    metrics = None
    if upto == "eval":
        per_seed = []
        for s, run in runs.items():
            m = json.loads((run.records["eval"].path / "metrics.json").read_text())
            m.pop("rows", None)
            per_seed.append(m)
        metrics = {"per_seed": per_seed, "config_hash": config_hash(cfg.raw), "seeds": seeds}
        for key in ("wer", "word_accuracy", "mean_sentence_wer", "mean_sentence_accuracy"):
            vals = np.array([m[key] for m in per_seed])
            metrics[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
        write_metrics(out / "metrics.json", metrics)
    report = format_report(runs, metrics, wall)
    (out / "report.txt").write_text(report)
    return {"runs": runs, "metrics": metrics, "report": report}


def format_report(runs: dict, metrics: dict | None, wall: float) -> str:
    lines = ["stage timings (seconds; 'cached' = reused output)"]
    for s, run in runs.items():
        cells = [f"{r.name}={'cached' if r.cached else f'{r.seconds:.1f}'}" for r in run.records.values()]
        lines.append(f"  seed {s}: " + " ".join(cells))
    lines.append(f"total wall clock: {wall:.1f}s")
    if metrics:
        lines.append("metrics (mean +- std over seeds)")
        for key in ("wer", "word_accuracy", "mean_sentence_wer", "mean_sentence_accuracy"):
            lines.append(f"  {key}: {metrics[key]['mean']:.4f} +- {metrics[key]['std']:.4f}")
    return "\n".join(lines) + "\n"
