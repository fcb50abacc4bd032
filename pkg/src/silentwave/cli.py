"""``silentwave`` command line.

Most subcommands have two modes.  Given explicit input files they act on
those files alone; otherwise they run the cached pipeline up to (and
including) their own stage under ``--out`` for ``--seed`` or every configured
seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import SilentwaveError

log = logging.getLogger("silentwave")

STAGE_OF = {"simulate": "simulate", "isolate": "isolate", "segment": "segment", "features": "features",
            "cluster": "features", "pretrain": "pretrain", "train": "train", "decode": "decode", "eval": "eval"}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", action="append", default=[], metavar="FILE",
                   help="YAML layer merged over the packaged defaults (repeatable)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
                   help="dotted override, e.g. decode.beam=8 (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="run a single seed instead of the configured list")
    p.add_argument("--out", default=None, help="output file or run directory")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="silentwave", description="Backscatter lip-motion recognition pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic corpus")
    _common(p)
    p.add_argument("--sentences", help="text file, one sentence per line (default: sample from the config)")

    p = sub.add_parser("isolate", help="IQ recording -> motion trace")
    _common(p)
    p.add_argument("--in", dest="inp", help="IQ file")
    p.add_argument("--delta-f1", type=float, default=None, help="tag switching frequency in Hz")

    p = sub.add_parser("segment", help="motion trace -> unit segments")
    _common(p)
    p.add_argument("--in", dest="inp", help="trace file")
    p.add_argument("--params", help="YAML file with segmentation parameters")

    p = sub.add_parser("features", help="unit feature vectors")
    _common(p)
    p.add_argument("--trace", help="trace file")
    p.add_argument("--segments", help="segments file for --trace")

    p = sub.add_parser("cluster", help="k-means pseudo labels over a feature table")
    _common(p)
    p.add_argument("--in", dest="inp", help="feature table (.npy)")
    p.add_argument("--k", type=int, default=None)

    p = sub.add_parser("lexicon", help="subword lexicon tools")
    lsub = p.add_subparsers(dest="action", required=True)
    q = lsub.add_parser("build")
    q.add_argument("--sentences", required=True)
    q.add_argument("--max-size", type=int, default=1000)
    q.add_argument("--keep-case", action="store_true")
    q.add_argument("--out", required=True)
    for name in ("encode", "decode"):
        q = lsub.add_parser(name)
        q.add_argument("--lexicon", required=True)
        q.add_argument("text", nargs="*", help="sentence (encode) or token ids (decode); stdin lines if omitted")

    for name in ("pretrain", "train"):
        p = sub.add_parser(name, help=f"{name} stage")
        _common(p)

    p = sub.add_parser("decode", help="beam-search transcripts")
    _common(p)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--model", help="checkpoint file (file mode)")
    p.add_argument("--lexicon", help="lexicon file (file mode)")
    p.add_argument("--in", dest="inp", nargs="*", help="trace files (file mode)")

    p = sub.add_parser("eval", help="word error rate")
    _common(p)
    p.add_argument("--ref", help="reference transcripts, one per line (file mode)")
    p.add_argument("--hyp", help="hypotheses, line-aligned with --ref")

    p = sub.add_parser("pipeline", help="run every stage and report")
    _common(p)
    p.add_argument("--upto", default="eval", help="last stage to run")
    p.add_argument("--force", action="store_true", help="ignore cached stage outputs")
    return ap


def _config(args) -> PipelineConfig:
    return PipelineConfig.load(args.config, args.overrides)


def _run_stage(args, cfg: PipelineConfig, stage: str) -> int:
    from .pipeline import run_pipeline

    out = Path(args.out or "runs")
    seeds = None if args.seed is None else [args.seed]
    stage = STAGE_OF.get(stage, stage)
    res = run_pipeline(cfg, out, seeds, upto=stage, force=getattr(args, "force", False))
    for s, run in res["runs"].items():
        print(f"seed {s}: {stage} -> {run.records[stage].path}")
    if res["metrics"] is not None:
        sys.stdout.write(res["report"])
    return 0


def _require_out(args):
    if not args.out:
        raise SilentwaveError("--out is required with explicit input files")
    return Path(args.out)


def cmd_simulate(args, cfg):
    if not args.sentences:
        return _run_stage(args, cfg, "simulate")
    from .lexicon import build_lexicon, word_frequencies
    from .simulator import SceneConfig, default_motif_bank, generate_corpus

    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    sentences = [s.strip() for s in Path(args.sentences).read_text().splitlines() if s.strip()]
    lx = cfg.section("lexicon")
    lex = build_lexicon(word_frequencies(sentences, lx.get("lowercase", True)), int(lx.get("max_size", 1000)),
                        lx.get("lowercase", True))
    lex.save(out / "lexicon.txt")
    scene = SceneConfig.from_dict(cfg.section("scene"))
    used = sorted({t for s in sentences for t in lex.tokenize(s).content_ids()})
    m = cfg.section("motifs")
    bank = default_motif_bank(range(len(used)), scene, tuple(m["rates_hz"]), tuple(m["durations_s"]),
                              tuple(m["doppler_amps_hz"]), speed_jitter=m.get("speed_jitter", 0.05),
                              amp_jitter=m.get("amp_jitter", 0.1))
    bank = {tok: bank[i] for i, tok in enumerate(used)}
    c = cfg.section("corpus")
    res = generate_corpus(sentences, lex, bank, int(c["n_per_sentence"]), args.seed or 0, out, scene,
                          float(c["inter_unit_gap_s"]), int(cfg.raw.get("workers", 1)))
    print(f"{len(res['rows'])} utterances, {len(res['rejected'])} rejected sentences -> {res['manifest']}")
    return 0


def cmd_isolate(args, cfg):
    if not args.inp:
        return _run_stage(args, cfg, "isolate")
    from .isolation import IsolationConfig, extract_motion_trace, write_trace
    from .signal_core import read_series

    iso = IsolationConfig.from_dict(cfg.section("isolation"))
    if args.delta_f1 is not None:
        iso.delta_f1_hz = args.delta_f1
    trace, rep = extract_motion_trace(read_series(args.inp), iso)
    write_trace(_require_out(args), trace)
    n_gap = 0 if rep.gate is None else len(rep.gate.discarded)
    print(f"trace {len(trace.values)} samples at {trace.values.sample_rate_hz:g} Hz, {n_gap} window(s) gated"
          + (f"; {trace.diagnostic}" if trace.diagnostic else ""))
    return 0


def cmd_segment(args, cfg):
    if not args.inp:
        return _run_stage(args, cfg, "segment")
    import yaml

    from .isolation import read_trace
    from .segmentation import SegmenterParams, segment_units, write_segments

    params = cfg.section("segmentation")
    if args.params:
        layer = yaml.safe_load(Path(args.params).read_text()) or {}
        params.update(layer.get("segmentation", layer))
    diag = []
    units = segment_units(read_trace(args.inp), SegmenterParams(**params), Path(args.inp).stem, diag)
    write_segments(_require_out(args), units)
    for d in diag:
        print(f"note: {d}", file=sys.stderr)
    print(f"{len(units)} segment(s)")
    return 0


def cmd_features(args, cfg):
    if not args.trace:
        return _run_stage(args, cfg, "features")
    from .features import N_FEATURES, FeatureParams, extract_features, write_feature_table
    from .isolation import read_trace
    from .segmentation import read_segments
    from .signal_core import RealSeries

    if not args.segments:
        raise SilentwaveError("--segments is required with --trace")
    f = cfg.section("features")
    fp = FeatureParams(int(f.get("ste_window", 20)), int(f.get("min_samples", 50)))
    v = read_trace(args.trace).values
    vecs, rows = [], []
    for start, end, utt in read_segments(args.segments):
        a = int(round((start - v.t0_s) * v.sample_rate_hz))
        b = int(round((end - v.t0_s) * v.sample_rate_hz))
        if b - a < fp.min_samples:
            continue
        vecs.append(extract_features(RealSeries(v.values[a:b], v.sample_rate_hz, start), fp))
        rows.append({"start_s": start, "end_s": end, "utterance": utt})
    path = write_feature_table(_require_out(args), np.array(vecs).reshape(-1, N_FEATURES), rows)
    print(f"{len(rows)} feature vector(s) -> {path}")
    return 0


def cmd_cluster(args, cfg):
    if not args.inp:
        return _run_stage(args, cfg, "cluster")
    from .features import assign_pseudo_labels, fit_scaler, kmeans, read_feature_table

    X, _ = read_feature_table(args.inp)
    f = cfg.section("features")
    scaler = fit_scaler(X)
    Z = scaler.apply(X)
    model = kmeans(Z, args.k or int(f.get("k", 64)), seed=args.seed or 0, max_iter=int(f.get("max_iter", 300)),
                   n_init=int(f.get("n_init", 10)))
    out = _require_out(args)
    model.save(out)
    labels = assign_pseudo_labels(model, Z)
    print(json.dumps({"k": model.k, "inertia": model.inertia, "distribution": labels.distribution()},
                     sort_keys=True))
    return 0


def cmd_lexicon(args):
    from .lexicon import Lexicon, TokenSequence, build_lexicon, word_frequencies

    if args.action == "build":
        sents = [s for s in Path(args.sentences).read_text().splitlines() if s.strip()]
        lc = not args.keep_case
        lex = build_lexicon(word_frequencies(sents, lc), args.max_size, lc)
        lex.save(args.out)
        print(f"{len(lex.merges)} merges, vocabulary {lex.vocab_size} -> {args.out}")
        return 0
    lex = Lexicon.load(args.lexicon)
    lines = [" ".join(args.text)] if args.text else [s.rstrip("\n") for s in sys.stdin]
    for line in lines:
        if args.action == "encode":
            print(" ".join(map(str, lex.tokenize(line).ids)))
        else:
            print(lex.detokenize(TokenSequence(tuple(int(t) for t in line.split()))))
    return 0


def cmd_decode(args, cfg):
    if args.beam is not None:
        cfg = cfg.with_overrides(f"decode.beam={args.beam}")
    if not args.model:
        return _run_stage(args, cfg, "decode")
    from .decoder.checkpoint import load_model
    from .decoder.frontend import FrontendConfig, featurize_trace
    from .decoder.search import beam_search
    from .isolation import read_trace
    from .lexicon import Lexicon

    if not (args.lexicon and args.inp):
        raise SilentwaveError("file mode needs --model, --lexicon and --in")
    model, _ = load_model(args.model)
    lex = Lexicon.load(args.lexicon)
    fe = FrontendConfig(**cfg.section("frontend"))
    dc = cfg.section("decode")
    for path in args.inp:
        r = beam_search(model, featurize_trace(read_trace(path), fe), int(dc.get("beam", 4)),
                        int(dc.get("max_len", 32)), dc.get("length_penalty"))
        print(f"{path}\t{lex.detokenize(r.tokens)}")
    return 0


def cmd_eval(args, cfg):
    if not args.ref:
        return _run_stage(args, cfg, "eval")
    from .metrics import evaluate
    from .pipeline import write_metrics

    if not args.hyp:
        raise SilentwaveError("--hyp is required with --ref")
    refs = Path(args.ref).read_text().splitlines()
    hyps = Path(args.hyp).read_text().splitlines()
    if len(refs) != len(hyps):
        raise SilentwaveError(f"{len(refs)} references but {len(hyps)} hypotheses")
    ev = evaluate(list(zip(refs, hyps)))
    summary = ev.summary()
    if args.out:
        write_metrics(args.out, {**summary, "rows": ev.rows})
    for k in sorted(summary):
        print(f"{k}: {summary[k]}")
    return 0


def cmd_pipeline(args, cfg):
    from .pipeline import STAGES

    if args.upto not in STAGES:
        raise SilentwaveError(f"unknown stage {args.upto!r}; choose from {', '.join(STAGES)}")
    return _run_stage(args, cfg, args.upto)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * getattr(args, "verbose", 0)
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "lexicon":
            return cmd_lexicon(args)
        cfg = _config(args)
        if args.command in ("pretrain", "train"):
            return _run_stage(args, cfg, args.command)
        return globals()[f"cmd_{args.command}"](args, cfg)
    except (SilentwaveError, FileNotFoundError) as exc:
        print(f"silentwave: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
