"""End-to-end acceptance checks, one test per criterion.

Each test records a ``C<n> PASS|FAIL`` line that is echoed in the pytest
terminal summary.  C10 and C12 run the default configuration from scratch
twice and take several minutes each.
"""
import itertools
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, random_motif
from silentwave.config import PipelineConfig
from silentwave.features import kmeans
from silentwave.isolation import IsolationConfig, extract_motion_trace, isolate_backscatter, mad_gate
from silentwave.lexicon import build_lexicon
from silentwave.metrics import align
from silentwave.pipeline import run_pipeline
from silentwave.segmentation import segment_units
from silentwave.signal_core import RealSeries
from silentwave.simulator import (KinematicMotif, SceneConfig, UtteranceScript, articulator_position,
                                  articulator_velocity, default_motif_bank, doppler_shift, synthesize_scene)
from silentwave.vmd import vmd


def check(cid, title, fn):
    try:
        detail, ok = fn(), True
    except AssertionError as exc:
        detail, ok = str(exc).splitlines()[0] if str(exc) else "assertion failed", False
    line = f"{cid} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def _power(r):
    return float(np.mean(np.abs(r.samples) ** 2))


def test_c01_kinematics():
    def run():
        rng = np.random.default_rng(101)
        t0 = time.perf_counter()
        h, worst = 1e-6, 0.0
        for _ in range(100):
            m = random_motif(rng, duration_s=float(rng.uniform(0.2, 1.0)))
            t = rng.uniform(h, m.duration_s - h)
            fd = (articulator_position(m, t + h) - articulator_position(m, t - h)) / (2 * h)
            an = articulator_velocity(m, t)
            worst = max(worst, np.linalg.norm(fd - an) / np.linalg.norm(an))
        dt = time.perf_counter() - t0
        assert worst < 1e-5, f"max relative error {worst:.2e}"
        assert dt < 5, f"runtime {dt:.2f}s"
        return f"max rel err {worst:.2e}, {dt:.2f}s"
    check("C1", "kinematics vs finite differences", run)


def test_c02_doppler():
    def run():
        cfg = SceneConfig()
        radial = KinematicMotif(L=[0, 0, 0], v=[0.1, 0, 0], omega=[0, 0, 0], l=[0, 0, 0], duration_s=1.0)
        ortho = KinematicMotif(L=[0, 0, 0], v=[0, 0.1, 0], omega=[0, 0, 0], l=[0, 0, 0], duration_s=1.0)
        fd = doppler_shift(radial, cfg, 0.5)
        rel = abs(fd - 1.6) / 1.6
        assert rel <= 1e-9, f"f_D = {fd!r}"
        assert doppler_shift(ortho, cfg, 0.5) == 0.0, "orthogonal motion shifts"
        return f"f_D = {fd:.12f} Hz (rel err {rel:.1e}), orthogonal 0"
    check("C2", "Doppler oracle", run)


def test_c03_isolation():
    def run():
        cfg = SceneConfig()
        bank = default_motif_bank(range(3, 6), cfg)
        worst_ratio, worst_leak = 0.0, -np.inf
        t0 = time.perf_counter()
        for seed in range(20):
            rng = np.random.default_rng(seed)
            script = UtteranceScript([3, 4, 5], [bank[t].sample(rng) for t in (3, 4, 5)], 0.5)
            present, _ = synthesize_scene(script, cfg, seed)
            absent, _ = synthesize_scene(script, SceneConfig(tag_gain=0j), seed)
            p_on = _power(isolate_backscatter(present, cfg.delta_f1_hz, 200.0))
            p_off = _power(isolate_backscatter(absent, cfg.delta_f1_hz, 200.0))
            worst_ratio = max(worst_ratio, p_off / p_on)
            direct, _ = synthesize_scene(script, SceneConfig(snr_db=float("inf")), seed, include_tag=False)
            leak = 10 * np.log10(_power(isolate_backscatter(direct, cfg.delta_f1_hz, 200.0)) / _power(direct))
            worst_leak = max(worst_leak, leak)
        dt = time.perf_counter() - t0
        assert worst_ratio <= 0.01, f"absent/present power {worst_ratio:.4f}"
        assert worst_leak < -30, f"leakage {worst_leak:.1f} dB"
        assert dt < 30, f"runtime {dt:.1f}s"
        return f"absent/present <= {worst_ratio:.2e}, leakage <= {worst_leak:.1f} dB, {dt:.1f}s for 20 scenes"
    check("C3", "backscatter isolation", run)


def test_c04_vmd():
    def run():
        fs = 1000.0
        t = np.arange(4000) / fs
        low, high = np.sin(2 * np.pi * 2 * t), np.sin(2 * np.pi * 40 * t)
        res = vmd(RealSeries(low + high, fs), K=2, penalty=2000.0, tol=1e-7, max_iter=500)
        err = np.abs(res.center_freqs_hz - [2.0, 40.0]).max()
        corr = min(np.corrcoef(m, r)[0, 1] for m, r in zip(res.modes, (low, high)))
        assert err <= 0.5, f"centre error {err:.3f} Hz"
        assert corr > 0.95, f"mode correlation {corr:.4f}"
        x = np.sin(2 * np.pi * 7 * t)
        one = vmd(RealSeries(x, fs), K=1)
        l2 = np.linalg.norm(one.modes[0] - x) / np.linalg.norm(x)
        assert l2 < 0.05, f"single-tone L2 {l2:.4f}"
        return f"centres {np.round(res.center_freqs_hz, 3).tolist()} Hz, min corr {corr:.4f}, K=1 L2 {l2:.4f}"
    check("C4", "variational mode decomposition", run)


def test_c05_gating():
    from test_isolation import _burst_case

    def run():
        for seed in range(50):
            x, burst, _ = _burst_case(seed)
            got = mad_gate(x, 0.5, 3.0).discarded
            assert got == [burst], f"seed {seed}: discarded {got}, injected {burst}"
        return "exactly the burst window discarded on 50/50 seeds"
    check("C5", "MAD gating", run)


def _recall(gap_s, iso, n_utt=100, tol=0.15):
    """Fraction of annotated unit boundaries with a predicted boundary within ``tol``."""
    cfg = SceneConfig()
    bank = default_motif_bank(range(3, 33), cfg)
    hit = total = 0
    for u in range(n_utt):
        rng = np.random.default_rng(u)
        toks = list(rng.choice(range(3, 33), size=int(rng.integers(3, 7)), replace=False))
        script = UtteranceScript(toks, [bank[t].sample(rng) for t in toks], gap_s)
        r, ann = synthesize_scene(script, cfg, u)
        trace, _ = extract_motion_trace(r, iso)
        pred = np.array([b for x in segment_units(trace) for b in (x.start_s, x.end_s)])
        for s, e in ann.unit_boundaries_s:
            for b in (s, e):
                total += 1
                hit += bool(pred.size) and np.min(np.abs(pred - b)) <= tol
    return hit / total


def test_c06_segmentation():
    from test_segmentation import two_bursts

    def run():
        worst = 0.0
        for seed in range(5):
            trace, edges = two_bursts(seed=seed)
            units = segment_units(trace)
            assert len(units) == 2, f"two-burst seed {seed}: {len(units)} segments"
            got = [units[0].start_s, units[0].end_s, units[1].start_s, units[1].end_s]
            worst = max(worst, float(np.max(np.abs(np.array(got) - edges))))
        assert worst <= 0.1, f"two-burst boundary error {worst:.3f}s"
        base = [(u.start_s, u.end_s) for u in segment_units(two_bursts()[0])]
        for c in (1e-3, 0.37, 2.0, 1e3):
            tr = two_bursts()[0]
            tr.values.values[:] *= c
            assert [(u.start_s, u.end_s) for u in segment_units(tr)] == base, f"scale {c} changes segments"
        r_seg = _recall(1.0, IsolationConfig(gating=False))
        assert r_seg >= 0.9, f"boundary recall {r_seg:.3f} at 1 s gaps"
        r_pipe = _recall(0.5, IsolationConfig())
        assert r_pipe >= 0.9, f"boundary recall {r_pipe:.3f} with pipeline defaults"
        return (f"two-burst max error {worst:.3f}s, scale-exact, recall {r_seg:.3f} (1 s gaps, ungated) "
                f"and {r_pipe:.3f} (0.5 s gaps, gated)")
    check("C6", "unit segmentation", run)


def test_c07_kmeans():
    from test_features import optimal_two_partition

    def run():
        rng = np.random.default_rng(7)
        worst = 0.0
        for i in range(200):
            n = int(rng.integers(3, 9))
            X = rng.normal(size=(n, int(rng.integers(1, 4))))
            m = kmeans(X, 2, seed=i)
            worst = max(worst, abs(m.inertia - optimal_two_partition(X)))
            assert np.all(np.diff(m.inertia_history) <= 0), f"instance {i}: inertia increased"
        for i in range(50):
            X = rng.normal(size=(int(rng.integers(10, 200)), 4))
            m = kmeans(X, int(rng.integers(1, 9)), seed=i, n_init=3)
            assert np.all(np.diff(m.inertia_history) <= 0), f"large instance {i}: inertia increased"
        assert worst <= 1e-9, f"gap to exhaustive optimum {worst:.2e}"
        return f"max gap to exhaustive optimum {worst:.1e} on 200 instances, history non-increasing"
    check("C7", "k-means", run)


def test_c08_lexicon():
    from test_lexicon import oracle_merges, random_corpus

    def run():
        rng = np.random.default_rng(8)
        for i in range(50):
            corpus = random_corpus(rng)
            size = max(int(rng.integers(10, 60)), 2 * len(set("".join(corpus))))
            lex = build_lexicon(corpus, size)
            assert lex.merges == oracle_merges(corpus, size), f"corpus {i}: merge list differs"
            assert all(b <= a for a, b in zip(lex.token_counts, lex.token_counts[1:])), f"corpus {i}: count grew"
            for w in corpus:
                assert lex.detokenize(lex.tokenize(w)) == w, f"round trip fails on {w!r}"
        corpus = random_corpus(rng, 30)
        lex = build_lexicon(corpus, 40)
        letters = sorted(set("".join(corpus)))
        for _ in range(100):
            s = " ".join("".join(rng.choice(letters, size=int(rng.integers(1, 9))))
                         for _ in range(int(rng.integers(1, 6))))
            assert lex.detokenize(lex.tokenize(s)) == s, f"round trip fails on {s!r}"
        return "merges match oracle on 50 corpora, round trips exact, token counts non-increasing"
    check("C8", "subword lexicon", run)


def test_c09_decoder():
    import test_decoder as td

    def run():
        # each sub-check is the corresponding unit test body
        for name in ("test_beam_one_equals_greedy", "test_beam_matches_exhaustive_search",
                     "test_gradient_check_finite_differences", "test_softmax_and_attention_rows_normalised",
                     "test_decoder_causality"):
            getattr(td, name)()
        for stack in (1, 4):
            td.test_padding_invariance(stack)
        return "beam-1 = greedy (50), exhaustive search, gradients, normalisation, padding, causality"
    check("C9", "decoder correctness", run)


def _default_cfg():
    return PipelineConfig.load([], [f"workers={min(4, os.cpu_count() or 1)}"])


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    cfg = _default_cfg()
    out = tmp_path_factory.mktemp("accept_a")
    t0 = time.perf_counter()
    res = run_pipeline(cfg, out)
    return out, res, time.perf_counter() - t0


@pytest.mark.slow
def test_c10_closed_loop(default_run):
    out, res, wall = default_run

    def run():
        m = res["metrics"]
        swer, acc = m["mean_sentence_wer"]["mean"], m["word_accuracy"]["mean"]
        assert len(m["seeds"]) == 3, f"seeds {m['seeds']}"
        assert swer <= 0.2, f"mean sentence WER {swer:.4f}"
        assert acc >= 0.85, f"word accuracy {acc:.4f}"
        assert wall <= 1800, f"wall clock {wall:.0f}s"
        return (f"mean sentence WER {swer:.4f}, word accuracy {acc:.4f} over seeds {m['seeds']}, "
                f"wall clock {wall:.0f}s on {os.cpu_count()} core(s)")
    check("C10", "closed-loop end to end", run)


def test_c11_wer():
    def brute(ref, hyp):
        # depth-first enumeration of every alignment path, pruned by the best complete cost so far
        best = [len(ref) + len(hyp)]

        def walk(i, j, cost):
            if cost >= best[0]:
                return
            if i == len(ref) and j == len(hyp):
                best[0] = cost
                return
            if i < len(ref) and j < len(hyp):
                walk(i + 1, j + 1, cost + (ref[i] != hyp[j]))
            if i < len(ref):
                walk(i + 1, j, cost + 1)
            if j < len(hyp):
                walk(i, j + 1, cost + 1)
        walk(0, 0, 0)
        return best[0]

    def run():
        sents = [list(s) for n in range(7) for s in itertools.product("ab", repeat=n)]
        n_pairs = 0
        for ref in sents[1:]:
            for hyp in sents:
                a = align(ref, hyp)
                assert a.n_sub + a.n_del + a.n_ins == brute(ref, hyp), f"{ref} vs {hyp}"
                n_pairs += 1
        rng = np.random.default_rng(11)
        for _ in range(2000):
            ref = list(rng.choice(list("abcde"), size=int(rng.integers(1, 7))))
            hyp = list(rng.choice(list("abcde"), size=int(rng.integers(0, 7))))
            a = align(ref, hyp)
            assert a.n_sub + a.n_del + a.n_ins == brute(ref, hyp), f"{ref} vs {hyp}"
        from silentwave.metrics import wer
        r = wer("the quick brown fox jumps over the lazy sleeping dog",
                "uh the quack brown fix jumps over the lazy sleeping")
        assert (r.n_sub, r.n_del, r.n_ins) == (2, 1, 1) and r.wer == 0.4, f"worked example gives {r.wer}"
        return f"DP = brute force on {n_pairs} exhaustive + 2000 random pairs, worked example WER {r.wer}"
    check("C11", "WER metric", run)


@pytest.mark.slow
def test_c12_reproducible(default_run, tmp_path_factory):
    out_a, _, _ = default_run

    def run():
        out_b = tmp_path_factory.mktemp("accept_b")
        run_pipeline(_default_cfg(), out_b)
        a = (out_a / "metrics.json").read_bytes()
        b = (out_b / "metrics.json").read_bytes()
        assert a == b, "metrics.json differs between independent runs"
        per_seed = sorted(out_a.glob("seed_*/eval-*/metrics.json"))
        for p in per_seed:
            q = out_b / p.relative_to(out_a)
            assert p.read_bytes() == q.read_bytes(), f"{p.relative_to(out_a)} differs"
        return f"two independent runs: metrics.json and {len(per_seed)} per-seed files byte-identical"
    check("C12", "reproducibility", run)
