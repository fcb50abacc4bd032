import json
import shutil

import numpy as np
import pytest

from silentwave.config import PipelineConfig, apply_override, config_hash, deep_merge, load_config
from silentwave.errors import ParameterError, StageError
from silentwave.pipeline import STAGES, SeedRun, make_sentences, run_pipeline, split_indices


# configuration


def test_layering_and_overrides(small_config):
    cfg = load_config([small_config], ["decode.beam=8", "isolation.keep_band=[2, 40]", "new.key=yes"])
    assert cfg["corpus"]["n_sentences"] == 12
    assert cfg["corpus"]["max_words"] == 6  # untouched default survives the layer
    assert cfg["decode"]["beam"] == 8
    assert cfg["isolation"]["keep_band"] == [2, 40]
    assert cfg["new"]["key"] is True
    assert isinstance(cfg["scene"]["carrier_hz"], float)


def test_bad_override_rejected():
    with pytest.raises(ParameterError):
        apply_override({}, "decode.beam")


def test_deep_merge_does_not_mutate():
    base = {"a": {"b": 1, "c": 2}}
    out = deep_merge(base, {"a": {"b": 5}})
    assert out == {"a": {"b": 5, "c": 2}} and base == {"a": {"b": 1, "c": 2}}


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


# corpus and split helpers


def test_make_sentences_covers_every_word():
    words = [f"w{i}" for i in range(12)]
    sents = make_sentences(words, 10, 3, 5, 2, np.random.default_rng(0))
    assert len(sents) == 10
    counts = {w: 0 for w in words}
    for s in sents:
        toks = s.split()
        assert 3 <= len(toks) <= 5 and len(set(toks)) == len(toks)
        for t in toks:
            counts[t] += 1
    assert min(counts.values()) >= 2
    with pytest.raises(ParameterError):
        make_sentences(words, 2, 3, 5, 2, np.random.default_rng(0), max_tries=5)
    with pytest.raises(ParameterError):
        make_sentences(["a", "a"], 2, 1, 1, 1, np.random.default_rng(0))


@pytest.mark.parametrize("mode", ["utterance", "sentence"])
def test_split_partitions_rows(mode):
    rows = [{"sentence_index": i // 4} for i in range(40)]
    train, test = split_indices(rows, mode, 0.2, seed=3)
    assert sorted(train + test) == list(range(40))
    assert split_indices(rows, mode, 0.2, seed=3) == (train, test)
    if mode == "utterance":
        assert len(test) == 8
    else:
        held = {rows[i]["sentence_index"] for i in test}
        assert len(held) == 2
        assert not held & {rows[i]["sentence_index"] for i in train}
    with pytest.raises(ParameterError):
        split_indices(rows, "speaker", 0.2, 0)


# cached runs


def test_small_run_outputs(small_run):
    cfg, out, res = small_run
    run = res["runs"][0]
    assert list(run.records) == list(STAGES)
    m = json.loads((out / "metrics.json").read_text())
    assert set(m) >= {"per_seed", "config_hash", "seeds", "wer", "word_accuracy", "mean_sentence_wer"}
    assert "seconds" not in (out / "metrics.json").read_text()
    assert "wall clock" in (out / "report.txt").read_text()
    for stage in STAGES:
        d = run.stage_dir(stage)
        assert d.name == f"{stage}-{run.key(stage)[:16]}"
        assert json.loads((d / "done.json").read_text())["key"] == run.key(stage)


def test_rerun_is_cached_and_identical(small_run):
    cfg, out, _ = small_run
    before = (out / "metrics.json").read_bytes()
    res = run_pipeline(cfg, out)
    assert all(r.cached for r in res["runs"][0].records.values())
    assert (out / "metrics.json").read_bytes() == before


def test_decode_change_reruns_only_downstream(small_run, tmp_path):
    cfg, src, _ = small_run
    out = tmp_path / "run"
    shutil.copytree(src, out)
    changed = cfg.with_overrides("decode.beam=2")
    res = run_pipeline(changed, out)
    recs = res["runs"][0].records
    assert [s for s, r in recs.items() if not r.cached] == ["decode", "eval"]


def test_key_dependencies(small_run):
    cfg, out, _ = small_run
    a = SeedRun(cfg, 0, out)
    b = SeedRun(cfg.with_overrides("segmentation.lambda1=0.2"), 0, out)
    same = [s for s in STAGES if a.key(s) == b.key(s)]
    assert same == ["simulate", "isolate"]
    c = SeedRun(cfg, 1, out)
    assert all(a.key(s) != c.key(s) for s in STAGES)


def test_stale_key_is_an_error(small_run, tmp_path):
    cfg, out, _ = small_run
    root = tmp_path / "seed_0"
    shutil.copytree(out / "seed_0", root)
    run = SeedRun(cfg, 0, root)
    done = run.stage_dir("segment") / "done.json"
    done.write_text(json.dumps({"key": "0" * 64, "stage": "segment"}))
    with pytest.raises(StageError, match="stale"):
        run.run("segment")


def test_unknown_stage(small_run):
    cfg, out, _ = small_run
    with pytest.raises(ParameterError):
        SeedRun(cfg, 0, out).run("polish")


def test_stage_failure_wrapped(tmp_path, small_config):
    cfg = PipelineConfig.load([small_config], ["split.mode=bogus"])
    with pytest.raises(StageError) as info:
        run_pipeline(cfg, tmp_path, upto="features")
    assert info.value.stage == "features"
    assert not list((tmp_path / "seed_0").glob("features-*/done.json"))
