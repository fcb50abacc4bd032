import json
import subprocess
import sys

import numpy as np
import pytest

from silentwave.cli import main


def test_lexicon_build_encode_decode(tmp_path, capsys):
    sents = tmp_path / "s.txt"
    sents.write_text("turn on the lights\nturn off the lights\nopen the door\n")
    lex = tmp_path / "lex.txt"
    assert main(["lexicon", "build", "--sentences", str(sents), "--out", str(lex)]) == 0
    capsys.readouterr()
    assert main(["lexicon", "encode", "--lexicon", str(lex), "turn", "the", "lights"]) == 0
    ids = capsys.readouterr().out.strip()
    assert ids.split()[-1] == "2"
    assert main(["lexicon", "decode", "--lexicon", str(lex), ids]) == 0
    assert capsys.readouterr().out.strip() == "turn the lights"


def test_eval_file_mode(tmp_path, capsys):
    ref = tmp_path / "ref.txt"
    hyp = tmp_path / "hyp.txt"
    ref.write_text("a b c d\nopen the door\n")
    hyp.write_text("a x c\nopen the door\n")
    out = tmp_path / "m.json"
    assert main(["eval", "--ref", str(ref), "--hyp", str(hyp), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "wer: 0.2857" in text
    m = json.loads(out.read_text())
    assert m["Ns"] == 1 and m["Nd"] == 1 and len(m["rows"]) == 2


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["eval", "--ref", str(tmp_path / "missing.txt"), "--hyp", "x"]) == 1
    assert "silentwave: error:" in capsys.readouterr().err
    ref = tmp_path / "r.txt"
    ref.write_text("a\nb\n")
    hyp = tmp_path / "h.txt"
    hyp.write_text("a\n")
    assert main(["eval", "--ref", str(ref), "--hyp", str(hyp)]) == 1
    assert main(["pipeline", "--upto", "polish", "--out", str(tmp_path)]) == 1
    assert main(["decode", "--set", "nonsense"]) == 1
    with pytest.raises(SystemExit):
        main(["no-such-command"])


def test_file_mode_chain(small_run, tmp_path, capsys):
    _, out, res = small_run
    run = res["runs"][0]
    iq = sorted((run.stage_dir("simulate") / "corpus").glob("utt_*.iq"))[0]
    trace = tmp_path / "u.trace"
    assert main(["isolate", "--in", str(iq), "--out", str(trace)]) == 0
    seg = tmp_path / "u.csv"
    assert main(["segment", "--in", str(trace), "--out", str(seg)]) == 0
    assert "segment(s)" in capsys.readouterr().out
    feats = tmp_path / "f.npy"
    assert main(["features", "--trace", str(trace), "--segments", str(seg), "--out", str(feats)]) == 0
    assert np.load(feats).shape[1] == 67
    assert main(["decode", "--model", str(run.stage_dir("train") / "model.ckpt"),
                 "--lexicon", str(run.stage_dir("simulate") / "lexicon.txt"), "--in", str(trace),
                 "--beam", "2"]) == 0
    assert str(trace) in capsys.readouterr().out


def test_cluster_file_mode(small_run, tmp_path, capsys):
    _, _, res = small_run
    table = res["runs"][0].stage_dir("features") / "features.npy"
    assert main(["cluster", "--in", str(table), "--k", "3", "--out", str(tmp_path / "c.json")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["k"] == 3 and abs(sum(info["distribution"].values()) - 1) < 1e-9


def test_pipeline_command_uses_cache(small_run, small_config, capsys):
    _, out, _ = small_run
    before = (out / "metrics.json").read_bytes()
    assert main(["pipeline", "--config", str(small_config), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "eval=cached" in text and "word_accuracy" in text
    assert (out / "metrics.json").read_bytes() == before
    assert main(["segment", "--config", str(small_config), "--out", str(out), "--seed", "0"]) == 0
    assert "segment ->" in capsys.readouterr().out


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "silentwave.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("simulate", "isolate", "segment", "features", "cluster", "lexicon", "pretrain", "train",
                "decode", "eval", "pipeline"):
        assert cmd in r.stdout
