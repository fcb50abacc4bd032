import itertools

import numpy as np
import pytest

from silentwave.errors import ParameterError
from silentwave.metrics import align, evaluate, normalize_words, wer, word_accuracy


def all_alignment_costs(ref, hyp):
    """Cost of every alignment path, enumerated explicitly."""
    if not ref and not hyp:
        yield 0
        return
    if ref and hyp:
        for c in all_alignment_costs(ref[1:], hyp[1:]):
            yield c + (ref[0] != hyp[0])
    if ref:
        for c in all_alignment_costs(ref[1:], hyp):
            yield c + 1
    if hyp:
        for c in all_alignment_costs(ref, hyp[1:]):
            yield c + 1


def brute_min(ref, hyp):
    return min(all_alignment_costs(ref, hyp))


REF10 = "the quick brown fox jumps over the lazy sleeping dog"


def test_identical():
    r = wer("open the door", "open the door")
    assert r.wer == 0 and r.word_accuracy == 1


def test_worked_example():
    # two substitutions, one deletion, one insertion against a 10-word reference
    hyp = "uh the quack brown fix jumps over the lazy sleeping"
    r = wer(REF10, hyp)
    assert (r.n_sub, r.n_del, r.n_ins, r.n_correct) == (2, 1, 1, 7)
    assert r.wer == (2 + 1 + 1) / (2 + 1 + 7) == 0.4
    assert word_accuracy(REF10, hyp) == 0.7


def test_empty_hypothesis_and_disjoint():
    r = wer("a b c d", "")
    assert r.wer == 1.0 and r.n_del == 4
    assert word_accuracy("a b c", "x y z") == 0.0


def test_empty_reference_is_an_error():
    with pytest.raises(ParameterError):
        wer("", "x")
    with pytest.raises(ParameterError):
        wer(" ,. ", "x")


def test_not_symmetric():
    assert wer("a b c", "a").wer != wer("a", "a b c").wer


def test_normalisation():
    assert normalize_words("Open, the DOOR!") == ["open", "the", "door"]
    assert wer("Open the door.", "open THE door").wer == 0


def test_tie_prefers_substitution():
    a = align(["a", "b"], ["b", "c"])
    assert (a.n_sub, a.n_del, a.n_ins) == (2, 0, 0)


def test_counts_identity():
    rng = np.random.default_rng(0)
    for _ in range(200):
        ref = list(rng.choice(list("abc"), size=int(rng.integers(1, 7))))
        hyp = list(rng.choice(list("abc"), size=int(rng.integers(0, 7))))
        a = align(ref, hyp)
        assert a.n_correct + a.n_sub + a.n_del == len(ref)
        assert a.n_correct + a.n_sub + a.n_ins == len(hyp)


def test_dp_equals_brute_force_exhaustive():
    vocab = ["a", "b"]
    sents = [list(s) for n in range(0, 5) for s in itertools.product(vocab, repeat=n)]
    for ref in sents:
        if not ref:
            continue
        for hyp in sents:
            a = align(ref, hyp)
            assert a.n_sub + a.n_del + a.n_ins == brute_min(ref, hyp)


def test_dp_equals_brute_force_six_words():
    rng = np.random.default_rng(1)
    for _ in range(150):
        ref = list(rng.choice(list("abcd"), size=int(rng.integers(1, 7))))
        hyp = list(rng.choice(list("abcd"), size=int(rng.integers(0, 7))))
        a = align(ref, hyp)
        assert a.n_sub + a.n_del + a.n_ins == brute_min(ref, hyp)


def test_appending_unrelated_words_never_lowers_wer():
    ref = "set alarm for seven"
    hyp = "set alarm"
    prev = wer(ref, hyp).wer
    for extra in ["zz", "yy", "xx", "ww"]:
        hyp += " " + extra
        cur = wer(ref, hyp).wer
        assert cur >= prev
        prev = cur


def test_evaluate_sums_counts_order_independent():
    pairs = [("a b c", "a b"), ("d e", "d x e"), ("f", "g")]
    ev = evaluate(pairs)
    assert (ev.n_correct, ev.n_sub, ev.n_del, ev.n_ins) == (4, 1, 1, 1)
    assert ev.wer == 3 / 6
    assert ev.mean_sentence_wer == pytest.approx((1 / 3 + 1 / 2 + 1) / 3)
    rev = evaluate(pairs[::-1])
    assert rev.summary()["wer"] == ev.summary()["wer"]
    with pytest.raises(ParameterError):
        evaluate([])
