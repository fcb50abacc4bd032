"""Word error rate and word accuracy from a minimum-edit alignment."""
from __future__ import annotations

import string
from dataclasses import dataclass, field

from .errors import ParameterError

_STRIP = str.maketrans("", "", string.punctuation)


def normalize_words(text: str) -> list:
    return text.lower().translate(_STRIP).split()


@dataclass
class Alignment:
    n_correct: int
    n_sub: int
    n_del: int
    n_ins: int
    ops: list = field(default_factory=list)  # ("C"|"S"|"D"|"I", ref_word|None, hyp_word|None)


def align(ref: list, hyp: list) -> Alignment:
    """Levenshtein alignment over word lists.  When several edit paths are
    optimal the backtrace prefers a diagonal step (match or substitution),
    then a deletion, then an insertion."""
    n, m = len(ref), len(hyp)
    D = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        D[i][0] = i
    for j in range(1, m + 1):
        D[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = D[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            D[i][j] = min(sub, D[i - 1][j] + 1, D[i][j - 1] + 1)
    ops = []
    i, j = n, m
    while i or j:
        if i and j and D[i][j] == D[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops.append(("C" if ref[i - 1] == hyp[j - 1] else "S", ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and D[i][j] == D[i - 1][j] + 1:
            ops.append(("D", ref[i - 1], None))
            i -= 1
        else:
            ops.append(("I", None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    count = {k: sum(o[0] == k for o in ops) for k in "CSDI"}
    return Alignment(count["C"], count["S"], count["D"], count["I"], ops)


@dataclass
class EvalResult:
    n_correct: int
    n_sub: int
    n_del: int
    n_ins: int
    rows: list = field(default_factory=list)

    @property
    def n_ref(self) -> int:
        return self.n_sub + self.n_del + self.n_correct

    @property
    def wer(self) -> float:
        return (self.n_sub + self.n_del + self.n_ins) / self.n_ref

    @property
    def word_accuracy(self) -> float:
        return self.n_correct / self.n_ref

    @property
    def mean_sentence_wer(self) -> float:
        return sum(r["wer"] for r in self.rows) / len(self.rows) if self.rows else self.wer

    @property
    def mean_sentence_accuracy(self) -> float:
        return sum(r["accuracy"] for r in self.rows) / len(self.rows) if self.rows else self.word_accuracy

    def summary(self) -> dict:
        return {"wer": self.wer, "word_accuracy": self.word_accuracy,
                "mean_sentence_wer": self.mean_sentence_wer,
                "mean_sentence_accuracy": self.mean_sentence_accuracy,
                "Nc": self.n_correct, "Ns": self.n_sub, "Nd": self.n_del, "Ni": self.n_ins,
                "sentences": len(self.rows)}


def wer(reference: str, hypothesis: str) -> EvalResult:
    ref, hyp = normalize_words(reference), normalize_words(hypothesis)
    if not ref:
        raise ParameterError("reference has no words; WER is undefined")
    a = align(ref, hyp)
    row = {"reference": reference, "hypothesis": hypothesis, "Nc": a.n_correct, "Ns": a.n_sub,
           "Nd": a.n_del, "Ni": a.n_ins, "wer": (a.n_sub + a.n_del + a.n_ins) / len(ref),
           "accuracy": a.n_correct / len(ref)}
    return EvalResult(a.n_correct, a.n_sub, a.n_del, a.n_ins, [row])


def word_accuracy(reference: str, hypothesis: str) -> float:
    return wer(reference, hypothesis).word_accuracy


def evaluate(pairs) -> EvalResult:
    """Corpus-level counts summed over ``(reference, hypothesis)`` pairs."""
    total = EvalResult(0, 0, 0, 0, [])
    for ref, hyp in pairs:
        r = wer(ref, hyp)
        total.n_correct += r.n_correct
        total.n_sub += r.n_sub
        total.n_del += r.n_del
        total.n_ins += r.n_ins
        total.rows.extend(r.rows)
    if not total.rows:
        raise ParameterError("no sentence pairs to evaluate")
    return total
