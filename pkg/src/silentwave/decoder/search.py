"""Greedy and beam-search decoding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import ParameterError
from ..lexicon import BOS_ID, EOS_ID, PAD_ID, TokenSequence
from .frontend import FrameSequence
from .model import Seq2Seq


@dataclass
class BeamHypothesis:
    tokens: tuple  # generated ids, no <bos>
    logprob: float
    finished: bool = False

    def score(self, length_penalty: float | None = None) -> float:
        if not length_penalty:
            return self.logprob
        return self.logprob / max(1, len(self.tokens)) ** length_penalty


@dataclass
class DecodeResult:
    tokens: TokenSequence
    score: float
    finished: bool
    hypotheses: list = field(default_factory=list)


def _encode(model: Seq2Seq, seq: FrameSequence):
    frames = torch.from_numpy(np.asarray(seq.frames, dtype=np.float32))[None]
    mask = torch.from_numpy(np.asarray(seq.pad_mask, dtype=bool))[None]
    return model.encode(frames.to(next(model.parameters()).dtype), mask)


def next_token_logprobs(model: Seq2Seq, memory, mem_mask, prefixes) -> np.ndarray:
    """Log-probabilities (float64) of the next token for each prefix (lists starting with <bos>).
    <pad> and <bos> are never emitted."""
    L = max(len(p) for p in prefixes)
    toks = torch.full((len(prefixes), L), PAD_ID, dtype=torch.long)
    for i, p in enumerate(prefixes):
        toks[i, :len(p)] = torch.tensor(p)
    mem = memory.expand(len(prefixes), -1, -1)
    mm = mem_mask.expand(len(prefixes), -1)
    logits = model.decode(mem, mm, toks)
    last = torch.tensor([len(p) - 1 for p in prefixes])
    lp = torch.log_softmax(logits[torch.arange(len(prefixes)), last].double(), dim=-1).numpy().copy()
    lp[:, PAD_ID] = -np.inf
    lp[:, BOS_ID] = -np.inf
    return lp


@torch.no_grad()
def greedy_decode(model: Seq2Seq, seq: FrameSequence, max_len: int = 32) -> DecodeResult:
    model.eval()
    memory, mem_mask = _encode(model, seq)
    out, total = [], 0.0
    for _ in range(max_len):
        lp = next_token_logprobs(model, memory, mem_mask, [[BOS_ID] + out])[0]
        v = int(np.argmax(lp))  # first maximum, i.e. lowest id on ties
        out.append(v)
        total += lp[v]
        if v == EOS_ID:
            break
    finished = bool(out) and out[-1] == EOS_ID
    return DecodeResult(TokenSequence(out), float(total), finished)


@torch.no_grad()
def beam_search(model: Seq2Seq, seq: FrameSequence, k: int = 4, max_len: int = 32,
                length_penalty: float | None = None) -> DecodeResult:
    """Keep the ``k`` best candidates per step; candidates ending in <eos> move
    to the completed set.  Beams still open at ``max_len`` are completed as
    they are.  Ties rank by token sequence, so lower ids win."""
    if k < 1:
        raise ParameterError(f"beam width must be >= 1, got {k}")
    model.eval()
    memory, mem_mask = _encode(model, seq)
    beams = [BeamHypothesis((), 0.0)]
    completed = []
    for _ in range(max_len):
        lp = next_token_logprobs(model, memory, mem_mask, [[BOS_ID, *b.tokens] for b in beams])
        cands = []
        for b, row in zip(beams, lp):
            for v in np.flatnonzero(np.isfinite(row)):
                cands.append((b.logprob + row[v], b.tokens + (int(v),)))
        cands.sort(key=lambda c: (-c[0], c[1]))
        beams = []
        for score, toks in cands[:k]:
            if toks[-1] == EOS_ID:
                completed.append(BeamHypothesis(toks, float(score), True))
            else:
                beams.append(BeamHypothesis(toks, float(score)))
        if not beams:
            break
    completed.extend(beams)
    completed.sort(key=lambda h: (-h.score(length_penalty), h.tokens))
    best = completed[0]
    return DecodeResult(TokenSequence(best.tokens), best.score(length_penalty), best.finished, completed)


def decode_batch(model: Seq2Seq, seqs, k: int = 4, max_len: int = 32, length_penalty=None) -> list:
    if k == 1:
        return [greedy_decode(model, s, max_len) for s in seqs]
    return [beam_search(model, s, k, max_len, length_penalty) for s in seqs]
