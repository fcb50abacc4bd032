"""Pseudo-label pretraining and teacher-forced sequence training."""
from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ParameterError
from ..lexicon import BOS_ID, PAD_ID
from .frontend import FrameSequence, pad_batch
from .model import ModelConfig, Seq2Seq, UnitClassifier

log = logging.getLogger(__name__)


@dataclass
class TrainParams:
    epochs: int = 60
    batch_size: int = 16
    lr: float = 3e-4
    warmup_steps: int = 200
    grad_clip: float = 1.0
    weight_decay: float = 0.0
    seed: int = 0
    threads: int = 1


@dataclass
class TrainResult:
    model: torch.nn.Module
    losses: list = field(default_factory=list)  # mean loss per epoch
    accuracies: list = field(default_factory=list)


@contextmanager
def deterministic(seed: int, threads: int = 1):
    """Seed torch, pin the thread count and force deterministic kernels."""
    prev_threads = torch.get_num_threads()
    prev_det = torch.are_deterministic_algorithms_enabled()
    torch.manual_seed(seed)
    torch.set_num_threads(max(1, threads))
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(prev_threads)
        torch.use_deterministic_algorithms(prev_det)


def frame_statistics(seqs) -> tuple:
    """Per-bin mean and std over all real frames, for input normalisation."""
    allf = np.concatenate([s.frames[~s.pad_mask] for s in seqs]).astype(np.float64)
    std = allf.std(axis=0)
    std[std == 0] = 1.0
    return torch.tensor(allf.mean(axis=0), dtype=torch.float32), torch.tensor(std, dtype=torch.float32)


def warmup_schedule(step: int, warmup: int) -> float:
    return min(1.0, (step + 1) / max(1, warmup))


def _optimizer(model, p: TrainParams):
    opt = torch.optim.Adam(model.parameters(), lr=p.lr, weight_decay=p.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: warmup_schedule(s, p.warmup_steps))
    return opt, sched


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _step(model, opt, sched, loss, clip):
    opt.zero_grad()
    loss.backward()
    if clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), clip)
    opt.step()
    sched.step()


def pretrain_units(unit_frames, labels, cfg: ModelConfig, params: TrainParams | None = None,
                   n_classes: int | None = None) -> TrainResult:
    """Train encoder + linear head to predict each unit's cluster id."""
    p = params or TrainParams()
    labels = np.asarray(labels, dtype=np.int64)
    if len(unit_frames) != len(labels):
        raise ParameterError(f"{len(unit_frames)} units but {len(labels)} labels")
    if np.unique(labels).size < 2:
        raise ParameterError("pretraining needs at least two distinct pseudo labels")
    n_classes = int(n_classes or labels.max() + 1)
    with deterministic(p.seed, p.threads):
        model = UnitClassifier(cfg, n_classes)
        mean, std = frame_statistics(unit_frames)
        model.encoder.in_mean.copy_(mean)
        model.encoder.in_std.copy_(std)
        opt, sched = _optimizer(model, p)
        rng = np.random.default_rng(p.seed)
        y_all = torch.from_numpy(labels)
        res = TrainResult(model)
        for epoch in range(p.epochs):
            model.train()
            total, correct, seen = 0.0, 0, 0
            for idx in _batches(len(labels), p.batch_size, rng):
                frames, mask = pad_batch([unit_frames[i] for i in idx])
                logits = model(torch.from_numpy(frames), torch.from_numpy(mask))
                y = y_all[idx]
                loss = F.cross_entropy(logits, y)
                _step(model, opt, sched, loss, p.grad_clip)
                total += loss.item() * len(idx)
                correct += int((logits.argmax(1) == y).sum())
                seen += len(idx)
            res.losses.append(total / seen)
            res.accuracies.append(correct / seen)
            log.debug("pretrain epoch %d loss %.4f acc %.3f", epoch, res.losses[-1], res.accuracies[-1])
        model.eval()
    return res


def unit_accuracy(model: UnitClassifier, unit_frames, labels) -> float:
    model.eval()
    with torch.no_grad():
        frames, mask = pad_batch(unit_frames)
        pred = model(torch.from_numpy(frames), torch.from_numpy(mask)).argmax(1).numpy()
    return float(np.mean(pred == np.asarray(labels)))


def target_tensors(token_seqs, vocab_size: int):
    """Teacher-forcing inputs (``<bos>`` + ids[:-1]) and targets, PAD-filled."""
    L = max(len(t) for t in token_seqs)
    inp = np.full((len(token_seqs), L), PAD_ID, dtype=np.int64)
    tgt = np.full((len(token_seqs), L), PAD_ID, dtype=np.int64)
    for i, t in enumerate(token_seqs):
        ids = list(getattr(t, "ids", t))
        if ids and max(ids) >= vocab_size:
            raise ParameterError(f"token id {max(ids)} >= vocab_size {vocab_size}")
        tgt[i, :len(ids)] = ids
        inp[i, 0] = BOS_ID
        inp[i, 1:len(ids)] = ids[:-1]
    return torch.from_numpy(inp), torch.from_numpy(tgt)


def sequence_loss(model: Seq2Seq, frames, mask, inp, tgt):
    logits = model(frames, mask, inp)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt.reshape(-1), ignore_index=PAD_ID)


def train_seq2seq(dataset, cfg: ModelConfig, params: TrainParams | None = None,
                  init_encoder: dict | None = None) -> TrainResult:
    """``dataset``: list of ``(FrameSequence, TokenSequence)``."""
    p = params or TrainParams()
    if not dataset:
        raise ParameterError("empty training set")
    frames_all = [f for f, _ in dataset]
    toks_all = [t for _, t in dataset]
    for t in toks_all:
        ids = list(getattr(t, "ids", t))
        if max(ids) >= cfg.vocab_size:
            raise ParameterError(f"token id {max(ids)} >= vocab_size {cfg.vocab_size}")
        if len(ids) > cfg.max_tokens:
            raise ParameterError(f"target of {len(ids)} tokens exceeds max_tokens={cfg.max_tokens}")
    with deterministic(p.seed, p.threads):
        model = Seq2Seq(cfg)
        if init_encoder is not None:
            model.encoder.load_state_dict(init_encoder)
        else:
            mean, std = frame_statistics(frames_all)
            model.encoder.in_mean.copy_(mean)
            model.encoder.in_std.copy_(std)
        opt, sched = _optimizer(model, p)
        rng = np.random.default_rng(p.seed)
        res = TrainResult(model)
        for epoch in range(p.epochs):
            model.train()
            total, count = 0.0, 0
            for idx in _batches(len(dataset), p.batch_size, rng):
                frames, mask = pad_batch([frames_all[i] for i in idx])
                inp, tgt = target_tensors([toks_all[i] for i in idx], cfg.vocab_size)
                loss = sequence_loss(model, torch.from_numpy(frames), torch.from_numpy(mask), inp, tgt)
                if not math.isfinite(loss.item()):
                    raise ParameterError(f"non-finite training loss at epoch {epoch}")
                _step(model, opt, sched, loss, p.grad_clip)
                n_tok = int((tgt != PAD_ID).sum())
                total += loss.item() * n_tok
                count += n_tok
            res.losses.append(total / count)
            log.debug("seq2seq epoch %d loss %.4f", epoch, res.losses[-1])
        model.eval()
    return res


def as_frame_sequence(frames: np.ndarray) -> FrameSequence:
    return FrameSequence(np.asarray(frames, dtype=np.float32), np.zeros(len(frames), dtype=bool))
