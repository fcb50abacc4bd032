"""Versioned binary checkpoints.

Layout: magic ``SWCK``, uint32 version, uint32 header length, UTF-8 JSON header
(model config, tensor names and shapes, free-form metadata), then every tensor
as little-endian float32 in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import ParameterError

MAGIC = b"SWCK"
VERSION = 1


def save_state(path, state: dict, config: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    names = list(state)
    arrays = [state[n].detach().cpu().numpy().astype("<f4") for n in names]
    header = {"config": config, "meta": meta or {},
              "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(a.tobytes())
    return path


def load_state(path) -> tuple:
    """Returns ``(state_dict, config, meta)``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ParameterError(f"{path} is not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ParameterError(f"unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    off = 12 + hlen
    state = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.astype(np.float32))
        off += 4 * n
    if off != len(data):
        raise ParameterError(f"checkpoint {path} has {len(data) - off} trailing bytes")
    return state, header["config"], header["meta"]


def save_model(path, model, meta: dict | None = None) -> Path:
    return save_state(path, model.state_dict(), model.cfg.to_dict() if hasattr(model, "cfg") else {}, meta)


def load_model(path):
    from .model import ModelConfig, Seq2Seq

    state, config, meta = load_state(path)
    model = Seq2Seq(ModelConfig.from_dict(config))
    model.load_state_dict(state)
    model.eval()
    return model, meta
