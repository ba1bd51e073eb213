"""Self-describing checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a UTF-8 JSON
header (config echo, stage tag, iteration, parameter table) and the raw
little-endian parameter bytes.  No timestamps are written, so equal inputs
give byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .detector import DetectorConfig, DetectorParams, ParamLayout, build_layout

MAGIC = b"DRWDCKP1"
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: DetectorParams
    config: DetectorConfig
    stage: str
    iteration: int = 0
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    vec = ckpt.params.vector.detach().contiguous()
    dtype = {v: k for k, v in _DTYPES.items()}.get(vec.dtype)
    if dtype is None:
        raise CheckpointError(f"unsupported dtype {vec.dtype}")
    layout = ckpt.params.layout
    header = {
        "format": 1,
        "stage": ckpt.stage,
        "iteration": int(ckpt.iteration),
        "config": ckpt.config.to_dict(),
        "dtype": dtype,
        "params": [{"name": n, "shape": list(s), "offset": o} for (n, s), o in zip(layout.entries, layout.offsets)],
        "segments": {seg: [sl.start, sl.stop] for seg in _segments(layout)
                     for sl in [layout.segment_slice(seg)]},
        "meta": ckpt.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    data = vec.numpy().astype(vec.numpy().dtype.newbyteorder("<"), copy=False).tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(data)
    return path


def _segments(layout: ParamLayout) -> list[str]:
    seen = []
    for name, _ in layout.entries:
        seg = name.split(".", 1)[0]
        if seg not in seen:
            seen.append(seg)
    return seen


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + n])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    config = DetectorConfig(**header["config"])
    layout = build_layout(config)
    stored = [(p["name"], tuple(p["shape"])) for p in header["params"]]
    if tuple(stored) != layout.entries:
        raise CheckpointError(f"{path}: parameter table does not match the configured detector")
    np_dtype = np.dtype(header["dtype"]).newbyteorder("<")
    arr = np.frombuffer(raw[16 + n:], dtype=np_dtype)
    if arr.size != layout.size:
        raise CheckpointError(f"{path}: expected {layout.size} values, found {arr.size}")
    vec = torch.from_numpy(arr.astype(np_dtype.newbyteorder("="), copy=True))
    return Checkpoint(DetectorParams(layout, vec), config, header["stage"], header["iteration"], header["meta"])
