"""Self-describing checkpoint container.

Layout: b"PTDITCKP", u32 version, u64 header length, UTF-8 JSON header, then
the raw little-endian blobs back to back. The header holds the model config,
free-form metadata and one entry per tensor with group, name, shape, dtype,
offset and byte count. Groups are ``params``, ``ema`` and ``optim``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import DTYPE_CODES, FormatError
from .model import ModelConfig

CKPT_MAGIC = b"PTDITCKP"
CKPT_VERSION = 1
_DTYPES = {str(d): d for d in DTYPE_CODES.values()}


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    ema: dict[str, np.ndarray] = field(default_factory=dict)
    optim: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically (temp file + rename) so a crash never leaves a torn file."""
    entries, blobs, offset = [], [], 0
    for group in ("params", "ema", "optim"):
        for name, arr in getattr(ckpt, group).items():
            a = np.asarray(arr)
            dt = a.dtype.newbyteorder("<")
            if str(dt) not in _DTYPES:
                raise FormatError(f"cannot store {group}/{name} with dtype {a.dtype}")
            raw = np.ascontiguousarray(a, dtype=dt).tobytes()
            entries.append({"group": group, "name": name, "shape": list(a.shape), "dtype": str(dt), "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
    header = json.dumps({"config": ckpt.config.to_dict(), "meta": ckpt.meta, "tensors": entries}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(header)) + header)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def read_header(path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        head = fh.read(8 + 12)
        if head[:8] != CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint")
        version, hlen = struct.unpack("<IQ", head[8:])
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
    return header, 8 + 12 + hlen


def load_checkpoint(path) -> Checkpoint:
    header, base = read_header(path)
    raw = Path(path).read_bytes()
    groups: dict[str, dict] = {"params": {}, "ema": {}, "optim": {}}
    for e in header["tensors"]:
        dt = _DTYPES.get(e["dtype"])
        if dt is None or e["group"] not in groups:
            raise FormatError(f"{path}: bad tensor entry {e['group']}/{e['name']}")
        start = base + e["offset"]
        if start + e["nbytes"] > len(raw):
            raise FormatError(f"{path}: truncated at {e['group']}/{e['name']}")
        count = e["nbytes"] // dt.itemsize
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=start).reshape(e["shape"]).copy()
        groups[e["group"]][e["name"]] = arr
    return Checkpoint(ModelConfig.from_dict(header["config"]), meta=header["meta"], **groups)


def describe(path) -> str:
    header, _ = read_header(path)
    lines = [f"checkpoint {path}", f"format version {CKPT_VERSION}"]
    lines += [f"meta.{k} = {json.dumps(v)}" for k, v in sorted(header["meta"].items()) if k != "rng_state"]
    lines += [f"config.{k} = {json.dumps(v)}" for k, v in sorted(header["config"].items())]
    totals: dict[str, int] = {}
    for e in header["tensors"]:
        totals[e["group"]] = totals.get(e["group"], 0) + int(np.prod(e["shape"], dtype=np.int64))
    lines += [f"{g}: {n} values" for g, n in totals.items()]
    lines += [f"  {e['group']}/{e['name']} {tuple(e['shape'])} {e['dtype']}" for e in header["tensors"] if e["group"] == "params"]
    return "\n".join(lines)
