"""Binary checkpoint format.

Layout: 8-byte magic ``PGCOVCK1``, an 8-byte little-endian length, that many
bytes of UTF-8 JSON manifest, then the float payload (little-endian
binary64) with all groups concatenated in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from covgen.model import ModelConfig, ModelParams

MAGIC = b"PGCOVCK1"


@dataclass
class Checkpoint:
    params: ModelParams
    accumulators: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.params.config


def _groups(ckpt: Checkpoint):
    for name, arr in ckpt.params.arrays.items():
        yield "param", name, arr
    for name, arr in ckpt.accumulators.items():
        yield "accum", name, arr


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    manifest = {"config": asdict(ckpt.config), "meta": ckpt.meta, "groups": []}
    offset = 0
    chunks = []
    for kind, name, arr in _groups(ckpt):
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest["groups"].append({"kind": kind, "name": name, "shape": list(arr.shape),
                                   "offset": offset, "nbytes": len(data)})
        offset += len(data)
        chunks.append(data)
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for data in chunks:
            fh.write(data)


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expected``, reject any shape or mode mismatch."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        (n,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(n).decode("utf-8"))
        payload = fh.read()
    config = ModelConfig(**manifest["config"])
    if expected is not None and expected != config:
        diff = {k: (v, getattr(expected, k)) for k, v in asdict(config).items() if getattr(expected, k) != v}
        raise ValueError(f"checkpoint config does not match active config: {diff}")
    params, accum = {}, {}
    for g in manifest["groups"]:
        arr = np.frombuffer(payload, dtype="<f8", count=g["nbytes"] // 8, offset=g["offset"])
        arr = arr.astype(np.float64).reshape(g["shape"])
        (params if g["kind"] == "param" else accum)[g["name"]] = arr
    mp = ModelParams(config, params)
    mp.check()
    for name, arr in accum.items():
        if name not in params or params[name].shape != arr.shape:
            raise ValueError(f"accumulator {name} does not match its parameter")
    return Checkpoint(mp, accum, manifest.get("meta", {}))
