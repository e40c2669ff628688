"""The "SNCK" binary checkpoint container.

Little-endian layout: magic "SNCK", u16 version (=1), u32 blob length,
UTF-8 JSON blob (model config + training metadata), u32 n_tensors; per
tensor: u16 name length, name, u8 rank, u32 dims[rank], f32 data.
Parameter round-trips are bit-exact. Optimizer state rides along under
"opt." name prefixes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, TruncatedFile
from .model import ModelConfig, SourceNet, init_params

MAGIC = b"SNCK"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict  # name -> torch.float32 tensor
    metadata: dict = field(default_factory=dict)
    opt_state: dict | None = None  # name -> tensor, plus "step"

    def build_model(self) -> SourceNet:
        model = init_params(self.config, seed=0)
        model.load_state_dict({k: v.clone() for k, v in self.state.items()})
        model.eval()
        return model


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n):
        if self.off + n > len(self.data):
            raise TruncatedFile(f"checkpoint truncated at byte {self.off}")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def _pack_tensors(out: bytearray, tensors: dict):
    for name, tensor in tensors.items():
        arr = np.ascontiguousarray(tensor.detach().cpu().to(torch.float32).numpy(), dtype="<f4")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()


def save_checkpoint(path, model: SourceNet, metadata: dict | None = None, opt_state: dict | None = None):
    """Serialize model parameters (f32) plus config/metadata and optimizer state."""
    tensors = dict(model.state_dict())
    if opt_state:
        for key, val in opt_state.items():
            tensors[f"opt.{key}"] = (
                val if isinstance(val, torch.Tensor) else torch.tensor(float(val))
            )
    blob = json.dumps(
        {"model": model.cfg.to_dict(), "meta": metadata or {}}, sort_keys=True
    ).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HI", VERSION, len(blob))
    out += blob
    out += struct.pack("<I", len(tensors))
    _pack_tensors(out, tensors)
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise FormatError("bad checkpoint magic")
    version, blob_len = r.unpack("HI")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    blob = json.loads(r.take(blob_len).decode("utf-8"))
    (n_tensors,) = r.unpack("I")
    state = {}
    opt_state = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("B")
        dims = r.unpack(f"{rank}I") if rank else ()
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).copy()
        tensor = torch.from_numpy(arr)
        if name.startswith("opt."):
            opt_state[name[4:]] = tensor
        else:
            state[name] = tensor
    if r.off != len(r.data):
        raise FormatError("trailing bytes after checkpoint tensors")
    return Checkpoint(
        config=ModelConfig.from_dict(blob["model"]),
        state=state,
        metadata=blob.get("meta", {}),
        opt_state=opt_state or None,
    )
