"""Binary model checkpoints.

Layout: magic ``PTCK``, u32 format version, length-prefixed header JSON
(model config + seed), 32-byte vocabulary digest, u64 step count, then one
named blob per parameter: u32 name length, name, u8 dtype tag (0=float32,
1=float64), u32 rank, u64 dims, little-endian payload.  Saving is
deterministic, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .model import ModelConfig, ModelParameters

MAGIC = b"PTCK"
VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    seed: int
    step: int
    vocab_digest: bytes
    blobs: dict[str, np.ndarray]

    def restore(self) -> ModelParameters:
        from .model import init_parameters

        params = init_parameters(self.config, seed=self.seed, dtype=next(iter(self.blobs.values())).dtype)
        params.load_data(self.blobs)
        return params


def save_checkpoint(path, params: ModelParameters, vocab_digest: bytes, step: int, seed: int) -> None:
    if len(vocab_digest) != 32:
        raise ValueError("vocab digest must be 32 bytes")
    header = json.dumps(
        {"model": json.loads(params.config.to_json()), "seed": seed},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(vocab_digest)
        f.write(struct.pack("<Q", step))
        for name, tensor in params.items():
            data = np.ascontiguousarray(tensor.data)
            tag = _DTYPE_TAGS.get(data.dtype)
            if tag is None:
                raise ValueError(f"unsupported dtype {data.dtype} for {name}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", tag))
            f.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<Q", d))
            f.write(data.astype(_TAG_DTYPES[tag], copy=False).tobytes())


def load_checkpoint(path, expect_vocab_digest: bytes | None = None) -> Checkpoint:
    """Read a checkpoint; a digest mismatch is an error, not a warning."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        digest = f.read(32)
        (step,) = struct.unpack("<Q", f.read(8))
        if expect_vocab_digest is not None and digest != expect_vocab_digest:
            raise CheckpointError("vocabulary digest mismatch: checkpoint was built with a different vocabulary")
        blobs: dict[str, np.ndarray] = {}
        while True:
            raw = f.read(4)
            if not raw:
                break
            (nlen,) = struct.unpack("<I", raw)
            name = f.read(nlen).decode("utf-8")
            (tag,) = struct.unpack("<B", f.read(1))
            (rank,) = struct.unpack("<I", f.read(4))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(rank))
            dtype = _TAG_DTYPES.get(tag)
            if dtype is None:
                raise CheckpointError(f"unknown dtype tag {tag} for blob {name}")
            count = int(np.prod(shape)) if shape else 1
            blob = np.frombuffer(f.read(count * dtype.itemsize), dtype=dtype).reshape(shape)
            blobs[name] = blob.copy()
    config = ModelConfig(**header["model"])
    return Checkpoint(config=config, seed=header["seed"], step=step, vocab_digest=digest, blobs=blobs)
