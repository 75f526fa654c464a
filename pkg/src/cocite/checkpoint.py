"""Binary named-tensor checkpoints.

Layout (all integers little-endian):

    magic  b"CCKP"
    u32    format version (currently 1)
    u64    metadata byte length
    bytes  metadata: canonical JSON (sorted keys, no whitespace, UTF-8)
    u64    tensor count
    then per tensor, sorted by name:
    u32    name byte length
    bytes  name (UTF-8)
    u8     dtype tag
    u8     ndim
    u64[]  dims
    bytes  row-major little-endian data

Entries are sorted and the metadata serialization is canonical, so saving
the result of a load reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"CCKP"
VERSION = 1

_DTYPE_TAGS: dict[str, int] = {
    "float32": 0,
    "float64": 1,
    "int32": 2,
    "int64": 3,
    "uint8": 4,
}
_TAG_DTYPES = {tag: np.dtype(name).newbyteorder("<") for name, tag in _DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    """Unreadable, truncated, or malformed checkpoint data."""


def canonical_metadata_bytes(metadata: dict[str, Any]) -> bytes:
    return json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save(path: str | Path, tensors: dict[str, np.ndarray], metadata: dict[str, Any]) -> None:
    """Write tensors plus JSON-serializable metadata to ``path``."""
    meta = canonical_metadata_bytes(metadata)
    chunks: list[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(struct.pack("<Q", len(meta)))
    chunks.append(meta)
    chunks.append(struct.pack("<Q", len(tensors)))
    for name in sorted(tensors):
        arr = tensors[name]
        key = str(np.dtype(arr.dtype).name)
        if key not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", _DTYPE_TAGS[key], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_TAG_DTYPES[_DTYPE_TAGS[key]]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a checkpoint back as (tensors, metadata)."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (meta_len,) = r.unpack("<Q")
    try:
        metadata = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad metadata block: {exc}") from exc
    (count,) = r.unpack("<Q")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        tag, ndim = r.unpack("<BB")
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
        dims = r.unpack(f"<{ndim}Q") if ndim else ()
        dtype = _TAG_DTYPES[tag]
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = r.take(size * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
        tensors[name] = arr
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return tensors, metadata


# ------------------------------------------------------------- model wrappers

def model_metadata(model) -> dict[str, Any]:
    return {
        "kind": "model",
        "model": model.cfg.to_dict(),
        "vocab": model.vocab.to_dict(),
        "moe": model.moe_cfg.to_dict() if model.moe_cfg is not None else None,
    }


def save_model(path: str | Path, model, extra: dict[str, Any] | None = None) -> None:
    meta = model_metadata(model)
    if extra:
        meta = {**meta, **extra}
    save(path, model.params, meta)


def load_model(path: str | Path):
    """Rebuild a model (dense or extended) from a checkpoint. Returns
    (model, metadata)."""
    from .config import ModelConfig, MoEConfig
    from .encoder import Model
    from .vocab import Vocabulary

    tensors, meta = load(path)
    for key in ("model", "vocab"):
        if key not in meta:
            raise CheckpointError(f"{path}: metadata lacks {key!r}")
    cfg = ModelConfig.from_dict(meta["model"])
    vocab = Vocabulary.from_dict(meta["vocab"])
    moe_cfg = MoEConfig.from_dict(meta["moe"]) if meta.get("moe") else None
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    params.pop("temperature.log", None)
    return Model(cfg, vocab, params, moe_cfg=moe_cfg), meta
