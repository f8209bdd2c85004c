"""Binary model file format.

Layout (all integers little-endian):
  magic "TLM1"
  u32 config length, then config JSON (UTF-8)
  per entry, in lexicographic name order:
    u32 name length, name bytes, u8 trainable flag, u32 rank,
    rank x u32 dims, raw 32-bit little-endian floats
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatVersionMismatchError
from .model import ModelConfig, ParamSet

MAGIC = b"TLM1"


def serialize_model(params: ParamSet, config: ModelConfig) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    for name, arr in params.items():
        _write_entry(buf, name, arr, params.is_trainable(name))
    return buf.getvalue()


def serialize_entries(params: ParamSet, names) -> bytes:
    """Bare entry records for a subset of names (no magic/config header)."""
    buf = io.BytesIO()
    for name in sorted(names):
        _write_entry(buf, name, params[name], params.is_trainable(name))
    return buf.getvalue()


def _write_entry(buf, name: str, arr: np.ndarray, trainable: bool) -> None:
    nb = name.encode("utf-8")
    buf.write(struct.pack("<I", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<B", 1 if trainable else 0))
    buf.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def deserialize_model(data: bytes) -> tuple[ParamSet, ModelConfig]:
    if data[:4] != MAGIC:
        raise FormatVersionMismatchError("not a TLM1 model file")
    off = 4
    (clen,) = struct.unpack_from("<I", data, off)
    off += 4
    if off + clen > len(data):
        raise FormatVersionMismatchError("truncated config block")
    config = ModelConfig.from_dict(json.loads(data[off:off + clen].decode("utf-8")))
    off += clen
    entries, trainable, off = deserialize_entries(data, off)
    if off != len(data):
        raise FormatVersionMismatchError("trailing bytes after last entry")
    return ParamSet(entries, trainable), config


def deserialize_entries(data: bytes, off: int = 0) -> tuple[dict, dict, int]:
    """Parse entry records until end of buffer; returns (entries, trainable, offset)."""
    entries: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    n = len(data)
    while off < n:
        if off + 4 > n:
            raise FormatVersionMismatchError("truncated entry header")
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + nlen + 1 + 4 > n:
            raise FormatVersionMismatchError("truncated entry record")
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        flag = data[off]
        off += 1
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + 4 * rank > n:
            raise FormatVersionMismatchError("truncated shape record")
        shape = struct.unpack_from(f"<{rank}I", data, off) if rank else ()
        off += 4 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = 4 * count
        if off + nbytes > n:
            raise FormatVersionMismatchError("truncated tensor payload")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
        off += nbytes
        entries[name] = arr.astype(np.float32)
        trainable[name] = bool(flag)
    return entries, trainable, off


def save_model(path: str | Path, params: ParamSet, config: ModelConfig) -> None:
    Path(path).write_bytes(serialize_model(params, config))


def load_model(path: str | Path) -> tuple[ParamSet, ModelConfig]:
    return deserialize_model(Path(path).read_bytes())
