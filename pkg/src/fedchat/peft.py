"""Parameter-efficient adapters, trainable-parameter accounting, and
checkpoint diffs for transport optimization.

LoRA adds ``<target>.lora_A`` (r x d_in), ``<target>.lora_B`` (d_out x r)
and a one-element ``<target>.lora_scale`` holding alpha/r; the effective
weight is ``W + scale * (B @ A)^T`` and B starts at zero so attaching is a
no-op until training moves it. Prefix adapters add per-layer
``layers.<i>.prefix_k`` / ``prefix_v`` rows that attention prepends to its
keys/values.
"""

from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BaseHashMismatchError,
    MisalignedParamsError,
    NonMatrixTargetError,
    UnknownTargetError,
)
from .tinylm.model import ModelConfig, ParamSet

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF

DIFF_MAGIC = b"TLD1"


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a; chainable via the ``h`` argument."""
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _U64
    return h


def param_set_hash(params: ParamSet) -> int:
    """Content digest over names, shapes and raw little-endian float bytes."""
    h = FNV_OFFSET
    for name, arr in params.items():
        h = fnv1a64(name.encode("utf-8"), h)
        h = fnv1a64(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape), h)
        h = fnv1a64(np.ascontiguousarray(arr, dtype="<f4").tobytes(), h)
    return h


def default_lora_targets(config: ModelConfig) -> list[str]:
    """Attention projection matrices of every layer."""
    return [
        f"layers.{i}.attn.{m}"
        for i in range(config.n_layers)
        for m in ("wq", "wk", "wv", "wo")
    ]


def attach_lora(
    params: ParamSet,
    config: ModelConfig,
    target_names: list[str] | None = None,
    r: int = 4,
    alpha: float | None = None,
    seed: int | None = None,
) -> ParamSet:
    """Freeze the base model and add trainable LoRA factors on the targets.

    A is Gaussian(0, 0.02), B is zero, so the adapted model computes
    exactly the base forward until the first update.
    """
    if r < 1:
        raise ValueError("lora rank must be >= 1")
    targets = default_lora_targets(config) if target_names is None else list(target_names)
    if alpha is None:
        alpha = 2.0 * r
    rng = np.random.default_rng(config.seed if seed is None else seed)
    new: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for tgt in targets:
        if tgt not in params:
            raise UnknownTargetError(f"no parameter named {tgt!r}")
        w = params[tgt]
        if w.ndim != 2:
            raise NonMatrixTargetError(f"{tgt!r} is rank-{w.ndim}, LoRA needs a matrix")
        d_in, d_out = w.shape
        if r > min(d_in, d_out):
            warnings.warn(
                f"LoRA rank {r} exceeds min dim {min(d_in, d_out)} of {tgt!r}; "
                "the factorization adds parameters without reducing rank",
                stacklevel=2,
            )
        new[f"{tgt}.lora_A"] = rng.standard_normal((r, d_in), dtype=np.float32) * np.float32(0.02)
        new[f"{tgt}.lora_B"] = np.zeros((d_out, r), dtype=np.float32)
        new[f"{tgt}.lora_scale"] = np.array([alpha / r], dtype=np.float32)
        trainable[f"{tgt}.lora_A"] = True
        trainable[f"{tgt}.lora_B"] = True
        trainable[f"{tgt}.lora_scale"] = False
    mask = {name: False for name in params.names}
    mask.update(trainable)
    return params.with_entries(new, trainable).with_trainable(mask)


def attach_prefix(
    params: ParamSet,
    config: ModelConfig,
    prefix_len: int = 4,
    seed: int | None = None,
    init_std: float = 0.02,
) -> ParamSet:
    """Freeze the base model and add trainable per-layer prefix key/values."""
    if prefix_len < 1:
        raise ValueError("prefix_len must be >= 1")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    new: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for i in range(config.n_layers):
        for kind in ("prefix_k", "prefix_v"):
            name = f"layers.{i}.{kind}"
            new[name] = rng.standard_normal(
                (prefix_len, config.d_model), dtype=np.float32) * np.float32(init_std)
            trainable[name] = True
    mask = {name: False for name in params.names}
    mask.update(trainable)
    return params.with_entries(new, trainable).with_trainable(mask)


@dataclass(frozen=True)
class ParamStats:
    total_params: int
    trainable_params: int
    trainable_percent: float
    model_bytes: int
    trainable_bytes: int


def param_stats(params: ParamSet) -> ParamStats:
    total = sum(arr.size for _, arr in params.items())
    trainable = sum(arr.size for name, arr in params.items() if params.is_trainable(name))
    percent = 100.0 * trainable / total if total else 0.0
    return ParamStats(
        total_params=total,
        trainable_params=trainable,
        trainable_percent=percent,
        model_bytes=4 * total,
        trainable_bytes=4 * trainable,
    )


@dataclass(frozen=True)
class Checkpoint:
    """Immutable parameter snapshot with a content digest."""

    round: int
    params: ParamSet
    content_hash: int


def checkpoint_save(params: ParamSet, round: int = 0) -> Checkpoint:
    return Checkpoint(round=round, params=params, content_hash=param_set_hash(params))


@dataclass(frozen=True)
class CheckpointDiff:
    """Sparse changed entries between two aligned snapshots.

    ``changed`` maps entry name to (flat indices, new values); an element is
    recorded iff |new - old| > tau. ``dense_new`` carries the full flattened
    new tensor for entries where more than half the elements changed; the
    serializer uses it to emit a dense record, which bounds any diff's wire
    size by the full snapshot's.
    """

    base_hash: int
    tau: float
    changed: dict[str, tuple[np.ndarray, np.ndarray]]
    dense_new: dict[str, np.ndarray]


def checkpoint_diff(old: Checkpoint, new: Checkpoint, tau: float = 0.0) -> CheckpointDiff:
    old.params.require_aligned(new.params)
    changed: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    dense_new: dict[str, np.ndarray] = {}
    for name, old_arr in old.params.items():
        new_arr = new.params[name]
        delta = np.abs(new_arr.astype(np.float64) - old_arr.astype(np.float64))
        idx = np.flatnonzero(delta > tau)
        if idx.size:
            changed[name] = (idx.astype(np.uint32), new_arr.ravel()[idx].astype(np.float32))
            if 2 * idx.size > new_arr.size:
                dense_new[name] = new_arr.astype(np.float32).ravel()
    return CheckpointDiff(base_hash=old.content_hash, tau=float(tau), changed=changed,
                          dense_new=dense_new)


def checkpoint_apply(base: Checkpoint, diff: CheckpointDiff) -> ParamSet:
    if diff.base_hash != base.content_hash:
        raise BaseHashMismatchError(
            f"diff base hash {diff.base_hash:#x} != checkpoint hash {base.content_hash:#x}")
    updates: dict[str, np.ndarray] = {}
    for name, (idx, values) in diff.changed.items():
        if name not in base.params:
            raise MisalignedParamsError(f"diff names unknown entry {name!r}")
        arr = base.params[name].copy()
        arr.ravel()[idx] = values
        updates[name] = arr
    return base.params.replace(updates)


def serialize_diff(diff: CheckpointDiff) -> bytes:
    """TLD1 wire format.

    Header: magic, base hash (u64 LE), tau (f32 LE), record count (u32 LE).
    Each record: length-prefixed name, u8 encoding flag, then either
    sparse (flag 0: u32 index count, per entry u32 flat index + f32 value)
    or dense (flag 1: u32 element count, all f32 values of the tensor).
    Dense is emitted when over half the elements changed, so a diff never
    serializes larger than the full snapshot.
    """
    buf = io.BytesIO()
    buf.write(DIFF_MAGIC)
    buf.write(struct.pack("<Q", diff.base_hash))
    buf.write(struct.pack("<f", diff.tau))
    buf.write(struct.pack("<I", len(diff.changed)))
    for name in sorted(diff.changed):
        idx, values = diff.changed[name]
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        if name in diff.dense_new:
            full = diff.dense_new[name]
            buf.write(struct.pack("<BI", 1, full.size))
            buf.write(np.ascontiguousarray(full, dtype="<f4").tobytes())
        else:
            buf.write(struct.pack("<BI", 0, idx.size))
            rec = np.empty((idx.size, 2), dtype="<u4")
            rec[:, 0] = idx
            rec[:, 1] = np.ascontiguousarray(values, dtype="<f4").view("<u4")
            buf.write(rec.tobytes())
    return buf.getvalue()


def deserialize_diff(data: bytes) -> CheckpointDiff:
    if data[:4] != DIFF_MAGIC:
        raise ValueError("not a TLD1 diff")
    off = 4
    (base_hash,) = struct.unpack_from("<Q", data, off)
    off += 8
    (tau,) = struct.unpack_from("<f", data, off)
    off += 4
    (n_records,) = struct.unpack_from("<I", data, off)
    off += 4
    changed: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    dense_new: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        flag, count = struct.unpack_from("<BI", data, off)
        off += 5
        if flag == 1:
            values = np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float32)
            off += 4 * count
            idx = np.arange(count, dtype=np.uint32)
            dense_new[name] = values
        else:
            rec = np.frombuffer(data, dtype="<u4", count=2 * count, offset=off).reshape(count, 2)
            off += 8 * count
            idx = rec[:, 0].astype(np.uint32)
            values = np.ascontiguousarray(rec[:, 1]).view("<f4").astype(np.float32)
        changed[name] = (idx, values)
    if off != len(data):
        raise ValueError("trailing bytes after last diff record")
    return CheckpointDiff(base_hash=base_hash, tau=tau, changed=changed, dense_new=dense_new)
