"""Federated orchestration: local client updates, FedAvg aggregation,
quantized/diff transport with a byte-accurate ledger, and multi-round
training runs emitting per-round metric histories.

Clients are simulated in-process with independent seeded RNG streams; the
network is modeled by the ledger, but every payload is fully serialized so
the recorded byte counts are exact.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyDatasetError,
    EmptyListError,
    MisalignedParamsError,
    NonFiniteValueError,
)
from .evalmetrics import evaluate_model
from .peft import (
    CheckpointDiff,
    checkpoint_apply,
    checkpoint_diff,
    checkpoint_save,
    deserialize_diff,
    serialize_diff,
)
from .tinylm.io import deserialize_entries, deserialize_model, serialize_entries, serialize_model
from .tinylm.model import (
    ModelConfig,
    ParamSet,
    TrainBatch,
    loss,
    loss_and_grad,
    forward,
    sgd_step,
)
from .tinylm.tokenizer import BOS, EOS, PAD, detokenize, tokenize

TRANSPORT_MODES = ("full", "diff", "adapters-only")

QUANT_MAGIC = b"QTP1"
QUANT_DIFF_MAGIC = b"QTD1"


# ---------------------------------------------------------------------------
# Batching

def document_windows(text: str, context_len: int) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Split one document into (inputs, targets, mask) windows.

    Targets are the inputs shifted left by one within the document; windows
    never cross document boundaries and padding positions are masked out.
    """
    ids = [BOS] + tokenize(text) + [EOS]
    out = []
    T = context_len
    for start in range(0, len(ids) - 1, T):
        chunk = ids[start:start + T + 1]
        if len(chunk) < 2:
            break
        inputs = chunk[:-1]
        targets = chunk[1:]
        pad_n = T - len(inputs)
        mask = [True] * len(inputs) + [False] * pad_n
        inputs = inputs + [PAD] * pad_n
        targets = targets + [PAD] * pad_n
        out.append((np.array(inputs), np.array(targets), np.array(mask)))
    return out


def make_batches(docs: list[str], context_len: int, batch_size: int, seed: int) -> list[TrainBatch]:
    """Deterministic batch list: seeded doc shuffle, windows grouped in order."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(docs))
    windows = []
    for di in order:
        windows.extend(document_windows(docs[di], context_len))
    batches = []
    for i in range(0, len(windows), batch_size):
        group = windows[i:i + batch_size]
        batches.append(TrainBatch(
            inputs=np.stack([w[0] for w in group]),
            targets=np.stack([w[1] for w in group]),
            loss_mask=np.stack([w[2] for w in group]),
        ))
    return batches


@dataclass
class ClientState:
    """One simulated client: id, its document shard, and its RNG seed."""

    client_id: int
    docs: list[str]
    seed: int
    batch_size: int = 8

    def batches(self, config: ModelConfig, steps: int) -> list[TrainBatch]:
        """First `steps` batches of this client's deterministic stream (cycled)."""
        base = make_batches(self.docs, config.context_len, self.batch_size, self.seed)
        if not base:
            raise EmptyDatasetError(f"client {self.client_id} has no training data")
        return [base[i % len(base)] for i in range(steps)]


def shard_documents(docs: list[str], num_clients: int, seed: int) -> list[list[str]]:
    """Disjoint contiguous shards of a seeded document permutation."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(docs))
    shards: list[list[str]] = [[] for _ in range(num_clients)]
    bounds = np.linspace(0, len(docs), num_clients + 1).astype(int)
    for k in range(num_clients):
        shards[k] = [docs[i] for i in order[bounds[k]:bounds[k + 1]]]
    return shards


# ---------------------------------------------------------------------------
# Core federated operations

def client_update(
    params: ParamSet,
    config: ModelConfig,
    client: ClientState,
    lr: float,
    steps: int,
) -> ParamSet:
    """`steps` sequential grad+SGD applications on the client's batches."""
    out = params
    for batch in client.batches(config, steps):
        _, grads = loss_and_grad(out, config, batch)
        out = sgd_step(out, grads, lr)
    return out


def fedavg(param_sets: list[ParamSet]) -> ParamSet:
    """Elementwise arithmetic mean with 64-bit accumulation.

    Each coordinate's addends are sorted before summation, so the result is
    bitwise independent of client ordering.
    """
    if not param_sets:
        raise EmptyListError("fedavg needs at least one parameter set")
    first = param_sets[0]
    for other in param_sets[1:]:
        first.require_aligned(other)
    k = len(param_sets)
    out: dict[str, np.ndarray] = {}
    for name, _ in first.items():
        stack = np.stack([ps[name].astype(np.float64) for ps in param_sets])
        mean = np.sort(stack, axis=0).sum(axis=0) / k
        out[name] = mean.astype(np.float32)
    return ParamSet(out, first.trainable_map)


# ---------------------------------------------------------------------------
# Quantization

@dataclass(frozen=True)
class QuantizedParams:
    """Per-tensor affine 8-bit encoding of a ParamSet."""

    scales: dict[str, float]
    zero_points: dict[str, int]
    codes: dict[str, np.ndarray]
    trainable: dict[str, bool]


def quantize_array(arr: np.ndarray) -> tuple[float, int, np.ndarray]:
    """Affine u8 quantization: scale=(max-min)/255, zero_point=round(-min/scale).

    A constant tensor is encoded exactly as scale=value, codes=1. Rounding
    error is at most scale/2 per element (clipping at the range edges
    included).
    """
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("cannot quantize non-finite values")
    a = arr.astype(np.float64)
    mn, mx = float(a.min()), float(a.max())
    if mn == mx:
        return mn, 0, np.ones(arr.shape, dtype=np.uint8)
    scale = (mx - mn) / 255.0
    zero_point = int(np.rint(-mn / scale))
    codes = np.clip(np.rint(a / scale) + zero_point, 0, 255).astype(np.uint8)
    return scale, zero_point, codes


def dequantize_array(scale: float, zero_point: int, codes: np.ndarray) -> np.ndarray:
    return ((codes.astype(np.float64) - zero_point) * scale).astype(np.float32)


def quantize(params: ParamSet, bits: int = 8, names=None) -> QuantizedParams:
    if bits != 8:
        raise ValueError("only 8-bit quantization is supported")
    names = params.names if names is None else sorted(names)
    scales, zps, codes, tr = {}, {}, {}, {}
    for name in names:
        s, z, c = quantize_array(params[name])
        scales[name], zps[name], codes[name] = s, z, c
        tr[name] = params.is_trainable(name)
    return QuantizedParams(scales=scales, zero_points=zps, codes=codes, trainable=tr)


def dequantize(q: QuantizedParams) -> ParamSet:
    entries = {
        name: dequantize_array(q.scales[name], q.zero_points[name], q.codes[name])
        for name in q.codes
    }
    return ParamSet(entries, dict(q.trainable))


def serialize_quantized(q: QuantizedParams) -> bytes:
    buf = io.BytesIO()
    buf.write(QUANT_MAGIC)
    buf.write(struct.pack("<I", len(q.codes)))
    for name in sorted(q.codes):
        nb = name.encode("utf-8")
        codes = q.codes[name]
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", 1 if q.trainable[name] else 0))
        buf.write(struct.pack("<I", codes.ndim))
        for dim in codes.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(struct.pack("<d", q.scales[name]))
        buf.write(struct.pack("<i", q.zero_points[name]))
        buf.write(codes.tobytes())
    return buf.getvalue()


def deserialize_quantized(data: bytes) -> QuantizedParams:
    if data[:4] != QUANT_MAGIC:
        raise ValueError("not a QTP1 payload")
    off = 4
    (n_entries,) = struct.unpack_from("<I", data, off)
    off += 4
    scales, zps, codes, tr = {}, {}, {}, {}
    for _ in range(n_entries):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        flag = data[off]
        off += 1
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", data, off) if rank else ()
        off += 4 * rank
        (scale,) = struct.unpack_from("<d", data, off)
        off += 8
        (zp,) = struct.unpack_from("<i", data, off)
        off += 4
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(data, dtype=np.uint8, count=count, offset=off).reshape(shape)
        off += count
        scales[name], zps[name], codes[name], tr[name] = scale, zp, arr.copy(), bool(flag)
    return QuantizedParams(scales=scales, zero_points=zps, codes=codes, trainable=tr)


def _quantize_diff_payload(diff: CheckpointDiff) -> bytes:
    buf = io.BytesIO()
    buf.write(QUANT_DIFF_MAGIC)
    buf.write(struct.pack("<Q", diff.base_hash))
    buf.write(struct.pack("<f", diff.tau))
    buf.write(struct.pack("<I", len(diff.changed)))
    for name in sorted(diff.changed):
        idx, values = diff.changed[name]
        scale, zp, codes = quantize_array(values)
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<dI", scale, idx.size))
        buf.write(struct.pack("<i", zp))
        buf.write(np.ascontiguousarray(idx, dtype="<u4").tobytes())
        buf.write(codes.tobytes())
    return buf.getvalue()


def _dequantize_diff_payload(data: bytes) -> CheckpointDiff:
    if data[:4] != QUANT_DIFF_MAGIC:
        raise ValueError("not a QTD1 payload")
    off = 4
    (base_hash,) = struct.unpack_from("<Q", data, off)
    off += 8
    (tau,) = struct.unpack_from("<f", data, off)
    off += 4
    (n_records,) = struct.unpack_from("<I", data, off)
    off += 4
    changed = {}
    for _ in range(n_records):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        scale, count = struct.unpack_from("<dI", data, off)
        off += 12
        (zp,) = struct.unpack_from("<i", data, off)
        off += 4
        idx = np.frombuffer(data, dtype="<u4", count=count, offset=off).astype(np.uint32)
        off += 4 * count
        codes = np.frombuffer(data, dtype=np.uint8, count=count, offset=off)
        off += count
        changed[name] = (idx, dequantize_array(scale, zp, codes))
    return CheckpointDiff(base_hash=base_hash, tau=tau, changed=changed, dense_new={})


# ---------------------------------------------------------------------------
# Rounds

@dataclass(frozen=True)
class RoundConfig:
    num_clients: int = 4
    local_steps: int = 20
    lr: float = 0.5
    transport_mode: str = "full"
    quant_bits: int | None = None
    rounds: int = 5
    eval_every: int = 1

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        if self.transport_mode not in TRANSPORT_MODES:
            raise ValueError(f"transport_mode must be one of {TRANSPORT_MODES}")
        if self.quant_bits not in (None, 8):
            raise ValueError("quant_bits must be none or 8")

    def to_dict(self) -> dict:
        return {
            "num_clients": self.num_clients,
            "local_steps": self.local_steps,
            "lr": self.lr,
            "transport_mode": self.transport_mode,
            "quant_bits": self.quant_bits,
            "rounds": self.rounds,
            "eval_every": self.eval_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundConfig":
        d = dict(d)
        if d.get("quant_bits") in ("none", "null", ""):
            d["quant_bits"] = None
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    @classmethod
    def from_json(cls, path: str | Path) -> "RoundConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class TransportRecord:
    """Byte-exact per-client ledger for one round."""

    round: int
    mode: str
    uplink_bytes: dict[int, int] = field(default_factory=dict)
    downlink_bytes: dict[int, int] = field(default_factory=dict)

    @property
    def total_uplink(self) -> int:
        return sum(self.uplink_bytes.values())

    @property
    def total_downlink(self) -> int:
        return sum(self.downlink_bytes.values())


def _client_payload(
    global_params: ParamSet,
    theta_k: ParamSet,
    config: ModelConfig,
    mode: str,
    quant_bits: int | None,
    round_index: int,
    tau: float,
) -> bytes:
    if mode == "full":
        if quant_bits:
            return serialize_quantized(quantize(theta_k, quant_bits))
        return serialize_model(theta_k, config)
    if mode == "adapters-only":
        names = [n for n in theta_k.names if theta_k.is_trainable(n)]
        if quant_bits:
            return serialize_quantized(quantize(theta_k, quant_bits, names=names))
        return serialize_entries(theta_k, names)
    if mode == "diff":
        base = checkpoint_save(global_params, round_index)
        new = checkpoint_save(theta_k, round_index)
        diff = checkpoint_diff(base, new, tau)
        if quant_bits:
            return _quantize_diff_payload(diff)
        return serialize_diff(diff)
    raise ValueError(f"unknown transport mode {mode!r}")


def _reconstruct_payload(
    payload: bytes,
    global_params: ParamSet,
    config: ModelConfig,
    mode: str,
    quant_bits: int | None,
    round_index: int,
) -> ParamSet:
    if mode == "full":
        if quant_bits:
            return dequantize(deserialize_quantized(payload))
        return deserialize_model(payload)[0]
    if mode == "adapters-only":
        if quant_bits:
            sub = dequantize(deserialize_quantized(payload))
            updates = {name: sub[name] for name in sub.names}
        else:
            entries, _, _ = deserialize_entries(payload)
            updates = entries
        return global_params.replace(updates)
    if mode == "diff":
        diff = (_dequantize_diff_payload(payload) if quant_bits
                else deserialize_diff(payload))
        base = checkpoint_save(global_params, round_index)
        return checkpoint_apply(base, diff)
    raise ValueError(f"unknown transport mode {mode!r}")


def run_round(
    global_params: ParamSet,
    config: ModelConfig,
    clients: list[ClientState],
    round_cfg: RoundConfig,
    round_index: int = 1,
    tau: float = 0.0,
) -> tuple[ParamSet, TransportRecord, dict[int, ParamSet]]:
    """One federated round; returns the new global, the byte ledger, and the
    reconstructed per-client models the server averaged."""
    if not clients:
        raise EmptyListError("run_round needs at least one client")
    ordered = sorted(clients, key=lambda c: c.client_id)
    record = TransportRecord(round=round_index, mode=round_cfg.transport_mode)
    downlink = serialize_model(global_params, config)
    reconstructed: dict[int, ParamSet] = {}
    for client in ordered:
        record.downlink_bytes[client.client_id] = len(downlink)
        theta_k = client_update(global_params, config, client, round_cfg.lr, round_cfg.local_steps)
        payload = _client_payload(
            global_params, theta_k, config, round_cfg.transport_mode,
            round_cfg.quant_bits, round_index, tau)
        record.uplink_bytes[client.client_id] = len(payload)
        reconstructed[client.client_id] = _reconstruct_payload(
            payload, global_params, config, round_cfg.transport_mode,
            round_cfg.quant_bits, round_index)
    new_global = fedavg([reconstructed[c.client_id] for c in ordered])
    return new_global, record, reconstructed


# ---------------------------------------------------------------------------
# Training runs and history

CSV_HEADER = ["round", "client_id", "loss", "rouge1", "rouge2", "rougeL", "bleu4",
              "uplink_bytes", "downlink_bytes"]


@dataclass
class HistoryRow:
    round: int
    client_id: str
    loss: float
    rouge1: float
    rouge2: float
    rougeL: float
    bleu4: float
    uplink_bytes: int
    downlink_bytes: int


@dataclass
class RunHistory:
    rows: list[HistoryRow] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow([
                r.round, r.client_id, repr(r.loss), repr(r.rouge1), repr(r.rouge2),
                repr(r.rougeL), repr(r.bleu4), r.uplink_bytes, r.downlink_bytes,
            ])
        return out.getvalue()

    def save_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "RunHistory":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected history header: {header}")
        rows = []
        for rec in reader:
            rows.append(HistoryRow(
                round=int(rec[0]), client_id=rec[1], loss=float(rec[2]),
                rouge1=float(rec[3]), rouge2=float(rec[4]), rougeL=float(rec[5]),
                bleu4=float(rec[6]), uplink_bytes=int(rec[7]), downlink_bytes=int(rec[8]),
            ))
        return cls(rows=rows)

    def global_rows(self) -> list[HistoryRow]:
        return [r for r in self.rows if r.client_id == "global"]


def make_eval_set(
    docs: list[str],
    config: ModelConfig,
    n_pairs: int = 12,
    prompt_len: int = 24,
    ref_len: int = 48,
    seed: int = 0,
) -> tuple[TrainBatch, list[tuple[str, str]]]:
    """Deterministic eval material: a loss batch and (prompt, reference) pairs."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(docs))
    chosen = [docs[i] for i in order[:max(1, min(n_pairs, len(docs)))]]
    windows = []
    pairs = []
    for text in chosen:
        windows.extend(document_windows(text, config.context_len)[:1])
        ids = tokenize(text)
        prompt = detokenize(ids[:prompt_len])
        reference = detokenize(ids[prompt_len:prompt_len + ref_len])
        if prompt and reference:
            pairs.append((prompt, reference))
    batch = TrainBatch(
        inputs=np.stack([w[0] for w in windows]),
        targets=np.stack([w[1] for w in windows]),
        loss_mask=np.stack([w[2] for w in windows]),
    )
    return batch, pairs


def _eval_row(params, config, eval_batch, eval_pairs, round_index, client_id,
              uplink, downlink, max_new) -> HistoryRow:
    eval_loss = loss(forward(params, config, eval_batch.inputs), eval_batch)
    report = evaluate_model(params, config, eval_pairs, max_new=max_new)
    return HistoryRow(
        round=round_index, client_id=client_id, loss=eval_loss,
        rouge1=report.rouge1.f1, rouge2=report.rouge2.f1,
        rougeL=report.rougeL.f1, bleu4=report.bleu4.score,
        uplink_bytes=uplink, downlink_bytes=downlink,
    )


def run_training(
    round_cfg: RoundConfig,
    config: ModelConfig,
    shards: list[list[str]],
    base_params: ParamSet,
    eval_batch: TrainBatch | None = None,
    eval_pairs: list[tuple[str, str]] | None = None,
    max_new: int = 48,
) -> tuple[ParamSet, RunHistory]:
    """Seeded multi-round run; history gets one evaluation block per eval point."""
    if len(shards) != round_cfg.num_clients:
        raise ValueError("need exactly one shard per client")
    if eval_batch is None or eval_pairs is None:
        all_docs = [d for shard in shards for d in shard]
        if not all_docs:
            raise EmptyDatasetError("no documents to train on")
        eval_batch, eval_pairs = make_eval_set(all_docs, config, seed=config.seed)
    clients = [
        ClientState(client_id=k, docs=shards[k], seed=int(np.random.SeedSequence(
            [config.seed, k]).generate_state(1)[0]))
        for k in range(round_cfg.num_clients)
    ]
    history = RunHistory()
    global_params = base_params
    history.rows.append(_eval_row(
        global_params, config, eval_batch, eval_pairs, 0, "global", 0, 0, max_new))
    for r in range(1, round_cfg.rounds + 1):
        global_params, record, client_models = run_round(
            global_params, config, clients, round_cfg, round_index=r)
        if r % round_cfg.eval_every == 0 or r == round_cfg.rounds:
            history.rows.append(_eval_row(
                global_params, config, eval_batch, eval_pairs, r, "global",
                record.total_uplink, record.total_downlink, max_new))
            for client in sorted(clients, key=lambda c: c.client_id):
                cid = client.client_id
                history.rows.append(_eval_row(
                    client_models[cid], config, eval_batch, eval_pairs, r, str(cid),
                    record.uplink_bytes[cid], record.downlink_bytes[cid], max_new))
    return global_params, history
