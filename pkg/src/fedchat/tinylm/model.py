"""Tiny decoder-only transformer trained with plain SGD.

Pure functions over an immutable :class:`ParamSet`. Parameters are stored
in float32; reductions (loss, means, aggregation) accumulate in float64.
The forward pass understands two kinds of adapter entries that the peft
module may add to a parameter set:

* ``<target>.lora_A`` / ``<target>.lora_B`` / ``<target>.lora_scale`` —
  low-rank additive factors applied to a 2-D weight as
  ``W + scale * (B @ A)^T``.
* ``layers.<i>.prefix_k`` / ``layers.<i>.prefix_v`` — per-layer prefix
  rows prepended to attention keys/values (never to output positions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np

from ..errors import (
    EmptyMaskError,
    EmptyTextError,
    IdOutOfRangeError,
    MisalignedParamsError,
    SequenceTooLongError,
)
from .tokenizer import BOS, EOS, VOCAB_SIZE, tokenize, detokenize

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes plus the init seed."""

    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    context_len: int = 128
    vocab_size: int = VOCAB_SIZE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.context_len < 2:
            raise ValueError("context_len must be >= 2")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "context_len": self.context_len,
            "vocab_size": self.vocab_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: int(d[k]) for k in (
            "n_layers", "d_model", "n_heads", "d_ff", "context_len", "vocab_size", "seed")})


class ParamSet:
    """Ordered named-tensor store with a per-entry trainable flag.

    Entry arrays are frozen (non-writeable); every operation returns a new
    ParamSet, so values can be shared freely across threads. Iteration is
    always in lexicographic name order.
    """

    __slots__ = ("_entries", "_trainable")

    def __init__(self, entries: dict[str, np.ndarray], trainable: dict[str, bool] | None = None):
        ents: dict[str, np.ndarray] = {}
        for name in sorted(entries):
            arr = np.array(entries[name], copy=True)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
            arr.flags.writeable = False
            ents[name] = arr
        if trainable is None:
            tr = {name: True for name in ents}
        else:
            if set(trainable) != set(ents):
                raise MisalignedParamsError("trainable mask names do not match entries")
            tr = {name: bool(trainable[name]) for name in sorted(trainable)}
        self._entries = ents
        self._trainable = tr

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __len__(self) -> int:
        return len(self._entries)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._entries.items())

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    @property
    def trainable_map(self) -> dict[str, bool]:
        return dict(self._trainable)

    def aligned_with(self, other: "ParamSet") -> bool:
        if self.names != other.names:
            return False
        return all(self._entries[n].shape == other._entries[n].shape for n in self._entries)

    def require_aligned(self, other: "ParamSet") -> None:
        if not self.aligned_with(other):
            raise MisalignedParamsError("parameter sets are not aligned")

    def replace(self, updates: dict[str, np.ndarray]) -> "ParamSet":
        """New ParamSet with some entries replaced; mask is preserved."""
        unknown = set(updates) - set(self._entries)
        if unknown:
            raise MisalignedParamsError(f"unknown entries: {sorted(unknown)}")
        ents = dict(self._entries)
        ents.update(updates)
        return ParamSet(ents, self._trainable)

    def with_entries(self, new_entries: dict[str, np.ndarray], trainable: dict[str, bool]) -> "ParamSet":
        """New ParamSet extended with extra entries and an updated mask."""
        ents = dict(self._entries)
        ents.update(new_entries)
        tr = dict(self._trainable)
        tr.update(trainable)
        return ParamSet(ents, tr)

    def with_trainable(self, trainable: dict[str, bool]) -> "ParamSet":
        return ParamSet(dict(self._entries), trainable)

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({n: a.astype(dtype) for n, a in self.items()}, self._trainable)

    @property
    def dtype(self):
        return next(iter(self._entries.values())).dtype

    def zeros_like(self) -> "ParamSet":
        return ParamSet({n: np.zeros_like(a) for n, a in self.items()}, self._trainable)


@dataclass
class TrainBatch:
    """Next-token prediction batch; masked positions are excluded from loss."""

    inputs: np.ndarray
    targets: np.ndarray
    loss_mask: np.ndarray

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if not (self.inputs.shape == self.targets.shape == self.loss_mask.shape):
            raise ValueError("inputs, targets and loss_mask must share a shape")
        if self.inputs.ndim != 2:
            raise ValueError("batch tensors must be 2-D (batch x time)")


def init_params(config: ModelConfig) -> ParamSet:
    """Seeded init: Gaussian(0, 0.02) weights, zero biases, unit layernorm gains."""
    rng = np.random.default_rng(config.seed)
    d, dff, v, ctx = config.d_model, config.d_ff, config.vocab_size, config.context_len

    def w(*shape):
        return (rng.standard_normal(shape, dtype=np.float32) * np.float32(0.02))

    entries: dict[str, np.ndarray] = {}
    entries["wte"] = w(v, d)
    entries["wpe"] = w(ctx, d)
    for i in range(config.n_layers):
        p = f"layers.{i}"
        entries[f"{p}.ln1.g"] = np.ones(d, dtype=np.float32)
        entries[f"{p}.ln1.b"] = np.zeros(d, dtype=np.float32)
        for m in ("wq", "wk", "wv", "wo"):
            entries[f"{p}.attn.{m}"] = w(d, d)
        # No key bias: softmax is invariant to row-constant score shifts,
        # so a key bias would be a permanently dead parameter.
        for m in ("bq", "bv", "bo"):
            entries[f"{p}.attn.{m}"] = np.zeros(d, dtype=np.float32)
        entries[f"{p}.ln2.g"] = np.ones(d, dtype=np.float32)
        entries[f"{p}.ln2.b"] = np.zeros(d, dtype=np.float32)
        entries[f"{p}.mlp.w1"] = w(d, dff)
        entries[f"{p}.mlp.b1"] = np.zeros(dff, dtype=np.float32)
        entries[f"{p}.mlp.w2"] = w(dff, d)
        entries[f"{p}.mlp.b2"] = np.zeros(d, dtype=np.float32)
    entries["lnf.g"] = np.ones(d, dtype=np.float32)
    entries["lnf.b"] = np.zeros(d, dtype=np.float32)
    entries["head.w"] = w(d, v)
    return ParamSet(entries)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_K * x * x * x)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_K * x * x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * x * x)


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=x.dtype))
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_backward(dy: np.ndarray, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean1 - xhat * mean2)
    return dx, dg, db


def _effective_weight(params: ParamSet, name: str) -> np.ndarray:
    """Base weight plus LoRA delta when adapter entries are present."""
    w = params[name]
    a_name = name + ".lora_A"
    if a_name in params:
        a = params[a_name]
        b = params[name + ".lora_B"]
        scale = params[name + ".lora_scale"][0]
        w = w + scale * (b @ a).T
    return w


def _validate_inputs(config: ModelConfig, inputs: np.ndarray) -> np.ndarray:
    ids = np.asarray(inputs)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.shape[1] > config.context_len:
        raise SequenceTooLongError(
            f"sequence length {ids.shape[1]} exceeds context_len {config.context_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise IdOutOfRangeError("token id outside vocabulary")
    return ids.astype(np.int64)


def _forward_cache(params: ParamSet, config: ModelConfig, inputs: np.ndarray):
    """Full forward pass; returns (logits, final hidden states, cache)."""
    ids = _validate_inputs(config, inputs)
    B, T = ids.shape
    H, hd = config.n_heads, config.head_dim
    dtype = params.dtype
    att_scale = np.asarray(1.0 / math.sqrt(hd), dtype=dtype)

    x = params["wte"][ids] + params["wpe"][:T]
    layer_caches = []
    for i in range(config.n_layers):
        p = f"layers.{i}"
        a, ln1_cache = _layernorm(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])

        wq = _effective_weight(params, f"{p}.attn.wq")
        wk = _effective_weight(params, f"{p}.attn.wk")
        wv = _effective_weight(params, f"{p}.attn.wv")
        wo = _effective_weight(params, f"{p}.attn.wo")
        q = a @ wq + params[f"{p}.attn.bq"]
        k = a @ wk
        v = a @ wv + params[f"{p}.attn.bv"]

        qh = q.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        kh = k.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        vh = v.reshape(B, T, H, hd).transpose(0, 2, 1, 3)

        pk_name = f"{p}.prefix_k"
        n_prefix = 0
        if pk_name in params:
            pk = params[pk_name]
            pv = params[f"{p}.prefix_v"]
            n_prefix = pk.shape[0]
            pkh = pk.reshape(n_prefix, H, hd).transpose(1, 0, 2)
            pvh = pv.reshape(n_prefix, H, hd).transpose(1, 0, 2)
            kh = np.concatenate([np.broadcast_to(pkh, (B, H, n_prefix, hd)), kh], axis=2)
            vh = np.concatenate([np.broadcast_to(pvh, (B, H, n_prefix, hd)), vh], axis=2)

        scores = (qh @ kh.swapaxes(-1, -2)) * att_scale
        mask = np.zeros((T, n_prefix + T), dtype=dtype)
        future = np.triu(np.ones((T, T), dtype=bool), k=1)
        mask[:, n_prefix:][future] = -np.inf
        scores = scores + mask
        probs = softmax(scores, axis=-1)

        oh = probs @ vh
        o = oh.transpose(0, 2, 1, 3).reshape(B, T, config.d_model)
        att = o @ wo + params[f"{p}.attn.bo"]
        x1 = x + att

        a2, ln2_cache = _layernorm(x1, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
        hpre = a2 @ params[f"{p}.mlp.w1"] + params[f"{p}.mlp.b1"]
        hact = _gelu(hpre)
        m = hact @ params[f"{p}.mlp.w2"] + params[f"{p}.mlp.b2"]
        x = x1 + m

        layer_caches.append({
            "a": a, "ln1": ln1_cache, "wq": wq, "wk": wk, "wv": wv, "wo": wo,
            "qh": qh, "kh": kh, "vh": vh, "probs": probs, "o": o,
            "n_prefix": n_prefix, "x1": x1, "a2": a2, "ln2": ln2_cache,
            "hpre": hpre, "hact": hact,
        })

    xf, lnf_cache = _layernorm(x, params["lnf.g"], params["lnf.b"])
    logits = xf @ params["head.w"]
    cache = {"ids": ids, "layers": layer_caches, "xf": xf, "lnf": lnf_cache,
             "B": B, "T": T, "att_scale": att_scale}
    return logits, xf, cache


def forward(params: ParamSet, config: ModelConfig, inputs) -> np.ndarray:
    """Logits (batch x T x vocab); causal in the input positions."""
    logits, _, _ = _forward_cache(params, config, inputs)
    return logits


def final_hidden(params: ParamSet, config: ModelConfig, inputs) -> np.ndarray:
    """Hidden states after the final layernorm (batch x T x d_model)."""
    _, xf, _ = _forward_cache(params, config, inputs)
    return xf


def loss(logits: np.ndarray, batch: TrainBatch) -> float:
    """Mean masked cross-entropy in nats, accumulated in float64."""
    mask = batch.loss_mask
    n = int(mask.sum())
    if n == 0:
        raise EmptyMaskError("no unmasked positions in batch")
    lg = logits.astype(np.float64)
    m = lg.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(lg - m).sum(axis=-1))
    tgt = np.take_along_axis(lg, batch.targets[..., None], axis=-1)[..., 0]
    nll = lse - tgt
    return float(nll[mask].sum() / n)


def _loss_grad_logits(logits: np.ndarray, batch: TrainBatch):
    """(loss value, dL/dlogits) with the gradient in the logits dtype."""
    value = loss(logits, batch)
    mask = batch.loss_mask
    n = mask.sum()
    probs = softmax(logits, axis=-1)
    dlogits = probs
    B, T, V = logits.shape
    flat = dlogits.reshape(-1, V)
    flat[np.arange(B * T), batch.targets.reshape(-1)] -= 1.0
    dlogits = dlogits * (mask[..., None].astype(logits.dtype) / logits.dtype.type(n))
    return value, dlogits


def _backward(params: ParamSet, config: ModelConfig, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    B, T = cache["B"], cache["T"]
    H, hd, d = config.n_heads, config.head_dim, config.d_model
    ids = cache["ids"]
    grads: dict[str, np.ndarray] = {name: np.zeros_like(arr) for name, arr in params.items()}

    def add_matmul_grads(name: str, inp: np.ndarray, dout: np.ndarray, w_eff: np.ndarray):
        """Route dL/dW_eff into the base weight and LoRA factors."""
        g = inp.reshape(-1, inp.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
        grads[name] = grads[name] + g
        a_name = name + ".lora_A"
        if a_name in params:
            a = params[a_name]
            b = params[name + ".lora_B"]
            scale = params[name + ".lora_scale"][0]
            gt = g.T  # dL/d(delta) in (d_out, d_in) layout
            grads[a_name] = grads[a_name] + scale * (b.T @ gt)
            grads[name + ".lora_B"] = grads[name + ".lora_B"] + scale * (gt @ a.T)
        return dout @ w_eff.T

    dxf = dlogits @ params["head.w"].T
    grads["head.w"] = grads["head.w"] + cache["xf"].reshape(-1, d).T @ dlogits.reshape(-1, dlogits.shape[-1])
    dx, dg, db = _layernorm_backward(dxf, cache["lnf"])
    grads["lnf.g"] = grads["lnf.g"] + dg
    grads["lnf.b"] = grads["lnf.b"] + db

    for i in reversed(range(config.n_layers)):
        p = f"layers.{i}"
        c = cache["layers"][i]
        n_prefix = c["n_prefix"]

        # MLP branch: x = x1 + m
        dm = dx
        grads[f"{p}.mlp.b2"] = grads[f"{p}.mlp.b2"] + dm.sum(axis=(0, 1))
        grads[f"{p}.mlp.w2"] = grads[f"{p}.mlp.w2"] + c["hact"].reshape(-1, config.d_ff).T @ dm.reshape(-1, d)
        dhact = dm @ params[f"{p}.mlp.w2"].T
        dhpre = dhact * _gelu_grad(c["hpre"])
        grads[f"{p}.mlp.b1"] = grads[f"{p}.mlp.b1"] + dhpre.sum(axis=(0, 1))
        grads[f"{p}.mlp.w1"] = grads[f"{p}.mlp.w1"] + c["a2"].reshape(-1, d).T @ dhpre.reshape(-1, config.d_ff)
        da2 = dhpre @ params[f"{p}.mlp.w1"].T
        dx1_ln, dg2, db2 = _layernorm_backward(da2, c["ln2"])
        grads[f"{p}.ln2.g"] = grads[f"{p}.ln2.g"] + dg2
        grads[f"{p}.ln2.b"] = grads[f"{p}.ln2.b"] + db2
        dx1 = dx + dx1_ln

        # Attention branch: x1 = x + att
        datt = dx1
        grads[f"{p}.attn.bo"] = grads[f"{p}.attn.bo"] + datt.sum(axis=(0, 1))
        do = add_matmul_grads(f"{p}.attn.wo", c["o"], datt, c["wo"])
        doh = do.reshape(B, T, H, hd).transpose(0, 2, 1, 3)

        probs, vh, kh, qh = c["probs"], c["vh"], c["kh"], c["qh"]
        dprobs = doh @ vh.swapaxes(-1, -2)
        dvh_full = probs.swapaxes(-1, -2) @ doh
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        dqh = (dscores @ kh) * cache["att_scale"]
        dkh_full = (dscores.swapaxes(-1, -2) @ qh) * cache["att_scale"]

        if n_prefix:
            dpk = dkh_full[:, :, :n_prefix].sum(axis=0).transpose(1, 0, 2).reshape(n_prefix, d)
            dpv = dvh_full[:, :, :n_prefix].sum(axis=0).transpose(1, 0, 2).reshape(n_prefix, d)
            grads[f"{p}.prefix_k"] = grads[f"{p}.prefix_k"] + dpk
            grads[f"{p}.prefix_v"] = grads[f"{p}.prefix_v"] + dpv
            dkh = dkh_full[:, :, n_prefix:]
            dvh = dvh_full[:, :, n_prefix:]
        else:
            dkh = dkh_full
            dvh = dvh_full

        dq = dqh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(B, T, d)

        grads[f"{p}.attn.bq"] = grads[f"{p}.attn.bq"] + dq.sum(axis=(0, 1))
        grads[f"{p}.attn.bv"] = grads[f"{p}.attn.bv"] + dv.sum(axis=(0, 1))
        da = add_matmul_grads(f"{p}.attn.wq", c["a"], dq, c["wq"])
        da = da + add_matmul_grads(f"{p}.attn.wk", c["a"], dk, c["wk"])
        da = da + add_matmul_grads(f"{p}.attn.wv", c["a"], dv, c["wv"])

        dx_ln, dg1, db1 = _layernorm_backward(da, c["ln1"])
        grads[f"{p}.ln1.g"] = grads[f"{p}.ln1.g"] + dg1
        grads[f"{p}.ln1.b"] = grads[f"{p}.ln1.b"] + db1
        dx = dx1 + dx_ln

    np.add.at(grads["wte"], ids, dx)
    grads["wpe"][:T] = grads["wpe"][:T] + dx.sum(axis=0)
    return grads


def loss_and_grad(params: ParamSet, config: ModelConfig, batch: TrainBatch) -> tuple[float, ParamSet]:
    """Loss plus its gradient; non-trainable entries come back as zeros."""
    logits, _, cache = _forward_cache(params, config, batch.inputs)
    value, dlogits = _loss_grad_logits(logits, batch)
    grads = _backward(params, config, cache, dlogits)
    for name in list(grads):
        if not params.is_trainable(name):
            grads[name] = np.zeros_like(grads[name])
    return value, ParamSet(grads, params.trainable_map)


def grad(params: ParamSet, config: ModelConfig, batch: TrainBatch) -> ParamSet:
    return loss_and_grad(params, config, batch)[1]


def sgd_step(params: ParamSet, grads: ParamSet, lr: float) -> ParamSet:
    """One gradient-descent step on the trainable entries; others are copied."""
    params.require_aligned(grads)
    out: dict[str, np.ndarray] = {}
    for name, arr in params.items():
        if params.is_trainable(name):
            out[name] = arr - lr * grads[name]
        else:
            out[name] = arr
    return ParamSet(out, params.trainable_map)


def generate(
    params: ParamSet,
    config: ModelConfig,
    prompt: str,
    max_new: int,
    mode: Literal["greedy", "top_k"] = "greedy",
    top_k: int = 20,
    seed: int = 0,
) -> str:
    """Autoregressive decoding; greedy is deterministic, top-k is seeded.

    Stops early when EOS is produced. The context window slides once the
    sequence exceeds ``context_len``.
    """
    ids = tokenize(prompt, add_bos=True)
    if len(ids) > config.context_len:
        raise SequenceTooLongError(
            f"prompt tokenizes to {len(ids)} ids, context_len is {config.context_len}")
    rng = np.random.default_rng(seed) if mode == "top_k" else None
    out_ids: list[int] = []
    window = list(ids)
    for _ in range(max_new):
        logits = forward(params, config, np.asarray(window[-config.context_len:]))[0, -1]
        if mode == "greedy":
            nxt = int(np.argmax(logits))
        else:
            k = min(top_k, logits.shape[0])
            top_idx = np.argpartition(logits, -k)[-k:]
            top_idx = top_idx[np.argsort(-logits[top_idx], kind="stable")]
            probs = softmax(logits[top_idx].astype(np.float64))
            nxt = int(rng.choice(top_idx, p=probs / probs.sum()))
        if nxt == EOS:
            break
        out_ids.append(nxt)
        window.append(nxt)
    return detokenize(out_ids)


def embed_text(params: ParamSet, config: ModelConfig, text: str) -> np.ndarray:
    """Mean of final-layer hidden states over positions (d_model vector).

    Input is truncated to the context window; the mean accumulates in
    float64 and is returned in the parameter dtype.
    """
    if not text:
        raise EmptyTextError("cannot embed empty text")
    ids = tokenize(text)[: config.context_len]
    hidden = final_hidden(params, config, np.asarray(ids))[0]
    return hidden.mean(axis=0, dtype=np.float64).astype(params.dtype)
