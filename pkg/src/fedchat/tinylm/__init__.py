"""Byte-level tokenizer and a tiny trainable decoder-only transformer."""

from .tokenizer import (
    BOS,
    EOS,
    PAD,
    VOCAB_SIZE,
    ByteTokenizer,
    TOKENIZER,
    detokenize,
    detokenize_bytes,
    tokenize,
)
from .model import (
    ModelConfig,
    ParamSet,
    TrainBatch,
    embed_text,
    final_hidden,
    forward,
    generate,
    grad,
    init_params,
    loss,
    loss_and_grad,
    sgd_step,
    softmax,
)
from .io import (
    deserialize_model,
    load_model,
    save_model,
    serialize_entries,
    serialize_model,
)

__all__ = [
    "BOS", "EOS", "PAD", "VOCAB_SIZE", "ByteTokenizer", "TOKENIZER",
    "tokenize", "detokenize", "detokenize_bytes",
    "ModelConfig", "ParamSet", "TrainBatch",
    "init_params", "forward", "final_hidden", "loss", "loss_and_grad",
    "grad", "sgd_step", "generate", "embed_text", "softmax",
    "save_model", "load_model", "serialize_model", "deserialize_model",
    "serialize_entries",
]
