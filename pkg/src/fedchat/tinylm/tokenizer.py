"""Byte-level tokenizer: 256 byte values plus BOS/EOS/PAD specials."""

from __future__ import annotations

BOS = 256
EOS = 257
PAD = 258
VOCAB_SIZE = 259

SPECIAL_IDS = {"bos": BOS, "eos": EOS, "pad": PAD}


class ByteTokenizer:
    """Maps text to token ids by UTF-8 byte value.

    Ids 0..255 are raw byte values; 256/257/258 are BOS/EOS/PAD. The
    mapping is lossless: ``detokenize_bytes(tokenize(s)) == s`` for any
    byte string, with specials stripped on the way out.
    """

    vocab_size = VOCAB_SIZE
    special_ids = SPECIAL_IDS

    def tokenize(self, text: str | bytes, add_bos: bool = False, add_eos: bool = False) -> list[int]:
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        ids = list(data)
        if add_bos:
            ids.insert(0, BOS)
        if add_eos:
            ids.append(EOS)
        return ids

    def detokenize_bytes(self, ids) -> bytes:
        return bytes(int(i) for i in ids if 0 <= int(i) < 256)

    def detokenize(self, ids) -> str:
        return self.detokenize_bytes(ids).decode("utf-8", errors="replace")


TOKENIZER = ByteTokenizer()


def tokenize(text: str | bytes, add_bos: bool = False, add_eos: bool = False) -> list[int]:
    return TOKENIZER.tokenize(text, add_bos=add_bos, add_eos=add_eos)


def detokenize(ids) -> str:
    return TOKENIZER.detokenize(ids)


def detokenize_bytes(ids) -> bytes:
    return TOKENIZER.detokenize_bytes(ids)
