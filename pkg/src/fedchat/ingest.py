"""Document ingestion: blank-line block parsing with byte-span provenance,
TF-IDF keyword enrichment, role-prompted question/answer generation, and a
JSON-lines corpus store.

Corpus layout on disk (one directory):
  docs.jsonl    header {"format":"fedchat-docs","version":1}, one doc per line
  blocks.jsonl  header {"format":"fedchat-corpus","version":1}, one block per line
  qa.jsonl      header {"format":"fedchat-qa","version":1}, one pair per line
  blocks.idx.json  sidecar mapping block_id -> line number in blocks.jsonl
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import numpy as np
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .errors import (
    EmptyBlockError,
    EmptyPromptSetError,
    FormatVersionMismatchError,
    InvalidEncodingError,
)
from .tinylm.model import ModelConfig, ParamSet, TrainBatch, generate, loss_and_grad, sgd_step
from .tinylm.tokenizer import BOS, EOS, PAD, tokenize

CORPUS_FORMAT = {"format": "fedchat-corpus", "version": 1}
DOCS_FORMAT = {"format": "fedchat-docs", "version": 1}
QA_FORMAT = {"format": "fedchat-qa", "version": 1}

_WORD_RE = re.compile(r"[a-z0-9]+")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+|\n+")


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    source_uri: str
    fetched_at: str
    text: str


@dataclass(frozen=True)
class Block:
    block_id: str
    doc_id: str
    seq: int
    header: str
    text: str
    byte_span: tuple[int, int]
    metadata: dict


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    block_id: str


@dataclass(frozen=True)
class RolePromptSet:
    """Named role with exemplar input/output pairs used for prompting and
    fine-tuning."""

    role: str
    pairs: tuple[tuple[str, str], ...]

    @property
    def m(self) -> int:
        return len(self.pairs)


QUESTION_WRITER_ROLE = RolePromptSet(
    role="You write one short question about the given text.",
    pairs=(
        ("Text: Solar panels convert sunlight into electricity.",
         "What do solar panels convert sunlight into?"),
        ("Text: The river floods every spring when snow melts.",
         "When does the river flood?"),
        ("Text: Hashtags group posts about the same topic together.",
         "What do hashtags group together?"),
    ),
)


def make_document(text: str | bytes, source_uri: str, fetched_at: str | None = None) -> RawDocument:
    """Content-addressed document; the id is deterministic from the bytes."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidEncodingError(f"{source_uri}: {exc}") from exc
    doc_id = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    return RawDocument(
        doc_id=doc_id,
        source_uri=source_uri,
        fetched_at=fetched_at or utc_now_iso(),
        text=text,
    )


def _block_id(doc_id: str, seq: int, text: str) -> str:
    payload = f"{doc_id}:{seq}:{text}".encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def _block_header(text: str) -> str:
    first_line = text.split("\n", 1)[0].strip()
    header = ""
    if first_line.startswith("#"):
        header = first_line.lstrip("#").strip()
    elif len(first_line) <= 80 and not first_line.endswith("."):
        header = first_line
    if not header:
        header = " ".join(text.split()[:8])
    return header


def parse_blocks(doc: RawDocument, created_at: str | None = None) -> list[Block]:
    """Blank-line separated paragraphs, each with an exact byte span.

    ``doc.text`` encoded as UTF-8 sliced by a block's span reproduces the
    block text bytes exactly; spans jointly cover all non-delimiter bytes.
    """
    data = doc.text.encode("utf-8")
    created = created_at or utc_now_iso()
    blocks: list[Block] = []
    offset = 0
    span_start = None
    span_end = None
    for line in data.split(b"\n"):
        line_end = offset + len(line)
        if line.strip():
            if span_start is None:
                span_start = offset
            span_end = line_end
        else:
            if span_start is not None:
                blocks.append(_make_block(doc, len(blocks), data, span_start, span_end, created))
                span_start = None
        offset = line_end + 1
    if span_start is not None:
        blocks.append(_make_block(doc, len(blocks), data, span_start, span_end, created))
    return blocks


def _make_block(doc, seq, data, start, end, created) -> Block:
    text = data[start:end].decode("utf-8")
    return Block(
        block_id=_block_id(doc.doc_id, seq, text),
        doc_id=doc.doc_id,
        seq=seq,
        header=_block_header(text),
        text=text,
        byte_span=(start, end),
        metadata={"keywords": [], "char_count": len(text), "created_at": created},
    )


# ---------------------------------------------------------------------------
# Keyword extraction

def terms_of(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass
class CorpusStats:
    n_blocks: int
    df: Counter

    @classmethod
    def from_blocks(cls, blocks: list[Block]) -> "CorpusStats":
        df: Counter = Counter()
        for block in blocks:
            df.update(set(terms_of(block.text)))
        return cls(n_blocks=len(blocks), df=df)


def extract_keywords(text: str, stats: CorpusStats, k: int = 5) -> list[str]:
    """Top-k terms by TF-IDF: (1+ln tf) * (ln((N+1)/(df+1)) + 1), ties broken
    lexicographically."""
    tf = Counter(terms_of(text))
    if not tf:
        return []
    n = stats.n_blocks
    scored = []
    for term, count in tf.items():
        idf = math.log((n + 1) / (stats.df.get(term, 0) + 1)) + 1.0
        scored.append(((1.0 + math.log(count)) * idf, term))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [term for _, term in scored[:k]]


def enrich_metadata(block: Block, stats: CorpusStats) -> Block:
    meta = dict(block.metadata)
    meta["keywords"] = extract_keywords(block.text, stats)
    meta["char_count"] = len(block.text)
    return replace(block, metadata=meta)


# ---------------------------------------------------------------------------
# Role-prompted generation and fine-tuning

def _tail_fit(text: str, budget_tokens: int) -> str:
    ids = tokenize(text)
    if len(ids) <= budget_tokens:
        return text
    return bytes(ids[-budget_tokens:]).decode("utf-8", errors="ignore")


def build_role_prompt(role: RolePromptSet, payload: str, cue: str) -> str:
    parts = [role.role]
    for x, y in role.pairs:
        parts.append(f"{x}\n{y}")
    parts.append(payload)
    return "\n".join(parts) + cue


def generate_qa(
    params: ParamSet,
    config: ModelConfig,
    block: Block,
    role: RolePromptSet = QUESTION_WRITER_ROLE,
    max_q: int = 3,
    gen_tokens: int = 32,
) -> list[QAPair]:
    """Role-prompted question generation with extractive answers.

    Questions are greedy-decoded lines (up to ``max_q``); a header-derived
    fallback question keeps the pipeline productive when the model emits no
    usable line. Answers are the block sentence with the highest keyword
    overlap, so they stay grounded in the block.
    """
    if not block.text.strip():
        raise EmptyBlockError(f"block {block.block_id} is empty")
    if max_q == 0:
        return []
    prompt = build_role_prompt(role, f"Text: {block.text}", "\nQ:")
    prompt = _tail_fit(prompt, config.context_len - 1 - gen_tokens)
    raw = generate(params, config, prompt, max_new=gen_tokens, mode="greedy")
    questions = []
    for line in raw.split("\n"):
        line = line.strip()
        if line and any(ch.isalnum() for ch in line):
            questions.append(line)
        if len(questions) >= max_q:
            break
    if not questions:
        questions = [f"What does this say about {block.header}?"]
    return [
        QAPair(question=q, answer=select_answer(block.text, q), block_id=block.block_id)
        for q in questions[:max_q]
    ]


def select_answer(block_text: str, question: str) -> str:
    """Block sentence with the largest word overlap with the question."""
    sentences = [s.strip() for s in _SENTENCE_RE.split(block_text) if s.strip()]
    if not sentences:
        return block_text.strip()
    q_words = set(terms_of(question))
    best_i, best_score = 0, -1
    for i, sentence in enumerate(sentences):
        score = len(q_words & set(terms_of(sentence)))
        if score > best_score:
            best_i, best_score = i, score
    return sentences[best_i]


def role_batch(role: RolePromptSet, config: ModelConfig) -> TrainBatch:
    """Serialize role pairs into one batch with loss masked to the outputs."""
    if role.m < 1:
        raise EmptyPromptSetError("role prompt set has no pairs")
    rows = []
    cap = config.context_len + 1
    for x, y in role.pairs:
        y_ids = tokenize(y) + [EOS]
        x_ids = [BOS] + tokenize(x) + [10]  # newline separates input from output
        if len(y_ids) > cap - 2:
            y_ids = y_ids[: cap - 2]
        if len(x_ids) + len(y_ids) > cap:
            x_ids = x_ids[: cap - len(y_ids)]
        full = x_ids + y_ids
        inputs = full[:-1]
        targets = full[1:]
        mask = [j + 1 >= len(x_ids) for j in range(len(inputs))]
        rows.append((inputs, targets, mask))
    width = max(len(r[0]) for r in rows)
    inputs = np.full((len(rows), width), PAD, dtype=np.int64)
    targets = np.full((len(rows), width), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, (inp, tgt, msk) in enumerate(rows):
        inputs[i, :len(inp)] = inp
        targets[i, :len(tgt)] = tgt
        mask[i, :len(msk)] = msk
    return TrainBatch(inputs, targets, mask)


def fine_tune_role(
    params: ParamSet,
    config: ModelConfig,
    role: RolePromptSet,
    lr: float,
    steps: int,
) -> ParamSet:
    """Gradient descent on the role pairs, loss restricted to output spans."""
    batch = role_batch(role, config)
    out = params
    for _ in range(steps):
        _, grads = loss_and_grad(out, config, batch)
        out = sgd_step(out, grads, lr)
    return out


# ---------------------------------------------------------------------------
# Corpus persistence

@dataclass
class Corpus:
    documents: list[RawDocument] = field(default_factory=list)
    blocks: list[Block] = field(default_factory=list)
    qa_pairs: list[QAPair] = field(default_factory=list)

    def block_by_id(self, block_id: str) -> Block | None:
        return self._block_index().get(block_id)

    def document_by_id(self, doc_id: str) -> RawDocument | None:
        return next((d for d in self.documents if d.doc_id == doc_id), None)

    def _block_index(self) -> dict[str, Block]:
        return {b.block_id: b for b in self.blocks}

    @property
    def doc_ids(self) -> set[str]:
        return {d.doc_id for d in self.documents}


def build_corpus(
    raw_docs: list[RawDocument],
    params: ParamSet | None = None,
    config: ModelConfig | None = None,
    max_q: int = 0,
    created_at: str | None = None,
) -> Corpus:
    """Parse, enrich and (optionally) QA-annotate a set of documents."""
    seen: set[str] = set()
    documents = []
    for doc in raw_docs:
        if doc.doc_id not in seen:
            seen.add(doc.doc_id)
            documents.append(doc)
    blocks: list[Block] = []
    for doc in documents:
        blocks.extend(parse_blocks(doc, created_at=created_at))
    stats = CorpusStats.from_blocks(blocks)
    blocks = [enrich_metadata(b, stats) for b in blocks]
    qa_pairs: list[QAPair] = []
    if max_q > 0 and params is not None and config is not None:
        for block in blocks:
            qa_pairs.extend(generate_qa(params, config, block, max_q=max_q))
    return Corpus(documents=documents, blocks=blocks, qa_pairs=qa_pairs)


def _write_jsonl(path: Path, header: dict, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path, expected: dict) -> list[dict]:
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise FormatVersionMismatchError(f"{path.name}: bad header line") from exc
        if header != expected:
            raise FormatVersionMismatchError(
                f"{path.name}: expected header {expected}, found {header}")
        return [json.loads(line) for line in fh if line.strip()]


def persist_corpus(corpus: Corpus, dir_path: str | Path) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    _write_jsonl(root / "docs.jsonl", DOCS_FORMAT, [
        {"doc_id": d.doc_id, "source_uri": d.source_uri,
         "fetched_at": d.fetched_at, "text": d.text}
        for d in corpus.documents
    ])
    _write_jsonl(root / "blocks.jsonl", CORPUS_FORMAT, [
        {"block_id": b.block_id, "doc_id": b.doc_id, "seq": b.seq,
         "header": b.header, "text": b.text, "byte_span": list(b.byte_span),
         "metadata": b.metadata}
        for b in corpus.blocks
    ])
    _write_jsonl(root / "qa.jsonl", QA_FORMAT, [
        {"question": q.question, "answer": q.answer, "block_id": q.block_id}
        for q in corpus.qa_pairs
    ])
    index = {b.block_id: i + 1 for i, b in enumerate(corpus.blocks)}
    (root / "blocks.idx.json").write_text(
        json.dumps(index, sort_keys=True), encoding="utf-8")


def load_corpus(dir_path: str | Path) -> Corpus:
    root = Path(dir_path)
    documents = [
        RawDocument(doc_id=r["doc_id"], source_uri=r["source_uri"],
                    fetched_at=r["fetched_at"], text=r["text"])
        for r in _read_jsonl(root / "docs.jsonl", DOCS_FORMAT)
    ]
    blocks = [
        Block(block_id=r["block_id"], doc_id=r["doc_id"], seq=r["seq"],
              header=r["header"], text=r["text"],
              byte_span=(r["byte_span"][0], r["byte_span"][1]),
              metadata=r["metadata"])
        for r in _read_jsonl(root / "blocks.jsonl", CORPUS_FORMAT)
    ]
    qa_pairs = [
        QAPair(question=r["question"], answer=r["answer"], block_id=r["block_id"])
        for r in _read_jsonl(root / "qa.jsonl", QA_FORMAT)
    ] if (root / "qa.jsonl").exists() else []
    return Corpus(documents=documents, blocks=blocks, qa_pairs=qa_pairs)


def read_text_dir(dir_path: str | Path, fetched_at: str | None = None) -> list[RawDocument]:
    """Load *.txt and *.md files (sorted by name) as raw documents."""
    root = Path(dir_path)
    docs = []
    for path in sorted(root.glob("*")):
        if path.suffix.lower() in (".txt", ".md") and path.is_file():
            docs.append(make_document(
                path.read_bytes(), path.resolve().as_uri(), fetched_at=fetched_at))
    return docs
