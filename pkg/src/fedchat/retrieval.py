"""Embedding index over blocks, exact nearest-neighbor search, exemplar-SVM
reranking, and role-prompted query expansion.

The index is a plain n x d matrix scanned in full for every query — exact
by construction at this corpus scale. Scores are cosine similarity
(descending) or euclidean distance (ascending); ties always break on
lexicographic block id, so rankings are reproducible bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyCandidatesError,
    EmptyCorpusError,
    NoContextError,
)
from .ingest import Corpus, CorpusStats, extract_keywords
from .peft import param_set_hash
from .tinylm.model import ModelConfig, ParamSet, embed_text, generate
from .tinylm.tokenizer import tokenize

INDEX_MAGIC = b"TVI1"
METRICS = ("cosine", "euclidean")

EXPAND_ROLE_LINE = "You rewrite a question with more detail, using the topics as hints."
ANSWER_ROLE_LINE = "You answer the question using only the notes."


@dataclass(frozen=True)
class EmbeddingIndex:
    block_ids: tuple[str, ...]
    vectors: np.ndarray
    metric: str
    embedder_fingerprint: int

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.block_ids):
            raise ValueError("vectors must be (n_blocks x d)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("index vectors must be finite")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.block_ids)

    def row_of(self, block_id: str) -> np.ndarray:
        return self.vectors[self.block_ids.index(block_id)]

    def subset(self, allowed_ids) -> "EmbeddingIndex":
        allowed = set(allowed_ids)
        keep = [i for i, bid in enumerate(self.block_ids) if bid in allowed]
        return EmbeddingIndex(
            block_ids=tuple(self.block_ids[i] for i in keep),
            vectors=self.vectors[keep] if keep else np.zeros((0, self.dim), np.float32),
            metric=self.metric,
            embedder_fingerprint=self.embedder_fingerprint,
        )


@dataclass(frozen=True)
class SearchResult:
    block_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class Query:
    raw_text: str
    expanded_text: str
    embedding: np.ndarray
    keywords: list[str]


@dataclass(frozen=True)
class Answer:
    text: str
    sources: list[SearchResult]
    expanded_question: str


def build_index(
    corpus: Corpus,
    params: ParamSet,
    config: ModelConfig,
    metric: str = "cosine",
) -> EmbeddingIndex:
    """One embedding row per block, fingerprinted by the model that made it."""
    if not corpus.blocks:
        raise EmptyCorpusError("cannot index an empty corpus")
    vectors = np.stack([
        embed_text(params, config, block.text) for block in corpus.blocks
    ]).astype(np.float32)
    return EmbeddingIndex(
        block_ids=tuple(b.block_id for b in corpus.blocks),
        vectors=vectors,
        metric=metric,
        embedder_fingerprint=param_set_hash(params),
    )


def _scores(index: EmbeddingIndex, q: np.ndarray) -> np.ndarray:
    v = index.vectors.astype(np.float64)
    q = q.astype(np.float64)
    if index.metric == "cosine":
        vn = np.linalg.norm(v, axis=1)
        qn = np.linalg.norm(q)
        denom = vn * qn
        sims = np.where(denom > 0, (v @ q) / np.where(denom > 0, denom, 1.0), 0.0)
        return sims
    diff = v - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def nn_search(index: EmbeddingIndex, q: np.ndarray, k: int) -> list[SearchResult]:
    """Exact top-k by full scan; k larger than the index returns everything."""
    q = np.asarray(q)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise DimensionMismatchError(
            f"query dim {q.shape} does not match index dim {index.dim}")
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = _scores(index, q)
    reverse = index.metric == "cosine"
    order = sorted(
        range(len(index)),
        key=lambda i: (-scores[i] if reverse else scores[i], index.block_ids[i]),
    )
    return [
        SearchResult(block_id=index.block_ids[i], score=float(scores[i]), rank=rank)
        for rank, i in enumerate(order[:k])
    ]


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


@dataclass(frozen=True)
class SvmModel:
    """Linear decision function trained with the query as the sole positive."""

    w: np.ndarray
    b: float
    c: float
    epochs: int

    def decision(self, v: np.ndarray) -> float:
        return float(self.w @ v + self.b)


def train_exemplar_svm(
    positive: np.ndarray,
    negatives: list[np.ndarray],
    c: float,
    epochs: int,
    seed: int,
    lr: float = 0.1,
) -> SvmModel:
    """Subgradient descent on L2-regularized hinge loss, fixed epoch count.

    The lone positive is weighted to balance the negative pool; the example
    order is reshuffled per epoch from a seeded stream.
    """
    xs = [positive] + list(negatives)
    ys = [1.0] + [-1.0] * len(negatives)
    weights = [float(max(len(negatives), 1))] + [1.0] * len(negatives)
    rng = np.random.default_rng(seed)
    w = np.zeros(positive.shape[0], dtype=np.float64)
    b = 0.0
    n = len(xs)
    for epoch in range(epochs):
        step = lr / (1.0 + 0.1 * epoch)
        for i in rng.permutation(n):
            x, y, wt = xs[i], ys[i], weights[i]
            if y * (w @ x + b) < 1.0:
                w = w + step * c * wt * y * x
                b = b + step * c * wt * y
            w = w * (1.0 - step / n)
    return SvmModel(w=w, b=b, c=c, epochs=epochs)


def svm_rerank(
    index: EmbeddingIndex,
    q: np.ndarray,
    candidate_ids: list[str],
    c: float = 10.0,
    epochs: int = 50,
    seed: int = 0,
    lr: float = 0.1,
) -> list[SearchResult]:
    """Exemplar SVM: the query is the only positive, candidates are negatives.

    Vectors are L2-normalized; candidates identical to the query are scored
    but not used as (contradictory) negatives. Returns candidates by
    descending decision value, ties on block id.
    """
    if not candidate_ids:
        raise EmptyCandidatesError("svm_rerank needs at least one candidate")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionMismatchError("query dim does not match index")
    qn = _l2_normalize(q)
    id_to_row = {bid: i for i, bid in enumerate(index.block_ids)}
    cand_vecs = {}
    for bid in candidate_ids:
        if bid not in id_to_row:
            raise KeyError(f"candidate {bid!r} not in index")
        cand_vecs[bid] = _l2_normalize(index.vectors[id_to_row[bid]].astype(np.float64))

    negatives = [v for v in cand_vecs.values() if not np.array_equal(v, qn)]
    model = train_exemplar_svm(qn, negatives, c=c, epochs=epochs, seed=seed, lr=lr)
    decisions = {bid: model.decision(v) for bid, v in cand_vecs.items()}
    ranked = sorted(candidate_ids, key=lambda bid: (-decisions[bid], bid))
    return [
        SearchResult(block_id=bid, score=decisions[bid], rank=rank)
        for rank, bid in enumerate(ranked)
    ]


def _tail_fit_prompt(text: str, config: ModelConfig, gen_tokens: int) -> str:
    budget = config.context_len - 1 - gen_tokens
    ids = tokenize(text)
    if len(ids) <= budget:
        return text
    return bytes(ids[-budget:]).decode("utf-8", errors="ignore")


def _clean_generation(text: str) -> str:
    cleaned = " ".join(text.split())
    return cleaned if any(ch.isalnum() for ch in cleaned) else ""


def expand_query(
    params: ParamSet,
    config: ModelConfig,
    question: str,
    index: EmbeddingIndex,
    corpus: Corpus,
    h: int = 3,
    gen_tokens: int = 32,
) -> str:
    """Role-prompted elaboration of the question seeded with retrieved headers.

    A first pass retrieves ``h`` block headers with the raw question; the
    output always contains the raw question verbatim and falls back to it
    alone when generation produces nothing usable.
    """
    headers: list[str] = []
    if h > 0 and len(index) > 0 and question.strip():
        raw_vec = embed_text(params, config, question)
        for result in nn_search(index, raw_vec, min(h, len(index))):
            block = corpus.block_by_id(result.block_id)
            if block is not None and block.header:
                headers.append(block.header)
    parts = [EXPAND_ROLE_LINE]
    if headers:
        parts.append("Topics: " + "; ".join(headers))
    parts.append(f"Question: {question}")
    prompt = _tail_fit_prompt("\n".join(parts) + "\nDetailed question:", config, gen_tokens)
    elaboration = _clean_generation(
        generate(params, config, prompt, max_new=gen_tokens, mode="greedy"))
    return f"{question} {elaboration}" if elaboration else question


def make_query(
    params: ParamSet,
    config: ModelConfig,
    question: str,
    index: EmbeddingIndex,
    corpus: Corpus,
    h: int = 3,
) -> Query:
    expanded = expand_query(params, config, question, index, corpus, h=h)
    stats = CorpusStats.from_blocks(corpus.blocks)
    return Query(
        raw_text=question,
        expanded_text=expanded,
        embedding=embed_text(params, config, expanded),
        keywords=extract_keywords(question, stats),
    )


def answer_question(
    params: ParamSet,
    config: ModelConfig,
    question: str,
    index: EmbeddingIndex,
    corpus: Corpus,
    k: int = 3,
    similarity_floor: float | None = 0.1,
    h: int = 3,
    gen_tokens: int = 48,
    svm_c: float = 10.0,
    svm_epochs: int = 50,
    seed: int = 0,
) -> Answer:
    """expand -> embed -> nn_search(3k) -> svm_rerank -> generate.

    The sources are exactly the k block ids handed to generation. Raises
    NoContextError instead of answering when nothing clears the similarity
    floor (cosine indexes only; pass None to disable).
    """
    if len(index) == 0 or not corpus.blocks:
        raise NoContextError("corpus is empty")
    query = make_query(params, config, question, index, corpus, h=h)
    candidates = nn_search(index, query.embedding, min(3 * k, len(index)))
    if not candidates:
        raise NoContextError("no candidate blocks")
    if index.metric == "cosine" and similarity_floor is not None:
        if max(r.score for r in candidates) < similarity_floor:
            raise NoContextError(
                f"best similarity {max(r.score for r in candidates):.3f} "
                f"below floor {similarity_floor}")
    ranked = svm_rerank(index, query.embedding, [r.block_id for r in candidates],
                        c=svm_c, epochs=svm_epochs, seed=seed)
    top = ranked[:k]
    sources = [SearchResult(block_id=r.block_id, score=r.score, rank=i)
               for i, r in enumerate(top)]
    notes = []
    for r in top:
        block = corpus.block_by_id(r.block_id)
        if block is not None:
            notes.append(block.text)
    prompt = _tail_fit_prompt(
        f"{ANSWER_ROLE_LINE}\nNotes: " + " ".join(notes) +
        f"\nQuestion: {question}\nAnswer:", config, gen_tokens)
    text = _clean_generation(
        generate(params, config, prompt, max_new=gen_tokens, mode="greedy"))
    if not text:
        # Grounded extractive fallback: lead sentence of the top block.
        top_block = corpus.block_by_id(top[0].block_id)
        text = top_block.text.split(".")[0].strip() if top_block else ""
    return Answer(text=text, sources=sources, expanded_question=query.expanded_text)


# ---------------------------------------------------------------------------
# Index persistence

def serialize_index(index: EmbeddingIndex) -> bytes:
    out = [INDEX_MAGIC]
    n, d = index.vectors.shape
    out.append(struct.pack("<II", n, d))
    out.append(struct.pack("<B", 0 if index.metric == "cosine" else 1))
    out.append(struct.pack("<Q", index.embedder_fingerprint))
    for bid in index.block_ids:
        raw = bid.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
    out.append(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())
    return b"".join(out)


def deserialize_index(data: bytes) -> EmbeddingIndex:
    if data[:4] != INDEX_MAGIC:
        raise ValueError("not a TVI1 index file")
    off = 4
    n, d = struct.unpack_from("<II", data, off)
    off += 8
    metric = "cosine" if data[off] == 0 else "euclidean"
    off += 1
    (fingerprint,) = struct.unpack_from("<Q", data, off)
    off += 8
    block_ids = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        block_ids.append(data[off:off + ln].decode("utf-8"))
        off += ln
    vectors = np.frombuffer(data, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += 4 * n * d
    if off != len(data):
        raise ValueError("trailing bytes in index file")
    return EmbeddingIndex(
        block_ids=tuple(block_ids),
        vectors=vectors.astype(np.float32),
        metric=metric,
        embedder_fingerprint=fingerprint,
    )


def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    Path(path).write_bytes(serialize_index(index))


def load_index(path: str | Path) -> EmbeddingIndex:
    return deserialize_index(Path(path).read_bytes())
