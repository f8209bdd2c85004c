"""HTTP service: ask / ingest / inspect endpoints over a corpus + index.

Requests read one immutable snapshot (corpus, index, version) per request;
ingestion is serialized behind a lock, builds a complete new snapshot, and
swaps it in atomically, so concurrent asks always see a consistent index
(old or new, never partial).
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import NoContextError
from .fedsim import RunHistory
from .ingest import Corpus, build_corpus, load_corpus, make_document, persist_corpus
from .retrieval import (
    EmbeddingIndex,
    answer_question,
    build_index,
    load_index,
    save_index,
)
from .peft import param_set_hash
from .tinylm.io import load_model

MAX_QUESTION_BYTES = 4096


@dataclass
class ContextFilter:
    name: str
    keywords: list[str]


@dataclass
class ServiceConfig:
    corpus_dir: str
    model_path: str
    index_path: str
    listen_addr: str = "127.0.0.1:8470"
    k_sources: int = 3
    metric: str = "cosine"
    context_filters: list[ContextFilter] = field(default_factory=list)
    ui_dir: str | None = None

    def __post_init__(self) -> None:
        if self.k_sources < 1:
            raise ValueError("k_sources must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceConfig":
        filters = [ContextFilter(name=f["name"], keywords=list(f["keywords"]))
                   for f in d.get("context_filters", [])]
        return cls(
            corpus_dir=d["corpus_dir"],
            model_path=d["model_path"],
            index_path=d["index_path"],
            listen_addr=d.get("listen_addr", "127.0.0.1:8470"),
            k_sources=int(d.get("k_sources", 3)),
            metric=d.get("metric", "cosine"),
            context_filters=filters,
            ui_dir=d.get("ui_dir"),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ServiceConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen_addr.rpartition(":")
        return host or "127.0.0.1", int(port)


@dataclass(frozen=True)
class Snapshot:
    corpus: Corpus
    index: EmbeddingIndex
    version: int


class ServiceState:
    """Owns the model and the swappable (corpus, index) snapshot."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.ready = False
        self.params = None
        self.model_config = None
        self.snapshot: Snapshot | None = None
        self._write_lock = threading.Lock()

    def load(self) -> None:
        """Load model + corpus; reuse the on-disk index when its fingerprint
        matches the model, otherwise build and save a fresh one."""
        config = self.config
        self.params, self.model_config = load_model(config.model_path)
        corpus = load_corpus(config.corpus_dir)
        index = None
        index_path = Path(config.index_path)
        if index_path.exists():
            candidate = load_index(index_path)
            if (candidate.embedder_fingerprint == param_set_hash(self.params)
                    and set(candidate.block_ids) == {b.block_id for b in corpus.blocks}):
                index = candidate
        if index is None:
            index = build_index(corpus, self.params, self.model_config, config.metric)
            save_index(index, index_path)
        self.snapshot = Snapshot(corpus=corpus, index=index, version=1)
        self.ready = True

    def ingest_documents(self, documents: list[dict]) -> dict:
        """Parse + dedupe + rebuild + persist + atomic swap. Single writer."""
        with self._write_lock:
            snap = self.snapshot
            existing = snap.corpus.doc_ids
            raw_docs = list(snap.corpus.documents)
            fresh = []
            for item in documents:
                doc = make_document(item["text"], item.get("source_uri", "inline:document"))
                if doc.doc_id not in existing and doc.doc_id not in {d.doc_id for d in fresh}:
                    fresh.append(doc)
            if not fresh:
                return {"blocks_added": 0, "index_version": snap.version}
            old_block_count = len(snap.corpus.blocks)
            corpus = build_corpus(raw_docs + fresh)
            index = build_index(corpus, self.params, self.model_config, self.config.metric)
            persist_corpus(corpus, self.config.corpus_dir)
            save_index(index, self.config.index_path)
            new_snap = Snapshot(corpus=corpus, index=index, version=snap.version + 1)
            self.snapshot = new_snap
            return {
                "blocks_added": len(corpus.blocks) - old_block_count,
                "index_version": new_snap.version,
            }


class AskRequest(BaseModel):
    question: str
    context: str | None = None
    k: int | None = None


class IngestDocument(BaseModel):
    source_uri: str = "inline:document"
    text: str


class IngestRequest(BaseModel):
    documents: list[IngestDocument]


def _block_payload(block) -> dict:
    return {
        "block_id": block.block_id,
        "doc_id": block.doc_id,
        "seq": block.seq,
        "header": block.header,
        "text": block.text,
        "byte_span": list(block.byte_span),
        "metadata": block.metadata,
    }


def create_app(config: ServiceConfig, defer_load: bool = True) -> FastAPI:
    app = FastAPI(title="fedchat", version="0.1.0")
    state = ServiceState(config)
    app.state.service = state
    if not defer_load:
        state.load()

    @app.exception_handler(RequestValidationError)
    async def invalid_payload(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": "invalid payload"})

    @app.get("/api/health")
    def health():
        if not state.ready:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {"status": "ok"}

    @app.get("/api/contexts")
    def contexts():
        return {"contexts": [
            {"name": f.name, "keywords": f.keywords} for f in config.context_filters
        ]}

    @app.post("/api/ask")
    def ask(body: AskRequest):
        if not state.ready:
            raise HTTPException(status_code=503, detail="index not ready")
        if not body.question.strip():
            raise HTTPException(status_code=400, detail="question is empty")
        if len(body.question.encode("utf-8")) > MAX_QUESTION_BYTES:
            raise HTTPException(status_code=400, detail="question too long")
        snap = state.snapshot
        index = snap.index
        if body.context is not None:
            filt = next((f for f in config.context_filters if f.name == body.context), None)
            if filt is None:
                raise HTTPException(status_code=404, detail=f"unknown context {body.context!r}")
            wanted = set(filt.keywords)
            allowed = [b.block_id for b in snap.corpus.blocks
                       if wanted & set(b.metadata.get("keywords", []))]
            index = index.subset(allowed)
        k = body.k or config.k_sources
        started = time.perf_counter()
        try:
            answer = answer_question(
                state.params, state.model_config, body.question, index, snap.corpus, k=k)
        except NoContextError:
            return {
                "status": "no_context",
                "answer": "",
                "expanded_question": body.question,
                "sources": [],
                "latency_ms": (time.perf_counter() - started) * 1000.0,
                "index_version": snap.version,
            }
        latency_ms = (time.perf_counter() - started) * 1000.0
        sources = []
        for result in answer.sources:
            block = snap.corpus.block_by_id(result.block_id)
            sources.append({
                "block_id": result.block_id,
                "header": block.header if block else "",
                "score": result.score,
            })
        return {
            "status": "ok",
            "answer": answer.text,
            "expanded_question": answer.expanded_question,
            "sources": sources,
            "latency_ms": latency_ms,
            "index_version": snap.version,
        }

    @app.post("/api/ingest")
    def ingest(body: IngestRequest):
        if not state.ready:
            raise HTTPException(status_code=503, detail="index not ready")
        if not body.documents:
            raise HTTPException(status_code=400, detail="no documents")
        try:
            return state.ingest_documents([d.model_dump() for d in body.documents])
        except OSError as exc:
            raise HTTPException(status_code=507, detail=f"storage failure: {exc}")

    @app.get("/api/blocks/{block_id}")
    def get_block(block_id: str):
        if not state.ready:
            raise HTTPException(status_code=503, detail="index not ready")
        block = state.snapshot.corpus.block_by_id(block_id)
        if block is None:
            raise HTTPException(status_code=404, detail=f"unknown block {block_id!r}")
        return _block_payload(block)

    @app.get("/api/metrics")
    def metrics():
        history_path = Path(config.corpus_dir) / "history.csv"
        if not history_path.exists():
            return {"rows": []}
        history = RunHistory.from_csv(history_path.read_text(encoding="utf-8"))
        return {"rows": [
            {
                "round": r.round, "client_id": r.client_id, "loss": r.loss,
                "rouge1": r.rouge1, "rouge2": r.rouge2, "rougeL": r.rougeL,
                "bleu4": r.bleu4, "uplink_bytes": r.uplink_bytes,
                "downlink_bytes": r.downlink_bytes,
            }
            for r in history.rows
        ]}

    if config.ui_dir and Path(config.ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service; readiness flips only after the index is loaded."""
    import uvicorn

    app = create_app(config, defer_load=True)
    state: ServiceState = app.state.service

    def _load():
        try:
            state.load()
        except Exception as exc:  # surfaced via /api/health staying 503
            state.load_error = exc
            raise

    threading.Thread(target=_load, daemon=True).start()
    host, port = config.host_port
    uvicorn.run(app, host=host, port=port, log_level="info")
