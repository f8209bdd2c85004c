import json
from pathlib import Path

import numpy as np
import pytest

from fedchat.evalmetrics import evaluate_model
from fedchat.fedsim import (
    CSV_HEADER,
    RoundConfig,
    RunHistory,
    make_eval_set,
    run_training,
    shard_documents,
)
from fedchat.ingest import generate_qa
from fedchat.peft import attach_lora
from fedchat.retrieval import build_index, expand_query

GOLDEN = Path("tests/golden")
FIXED = "2026-01-01T00:00:00Z"


@pytest.fixture(scope="module")
def seed_texts(seed_documents):
    return [d.text for d in seed_documents]


@pytest.fixture(scope="module")
def eval_material(seed_texts, config):
    return make_eval_set(seed_texts, config, seed=0)


class TestRunTraining:
    def test_zero_rounds_history_has_round0_only(self, params, config, seed_texts, eval_material):
        eval_batch, eval_pairs = eval_material
        cfg = RoundConfig(num_clients=2, local_steps=1, lr=0.1, rounds=0)
        shards = shard_documents(seed_texts, 2, seed=0)
        _, history = run_training(cfg, config, shards, params,
                                  eval_batch=eval_batch, eval_pairs=eval_pairs)
        assert [r.round for r in history.rows] == [0]
        assert history.rows[0].client_id == "global"

    def test_same_seed_identical_histories(self, params, config, seed_texts, eval_material):
        eval_batch, eval_pairs = eval_material
        cfg = RoundConfig(num_clients=2, local_steps=2, lr=0.4, rounds=1)
        shards = shard_documents(seed_texts, 2, seed=0)
        adapted = attach_lora(params, config, r=2)
        _, h1 = run_training(cfg, config, shards, adapted,
                             eval_batch=eval_batch, eval_pairs=eval_pairs)
        _, h2 = run_training(cfg, config, shards, adapted,
                             eval_batch=eval_batch, eval_pairs=eval_pairs)
        assert h1.to_csv() == h2.to_csv()

    def test_history_rows_per_eval_point(self, params, config, seed_texts, eval_material):
        eval_batch, eval_pairs = eval_material
        cfg = RoundConfig(num_clients=3, local_steps=1, lr=0.2, rounds=2, eval_every=1)
        shards = shard_documents(seed_texts, 3, seed=0)
        _, history = run_training(cfg, config, shards, params,
                                  eval_batch=eval_batch, eval_pairs=eval_pairs)
        # round 0: global only; rounds 1..2: global + 3 clients each.
        assert len(history.rows) == 1 + 2 * (1 + 3)
        for row in history.rows:
            if row.client_id != "global":
                assert row.uplink_bytes > 0

    def test_matches_small_golden_bitwise(self, params, config, seed_texts, eval_material):
        eval_batch, eval_pairs = eval_material
        shards = shard_documents(seed_texts, 2, seed=0)
        cfg = RoundConfig(num_clients=2, local_steps=3, lr=0.5,
                          transport_mode="diff", rounds=2)
        _, history = run_training(cfg, config, shards, attach_lora(params, config, r=4),
                                  eval_batch=eval_batch, eval_pairs=eval_pairs)
        assert history.to_csv() == (GOLDEN / "history_small.csv").read_text()


class TestHistoryCsv:
    def test_header_schema(self):
        assert CSV_HEADER == ["round", "client_id", "loss", "rouge1", "rouge2",
                              "rougeL", "bleu4", "uplink_bytes", "downlink_bytes"]

    def test_csv_roundtrip(self):
        text = (GOLDEN / "history_small.csv").read_text()
        history = RunHistory.from_csv(text)
        assert history.to_csv() == text

    def test_bad_header_rejected(self):
        with pytest.raises(ValueError):
            RunHistory.from_csv("round,who\n1,global\n")


@pytest.fixture(scope="module")
def golden():
    return json.loads((GOLDEN / "retrieval.json").read_text())

class TestRetrievalGoldens:
    def test_expand_query_matches_golden(self, params, config, seed_corpus, golden):
        index = build_index(seed_corpus, params, config)
        got = expand_query(params, config, golden["question"], index, seed_corpus, h=3)
        assert got == golden["expanded"]

    def test_generate_qa_matches_golden(self, params, config, seed_corpus, golden):
        block = next(b for b in seed_corpus.blocks if b.block_id == golden["qa_block_id"])
        pairs = generate_qa(params, config, block, max_q=2)
        got = [{"question": p.question, "answer": p.answer, "block_id": p.block_id}
               for p in pairs]
        assert got == golden["qa_pairs"]

    def test_eval_metrics_match_golden(self, params, config, golden, seed_texts):
        _, eval_pairs = make_eval_set(seed_texts, config, seed=0)
        report = evaluate_model(params, config, eval_pairs[:4], max_new=24)
        assert report.rouge1.f1 == golden["eval_metrics"]["rouge1_f1"]
        assert report.rouge2.f1 == golden["eval_metrics"]["rouge2_f1"]
        assert report.rougeL.f1 == golden["eval_metrics"]["rougeL_f1"]
        assert report.bleu4.score == golden["eval_metrics"]["bleu4"]
