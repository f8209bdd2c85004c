"""Regenerate the frozen golden outputs under tests/golden/.

Golden files pin seeded end-to-end behavior (training history CSV, query
expansion, QA generation, eval metrics). Rerunning on the same platform
must reproduce them bit for bit; regenerate deliberately only when an
intentional behavior change invalidates them.
"""

from __future__ import annotations

import json
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = ROOT / "tests" / "golden"
FIXED = "2026-01-01T00:00:00Z"


def main() -> None:
    import sys
    sys.path.insert(0, str(ROOT / "src"))
    from fedchat.evalmetrics import evaluate_model
    from fedchat.fedsim import RoundConfig, make_eval_set, run_training, shard_documents
    from fedchat.ingest import build_corpus, generate_qa, read_text_dir
    from fedchat.peft import attach_lora
    from fedchat.retrieval import build_index, expand_query
    from fedchat.tinylm import ModelConfig, init_params

    GOLDEN.mkdir(parents=True, exist_ok=True)
    config = ModelConfig(seed=0)
    params = init_params(config)
    docs = read_text_dir(ROOT / "tests" / "fixtures" / "seed_corpus", fetched_at=FIXED)
    corpus = build_corpus(docs, created_at=FIXED)
    texts = [d.text for d in docs]

    # Small training run: quick regression golden.
    shards = shard_documents(texts, 2, seed=0)
    eval_batch, eval_pairs = make_eval_set(texts, config, seed=0)
    small_cfg = RoundConfig(num_clients=2, local_steps=3, lr=0.5,
                            transport_mode="diff", rounds=2)
    _, small_hist = run_training(small_cfg, config, shards, attach_lora(params, config, r=4),
                                 eval_batch=eval_batch, eval_pairs=eval_pairs)
    (GOLDEN / "history_small.csv").write_text(small_hist.to_csv(), encoding="utf-8")

    # Acceptance-scale run: 4 clients, LoRA r=4, 5 rounds x 20 local steps.
    shards4 = shard_documents(texts, 4, seed=0)
    accept_cfg = RoundConfig(num_clients=4, local_steps=20, lr=0.5,
                             transport_mode="full", rounds=5)
    _, accept_hist = run_training(accept_cfg, config, shards4, attach_lora(params, config, r=4),
                                  eval_batch=eval_batch, eval_pairs=eval_pairs)
    (GOLDEN / "history_acceptance.csv").write_text(accept_hist.to_csv(), encoding="utf-8")

    # Retrieval behaviors.
    index = build_index(corpus, params, config)
    question = "how are digest alerts batched for the cohort?"
    expanded = expand_query(params, config, question, index, corpus, h=3)
    block = corpus.blocks[2]
    qa = generate_qa(params, config, block, max_q=2)
    report = evaluate_model(params, config, eval_pairs[:4], max_new=24)
    payload = {
        "question": question,
        "expanded": expanded,
        "qa_block_id": block.block_id,
        "qa_pairs": [{"question": p.question, "answer": p.answer, "block_id": p.block_id}
                     for p in qa],
        "eval_metrics": {
            "rouge1_f1": report.rouge1.f1,
            "rouge2_f1": report.rouge2.f1,
            "rougeL_f1": report.rougeL.f1,
            "bleu4": report.bleu4.score,
        },
    }
    (GOLDEN / "retrieval.json").write_text(
        json.dumps(payload, indent=2, ensure_ascii=False), encoding="utf-8")
    print(f"goldens written to {GOLDEN}")


if __name__ == "__main__":
    main()
