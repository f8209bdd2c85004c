"""Command-line entry points: ingest, train, eval, index, serve, ask."""

from __future__ import annotations

import argparse
import json
import os
import sys
import urllib.request
from pathlib import Path

from .errors import FedchatError, NoContextError
from .evalmetrics import evaluate_model, format_report_table
from .fedsim import RoundConfig, make_eval_set, run_training, shard_documents
from .ingest import build_corpus, load_corpus, make_document, persist_corpus, read_text_dir
from .peft import attach_lora, attach_prefix
from .retrieval import answer_question, build_index, load_index, save_index
from .service import ServiceConfig, create_app, serve
from .tinylm.io import load_model, save_model
from .tinylm.model import ModelConfig, init_params


def _read_url_list(path: str) -> list:
    docs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        uri = line.strip()
        if not uri or uri.startswith("#"):
            continue
        if uri.startswith("file://"):
            data = Path(uri[len("file://"):]).read_bytes()
        else:
            with urllib.request.urlopen(uri) as resp:
                data = resp.read()
        docs.append(make_document(data, uri))
    return docs


def cmd_ingest(args) -> int:
    docs = []
    if args.source_dir:
        docs.extend(read_text_dir(args.source_dir))
    if args.url_list:
        docs.extend(_read_url_list(args.url_list))
    if not docs:
        print("no input documents found", file=sys.stderr)
        return 1
    params = config = None
    if args.model and args.max_q > 0:
        params, config = load_model(args.model)
    corpus = build_corpus(docs, params=params, config=config, max_q=args.max_q)
    persist_corpus(corpus, args.corpus)
    print(f"ingested {len(corpus.documents)} documents -> {len(corpus.blocks)} blocks "
          f"({len(corpus.qa_pairs)} QA pairs) in {args.corpus}")
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    docs = [d.text for d in corpus.documents]
    if not docs:
        print("corpus has no documents", file=sys.stderr)
        return 1
    model_config = ModelConfig(seed=args.seed)
    base = init_params(model_config)
    if args.mode == "lora":
        base = attach_lora(base, model_config, r=args.rank)
    elif args.mode == "prefix":
        base = attach_prefix(base, model_config, prefix_len=args.prefix_len)
    transport = {"adapters": "adapters-only"}.get(args.transport, args.transport)
    if args.config:
        round_cfg = RoundConfig.from_json(args.config)
    else:
        round_cfg = RoundConfig(
            num_clients=args.clients,
            local_steps=args.steps,
            lr=args.lr,
            transport_mode=transport,
            quant_bits=8 if args.quant8 else None,
            rounds=args.rounds,
            eval_every=args.eval_every,
        )
    shards = shard_documents(docs, round_cfg.num_clients, seed=args.seed)
    eval_batch, eval_pairs = make_eval_set(docs, model_config, seed=args.seed)
    global_params, history = run_training(
        round_cfg, model_config, shards, base,
        eval_batch=eval_batch, eval_pairs=eval_pairs)
    save_model(args.out, global_params, model_config)
    history.save_csv(args.history)
    last = history.global_rows()[-1]
    print(f"trained {round_cfg.rounds} rounds x {round_cfg.num_clients} clients "
          f"({args.mode}/{round_cfg.transport_mode}); final eval loss {last.loss:.4f}")
    print(f"model -> {args.out}\nhistory -> {args.history}")
    return 0


def cmd_eval(args) -> int:
    params, config = load_model(args.model)
    corpus = load_corpus(args.corpus)
    docs = [d.text for d in corpus.documents]
    _, pairs = make_eval_set(docs, config, n_pairs=args.pairs, seed=config.seed)
    report = evaluate_model(params, config, pairs)
    print(format_report_table({"model": report}))
    return 0


def cmd_index(args) -> int:
    params, config = load_model(args.model)
    corpus = load_corpus(args.corpus)
    index = build_index(corpus, params, config, metric=args.metric)
    save_index(index, args.out)
    print(f"indexed {len(index)} blocks (d={index.dim}, {args.metric}) -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    config_path = os.environ.get("FEDCHAT_CONFIG", args.config)
    if not config_path:
        print("serve needs --config or FEDCHAT_CONFIG", file=sys.stderr)
        return 1
    config = ServiceConfig.from_json(config_path)
    serve(config)
    return 0


def cmd_ask(args) -> int:
    params, config = load_model(args.model)
    corpus = load_corpus(args.corpus)
    if args.index and Path(args.index).exists():
        index = load_index(args.index)
    else:
        index = build_index(corpus, params, config)
    try:
        answer = answer_question(params, config, args.question, index, corpus, k=args.k)
    except NoContextError:
        print("no relevant context found")
        return 0
    print(f"answer: {answer.text}")
    print(f"expanded question: {answer.expanded_question}")
    print("sources:")
    for src in answer.sources:
        block = corpus.block_by_id(src.block_id)
        header = block.header if block else ""
        print(f"  [{src.rank}] {src.block_id}  {header}  (score {src.score:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedchat")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a corpus from text files")
    p.add_argument("source_dir", nargs="?", help="directory of .txt/.md files")
    p.add_argument("--url-list", help="file of file:// or http(s):// URIs")
    p.add_argument("--corpus", required=True, help="output corpus directory")
    p.add_argument("--model", help="model used for QA generation")
    p.add_argument("--max-q", type=int, default=0, help="QA pairs per block")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="run federated training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default="model.tlm")
    p.add_argument("--history", default="history.csv")
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--mode", choices=["lora", "prefix", "full"], default="lora")
    p.add_argument("--transport", choices=["full", "diff", "adapters"], default="full")
    p.add_argument("--quant8", action="store_true")
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rank", type=int, default=4, help="LoRA rank")
    p.add_argument("--prefix-len", type=int, default=4)
    p.add_argument("--config", help="JSON round-config file (overrides flags)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on corpus-derived pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--pairs", type=int, default=12)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("index", help="build the embedding index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", help="JSON service config (or FEDCHAT_CONFIG)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("ask", help="one-shot question answering")
    p.add_argument("question")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--index", help="prebuilt index file")
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=cmd_ask)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FedchatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
