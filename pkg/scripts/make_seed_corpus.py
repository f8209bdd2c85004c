"""Generate the deterministic seed corpus used by tests and demos.

Writes ~100 KB of synthetic encyclopedia-style articles about social
platform mechanics into tests/fixtures/seed_corpus/. Output is a pure
function of the seed; the files are committed, so rerunning this script
must be a no-op diff.
"""

from __future__ import annotations

import random
from pathlib import Path

OUT_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "seed_corpus"
SEED = 20260101

TOPICS = [
    ("photo feeds", ["filter", "gallery", "snapshot", "caption", "album", "lens"]),
    ("live streams", ["broadcast", "viewer", "latency", "overlay", "channel", "clip"]),
    ("short videos", ["loop", "remix", "soundtrack", "transition", "frame", "cut"]),
    ("group forums", ["thread", "moderator", "sticky", "rule", "archive", "poll"]),
    ("direct messages", ["inbox", "receipt", "draft", "emoji", "attachment", "mute"]),
    ("trend rankings", ["leaderboard", "spike", "velocity", "decay", "window", "signal"]),
    ("hashtag maps", ["tag", "cluster", "graph", "edge", "bridge", "island"]),
    ("creator funds", ["payout", "milestone", "tier", "bonus", "ledger", "invoice"]),
    ("privacy vaults", ["consent", "cipher", "audit", "retention", "shield", "scope"]),
    ("news digests", ["summary", "headline", "byline", "source", "edition", "brief"]),
    ("event boards", ["venue", "rsvp", "calendar", "reminder", "ticket", "lineup"]),
    ("profile badges", ["emblem", "streak", "quest", "rank", "crest", "vault"]),
    ("comment ladders", ["reply", "nesting", "collapse", "upvote", "flag", "quote"]),
    ("search lenses", ["query", "facet", "filterbar", "synonym", "boost", "recall"]),
    ("story reels", ["sticker", "countdown", "swipe", "mention", "layer", "fade"]),
    ("avatar studios", ["mesh", "texture", "pose", "wardrobe", "palette", "rig"]),
    ("poll towers", ["ballot", "option", "margin", "turnout", "quorum", "tally"]),
    ("audio rooms", ["stage", "speaker", "handraise", "echo", "caption", "lobby"]),
    ("link hubs", ["shortcut", "redirect", "preview", "card", "anchor", "badge"]),
    ("moderation queues", ["report", "verdict", "appeal", "policy", "strike", "review"]),
    ("ad auctions", ["bid", "budget", "impression", "conversion", "pacing", "slot"]),
    ("follower graphs", ["degree", "hub", "orbit", "churn", "cohort", "spread"]),
    ("meme forges", ["template", "caption", "overlay", "format", "riff", "stamp"]),
    ("digest alerts", ["ping", "batch", "threshold", "snooze", "digest", "pulse"]),
    ("archive shelves", ["snapshot", "export", "bundle", "restore", "label", "locker"]),
]

VERBS = ["ranks", "stores", "batches", "routes", "samples", "merges", "filters",
         "schedules", "replays", "compresses", "anchors", "mirrors", "throttles",
         "caches", "scores", "tracks", "splits", "labels", "syncs", "queues"]
NOUNS = ["sessions", "payloads", "updates", "drafts", "cohorts", "snapshots",
         "batches", "records", "streams", "counters", "segments", "buckets",
         "tokens", "digests", "replies", "mentions", "queues", "windows"]
ADJS = ["steady", "bursty", "sparse", "nightly", "regional", "weighted", "stale",
        "fresh", "pinned", "verified", "silent", "public", "private", "ranked"]
TAILS = [
    "so editors can review the outcome later",
    "which keeps the pipeline responsive during peaks",
    "before the nightly rollup job runs",
    "while older entries decay out of the window",
    "and the counters reset at midnight",
    "unless a moderator pauses the rollout",
    "so downstream dashboards stay accurate",
    "which reduces duplicate work across shards",
    "and every change lands in the audit trail",
    "so smaller accounts still get surfaced",
]


def sentence(rng: random.Random, topic_words: list[str]) -> str:
    subject = rng.choice(["The service", "Each worker", "A scheduler", "The platform",
                          "One registry", "The pipeline", "Every shard", "The engine"])
    verb = rng.choice(VERBS)
    adj = rng.choice(ADJS)
    noun = rng.choice(NOUNS)
    tw = rng.choice(topic_words)
    tail = rng.choice(TAILS)
    forms = [
        f"{subject} {verb} {adj} {noun} for the {tw} layer, {tail}.",
        f"{subject} {verb} the {tw} {noun} into {adj} groups, {tail}.",
        f"When a {tw} arrives, {subject.lower()} {verb} {adj} {noun} {tail}.",
        f"{subject} {verb} {noun} tagged by {tw}, keeping {adj} copies {tail}.",
    ]
    return rng.choice(forms)


def paragraph(rng: random.Random, topic_words: list[str]) -> str:
    return " ".join(sentence(rng, topic_words) for _ in range(rng.randint(4, 6)))


def article(rng: random.Random, title: str, words: list[str]) -> str:
    n_paras = rng.randint(7, 9)
    paras = [paragraph(rng, words) for _ in range(n_paras)]
    sections = []
    for i, para in enumerate(paras):
        if i == 0:
            sections.append(f"# {title.title()}\n{para}")
        elif rng.random() < 0.4:
            sections.append(f"## {title.title()} {rng.choice(words).title()}\n{para}")
        else:
            sections.append(para)
    return "\n\n".join(sections) + "\n"


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    total = 0
    for i, (title, words) in enumerate(TOPICS):
        text = article(rng, title, words)
        path = OUT_DIR / f"{i:02d}_{title.replace(' ', '_')}.txt"
        path.write_text(text, encoding="utf-8")
        total += len(text.encode("utf-8"))
    print(f"wrote {len(TOPICS)} documents, {total} bytes -> {OUT_DIR}")


if __name__ == "__main__":
    main()
