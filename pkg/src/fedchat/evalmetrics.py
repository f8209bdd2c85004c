"""ROUGE-1/2/L and BLEU-4 scoring for generated text.

Metric tokenization is lowercased whitespace splitting. All scores live in
[0, 1]; degenerate inputs (either side empty) score 0 rather than raising.
Reports can also be printed as a table with scores scaled by 100.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .tinylm.model import ModelConfig, ParamSet, generate


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float


_ZERO_ROUGE = RougeScore(0.0, 0.0, 0.0)


def metric_tokens(text: str) -> list[str]:
    return text.lower().split()


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: list[str], reference: list[str], n: int) -> RougeScore:
    """Clipped n-gram overlap; precision against the candidate, recall
    against the reference."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    n_cand = sum(cand.values())
    n_ref = sum(ref.values())
    if n_cand == 0 or n_ref == 0:
        return _ZERO_ROUGE
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    p = overlap / n_cand
    r = overlap / n_ref
    return RougeScore(p, r, _f1(p, r))


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> RougeScore:
    """Longest-common-subsequence precision/recall."""
    if not candidate or not reference:
        return _ZERO_ROUGE
    lcs = _lcs_len(candidate, reference)
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return RougeScore(p, r, _f1(p, r))


def bleu(candidate: list[str], references: list[list[str]], max_n: int = 4) -> BleuScore:
    """Modified n-gram precision BLEU with brevity penalty.

    Clipping is against the maximum reference count per n-gram. Orders with
    a zero raw precision (including an empty denominator) are smoothed to
    (m+1)/(d+1). BP = exp(1 - r/c) when c <= r else 1, with r the closest
    reference length (ties to the shorter).
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    c = len(candidate)
    refs = [r for r in references if r]
    if c == 0 or not refs:
        return BleuScore(0.0, tuple(0.0 for _ in range(max_n)), 0.0)

    precisions = []
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(candidate, n)
        denom = sum(cand_counts.values())
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, count in _ngrams(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        num = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        if num == 0:
            precisions.append((num + 1) / (denom + 1))
        else:
            precisions.append(num / denom)

    r_len = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c > r_len else math.exp(1.0 - r_len / c)
    score = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuScore(score, tuple(precisions), bp)


@dataclass(frozen=True)
class MetricsReport:
    """Mean ROUGE-1/2/L and BLEU-4 over a set of (candidate, reference) pairs."""

    rouge1: RougeScore
    rouge2: RougeScore
    rougeL: RougeScore
    bleu4: BleuScore
    n_pairs: int


def _mean_rouge(scores: list[RougeScore]) -> RougeScore:
    n = len(scores)
    return RougeScore(
        sum(s.precision for s in scores) / n,
        sum(s.recall for s in scores) / n,
        sum(s.f1 for s in scores) / n,
    )


def score_pairs(pairs: list[tuple[str, str]]) -> MetricsReport:
    """Metrics for already-generated (candidate, reference) text pairs."""
    if not pairs:
        raise ValueError("need at least one pair")
    r1, r2, rl, bl = [], [], [], []
    for cand_text, ref_text in pairs:
        cand = metric_tokens(cand_text)
        ref = metric_tokens(ref_text)
        r1.append(rouge_n(cand, ref, 1))
        r2.append(rouge_n(cand, ref, 2))
        rl.append(rouge_l(cand, ref))
        bl.append(bleu(cand, [ref]))
    n = len(pairs)
    mean_bleu = BleuScore(
        score=sum(b.score for b in bl) / n,
        precisions=tuple(sum(b.precisions[i] for b in bl) / n for i in range(4)),
        brevity_penalty=sum(b.brevity_penalty for b in bl) / n,
    )
    return MetricsReport(
        rouge1=_mean_rouge(r1), rouge2=_mean_rouge(r2), rougeL=_mean_rouge(rl),
        bleu4=mean_bleu, n_pairs=n,
    )


def evaluate_model(
    params: ParamSet,
    config: ModelConfig,
    eval_pairs: list[tuple[str, str]],
    max_new: int = 48,
) -> MetricsReport:
    """Greedy-decode each prompt and score the output against its reference."""
    if not eval_pairs:
        raise ValueError("need at least one (prompt, reference) pair")
    generated = [
        (generate(params, config, prompt, max_new=max_new, mode="greedy"), reference)
        for prompt, reference in eval_pairs
    ]
    return score_pairs(generated)


def format_report_table(reports: dict[str, MetricsReport]) -> str:
    """Rows are metrics, columns are model names; values are score x 100."""
    names = list(reports)
    width = max(12, *(len(n) + 2 for n in names))
    lines = ["Metric".ljust(12) + "".join(n.rjust(width) for n in names)]
    rows = [
        ("Rouge-1", lambda rep: rep.rouge1.f1),
        ("Rouge-2", lambda rep: rep.rouge2.f1),
        ("Rouge-L", lambda rep: rep.rougeL.f1),
        ("BLEU-4", lambda rep: rep.bleu4.score),
    ]
    for label, pick in rows:
        lines.append(label.ljust(12) + "".join(
            f"{100 * pick(reports[n]):.3f}".rjust(width) for n in names))
    return "\n".join(lines)
