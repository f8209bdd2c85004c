"""Independent reference implementations used only to check the package.

Everything here is written as plainly as possible (explicit loops, dicts,
recursion) and must stay decoupled from the implementations under test.
"""

from __future__ import annotations

import math
from functools import lru_cache


def loss_scalar_loop(logits, targets, mask):
    """Mean masked cross-entropy via per-position scalar softmax."""
    total = 0.0
    count = 0
    B, T, V = logits.shape
    for b in range(B):
        for t in range(T):
            if not mask[b][t]:
                continue
            row = [float(x) for x in logits[b][t]]
            m = max(row)
            denom = sum(math.exp(x - m) for x in row)
            log_prob = (row[int(targets[b][t])] - m) - math.log(denom)
            total += -log_prob
            count += 1
    return total / count


def rouge_n_counts(cand, ref, n):
    """Hash-map n-gram counting with explicit clipping."""
    def grams(tokens):
        table = {}
        for i in range(len(tokens) - n + 1):
            g = tuple(tokens[i:i + n])
            table[g] = table.get(g, 0) + 1
        return table

    cg, rg = grams(cand), grams(ref)
    n_c = sum(cg.values())
    n_r = sum(rg.values())
    if n_c == 0 or n_r == 0:
        return 0.0, 0.0, 0.0
    overlap = 0
    for g, c in cg.items():
        overlap += min(c, rg.get(g, 0))
    p = overlap / n_c
    r = overlap / n_r
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def lcs_recursive(a, b):
    """Memoized recursive LCS length."""
    a = tuple(a)
    b = tuple(b)

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0 or j == 0:
            return 0
        if a[i - 1] == b[j - 1]:
            return rec(i - 1, j - 1) + 1
        return max(rec(i - 1, j), rec(i, j - 1))

    return rec(len(a), len(b))


def bleu_reference(cand, refs, max_n=4):
    """Scripted BLEU: clipped precisions, add-one smoothing on zero counts,
    closest-reference-length brevity penalty (ties to the shorter)."""
    c = len(cand)
    refs = [r for r in refs if len(r) > 0]
    if c == 0 or not refs:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        counts = {}
        for i in range(c - n + 1):
            g = tuple(cand[i:i + n])
            counts[g] = counts.get(g, 0) + 1
        best_ref = {}
        for ref in refs:
            ref_counts = {}
            for i in range(len(ref) - n + 1):
                g = tuple(ref[i:i + n])
                ref_counts[g] = ref_counts.get(g, 0) + 1
            for g, cnt in ref_counts.items():
                if cnt > best_ref.get(g, 0):
                    best_ref[g] = cnt
        num = 0
        for g, cnt in counts.items():
            num += min(cnt, best_ref.get(g, 0))
        den = sum(counts.values())
        if num == 0:
            p = (num + 1) / (den + 1)
        else:
            p = num / den
        log_sum += math.log(p)
    best = None
    for ref in refs:
        key = (abs(len(ref) - c), len(ref))
        if best is None or key < best:
            best = key
    r_len = best[1]
    bp = 1.0 if c > r_len else math.exp(1.0 - r_len / c)
    return bp * math.exp(log_sum / max_n)


def nn_scan(vectors, ids, q, k, metric):
    """Naive double-loop exact nearest-neighbor scan."""
    scored = []
    for i in range(len(ids)):
        if metric == "cosine":
            dot = vn = qn = 0.0
            for j in range(len(q)):
                dot += float(vectors[i][j]) * float(q[j])
                vn += float(vectors[i][j]) ** 2
                qn += float(q[j]) ** 2
            denom = math.sqrt(vn) * math.sqrt(qn)
            score = dot / denom if denom > 0 else 0.0
            scored.append((-score, ids[i]))
        else:
            d2 = 0.0
            for j in range(len(q)):
                d2 += (float(vectors[i][j]) - float(q[j])) ** 2
            scored.append((math.sqrt(d2), ids[i]))
    scored.sort()
    return [bid for _, bid in scored[:k]]
