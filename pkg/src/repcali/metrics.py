"""Self-contained evaluation metrics over integer token sequences.

BLEU-4 (multi-reference, clipped modified precision, brevity penalty),
ROUGE-L, self-BLEU diversity, Matthews correlation, Kendall's tau with
permutation aggregates, and the dialogue combined score. Everything is
pure and operates on sequences of hashable tokens; scores live in [0, 1]
internally (degree scaling happens only at presentation time).
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypothesis: Sequence, references: list[Sequence], max_n: int = 4,
         smooth_eps: float = 0.0) -> float:
    """Geometric mean of clipped 1..max_n-gram precisions times brevity penalty.

    Unsmoothed by default: any zero precision zeroes the score. Pass a
    small `smooth_eps` to add-epsilon both counts, which keeps very short
    sequences comparable.
    """
    if not references:
        raise ValueError("bleu requires at least one reference")
    hyp = list(hypothesis)
    if not hyp:
        return 0.0
    refs = [list(r) for r in references]
    log_sum = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = _ngrams(hyp, n)
        total = sum(hyp_counts.values())
        clipped = 0
        if hyp_counts:
            max_ref = Counter()
            for ref in refs:
                for gram, c in _ngrams(ref, n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            clipped = sum(min(c, max_ref[gram]) for gram, c in hyp_counts.items())
        num = clipped + smooth_eps
        den = total + smooth_eps
        if num <= 0.0 or den <= 0.0:
            return 0.0
        log_sum += math.log(num / den)
    # effective reference length: closest to the hypothesis, ties -> shorter
    c = len(hyp)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / max_n)


def bleu4(hypothesis: Sequence, references: list[Sequence],
          smooth_eps: float = 0.0) -> float:
    return bleu(hypothesis, references, max_n=4, smooth_eps=smooth_eps)


def _lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: Sequence, reference: Sequence) -> float:
    """LCS F-measure with beta -> 1 (harmonic mean of precision and recall)."""
    hyp, ref = list(hypothesis), list(reference)
    if not hyp or not ref:
        return 0.0
    lcs = _lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return 2.0 * p * r / (p + r)


def self_bleu(hypotheses: list[Sequence], max_n: int) -> float:
    """Mean BLEU of each hypothesis against all its siblings; lower = more diverse."""
    if max_n not in (3, 4):
        raise ValueError("self_bleu is defined for max_n in {3, 4}")
    if len(hypotheses) < 2:
        raise ValueError("self_bleu needs at least two hypotheses")
    scores = []
    for i, hyp in enumerate(hypotheses):
        refs = [h for j, h in enumerate(hypotheses) if j != i]
        scores.append(bleu(hyp, refs, max_n=max_n))
    return sum(scores) / len(scores)


def mcc(tp: int, tn: int, fp: int, fn: int) -> float:
    """Matthews correlation from a binary confusion matrix; degenerate -> 0."""
    if min(tp, tn, fp, fn) < 0:
        raise ValueError("confusion counts must be nonnegative")
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def _check_permutation(order: Sequence[int], other: Sequence[int]) -> None:
    if len(order) != len(other) or len(order) < 2:
        raise ValueError("inputs must be equal-size permutations with at least 2 items")
    if sorted(order) != sorted(other) or len(set(order)) != len(order):
        raise ValueError("inputs must be permutations of the same index set")


def kendall_tau(predicted: Sequence[int], gold: Sequence[int]) -> float:
    """(concordant - discordant) / (m*(m-1)/2) over all item pairs."""
    _check_permutation(predicted, gold)
    m = len(predicted)
    pos_pred = {v: i for i, v in enumerate(predicted)}
    pos_gold = {v: i for i, v in enumerate(gold)}
    items = list(predicted)
    concordant = discordant = 0
    for i in range(m):
        for j in range(i + 1, m):
            a, b = items[i], items[j]
            s1 = pos_pred[a] - pos_pred[b]
            s2 = pos_gold[a] - pos_gold[b]
            if s1 * s2 > 0:
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / (m * (m - 1) / 2)


def order_metrics(pairs: list[tuple[Sequence[int], Sequence[int]]]) -> dict[str, float]:
    """Aggregate ordering quality: positionwise ACC, perfect-match ratio, mean tau."""
    if not pairs:
        raise ValueError("order_metrics needs at least one (predicted, gold) pair")
    hits = total = exact = 0
    taus = []
    for pred, gold in pairs:
        _check_permutation(pred, gold)
        hits += sum(1 for a, b in zip(pred, gold) if a == b)
        total += len(gold)
        exact += int(list(pred) == list(gold))
        taus.append(kendall_tau(pred, gold))
    return {
        "acc": hits / total,
        "pmr": exact / len(pairs),
        "kendall_tau": sum(taus) / len(taus),
    }


def combined_score(inform: float, success: float, bleu4_pct: float) -> float:
    """(inform + success) * 0.5 + bleu4, all on the percentage scale."""
    return (inform + success) * 0.5 + bleu4_pct


def token_accuracy(predictions: list[Sequence], targets: list[Sequence]) -> float:
    """Positionwise accuracy against targets; missing positions count as wrong."""
    if len(predictions) != len(targets):
        raise ValueError("prediction/target count mismatch")
    hits = total = 0
    for pred, tgt in zip(predictions, targets):
        pred = list(pred)
        for i, tok in enumerate(tgt):
            hits += int(i < len(pred) and pred[i] == tok)
        total += len(tgt)
    if total == 0:
        raise ValueError("no target tokens to score")
    return hits / total


def exact_match(predictions: list[Sequence], targets: list[Sequence]) -> float:
    if len(predictions) != len(targets):
        raise ValueError("prediction/target count mismatch")
    if not targets:
        raise ValueError("no examples to score")
    return sum(int(list(p) == list(t)) for p, t in zip(predictions, targets)) / len(targets)


def corpus_bleu4(predictions: list[Sequence], targets: list[Sequence],
                 smooth_eps: float = 0.0) -> float:
    """Mean sentence BLEU-4 of each prediction against its single target."""
    if len(predictions) != len(targets) or not targets:
        raise ValueError("prediction/target count mismatch")
    return sum(bleu4(p, [t], smooth_eps=smooth_eps) for p, t in zip(predictions, targets)) / len(targets)
