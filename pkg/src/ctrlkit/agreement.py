"""Agreement and text-similarity metrics for task evaluation.

Gold labels play annotator 1 and model predictions annotator 2; pairs where
either side is missing are excluded before computing agreement, and the
missing rate is reported separately by the harness.  Degenerate inputs
(zero expected disagreement, constant rankings) yield ``None`` rather than
a number.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

MISSING = None

# Affine rescaling constants for answer-selection accuracy.
PSEUDO_ALPHA_ZERO = 109 / 2049
PSEUDO_ALPHA_SCALE = 1940 / 2049


class MetricError(ValueError):
    pass


def _drop_missing(gold, pred):
    pairs = [
        (g, p)
        for g, p in zip(gold, pred, strict=True)
        if g is not MISSING and p is not MISSING
    ]
    return pairs


def krippendorff_alpha(gold, pred, level: str = "nominal") -> float | None:
    """Two-annotator alpha = 1 - D_o/D_e over the coincidence matrix.

    ``level`` picks the distance: 0/1 for nominal, squared difference for
    interval.  Returns None when expected disagreement is zero (all pooled
    values identical).
    """
    if level not in ("nominal", "interval"):
        raise MetricError(f"unknown level {level!r}")
    pairs = _drop_missing(gold, pred)
    if len(pairs) < 2:
        raise MetricError("need at least 2 aligned non-missing pairs")

    if level == "nominal":
        dist = lambda a, b: 0.0 if a == b else 1.0
    else:
        dist = lambda a, b: (float(a) - float(b)) ** 2

    # Each unit contributes its (a,b) pair to the coincidence matrix in both
    # orders; with two annotators the per-unit normalizer m_u - 1 is 1.
    pooled = Counter()
    d_o = 0.0
    for a, b in pairs:
        pooled[a] += 1
        pooled[b] += 1
        d_o += 2.0 * dist(a, b)
    n = 2 * len(pairs)
    d_o /= n

    values = list(pooled)
    d_e = 0.0
    for i, v in enumerate(values):
        for w in values[i + 1:]:
            d_e += 2.0 * pooled[v] * pooled[w] * dist(v, w)
    d_e /= n * (n - 1)

    if d_e == 0.0:
        return None
    return 1.0 - d_o / d_e


def pseudo_alpha(accuracy: float) -> float:
    """Affine rescaling of answer-selection accuracy; 0 at chance level."""
    if not 0.0 <= accuracy <= 1.0:
        raise MetricError(f"accuracy must be in [0, 1], got {accuracy}")
    return (accuracy - PSEUDO_ALPHA_ZERO) / PSEUDO_ALPHA_SCALE


def _fractional_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # ties share the mean rank
        i = j + 1
    return ranks


def spearman_rho(gold, pred) -> float | None:
    """Pearson correlation of fractional ranks; None if either side is constant."""
    pairs = _drop_missing(gold, pred)
    if len(pairs) < 2:
        raise MetricError("need at least 2 aligned non-missing pairs")
    g = np.asarray([float(a) for a, _ in pairs])
    p = np.asarray([float(b) for _, b in pairs])
    rg, rp = _fractional_ranks(g), _fractional_ranks(p)
    dg, dp = rg - rg.mean(), rp - rp.mean()
    denom = np.sqrt((dg * dg).sum() * (dp * dp).sum())
    if denom == 0.0:
        return None
    return float((dg * dp).sum() / denom)


def accuracy(gold, pred) -> float:
    pairs = _drop_missing(gold, pred)
    if not pairs:
        raise MetricError("need at least one aligned non-missing pair")
    return sum(1 for g, p in pairs if g == p) / len(pairs)


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1 over whitespace tokens."""
    cand, ref = candidate.split(), reference.split()
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)
