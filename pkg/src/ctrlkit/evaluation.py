"""Automatic generation metrics and the hyper-parameter grid search.

Covers sliding-window perplexity, sampling-loop detection, ECC outcome
bookkeeping with confusion matrices, self-BLEU-4, and a grid search that
pairs the nucleus threshold and the temperature with the repetition
penalty.  Grid cells are independent, deterministically seeded jobs; the
merged report is ordered lexicographically so concurrency never changes
the output.
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .ngram import NGramIndex, overlap
from .sampler import (
    STOP_ECC,
    GenerationResult,
    SamplingParams,
    generate,
)
from .tokenizer import Vocab, decode, encode


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class PerplexityResult:
    value: float
    window: int
    token_count: int  # predicted positions entering the average


def sliding_perplexity(ckpt: M.Checkpoint, v: Vocab, text: str, w: int) -> PerplexityResult:
    """exp of the mean NLL with every token conditioned on a w-token window.

    Position i conditions on the previous min(i, w-1) tokens; the stride is
    1, so each position beyond the first window gets its own forward pass.
    """
    n = ckpt.config.context
    if not 2 <= w <= n:
        raise EvaluationError(f"window must be in [2, {n}], got {w}")
    ids = encode(v, text)
    if len(ids) < 2:
        raise EvaluationError("text must encode to at least 2 tokens")
    arr = np.asarray(ids, dtype=np.int64)
    t = len(arr)

    def log_probs(logits: np.ndarray) -> np.ndarray:
        shifted = logits.astype(np.float64) - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    total = 0.0
    head = min(w, t)
    lp = log_probs(M.forward(ckpt, arr[:head]))
    for i in range(1, head):
        total += lp[i - 1, arr[i]]
    for i in range(w, t):
        window = arr[i - w + 1:i]
        lp_last = log_probs(M.forward(ckpt, window)[-1:])
        total += lp_last[0, arr[i]]

    count = t - 1
    value = math.exp(-total / count)
    return PerplexityResult(value=value, window=w, token_count=count)


@dataclass(frozen=True)
class Loop:
    start: int
    phrase: tuple[int, ...]
    repeats: int

    @property
    def token_span(self) -> int:
        return len(self.phrase) * self.repeats


@dataclass(frozen=True)
class LoopReport:
    loops: tuple[Loop, ...]
    numeral_excluded_count: int


def _is_primitive(phrase: tuple[int, ...]) -> bool:
    n = len(phrase)
    for q in range(1, n):
        if n % q == 0 and phrase == phrase[:q] * (n // q):
            return False
    return True


def _is_numeral(v: Vocab, token_id: int) -> bool:
    return decode(v, [token_id]).isdecimal()


def detect_loops(ids, v: Vocab, max_phrase: int = 5) -> LoopReport:
    """Maximal contiguous repetitions of a primitive phrase of length <= 5.

    A run whose tokens all decode to numerals is excluded from the loops and
    tallied in ``numeral_excluded_count`` instead.
    """
    seq = tuple(ids)
    n = len(seq)
    loops: list[Loop] = []
    excluded = 0
    for length in range(1, max_phrase + 1):
        j = 0
        limit = n - length
        while j < limit:
            if seq[j] != seq[j + length]:
                j += 1
                continue
            start = j
            while j < limit and seq[j] == seq[j + length]:
                j += 1
            # Periodic segment [start, j + length) with period `length`.
            repeats = (j - start) // length + 1
            if repeats >= 2:
                phrase = seq[start:start + length]
                if _is_primitive(phrase):
                    if all(_is_numeral(v, t) for t in phrase):
                        excluded += 1
                    else:
                        loops.append(Loop(start=start, phrase=phrase, repeats=repeats))
            j += 1
    loops.sort(key=lambda l: (l.start, len(l.phrase)))
    return LoopReport(loops=tuple(loops), numeral_excluded_count=excluded)


OUTCOME_CORRECT = "correct"
OUTCOME_WRONG = "wrong"
OUTCOME_NONE = "none"


@dataclass(frozen=True)
class EccOutcome:
    kind: str  # correct | wrong | none
    category: str | None = None  # reached category when kind == wrong


def ecc_outcome(gr: GenerationResult, occ: str, v: Vocab) -> EccOutcome:
    """Classify where a generation stopped relative to its opening code."""
    if occ not in v.control_ids:
        raise EvaluationError(f"category {occ!r} has no control codes in the vocab")
    if gr.stop_reason != STOP_ECC:
        return EccOutcome(OUTCOME_NONE)
    reached = v.category_of_ecc_id(gr.ecc_id)
    if reached == occ:
        return EccOutcome(OUTCOME_CORRECT)
    return EccOutcome(OUTCOME_WRONG, category=reached)


class EccConfusion:
    """Counts of reached ECC category (or none) per opening category."""

    def __init__(self):
        self.matrix: Counter = Counter()

    def add(self, occ: str, outcome: EccOutcome):
        reached = occ if outcome.kind == OUTCOME_CORRECT else (
            outcome.category if outcome.kind == OUTCOME_WRONG else OUTCOME_NONE
        )
        self.matrix[occ, reached] += 1

    def row_total(self, occ: str) -> int:
        return sum(c for (o, _), c in self.matrix.items() if o == occ)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(
        tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)
    )


def bleu4(candidate: str, references: list[str]) -> float:
    """BLEU-4 with uniform weights, brevity penalty, and add-one smoothing
    applied to any order whose clipped count is zero."""
    if not references:
        raise EvaluationError("BLEU needs at least one reference")
    cand = candidate.split()
    refs = [r.split() for r in references]
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngrams(cand, n)
        total = sum(cand_counts.values())
        ref_counts = [_ngrams(r, n) for r in refs]
        clipped = sum(
            min(cnt, max(rc.get(ng, 0) for rc in ref_counts))
            for ng, cnt in cand_counts.items()
        )
        if clipped == 0:
            p_n = 1.0 / (total + 1)
        else:
            p_n = clipped / total
        log_sum += 0.25 * math.log(p_n)
    c = len(cand)
    r = min((abs(len(r_) - c), len(r_)) for r_ in refs)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def self_bleu4(texts: list[str]) -> list[float]:
    """Each text scored against the rest of its cohort; low means diverse."""
    if len(texts) < 2:
        raise EvaluationError("self-BLEU needs at least 2 texts")
    return [
        bleu4(text, texts[:i] + texts[i + 1:]) for i, text in enumerate(texts)
    ]


@dataclass(frozen=True)
class GridSpec:
    """Grid values paired as (p, r) at T=1 and (T, r) at p=1."""

    p_values: tuple[float, ...] = (0.7, 0.8, 0.9, 1.0)
    t_values: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    r_values: tuple[float, ...] = (1.0, 1.2, 1.4, 1.6, 1.8, 2.0)

    def cells(self) -> list[tuple[float, float, float]]:
        seen: dict[tuple[float, float, float], None] = {}
        for p in self.p_values:
            for r in self.r_values:
                seen.setdefault((1.0, p, r))
        for t in self.t_values:
            for r in self.r_values:
                seen.setdefault((t, 1.0, r))
        return sorted(seen)


@dataclass(frozen=True)
class CellRecord:
    """One generated text, as dumped to the cell's JSON-lines file.

    ``token_ids`` are the raw generated ids (ECC included); sampled ids are
    not necessarily a canonical encoding of ``text``, so aggregates must be
    recomputed from the ids, never from re-encoded text.
    """

    prompt: str
    text: str
    stop_reason: str
    outcome: str
    reached: str | None
    token_ids: tuple[int, ...]

    @property
    def n_tokens(self) -> int:
        return len(self.token_ids)

    def to_json(self) -> str:
        return json.dumps(
            {
                "prompt": self.prompt,
                "text": self.text,
                "stop_reason": self.stop_reason,
                "outcome": self.outcome,
                "reached": self.reached,
                "token_ids": list(self.token_ids),
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "CellRecord":
        data = json.loads(line)
        return cls(
            prompt=data["prompt"],
            text=data["text"],
            stop_reason=data["stop_reason"],
            outcome=data["outcome"],
            reached=data["reached"],
            token_ids=tuple(data["token_ids"]),
        )


@dataclass(frozen=True)
class CellReport:
    category: str
    temperature: float
    nucleus_p: float
    repetition_penalty: float
    ecc_correct: int
    ecc_wrong: int
    ecc_none: int
    mean_loop_len: float
    mean_tokens: float
    median_selfbleu4: float | None
    median_overlap13: float | None
    records: tuple[CellRecord, ...] = field(repr=False, default=())

    @property
    def key(self):
        return (self.category, self.temperature, self.nucleus_p,
                self.repetition_penalty)


@dataclass(frozen=True)
class GridReport:
    cells: tuple[CellReport, ...]
    confusion: EccConfusion

    CSV_HEADER = (
        "category,T,p,r,ecc_correct,ecc_wrong,ecc_none,"
        "mean_loop_len,mean_tokens,median_selfbleu4,median_overlap13"
    )

    def to_csv(self) -> str:
        def fmt(x):
            return "" if x is None else f"{x:.6f}"

        lines = [self.CSV_HEADER]
        for c in self.cells:
            lines.append(
                f"{c.category},{c.temperature:.2f},{c.nucleus_p:.2f},"
                f"{c.repetition_penalty:.2f},{c.ecc_correct},{c.ecc_wrong},"
                f"{c.ecc_none},{fmt(c.mean_loop_len)},{fmt(c.mean_tokens)},"
                f"{fmt(c.median_selfbleu4)},{fmt(c.median_overlap13)}"
            )
        return "\n".join(lines) + "\n"


def cell_seed(base_seed: int, category: str, t: float, p: float, r: float,
              sample: int) -> int:
    key = f"{base_seed}:{category}:{t:.4f}:{p:.4f}:{r:.4f}:{sample}"
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def summarize_cell(
    v: Vocab,
    category: str,
    params: tuple[float, float, float],
    records: list[CellRecord],
    idx: NGramIndex | None = None,
) -> CellReport:
    """Aggregate one cell; usable both live and on re-loaded dump records."""
    t, p, r = params
    outcomes = Counter(rec.outcome for rec in records)
    loop_spans: list[int] = []
    for rec in records:
        report = detect_loops(rec.token_ids, v)
        loop_spans.extend(l.token_span for l in report.loops)
    texts = [rec.text for rec in records]
    overlaps = None
    if idx is not None:
        overlaps = statistics.median(
            overlap([text], idx).overlap_pct for text in texts
        )
    return CellReport(
        category=category,
        temperature=t,
        nucleus_p=p,
        repetition_penalty=r,
        ecc_correct=outcomes.get(OUTCOME_CORRECT, 0),
        ecc_wrong=outcomes.get(OUTCOME_WRONG, 0),
        ecc_none=outcomes.get(OUTCOME_NONE, 0),
        mean_loop_len=(sum(loop_spans) / len(loop_spans)) if loop_spans else 0.0,
        mean_tokens=sum(rec.n_tokens for rec in records) / len(records),
        median_selfbleu4=(
            statistics.median(self_bleu4(texts)) if len(texts) >= 2 else None
        ),
        median_overlap13=overlaps,
        records=tuple(records),
    )


def _run_cell(ckpt, v, category, params, texts_per_cell, max_new_tokens,
              base_seed, idx):
    t, p, r = params
    records: list[CellRecord] = []
    for sample in range(texts_per_cell):
        sp = SamplingParams(
            temperature=t,
            nucleus_p=p,
            repetition_penalty=r,
            max_new_tokens=max_new_tokens,
            rng_seed=cell_seed(base_seed, category, t, p, r, sample),
        )
        gr = generate(ckpt, v, "", category, sp)
        out = ecc_outcome(gr, category, v)
        body = [i for i in gr.generated_ids if i not in v.ecc_ids]
        records.append(
            CellRecord(
                prompt="",
                text=decode(v, body),
                stop_reason=gr.stop_reason,
                outcome=out.kind,
                reached=(category if out.kind == OUTCOME_CORRECT else out.category),
                token_ids=tuple(gr.generated_ids),
            )
        )
    return summarize_cell(v, category, params, records, idx)


def grid_search(
    ckpt: M.Checkpoint,
    v: Vocab,
    categories: list[str],
    grid: GridSpec = GridSpec(),
    texts_per_cell: int = 10,
    max_new_tokens: int = 64,
    idx: NGramIndex | None = None,
    base_seed: int = 0,
    jobs: int = 1,
) -> GridReport:
    """Generate from the bare OCC for every (category, params) cell.

    Each sample draws its rng stream from (base_seed, cell key, sample), so
    results are independent of the execution order and of ``jobs``.
    """
    for cat in categories:
        if cat not in v.control_ids:
            raise EvaluationError(f"category {cat!r} has no control codes")
    tasks = [
        (category, params)
        for category in sorted(categories)
        for params in grid.cells()
    ]

    def run(task):
        category, params = task
        return _run_cell(ckpt, v, category, params, texts_per_cell,
                         max_new_tokens, base_seed, idx)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(run, tasks))
    else:
        cells = [run(t) for t in tasks]

    cells.sort(key=lambda c: c.key)
    confusion = EccConfusion()
    for cell in cells:
        for rec in cell.records:
            confusion.add(
                cell.category,
                EccOutcome(rec.outcome, rec.reached if rec.outcome == OUTCOME_WRONG else None),
            )
    return GridReport(cells=tuple(cells), confusion=confusion)
