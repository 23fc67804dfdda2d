"""Prompt-based benchmark fine-tuning and scoring.

Every datapoint renders as ``[OCC] [Prompt] [Label] [ECC]`` with
task-specific opening/ending control tokens.  Prompts longer than the
budget keep their head and tail around a ``[...]`` separator so the whole
sequence fits the 256-token context.  Evaluation decodes greedily with the
task ECC blocked at the first step, parses the continuation into a label,
and scores gold-vs-predicted agreement; unparseable continuations count as
missing annotations and are excluded from both sides.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

import numpy as np

from . import agreement, model as M, trainer
from .sampler import greedy_answer
from .tokenizer import TokenizerError, Vocab, decode, encode

LABEL = "label"
SCORE = "score"
SUMMARY = "summary"


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class PromptBudget:
    """Token budget keeping prompt, label, control codes, and separator
    inside the context window."""

    context: int = 256
    reserve: int = 5  # upper bound on the tokenized separator
    separator: str = "[...]"
    cap: int = 245  # prompt limit when everything fits comfortably

    def limit(self, prompt_len: int, label_len: int) -> int:
        if prompt_len + label_len + 2 <= self.context - self.reserve:
            return self.cap
        return self.context - self.reserve - label_len - 2


@dataclass(frozen=True)
class TaskSpec:
    """One benchmark task: prompt template, label space, metric choice."""

    name: str
    template: str
    kind: str  # label | score | summary
    metrics: tuple[str, ...]
    labels: tuple[str, ...] = ()
    label_field: str = "label"
    group_field: str | None = None  # set for answer-selection tasks
    score_granularity: float | None = None

    def __post_init__(self):
        if self.kind not in (LABEL, SCORE, SUMMARY):
            raise TaskError(f"unknown task kind {self.kind!r}")
        if self.kind == LABEL and len(self.labels) < 2:
            raise TaskError("finite-label tasks need at least 2 labels")

    @property
    def occ_text(self) -> str:
        return ":" + self.name + ":"

    @property
    def ecc_text(self) -> str:
        return self.occ_text + "$"

    def render_prompt(self, dp: dict) -> str:
        try:
            return self.template.format(**dp)
        except KeyError as exc:
            raise TaskError(
                f"datapoint is missing field {exc.args[0]!r} for task {self.name}"
            ) from None

    def label_str(self, dp: dict) -> str:
        try:
            value = dp[self.label_field]
        except KeyError:
            raise TaskError(
                f"datapoint has no {self.label_field!r} field"
            ) from None
        return str(value)

    def render_example(self, dp: dict) -> str:
        """Display form '[OCC] [Prompt] [Label] [ECC]' of one datapoint."""
        return " ".join(
            [self.occ_text, self.render_prompt(dp), self.label_str(dp), self.ecc_text]
        )


BUILTIN_TASKS: dict[str, TaskSpec] = {
    spec.name: spec
    for spec in [
        TaskSpec(
            name="absabank-imm",
            template="{text} Känsloläge:",
            kind=SCORE,
            metrics=("alpha_interval", "spearman"),
        ),
        TaskSpec(
            name="swedn",
            template="{text} Sammanfattning:",
            kind=SUMMARY,
            metrics=("rouge_l",),
        ),
        TaskSpec(
            name="swewinograd",
            template="{text} Fråga: Syftar '{word1}' till '{word2}'? Svar:",
            kind=LABEL,
            labels=("Ja", "Nej"),
            metrics=("alpha_nominal",),
        ),
        TaskSpec(
            name="swefracas",
            template="Premiss: {premise} Fråga: {question} Svar:",
            kind=LABEL,
            labels=("Ja", "Nej", "Vet ej", "Jo"),
            metrics=("alpha_nominal", "accuracy"),
        ),
        TaskSpec(
            name="dalaj-ged",
            template="{text} Fråga: Är meningen grammatiskt korrekt?",
            kind=LABEL,
            labels=("Ja", "Nej"),
            metrics=("alpha_nominal", "accuracy"),
        ),
        TaskSpec(
            name="swenli",
            template="Situation: {premise} Påstående: {hypothesis} Fråga: Stämmer? Svar:",
            kind=LABEL,
            labels=("Ja", "Nej", "Kanske"),
            metrics=("alpha_nominal", "accuracy"),
        ),
        TaskSpec(
            name="swefaq",
            template="Fråga: {question} Svar: {answer} Passar?",
            kind=LABEL,
            labels=("Ja", "Nej"),
            metrics=("pseudo_alpha", "accuracy"),
            group_field="group",
        ),
        TaskSpec(
            name="sweparaphrase",
            template="Mening 1: {sentence1} Mening 2: {sentence2} Likhet mellan meningar:",
            kind=SCORE,
            metrics=("alpha_interval",),
        ),
        TaskSpec(
            name="swewic",
            template=(
                "Text 1: {text1} Text 2: {text2} Fråga: Betyder ordet "
                "'{word}' samma sak i båda fall? Svar:"
            ),
            kind=LABEL,
            labels=("Ja", "Nej"),
            metrics=("accuracy",),
        ),
        TaskSpec(
            name="swewinogender",
            template="Situation: {premise} Påstående: {hypothesis} Fråga: Stämmer?",
            kind=LABEL,
            labels=("Ja", "Nej", "Kanske"),
            metrics=("alpha_nominal", "accuracy"),
        ),
        TaskSpec(
            name="swediagnostics",
            template="Situation: {premise} Påstående: {hypothesis} Fråga: Stämmer?",
            kind=LABEL,
            labels=("Ja", "Nej", "Kanske"),
            metrics=("alpha_nominal", "accuracy"),
        ),
    ]
}


def get_task(name: str) -> TaskSpec:
    try:
        return BUILTIN_TASKS[name.lower()]
    except KeyError:
        raise TaskError(
            f"unknown task {name!r}; available: {', '.join(sorted(BUILTIN_TASKS))}"
        ) from None


def load_datapoints(path) -> list[dict]:
    """JSON-lines, one datapoint per line with template placeholder fields."""
    datapoints = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                datapoints.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise TaskError(f"{path}:{lineno}: invalid JSON ({exc})") from None
    return datapoints


def label_token_len(spec: TaskSpec, dp: dict, v: Vocab) -> int:
    # Leading space keeps the label a separate word after the prompt.
    return len(encode(v, " " + spec.label_str(dp)))


def build_prompt(dp: dict, spec: TaskSpec, v: Vocab, budget: PromptBudget) -> list[int]:
    """Tokenized OCC + prompt, head/tail-truncated to the budget."""
    if spec.name not in v.control_ids:
        raise TaskError(
            f"task {spec.name!r} has no control tokens in the vocabulary; "
            "call add_task_tokens first"
        )
    label_len = label_token_len(spec, dp, v)
    if label_len + budget.reserve + 2 >= budget.context:
        raise TaskError(
            f"label of {label_len} tokens cannot fit the context of "
            f"{budget.context}"
        )
    p_ids = encode(v, spec.render_prompt(dp))
    limit = budget.limit(len(p_ids), label_len)
    if len(p_ids) > limit:
        sep_ids = encode(v, budget.separator)
        if len(sep_ids) > budget.reserve:
            raise TaskError(
                f"separator tokenizes to {len(sep_ids)} tokens, above the "
                f"reserve of {budget.reserve}"
            )
        half = limit // 2
        p_ids = p_ids[:half] + sep_ids + p_ids[len(p_ids) - half:]
    return [v.occ_id(spec.name)] + p_ids


def training_ids(dp: dict, spec: TaskSpec, v: Vocab, budget: PromptBudget) -> list[int]:
    """Full fine-tuning sequence: OCC + prompt + label + ECC."""
    ids = build_prompt(dp, spec, v, budget)
    ids += encode(v, " " + spec.label_str(dp))
    ids.append(v.ecc_id(spec.name))
    return ids


_NUMBER_RE = re.compile(r"[-+]?\d+(?:[.,]\d+)?")


def parse_label(generated: str, spec: TaskSpec):
    """Map a generated continuation to a label, score, or summary.

    Returns None (a missing annotation) when no label prefix matches, no
    number is found, or the summary is empty.
    """
    text = generated.strip()
    if spec.kind == LABEL:
        lowered = text.lower()
        for label in sorted(spec.labels, key=len, reverse=True):
            if lowered.startswith(label.lower()):
                return label
        return agreement.MISSING
    if spec.kind == SCORE:
        match = _NUMBER_RE.search(text)
        if not match:
            return agreement.MISSING
        return float(match.group(0).replace(",", "."))
    # summary: everything up to the task ECC
    ecc_pos = text.find(spec.ecc_text)
    if ecc_pos >= 0:
        text = text[:ecc_pos].rstrip()
    return text if text else agreement.MISSING


def majority_baseline(test_labels: list, metric=None):
    """Predict the modal label of the very same test set for every item.

    Ties break toward the first-seen label.  Returns (predictions, value)
    where value uses ``metric(gold, predictions)`` or plain accuracy.
    """
    if not test_labels:
        raise TaskError("majority baseline needs a non-empty label list")
    counts: dict = {}
    for label in test_labels:
        counts[label] = counts.get(label, 0) + 1
    mode = max(counts, key=lambda l: counts[l])  # insertion order breaks ties
    predictions = [mode] * len(test_labels)
    if metric is None:
        metric = agreement.accuracy
    return predictions, metric(test_labels, predictions)


_TERMINATORS = ".!?"


def first_sentence_baseline(text: str) -> str:
    """Prefix up to the first terminator followed by whitespace and an
    uppercase letter; the whole text if no such split point exists."""
    if not text:
        raise TaskError("cannot split an empty text")
    for i, ch in enumerate(text):
        if ch not in _TERMINATORS:
            continue
        j = i + 1
        while j < len(text) and text[j].isspace():
            j += 1
        if j > i + 1 and j < len(text) and text[j].isupper():
            return text[:i + 1]
    return text


def add_task_tokens(
    v: Vocab, ckpt: M.Checkpoint, spec: TaskSpec, seed: int = trainer.DEFAULT_SEED
) -> tuple[Vocab, M.Checkpoint]:
    """Register the task OCC/ECC and grow the embedding by two seeded rows.

    The fixed seed makes the new embeddings identical across runs.
    """
    for surface in (spec.occ_text, spec.ecc_text):
        if surface in v.token_to_id:
            raise TokenizerError(
                f"task token {surface!r} collides with an existing token"
            )
    if len(v.token_to_id) != ckpt.config.vocab_size:
        raise TaskError(
            "vocabulary and checkpoint disagree on the vocabulary size"
        )
    next_id = len(v.token_to_id)
    token_to_id = dict(v.token_to_id)
    token_to_id[spec.occ_text] = next_id
    token_to_id[spec.ecc_text] = next_id + 1
    control_ids = dict(v.control_ids)
    control_ids[spec.name] = (next_id, next_id + 1)
    v2 = Vocab(
        merges=v.merges,
        token_to_id=token_to_id,
        base_size=v.base_size,
        pad_id=v.pad_id,
        unk_id=v.unk_id,
        control_ids=control_ids,
    )

    cfg2 = replace(ckpt.config, vocab_size=ckpt.config.vocab_size + 2)
    rng = np.random.default_rng(seed)
    new_rows = rng.normal(0.0, M.INIT_STD, size=(2, ckpt.config.model_dim))
    weights = {n: ckpt.weights[n].copy() for n in M.param_shapes(ckpt.config)}
    weights["tok_emb"] = np.concatenate(
        [weights["tok_emb"], new_rows.astype(ckpt.dtype)], axis=0
    )
    M._attach_aliases(weights)
    ckpt2 = M.Checkpoint(config=cfg2, weights=weights, step=ckpt.step, seed=ckpt.seed)
    return v2, ckpt2


def finetune(
    ckpt: M.Checkpoint,
    v: Vocab,
    spec: TaskSpec,
    datapoints: list[dict],
    tc: trainer.TrainingConfig,
    budget: PromptBudget = PromptBudget(),
) -> tuple[Vocab, list[M.Checkpoint]]:
    """Fine-tune all weights on rendered task sequences; one checkpoint per
    epoch, deterministic given tc.seed."""
    if not datapoints:
        raise TaskError("no datapoints to fine-tune on")
    v2, ckpt2 = add_task_tokens(v, ckpt, spec, seed=tc.seed)
    windows = [
        trainer.pack_ids(training_ids(dp, spec, v2, budget), v2, ckpt2.config.context)[0]
        for dp in datapoints
    ]
    checkpoints = trainer.train(ckpt2, [], v2, tc, windows=windows)
    return v2, checkpoints


def _sequence_logprob(ckpt: M.Checkpoint, prefix: list[int], cont: list[int]) -> float:
    """Sum of log p over the continuation tokens given the prefix."""
    ids = np.asarray(prefix + cont, dtype=np.int64)
    logits = M.forward(ckpt, ids[:-1]).astype(np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    total = 0.0
    for pos in range(len(prefix) - 1, len(ids) - 1):
        total += logz[pos, ids[pos + 1]]
    return total


def answer_selection_accuracy(
    ckpt: M.Checkpoint,
    v: Vocab,
    spec: TaskSpec,
    datapoints: list[dict],
    budget: PromptBudget = PromptBudget(),
    scorer=None,
) -> float:
    """Share of groups whose highest-p('Ja') candidate is the gold answer.

    ``scorer(dp) -> float`` may replace the model log-probability, which the
    tests use to drive the selection logic with a known oracle.
    """
    if spec.group_field is None:
        raise TaskError(f"task {spec.name!r} is not an answer-selection task")
    yes = spec.labels[0]
    if scorer is None:
        def scorer(dp):
            prompt_ids = build_prompt(dp, spec, v, budget)
            return _sequence_logprob(ckpt, prompt_ids, encode(v, " " + yes))

    groups: dict = {}
    for dp in datapoints:
        try:
            key = dp[spec.group_field]
        except KeyError:
            raise TaskError(
                f"datapoint has no {spec.group_field!r} field"
            ) from None
        groups.setdefault(key, []).append(dp)
    if not groups:
        raise TaskError("no datapoints")

    correct = 0
    for members in groups.values():
        scores = [scorer(dp) for dp in members]
        picked = members[int(np.argmax(scores))]
        if str(picked[spec.label_field]) == yes:
            correct += 1
    return correct / len(groups)


@dataclass(frozen=True)
class TaskResult:
    task: str
    metrics: dict[str, float | None]
    n_missing_pct: float
    golds: tuple
    predictions: tuple


def _round_to_granularity(value: float, granularity: float | None) -> float:
    if granularity is None:
        return value
    return round(value / granularity) * granularity


def score_predictions(spec: TaskSpec, golds: list, preds: list) -> TaskResult:
    """Apply the task's metrics to aligned gold/predicted labels."""
    missing = sum(1 for p in preds if p is agreement.MISSING)
    n_missing_pct = 100.0 * missing / len(preds) if preds else 0.0
    if spec.kind == SCORE:
        golds = [None if g is None else float(g) for g in golds]
        preds = [
            None if p is None else _round_to_granularity(p, spec.score_granularity)
            for p in preds
        ]
    values: dict[str, float | None] = {}
    for metric in spec.metrics:
        try:
            _score_one(spec, metric, golds, preds, values)
        except agreement.MetricError:
            values[metric] = None  # too few pairable values: undefined
    return TaskResult(
        task=spec.name,
        metrics=values,
        n_missing_pct=n_missing_pct,
        golds=tuple(golds),
        predictions=tuple(preds),
    )


def _score_one(spec, metric, golds, preds, values):
    if metric == "alpha_nominal":
        values[metric] = agreement.krippendorff_alpha(golds, preds, "nominal")
    elif metric == "alpha_interval":
        values[metric] = agreement.krippendorff_alpha(golds, preds, "interval")
    elif metric == "spearman":
        values[metric] = agreement.spearman_rho(golds, preds)
    elif metric == "accuracy":
        values[metric] = agreement.accuracy(golds, preds)
    elif metric == "rouge_l":
        pairs = [
            (g, p) for g, p in zip(golds, preds, strict=True)
            if g is not None and p is not None
        ]
        values[metric] = (
            sum(agreement.rouge_l(p, g) for g, p in pairs) / len(pairs)
            if pairs else None
        )
    elif metric == "pseudo_alpha":
        pass  # computed by the answer-selection path
    else:
        raise TaskError(f"unknown metric {metric!r}")


def evaluate(
    ckpt: M.Checkpoint,
    v: Vocab,
    spec: TaskSpec,
    datapoints: list[dict],
    budget: PromptBudget = PromptBudget(),
    max_new_tokens: int = 32,
) -> TaskResult:
    """Greedy decoding with the task ECC blocked at step one, then scoring.

    For answer-selection tasks the metric set also includes the pseudo-alpha
    rescaling of the selection accuracy.
    """
    if not datapoints:
        raise TaskError("no datapoints to evaluate")
    if spec.group_field is not None:
        acc = answer_selection_accuracy(ckpt, v, spec, datapoints, budget)
        return TaskResult(
            task=spec.name,
            metrics={"pseudo_alpha": agreement.pseudo_alpha(acc), "accuracy": acc},
            n_missing_pct=0.0,
            golds=(),
            predictions=(),
        )
    ecc = v.ecc_id(spec.name)
    golds, preds = [], []
    for dp in datapoints:
        prompt_ids = build_prompt(dp, spec, v, budget)
        gr = greedy_answer(ckpt, v, prompt_ids, ecc, max_new_tokens)
        body = [i for i in gr.generated_ids if i != ecc]
        preds.append(parse_label(decode(v, body), spec))
        gold = dp[spec.label_field]
        golds.append(float(gold) if spec.kind == SCORE else str(gold))
    return score_predictions(spec, golds, preds)


def results_csv(rows: list[tuple[str, str, str, float | None, float]]) -> str:
    """Rows of (task, epoch, metric, value, missing%) with fixed formatting."""
    lines = ["task,epoch,metric,value,N_missing%"]
    for task, epoch, metric, value, missing in rows:
        val = "" if value is None else f"{value:.6f}"
        lines.append(f"{task},{epoch},{metric},{val},{missing:.2f}")
    return "\n".join(lines) + "\n"
