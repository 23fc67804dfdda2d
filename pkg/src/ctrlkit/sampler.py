"""Autoregressive decoding: temperature, nucleus, and repetition penalty.

The distribution transforms apply in a fixed order: repetition penalty,
temperature, softmax, nucleus truncation.  Free generation stops at any
registered ending control code; greedy task decoding stops only at the
task's own ECC and can block it at the first step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model as M
from .tokenizer import Vocab, encode


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingParams:
    """temperature=0 selects the deterministic greedy path."""

    temperature: float = 1.0
    nucleus_p: float = 1.0
    repetition_penalty: float = 1.0
    max_new_tokens: int = 128
    rng_seed: int = 0
    block_first_ecc: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 1.0:
            raise SamplingError(f"temperature must be in [0, 1], got {self.temperature}")
        if not 0.0 < self.nucleus_p <= 1.0:
            raise SamplingError(f"nucleus_p must be in (0, 1], got {self.nucleus_p}")
        if not 1.0 <= self.repetition_penalty <= 2.0:
            raise SamplingError(
                f"repetition_penalty must be in [1, 2], got {self.repetition_penalty}"
            )
        if self.max_new_tokens < 0:
            raise SamplingError("max_new_tokens must be nonnegative")


# Hyper-parameter combinations that performed well across categories, plus
# the default settings used when comparing against GPT-3 generations.
PRESETS: dict[str, SamplingParams] = {
    "M1": SamplingParams(repetition_penalty=1.6, nucleus_p=0.8),
    "M2": SamplingParams(repetition_penalty=1.4, nucleus_p=0.9),
    "M3": SamplingParams(repetition_penalty=1.0, nucleus_p=0.9),
    "GPT3": SamplingParams(temperature=0.7, nucleus_p=1.0,
                           repetition_penalty=1.0, max_new_tokens=256),
}


def preset(name: str, **overrides) -> SamplingParams:
    try:
        base = PRESETS[name]
    except KeyError:
        raise SamplingError(f"unknown preset {name!r}; choose from M1, M2, M3") from None
    return replace(base, **overrides)


STOP_ECC = "ecc_reached"
STOP_MAX = "max_length"


@dataclass(frozen=True)
class GenerationResult:
    prompt_ids: tuple[int, ...]
    generated_ids: tuple[int, ...]
    stop_reason: str  # STOP_ECC | STOP_MAX
    ecc_id: int | None = None


def apply_repetition_penalty(
    logits: np.ndarray, context_ids, r: float
) -> np.ndarray:
    """Divide positive logits of context tokens by r, multiply negative ones.

    Multiplying (not dividing) negatives keeps the penalty a penalty for
    tokens the model already disfavors.
    """
    out = logits.astype(np.float64, copy=True)
    if r == 1.0 or not context_ids:
        return out
    idx = np.fromiter(set(context_ids), dtype=np.int64)
    vals = out[idx]
    out[idx] = np.where(vals > 0, vals / r, vals * r)
    return out


def adjust_distribution(
    logits: np.ndarray, context_ids, sp: SamplingParams
) -> np.ndarray:
    """Probability vector after penalty -> temperature -> softmax -> nucleus.

    The output sums to 1 and is supported only on the nucleus set; the top
    token is always kept.  temperature=0 is served by the greedy path, not
    here.
    """
    if sp.temperature == 0.0:
        raise SamplingError("temperature 0 is greedy decoding; use the greedy path")
    if not np.all(np.isfinite(logits)):
        raise SamplingError("logits must be finite")
    scores = apply_repetition_penalty(logits, context_ids, sp.repetition_penalty)
    scores /= sp.temperature
    shifted = scores - scores.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    if sp.nucleus_p >= 1.0:
        return probs
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    cutoff = int(np.searchsorted(cum, sp.nucleus_p)) + 1  # smallest prefix >= p
    keep = order[:max(cutoff, 1)]
    nucleus = np.zeros_like(probs)
    nucleus[keep] = probs[keep]
    nucleus /= nucleus.sum()
    return nucleus


def _greedy_pick(logits: np.ndarray, context_ids, r: float) -> int:
    scores = apply_repetition_penalty(logits, context_ids, r)
    return int(np.argmax(scores))


def generate(
    ckpt: M.Checkpoint,
    v: Vocab,
    prompt: str,
    occ: str,
    sp: SamplingParams,
) -> GenerationResult:
    """Sample a continuation of OCC + prompt until an ECC or the budget.

    The context window slides once filled; the repetition set covers every
    id seen so far, prompt included.  Any registered ECC stops decoding.
    """
    if occ not in v.control_ids:
        raise SamplingError(f"category {occ!r} has no control codes in the vocab")
    prompt_ids = [v.occ_id(occ)] + encode(v, prompt)
    return generate_ids(ckpt, v, prompt_ids, sp, stop_ids=v.ecc_ids)


def generate_ids(
    ckpt: M.Checkpoint,
    v: Vocab,
    prompt_ids: list[int],
    sp: SamplingParams,
    stop_ids: frozenset[int],
) -> GenerationResult:
    n = ckpt.config.context
    if len(prompt_ids) > n:
        raise SamplingError(
            f"prompt of {len(prompt_ids)} tokens exceeds the context window {n}"
        )
    rng = np.random.default_rng(sp.rng_seed)
    context = list(prompt_ids)
    generated: list[int] = []
    stop_reason, ecc_id = STOP_MAX, None
    for step in range(sp.max_new_tokens):
        window = context[-n:]
        logits = M.forward(ckpt, window)[-1]
        blocked = sp.block_first_ecc if step == 0 else None
        if sp.temperature == 0.0:
            if blocked is not None:
                logits = logits.astype(np.float64, copy=True)
                logits[blocked] = -np.inf
            nxt = _greedy_pick(logits, context, sp.repetition_penalty)
        else:
            probs = adjust_distribution(logits, context, sp)
            if blocked is not None:
                probs[blocked] = 0.0
                total = probs.sum()
                if total == 0.0:  # blocked token was the whole nucleus
                    probs = adjust_distribution(logits, context, replace(sp, nucleus_p=1.0))
                    probs[blocked] = 0.0
                    total = probs.sum()
                probs /= total
            nxt = int(rng.choice(len(probs), p=probs))
        context.append(nxt)
        generated.append(nxt)
        if nxt in stop_ids:
            stop_reason, ecc_id = STOP_ECC, nxt
            break
    return GenerationResult(
        prompt_ids=tuple(prompt_ids),
        generated_ids=tuple(generated),
        stop_reason=stop_reason,
        ecc_id=ecc_id,
    )


def greedy_answer(
    ckpt: M.Checkpoint,
    v: Vocab,
    prompt_ids: list[int],
    task_ecc: int,
    max_new_tokens: int,
) -> GenerationResult:
    """Pure argmax decoding for task evaluation.

    The task ECC is masked at the first step so the model cannot answer with
    an immediate end marker; decoding stops at that ECC or at the budget.
    """
    n = ckpt.config.context
    if len(prompt_ids) > n:
        raise SamplingError(
            f"prompt of {len(prompt_ids)} tokens exceeds the context window {n}"
        )
    context = list(prompt_ids)
    generated: list[int] = []
    stop_reason, ecc_id = STOP_MAX, None
    for step in range(max_new_tokens):
        window = context[-n:]
        logits = M.forward(ckpt, window)[-1].astype(np.float64, copy=True)
        if step == 0:
            logits[task_ecc] = -np.inf
        nxt = int(np.argmax(logits))
        context.append(nxt)
        generated.append(nxt)
        if nxt == task_ecc:
            stop_reason, ecc_id = STOP_ECC, nxt
            break
    return GenerationResult(
        prompt_ids=tuple(prompt_ids),
        generated_ids=tuple(generated),
        stop_reason=stop_reason,
        ecc_id=ecc_id,
    )
