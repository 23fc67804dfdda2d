"""Language-model training on OCC + text + ECC sequences.

Documents are framed with their category's opening and ending control codes
and chunked into fixed windows that never cross document boundaries.  The
optimizer is AdamW with decoupled weight decay and global-norm gradient
clipping; given a seed, training is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model as M
from .corpus import Document
from .tokenizer import Vocab, encode

# Prime seed used for reproducible fine-tuning runs.
DEFAULT_SEED = 87_178_291_199


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 4
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float = 1.0
    weight_decay: float = 0.01
    epochs: int = 1
    seed: int = DEFAULT_SEED


@dataclass(frozen=True)
class Window:
    """One fixed-length training window; pad positions carry mask=False."""

    ids: np.ndarray
    mask: np.ndarray

    @property
    def real_length(self) -> int:
        return int(self.mask.sum())


def pack_sequence(doc: Document, v: Vocab, n: int) -> list[Window]:
    """OCC + encode(text) + ECC, chunked into windows of length <= n.

    The last window is padded with pad_id; padded positions are excluded
    from the loss.  Windows never cross document boundaries.
    """
    if doc.category.name not in v.control_ids:
        raise TrainingError(
            f"category {doc.category.name!r} has no control codes in the vocab"
        )
    occ, ecc = v.control_ids[doc.category.name]
    seq = [occ] + encode(v, doc.text) + [ecc]
    return pack_ids(seq, v, n)


def pack_ids(seq: list[int], v: Vocab, n: int) -> list[Window]:
    """Chunk an id sequence into padded windows of length n."""
    if v.pad_id is None:
        raise TrainingError("vocabulary has no pad token")
    windows = []
    for start in range(0, len(seq), n):
        chunk = seq[start:start + n]
        ids = np.full(n, v.pad_id, dtype=np.int64)
        mask = np.zeros(n, dtype=bool)
        ids[: len(chunk)] = chunk
        mask[: len(chunk)] = True
        windows.append(Window(ids=ids, mask=mask))
    return windows


def lm_loss(ckpt: M.Checkpoint, window: Window) -> float:
    """Mean negative log-likelihood of next tokens over unmasked positions."""
    loss, _ = M.batch_loss(ckpt, window.ids, window.mask, compute_grads=False)
    return loss


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so the global norm is <= max_norm."""
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                        for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class AdamW:
    """AdamW with decoupled weight decay, matching the usual formulation:
    p *= (1 - lr*wd); p -= lr * mhat / (sqrt(vhat) + eps)."""

    def __init__(self, params: dict[str, np.ndarray], tc: TrainingConfig):
        self.tc = tc
        self.t = 0
        self.m = {n: np.zeros_like(p) for n, p in params.items()}
        self.v = {n: np.zeros_like(p) for n, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        tc = self.tc
        self.t += 1
        bc1 = 1.0 - tc.beta1 ** self.t
        bc2 = 1.0 - tc.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= tc.beta1
            m += (1.0 - tc.beta1) * g
            v *= tc.beta2
            v += (1.0 - tc.beta2) * g * g
            if tc.weight_decay:
                p *= 1.0 - tc.lr * tc.weight_decay
            p -= tc.lr * (m / bc1) / (np.sqrt(v / bc2) + tc.eps)


def windows_from_docs(docs: list[Document], v: Vocab, n: int) -> list[Window]:
    windows: list[Window] = []
    for doc in docs:
        windows.extend(pack_sequence(doc, v, n))
    return windows


def train(
    ckpt: M.Checkpoint,
    docs: list[Document],
    v: Vocab,
    tc: TrainingConfig,
    windows: list[Window] | None = None,
) -> list[M.Checkpoint]:
    """Train in place and return one checkpoint copy per epoch.

    Deterministic given tc.seed: the only randomness is the per-epoch
    shuffle.  Non-finite loss aborts with the offending step.
    """
    if windows is None:
        if not docs:
            raise TrainingError("no documents to train on")
        windows = windows_from_docs(docs, v, ckpt.config.context)
    if not windows:
        raise TrainingError("no training windows")

    trainable = {n: ckpt.weights[n] for n in M.param_shapes(ckpt.config)}
    opt = AdamW(trainable, tc)
    rng = np.random.default_rng(tc.seed)
    checkpoints: list[M.Checkpoint] = []
    step = ckpt.step
    for _ in range(tc.epochs):
        order = rng.permutation(len(windows))
        for start in range(0, len(order), tc.batch_size):
            batch = [windows[i] for i in order[start:start + tc.batch_size]]
            ids = np.stack([w.ids for w in batch])
            mask = np.stack([w.mask for w in batch])
            loss, grads = M.batch_loss(ckpt, ids, mask)
            if not np.isfinite(loss):
                raise TrainingDiverged(step, loss)
            clip_global_norm(grads, tc.grad_clip_norm)
            opt.step(trainable, grads)
            step += 1
        ckpt.step = step
        checkpoints.append(ckpt.copy())
    return checkpoints


def mean_epoch_loss(ckpt: M.Checkpoint, windows: list[Window],
                    batch_size: int = 16) -> float:
    """Dataset mean NLL, weighting every target position equally."""
    total, count = 0.0, 0
    for start in range(0, len(windows), batch_size):
        batch = windows[start:start + batch_size]
        ids = np.stack([w.ids for w in batch])
        mask = np.stack([w.mask for w in batch])
        n_targets = int(mask[:, 1:].sum())
        loss, _ = M.batch_loss(ckpt, ids, mask, compute_grads=False)
        total += loss * n_targets
        count += n_targets
    return total / count


def parse_training_config(path) -> TrainingConfig:
    """Read a key=value file mirroring TrainingConfig fields."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    tc = TrainingConfig()
    kwargs = {}
    for key, val in values.items():
        if not hasattr(tc, key):
            raise TrainingError(f"unknown training config key {key!r}")
        current = getattr(tc, key)
        kwargs[key] = type(current)(val) if not isinstance(current, float) else float(val)
    return replace(tc, **kwargs)
