"""Decoder-only transformer with tied embeddings, in plain numpy.

Architecture: token embedding scaled by sqrt(d) plus sinusoidal positional
encodings, pre-norm blocks (self-attention then GELU feed-forward, both with
residual connections), a final layer norm, and an output projection tied to
the token embedding.  Attention logits are scaled by 1/sqrt(d/H).

Forward and backward passes are written out explicitly; the backward pass is
validated against central finite differences in the test suite.  Training
and evaluation run in float32, gradient checks in float64.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
INIT_STD = 0.02

# Output projection reuses the embedding storage (transposed view).
ALIASES = {"lm_head": "tok_emb"}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    heads: int
    model_dim: int
    inner_dim: int
    context: int
    vocab_size: int

    def __post_init__(self):
        for name in ("layers", "heads", "model_dim", "inner_dim", "context", "vocab_size"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be positive")
        if self.model_dim % self.heads != 0:
            raise ModelError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if self.context < 2:
            raise ModelError("context must be at least 2")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


def full_scale_config(vocab_size: int = 256_076) -> ModelConfig:
    """Published preset: 48 layers, 16 heads, d=640, f=4096, n=256.

    The default vocab covers 256000 BPE tokens plus 74 control and 2
    special ids for the bundled 37-category table.
    """
    return ModelConfig(
        layers=48, heads=16, model_dim=640, inner_dim=4096, context=256,
        vocab_size=vocab_size,
    )


def toy_config(vocab_size: int = 50) -> ModelConfig:
    """Small configuration used throughout the tests."""
    return ModelConfig(
        layers=2, heads=2, model_dim=8, inner_dim=16, context=16,
        vocab_size=vocab_size,
    )


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Named trainable tensors, tied embedding listed once."""
    d, f = config.model_dim, config.inner_dim
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (config.vocab_size, d)}
    for i in range(config.layers):
        p = f"h{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + w] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[p + "attn." + b] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "ffn.w1"] = (d, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, d)
        shapes[p + "ffn.b2"] = (d,)
    shapes["lnf.g"] = (d,)
    shapes["lnf.b"] = (d,)
    return shapes


def param_count(config: ModelConfig) -> int:
    """Exact number of trainable scalars, counting the tied embedding once."""
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


@dataclass
class Checkpoint:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0

    @property
    def dtype(self):
        return self.weights["tok_emb"].dtype

    def copy(self) -> "Checkpoint":
        weights = {n: self.weights[n].copy() for n in param_shapes(self.config)}
        _attach_aliases(weights)
        return Checkpoint(self.config, weights, self.step, self.seed)


def _attach_aliases(weights: dict[str, np.ndarray]) -> None:
    for alias, target in ALIASES.items():
        weights[alias] = weights[target].T


def init_model(config: ModelConfig, seed: int, dtype=np.float32) -> Checkpoint:
    """Deterministic initialization: normal(0, 0.02) matrices, zero biases,
    unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            weights[name] = np.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            weights[name] = np.zeros(shape, dtype=dtype)
        else:
            weights[name] = rng.normal(0.0, INIT_STD, size=shape).astype(dtype)
    _attach_aliases(weights)
    return Checkpoint(config=config, weights=weights, step=0, seed=seed)


def positional_encoding(context: int, model_dim: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(context, dtype=np.float64)[:, None]
    dim = np.arange(0, model_dim, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / model_dim)
    pe = np.zeros((context, model_dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + LN_EPS)
    xhat = (x - mu) / std
    return g * xhat + b, (xhat, std)


def _layer_norm_backward(dy, g, cache):
    xhat, std = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxhat = dy * g
    dx = (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    ) / std
    return dx, dg, db


def _split_heads(x, heads):
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def _forward_batch(ckpt: Checkpoint, ids: np.ndarray, keep_cache: bool):
    """Run the model on a (batch, time) id array.

    Returns (logits, cache); cache is None unless ``keep_cache``.
    """
    cfg, W = ckpt.config, ckpt.weights
    b, t = ids.shape
    if t < 1 or t > cfg.context:
        raise ModelError(
            f"sequence length {t} outside the context window 1..{cfg.context}"
        )
    dtype = ckpt.dtype
    scale = np.asarray(np.sqrt(cfg.model_dim), dtype=dtype)
    pe = positional_encoding(t, cfg.model_dim, dtype=dtype)
    x = scale * W["tok_emb"][ids] + pe

    causal = np.tril(np.ones((t, t), dtype=bool))
    att_scale = 1.0 / np.sqrt(cfg.head_dim)
    layer_caches = []
    for i in range(cfg.layers):
        p = f"h{i}."
        h, ln1_cache = _layer_norm(x, W[p + "ln1.g"], W[p + "ln1.b"])
        q = _split_heads(h @ W[p + "attn.wq"] + W[p + "attn.bq"], cfg.heads)
        k = _split_heads(h @ W[p + "attn.wk"] + W[p + "attn.bk"], cfg.heads)
        v = _split_heads(h @ W[p + "attn.wv"] + W[p + "attn.bv"], cfg.heads)
        scores = (q @ k.swapaxes(-1, -2)) * att_scale
        scores = np.where(causal, scores, -np.inf)
        attn = _softmax(scores)
        ctx = _merge_heads(attn @ v)
        a_out = ctx @ W[p + "attn.wo"] + W[p + "attn.bo"]
        x_attn = x + a_out

        h2, ln2_cache = _layer_norm(x_attn, W[p + "ln2.g"], W[p + "ln2.b"])
        z1 = h2 @ W[p + "ffn.w1"] + W[p + "ffn.b1"]
        act = gelu(z1)
        ff = act @ W[p + "ffn.w2"] + W[p + "ffn.b2"]
        x_next = x_attn + ff

        if keep_cache:
            layer_caches.append(
                dict(h=h, ln1=ln1_cache, q=q, k=k, v=v, attn=attn, ctx=ctx,
                     x_attn=x_attn, h2=h2, ln2=ln2_cache, z1=z1, act=act)
            )
        x = x_next

    hf, lnf_cache = _layer_norm(x, W["lnf.g"], W["lnf.b"])
    logits = hf @ W["lm_head"]
    cache = None
    if keep_cache:
        cache = dict(ids=ids, layers=layer_caches, hf=hf, lnf=lnf_cache,
                     scale=scale)
    return logits, cache


def _backward_batch(ckpt: Checkpoint, dlogits: np.ndarray, cache) -> dict[str, np.ndarray]:
    cfg, W = ckpt.config, ckpt.weights
    ids = cache["ids"]
    b, t = ids.shape
    att_scale = 1.0 / np.sqrt(cfg.head_dim)
    grads = {n: np.zeros_like(W[n]) for n in param_shapes(cfg)}

    hf = cache["hf"]
    grads["tok_emb"] += np.einsum("btv,btd->vd", dlogits, hf)
    dhf = dlogits @ W["tok_emb"]
    dx, dg, db = _layer_norm_backward(dhf, W["lnf.g"], cache["lnf"])
    grads["lnf.g"] += dg
    grads["lnf.b"] += db

    for i in reversed(range(cfg.layers)):
        p = f"h{i}."
        c = cache["layers"][i]

        # Feed-forward residual branch.
        dff = dx
        grads[p + "ffn.w2"] += np.einsum("btf,btd->fd", c["act"], dff)
        grads[p + "ffn.b2"] += dff.sum(axis=(0, 1))
        dact = dff @ W[p + "ffn.w2"].T
        dz1 = dact * gelu_grad(c["z1"])
        grads[p + "ffn.w1"] += np.einsum("btd,btf->df", c["h2"], dz1)
        grads[p + "ffn.b1"] += dz1.sum(axis=(0, 1))
        dh2 = dz1 @ W[p + "ffn.w1"].T
        dx_attn, dg, db = _layer_norm_backward(dh2, W[p + "ln2.g"], c["ln2"])
        grads[p + "ln2.g"] += dg
        grads[p + "ln2.b"] += db
        dx_attn = dx_attn + dx  # residual

        # Attention residual branch.
        da_out = dx_attn
        grads[p + "attn.wo"] += np.einsum("btd,bte->de", c["ctx"], da_out)
        grads[p + "attn.bo"] += da_out.sum(axis=(0, 1))
        dctx = _split_heads(da_out @ W[p + "attn.wo"].T, cfg.heads)
        dattn = dctx @ c["v"].swapaxes(-1, -2)
        dv = c["attn"].swapaxes(-1, -2) @ dctx
        # Softmax backward; masked columns have attn=0 so their grad is 0.
        dscores = c["attn"] * (
            dattn - (dattn * c["attn"]).sum(axis=-1, keepdims=True)
        )
        dq = (dscores @ c["k"]) * att_scale
        dk = (dscores.swapaxes(-1, -2) @ c["q"]) * att_scale

        dh = np.zeros_like(c["h"])
        for name, dproj in (("wq", dq), ("wk", dk), ("wv", dv)):
            dproj = _merge_heads(dproj)
            grads[p + "attn." + name] += np.einsum("btd,bte->de", c["h"], dproj)
            grads[p + "attn.b" + name[1]] += dproj.sum(axis=(0, 1))
            dh += dproj @ W[p + "attn." + name].T
        dx_ln1, dg, db = _layer_norm_backward(dh, W[p + "ln1.g"], c["ln1"])
        grads[p + "ln1.g"] += dg
        grads[p + "ln1.b"] += db
        dx = dx_attn + dx_ln1

    # Embedding lookup: x0 = sqrt(d) * E[ids] + PE.
    demb = cache["scale"] * dx
    np.add.at(grads["tok_emb"], ids.reshape(-1), demb.reshape(-1, cfg.model_dim))
    return grads


def forward(ckpt: Checkpoint, ids) -> np.ndarray:
    """Logits for one sequence, shape (len(ids), vocab_size).

    Pure and read-only: repeated calls on the same checkpoint agree bitwise.
    Row i depends only on ids[0..i].
    """
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1:
        raise ModelError("forward expects a flat id sequence")
    if arr.size == 0:
        raise ModelError("forward expects at least one token")
    if np.any(arr < 0) or np.any(arr >= ckpt.config.vocab_size):
        raise ModelError("token id outside the vocabulary range")
    logits, _ = _forward_batch(ckpt, arr[None, :], keep_cache=False)
    return logits[0]


def batch_loss(
    ckpt: Checkpoint,
    ids: np.ndarray,
    mask: np.ndarray,
    compute_grads: bool = True,
):
    """Mean next-token NLL over unmasked target positions.

    ``ids`` and ``mask`` are (batch, time); position i+1 is a prediction
    target iff mask[i+1] is set.  Returns (loss, grads) with grads=None when
    ``compute_grads`` is false.
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if ids.ndim == 1:
        ids, mask = ids[None, :], mask[None, :]
    target_mask = mask[:, 1:]
    n_targets = int(target_mask.sum())
    if n_targets == 0:
        raise ModelError("no unmasked target positions in the batch")

    logits, cache = _forward_batch(ckpt, ids, keep_cache=compute_grads)
    pred = logits[:, :-1, :]
    logz = pred - (
        np.max(pred, axis=-1, keepdims=True)
        + np.log(np.sum(np.exp(pred - np.max(pred, axis=-1, keepdims=True)),
                        axis=-1, keepdims=True))
    )
    b_idx, t_idx = np.nonzero(target_mask)
    targets = ids[:, 1:][b_idx, t_idx]
    loss = -float(logz[b_idx, t_idx, targets].mean())

    if not compute_grads:
        return loss, None

    probs = np.exp(logz)
    dpred = np.zeros_like(logits[:, :-1, :])
    dpred[b_idx, t_idx] = probs[b_idx, t_idx]
    dpred[b_idx, t_idx, targets] -= 1.0
    dpred /= n_targets
    dlogits = np.concatenate(
        [dpred, np.zeros_like(logits[:, :1, :])], axis=1
    )
    grads = _backward_batch(ckpt, dlogits, cache)
    return loss, grads


CKPT_MAGIC = "ctrlkit-ckpt-1"


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Versioned binary format: JSON header, then little-endian float32
    tensors in manifest order.  Aliased tensors are stored once."""
    names = list(param_shapes(ckpt.config))
    for n in names:
        if ckpt.weights[n].dtype != np.float32:
            raise ModelError(
                f"checkpoint format stores float32 tensors; {n} has dtype "
                f"{ckpt.weights[n].dtype}"
            )
    header = {
        "config": asdict(ckpt.config),
        "step": ckpt.step,
        "seed": ckpt.seed,
        "tensors": [[n, list(ckpt.weights[n].shape)] for n in names],
        "aliases": ALIASES,
    }
    with open(path, "wb") as fh:
        fh.write((CKPT_MAGIC + "\n").encode("ascii"))
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for n in names:
            fh.write(np.ascontiguousarray(ckpt.weights[n], dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").strip()
        if magic != CKPT_MAGIC:
            raise ModelError(f"unsupported checkpoint format {magic!r}")
        header = json.loads(fh.readline().decode("utf-8"))
        config = ModelConfig(**header["config"])
        weights: dict[str, np.ndarray] = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape))
            buf = fh.read(count * 4)
            if len(buf) != count * 4:
                raise ModelError(f"checkpoint truncated while reading {name}")
            weights[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    _attach_aliases(weights)
    return Checkpoint(config=config, weights=weights,
                      step=header["step"], seed=header["seed"])
