"""Byte-pair-encoding tokenizer with control codes layered on top.

Text is pre-tokenized into alternating non-whitespace and whitespace runs;
both kinds of pieces go through the same merge table, so decoding is an
exact concatenation of token surfaces and round-trips any text whose
characters were seen during training.  No lowercasing and no Unicode
normalization is applied.

Ids ``0 .. base_size-1`` are BPE tokens (alphabet first, sorted by code
point, then merge outputs in training order).  Control-code ids and the
pad/unk specials are appended contiguously on top by
:func:`add_control_codes`.  ``encode`` never emits control or special ids
for plain text; callers splice them in explicitly.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .corpus import CategoryTable, Document

_PIECE_RE = re.compile(r"\S+|\s+")

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# Base vocabulary size of the full-scale setup; control codes and the two
# specials sit on top of this.
FULL_SCALE_VOCAB_SIZE = 256_000


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    """Immutable BPE vocabulary; encode/decode are pure functions over it."""

    merges: tuple[tuple[str, str], ...]
    token_to_id: dict[str, int]
    base_size: int
    pad_id: int | None = None
    unk_id: int | None = None
    control_ids: dict[str, tuple[int, int]] = field(default_factory=dict)
    _id_to_token: dict[int, str] = field(default_factory=dict, repr=False)
    _ranks: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)
    _cache: dict[str, tuple[int, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_id_to_token", {i: t for t, i in self.token_to_id.items()}
        )
        object.__setattr__(
            self, "_ranks", {pair: r for r, pair in enumerate(self.merges)}
        )

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def id_to_token(self, idx: int) -> str:
        try:
            return self._id_to_token[idx]
        except KeyError:
            raise TokenizerError(f"id {idx} out of vocabulary range") from None

    def occ_id(self, category: str) -> int:
        return self.control_ids[category][0]

    def ecc_id(self, category: str) -> int:
        return self.control_ids[category][1]

    @property
    def ecc_ids(self) -> frozenset[int]:
        return frozenset(e for _, e in self.control_ids.values())

    def category_of_ecc_id(self, idx: int) -> str:
        for name, (_, ecc) in self.control_ids.items():
            if ecc == idx:
                return name
        raise TokenizerError(f"id {idx} is not an ECC id")


def _pair_counts(words: dict[tuple[str, ...], int]) -> Counter:
    counts: Counter = Counter()
    for word, freq in words.items():
        for i in range(len(word) - 1):
            counts[word[i], word[i + 1]] += freq
    return counts


def _merge_word(word: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    # Replace non-overlapping occurrences, scanning left to right.
    out = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and (word[i], word[i + 1]) == pair:
            out.append(word[i] + word[i + 1])
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def sample_fraction(docs: list[Document], fraction) -> list[Document]:
    """Deterministic stride sampling: every ceil(1/fraction)-th document."""
    if not 0 < fraction <= 1:
        raise TokenizerError(f"fraction must be in (0, 1], got {fraction}")
    stride = math.ceil(1 / fraction)
    return docs[::stride]


def train_bpe(docs: list[Document], fraction, vocab_size: int) -> Vocab:
    """Learn a merge table of at most ``vocab_size`` base tokens.

    Deterministic: ties in pair frequency break toward the lexicographically
    smallest pair, so identical inputs give a byte-identical vocabulary.
    """
    if not docs:
        raise TokenizerError("cannot train on an empty document list")
    sampled = sample_fraction(docs, fraction)
    words: dict[tuple[str, ...], int] = {}
    piece_counts: Counter = Counter()
    for doc in sampled:
        piece_counts.update(_PIECE_RE.findall(doc.text))
    if not piece_counts:
        raise TokenizerError("sampled text is empty")
    words = {tuple(piece): freq for piece, freq in piece_counts.items()}

    alphabet = sorted({ch for word in words for ch in word})
    if vocab_size < len(alphabet):
        raise TokenizerError(
            f"vocab_size {vocab_size} is below the alphabet size {len(alphabet)}"
        )

    merges: list[tuple[str, str]] = []
    token_to_id = {ch: i for i, ch in enumerate(alphabet)}
    while len(token_to_id) < vocab_size:
        counts = _pair_counts(words)
        if not counts:
            break
        best_count = max(counts.values())
        pair = min(p for p, c in counts.items() if c == best_count)
        merges.append(pair)
        token_to_id[pair[0] + pair[1]] = len(token_to_id)
        words = {_merge_word(w, pair): f for w, f in words.items()}

    return Vocab(
        merges=tuple(merges),
        token_to_id=token_to_id,
        base_size=len(token_to_id),
    )


def _bpe_piece(v: Vocab, piece: str) -> list[str]:
    symbols = list(piece)
    while len(symbols) > 1:
        ranked = [
            (v._ranks[pair], i)
            for i, pair in enumerate(zip(symbols, symbols[1:]))
            if pair in v._ranks
        ]
        if not ranked:
            break
        best_rank = min(r for r, _ in ranked)
        pair = v.merges[best_rank]
        symbols = list(_merge_word(tuple(symbols), pair))
    return symbols


def encode(v: Vocab, text: str) -> list[int]:
    """Greedy merge application in training order; unseen symbols -> unk."""
    ids: list[int] = []
    for piece in _PIECE_RE.findall(text):
        cached = v._cache.get(piece)
        if cached is None:
            piece_ids = []
            for sym in _bpe_piece(v, piece):
                idx = v.token_to_id.get(sym)
                if idx is None:
                    if v.unk_id is None:
                        raise TokenizerError(
                            f"symbol {sym!r} not in vocabulary and no unk token "
                            "registered (call add_control_codes first)"
                        )
                    # Unknown merged symbols cannot occur: merges only produce
                    # known tokens, so this is always a single unseen char.
                    idx = v.unk_id
                piece_ids.append(idx)
            cached = tuple(piece_ids)
            v._cache[piece] = cached
        ids.extend(cached)
    return ids


def decode(v: Vocab, ids: list[int]) -> str:
    """Concatenate token surfaces; whitespace tokens restore spacing exactly."""
    return "".join(v.id_to_token(i) for i in ids)


def add_control_codes(v: Vocab, table: CategoryTable) -> Vocab:
    """Append one OCC and one ECC id per category, then pad and unk.

    Base ids are unchanged; the first control id equals ``base_size``.
    """
    token_to_id = dict(v.token_to_id)
    control_ids: dict[str, tuple[int, int]] = {}
    next_id = v.base_size
    for cat in table:
        for surface in (cat.occ_text, cat.ecc_text):
            if surface in token_to_id:
                raise TokenizerError(
                    f"control token {surface!r} collides with an existing token"
                )
            token_to_id[surface] = next_id
            next_id += 1
        control_ids[cat.name] = (next_id - 2, next_id - 1)
    for surface in (PAD_TOKEN, UNK_TOKEN):
        if surface in token_to_id:
            raise TokenizerError(
                f"special token {surface!r} collides with an existing token"
            )
        token_to_id[surface] = next_id
        next_id += 1
    return Vocab(
        merges=v.merges,
        token_to_id=token_to_id,
        base_size=v.base_size,
        pad_id=next_id - 2,
        unk_id=next_id - 1,
        control_ids=control_ids,
    )


VOCAB_MAGIC = "bpe-v1"


def save_vocab(path, v: Vocab) -> None:
    """Text serialization: header, alphabet, merges, control/special blocks."""
    alphabet = [
        v.id_to_token(i) for i in range(v.base_size - len(v.merges))
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{VOCAB_MAGIC} {v.base_size}\n")
        fh.write(f"alphabet {len(alphabet)}\n")
        for ch in alphabet:
            fh.write(json.dumps(ch, ensure_ascii=False) + "\n")
        fh.write(f"merges {len(v.merges)}\n")
        for left, right in v.merges:
            fh.write(
                json.dumps(left, ensure_ascii=False)
                + "\t"
                + json.dumps(right, ensure_ascii=False)
                + "\n"
            )
        fh.write(f"controls {len(v.control_ids)}\n")
        for name, (occ_id, ecc_id) in v.control_ids.items():
            fh.write(
                json.dumps(name, ensure_ascii=False) + f"\t{occ_id}\t{ecc_id}\n"
            )
        if v.pad_id is not None:
            fh.write(f"specials pad={v.pad_id} unk={v.unk_id}\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0

    def take() -> str:
        nonlocal pos
        line = lines[pos]
        pos += 1
        return line

    magic, base_size_s = take().split(" ")
    if magic != VOCAB_MAGIC:
        raise TokenizerError(f"unsupported vocab format {magic!r}")
    base_size = int(base_size_s)

    _, count_s = take().split(" ")
    alphabet = [json.loads(take()) for _ in range(int(count_s))]
    _, count_s = take().split(" ")
    merges = []
    for _ in range(int(count_s)):
        left_s, right_s = take().split("\t")
        merges.append((json.loads(left_s), json.loads(right_s)))
    token_to_id = {ch: i for i, ch in enumerate(alphabet)}
    for left, right in merges:
        token_to_id[left + right] = len(token_to_id)
    if len(token_to_id) != base_size:
        raise TokenizerError("vocab file is inconsistent with its header")

    _, count_s = take().split(" ")
    control_ids: dict[str, tuple[int, int]] = {}
    from .corpus import ecc_text, occ_text  # avoid cycle at module import

    for _ in range(int(count_s)):
        name_s, occ_s, ecc_s = take().split("\t")
        name = json.loads(name_s)
        occ_id, ecc_id = int(occ_s), int(ecc_s)
        token_to_id[occ_text(name)] = occ_id
        token_to_id[ecc_text(name)] = ecc_id
        control_ids[name] = (occ_id, ecc_id)

    pad_id = unk_id = None
    if pos < len(lines) and lines[pos].startswith("specials "):
        fields = dict(kv.split("=") for kv in take().split(" ")[1:])
        pad_id, unk_id = int(fields["pad"]), int(fields["unk"])
        token_to_id[PAD_TOKEN] = pad_id
        token_to_id[UNK_TOKEN] = unk_id

    expected = base_size + 2 * len(control_ids) + (2 if pad_id is not None else 0)
    ids = list(token_to_id.values())
    if len(token_to_id) != expected or len(set(ids)) != len(ids):
        raise TokenizerError("vocab file has colliding or missing token ids")

    return Vocab(
        merges=tuple(merges),
        token_to_id=token_to_id,
        base_size=base_size,
        pad_id=pad_id,
        unk_id=unk_id,
        control_ids=control_ids,
    )
