"""Tokenizer walkthrough: BPE training, round-trips, and control codes.

Trains a small vocabulary, shows how merges are applied at encode time,
and how category control tokens sit on top of the base ids.
"""

from ctrlkit import corpus, tokenizer as T

table = corpus.default_category_table()
print(f"default table: {len(table)} categories, "
      f"{len(table.majors)} major / {len(table.minors)} minor")
print("orphan categories:", [c.name for c in table.orphans])
print("wiki control codes:", table["wiki"].occ_text, "/", table["wiki"].ecc_text)
print("minor example:     ", table["news/sport"].occ_text, "parent:",
      table["news/sport"].parent)
print()

texts = [
    "stockholm är huvudstad i sverige",
    "göteborg ligger på västkusten",
    "huvudstaden har många invånare",
    "sverige har långa vintrar och ljusa somrar",
]
docs = [corpus.Document(i, t, table["wiki"], "manual") for i, t in enumerate(texts)]

vocab = T.train_bpe(docs, fraction=1.0, vocab_size=80)
print(f"trained {vocab.base_size} base tokens, first merges: {vocab.merges[:5]}")

vocab = T.add_control_codes(vocab, table)
print(f"with control codes: {len(vocab)} ids "
      f"(+{2 * len(table)} control, +2 special)")
print("first control id:", min(occ for occ, _ in vocab.control_ids.values()),
      "== base size:", vocab.base_size)
print()

sample = "stockholm har långa vintrar"
ids = T.encode(vocab, sample)
print("encode:", sample)
print("   ids:", ids)
print("tokens:", [T.decode(vocab, [i]) for i in ids])
assert T.decode(vocab, ids) == sample
print("round-trip exact: True")
print()

# Unknown characters fall back to the unk id instead of crashing.
with_unicode = T.encode(vocab, "stockholm Ω")
print("unseen symbol -> unk id:", vocab.unk_id in with_unicode)

# A document framed the way the trainer sees it:
framed = [vocab.occ_id("wiki")] + ids + [vocab.ecc_id("wiki")]
print("framed sequence decodes to:", T.decode(vocab, framed))
