"""Data transparency: k-gram indexing, provenance search, and overlap rates
between an evaluation set and the indexed training data.
"""

from ctrlkit import corpus, ngram

table = corpus.table_from_names(["news", "wiki"])
train_texts = [
    ("news", "regeringen presenterade en ny budget i riksdagen under onsdagen"),
    ("news", "en ny budget i riksdagen väntas redan i höst enligt källor"),
    ("wiki", "stockholm är sveriges huvudstad och största stad i landet"),
    ("wiki", "göteborg är sveriges andra största stad belägen på västkusten"),
]
docs = [
    corpus.Document(i, text, table[cat], "auto" if i % 2 else "manual",
                    f"https://example.org/{i}")
    for i, (cat, text) in enumerate(train_texts)
]

idx = ngram.build_index(docs, k=5)
print(f"indexed {len(idx)} distinct 5-grams from {len(docs)} documents")
print()

print("-- substring search --")
for query in ("ny budget i riksdagen", "största stad", "helt okänd fras"):
    hits = ngram.search(idx, query)
    print(f"query {query!r}: {len(hits)} hit(s)")
    for h in hits[:3]:
        print(f"    tf={h.tf} [{h.category}/{h.provenance}] {' '.join(h.ngram)}")
print()

print("-- overlap against the index --")
eval_texts = [
    "regeringen presenterade en ny budget i riksdagen under onsdagen",  # seen
    "stockholm är sveriges huvudstad och största stad",                 # seen
    "en helt ny text utan någon överlappning alls med träningsdata",    # unseen
    "för kort",                                                         # < k tokens
]
for threshold in (1, 2):
    res = ngram.overlap(eval_texts, idx, threshold=threshold)
    print(f"  O_{threshold}^{idx.k} = {res.overlap_pct:5.2f}%  "
          f"(short texts: {res.short_text_pct:.1f}%, "
          f"{res.n_grams} k-gram occurrences)")

unique = ngram.overlap(eval_texts, idx, threshold=1, unique=True)
print(f"  unique-type variant: {unique.overlap_pct:.2f}%")
