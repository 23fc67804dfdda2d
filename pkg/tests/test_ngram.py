import numpy as np
import pytest

from ctrlkit import corpus, ngram


def docs_from_texts(texts, category="alpha"):
    table = corpus.table_from_names(["alpha", "beta"])
    return [
        corpus.Document(i, t, table[category], "manual", f"http://x/{i}")
        for i, t in enumerate(texts)
    ]


def brute_force_counts(texts, k):
    counts, postings = {}, {}
    for doc_id, text in enumerate(texts):
        words = text.split()
        for i in range(len(words) - k + 1):
            ng = tuple(words[i:i + k])
            counts[ng] = counts.get(ng, 0) + 1
            postings.setdefault(ng, set()).add(doc_id)
    return counts, postings


def brute_force_overlap(eval_texts, train_texts, k, threshold):
    counts, _ = brute_force_counts(train_texts, k)
    total, hits, short = 0, 0, 0
    for text in eval_texts:
        words = text.split()
        if len(words) < k:
            short += 1
            continue
        for i in range(len(words) - k + 1):
            total += 1
            if counts.get(tuple(words[i:i + k]), 0) >= threshold:
                hits += 1
    pct = 100.0 * hits / total if total else 0.0
    short_pct = 100.0 * short / len(eval_texts) if eval_texts else 0.0
    return pct, short_pct


def random_texts(rng, n, vocab=20, max_len=25):
    words = [f"w{i}" for i in range(vocab)]
    return [
        " ".join(rng.choice(words, size=rng.integers(1, max_len)))
        for _ in range(n)
    ]


class TestBuildIndex:
    def test_thirteen_word_doc_single_entry(self):
        text = " ".join(f"w{i}" for i in range(13))
        idx = ngram.build_index(docs_from_texts([text]), k=13)
        assert len(idx) == 1
        assert idx.tf(tuple(text.split())) == 1

    def test_duplicate_document_doubles_tf(self):
        text = "x y z x y"
        idx = ngram.build_index(docs_from_texts([text, text]), k=3)
        ng = ("x", "y", "z")
        tf, postings = idx.entries[ng]
        assert tf == 2
        assert postings == (0, 1)

    def test_matches_brute_force_recount(self):
        rng = np.random.default_rng(0)
        texts = random_texts(rng, 200)
        for k in (2, 5):
            idx = ngram.build_index(docs_from_texts(texts), k=k)
            counts, postings = brute_force_counts(texts, k)
            assert set(idx.entries) == set(counts)
            for ng, (tf, post) in idx.entries.items():
                assert tf == counts[ng]
                assert post == tuple(sorted(postings[ng]))

    def test_k_below_one_rejected(self):
        with pytest.raises(ngram.NGramIndexError):
            ngram.build_index([], k=0)


class TestOverlap:
    def test_indexed_text_full_overlap(self):
        text = "a b c d e f g h i j"
        idx = ngram.build_index(docs_from_texts([text]), k=7)
        res = ngram.overlap([text], idx, threshold=1)
        assert res.overlap_pct == 100.0

    def test_hand_enumeration_half(self):
        # Eval text has two 7-grams; the index holds only the first.
        idx = ngram.build_index(docs_from_texts(["a b c d e f g"]), k=7)
        res = ngram.overlap(["a b c d e f g h"], idx, threshold=1)
        assert res.overlap_pct == 50.0

    def test_short_texts_reported_separately(self):
        idx = ngram.build_index(docs_from_texts(["a b c d e f g"]), k=7)
        res = ngram.overlap(["a b", "a b c d e f g"], idx, threshold=1)
        assert res.short_text_pct == 50.0
        assert res.overlap_pct == 100.0  # only the long text counts

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        train = random_texts(rng, 100, vocab=8)
        eval_texts = random_texts(rng, 30, vocab=8)
        idx = ngram.build_index(docs_from_texts(train), k=2)
        values = [ngram.overlap(eval_texts, idx, threshold=f).overlap_pct
                  for f in (1, 10, 100)]
        assert values[0] >= values[1] >= values[2]

    def test_matches_brute_force_on_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            train = random_texts(rng, 40, vocab=10)
            eval_texts = random_texts(rng, 15, vocab=10)
            k = int(rng.choice([2, 7, 13]))
            f = int(rng.choice([1, 10, 100]))
            idx = ngram.build_index(docs_from_texts(train), k=k)
            res = ngram.overlap(eval_texts, idx, threshold=f)
            pct, short = brute_force_overlap(eval_texts, train, k, f)
            assert res.overlap_pct == pct
            assert res.short_text_pct == short

    def test_unique_type_variant(self):
        # "a b" occurs twice in the eval text but is one type.
        idx = ngram.build_index(docs_from_texts(["a b"]), k=2)
        eval_texts = ["a b a b c"]  # bigrams: ab, ba, ab, bc
        multiset = ngram.overlap(eval_texts, idx, threshold=1)
        unique = ngram.overlap(eval_texts, idx, threshold=1, unique=True)
        assert multiset.overlap_pct == 50.0
        assert unique.overlap_pct == pytest.approx(100.0 / 3)


class TestSearch:
    def test_exact_indexed_ngram(self):
        text = " ".join(f"w{i}" for i in range(13))
        idx = ngram.build_index(docs_from_texts([text]), k=13)
        hits = ngram.search(idx, text)
        assert len(hits) == 1
        assert hits[0].category == "alpha"
        assert hits[0].provenance == "manual"
        assert hits[0].url == "http://x/0"

    def test_substring_of_indexed_ngram(self):
        text = " ".join(f"w{i}" for i in range(13))
        idx = ngram.build_index(docs_from_texts([text]), k=13)
        hits = ngram.search(idx, "w3 w4 w5")
        assert len(hits) == 1
        assert hits[0].ngram == tuple(text.split())

    def test_absent_query_empty(self):
        idx = ngram.build_index(docs_from_texts(["a b c d"]), k=2)
        assert ngram.search(idx, "zz qq") == []

    def test_word_order_respected(self):
        idx = ngram.build_index(docs_from_texts(["a b c"]), k=3)
        assert ngram.search(idx, "b a") == []
        assert len(ngram.search(idx, "a b")) == 1

    def test_large_corpus_uses_word_index(self):
        rng = np.random.default_rng(3)
        texts = random_texts(rng, 150, vocab=30)
        idx = ngram.build_index(docs_from_texts(texts), k=3)
        assert len(idx) >= 64  # exercises the inverted-index path
        query = texts[0].split()[:2]
        hits = ngram.search(idx, " ".join(query))
        assert all(
            any(h.ngram[i:i + 2] == tuple(query) for i in range(len(h.ngram) - 1))
            for h in hits
        )
        assert hits  # the query came from an indexed document

    def test_stable_across_rebuilds(self):
        rng = np.random.default_rng(4)
        texts = random_texts(rng, 80, vocab=12)
        a = ngram.build_index(docs_from_texts(texts), k=2)
        b = ngram.build_index(docs_from_texts(texts), k=2)
        assert ngram.search(a, "w1 w2") == ngram.search(b, "w1 w2")


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        texts = random_texts(rng, 30, vocab=10)
        idx = ngram.build_index(docs_from_texts(texts), k=3)
        path = tmp_path / "idx.jsonl"
        ngram.save_index(path, idx)
        loaded = ngram.load_index(path)
        assert loaded.k == idx.k
        assert loaded.entries == idx.entries
        assert loaded.doc_meta == idx.doc_meta

    def test_byte_identical_rewrite(self, tmp_path):
        texts = ["a b c d", "b c d e"]
        idx = ngram.build_index(docs_from_texts(texts), k=2)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        ngram.save_index(p1, idx)
        ngram.save_index(p2, ngram.load_index(p1))
        assert p1.read_bytes() == p2.read_bytes()
