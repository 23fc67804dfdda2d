import pytest

from ctrlkit import corpus


class TestDefaultTable:
    def test_has_37_categories(self):
        table = corpus.default_category_table()
        assert len(table) == 37

    def test_published_counts(self):
        table = corpus.default_category_table()
        assert table["news"].documents == 1_629_526
        assert table["wiki"].documents == 412_421
        assert table["blogs/tech"].documents == 0

    def test_orphan_flag(self):
        table = corpus.default_category_table()
        assert table.orphans == (table["blogs/tech"],)
        assert table["blogs/tech"].is_orphan
        assert not table["news"].is_orphan

    def test_major_minor_split(self):
        # 11 single-word top-level categories carry the major flag,
        # literature and simple included; the remaining 26 are minor.
        table = corpus.default_category_table()
        majors = {c.name for c in table.majors}
        assert majors == {
            "news", "wiki", "forum", "blogs", "ads", "admin", "debate",
            "info", "review", "literature", "simple",
        }
        assert len(table.minors) == 26

    def test_control_codes_bijective(self):
        table = corpus.default_category_table()
        occs = [c.occ_text for c in table]
        eccs = [c.ecc_text for c in table]
        assert len(set(occs)) == len(table)
        assert len(set(eccs)) == len(table)
        assert not set(occs) & set(eccs)

    def test_ecc_is_occ_plus_dollar(self):
        table = corpus.default_category_table()
        for c in table:
            assert c.ecc_text == c.occ_text + "$"
        assert table["wiki"].ecc_text == ":wiki:$"
        assert table["news/sport"].occ_text == ":news_sport:"

    def test_minor_parent_prefix(self):
        table = corpus.default_category_table()
        for c in table.minors:
            assert c.parent == c.name.split("/")[0]
            assert c.parent in table
        for c in table.majors:
            assert c.parent is None


class TestLoadCorpus:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        table = corpus.default_category_table()
        assert corpus.load_corpus(path, table) == []

    def test_two_records(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text(
            "wiki\tm\thttps://example.org/a\tFirst article text.\n"
            "news\ta\t-\tSecond text with\\nan embedded newline.\n"
        )
        table = corpus.default_category_table()
        docs = corpus.load_corpus(path, table)
        assert len(docs) == 2
        assert docs[0].category.name == "wiki"
        assert docs[0].provenance == "manual"
        assert docs[0].source_url == "https://example.org/a"
        assert docs[1].category.name == "news"
        assert docs[1].provenance == "auto"
        assert docs[1].source_url is None
        assert docs[1].text == "Second text with\nan embedded newline."

    def test_unknown_category_named_in_error(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("nonsense\tm\t-\tsome text\n")
        with pytest.raises(corpus.CorpusError, match="nonsense"):
            corpus.load_corpus(path, corpus.default_category_table())

    def test_malformed_record_reports_line(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("wiki\tm\t-\tok text\nwiki\tm\tmissing-text-field\n")
        with pytest.raises(corpus.CorpusError, match=":2:"):
            corpus.load_corpus(path, corpus.default_category_table())

    def test_save_load_round_trip(self, tmp_path):
        table = corpus.default_category_table()
        docs = [
            corpus.Document(0, "text with\nnewline and \\ backslash",
                            table["wiki"], "manual", "http://x"),
            corpus.Document(1, "plain", table["simple"], "auto"),
        ]
        path = tmp_path / "c.tsv"
        corpus.save_corpus(path, docs)
        loaded = corpus.load_corpus(path, table)
        assert [d.text for d in loaded] == [d.text for d in docs]
        assert [d.category.name for d in loaded] == ["wiki", "simple"]


class TestAdHocTables:
    def test_names_unique_enforced(self):
        with pytest.raises(corpus.CorpusError):
            corpus.CategoryTable(
                [corpus.ControlCategory("a", True), corpus.ControlCategory("a", True)]
            )

    def test_auto_parent_insertion(self):
        table = corpus.table_from_names(["news/sport"])
        assert "news" in table
        assert table["news"].is_major
