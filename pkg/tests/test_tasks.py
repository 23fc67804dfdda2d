import numpy as np
import numpy.testing as npt
import pytest

from ctrlkit import agreement, corpus, model as M, tasks, tokenizer as T, trainer


def char_word_vocab():
    """Single-character words so token counts are easy to reason about."""
    table = corpus.table_from_names(["alpha"])
    docs = [corpus.Document(0, "x y z w v", table["alpha"], "manual")]
    return T.add_control_codes(T.train_bpe(docs, 1, vocab_size=10), table)


TOY_TASK = tasks.TaskSpec(
    name="toy",
    template="{text}",
    kind=tasks.LABEL,
    labels=("x", "y"),
    metrics=("alpha_nominal", "accuracy"),
)


def with_toy_task(v, d=8):
    cfg = M.ModelConfig(layers=1, heads=2, model_dim=d, inner_dim=2 * d,
                        context=256, vocab_size=len(v))
    ckpt = M.init_model(cfg, seed=0)
    return tasks.add_task_tokens(v, ckpt, TOY_TASK)


class TestPromptBudget:
    def test_comfortable_prompt_keeps_cap(self):
        assert tasks.PromptBudget().limit(100, 5) == 245

    def test_long_prompt_formula(self):
        assert tasks.PromptBudget().limit(300, 20) == 256 - 5 - 20 - 2 == 229


class TestBuildPrompt:
    def test_untruncated_prompt_unchanged(self):
        v = with_toy_task(char_word_vocab())[0]
        dp = {"text": "x y z", "label": "x"}
        ids = tasks.build_prompt(dp, TOY_TASK, v, tasks.PromptBudget())
        assert ids[0] == v.occ_id("toy")
        assert ids[1:] == T.encode(v, "x y z")

    def test_truncation_head_tail_around_separator(self):
        v = with_toy_task(char_word_vocab())[0]
        # 150 single-char words -> 299 prompt tokens; label " x y ... y"
        # of 10 words -> 20 tokens, so the limit is 229 and each side
        # keeps floor(229/2) = 114 tokens.
        words = ["x", "y", "z", "w", "v"] * 30
        dp = {"text": " ".join(words), "label": "x y x y x y x y x y"}
        budget = tasks.PromptBudget()
        p_ids = T.encode(v, dp["text"])
        assert len(p_ids) == 299
        assert tasks.label_token_len(TOY_TASK, dp, v) == 20
        ids = tasks.build_prompt(dp, TOY_TASK, v, budget)
        sep_ids = T.encode(v, budget.separator)
        assert ids[1:115] == p_ids[:114]
        assert ids[115:115 + len(sep_ids)] == sep_ids
        assert ids[115 + len(sep_ids):] == p_ids[-114:]
        # label + ECC always fit afterwards
        assert len(ids) <= budget.context - 20 - 1

    def test_training_ids_order_and_fit(self):
        v = with_toy_task(char_word_vocab())[0]
        dp = {"text": "x y z", "label": "y"}
        ids = tasks.training_ids(dp, TOY_TASK, v, tasks.PromptBudget())
        assert ids[0] == v.occ_id("toy")
        assert ids[-1] == v.ecc_id("toy")
        assert ids[-3:-1] == T.encode(v, " y")
        assert len(ids) <= 256

    def test_oversized_label_rejected(self):
        v = with_toy_task(char_word_vocab())[0]
        dp = {"text": "x", "label": "x y " * 200}
        with pytest.raises(tasks.TaskError, match="label"):
            tasks.build_prompt(dp, TOY_TASK, v, tasks.PromptBudget())

    def test_separator_over_reserve_rejected(self):
        v = with_toy_task(char_word_vocab())[0]
        budget = tasks.PromptBudget(reserve=2, cap=20)
        dp = {"text": " ".join(["x"] * 40), "label": "x"}
        with pytest.raises(tasks.TaskError, match="separator"):
            tasks.build_prompt(dp, TOY_TASK, v, budget)

    def test_swedn_example_rendering(self):
        spec = tasks.get_task("swedn")
        dp = {"text": "Artikeln text", "label": "Sammanfattningen"}
        rendered = spec.render_example(dp)
        assert rendered == (
            ":swedn: Artikeln text Sammanfattning: Sammanfattningen :swedn:$"
        )

    def test_builtin_templates_cover_table(self):
        assert len(tasks.BUILTIN_TASKS) == 11
        assert tasks.get_task("SweNLI").template.startswith("Situation:")
        with pytest.raises(tasks.TaskError):
            tasks.get_task("nosuch")


class TestParseLabel:
    def test_prefix_match(self):
        spec = tasks.get_task("dalaj-ged")
        assert tasks.parse_label("Ja, det stämmer", spec) == "Ja"
        assert tasks.parse_label("  nej alls", spec) == "Nej"
        assert tasks.parse_label("kanske", spec) is None

    def test_longest_prefix_wins(self):
        spec = tasks.TaskSpec(name="t2", template="{x}", kind=tasks.LABEL,
                              labels=("Ja", "Ja visst"), metrics=("accuracy",))
        assert tasks.parse_label("ja visst det", spec) == "Ja visst"
        assert tasks.parse_label("ja det", spec) == "Ja"

    def test_score_extraction(self):
        spec = tasks.get_task("absabank-imm")
        assert tasks.parse_label("Känsloläge: 3.5", spec) == 3.5
        assert tasks.parse_label("ungefär 4,25 tror jag", spec) == 4.25
        assert tasks.parse_label("-2 grader", spec) == -2.0
        assert tasks.parse_label("kanske imorgon", spec) is None

    def test_summary_up_to_ecc(self):
        spec = tasks.get_task("swedn")
        text = "En kort sammanfattning. :swedn:$ resten ignoreras"
        assert tasks.parse_label(text, spec) == "En kort sammanfattning."
        assert tasks.parse_label("   ", spec) is None


class TestBaselines:
    def test_majority_counts(self):
        preds, value = tasks.majority_baseline(["Ja", "Ja", "Nej"])
        assert preds == ["Ja", "Ja", "Ja"]
        assert value == pytest.approx(2 / 3)

    def test_tie_breaks_to_first_seen(self):
        preds, _ = tasks.majority_baseline(["Nej", "Ja", "Ja", "Nej"])
        assert preds[0] == "Nej"

    def test_balanced_fixture_gives_negative_alpha(self):
        # Hand check with N=10 per label: o[a,a]=20, o[a,b]=o[b,a]=10,
        # n_a=30, n_b=10, D_o = 1/2, D_e = 600/1560 = 5/13,
        # alpha = 1 - 13/10 = -0.3.
        gold = ["a", "b"] * 10
        preds, value = tasks.majority_baseline(
            gold,
            metric=lambda g, p: agreement.krippendorff_alpha(g, p, "nominal"),
        )
        assert agreement.accuracy(gold, preds) == pytest.approx(0.5)
        assert value == pytest.approx(-0.3, abs=1e-9)

    def test_first_sentence_splits(self):
        assert tasks.first_sentence_baseline("A b c. D e.") == "A b c."
        assert tasks.first_sentence_baseline("inga meningar här") == "inga meningar här"

    def test_first_sentence_needs_uppercase_after_space(self):
        # the rule, not linguistics: lowercase after the period keeps going
        assert tasks.first_sentence_baseline("Mr. smith went. Hello") == "Mr. smith went."
        assert tasks.first_sentence_baseline("Slut.") == "Slut."
        # '?' is followed by '!', not whitespace, so '!' is the split point
        assert tasks.first_sentence_baseline("Va?! Ja.") == "Va?!"


class TestTaskTokens:
    def test_ids_appended_and_embedding_grown(self):
        v = char_word_vocab()
        v2, ckpt2 = with_toy_task(v)
        assert v2.occ_id("toy") == len(v)
        assert v2.ecc_id("toy") == len(v) + 1
        assert ckpt2.config.vocab_size == len(v) + 2
        assert ckpt2.weights["tok_emb"].shape[0] == len(v) + 2

    def test_new_rows_seeded_identically(self):
        v = char_word_vocab()
        _, a = with_toy_task(v)
        _, b = with_toy_task(v)
        npt.assert_array_equal(a.weights["tok_emb"][-2:], b.weights["tok_emb"][-2:])

    def test_existing_weights_untouched(self):
        v = char_word_vocab()
        cfg = M.ModelConfig(layers=1, heads=2, model_dim=8, inner_dim=16,
                            context=32, vocab_size=len(v))
        ckpt = M.init_model(cfg, seed=0)
        _, ckpt2 = tasks.add_task_tokens(v, ckpt, TOY_TASK)
        npt.assert_array_equal(ckpt2.weights["tok_emb"][:len(v)],
                               ckpt.weights["tok_emb"])

    def test_collision_rejected(self):
        v = char_word_vocab()
        v2, ckpt2 = with_toy_task(v)
        with pytest.raises(T.TokenizerError):
            tasks.add_task_tokens(v2, ckpt2, TOY_TASK)

    def test_extended_vocab_survives_serialization(self, tmp_path):
        # Task ids live beyond pad/unk; the file format must preserve the
        # exact id layout, not recompute it.
        v2 = with_toy_task(char_word_vocab())[0]
        path = tmp_path / "vocab.txt"
        T.save_vocab(path, v2)
        loaded = T.load_vocab(path)
        assert loaded.token_to_id == v2.token_to_id
        assert loaded.control_ids == v2.control_ids
        assert (loaded.pad_id, loaded.unk_id) == (v2.pad_id, v2.unk_id)


def toy_datapoints(n=8):
    rng = np.random.default_rng(0)
    dps = []
    for i in range(n):
        words = rng.choice(["x", "y", "z", "w"], size=4)
        dps.append({"text": " ".join(words), "label": "x" if i % 2 else "y"})
    return dps


class TestFinetuneEvaluate:
    def test_finetune_returns_epoch_checkpoints(self):
        v = char_word_vocab()
        cfg = M.ModelConfig(layers=1, heads=2, model_dim=8, inner_dim=16,
                            context=256, vocab_size=len(v))
        ckpt = M.init_model(cfg, seed=0)
        tc = trainer.TrainingConfig(batch_size=4, lr=1e-3, epochs=3)
        v2, ckpts = tasks.finetune(ckpt, v, TOY_TASK, toy_datapoints(), tc)
        assert len(ckpts) == 3
        assert "toy" in v2.control_ids

    def test_finetune_deterministic(self):
        v = char_word_vocab()
        cfg = M.ModelConfig(layers=1, heads=2, model_dim=8, inner_dim=16,
                            context=256, vocab_size=len(v))
        tc = trainer.TrainingConfig(batch_size=4, lr=1e-3, epochs=1)
        finals = []
        for _ in range(2):
            ckpt = M.init_model(cfg, seed=0)
            _, ckpts = tasks.finetune(ckpt, v, TOY_TASK, toy_datapoints(), tc)
            finals.append(ckpts[-1])
        for name in M.param_shapes(finals[0].config):
            npt.assert_array_equal(finals[0].weights[name], finals[1].weights[name])

    def test_evaluate_produces_metrics_and_missing_stats(self):
        v = char_word_vocab()
        cfg = M.ModelConfig(layers=1, heads=2, model_dim=8, inner_dim=16,
                            context=256, vocab_size=len(v))
        ckpt = M.init_model(cfg, seed=0)
        tc = trainer.TrainingConfig(batch_size=4, lr=1e-3, epochs=1)
        v2, ckpts = tasks.finetune(ckpt, v, TOY_TASK, toy_datapoints(), tc)
        result = tasks.evaluate(ckpts[-1], v2, TOY_TASK, toy_datapoints(4),
                                max_new_tokens=4)
        assert set(result.metrics) == {"alpha_nominal", "accuracy"}
        assert 0.0 <= result.n_missing_pct <= 100.0
        again = tasks.evaluate(ckpts[-1], v2, TOY_TASK, toy_datapoints(4),
                               max_new_tokens=4)
        assert result == again


class TestAnswerSelection:
    def test_oracle_scorer_drives_selection(self):
        spec = tasks.get_task("swefaq")
        datapoints = [
            {"question": "q1", "answer": "rätt", "label": "Ja", "group": 1, "s": 2.0},
            {"question": "q1", "answer": "fel", "label": "Nej", "group": 1, "s": 1.0},
            {"question": "q2", "answer": "fel", "label": "Nej", "group": 2, "s": 5.0},
            {"question": "q2", "answer": "rätt", "label": "Ja", "group": 2, "s": 0.0},
        ]
        acc = tasks.answer_selection_accuracy(
            None, None, spec, datapoints, scorer=lambda dp: dp["s"]
        )
        assert acc == 0.5  # group 1 picked right, group 2 picked wrong

    def test_model_path_runs_deterministically(self):
        v = char_word_vocab()
        spec = tasks.get_task("swefaq")
        cfg = M.ModelConfig(layers=1, heads=2, model_dim=8, inner_dim=16,
                            context=256, vocab_size=len(v))
        ckpt = M.init_model(cfg, seed=0)
        v2, ckpt2 = tasks.add_task_tokens(v, ckpt, spec)
        datapoints = [
            {"question": "x y", "answer": "z", "label": "Ja", "group": 1},
            {"question": "x y", "answer": "w", "label": "Nej", "group": 1},
        ]
        a = tasks.answer_selection_accuracy(ckpt2, v2, spec, datapoints)
        b = tasks.answer_selection_accuracy(ckpt2, v2, spec, datapoints)
        assert a == b
        assert a in (0.0, 1.0)

    def test_evaluate_reports_pseudo_alpha(self):
        spec = tasks.get_task("swefaq")
        v = char_word_vocab()
        cfg = M.ModelConfig(layers=1, heads=2, model_dim=8, inner_dim=16,
                            context=256, vocab_size=len(v))
        ckpt = M.init_model(cfg, seed=0)
        v2, ckpt2 = tasks.add_task_tokens(v, ckpt, spec)
        datapoints = [
            {"question": "x", "answer": "y", "label": "Ja", "group": 1},
            {"question": "x", "answer": "z", "label": "Nej", "group": 1},
        ]
        result = tasks.evaluate(ckpt2, v2, spec, datapoints)
        acc = result.metrics["accuracy"]
        assert result.metrics["pseudo_alpha"] == pytest.approx(
            agreement.pseudo_alpha(acc)
        )


class TestScorePredictions:
    def test_missing_percentage(self):
        spec = tasks.get_task("dalaj-ged")
        result = tasks.score_predictions(spec, ["Ja", "Nej", "Ja", "Nej"],
                                         ["Ja", None, "Ja", "Nej"])
        assert result.n_missing_pct == 25.0
        assert result.metrics["accuracy"] == 1.0

    def test_all_missing_reports_none(self):
        spec = tasks.get_task("dalaj-ged")
        result = tasks.score_predictions(spec, ["Ja", "Nej"], [None, None])
        assert result.metrics["alpha_nominal"] is None
        assert result.n_missing_pct == 100.0

    def test_score_granularity_rounding(self):
        spec = tasks.TaskSpec(name="t3", template="{x}", kind=tasks.SCORE,
                              metrics=("alpha_interval",), score_granularity=0.5)
        result = tasks.score_predictions(spec, [1.0, 2.0, 3.0], [1.1, 2.2, 2.9])
        assert result.predictions == (1.0, 2.0, 3.0)

    def test_results_csv_format(self):
        csv = tasks.results_csv([
            ("swedn", "E1", "rouge_l", 0.5, 0.0),
            ("swenli", "E3", "alpha_nominal", None, 12.345),
        ])
        lines = csv.strip().split("\n")
        assert lines[0] == "task,epoch,metric,value,N_missing%"
        assert lines[1] == "swedn,E1,rouge_l,0.500000,0.00"
        assert lines[2] == "swenli,E3,alpha_nominal,,12.35"
