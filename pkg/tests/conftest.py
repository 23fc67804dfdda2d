"""Shared fixtures: a synthetic two-genre corpus and a model trained on it.

The two genres use disjoint word inventories, so a model that has learned
the control-code mechanism ends generations with the ECC matching the
opening code.  Training runs once per session (a few seconds).
"""

import numpy as np
import pytest

from ctrlkit import corpus, model as M, tokenizer as T, trainer

WORDS = {
    "alpha": [f"a{i}" for i in range(12)],
    "beta": [f"b{i}" for i in range(12)],
}


def make_two_genre_docs(n_per_genre=200, seed=1234):
    rng = np.random.default_rng(seed)
    table = corpus.table_from_names(["alpha", "beta"])
    docs = []
    for i in range(2 * n_per_genre):
        genre = "alpha" if i % 2 == 0 else "beta"
        n = rng.integers(6, 11)
        text = " ".join(rng.choice(WORDS[genre], size=n))
        docs.append(corpus.Document(i, text, table[genre], "manual"))
    return docs, table


def held_out_prompts(genre, count, n_words=3, seed=7000):
    prompts = []
    for trial in range(count):
        rng = np.random.default_rng(seed + trial + (0 if genre == "alpha" else 500))
        prompts.append(" ".join(rng.choice(WORDS[genre], size=n_words)))
    return prompts


class TwoGenreSetup:
    def __init__(self):
        self.docs, self.table = make_two_genre_docs()
        base = T.train_bpe(self.docs, 1, vocab_size=90)
        self.vocab = T.add_control_codes(base, self.table)
        self.config = M.ModelConfig(
            layers=2, heads=2, model_dim=32, inner_dim=64, context=64,
            vocab_size=len(self.vocab),
        )
        self.untrained = M.init_model(self.config, seed=0)
        self.windows = trainer.windows_from_docs(self.docs, self.vocab, self.config.context)
        self.tc = trainer.TrainingConfig(batch_size=16, lr=2e-3, epochs=10, seed=99)
        self.initial_loss = trainer.mean_epoch_loss(self.untrained, self.windows)
        self.checkpoints = trainer.train(
            self.untrained.copy(), self.docs, self.vocab, self.tc
        )
        self.trained = self.checkpoints[-1]
        self.final_loss = trainer.mean_epoch_loss(self.trained, self.windows)


@pytest.fixture(scope="session")
def two_genre():
    return TwoGenreSetup()
