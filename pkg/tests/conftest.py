from __future__ import annotations

import numpy as np
import pytest

from normshare.data import build_vocabularies
from normshare.model import HyperParams, build_model, parse_sharing_config
from normshare.synthetic import generate_synthetic_corpus


@pytest.fixture(scope="session")
def corpus():
    """(norm, auto, g2p, lemma) over a small synthetic lexicon."""
    return generate_synthetic_corpus(11, 200, language="xx", n_norm=300, n_auto=300)


@pytest.fixture
def tiny_hp():
    return HyperParams(embed_dim=6, hidden_dim=8, dropout=0.0, batch_size_main=30, aux_tokens_per_batch=10)


@pytest.fixture
def tiny_model(corpus, tiny_hp):
    def make(config: str = "SEATDP", tasks=("normalization", "autoencoding"), seed: int = 0):
        norm, auto, g2p, lemma = corpus
        by_task = {d.task: d for d in (norm, auto, g2p, lemma)}
        vocabs = build_vocabularies([by_task[t] for t in tasks])
        return build_model(parse_sharing_config(config), list(tasks), vocabs, tiny_hp, seed)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
