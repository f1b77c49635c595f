from __future__ import annotations

import math

import numpy as np
import pytest

from normshare.evalkit import identity_baseline
from normshare.synthetic import (DEFAULT_RULES, Rule, corrupt, dump_rules, generate_synthetic_corpus, load_rules,
                                 pseudo_phonemes, scale_rules)


def test_empty_rules_identity():
    norm, *_ = generate_synthetic_corpus(3, 100, (), n_norm=200, n_auto=50)
    assert identity_baseline(norm) == 100.0


def test_zero_probability_identity():
    norm, *_ = generate_synthetic_corpus(3, 100, scale_rules(DEFAULT_RULES, 0.0), n_norm=200, n_auto=50)
    assert identity_baseline(norm) == 100.0


def test_initial_rule():
    rng = np.random.default_rng(0)
    assert corrupt("und", [Rule("u", "v", "initial", 1.0)], rng) == "vnd"
    assert corrupt("hund", [Rule("u", "v", "initial", 1.0)], rng) == "hund"
    assert corrupt("haus", [Rule("", "e", "final", 1.0)], rng) == "hause"
    assert corrupt("mann", [Rule("n", "nn", "final", 1.0)], rng) == "mannn"


def test_rule_validation():
    with pytest.raises(ValueError):
        Rule("a", "b", "middle")
    with pytest.raises(ValueError):
        Rule("a", "b", "any", 1.5)
    with pytest.raises(ValueError):
        Rule("", "b", "initial")


def test_identity_fraction_monte_carlo():
    norm, *_ = generate_synthetic_corpus(5, 2000, DEFAULT_RULES, n_norm=10_000, n_auto=10)
    # independent oracle: a word stays unchanged iff no rule applicable to it fires
    expected = np.mean([math.prod(1.0 - r.prob for r in DEFAULT_RULES if r.applies(p.target)) for p in norm])
    observed = identity_baseline(norm) / 100.0
    assert abs(observed - expected) < 0.03


def test_corpus_shapes_and_determinism():
    a = generate_synthetic_corpus(9, 150, n_norm=300, n_auto=200)
    b = generate_synthetic_corpus(9, 150, n_norm=300, n_auto=200)
    assert a == b
    norm, auto, g2p, lemma = a
    assert [d.task for d in a] == ["normalization", "autoencoding", "g2p", "lemmatization"]
    assert all(p.source == p.target for p in auto)
    assert all(p.target == pseudo_phonemes(p.source) for p in g2p)
    assert all(p.source.startswith(p.target) and len(p.source) > len(p.target) for p in lemma)
    assert len(norm) == 300 and len(auto) == 200
    assert generate_synthetic_corpus(10, 150, n_norm=300, n_auto=200) != a


def test_pseudo_phonemes():
    assert pseudo_phonemes("haus") == "h aU s"
    assert pseudo_phonemes("mann") == "m a n"
    assert pseudo_phonemes("ab") == "a b"


def test_rules_round_trip(tmp_path):
    dump_rules(DEFAULT_RULES, tmp_path / "r.yaml")
    assert load_rules(tmp_path / "r.yaml") == DEFAULT_RULES
    (tmp_path / "bad.yaml").write_text("rules:\n  - {pattern: a, position: middle}\n")
    with pytest.raises(ValueError, match="rule #0"):
        load_rules(tmp_path / "bad.yaml")
