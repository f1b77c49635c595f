"""Desk-scale synthetic corpora.

A random lexicon of pronounceable "modern" words is sampled with Zipfian
token frequencies. Historical spellings come from probabilistic character
rewrites; the auxiliary tasks are derived from the same lexicon.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .data import TaskDataset, TokenPair

POSITIONS = ("initial", "final", "any")

# every symbol the default rules can introduce also occurs in modern words, so an
# autoencoder trained on modern forms has seen (and can copy) all of them
_ONSETS = ["b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "w", "z",
           "br", "st", "sch", "tr", "gr", "th", "ch", "kl", "v", "j", "c", ""]
_NUCLEI = ["a", "e", "i", "o", "u", "ei", "au", "ie", "ee", "oo", "y", "aw", "ey"]
_CODAS = ["", "", "", "n", "t", "r", "l", "s", "ng", "ck", "nd", "rt"]

_G2P_MULTI = [("sch", "S"), ("ch", "x"), ("ck", "k"), ("ng", "N"), ("th", "T"),
              ("ei", "aI"), ("ey", "aI"), ("au", "aU"), ("aw", "aU"), ("ie", "i:"), ("ee", "e:"), ("oo", "o:")]
_G2P_SINGLE = {"a": "a", "e": "E", "i": "I", "o": "O", "u": "U", "y": "Y", "c": "k",
               "q": "k", "v": "f", "w": "v", "z": "ts", "j": "j"}

_SUFFIXES = ["en", "er", "es", "s", "e", "t", "st", "em"]


@dataclass(frozen=True)
class Rule:
    """Rewrite ``pattern`` -> ``replacement`` with probability ``prob``.

    ``initial``/``final`` rules act on a prefix/suffix; ``any`` rules rewrite
    the first occurrence. An empty pattern with ``final`` appends.
    """

    pattern: str
    replacement: str
    position: str = "any"
    prob: float = 1.0

    def __post_init__(self):
        if self.position not in POSITIONS:
            raise ValueError(f"rule position must be one of {POSITIONS}, got {self.position!r}")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"rule probability {self.prob} outside [0, 1]")
        if not self.pattern and self.position != "final":
            raise ValueError("only 'final' rules may have an empty pattern")

    def applies(self, word: str) -> bool:
        if self.position == "initial":
            return word.startswith(self.pattern)
        if self.position == "final":
            return word.endswith(self.pattern)
        return self.pattern in word

    def rewrite(self, word: str) -> str:
        n = len(self.pattern)
        if self.position == "initial":
            return self.replacement + word[n:]
        if self.position == "final":
            return word[: len(word) - n] + self.replacement
        return word.replace(self.pattern, self.replacement, 1)


DEFAULT_RULES = (
    Rule("u", "v", "initial", 0.6),
    Rule("i", "j", "initial", 0.5),
    Rule("ei", "ey", "any", 0.5),
    Rule("t", "th", "any", 0.3),
    Rule("k", "c", "any", 0.4),
    Rule("n", "nn", "final", 0.4),
    Rule("", "e", "final", 0.2),
    Rule("au", "aw", "any", 0.4),
)


def corrupt(word: str, rules: Sequence[Rule], rng: np.random.Generator) -> str:
    """Apply each applicable rule once, in order, with its probability."""
    for rule in rules:
        if rule.applies(word) and rng.random() < rule.prob:
            word = rule.rewrite(word)
    return word


def scale_rules(rules: Sequence[Rule], factor: float) -> tuple[Rule, ...]:
    return tuple(Rule(r.pattern, r.replacement, r.position, min(1.0, r.prob * factor)) for r in rules)


def pseudo_phonemes(word: str) -> str:
    """Deterministic grapheme-to-phoneme stand-in; space-separated output."""
    out: list[str] = []
    k = 0
    while k < len(word):
        for graph, phone in _G2P_MULTI:
            if word.startswith(graph, k):
                out.append(phone)
                k += len(graph)
                break
        else:
            ch = word[k]
            if k + 1 < len(word) and word[k + 1] == ch and ch not in "aeiou":
                k += 1  # doubled consonant is one phoneme
            out.append(_G2P_SINGLE.get(ch, ch))
            k += 1
    return " ".join(out)


def make_lexicon(rng: np.random.Generator, size: int, seed_words: Sequence[str] = ()) -> list[str]:
    """``size`` distinct pronounceable words, starting with ``seed_words``."""
    words: list[str] = list(dict.fromkeys(seed_words))[:size]
    seen: set[str] = set(words)
    while len(words) < size:
        n_syl = int(rng.choice([1, 2, 2, 3]))
        w = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _NUCLEI[rng.integers(len(_NUCLEI))]
            + (_CODAS[rng.integers(len(_CODAS))] if s == n_syl - 1 else "")
            for s in range(n_syl)
        )
        if len(w) >= 2 and w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _zipf_sample(rng: np.random.Generator, lexicon: list[str], n: int, exponent: float = 1.0) -> list[str]:
    ranks = np.arange(1, len(lexicon) + 1, dtype=np.float64)
    p = ranks ** -exponent
    p /= p.sum()
    return [lexicon[i] for i in rng.choice(len(lexicon), size=n, p=p)]


def generate_synthetic_corpus(
    seed: int,
    lexicon_size: int = 2000,
    rules: Sequence[Rule] = DEFAULT_RULES,
    *,
    language: str = "xx",
    n_norm: int = 6000,
    n_auto: int = 10000,
    n_g2p: int | None = None,
    n_lemma: int | None = None,
    auto_lexicon_factor: int = 4,
    zipf_exponent: float = 1.0,
) -> tuple[TaskDataset, TaskDataset, TaskDataset, TaskDataset]:
    """Normalization, autoencoding, g2p and lemmatization datasets.

    Normalization pairs are (corrupted, modern) over Zipf-sampled tokens
    (``zipf_exponent`` 0 gives uniform type frequencies);
    autoencoding pairs are (modern, modern) drawn uniformly from a lexicon
    ``auto_lexicon_factor`` times larger than the normalization one (modern
    text covers far more types than a historical corpus); g2p maps lexicon types to
    pseudo-phonemes; lemmatization maps suffixed forms to their stems.
    """
    rng = np.random.default_rng(seed)
    lexicon = make_lexicon(rng, lexicon_size)
    norm_words = _zipf_sample(rng, lexicon, n_norm, zipf_exponent)
    norm = [TokenPair(corrupt(w, rules, rng), w) for w in norm_words]
    big = make_lexicon(rng, lexicon_size * max(1, auto_lexicon_factor), seed_words=lexicon)
    # half of the extra modern types contain the letter sequences the rules produce
    # (real modern vocabularies do), so autoencoding learns to copy them
    big = lexicon + [corrupt(w, rules, rng) if rng.random() < 0.5 else w for w in big[len(lexicon):]]
    auto = [TokenPair(w, w) for w in (big[i] for i in rng.integers(len(big), size=n_auto))]
    g2p_words = lexicon[: n_g2p or len(lexicon)]
    g2p = [TokenPair(w, pseudo_phonemes(w)) for w in g2p_words]
    lemma_words = lexicon[: n_lemma or len(lexicon)]
    lemma = [TokenPair(w + _SUFFIXES[rng.integers(len(_SUFFIXES))], w) for w in lemma_words]
    return (
        TaskDataset("normalization", language, tuple(norm), f"{language.upper()}"),
        TaskDataset("autoencoding", language, tuple(auto), f"{language}-autoencoding"),
        TaskDataset("g2p", language, tuple(g2p), f"{language}-g2p"),
        TaskDataset("lemmatization", language, tuple(lemma), f"{language}-lemmatization"),
    )


def load_rules(path) -> tuple[Rule, ...]:
    """Read a rule file::

        rules:
          - {pattern: u, replacement: v, position: initial, prob: 0.6}
    """
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    entries = doc.get("rules", []) if isinstance(doc, dict) else doc
    rules = []
    for k, entry in enumerate(entries):
        try:
            rules.append(Rule(str(entry.get("pattern", "")), str(entry.get("replacement", "")),
                              entry.get("position", "any"), float(entry.get("prob", 1.0))))
        except (AttributeError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: rule #{k}: {exc}") from exc
    return tuple(rules)


def dump_rules(rules: Sequence[Rule], path) -> None:
    Path(path).write_text(yaml.safe_dump({"rules": [asdict(r) for r in rules]}, sort_keys=False),
                          encoding="utf-8")
