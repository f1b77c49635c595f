"""Token-pair corpora, vocabularies, truncation and the early-stopping split."""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .numcore import ContractError

TASKS = ("normalization", "autoencoding", "g2p", "lemmatization")
TASK_CODES = {"normalization": "norm", "autoencoding": "auto", "g2p": "g2p", "lemmatization": "lemma"}

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)


class DataFormatError(ValueError):
    """A corpus file does not follow the pair-file format."""


@dataclass(frozen=True)
class TokenPair:
    source: str
    target: str
    tags: tuple[str, ...] = ()

    def source_symbols(self) -> list[str]:
        return [*self.tags, *self.source]


@dataclass(frozen=True)
class TaskDataset:
    task: str
    language: str
    pairs: tuple[TokenPair, ...]
    name: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.task == "autoencoding":
            bad = next((p for p in self.pairs if p.source != p.target), None)
            if bad is not None:
                raise DataFormatError(f"autoencoding pair {bad.source!r} -> {bad.target!r} is not an identity")
        if not self.name:
            object.__setattr__(self, "name", f"{self.language}-{self.task}")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def with_pairs(self, pairs: Iterable[TokenPair]) -> "TaskDataset":
        return replace(self, pairs=tuple(pairs))


def target_symbols(target: str, task: str) -> list[str]:
    """Output symbols of a target string; g2p targets are space-separated phonemes."""
    if task == "g2p":
        return target.split()
    return list(target)


def join_symbols(symbols: Sequence[str], task: str) -> str:
    return (" " if task == "g2p" else "").join(symbols)


def _clean(field_: str) -> str:
    return unicodedata.normalize("NFC", field_.strip())


def load_pairs(path, task: str, language: str, name: str = "") -> TaskDataset:
    """Read a UTF-8 pair file: ``source<TAB>target`` per line.

    Blank lines and ``#`` comment lines are skipped. Autoencoding files may be
    one-column word lists. Auxiliary tasks drop pairs with whitespace inside a
    token (g2p targets excepted, their phonemes are space-separated).
    """
    path = Path(path)
    pairs: list[TokenPair] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) == 1 and task == "autoencoding":
                cols = [cols[0], cols[0]]
            if len(cols) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 2 tab-separated columns, got {len(cols)}")
            src, tgt = _clean(cols[0]), _clean(cols[1])
            if not src or not tgt:
                raise DataFormatError(f"{path}:{lineno}: empty field")
            if task == "autoencoding" and src != tgt:
                raise DataFormatError(f"{path}:{lineno}: autoencoding columns differ ({src!r} vs {tgt!r})")
            if task != "normalization":
                if any(ch.isspace() for ch in src):
                    continue
                if task != "g2p" and any(ch.isspace() for ch in tgt):
                    continue
            pairs.append(TokenPair(src, tgt))
    if not pairs:
        raise DataFormatError(f"{path}: no pairs")
    return TaskDataset(task, language, tuple(pairs), name or f"{language}-{task}")


def dump_pairs(ds: TaskDataset, path, columns: int | None = None) -> None:
    """Write ``ds`` in pair-file format (one column for autoencoding by default)."""
    if columns is None:
        columns = 1 if ds.task == "autoencoding" else 2
    lines = [p.source if columns == 1 else f"{p.source}\t{p.target}" for p in ds.pairs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def truncate(ds: TaskDataset, n: int) -> TaskDataset:
    """First ``n`` pairs in file order."""
    if n < 1:
        raise ContractError(f"truncate: n must be >= 1, got {n}")
    return ds.with_pairs(ds.pairs[:n])


def split_train_validation(ds: TaskDataset, ratio: float = 0.9) -> tuple[TaskDataset, TaskDataset]:
    """Prefix split: the first ceil(ratio * |ds|) pairs train, the rest validate."""
    if len(ds) < 10:
        raise ContractError(f"split_train_validation: need at least 10 pairs, got {len(ds)}")
    frac = Fraction(str(ratio))
    cut = math.ceil(frac * len(ds))
    return (
        replace(ds, pairs=ds.pairs[:cut], name=ds.name),
        replace(ds, pairs=ds.pairs[cut:], name=f"{ds.name}-val"),
    )


def lang_tag(language: str) -> str:
    return f"<LANG={language}>"


def task_tag(task: str) -> str:
    return f"<TASK={TASK_CODES.get(task, task)}>"


@dataclass
class Vocabulary:
    """Dense symbol ids; the four specials come first, then first-seen order."""

    symbols: list[str] = field(default_factory=lambda: list(SPECIALS))

    def __post_init__(self):
        if tuple(self.symbols[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special symbols")
        self.index = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")

    @classmethod
    def build(cls, streams: Iterable[Iterable[str]], extra: Sequence[str] = ()) -> "Vocabulary":
        symbols = list(SPECIALS)
        seen = set(symbols)
        for stream in streams:
            for s in stream:
                if s not in seen:
                    seen.add(s)
                    symbols.append(s)
        for s in extra:
            if s not in seen:
                seen.add(s)
                symbols.append(s)
        return cls(symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.index

    pad_id = property(lambda self: 0)
    bos_id = property(lambda self: 1)
    eos_id = property(lambda self: 2)
    unk_id = property(lambda self: 3)

    def encode(self, symbols: Iterable[str]) -> list[int]:
        unk = self.unk_id
        return [self.index.get(s, unk) for s in symbols]

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Symbols for ``ids`` with special symbols removed."""
        return [self.symbols[i] for i in ids if i >= len(SPECIALS)]


def build_vocabularies(
    datasets: Sequence[TaskDataset], zero_shot_tags: tuple[Iterable[str], Iterable[str]] | None = None
) -> tuple[Vocabulary, Vocabulary]:
    """Source and target vocabularies over all datasets.

    ``zero_shot_tags`` is (languages, tasks); one tag symbol per language and
    per task is added to the source side.
    """
    if not datasets:
        raise ContractError("build_vocabularies: no datasets")
    extra: list[str] = []
    if zero_shot_tags is not None:
        languages, tasks = zero_shot_tags
        extra = [lang_tag(lang) for lang in sorted(set(languages))]
        extra += [task_tag(t) for t in sorted(set(tasks))]
    src = Vocabulary.build(((ch for p in ds.pairs for ch in p.source) for ds in datasets), extra)
    tgt = Vocabulary.build(
        (s for p in ds.pairs for s in target_symbols(p.target, ds.task)) for ds in datasets
    )
    return src, tgt


def tag_for_zero_shot(pair: TokenPair, language: str, task: str, vocab: Vocabulary | None = None) -> TokenPair:
    """Prefix the source with a language tag and a task tag."""
    if pair.tags:
        raise ContractError(f"pair {pair.source!r} is already tagged with {pair.tags}")
    tags = (lang_tag(language), task_tag(task))
    if vocab is not None:
        missing = [t for t in tags if t not in vocab]
        if missing:
            raise KeyError(f"tag(s) {missing} not registered in the source vocabulary")
    return TokenPair(pair.source, pair.target, tags)
