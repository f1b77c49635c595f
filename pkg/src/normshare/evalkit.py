"""Decoding, accuracy metrics and the correlation analysis."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Iterable, Sequence

from .data import TaskDataset, TokenPair
from .numcore import ContractError


@dataclass(frozen=True)
class Prediction:
    source: str
    gold: str
    hypothesis: str


@dataclass
class Cell:
    n: int = 0
    correct: int = 0

    @property
    def accuracy(self) -> float | None:
        return 100.0 * self.correct / self.n if self.n else None


@dataclass
class EvalReport:
    name: str
    n: int
    correct: int
    accuracy: float
    identity_accuracy: float
    splits: dict = field(default_factory=dict)  # cell name -> Cell
    predictions: list = field(default_factory=list)

    def to_dict(self, with_predictions: bool = False) -> dict:
        d = {
            "name": self.name,
            "n": self.n,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "identity_accuracy": self.identity_accuracy,
            "splits": {k: {"n": c.n, "correct": c.correct, "accuracy": c.accuracy}
                       for k, c in self.splits.items()},
        }
        if with_predictions:
            d["predictions"] = [asdict(p) for p in self.predictions]
        return d

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def greedy_decode(model, task: str, source: TokenPair | str) -> str:
    return model.greedy_batch(task, [source])[0]


def predict(model, task: str, pairs: Sequence[TokenPair], batch_size: int = 64) -> list[Prediction]:
    """Greedy hypotheses for every pair, in input order."""
    out: list[Prediction] = []
    for k in range(0, len(pairs), batch_size):
        chunk = pairs[k:k + batch_size]
        hyps = model.greedy_batch(task, chunk)
        out.extend(Prediction(p.source, p.target, h) for p, h in zip(chunk, hyps))
    return out


def word_accuracy(preds: Sequence[Prediction]) -> float:
    """Percentage of exact string matches between hypothesis and gold."""
    if not preds:
        raise ContractError("word_accuracy: no predictions")
    return 100.0 * sum(p.hypothesis == p.gold for p in preds) / len(preds)


def identity_predictions(pairs: Iterable[TokenPair]) -> list[Prediction]:
    return [Prediction(p.source, p.target, p.source) for p in pairs]


def identity_baseline(pairs: TaskDataset | Sequence[TokenPair]) -> float:
    """Accuracy of leaving every input word unchanged."""
    return word_accuracy(identity_predictions(pairs))


def micro_average(reports: Sequence) -> float:
    """Accuracy over the concatenation of all datasets.

    Uses exact correct counts when every report has them, otherwise weights
    each accuracy by its token count.
    """
    if not reports:
        raise ContractError("micro_average: no reports")
    total = sum(r.n for r in reports)
    if total <= 0:
        raise ContractError("micro_average: zero tokens")
    if all(getattr(r, "correct", None) is not None for r in reports):
        return 100.0 * sum(r.correct for r in reports) / total
    return sum(r.accuracy * r.n for r in reports) / total


def error_reduction(baseline_acc: float, system_acc: float) -> float:
    """Relative reduction of the error rate (100 - accuracy), in percent."""
    if baseline_acc >= 100.0:
        raise ValueError("error_reduction: undefined for a baseline with no errors")
    return 100.0 * (system_acc - baseline_acc) / (100.0 - baseline_acc)


SPLIT_CELLS = ("known/identity", "known/non-identity", "unknown/identity", "unknown/non-identity")


def split_report(preds: Sequence[Prediction], train_sources: Iterable[str], name: str = "") -> EvalReport:
    """Accuracies over known/unknown sources crossed with identity/non-identity gold."""
    train = set(train_sources)
    cells = {k: Cell() for k in SPLIT_CELLS}
    for p in preds:
        key = ("known" if p.source in train else "unknown") + "/" + (
            "identity" if p.source == p.gold else "non-identity")
        cells[key].n += 1
        cells[key].correct += p.hypothesis == p.gold
    for marg in ("known", "unknown"):
        cells[marg] = Cell(cells[f"{marg}/identity"].n + cells[f"{marg}/non-identity"].n,
                           cells[f"{marg}/identity"].correct + cells[f"{marg}/non-identity"].correct)
    for marg in ("identity", "non-identity"):
        cells[marg] = Cell(cells[f"known/{marg}"].n + cells[f"unknown/{marg}"].n,
                           cells[f"known/{marg}"].correct + cells[f"unknown/{marg}"].correct)
    n = len(preds)
    correct = sum(p.hypothesis == p.gold for p in preds)
    return EvalReport(
        name=name,
        n=n,
        correct=correct,
        accuracy=100.0 * correct / n if n else 0.0,
        identity_accuracy=identity_baseline_of(preds),
        splits=cells,
        predictions=list(preds),
    )


def identity_baseline_of(preds: Sequence[Prediction]) -> float:
    if not preds:
        return 0.0
    return 100.0 * sum(p.source == p.gold for p in preds) / len(preds)


def evaluate(model, task: str, dataset: TaskDataset | Sequence[TokenPair], train_sources: Iterable[str] = (),
             name: str = "") -> EvalReport:
    pairs = list(dataset)
    preds = predict(model, task, pairs)
    return split_report(preds, train_sources, name or getattr(dataset, "name", ""))


def probe_auxiliary_model(aux_model, task: str, norm_dataset: TaskDataset | Sequence[TokenPair]) -> float:
    """Score an auxiliary-task model as if it were a normalizer.

    Unseen source characters map to ``<unk>``; this never fails on vocabulary.
    """
    return word_accuracy(predict(aux_model, task, list(norm_dataset)))


def pearson_with_ci(xs: Sequence[float], ys: Sequence[float], confidence: float = 0.95) -> tuple[float, float, float]:
    """Sample Pearson r with a Fisher-z confidence interval."""
    n = len(xs)
    if n != len(ys):
        raise ContractError(f"pearson_with_ci: {n} xs vs {len(ys)} ys")
    if n < 3:
        raise ContractError(f"pearson_with_ci: need at least 3 points, got {n}")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson_with_ci: undefined for zero variance")
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    r = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    if abs(r) == 1.0:
        return r, r, r
    if n == 3:
        return r, -1.0, 1.0
    crit = 1.96 if confidence == 0.95 else NormalDist().inv_cdf(0.5 + confidence / 2.0)
    z = math.atanh(r)
    half = crit / math.sqrt(n - 3)
    return r, math.tanh(z - half), math.tanh(z + half)


# -- alternative string similarity metrics ------------------------------------------

def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def lcs_length(a: str, b: str) -> int:
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def mean_levenshtein(preds: Sequence[Prediction]) -> float:
    if not preds:
        raise ContractError("mean_levenshtein: no predictions")
    return sum(levenshtein(p.hypothesis, p.gold) for p in preds) / len(preds)


def mean_lcs_ratio(preds: Sequence[Prediction]) -> float:
    """Mean of LCS(h, g) / max(|h|, |g|), in percent."""
    if not preds:
        raise ContractError("mean_lcs_ratio: no predictions")
    return 100.0 * sum(
        lcs_length(p.hypothesis, p.gold) / max(len(p.hypothesis), len(p.gold), 1) for p in preds
    ) / len(preds)


def write_predictions(preds: Sequence[Prediction], path) -> None:
    Path(path).write_text("".join(f"{p.source}\t{p.gold}\t{p.hypothesis}\n" for p in preds), encoding="utf-8")


def read_predictions(path) -> list[Prediction]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            s, g, h = line.split("\t")
            out.append(Prediction(s, g, h))
    return out
