"""Balanced multi-task batching, early-stopping training, zero-shot training."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import numcore as nc
from .data import TaskDataset, TokenPair, build_vocabularies, split_train_validation, tag_for_zero_shot
from .evalkit import predict, word_accuracy
from .model import COMPONENTS, HyperParams, MultiTaskModel, SharingConfig, build_model, parse_sharing_config

log = logging.getLogger(__name__)

FULL_SHARE = parse_sharing_config("SEATDP")


class InvariantViolation(RuntimeError):
    """A training invariant was broken (e.g. zero-shot exclusion)."""


@dataclass
class Part:
    task: str
    language: str
    dataset: str
    pairs: list[TokenPair]


@dataclass
class CompositeBatch:
    epoch: int
    index: int
    parts: list[Part]

    @property
    def size(self) -> int:
        return sum(len(p.pairs) for p in self.parts)


class Cycler:
    """Endless sampling without replacement; reshuffles on every wraparound."""

    def __init__(self, items: Sequence, rng: np.random.Generator):
        if not items:
            raise ValueError("Cycler: empty dataset")
        self.items = list(items)
        self.rng = rng
        self.order = rng.permutation(len(self.items))
        self.pos = 0

    def take(self, k: int) -> list:
        out = []
        while len(out) < k:
            if self.pos == len(self.order):
                self.order = self.rng.permutation(len(self.items))
                self.pos = 0
            n = min(k - len(out), len(self.order) - self.pos)
            out.extend(self.items[i] for i in self.order[self.pos:self.pos + n])
            self.pos += n
        return out


def make_mtl_batches(main: TaskDataset, aux: Sequence[TaskDataset], hp: HyperParams,
                     rng: np.random.Generator) -> Iterator[CompositeBatch]:
    """Endless stream of composite batches, epoch after epoch.

    Each batch holds ``batch_size_main`` main pairs (the last one per epoch may
    be shorter) plus ``aux_tokens_per_batch`` pairs from every auxiliary set.
    An epoch is one pass over ``main`` in a fresh random order.
    """
    cyclers = [Cycler(a.pairs, rng) for a in aux]
    bs = hp.batch_size_main
    epoch = 0
    while True:
        epoch += 1
        order = rng.permutation(len(main))
        for index, start in enumerate(range(0, len(main), bs)):
            parts = [Part(main.task, main.language, main.name, [main.pairs[i] for i in order[start:start + bs]])]
            for a, cyc in zip(aux, cyclers):
                parts.append(Part(a.task, a.language, a.name, cyc.take(hp.aux_tokens_per_batch)))
            yield CompositeBatch(epoch, index, parts)


def zero_shot_combinations(datasets: Sequence[TaskDataset], target_language: str) -> list[TaskDataset]:
    """Every dataset except the normalization sets of the target language."""
    languages = {d.language for d in datasets}
    if len(languages) < 2:
        raise ValueError(f"zero-shot needs at least two languages, got {sorted(languages)}")
    if not any(d.language == target_language and d.task != "normalization" for d in datasets):
        raise ValueError(f"no auxiliary data for target language {target_language!r}")
    return [d for d in datasets if not (d.task == "normalization" and d.language == target_language)]


def make_zero_shot_schedule(all_datasets: Sequence[TaskDataset], target_language: str, rng: np.random.Generator,
                            samples_per_epoch: int = 1000, samples_per_update: int = 10) -> Iterator[CompositeBatch]:
    """Endless stream of tagged composite batches with equal samples per combination.

    One epoch supplies exactly ``samples_per_epoch`` pairs from each
    combination, ``samples_per_update`` at a time (the last update of an
    epoch takes the remainder).
    """
    combos = zero_shot_combinations(all_datasets, target_language)
    tagged = [[tag_for_zero_shot(p, d.language, d.task) for p in d.pairs] for d in combos]
    cyclers = [Cycler(t, rng) for t in tagged]
    n_updates = math.ceil(samples_per_epoch / samples_per_update)
    epoch = 0
    while True:
        epoch += 1
        for index in range(n_updates):
            k = min(samples_per_update, samples_per_epoch - index * samples_per_update)
            parts = [Part(d.task, d.language, d.name, cyc.take(k)) for d, cyc in zip(combos, cyclers)]
            yield CompositeBatch(epoch, index, parts)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float | None
    tokens_seen: dict
    stop_reason: str | None = None


@dataclass
class TrainLog:
    config: str
    mode: str
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    target_language: str | None = None

    def tokens(self, task: str, language: str) -> int:
        key = f"{task}/{language}"
        return sum(r.tokens_seen.get(key, 0) for r in self.records)

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            lines.append(json.dumps({
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "val_acc": r.val_acc,
                "tokens_seen": dict(sorted(r.tokens_seen.items())),
                "stop_reason": r.stop_reason,
            }, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def read(cls, path, config: str = "", mode: str = "standard") -> "TrainLog":
        recs = [EpochRecord(**json.loads(line)) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
        out = cls(config, mode, recs)
        if recs:
            out.stop_reason = recs[-1].stop_reason or ""
        return out


class EarlyStopping:
    """Track the best validation score; ties keep the earliest epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best: float | None = None
        self.best_epoch = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record ``score``; return True when training should stop."""
        if self.best is None or score > self.best:
            self.best = score
            self.best_epoch = epoch
            return False
        return epoch - self.best_epoch >= self.patience


@dataclass
class TrainPlan:
    main: TaskDataset | None
    aux: list[TaskDataset] = field(default_factory=list)
    config: SharingConfig = field(default_factory=SharingConfig)
    hp: HyperParams = field(default_factory=HyperParams)
    seed: int = 1
    mode: str = "standard"
    max_epochs: int = 50
    patience: int = 5
    # zero-shot only
    datasets: list[TaskDataset] = field(default_factory=list)
    target_language: str | None = None
    epochs: int = 10
    samples_per_epoch: int = 1000
    samples_per_update: int = 10


def _group_parts(model: MultiTaskModel, parts: Sequence[Part]) -> list[tuple[str, list[TokenPair]]]:
    # parts whose tasks resolve every component to the same owners run as one batch
    groups: dict[tuple, tuple[str, list[TokenPair]]] = {}
    for part in parts:
        if not part.pairs:
            continue
        key = (tuple(model.owner(part.task, c) for c in COMPONENTS), model.kind(part.task) == "g2p")
        if key not in groups:
            groups[key] = (part.task, [])
        groups[key][1].extend(part.pairs)
    return list(groups.values())


def update_step(model: MultiTaskModel, adam: nc.AdamState, batch: CompositeBatch) -> float:
    """One Adam update on the mean per-symbol loss over all parts of ``batch``."""
    losses = []
    n = 0
    for task, pairs in _group_parts(model, batch.parts):
        b = model.make_batch(task, pairs)
        losses.append(model.batch_loss(task, b, train=True))
        n += b.n_symbols
    total = losses[0]
    for loss in losses[1:]:
        total = nc.add(total, loss)
    total = nc.scale(total, 1.0 / n)
    nc.backward(total)
    nc.adam_step([p for p in model.parameters() if p.grad is not None], adam)
    return total.item()


def _snapshot(model: MultiTaskModel) -> list[np.ndarray]:
    return [p.value.copy() for p in model.parameters()]


def _restore(model: MultiTaskModel, snap: list[np.ndarray]) -> None:
    for p, v in zip(model.parameters(), snap):
        p.value[...] = v


def new_model_for(plan: TrainPlan, datasets: Sequence[TaskDataset], rng: np.random.Generator,
                  zero_shot: bool = False) -> MultiTaskModel:
    tags = None
    if zero_shot:
        tags = ({d.language for d in plan.datasets}, {d.task for d in plan.datasets})
    vocabs = build_vocabularies(list(datasets), tags)
    tasks = [d.task for d in datasets]
    return build_model(plan.config, tasks, vocabs, plan.hp, rng, {t: t for t in tasks})


def train(plan: TrainPlan, model: MultiTaskModel | None = None) -> tuple[MultiTaskModel, TrainLog]:
    """Early-stopped multi-task training on the main task's 90/10 split.

    Returns the checkpoint with the best validation word accuracy.
    """
    if plan.mode != "standard" or plan.main is None:
        raise ValueError("train() handles standard mode with a main dataset")
    train_set, val_set = split_train_validation(plan.main)
    if not len(train_set):
        raise nc.ContractError("empty training split")
    rng = np.random.default_rng(plan.seed)
    if model is None:
        model = new_model_for(plan, [plan.main, *plan.aux], rng)
    else:
        model.rng = rng
    adam = nc.AdamState(lr=plan.hp.lr)
    stopper = EarlyStopping(plan.patience)
    trainlog = TrainLog(str(plan.config), "standard")
    best = _snapshot(model)
    stream = make_mtl_batches(train_set, plan.aux, plan.hp, rng)
    batch = next(stream)
    for epoch in range(1, plan.max_epochs + 1):
        seen: Counter = Counter()
        losses = []
        while batch.epoch == epoch:
            for part in batch.parts:
                seen[f"{part.task}/{part.language}"] += len(part.pairs)
            losses.append(update_step(model, adam, batch))
            batch = next(stream)
        acc = word_accuracy(predict(model, plan.main.task, list(val_set.pairs)))
        rec = EpochRecord(epoch, float(np.mean(losses)), acc, dict(seen))
        trainlog.records.append(rec)
        improved = stopper.best is None or acc > stopper.best
        stop = stopper.update(epoch, acc)
        if improved:
            best = _snapshot(model)
        log.debug("epoch %d loss %.4f val %.2f", epoch, rec.train_loss, acc)
        if stop:
            rec.stop_reason = "patience"
            break
    else:
        trainlog.records[-1].stop_reason = "max_epochs"
    trainlog.stop_reason = trainlog.records[-1].stop_reason or ""
    trainlog.best_epoch = stopper.best_epoch
    _restore(model, best)
    return model, trainlog


def train_zero_shot(plan: TrainPlan, schedule: Iterator[CompositeBatch] | None = None) -> tuple[MultiTaskModel, TrainLog]:
    """Fixed-epoch, fully shared, tagged training without target-language normalization.

    Any target-language normalization pair reaching a batch raises
    :class:`InvariantViolation` before the update is applied.
    """
    if plan.mode != "zero_shot" or plan.target_language is None:
        raise ValueError("train_zero_shot() needs mode='zero_shot' and a target language")
    if plan.config != FULL_SHARE:
        log.warning("zero-shot forces sharing config SEATDP (got %r)", str(plan.config))
        plan.config = FULL_SHARE
    target = plan.target_language
    combos = zero_shot_combinations(plan.datasets, target)
    rng = np.random.default_rng(plan.seed)
    model = new_model_for(plan, combos, rng, zero_shot=True)
    for d in plan.datasets:
        if d.task not in model.tasks:
            model.tasks.append(d.task)
            model.task_kinds[d.task] = d.task
    adam = nc.AdamState(lr=plan.hp.lr)
    if schedule is None:
        schedule = make_zero_shot_schedule(plan.datasets, target, rng, plan.samples_per_epoch, plan.samples_per_update)
    trainlog = TrainLog(str(plan.config), "zero_shot", target_language=target)
    batch = next(schedule)
    for epoch in range(1, plan.epochs + 1):
        seen: Counter = Counter()
        losses = []
        while batch.epoch == epoch:
            for part in batch.parts:
                if part.task == "normalization" and part.language == target and part.pairs:
                    raise InvariantViolation(
                        f"target-language normalization data ({part.dataset}) reached a training batch")
                seen[f"{part.task}/{part.language}"] += len(part.pairs)
            losses.append(update_step(model, adam, batch))
            batch = next(schedule)
        trainlog.records.append(EpochRecord(epoch, float(np.mean(losses)), None, dict(seen)))
    trainlog.records[-1].stop_reason = "fixed_epochs"
    trainlog.stop_reason = "fixed_epochs"
    trainlog.best_epoch = plan.epochs
    return model, trainlog
