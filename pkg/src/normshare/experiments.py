"""Experiment specs, result stores and the experiment drivers behind the CLI.

A spec is a YAML document::

    datasets:
      - {name: EN, task: normalization, language: en, train: en.train.tsv, dev: en.dev.tsv}
      - {name: en-auto, task: autoencoding, language: en, train: en.auto.tsv}
    main: [EN]                 # default: every normalization dataset
    configs: [SEADP]           # sharing configs; "-" is the empty config
    aux: [autoencoding]        # one aux set, or a list of sets for ablations
    sizes: [1000, full]
    seeds: [1, 2, 3]
    hyperparameters: {embed_dim: 60, hidden_dim: 300}
    training: {max_epochs: 50, patience: 5}
    zero_shot: {target: en, epochs: 10, samples_per_epoch: 1000}

Relative paths resolve against the spec file's directory.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from statistics import fmean
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
import yaml

from . import plots
from .data import (TASKS, DataFormatError, TaskDataset, dump_pairs, load_pairs, split_train_validation,
                   tag_for_zero_shot, truncate)
from .evalkit import (error_reduction, evaluate, identity_baseline, micro_average, pearson_with_ci,
                      probe_auxiliary_model, write_predictions)
from .model import (ConfigParseError, HyperParams, SharingConfig, enumerate_configs, load_checkpoint,
                    parse_sharing_config, save_checkpoint)
from .synthetic import DEFAULT_RULES, dump_rules, generate_synthetic_corpus, load_rules, scale_rules
from .training import CompositeBatch, InvariantViolation, Part, TrainPlan, make_zero_shot_schedule, train, train_zero_shot

log = logging.getLogger(__name__)

AUX_TASKS = ("autoencoding", "g2p", "lemmatization")
DEFAULT_CURVE_SIZES = (100, 500, 1000, 5000, 10000, 50000)
TOP_LEVEL_KEYS = {"datasets", "main", "configs", "aux", "sizes", "seeds", "hyperparameters", "training",
                  "zero_shot", "out", "configs_from", "top_k", "synthetic"}
SINGLE = "-"
NO_AUX = "none"


class SpecError(ValueError):
    """The experiment spec is invalid; nothing has been written."""


# -- spec -----------------------------------------------------------------------------

@dataclass
class DatasetEntry:
    name: str
    task: str
    language: str
    train: Path
    dev: Path | None = None


@dataclass
class ExperimentSpec:
    datasets: list[DatasetEntry]
    main: list[str]
    configs: list[SharingConfig]
    aux_sets: list[tuple[str, ...]]
    sizes: list
    seeds: list[int]
    hp: HyperParams
    max_epochs: int = 50
    patience: int = 5
    zero_shot: dict = field(default_factory=dict)
    out: Path | None = None
    configs_from: Path | None = None
    top_k: int = 3
    synthetic: dict = field(default_factory=dict)
    explicit: frozenset = frozenset()  # top-level keys given in the file

    def entry(self, name: str) -> DatasetEntry:
        for d in self.datasets:
            if d.name == name:
                return d
        raise KeyError(name)


def aux_label(aux: Sequence[str]) -> str:
    return "+".join(sorted(aux)) if aux else NO_AUX


def _aux_sets(raw) -> list[tuple[str, ...]]:
    if raw is None:
        return [AUX_TASKS]
    if not isinstance(raw, list):
        raise SpecError("'aux' must be a list of task names or a list of lists")
    groups = raw if raw and all(isinstance(x, list) for x in raw) else [raw]
    out = []
    for g in groups:
        names: list[str] = []
        for t in g:
            if t == "all":
                names.extend(AUX_TASKS)
            elif t in AUX_TASKS:
                names.append(t)
            else:
                raise SpecError(f"unknown auxiliary task {t!r}; expected one of {AUX_TASKS} or 'all'")
        out.append(tuple(sorted(set(names))))
    return list(dict.fromkeys(out))


def _sizes(raw) -> list:
    if raw is None:
        return ["full"]
    if not isinstance(raw, list) or not raw:
        raise SpecError("'sizes' must be a non-empty list")
    out = []
    for s in raw:
        if s == "full":
            out.append("full")
        elif isinstance(s, int) and not isinstance(s, bool) and s >= 100:
            out.append(s)
        else:
            raise SpecError(f"size {s!r}: sizes must be integers >= 100 or 'full'")
    return out


DEFAULT_SEEDS = (1, 2, 3)


def _seeds(raw) -> list[int]:
    if raw is None:
        return list(DEFAULT_SEEDS)
    raw = raw if isinstance(raw, list) else [raw]
    if not raw or not all(isinstance(s, int) and not isinstance(s, bool) for s in raw):
        raise SpecError("'seeds' must be a list of integers")
    if len(set(raw)) != len(raw):
        raise SpecError(f"seeds must be distinct, got {raw}")
    return list(raw)


def parse_seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise SpecError(f"--seed: {exc}") from exc
    return _seeds(seeds)


def load_spec(path, seeds: Sequence[int] | None = None, precision: str | None = None) -> ExperimentSpec:
    """Parse and validate a spec file; raises :class:`SpecError` on any problem."""
    path = Path(path)
    if not path.is_file():
        raise SpecError(f"spec file {path} does not exist")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise SpecError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise SpecError(f"{path}: top level must be a mapping")
    return spec_from_dict(doc, path.parent, seeds, precision)


def spec_from_dict(doc: dict, base: Path = Path("."), seeds: Sequence[int] | None = None,
                   precision: str | None = None) -> ExperimentSpec:
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        raise SpecError(f"unknown spec keys: {sorted(unknown)}")
    base = Path(base)

    def resolve(p) -> Path:
        q = Path(str(p))
        return q if q.is_absolute() else base / q

    datasets: list[DatasetEntry] = []
    for k, d in enumerate(doc.get("datasets") or []):
        if not isinstance(d, dict):
            raise SpecError(f"datasets[{k}] must be a mapping")
        extra = set(d) - {"name", "task", "language", "train", "dev"}
        if extra:
            raise SpecError(f"datasets[{k}]: unknown keys {sorted(extra)}")
        for req in ("task", "language", "train"):
            if req not in d:
                raise SpecError(f"datasets[{k}]: missing {req!r}")
        if d["task"] not in TASKS:
            raise SpecError(f"datasets[{k}]: unknown task {d['task']!r}")
        entry = DatasetEntry(str(d.get("name") or f"{d['language']}-{d['task']}"), d["task"], str(d["language"]),
                             resolve(d["train"]), resolve(d["dev"]) if d.get("dev") else None)
        for p in (entry.train, entry.dev):
            if p is not None and not p.is_file():
                raise SpecError(f"dataset {entry.name}: file {p} does not exist")
        if entry.task == "normalization" and entry.dev is None:
            raise SpecError(f"normalization dataset {entry.name} needs a 'dev' file")
        datasets.append(entry)
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise SpecError(f"dataset names must be unique: {names}")
    norm_names = [d.name for d in datasets if d.task == "normalization"]
    main = doc.get("main", norm_names)
    main = [main] if isinstance(main, str) else list(main)
    for m in main:
        if m not in norm_names:
            raise SpecError(f"main dataset {m!r} is not a normalization dataset in 'datasets'")
    try:
        configs = [parse_sharing_config("" if c in (None, SINGLE) else str(c))
                   for c in (doc.get("configs") or [SINGLE])]
    except ConfigParseError as exc:
        raise SpecError(str(exc)) from exc
    hp_raw = dict(doc.get("hyperparameters") or {})
    if precision is not None:
        hp_raw["precision"] = precision
    valid_hp = {f.name for f in fields(HyperParams)}
    if set(hp_raw) - valid_hp:
        raise SpecError(f"unknown hyperparameters: {sorted(set(hp_raw) - valid_hp)}")
    try:
        hp = HyperParams(**hp_raw)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"hyperparameters: {exc}") from exc
    training = dict(doc.get("training") or {})
    if set(training) - {"max_epochs", "patience"}:
        raise SpecError(f"unknown training keys: {sorted(set(training) - {'max_epochs', 'patience'})}")
    max_epochs = int(training.get("max_epochs", 50))
    patience = int(training.get("patience", 5))
    if max_epochs < 1 or patience < 1:
        raise SpecError("max_epochs and patience must be >= 1")
    zs = dict(doc.get("zero_shot") or {})
    zs_keys = {"target", "epochs", "samples_per_epoch", "samples_per_update", "inject_violation"}
    if set(zs) - zs_keys:
        raise SpecError(f"unknown zero_shot keys: {sorted(set(zs) - zs_keys)}")
    spec = ExperimentSpec(
        datasets=datasets,
        main=main,
        configs=list(dict.fromkeys(configs)),
        aux_sets=_aux_sets(doc.get("aux")),
        sizes=_sizes(doc.get("sizes")),
        seeds=list(seeds) if seeds is not None else _seeds(doc.get("seeds")),
        hp=hp,
        max_epochs=max_epochs,
        patience=patience,
        zero_shot=zs,
        out=resolve(doc["out"]) if doc.get("out") else None,
        configs_from=resolve(doc["configs_from"]) if doc.get("configs_from") else None,
        top_k=int(doc.get("top_k", 3)),
        synthetic=dict(doc.get("synthetic") or {}),
        explicit=frozenset(doc) | ({"seeds"} if seeds is not None else frozenset()),
    )
    return spec


def load_datasets(spec: ExperimentSpec) -> tuple[dict[str, TaskDataset], dict[str, TaskDataset]]:
    """Read every train and dev file; format problems become :class:`SpecError`."""
    train_sets, dev_sets = {}, {}
    try:
        for d in spec.datasets:
            train_sets[d.name] = load_pairs(d.train, d.task, d.language, d.name)
            if d.dev is not None:
                dev_sets[d.name] = load_pairs(d.dev, d.task, d.language, d.name)
    except DataFormatError as exc:
        raise SpecError(str(exc)) from exc
    return train_sets, dev_sets


def aux_for(spec: ExperimentSpec, train_sets: dict[str, TaskDataset], main: str,
            aux: Sequence[str]) -> list[TaskDataset]:
    lang = spec.entry(main).language
    out = []
    for task in aux:
        match = [d for d in spec.datasets if d.task == task and d.language == lang]
        if not match:
            raise SpecError(f"no {task} dataset for language {lang!r} (needed by {main})")
        out.append(train_sets[match[0].name])
    return out


def resolve_sizes(sizes: Sequence, available: int, dataset: str) -> list[int]:
    """Concrete sizes for one dataset; oversize requests are clipped with a warning."""
    out = []
    for s in sizes:
        if s == "full":
            out.append(available)
        elif s > available:
            log.warning("size %d exceeds %s's %d training tokens; clipped", s, dataset, available)
            out.append(available)
        else:
            out.append(int(s))
    return sorted(set(out))


# -- result stores ----------------------------------------------------------------------

def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        return []
    with path.open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _f(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


CellKey = tuple  # (dataset, config, aux, size, seed)


@dataclass
class ResultRow:
    dataset: str
    config: str
    aux: str
    size: int
    seed: int
    n: int
    correct: int
    accuracy: float
    identity: float
    error_reduction: float | None = None

    @property
    def key(self) -> CellKey:
        return (self.dataset, self.config, self.aux, self.size, self.seed)


RESULT_HEADER = [f.name for f in fields(ResultRow)]
SPLIT_HEADER = ["dataset", "config", "aux", "size", "seed", "cell", "n", "correct"]


@dataclass
class CellOutcome:
    row: ResultRow
    splits: dict  # cell name -> (n, correct)
    seconds: float


class ResultStore:
    """Keyed result files under ``out``: results.csv, splits.csv, timings.csv.

    Rows are sorted by key and rewritten atomically after every completed
    cell; wall-clock time lives in timings.csv so results.csv depends only on
    spec and seeds.
    """

    def __init__(self, out):
        self.out = Path(out)
        self.rows: dict[CellKey, ResultRow] = {}
        self.splits: dict[CellKey, dict] = {}
        self.seconds: dict[CellKey, float] = {}
        for r in _read_csv(self.out / "results.csv"):
            row = ResultRow(r["dataset"], r["config"], r["aux"], int(r["size"]), int(r["seed"]), int(r["n"]),
                            int(r["correct"]), float(r["accuracy"]), float(r["identity"]),
                            float(r["error_reduction"]) if r["error_reduction"] else None)
            self.rows[row.key] = row
        for r in _read_csv(self.out / "splits.csv"):
            key = (r["dataset"], r["config"], r["aux"], int(r["size"]), int(r["seed"]))
            self.splits.setdefault(key, {})[r["cell"]] = (int(r["n"]), int(r["correct"]))
        for r in _read_csv(self.out / "timings.csv"):
            key = (r["dataset"], r["config"], r["aux"], int(r["size"]), int(r["seed"]))
            self.seconds[key] = float(r["seconds"])

    def has(self, key: CellKey) -> bool:
        return key in self.rows

    def add(self, outcome: CellOutcome) -> None:
        key = outcome.row.key
        if key in self.rows:
            raise InvariantViolation(f"cell {key} computed twice")
        self.rows[key] = outcome.row
        self.splits[key] = outcome.splits
        self.seconds[key] = outcome.seconds
        self.flush()

    def _fill_error_reduction(self) -> None:
        for row in self.rows.values():
            base = self.rows.get((row.dataset, SINGLE, NO_AUX, row.size, row.seed))
            if base is not None and base.accuracy < 100.0:
                row.error_reduction = error_reduction(base.accuracy, row.accuracy)

    def sorted_rows(self) -> list[ResultRow]:
        return [self.rows[k] for k in sorted(self.rows)]

    def flush(self) -> None:
        self._fill_error_reduction()
        keys = sorted(self.rows)
        atomic_write(self.out / "results.csv", _csv_text(RESULT_HEADER, (
            [r.dataset, r.config, r.aux, r.size, r.seed, r.n, r.correct, _f(r.accuracy), _f(r.identity),
             _f(r.error_reduction)] for r in (self.rows[k] for k in keys))))
        atomic_write(self.out / "splits.csv", _csv_text(SPLIT_HEADER, (
            [*k, cell, n, c] for k in keys if k in self.splits
            for cell, (n, c) in sorted(self.splits[k].items()))))
        atomic_write(self.out / "timings.csv", _csv_text(["dataset", "config", "aux", "size", "seed", "seconds"], (
            [*k, f"{self.seconds[k]:.3f}"] for k in keys if k in self.seconds)))


# -- cells ------------------------------------------------------------------------------

@dataclass
class CellJob:
    key: CellKey
    main: TaskDataset
    dev: TaskDataset
    aux: list[TaskDataset]
    config: SharingConfig
    hp: HyperParams
    max_epochs: int
    patience: int
    artifacts: Path | None = None
    save_model: bool = False


def run_cell(job: CellJob) -> CellOutcome:
    """Train and evaluate one (dataset, config, aux, size, seed) cell."""
    start = time.perf_counter()
    seed = job.key[4]
    plan = TrainPlan(job.main, list(job.aux), job.config, job.hp, seed=seed, max_epochs=job.max_epochs,
                     patience=job.patience)
    model, trainlog = train(plan)
    train_part, _ = split_train_validation(job.main)
    report = evaluate(model, job.main.task, job.dev, (p.source for p in train_part.pairs), job.key[0])
    if job.artifacts is not None:
        job.artifacts.mkdir(parents=True, exist_ok=True)
        trainlog.write(job.artifacts / "trainlog.jsonl")
        report.write(job.artifacts / "eval.json")
        write_predictions(report.predictions, job.artifacts / "predictions.tsv")
        if job.save_model:
            save_checkpoint(model, job.artifacts / "checkpoint.npz")
    row = ResultRow(*job.key, n=report.n, correct=report.correct, accuracy=report.accuracy,
                    identity=report.identity_accuracy)
    splits = {k: (c.n, c.correct) for k, c in report.splits.items()}
    return CellOutcome(row, splits, time.perf_counter() - start)


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("NORMSHARE_WORKERS", "")
        workers = int(env) if env.strip() else 1
    if workers < 1:
        raise SpecError(f"--workers must be >= 1, got {workers}")
    return workers


def execute(jobs: Sequence, store, workers: int = 1, fn: Callable = run_cell) -> int:
    """Run every job whose key is missing from ``store``; returns how many ran."""
    todo = [j for j in jobs if not store.has(j.key)]
    skipped = len(jobs) - len(todo)
    if skipped:
        log.info("resuming: %d of %d cells already done", skipped, len(jobs))
    if workers <= 1 or len(todo) <= 1:
        for j in todo:
            store.add(fn(j))
            log.info("done %s", j.key)
        return len(todo)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, j) for j in todo]
        for fut in as_completed(futures):
            out = fut.result()
            store.add(out)
            log.info("done %s", out.row.key)
    return len(todo)


def _artifact_dir(out: Path, key: CellKey) -> Path:
    dataset, config, aux, size, seed = key
    return out / "cells" / f"{dataset}_{config}_{aux}_{size}_s{seed}"


def plan_cells(spec: ExperimentSpec, train_sets, dev_sets, configs: Sequence[SharingConfig],
               aux_sets: Sequence[tuple[str, ...]], sizes: Sequence, out: Path, include_single: bool = True,
               artifacts: bool = True) -> list[CellJob]:
    jobs: list[CellJob] = []
    for main in spec.main:
        full = train_sets[main]
        for size in resolve_sizes(sizes, len(full), main):
            if size < 10:
                raise SpecError(f"{main}: only {size} training tokens")
            ds = truncate(full, size)
            combos: list[tuple[SharingConfig, tuple[str, ...]]] = []
            if include_single:
                combos.append((SharingConfig(), ()))
            combos += [(c, a) for a in aux_sets for c in configs]
            for cfg, aux in dict.fromkeys(combos):
                aux_data = aux_for(spec, train_sets, main, aux)
                for seed in spec.seeds:
                    key = (main, cfg.label, aux_label(aux), size, seed)
                    jobs.append(CellJob(key, ds, dev_sets[main], aux_data, cfg, spec.hp, spec.max_epochs,
                                        spec.patience, _artifact_dir(out, key) if artifacts else None))
    return jobs


# -- commands ---------------------------------------------------------------------------

def cmd_train(spec: ExperimentSpec, out: Path, workers: int = 1) -> ResultRow:
    if "seeds" not in spec.explicit:
        spec = replace(spec, seeds=spec.seeds[:1])  # single seed for a smoke run
    if len(spec.main) != 1 or len(spec.configs) != 1 or len(spec.aux_sets) != 1 or len(spec.sizes) != 1 \
            or len(spec.seeds) != 1:
        raise SpecError("train needs exactly one main dataset, config, aux set, size and seed")
    train_sets, dev_sets = load_datasets(spec)
    aux = spec.aux_sets[0] if "aux" in spec.explicit else ()
    jobs = plan_cells(spec, train_sets, dev_sets, spec.configs, [aux], spec.sizes, out, include_single=False)
    job = replace(jobs[0], artifacts=out, save_model=True)
    store = ResultStore(out)
    if store.has(job.key):
        log.info("cell %s already in %s", job.key, out / "results.csv")
        return store.rows[job.key]
    store.add(run_cell(job))
    return store.rows[job.key]


def quartile_summary(rows: Sequence[ResultRow]) -> list[tuple[int, int, float, float, float, float, float]]:
    """(|shared|, count, min, q1, median, q3, max) of accuracies by number of shared components."""
    buckets: dict[int, list[float]] = defaultdict(list)
    for r in rows:
        k = 0 if r.config == SINGLE else len(r.config)
        buckets[k].append(r.accuracy)
    out = []
    for k in range(7):
        acc = sorted(buckets.get(k, []))
        if acc:
            q1, q2, q3 = np.percentile(acc, [25, 50, 75])
            out.append((k, len(acc), acc[0], float(q1), float(q2), float(q3), acc[-1]))
    return out


def ranking(rows: Sequence[ResultRow]) -> list[tuple[str, str, float, int]]:
    """(config, aux, mean accuracy, cells) sorted by accuracy, best first."""
    groups: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in rows:
        groups[(r.config, r.aux)].append(r.accuracy)
    out = [(c, a, fmean(v), len(v)) for (c, a), v in groups.items()]
    return sorted(out, key=lambda t: (-t[2], t[0], t[1]))


def cmd_sweep_sharing(spec: ExperimentSpec, out: Path, workers: int = 1) -> list[ResultRow]:
    train_sets, dev_sets = load_datasets(spec)
    aux_sets = spec.aux_sets
    jobs = plan_cells(spec, train_sets, dev_sets, enumerate_configs(), aux_sets, spec.sizes, out)
    store = ResultStore(out)
    execute(jobs, store, workers)
    keys = {j.key for j in jobs}
    rows = [store.rows[k] for k in sorted(keys)]
    mtl = [r for r in rows if r.aux != NO_AUX]
    lines = ["# sharing-configuration sweep", ""]
    for main in spec.main:
        lines.append(f"## {main}")
        lines.append(f"{'rank':>4}  {'config':<7} {'aux':<32} {'accuracy':>9} {'cells':>5}")
        for k, (cfg, aux, acc, n) in enumerate(ranking([r for r in mtl if r.dataset == main]), start=1):
            lines.append(f"{k:>4}  {cfg:<7} {aux:<32} {acc:9.2f} {n:>5}")
        single = [r.accuracy for r in rows if r.dataset == main and r.aux == NO_AUX]
        if single:
            lines.append(f"      single-task baseline: {fmean(single):.2f}")
        lines.append("")
    lines.append("## accuracy by number of shared components")
    lines.append(f"{'|shared|':>8} {'n':>4} {'min':>7} {'q1':>7} {'median':>7} {'q3':>7} {'max':>7}")
    for k, n, lo, q1, q2, q3, hi in quartile_summary(mtl):
        lines.append(f"{k:>8} {n:>4} {lo:7.2f} {q1:7.2f} {q2:7.2f} {q3:7.2f} {hi:7.2f}")
    atomic_write(out / "sweep_report.txt", "\n".join(lines) + "\n")
    return rows


def top_configs(results_csv: Path, k: int) -> list[SharingConfig]:
    rows = [r for r in _read_csv(results_csv) if r["aux"] != NO_AUX and r["config"] != SINGLE]
    if not rows:
        raise SpecError(f"{results_csv}: no multi-task rows to rank")
    groups: dict[str, list[float]] = defaultdict(list)
    for r in rows:
        groups[r["config"]].append(float(r["accuracy"]))
    best = sorted(groups, key=lambda c: (-fmean(groups[c]), c))[:k]
    return [parse_sharing_config(c) for c in best]


def cmd_learning_curve(spec: ExperimentSpec, out: Path, workers: int = 1) -> list[ResultRow]:
    train_sets, dev_sets = load_datasets(spec)
    sizes = spec.sizes if "sizes" in spec.explicit else list(DEFAULT_CURVE_SIZES)
    if spec.configs_from is not None:
        if not spec.configs_from.is_file():
            raise SpecError(f"configs_from: {spec.configs_from} does not exist")
        configs = top_configs(spec.configs_from, spec.top_k)
    else:
        configs = [c for c in spec.configs if len(c)] or [parse_sharing_config("SEADP")]
    jobs = plan_cells(spec, train_sets, dev_sets, configs, spec.aux_sets, sizes, out)
    store = ResultStore(out)
    execute(jobs, store, workers)
    rows = [store.rows[k] for k in sorted({j.key for j in jobs})]
    multi_aux = len(spec.aux_sets) > 1

    def label(r: ResultRow) -> str:
        if r.aux == NO_AUX:
            return "single"
        return f"{r.config}/{r.aux}" if multi_aux else r.config

    atomic_write(out / "curve.csv", _csv_text(["dataset", "config", "size", "seed", "accuracy"], (
        [r.dataset, label(r), r.size, r.seed, _f(r.accuracy)] for r in rows)))
    for main in spec.main:
        series: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
        for r in rows:
            if r.dataset == main:
                series[label(r)][r.size].append(r.accuracy)
        chart = {k: [(s, fmean(v)) for s, v in sorted(d.items())] for k, d in sorted(series.items())}
        atomic_write(out / f"curve_{main}.svg", plots.line_chart(chart, f"{main}: accuracy by training size",
                                                                 "training tokens", "word accuracy", logx=True))
    # micro-averaged error reduction over datasets (and seeds), per config and size
    by: dict[tuple[str, int], list[ResultRow]] = defaultdict(list)
    for r in rows:
        by[(label(r), r.size)].append(r)
    er_rows = []
    er_series: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for (lab, size), group in sorted(by.items()):
        if lab == "single":
            continue
        base = by.get(("single", size))
        if not base:
            continue
        b, s = micro_average(base), micro_average(group)
        if b < 100.0:
            er = error_reduction(b, s)
            er_rows.append([lab, size, _f(b), _f(s), _f(er)])
            er_series[lab].append((size, er))
    atomic_write(out / "error_reduction.csv",
                 _csv_text(["config", "size", "single_micro", "mtl_micro", "error_reduction"], er_rows))
    if er_series:
        atomic_write(out / "error_reduction.svg", plots.line_chart(
            dict(er_series), "micro-averaged error reduction vs single-task", "training tokens",
            "error reduction (%)", logx=True))
    return rows


def _target_normalization(spec: ExperimentSpec, target: str) -> list[DatasetEntry]:
    return [d for d in spec.datasets if d.task == "normalization" and d.language == target]


class _Injector:
    """Schedule wrapper that slips one target-language normalization pair in (test hook)."""

    def __init__(self, inner: Iterator[CompositeBatch], ds: TaskDataset):
        self.inner, self.ds, self.done = inner, ds, False

    def __iter__(self):
        return self

    def __next__(self) -> CompositeBatch:
        b = next(self.inner)
        if not self.done:
            self.done = True
            pair = tag_for_zero_shot(self.ds.pairs[0], self.ds.language, self.ds.task)
            b.parts.append(Part(self.ds.task, self.ds.language, self.ds.name, [pair]))
        return b


def cmd_zero_shot(spec: ExperimentSpec, out: Path, workers: int = 1, echo: Callable[[str], None] = print) -> list[ResultRow]:
    zs = spec.zero_shot
    target = zs.get("target")
    if not target:
        raise SpecError("zero_shot.target is required")
    langs = {d.language for d in spec.datasets if d.task == "normalization"}
    if len(langs | {target}) < 2:
        raise SpecError("zero-shot needs normalization data in at least two languages")
    targets = _target_normalization(spec, target)
    if not targets:
        raise SpecError(f"no normalization dataset for target language {target!r} to evaluate on")
    if not any(d.language == target and d.task != "normalization" for d in spec.datasets):
        raise SpecError(f"no auxiliary data for target language {target!r}")
    train_sets, dev_sets = load_datasets(spec)
    store = ResultStore(out)
    for seed in spec.seeds:
        keys = [(d.name, "SEATDP", "zero-shot", 0, seed) for d in targets]
        if all(store.has(k) for k in keys):
            continue
        start = time.perf_counter()
        plan = TrainPlan(None, config=parse_sharing_config("SEATDP"), hp=spec.hp, seed=seed, mode="zero_shot",
                         datasets=list(train_sets.values()), target_language=target,
                         epochs=int(zs.get("epochs", 10)), samples_per_epoch=int(zs.get("samples_per_epoch", 1000)),
                         samples_per_update=int(zs.get("samples_per_update", 10)))
        schedule = None
        if zs.get("inject_violation"):
            rng = np.random.default_rng(seed)
            schedule = _Injector(make_zero_shot_schedule(plan.datasets, target, rng, plan.samples_per_epoch,
                                                         plan.samples_per_update), train_sets[targets[0].name])
        model, trainlog = train_zero_shot(plan, schedule)
        cell_dir = out / "cells" / f"zero-shot_{target}_s{seed}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        trainlog.write(cell_dir / "trainlog.jsonl")
        seen = trainlog.tokens("normalization", target)
        echo(f"config: {trainlog.config}")
        echo(f"normalization tokens (target lang): {seen}")
        if seen != 0:
            raise InvariantViolation(f"zero-shot log shows {seen} target-language normalization tokens")
        elapsed = time.perf_counter() - start
        for d in targets:
            dev = dev_sets[d.name]
            tagged = [tag_for_zero_shot(p, target, "normalization") for p in dev.pairs]
            report = evaluate(model, "normalization", tagged, (), d.name)
            report.write(cell_dir / f"eval_{d.name}.json")
            write_predictions(report.predictions, cell_dir / f"predictions_{d.name}.tsv")
            row = ResultRow(d.name, "SEATDP", "zero-shot", 0, seed, report.n, report.correct, report.accuracy,
                            identity_baseline(dev))
            store.add(CellOutcome(row, {k: (c.n, c.correct) for k, c in report.splits.items()},
                                  elapsed / len(targets)))
    rows = [r for r in store.sorted_rows() if r.aux == "zero-shot"]
    lines = ["| Dataset | Seed | Identity | Zero-shot |", "|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r.dataset} | {r.seed} | {r.identity:.2f} | {r.accuracy:.2f} |")
    if rows:
        ident = micro_average([_Count(r.n, round(r.identity * r.n / 100.0)) for r in rows])
        zsacc = micro_average([_Count(r.n, r.correct) for r in rows])
        lines.append(f"| Micro-Avg | | {ident:.2f} | {zsacc:.2f} |")
    atomic_write(out / "zero_shot.md", "\n".join(lines) + "\n")
    return rows


@dataclass
class _Count:
    n: int
    correct: int


def cmd_evaluate(checkpoint: Path, data: Path, out: Path, task: str = "normalization", language: str = "xx",
                 train_data: Path | None = None, zero_shot: bool = False):
    if not Path(checkpoint).is_file():
        raise SpecError(f"checkpoint {checkpoint} does not exist")
    if not Path(data).is_file():
        raise SpecError(f"data file {data} does not exist")
    try:
        ds = load_pairs(data, task, language)
        known = [p.source for p in load_pairs(train_data, task, language).pairs] if train_data else []
    except DataFormatError as exc:
        raise SpecError(str(exc)) from exc
    model = load_checkpoint(checkpoint)
    model_task = task if task in model.tasks else model.tasks[0]
    pairs = [tag_for_zero_shot(p, language, task) for p in ds.pairs] if zero_shot else list(ds.pairs)
    report = evaluate(model, model_task, pairs, known, ds.name)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "eval.json")
    write_predictions(report.predictions, out / "predictions.tsv")
    return report


# -- analysis ---------------------------------------------------------------------------

PROBE_HEADER = ["dataset", "aux", "seed", "probe_accuracy", "identity"]


@dataclass
class ProbeJob:
    key: tuple  # (aux dataset name, seed)
    aux: TaskDataset
    targets: list[tuple[str, TaskDataset]]  # (main name, dev set)
    hp: HyperParams
    max_epochs: int
    patience: int


def run_probe(job: ProbeJob) -> list[list]:
    plan = TrainPlan(job.aux, [], SharingConfig(), job.hp, seed=job.key[1], max_epochs=job.max_epochs,
                     patience=job.patience)
    model, _ = train(plan)
    return [[name, job.aux.task, job.key[1], _f(probe_auxiliary_model(model, job.aux.task, dev)),
             _f(identity_baseline(dev))] for name, dev in job.targets]


def run_probes(spec: ExperimentSpec, out: Path, workers: int = 1) -> list[dict]:
    """Train auxiliary-only models and score them as normalizers; resumable via probes.csv."""
    train_sets, dev_sets = load_datasets(spec)
    path = out / "probes.csv"
    have = {(r["dataset"], r["aux"], int(r["seed"])): r for r in _read_csv(path)}
    jobs = []
    for aux in spec.datasets:
        if aux.task not in AUX_TASKS:
            continue
        targets = [(m, dev_sets[m]) for m in spec.main if spec.entry(m).language == aux.language]
        for seed in spec.seeds:
            todo = [(m, dev) for m, dev in targets if (m, aux.task, seed) not in have]
            if todo:
                jobs.append(ProbeJob((aux.name, seed), train_sets[aux.name], todo, spec.hp, spec.max_epochs,
                                     spec.patience))

    def save() -> None:
        rows = sorted(have.values(), key=lambda r: (r["dataset"], r["aux"], int(r["seed"])))
        atomic_write(path, _csv_text(PROBE_HEADER, ([r[h] for h in PROBE_HEADER] for r in rows)))

    def collect(rows: list[list]) -> None:
        for r in rows:
            have[(r[0], r[1], int(r[2]))] = dict(zip(PROBE_HEADER, map(str, r)))
        save()

    if workers <= 1 or len(jobs) <= 1:
        for j in jobs:
            collect(run_probe(j))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for fut in as_completed([pool.submit(run_probe, j) for j in jobs]):
                collect(fut.result())
    if not path.exists():
        save()
    return list(have.values())


def _largest_size_rows(rows: Sequence[ResultRow]) -> list[ResultRow]:
    top: dict[str, int] = {}
    for r in rows:
        top[r.dataset] = max(top.get(r.dataset, 0), r.size)
    return [r for r in rows if r.size == top[r.dataset]]


@dataclass
class Correlation:
    name: str
    n: int
    r: float | None
    lo: float | None
    hi: float | None
    points: list = field(default_factory=list)
    note: str = ""


def correlate(name: str, points: Sequence[tuple[str, float, float]]) -> Correlation:
    if len(points) < 3:
        log.warning("%s: only %d datasets; correlation skipped", name, len(points))
        return Correlation(name, len(points), None, None, None, list(points), "skipped: fewer than 3 datasets")
    xs = [p[1] for p in points]
    ys = [p[2] for p in points]
    try:
        r, lo, hi = pearson_with_ci(xs, ys)
    except ValueError as exc:
        return Correlation(name, len(points), None, None, None, list(points), f"skipped: {exc}")
    return Correlation(name, len(points), r, lo, hi, list(points))


def analyze_rows(rows: Sequence[ResultRow], probes: Sequence[dict]) -> list[Correlation]:
    """Probe-vs-error-reduction correlations per aux task plus identity-vs-error-reduction."""
    final = [r for r in _largest_size_rows(rows) if r.aux not in (NO_AUX, "zero-shot") and r.error_reduction is not None]
    out = []
    probe_acc: dict[tuple[str, str], list[float]] = defaultdict(list)
    for p in probes:
        probe_acc[(p["dataset"], p["aux"])].append(float(p["probe_accuracy"]))
    for task in AUX_TASKS:
        er: dict[str, list[float]] = defaultdict(list)
        for r in final:
            if r.aux == task:
                er[r.dataset].append(r.error_reduction)
        pts = [(d, fmean(probe_acc[(d, task)]), fmean(v)) for d, v in sorted(er.items()) if (d, task) in probe_acc]
        if pts or any(k[1] == task for k in probe_acc):
            out.append(correlate(f"probe({task}) vs error reduction", pts))
    er_all: dict[str, list[float]] = defaultdict(list)
    ident: dict[str, float] = {}
    for r in final:
        er_all[r.dataset].append(r.error_reduction)
        ident[r.dataset] = r.identity
    pts = [(d, ident[d], fmean(v)) for d, v in sorted(er_all.items())]
    out.append(correlate("identity baseline vs error reduction", pts))
    return out


def cmd_analyze(out: Path, spec: ExperimentSpec | None = None, workers: int = 1) -> list[Correlation]:
    if not (out / "results.csv").is_file():
        raise SpecError(f"{out} has no results.csv")
    probes = run_probes(spec, out, workers) if spec is not None else _read_csv(out / "probes.csv")
    store = ResultStore(out)
    rows = store.sorted_rows()
    cors = analyze_rows(rows, probes)
    lines = ["# analysis", ""]
    for c in cors:
        if c.r is None:
            lines.append(f"{c.name}: n={c.n} ({c.note})")
        else:
            lines.append(f"{c.name}: n={c.n} r={c.r:.4f} 95% CI [{c.lo:.4f}, {c.hi:.4f}]")
        for d, x, y in c.points:
            lines.append(f"    {d}: x={x:.2f} y={y:.2f}")
    # known/unknown and identity/non-identity curves
    split_rows = []
    curves: dict[str, dict[str, dict[int, list[float]]]] = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    for key, cells in sorted(store.splits.items()):
        dataset, config, aux, size, seed = key
        lab = "single" if aux == NO_AUX else f"{config}/{aux}"
        for cell in ("known", "unknown", "identity", "non-identity"):
            n, c = cells.get(cell, (0, 0))
            if n:
                acc = 100.0 * c / n
                split_rows.append([dataset, config, aux, size, seed, cell, n, _f(acc)])
                curves[dataset][f"{lab} {cell}"][size].append(acc)
    atomic_write(out / "splits_curve.csv",
                 _csv_text(["dataset", "config", "aux", "size", "seed", "cell", "n", "accuracy"], split_rows))
    for dataset, series in sorted(curves.items()):
        sizes = {s for d in series.values() for s in d}
        if sizes and min(sizes) > 0:
            chart = {k: [(s, fmean(v)) for s, v in sorted(d.items())] for k, d in sorted(series.items())}
            atomic_write(out / f"splits_{dataset}.svg", plots.line_chart(
                chart, f"{dataset}: accuracy by token class", "training tokens", "word accuracy", logx=True))
    atomic_write(out / "analysis.txt", "\n".join(lines) + "\n")
    atomic_write(out / "analysis.json", json.dumps([asdict(c) for c in cors], indent=2, sort_keys=True) + "\n")
    for c in cors:
        if len(c.points) >= 3 and c.r is not None:
            pts = [(x, y) for _, x, y in sorted(c.points, key=lambda p: p[1])]
            slug = c.name.split(" vs ")[0].replace("(", "_").replace(")", "").replace(" ", "_")
            atomic_write(out / f"correlation_{slug}.svg", plots.line_chart(
                {c.name: pts}, f"{c.name} (r={c.r:.2f})", c.name.split(" vs ")[0], "error reduction (%)"))
    return cors


# -- synthetic data ---------------------------------------------------------------------

def cmd_gen_synthetic(out: Path, seed: int = 1, spec_doc: dict | None = None, base: Path = Path(".")) -> Path:
    """Write synthetic corpora for one or more languages plus a ready-to-run spec."""
    cfg = dict(spec_doc or {})
    known = {"languages", "lexicon_size", "n_norm", "n_dev", "n_auto", "zipf_exponent", "rules", "rules_scale"}
    if set(cfg) - known:
        raise SpecError(f"unknown synthetic keys: {sorted(set(cfg) - known)}")
    languages = cfg.get("languages") or [{"code": "xx"}]
    base_rules = DEFAULT_RULES
    if cfg.get("rules"):
        p = Path(cfg["rules"])
        p = p if p.is_absolute() else base / p
        if not p.is_file():
            raise SpecError(f"rules file {p} does not exist")
        try:
            base_rules = load_rules(p)
        except ValueError as exc:
            raise SpecError(str(exc)) from exc
    plans = []
    for k, lang in enumerate(languages):
        if isinstance(lang, str):
            lang = {"code": lang}
        code = str(lang.get("code", f"l{k}"))
        plans.append((code, {
            "seed": int(lang.get("seed", seed * 1000 + k)),
            "lexicon_size": int(lang.get("lexicon_size", cfg.get("lexicon_size", 2000))),
            "n_norm": int(lang.get("n_norm", cfg.get("n_norm", 6000))),
            "n_dev": int(lang.get("n_dev", cfg.get("n_dev", 1000))),
            "n_auto": int(lang.get("n_auto", cfg.get("n_auto", 10000))),
            "zipf": float(lang.get("zipf_exponent", cfg.get("zipf_exponent", 1.0))),
            "scale": float(lang.get("rules_scale", cfg.get("rules_scale", 1.0))),
        }))
    out.mkdir(parents=True, exist_ok=True)
    datasets = []
    for code, p in plans:
        rules = scale_rules(base_rules, p["scale"])
        norm, auto, g2p, lemma = generate_synthetic_corpus(
            p["seed"], p["lexicon_size"], rules, language=code, n_norm=p["n_norm"] + p["n_dev"], n_auto=p["n_auto"],
            zipf_exponent=p["zipf"])
        train_part = norm.with_pairs(norm.pairs[: p["n_norm"]])
        dev_part = norm.with_pairs(norm.pairs[p["n_norm"]:])
        dump_pairs(train_part, out / f"{code}.norm.train.tsv")
        dump_pairs(dev_part, out / f"{code}.norm.dev.tsv")
        dump_pairs(auto, out / f"{code}.auto.tsv")
        dump_pairs(g2p, out / f"{code}.g2p.tsv")
        dump_pairs(lemma, out / f"{code}.lemma.tsv")
        dump_rules(rules, out / f"{code}.rules.yaml")
        datasets += [
            {"name": code.upper(), "task": "normalization", "language": code,
             "train": f"{code}.norm.train.tsv", "dev": f"{code}.norm.dev.tsv"},
            {"name": f"{code}-auto", "task": "autoencoding", "language": code, "train": f"{code}.auto.tsv"},
            {"name": f"{code}-g2p", "task": "g2p", "language": code, "train": f"{code}.g2p.tsv"},
            {"name": f"{code}-lemma", "task": "lemmatization", "language": code, "train": f"{code}.lemma.tsv"},
        ]
    spec = {
        "datasets": datasets,
        "configs": ["SEADP"],
        "aux": ["autoencoding"],
        "sizes": [1000],
        "seeds": [seed],
        "hyperparameters": {"embed_dim": 16, "hidden_dim": 32, "lr": 0.01},
        "training": {"max_epochs": 20, "patience": 5},
        "zero_shot": {"target": plans[0][0], "epochs": 10, "samples_per_epoch": 1000},
    }
    path = out / "experiment.yaml"
    path.write_text(yaml.safe_dump(spec, sort_keys=False), encoding="utf-8")
    return path
