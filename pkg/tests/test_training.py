from __future__ import annotations

from collections import Counter
from itertools import islice

import numpy as np
import pytest

from normshare import numcore as nc
from normshare.data import TaskDataset, TokenPair, split_train_validation
from normshare.evalkit import predict, word_accuracy
from normshare.model import HyperParams, SharingConfig, parse_sharing_config
from normshare.training import (CompositeBatch, Cycler, EarlyStopping, InvariantViolation, Part, TrainLog,
                                TrainPlan, make_mtl_batches, make_zero_shot_schedule, train, train_zero_shot,
                                zero_shot_combinations)

# normalization inventory: dataset name -> language (two German and two Slovene sets)
INVENTORY = {"EN": "en", "DE_A": "de", "DE_R": "de", "ES": "es", "HU": "hu", "IS": "is", "PT": "pt",
             "SL_B": "sl", "SL_G": "sl", "SV": "sv"}
AUX = ("autoencoding", "g2p", "lemmatization")


def _ds(name, task, language, n, prefix="w"):
    pairs = tuple(TokenPair(f"{prefix}{name}{k}", f"{prefix}{name}{k}") for k in range(n))
    return TaskDataset(task, language, pairs, name)


def _inventory(n=3):
    out = [_ds(name, "normalization", lang, n) for name, lang in INVENTORY.items()]
    for lang in sorted(set(INVENTORY.values())):
        out += [_ds(f"{lang}-{t}", t, lang, n) for t in AUX]
    return out


def test_cycler_without_replacement():
    cyc = Cycler(list(range(7)), np.random.default_rng(0))
    first = cyc.take(7)
    assert sorted(first) == list(range(7))
    draws = cyc.take(10) + cyc.take(4)
    assert sorted(draws) == sorted(list(range(7)) * 2)


def test_batch_balance_three_aux():
    hp = HyperParams(batch_size_main=30, aux_tokens_per_batch=10)
    main = _ds("m", "normalization", "xx", 900)
    aux = [_ds("a", "autoencoding", "xx", 7), _ds("g", "g2p", "xx", 5000), _ds("l", "lemmatization", "xx", 13)]
    stream = make_mtl_batches(main, aux, hp, np.random.default_rng(0))
    epoch1 = [b for b in islice(stream, 31)]
    assert epoch1[-1].epoch == 2 and all(b.epoch == 1 for b in epoch1[:-1])
    main_seen = Counter()
    for b in epoch1[:-1]:
        assert [len(p.pairs) for p in b.parts] == [30, 10, 10, 10]
        assert b.size == 60
        main_seen.update(b.parts[0].pairs)
    assert main_seen == Counter(main.pairs)


def test_single_task_batches_and_short_final():
    hp = HyperParams(batch_size_main=30)
    main = _ds("m", "normalization", "xx", 95)
    batches = list(islice(make_mtl_batches(main, [], hp, np.random.default_rng(0)), 4))
    assert [len(b.parts) for b in batches] == [1, 1, 1, 1]
    assert [len(b.parts[0].pairs) for b in batches] == [30, 30, 30, 5]


def test_early_stopping_example():
    es = EarlyStopping(5)
    stops = [es.update(e, a) for e, a in enumerate([10, 20, 20, 20, 20, 20, 20], start=1)]
    assert stops == [False] * 6 + [True]
    assert es.best_epoch == 2
    es = EarlyStopping(5)
    assert not any(es.update(e, float(e)) for e in range(1, 51))


def test_zero_shot_combination_count():
    datasets = _inventory()
    combos = zero_shot_combinations(datasets, "en")
    assert len(combos) == 33
    sl = zero_shot_combinations(datasets, "sl")
    names = {d.name for d in sl}
    assert "SL_B" not in names and "SL_G" not in names
    assert {f"sl-{t}" for t in AUX} <= names
    assert len(zero_shot_combinations(datasets, "de")) == 32


def test_zero_shot_errors():
    with pytest.raises(ValueError):
        zero_shot_combinations([_ds("a", "normalization", "xx", 3), _ds("b", "autoencoding", "xx", 3)], "xx")
    with pytest.raises(ValueError):
        zero_shot_combinations([_ds("a", "normalization", "xx", 3), _ds("b", "autoencoding", "yy", 3)], "xx")


def test_zero_shot_schedule_equal_samples_and_tags():
    datasets = _inventory(n=40)
    stream = make_zero_shot_schedule(datasets, "en", np.random.default_rng(0), samples_per_epoch=95,
                                     samples_per_update=10)
    per_combo = Counter()
    batches = list(islice(stream, 10))
    assert all(b.epoch == 1 for b in batches)
    for b in batches:
        sizes = {len(p.pairs) for p in b.parts}
        assert len(sizes) == 1
        for part in b.parts:
            assert not (part.task == "normalization" and part.language == "en")
            per_combo[part.dataset] += len(part.pairs)
            for pair in part.pairs:
                syms = pair.source_symbols()
                assert syms[0].startswith("<LANG=") and syms[1].startswith("<TASK=")
                assert not syms[2].startswith("<")
    assert len(per_combo) == 33 and set(per_combo.values()) == {95}
    assert next(stream).epoch == 2


def test_zero_shot_total_samples_arithmetic():
    epochs, combos, per_epoch = 10, len(zero_shot_combinations(_inventory(), "en")), 1000
    assert epochs * combos * per_epoch == 330_000


def _zs_setup():
    """Three languages; two normalization sets share language 'aa'."""
    ds = []
    for name, lang in (("AA1", "aa"), ("AA2", "aa"), ("BB", "bb"), ("CC", "cc")):
        ds.append(TaskDataset("normalization", lang,
                              tuple(TokenPair(f"x{name[0]}{k}", f"y{name[0]}{k}") for k in range(12)), name))
    for lang in ("aa", "bb", "cc"):
        ds.append(_ds(f"{lang}-auto", "autoencoding", lang, 12))
    return ds


def test_train_zero_shot_exclusion(caplog):
    hp = HyperParams(embed_dim=4, hidden_dim=6, dropout=0.0)
    plan = TrainPlan(None, config=SharingConfig(), hp=hp, mode="zero_shot", datasets=_zs_setup(),
                     target_language="aa", epochs=2, samples_per_epoch=20, samples_per_update=10)
    model, log = train_zero_shot(plan)
    assert log.tokens("normalization", "aa") == 0
    assert log.tokens("normalization", "bb") == 40
    assert log.config == "SEATDP" and str(model.config) == "SEATDP"
    assert len(log.records) == 2 and log.stop_reason == "fixed_epochs"
    assert "SEATDP" in caplog.text


def test_train_zero_shot_injected_violation():
    hp = HyperParams(embed_dim=4, hidden_dim=6, dropout=0.0)
    datasets = _zs_setup()
    plan = TrainPlan(None, hp=hp, config=parse_sharing_config("SEATDP"), mode="zero_shot", datasets=datasets,
                     target_language="aa", epochs=1, samples_per_epoch=10, samples_per_update=10)
    bad = CompositeBatch(1, 0, [Part("normalization", "aa", "AA1", list(datasets[0].pairs[:2]))])
    with pytest.raises(InvariantViolation):
        train_zero_shot(plan, schedule=iter([bad]))


def _plan(corpus, config="", aux=True, **kw):
    norm, auto = corpus[0], corpus[1]
    hp = kw.pop("hp", HyperParams(embed_dim=6, hidden_dim=8, dropout=0.0, lr=0.01))
    main = norm.with_pairs(norm.pairs[:40])
    return TrainPlan(main, [auto] if aux else [], parse_sharing_config(config), hp, **kw)


def test_train_log_and_best_checkpoint(corpus, tmp_path):
    plan = _plan(corpus, "SEADP", max_epochs=4, patience=2, seed=3)
    model, log = train(plan)
    assert 1 <= len(log.records) <= 4
    assert log.stop_reason in ("patience", "max_epochs")
    for r in log.records:
        assert r.tokens_seen["normalization/xx"] == 36
        assert r.tokens_seen["autoencoding/xx"] == 2 * 10
    accs = [r.val_acc for r in log.records]
    assert log.best_epoch == 1 + accs.index(max(accs))
    _, val = split_train_validation(plan.main)
    assert word_accuracy(predict(model, "normalization", list(val.pairs))) == max(accs)
    log.write(tmp_path / "log.jsonl")
    again = TrainLog.read(tmp_path / "log.jsonl")
    assert again.records == log.records


def test_train_determinism(corpus):
    a_model, a_log = train(_plan(corpus, "SE", max_epochs=2, patience=5, seed=7))
    b_model, b_log = train(_plan(corpus, "SE", max_epochs=2, patience=5, seed=7))
    assert a_log.to_jsonl() == b_log.to_jsonl()
    for x, y in zip(a_model.parameters(), b_model.parameters()):
        assert x.value.tobytes() == y.value.tobytes()


def test_train_empty_or_small_main(corpus):
    norm = corpus[0]
    with pytest.raises(nc.ContractError):
        train(TrainPlan(norm.with_pairs(norm.pairs[:5])))

