from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normshare.data import (SPECIALS, DataFormatError, TaskDataset, TokenPair, Vocabulary, build_vocabularies,
                            dump_pairs, lang_tag, load_pairs, split_train_validation, tag_for_zero_shot, task_tag,
                            truncate)
from normshare.numcore import ContractError


def _ds(n, task="normalization"):
    return TaskDataset(task, "xx", tuple(TokenPair(f"w{k}", f"w{k}") for k in range(n)))


def test_load_pairs_basic(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("# comment\nvnd\tund\n\nHaus\thaus\n", encoding="utf-8")
    ds = load_pairs(p, "normalization", "de")
    assert ds.pairs == (TokenPair("vnd", "und"), TokenPair("Haus", "haus"))
    assert ds.language == "de" and ds.task == "normalization"


def test_load_pairs_one_column_autoencoding(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("haus\nbaum\n", encoding="utf-8")
    assert load_pairs(p, "autoencoding", "de").pairs[0] == TokenPair("haus", "haus")


def test_load_pairs_three_columns_names_line(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("a\tb\nc\td\te\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match=":2:"):
        load_pairs(p, "normalization", "xx")


def test_load_pairs_empty_file(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("\n# only a comment\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_pairs(p, "normalization", "xx")


def test_load_pairs_autoencoding_mismatch(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("haus\thaus\nbaum\tbaun\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match=":2:"):
        load_pairs(p, "autoencoding", "xx")


def test_aux_cleaning_drops_internal_whitespace(tmp_path):
    p = tmp_path / "l.tsv"
    p.write_text("  gingen \tgehen\nging aus\tausgehen\n", encoding="utf-8")
    assert load_pairs(p, "lemmatization", "de").pairs == (TokenPair("gingen", "gehen"),)
    g = tmp_path / "g.tsv"
    g.write_text("haus\th au s\n", encoding="utf-8")
    assert load_pairs(g, "g2p", "de").pairs == (TokenPair("haus", "h au s"),)


def test_case_preserved(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("Vnd\tUnd\n", encoding="utf-8")
    assert load_pairs(p, "normalization", "de").pairs[0] == TokenPair("Vnd", "Und")


def test_round_trip(tmp_path):
    p = tmp_path / "d.tsv"
    text = "vnd\tund\nvnd\tund\nhaus\thaus\n"
    p.write_text(text, encoding="utf-8")
    q = tmp_path / "e.tsv"
    dump_pairs(load_pairs(p, "normalization", "de"), q)
    assert q.read_text(encoding="utf-8") == text


def test_autoencoding_invariant():
    with pytest.raises(DataFormatError):
        TaskDataset("autoencoding", "xx", (TokenPair("a", "b"),))
    with pytest.raises(ValueError):
        TaskDataset("parsing", "xx", ())


def test_truncate_examples():
    ds = _ds(2000)
    assert len(truncate(ds, 1000)) == 1000
    assert truncate(ds, 5000) == ds
    assert truncate(ds, 100).pairs == ds.pairs[:100]
    with pytest.raises(ContractError):
        truncate(ds, 0)


@given(st.integers(1, 60), st.integers(1, 60))
def test_truncate_prefix_property(a, b):
    a, b = sorted((a, b))
    ds = _ds(40)
    small, big = truncate(ds, a).pairs, truncate(ds, b).pairs
    assert big[: len(small)] == small


@pytest.mark.parametrize("n,train,val", [(1000, 900, 100), (10, 9, 1), (100, 90, 10), (11, 10, 1)])
def test_split_examples(n, train, val):
    ds = _ds(n)
    tr, va = split_train_validation(ds)
    assert (len(tr), len(va)) == (train, val)
    assert tr.pairs + va.pairs == ds.pairs


def test_split_too_small():
    with pytest.raises(ContractError):
        split_train_validation(_ds(9))


def test_vocabulary_specials_and_stability():
    ds = TaskDataset("normalization", "xx", (TokenPair("ab", "ba"),))
    src, tgt = build_vocabularies([ds])
    assert src.symbols == [*SPECIALS, "a", "b"]
    assert tgt.symbols == [*SPECIALS, "b", "a"]
    assert src.encode("az") == [4, src.unk_id]
    assert build_vocabularies([ds])[0].symbols == src.symbols
    assert src.decode([1, 4, 5, 2]) == ["a", "b"]


def test_g2p_target_symbols():
    ds = TaskDataset("g2p", "xx", (TokenPair("haus", "h aU s"),))
    _, tgt = build_vocabularies([ds])
    assert tgt.symbols[len(SPECIALS):] == ["h", "aU", "s"]


def test_zero_shot_tag_symbols():
    datasets = [_ds(3)]
    langs = [f"l{k}" for k in range(8)]
    tasks = ["normalization", "autoencoding", "g2p", "lemmatization"]
    src, _ = build_vocabularies(datasets, (langs, tasks))
    plain, _ = build_vocabularies(datasets)
    assert len(src) - len(plain) == 12


def test_tag_for_zero_shot():
    src, _ = build_vocabularies([_ds(3)], (["de"], ["normalization", "autoencoding"]))
    tagged = tag_for_zero_shot(TokenPair("vnd", "und"), "de", "normalization", src)
    assert tagged.source_symbols() == ["<LANG=de>", "<TASK=norm>", "v", "n", "d"]
    assert tagged.target == "und"
    with pytest.raises(ContractError):
        tag_for_zero_shot(tagged, "de", "normalization")
    other = tag_for_zero_shot(TokenPair("vnd", "vnd"), "de", "autoencoding", src)
    assert other.source_symbols()[0] == tagged.source_symbols()[0]
    assert other.source_symbols()[2:] == tagged.source_symbols()[2:]
    assert other.source_symbols()[1] != tagged.source_symbols()[1]
    with pytest.raises(KeyError):
        tag_for_zero_shot(TokenPair("a", "a"), "sv", "normalization", src)
    assert lang_tag("de") == "<LANG=de>" and task_tag("g2p") == "<TASK=g2p>"


def test_vocabulary_validation():
    with pytest.raises(ValueError):
        Vocabulary(["a", "b"])
    with pytest.raises(ValueError):
        Vocabulary([*SPECIALS, "a", "a"])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.text("abcäöü", min_size=1, max_size=6), st.text("abcäöü", min_size=1, max_size=6)),
                min_size=1, max_size=20))
def test_round_trip_property(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("rt")
    ds = TaskDataset("normalization", "xx", tuple(TokenPair(s, t) for s, t in rows))
    dump_pairs(ds, d / "x.tsv")
    assert load_pairs(d / "x.tsv", "normalization", "xx").pairs == ds.pairs
