import math
import os
import pathlib

import pytest

import tdtd

SOURCE_DIR = pathlib.Path(os.environ.get("TDTD_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))
TOY_GRAMMAR = SOURCE_DIR / "data" / "toy.pcfg"
EXAMPLE = "(S (NP (DT the) (NN cat)) (VP (VBD sat)))"


@pytest.fixture(scope="module")
def grammar():
    return tdtd.Grammar.from_file(str(TOY_GRAMMAR)).pruned()


@pytest.fixture(scope="module")
def trees(grammar):
    return grammar.dataset(count=40, nodes=8, seed=1)


def test_tree_round_trip():
    t = tdtd.Tree.parse(EXAMPLE)
    assert str(t) == EXAMPLE
    assert t.words == ["the", "cat", "sat"]
    assert t.nonterminal_count == 6
    assert t.layers()[1] == ["NP", "VP"]
    assert tdtd.delinearize(t.linearize()) == t
    assert tdtd.delinearize(["(S", "a"]) is None
    assert t.violations() == []


def test_parse_error_is_value_error():
    with pytest.raises(ValueError):
        tdtd.Tree.parse("(S (NP")


def test_grammar_nll_matches_hand_value():
    g = tdtd.Grammar.from_text(
        'S NP VP 0.8\nNP DT NN 1.0\nVP VBD 0.6\nDT "the" 1.0\nNN "cat" 0.7\nVBD "sat" 1.0\n', start=["S"]
    )
    assert g.nll(tdtd.Tree.parse(EXAMPLE)) == pytest.approx(1.0906, abs=1e-4)


def test_dataset_is_deterministic(grammar):
    a = grammar.dataset(count=5, nodes=8, seed=3)
    b = grammar.dataset(count=5, nodes=8, seed=3)
    assert [str(t) for t in a] == [str(t) for t in b]
    assert all(t.nonterminal_count == 8 for t in a)


def test_tdtd_model_generates_valid_consistent_trees(trees):
    m = tdtd.TdtdModel(trees, hidden=8, seed=2)
    for seed in range(20):
        tree, log_prob, decisions = m.generate(seed)
        assert tree.violations() == []
        assert math.fsum(decisions) == pytest.approx(log_prob, abs=1e-10)
        assert m.log_prob(tree) == pytest.approx(log_prob, abs=1e-10)


def test_training_reports_rows(trees):
    m = tdtd.TdtdModel(trees, hidden=8, seed=2)
    report = m.train(trees[:20], trees[20:], epochs=2, learning_rate=1e-2, seed=4)
    rows = report["rows"]
    assert len(rows) == 3
    assert math.isnan(rows[0]["train_nll"])
    assert rows[2]["dev_nll"] < rows[0]["dev_nll"]


def test_parser_reranks_and_seq_lm_samples(trees):
    p = tdtd.TdtdParser(trees, hidden=8, seed=3)
    gold = trees[0]
    ranking = p.rerank(gold.words, [gold, gold])
    assert [i for i, _ in ranking] == [0, 1]
    assert ranking[0][1] == ranking[1][1]

    lm = tdtd.SeqLm(trees, hidden=8, seed=4)
    tokens, log_prob, terminated = lm.sample(5)
    if terminated:
        assert lm.log_prob(tokens) == pytest.approx(log_prob, abs=1e-10)


def test_sample_report_and_metrics(grammar, trees):
    r = tdtd.sample_report([t.linearize() for t in trees] + [["(S", ")", ")"]], grammar)
    assert r["samples"] == len(trees) + 1
    assert r["fail"] == pytest.approx(1 / (len(trees) + 1))
    assert tdtd.bleu([["the", "cat", "sat"]], [["the", "cat", "sat", "down"]], n=2) == pytest.approx(0.7165, abs=1e-4)
    p, r_, f = tdtd.bracket_f1(
        tdtd.Tree.parse("(S (NP (DT a)) (VP (NN b) (VB c)))"), tdtd.Tree.parse("(S (NP (DT a) (NN b)) (VP (VB c)))")
    )
    assert f == pytest.approx(1 / 3, abs=1e-9)


def test_run_cli():
    code, out, _ = tdtd.run_cli(["grad-check", "--model", "seq-lm", "--seed", "1"])
    assert code == 0
    assert out.rstrip().endswith("OK")
    code, _, _ = tdtd.run_cli(["frobnicate"])
    assert code != 0
