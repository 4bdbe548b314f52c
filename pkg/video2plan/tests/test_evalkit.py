import pytest
import numpy as np
from numpy.testing import assert_array_almost_equal, assert_array_equal

from video2plan.evalkit import (
    ACTION_SET,
    NO_ACTION,
    confusion_matrix,
    evaluate,
    match_trees,
    pool_reports,
    precision_recall,
    save_report,
    timeline_export,
    tree_action,
)
from video2plan.grammar import TreeEntry, VisualSentence, parse
from video2plan.utils import read_json

CUT = ("RH_P1", "knife", "cut", "onion")
STIR = ("RH_P1", "spoon", "stir", "pot")
GRASP = ("RH_P1", "knife")


def tree(words):
    kinds = ["H", "O"] + ["A"] * (len(words) > 2) + ["O"] * (len(words) - 3)
    return parse(VisualSentence(list(zip(kinds, words))))


def entry(words, start, end, hand="RH_P1", failure=None):
    return TreeEntry(None, start, end, hand, hand[-2:], tree(words), None, failure)


@pytest.mark.parametrize(
    "counts,expected",
    [
        ((24, 16, 32), (0.67, 0.50)),
        ((24, 14, 37), (0.58, 0.38)),
        ((48, 30, 70), (0.63, 0.43)),
    ],
)
def test_precision_recall_arithmetic(counts, expected):
    precision, recall, flag = precision_recall(*counts)
    assert precision == pytest.approx(expected[0], abs=0.005)
    assert recall == pytest.approx(expected[1], abs=0.005)
    assert not flag


def test_pooled_counts():
    first = match_trees([entry(CUT, 0, 30)], [entry(CUT, 0, 30), entry(STIR, 30, 60)])
    second = match_trees(
        [entry(STIR, 0, 30), entry(CUT, 30, 60)], [entry(STIR, 10, 20)]
    )
    pooled = pool_reports([first, second])
    assert (pooled.detected, pooled.correct, pooled.truth) == (3, 2, 3)
    assert pooled.precision == pytest.approx(2 / 3)
    assert pooled.recall == pytest.approx(2 / 3)


def test_no_predictions():
    report = match_trees([], [entry(CUT, 0, 30)])
    assert (report.precision, report.recall, report.no_detections) == (0.0, 0.0, True)
    with pytest.raises(ValueError):
        precision_recall(3, 4, 10)


def test_spans_must_overlap():
    report = match_trees([entry(CUT, 0, 30)], [entry(CUT, 30, 60)])
    assert report.correct == 0
    report = match_trees([entry(CUT, 0, 31)], [entry(CUT, 30, 60)])
    assert report.matches == [(0, 0)]


def test_matching_is_one_to_one():
    pred = [entry(CUT, 0, 40), entry(CUT, 20, 60)]
    truth = [entry(CUT, 10, 50)]
    report = match_trees(pred, truth)
    assert report.matches == [(0, 0)]
    assert (report.precision, report.recall) == (0.5, 1.0)

    truth = [entry(CUT, 0, 25), entry(CUT, 25, 60)]
    report = match_trees(pred, truth)
    assert report.matches == [(0, 0), (1, 1)]


def test_failures_are_counted_when_missed():
    truth = [
        entry(CUT, 0, 30, failure="A"),
        entry(STIR, 30, 60, failure="OO"),
        entry(CUT, 60, 90, failure="HO"),
    ]
    report = match_trees([entry(CUT, 0, 30)], truth)
    assert report.failures == {"A": 0, "HO": 1, "OO": 1}


def test_counts_are_integral(seed):
    rng = np.random.RandomState(seed)
    pool = [CUT, STIR, GRASP]
    for _ in range(500):
        pred = [
            entry(pool[rng.randint(3)], s, s + rng.randint(1, 60))
            for s in rng.randint(0, 300, rng.randint(0, 8))
        ]
        truth = [
            entry(pool[rng.randint(3)], s, s + rng.randint(1, 60))
            for s in rng.randint(0, 300, rng.randint(1, 8))
        ]
        report = match_trees(pred, truth)
        assert report.precision * report.detected == pytest.approx(report.correct)
        assert report.recall * report.truth == pytest.approx(report.correct)
        assert len({j for _, j in report.matches}) == len(report.matches)
        for i, j in report.matches:
            assert pred[i].tree == truth[j].tree


def test_confusion_matrix():
    both = ["cut", "stir"]
    assert_array_equal(confusion_matrix(both, both, both), np.eye(2))
    wrong = confusion_matrix(["stir", "stir"], ["cut", "cut"], ["cut", "stir"])
    assert_array_equal(wrong, [[0.0, 1.0], [0.0, 0.0]])

    truth = "cut cut stir pour pour pour heat cut stir roll".split()
    pred = "cut stir stir pour heat pour heat cut cut none".split()
    actions = ["cut", "heat", "pour", "roll", "stir", "none"]
    matrix = confusion_matrix(pred, truth, actions)
    sums = matrix.sum(axis=1)
    assert_array_almost_equal(sums[:5], np.ones(5), decimal=9)
    assert sums[5] == 0.0
    raw = confusion_matrix(pred, truth, actions, normalize=False)
    assert raw.sum() == 10
    nonzero = raw.sum(axis=1) > 0
    rows = raw[nonzero] / raw.sum(axis=1)[nonzero][:, None]
    assert_array_almost_equal(matrix[nonzero], rows)

    assert confusion_matrix([], [], actions).shape == (6, 6)
    with pytest.raises(ValueError):
        confusion_matrix(["cut"], [], actions)


def test_tree_action():
    assert tree_action(tree(CUT)) == "cut"
    assert tree_action(tree(GRASP)) == NO_ACTION
    handover = parse(
        VisualSentence(
            [
                ("H", "LH_P1"),
                ("O", "lemon"),
                ("C", "handover"),
                ("H", "RH_P2"),
                ("O", "lemon"),
            ]
        )
    )
    assert tree_action(handover) == "handover"


def test_timeline_export():
    frame = timeline_export([entry(CUT, 0, 3)], [entry(CUT, 0, 3)])
    assert frame.values.tolist() == [["P1", i, "cut", "cut"] for i in range(3)]

    frame = timeline_export([], [entry(STIR, 0, 2)])
    assert frame.predicted.tolist() == [NO_ACTION, NO_ACTION]
    assert frame.truth.tolist() == ["stir", "stir"]

    frame = timeline_export(
        [entry(CUT, 0, 2, hand="RH_P2"), entry(STIR, 0, 2)], [entry(STIR, 1, 3)]
    )
    assert frame.agent.tolist() == ["P1", "P1", "P1", "P2", "P2"]
    assert frame.frame.tolist() == [0, 1, 2, 0, 1]
    assert frame.predicted.tolist() == ["stir", "stir", NO_ACTION, "cut", "cut"]


def test_evaluate_report(tmp_path):
    pred = [entry(CUT, 0, 30), entry(STIR, 30, 60)]
    truth = [entry(CUT, 0, 30), entry(CUT, 30, 60, failure="A")]
    report = evaluate(pred, truth)
    assert (report["detected"], report["correct"], report["truth"]) == (2, 1, 2)
    assert report["failures"]["A"] == 1
    labels = report["confusion"]["labels"]
    assert labels == ACTION_SET
    matrix = np.array(report["confusion"]["matrix"])
    assert matrix[labels.index("cut"), labels.index("cut")] == 0.5
    assert matrix[labels.index("cut"), labels.index("stir")] == 0.5

    path = str(tmp_path / "report.json")
    save_report(report, path)
    assert read_json(path) == report
