# License: BSD 2 clause
"""Precision, recall, confusion matrices and timelines of action trees.

A predicted tree is correct when an unmatched ground truth entry has an
identical tree and a temporally overlapping span. Precision is the share of
detected trees that are correct, recall the share of ground truth trees
that were found.
"""
from collections import namedtuple
from enum import Enum

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix as sk_confusion_matrix

from video2plan.recognize import ActionLabel
from video2plan.utils import write_json

NO_ACTION = "none"


class FailureKind(Enum):
    ACTION_RECOGNITION = "A"
    HAND_OBJECT = "HO"
    OBJECT_OBJECT = "OO"


MatchReport = namedtuple(
    "MatchReport",
    [
        "detected",
        "correct",
        "truth",
        "precision",
        "recall",
        "no_detections",
        "matches",
        "failures",
    ],
)
MatchReport.__doc__ = """Counts and ratios of one evaluation.

``matches`` holds ``(prediction index, truth index)`` pairs; ``failures``
counts annotated failure kinds among unmatched ground truth entries;
``no_detections`` flags a precision reported as 0 for lack of predictions.
"""


def precision_recall(detected, correct, truth):
    """(precision, recall, no_detections) from counts."""
    if not 0 <= correct <= detected or correct > truth:
        raise ValueError(
            f"inconsistent counts: detected {detected}, correct {correct}, "
            f"truth {truth}"
        )
    precision = correct / detected if detected > 0 else 0.0
    recall = correct / truth if truth > 0 else 0.0
    return precision, recall, detected == 0


def overlap(a, b):
    """Frames shared by two entries' ``[start, end)`` spans."""
    return min(a.end_frame, b.end_frame) - max(a.start_frame, b.start_frame)


def match_trees(pred, truth):
    """Greedy one-to-one matching of predicted to ground truth trees.

    Predictions are visited in span order; each takes the unmatched ground
    truth entry with an identical tree and the largest positive overlap.

    Parameters
    ----------
    pred: list of TreeEntry

    truth: list of TreeEntry

    Returns
    -------
    report: MatchReport
    """
    pred_order = sorted(
        range(len(pred)),
        key=lambda i: (pred[i].start_frame, pred[i].end_frame, pred[i].hand),
    )
    truth_order = sorted(
        range(len(truth)),
        key=lambda j: (truth[j].start_frame, truth[j].end_frame, truth[j].hand),
    )
    unmatched = set(range(len(truth)))
    matches = []
    for i in pred_order:
        best, best_overlap = None, 0
        for j in truth_order:
            if j not in unmatched or truth[j].tree != pred[i].tree:
                continue
            shared = overlap(pred[i], truth[j])
            if shared > best_overlap:
                best, best_overlap = j, shared
        if best is not None:
            unmatched.discard(best)
            matches.append((i, best))

    failures = {kind.value: 0 for kind in FailureKind}
    for j in unmatched:
        if truth[j].failure is not None:
            failures[FailureKind(truth[j].failure).value] += 1

    precision, recall, flag = precision_recall(len(pred), len(matches), len(truth))
    return MatchReport(
        len(pred),
        len(matches),
        len(truth),
        precision,
        recall,
        flag,
        sorted(matches),
        failures,
    )


def pool_reports(reports):
    """Totals over several videos, with ratios recomputed from the counts."""
    detected = sum(report.detected for report in reports)
    correct = sum(report.correct for report in reports)
    truth = sum(report.truth for report in reports)
    failures = {kind.value: 0 for kind in FailureKind}
    for report in reports:
        for kind, count in report.failures.items():
            failures[kind] += count
    precision, recall, flag = precision_recall(detected, correct, truth)
    return MatchReport(detected, correct, truth, precision, recall, flag, [], failures)


def confusion_matrix(pred_labels, truth_labels, actions, normalize=True):
    """Confusion matrix with truth in rows and predictions in columns.

    Parameters
    ----------
    pred_labels, truth_labels: sequences of str
        Aligned labels of matched instances.

    actions: sequence of str
        Row and column order.

    normalize: bool (optional, default True)
        Divide each row by its sum; empty rows stay zero.
    """
    if len(pred_labels) != len(truth_labels):
        raise ValueError("label lists must be aligned")
    if len(truth_labels) == 0:
        return np.zeros((len(actions), len(actions)))
    return sk_confusion_matrix(
        list(truth_labels),
        list(pred_labels),
        labels=list(actions),
        normalize="true" if normalize else None,
    ).astype(np.float64)


def tree_action(tree):
    """Action or collaboration word of ``tree``; ``"none"`` for a grasp."""
    for word, kind in tree.pos():
        if kind in ("A", "C"):
            return word
    return NO_ACTION


def aligned_labels(pred, truth):
    """Labels of each ground truth entry and its best-overlapping prediction.

    Predictions are restricted to the same hand; without any overlapping
    one the predicted label is ``"none"``.
    """
    pred_labels, truth_labels = [], []
    for entry in sorted(truth, key=lambda e: (e.start_frame, e.hand)):
        best, best_overlap = None, 0
        for candidate in pred:
            if candidate.hand != entry.hand:
                continue
            shared = overlap(candidate, entry)
            if shared > best_overlap:
                best, best_overlap = candidate, shared
        truth_labels.append(tree_action(entry.tree))
        pred_labels.append(tree_action(best.tree) if best is not None else NO_ACTION)
    return pred_labels, truth_labels


ACTION_SET = [label.value for label in ActionLabel] + [NO_ACTION]


def timeline_export(pred, truth):
    """One row per agent and frame with the predicted and true labels.

    Parameters
    ----------
    pred, truth: lists of TreeEntry

    Returns
    -------
    frame: pandas.DataFrame
        Columns ``agent, frame, predicted, truth``; sorted by agent and
        frame, covering every frame some entry of that agent spans.
    """
    labels = {}
    for column, entries in (("predicted", pred), ("truth", truth)):
        for entry in sorted(entries, key=lambda e: (e.start_frame, e.hand)):
            for frame in range(entry.start_frame, entry.end_frame):
                row = labels.setdefault(
                    (entry.agent, frame), {"predicted": NO_ACTION, "truth": NO_ACTION}
                )
                if row[column] == NO_ACTION:
                    row[column] = tree_action(entry.tree)
    rows = [
        (agent, frame, row["predicted"], row["truth"])
        for (agent, frame), row in sorted(labels.items())
    ]
    return pd.DataFrame(rows, columns=["agent", "frame", "predicted", "truth"])


def evaluate(pred, truth, actions=None):
    """Full evaluation report as a JSON-ready dict."""
    actions = list(actions or ACTION_SET)
    report = match_trees(pred, truth)
    pred_labels, truth_labels = aligned_labels(pred, truth)
    matrix = confusion_matrix(pred_labels, truth_labels, actions)
    return {
        "detected": report.detected,
        "correct": report.correct,
        "truth": report.truth,
        "precision": report.precision,
        "recall": report.recall,
        "no_detections": report.no_detections,
        "failures": report.failures,
        "matches": [list(pair) for pair in report.matches],
        "confusion": {"labels": actions, "matrix": matrix.tolist()},
    }


def save_report(report, path):
    write_json(report, path)
