"""Classification metrics, protocol runners, and NPMI topic coherence.

Macro F1 averages the per-class F1 of all three labels (support, oppose,
none); P+/R+ and P-/R- report precision/recall for support and oppose.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .corpus import (
    LABELS,
    LABEL_TO_INDEX,
    DatasetSplit,
    make_cross_target_split,
    make_in_target_folds,
)

logger = logging.getLogger(__name__)

NPMI_SMOOTHING = 1e-12


def confusion(golds, preds) -> np.ndarray:
    """3x3 counts, rows gold, columns predicted, order (support, oppose, none)."""
    if len(golds) != len(preds):
        raise ValueError(f"length mismatch: {len(golds)} golds vs {len(preds)} preds")
    cm = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    for g, p in zip(golds, preds):
        cm[LABEL_TO_INDEX[g], LABEL_TO_INDEX[p]] += 1
    return cm


@dataclass
class MetricReport:
    macro_f1: float
    precision_support: float
    precision_oppose: float
    recall_support: float
    recall_oppose: float

    def row(self) -> tuple[float, ...]:
        return (
            self.macro_f1,
            self.precision_support,
            self.precision_oppose,
            self.recall_support,
            self.recall_oppose,
        )


def metric_report(cm: np.ndarray) -> MetricReport:
    """Per-class precision/recall (0/0 -> 0), macro F1 over all three classes."""
    cm = np.asarray(cm)
    precision, recall, f1 = [], [], []
    for i in range(len(LABELS)):
        pred_total = cm[:, i].sum()
        gold_total = cm[i, :].sum()
        p = cm[i, i] / pred_total if pred_total else 0.0
        r = cm[i, i] / gold_total if gold_total else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if (p + r) else 0.0)
    return MetricReport(
        macro_f1=float(np.mean(f1)),
        precision_support=float(precision[0]),
        precision_oppose=float(precision[1]),
        recall_support=float(recall[0]),
        recall_oppose=float(recall[1]),
    )


def mean_report(reports) -> MetricReport:
    """Arithmetic mean of each metric across reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    rows = np.array([r.row() for r in reports])
    return MetricReport(*[float(x) for x in rows.mean(axis=0)])


def run_in_target(train_fn, examples, k: int = 10, seed: int = 0):
    """k-fold protocol: train per fold via `train_fn(split, seed) -> predict`.

    Returns (averaged report, per-fold reports). Each fold's model is trained
    from scratch and evaluated on that fold's test slice.
    """
    folds = make_in_target_folds(examples, k, seed)
    reports = []
    for i, split in enumerate(folds):
        predict_fn = train_fn(split, seed + i)
        preds = predict_fn(split.test)
        golds = [ex.label for ex in split.test]
        reports.append(metric_report(confusion(golds, preds)))
    return mean_report(reports), reports


def run_cross_target(train_fn, records, targets=None):
    """Leave-one-target-out protocol over every target (or the given list).

    Asserts on every run that the held-out target is absent from train and
    val. Returns (averaged report, {target: report}).
    """
    if targets is None:
        targets = sorted({r.target for r in records})
    per_target: dict[str, MetricReport] = {}
    for i, held_out in enumerate(targets):
        split = make_cross_target_split(records, held_out)
        assert_no_leakage(split)
        predict_fn = train_fn(split, i)
        preds = predict_fn(split.test)
        golds = [ex.label for ex in split.test]
        per_target[held_out] = metric_report(confusion(golds, preds))
    return mean_report(per_target.values()), per_target


def assert_no_leakage(split: DatasetSplit) -> None:
    if split.held_out_target is None:
        return
    seen = {ex.target for ex in split.train} | {ex.target for ex in split.val}
    if split.held_out_target in seen:
        raise AssertionError(
            f"held-out target {split.held_out_target!r} leaked into train/val"
        )


def _window_sets(corpus_docs, window: int):
    """Boolean occurrence sets for every sliding window of each document."""
    if window < 1:
        raise ValueError("window must be >= 1")
    for doc in corpus_docs:
        doc = list(doc)
        if not doc:
            continue
        if len(doc) <= window:
            yield set(doc)
            continue
        for start in range(len(doc) - window + 1):
            yield set(doc[start : start + window])


def npmi(topic_words, corpus_docs, window: int = 10, cutoff: int = 10) -> float:
    """Mean pairwise NPMI of the top-`cutoff` words under sliding windows.

    Probabilities are window frequencies with additive smoothing; a word that
    never occurs is scored at the smoothing floor and flagged via logging.
    """
    words = list(topic_words)[:cutoff]
    if cutoff > len(topic_words):
        raise ValueError(f"cutoff {cutoff} exceeds the {len(topic_words)} topic words")
    if len(words) < 2:
        raise ValueError("need at least two words for pairwise NPMI")
    occur = {w: 0 for w in words}
    joint = {pair: 0 for pair in combinations(words, 2)}
    total = 0
    wordset = set(words)
    for win in _window_sets(corpus_docs, window):
        total += 1
        present = win & wordset
        for w in present:
            occur[w] += 1
        for pair in combinations(sorted(present), 2):
            key = pair if pair in joint else (pair[1], pair[0])
            if key in joint:
                joint[key] += 1
    if total == 0:
        raise ValueError("corpus has no windows")
    for w, c in occur.items():
        if c == 0:
            logger.warning("npmi: word %r never occurs in the corpus", w)
    eps = NPMI_SMOOTHING
    scores = []
    for (w1, w2), c12 in joint.items():
        p1 = occur[w1] / total + eps
        p2 = occur[w2] / total + eps
        p12 = c12 / total + eps
        scores.append(np.log(p12 / (p1 * p2)) / -np.log(p12))
    return float(np.mean(scores))


@dataclass
class CoherenceReport:
    """Per-topic NPMI at each cutoff plus the per-cutoff averages."""

    cutoffs: tuple[int, ...]
    per_topic: dict[int, dict[int, float]]
    averaged: dict[int, float]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("topic," + ",".join(f"npmi@{c}" for c in self.cutoffs) + "\n")
            for topic, row in sorted(self.per_topic.items()):
                fh.write(
                    f"{topic}," + ",".join(f"{row[c]:.6f}" for c in self.cutoffs) + "\n"
                )
            fh.write(
                "mean," + ",".join(f"{self.averaged[c]:.6f}" for c in self.cutoffs) + "\n"
            )


def coherence_report(
    topic_word_lists: dict[int, list[str]],
    corpus_docs,
    window: int = 10,
    cutoffs: tuple[int, ...] = (5, 10, 15, 20),
) -> CoherenceReport:
    docs = [list(d) for d in corpus_docs]
    per_topic: dict[int, dict[int, float]] = {}
    for topic, words in topic_word_lists.items():
        per_topic[topic] = {
            c: npmi(words, docs, window=window, cutoff=c) for c in cutoffs
        }
    averaged = {
        c: float(np.mean([row[c] for row in per_topic.values()])) for c in cutoffs
    }
    return CoherenceReport(tuple(cutoffs), per_topic, averaged)


def report_to_csv(path, rows: list[tuple[str, MetricReport]], mean_row: MetricReport | None = None) -> None:
    """Metric CSV: one row per fold/target plus an optional mean row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("unit,macro_f1,p_support,p_oppose,r_support,r_oppose\n")
        for name, rep in rows:
            fh.write(f"{name}," + ",".join(f"{x:.6f}" for x in rep.row()) + "\n")
        if mean_row is not None:
            fh.write("mean," + ",".join(f"{x:.6f}" for x in mean_row.row()) + "\n")
