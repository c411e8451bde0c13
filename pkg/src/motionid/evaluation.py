"""Per-subject accuracy metrics, majority voting and the scene-offset probe."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .pipeline import Pipeline, sample_at
from .take import Take

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    """``confusion[i, j]`` counts samples of class ``i`` predicted as ``j``."""

    classes: list[str]
    confusion: np.ndarray
    per_subject_accuracy: dict[str, float]
    n_samples: dict[str, int]
    mean_accuracy: float
    min_accuracy: float
    missing: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "classes": self.classes,
            "mean_accuracy": self.mean_accuracy,
            "min_accuracy": self.min_accuracy,
            "per_subject_accuracy": self.per_subject_accuracy,
            "n_samples": self.n_samples,
            "missing": self.missing,
            "confusion": self.confusion.astype(int).tolist(),
        }


def report_from_predictions(y_true, y_pred, classes) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    S = len(classes)
    confusion = np.zeros((S, S), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    n = confusion.sum(axis=1)
    per, counts, missing = {}, {}, []
    for i, c in enumerate(classes):
        counts[c] = int(n[i])
        if n[i] == 0:
            missing.append(c)
        else:
            per[c] = confusion[i, i] / n[i]
    if not per:
        raise ValueError("no labelled samples to score")
    accs = list(per.values())
    return EvalReport(list(classes), confusion, per, counts,
                      float(np.mean(accs)), float(np.min(accs)), missing)


def score_samples(model, samples) -> EvalReport:
    return report_from_predictions(samples.y, model.predict(samples.X), samples.classes)


def mean_min_accuracy(y_true, y_pred, n_classes: int) -> tuple[float, float]:
    """Macro mean and minimum of per-class accuracy over classes that occur."""
    y_true = np.asarray(y_true)
    correct = np.bincount(y_true, weights=(y_true == np.asarray(y_pred)), minlength=n_classes)
    total = np.bincount(y_true, minlength=n_classes)
    acc = correct[total > 0] / total[total > 0]
    return float(acc.mean()), float(acc.min())


# --- voting -------------------------------------------------------------------


def majority_vote(predictions, classes=None):
    """Most frequent label; ties go to the smallest class index.

    Class index is the position in ``classes`` when given, otherwise the
    labels' natural order.
    """
    if len(predictions) == 0:
        raise ValueError("majority vote of an empty list")
    counts = Counter(predictions)
    top = max(counts.values())
    tied = [label for label, c in counts.items() if c == top]
    if classes is not None:
        order = {c: i for i, c in enumerate(classes)}
        return min(tied, key=order.__getitem__)
    return min(tied)


def vote_batch(predictions: np.ndarray, n_classes: int) -> np.ndarray:
    """Row-wise majority vote of integer predictions ``(n, votes)``, same tie rule."""
    predictions = np.asarray(predictions, dtype=np.int64)
    counts = np.zeros((predictions.shape[0], n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(predictions.shape[0]), predictions.shape[1])
    np.add.at(counts, (rows, predictions.ravel()), 1)
    return counts.argmax(axis=1)


def simulate_voting(p_correct: float, n_classes: int, n_votes: int, trials: int,
                    rng: np.random.Generator) -> float:
    """Monte-Carlo voted accuracy of a predictor that names the true class with
    probability ``p_correct`` and otherwise a uniformly random wrong class."""
    truth = rng.integers(0, n_classes, trials)
    hit = rng.random((trials, n_votes)) < p_correct
    wrong = rng.integers(0, n_classes - 1, (trials, n_votes))
    wrong = wrong + (wrong >= truth[:, None])
    preds = np.where(hit, truth[:, None], wrong)
    return float(np.mean(vote_batch(preds, n_classes) == truth))


@dataclass
class VoteCurve:
    lengths_seconds: list[float]
    accuracy: list[float]
    n_placements: list[int]

    def to_csv(self) -> str:
        lines = ["length_seconds,accuracy"]
        lines += [f"{L!r},{a!r}" for L, a in zip(self.lengths_seconds, self.accuracy)]
        return "\n".join(lines) + "\n"

    def first_length_reaching(self, level: float = 1.0) -> float | None:
        for L, a in zip(self.lengths_seconds, self.accuracy):
            if a >= level:
                return L
        return None

    def to_json(self) -> dict:
        return {"lengths_seconds": self.lengths_seconds, "accuracy": self.accuracy,
                "n_placements": self.n_placements}


def default_lengths(sample_seconds: float, longest: float = 300.0, step: float = 5.0) -> list[float]:
    lengths = [sample_seconds]
    L = step
    while L <= longest + 1e-9:
        if L > sample_seconds:
            lengths.append(L)
        L += step
    return lengths


def vote_curve(model, test_takes: list[Take], lengths_seconds, placement_stride_seconds: float = 1.0,
               pipeline: Pipeline | None = None) -> VoteCurve:
    """Voted accuracy as a function of observed sequence length.

    Each placement starts every ``placement_stride_seconds`` and contains as
    many consecutive non-overlapping samples as fit into the length. Accuracy
    is averaged over placements per subject, then over subjects.
    """
    pipeline = pipeline or model.pipeline
    index = {c: i for i, c in enumerate(model.classes)}
    m = pipeline.sample_rows()
    per_take = []
    for take in test_takes:
        seq = pipeline.sequence(take)
        rate = seq.fps
        per_take.append((index[take.subject_id], seq, rate))

    lengths_out, acc_out, n_out = [], [], []
    cache: dict[tuple[int, int], int] = {}
    skipped = []
    for L in lengths_seconds:
        correct: dict[int, list[int]] = {}
        for ti, (label, seq, rate) in enumerate(per_take):
            k = int(math.floor(L * rate / m + 1e-9))
            if k < 1:
                continue
            n_rows = len(seq)
            stride_rows = placement_stride_seconds * rate
            starts_by_placement = []
            p = 0
            while True:
                s0 = int(round(p * stride_rows))
                if s0 + k * m > n_rows:
                    break
                starts_by_placement.append(s0 + m * np.arange(k))
                p += 1
            if not starts_by_placement:
                continue
            need = sorted({int(s) for st in starts_by_placement for s in st} - {s for (t, s) in cache if t == ti})
            if need:
                X = sample_at(seq, pipeline, np.array(need, dtype=np.int64))
                for s, pred in zip(need, model.predict(X)):
                    cache[(ti, s)] = int(pred)
            votes = np.array([[cache[(ti, int(s))] for s in st] for st in starts_by_placement])
            hits = vote_batch(votes, len(model.classes)) == label
            correct.setdefault(label, []).extend(hits.tolist())
        if not correct:
            skipped.append(L)
            continue
        lengths_out.append(float(L))
        acc_out.append(float(np.mean([np.mean(v) for v in correct.values()])))
        n_out.append(sum(len(v) for v in correct.values()))
    if skipped:
        log.warning("skipped %d lengths (%.3g to %.3g s) that are shorter than one sample or longer "
                    "than every take", len(skipped), min(skipped), max(skipped))
    return VoteCurve(lengths_out, acc_out, n_out)


def sr_offset(take: Take, dx: float, dz: float) -> Take:
    data = take.data.reshape(-1, 3, 7).copy()
    data[:, :, 0] += dx
    data[:, :, 2] += dz
    return take.with_data(data.reshape(-1, 21))


def dump_report(report: EvalReport, curve: VoteCurve | None = None, extra: dict | None = None) -> str:
    doc = {"version": 1, "report": report.to_json()}
    if curve is not None:
        doc["vote_curve"] = curve.to_json()
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2) + "\n"
