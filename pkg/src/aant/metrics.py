"""Evaluation harness: precision-recall sweep, average precision by discrete
summation, time-to-accident statistics, and the operating-point report.

Detection semantics are video-level: a video's score is its peak adjusted
accident probability inside the evaluation window, and a video counts as
detected at a threshold when that score reaches it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import POSITIVE, VideoRecord
from .model import AnticipationModel, full_forward

OPERATING_THRESHOLD = 0.5  # decision rule: adjusted probability >= 0.5


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int

    def f1(self) -> float:
        if self.precision + self.recall == 0:
            return 0.0
        return 2.0 * self.precision * self.recall / (self.precision + self.recall)


@dataclass(frozen=True)
class PRCurve:
    points: tuple[PRPoint, ...]


@dataclass
class Metrics:
    ap: float
    mtta_s: float
    tta_at_threshold_s: float
    best_f1_threshold: float
    operating_point: dict
    curve: PRCurve
    tta_sweep: list[tuple[float, float, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "mtta_s": self.mtta_s,
            "tta_at_threshold_s": self.tta_at_threshold_s,
            "best_f1_threshold": self.best_f1_threshold,
            "operating_point": self.operating_point,
            "tta_sweep": [
                {"threshold": t, "mean_tta_s": v, "n_detected": n} for t, v, n in self.tta_sweep
            ],
        }


def _as_arrays(scores, labels, require_both_classes: bool):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores and labels must be non-empty, 1-D, and aligned")
    if labels.max() != 1:
        raise ValueError("need at least one positive label (recall is undefined otherwise)")
    if require_both_classes and labels.min() != 0:
        raise ValueError("need both classes present")
    return scores, labels


def pr_curve(scores, labels) -> PRCurve:
    """One point per unique score, descending; predict positive at >= threshold."""
    scores, labels = _as_arrays(scores, labels, require_both_classes=False)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    points = []
    for threshold in sorted(set(scores.tolist()), reverse=True):
        predicted = scores >= threshold
        tp = int(np.sum(predicted & (labels == 1)))
        fp = int(np.sum(predicted & (labels == 0)))
        fn = n_pos - tp
        tn = n_neg - fp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / n_pos
        points.append(
            PRPoint(
                threshold=float(threshold),
                precision=precision,
                recall=recall,
                tp=tp,
                fp=fp,
                fn=fn,
                tn=tn,
            )
        )
    return PRCurve(points=tuple(points))


def average_precision(curve: PRCurve) -> float:
    """Discrete summation sum_k P(k) * (R(k) - R(k-1)) with R(-1) = 0."""
    ap = 0.0
    prev_recall = 0.0
    for point in curve.points:
        ap += point.precision * (point.recall - prev_recall)
        prev_recall = point.recall
    return ap


def best_f1_threshold(scores, labels) -> float:
    """Threshold from the sweep maximizing F1; ties resolve to the larger
    threshold (fewer predicted positives)."""
    _as_arrays(scores, labels, require_both_classes=True)
    curve = pr_curve(scores, labels)
    best = curve.points[0]
    for point in curve.points[1:]:
        if point.f1() > best.f1():
            best = point
    return best.threshold


def tta(probs, threshold: float, toa: int, fps: float) -> float | None:
    """Seconds between the first pre-accident crossing and the accident;
    None when the window never crosses."""
    if toa < 1:
        raise ValueError("TTA is defined only for positive videos (toa >= 1)")
    probs = np.asarray(probs, dtype=np.float64)
    window = probs[: min(toa, len(probs))]
    hits = np.nonzero(window >= threshold)[0]
    if hits.size == 0:
        return None
    return (toa - int(hits[0])) / fps


def video_score(probs, label: int, toa: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    window = min(toa, len(probs)) if label == POSITIVE else len(probs)
    return float(probs[:window].max())


def tta_sweep_table(
    prob_arrays, labels, toas, fps: float, thresholds=None
) -> list[tuple[float, float, int]]:
    """(threshold, mean TTA among detected positives, detected count) per
    threshold; defaults to the unique video-score sweep."""
    if thresholds is None:
        scores = [video_score(p, l, t) for p, l, t in zip(prob_arrays, labels, toas)]
        thresholds = sorted(set(scores), reverse=True)
    table = []
    for threshold in thresholds:
        ttas = []
        for probs, label, toa in zip(prob_arrays, labels, toas):
            if label != POSITIVE:
                continue
            value = tta(probs, threshold, toa, fps)
            if value is not None:
                ttas.append(value)
        if ttas:
            table.append((float(threshold), float(np.mean(ttas)), len(ttas)))
        else:
            table.append((float(threshold), 0.0, 0))
    return table


def mtta(prob_arrays, labels, toas, fps: float, thresholds=None) -> float:
    """Mean over the threshold sweep of the mean TTA among detected
    positives; 0 when nothing is ever detected."""
    if not any(l == POSITIVE for l in labels):
        raise ValueError("mTTA requires at least one positive video")
    table = tta_sweep_table(prob_arrays, labels, toas, fps, thresholds=thresholds)
    detected = [mean_tta for _, mean_tta, count in table if count > 0]
    return float(np.mean(detected)) if detected else 0.0


def evaluate(
    model: AnticipationModel,
    records: list[VideoRecord],
    tau_override: float | None = None,
) -> Metrics:
    """Score every record, then report AP, mTTA, the operating point of the
    learned decision rule (adjusted probability >= 0.5), and the exhaustive
    best-F1 threshold."""
    outputs = [full_forward(model, r, tau=tau_override) for r in records]
    prob_arrays = [o.probs for o in outputs]
    labels = [r.label for r in records]
    toas = [r.toa for r in records]
    fps = records[0].fps
    scores = np.array([o.video_score for o in outputs])
    label_arr = np.array(labels)

    curve = pr_curve(scores, label_arr)
    ap = average_precision(curve)
    sweep = tta_sweep_table(prob_arrays, labels, toas, fps)
    detected = [mean_tta for _, mean_tta, count in sweep if count > 0]
    mtta_s = float(np.mean(detected)) if detected else 0.0

    predicted = scores >= OPERATING_THRESHOLD
    tp = int(np.sum(predicted & (label_arr == 1)))
    fp = int(np.sum(predicted & (label_arr == 0)))
    fn = int(np.sum(~predicted & (label_arr == 1)))
    tn = int(np.sum(~predicted & (label_arr == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    operating_ttas = []
    for probs, label, toa in zip(prob_arrays, labels, toas):
        if label == POSITIVE:
            value = tta(probs, OPERATING_THRESHOLD, toa, fps)
            if value is not None:
                operating_ttas.append(value)
    tta_at_threshold = float(np.mean(operating_ttas)) if operating_ttas else 0.0

    return Metrics(
        ap=ap,
        mtta_s=mtta_s,
        tta_at_threshold_s=tta_at_threshold,
        best_f1_threshold=best_f1_threshold(scores, label_arr),
        operating_point={
            "rule": "adjusted probability >= 0.5",
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "tn": tn,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "tau": tau_override if tau_override is not None else float(model.threshold.detach()),
        },
        curve=curve,
        tta_sweep=sweep,
    )
