"""Metric arithmetic and report emission.

Recall/precision/F1 over confusion counts, the eye-localization failure
rate, the normalized Manhattan localization error, and average precision
for temporal detections under the overlap criterion. Zero denominators
yield 0 by convention so empty runs still produce a report.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

from .dataset import manhattan
from .errors import DegenerateGeometryError
from .pipeline import BlinkEvent, temporal_iou

REPORT_VERSION = 1
ME_THRESHOLD = 0.4  # localization counts as correct iff ME <= 0.4


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass(frozen=True)
class LocalizationTally:
    n_miss: int = 0
    n_err: int = 0
    n_all: int = 0


def prf(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(recall, precision, f1) with the 0-denominator -> 0 convention."""
    pos = counts.tp + counts.fn
    pred = counts.tp + counts.fp
    recall = counts.tp / pos if pos else 0.0
    precision = counts.tp / pred if pred else 0.0
    f1 = (2 * recall * precision / (recall + precision)
          if recall > 0 and precision > 0 else 0.0)
    return recall, precision, f1


def me(detected, gt, gt_left, gt_right) -> float:
    """Manhattan distance to ground truth over inter-ocular distance."""
    denom = manhattan(gt_left, gt_right)
    if denom == 0:
        raise DegenerateGeometryError("coincident ground-truth eye centers")
    return manhattan(detected, gt) / denom


def fr(tally: LocalizationTally) -> float:
    """(n_miss + n_err) / n_all."""
    if tally.n_all <= 0:
        raise ValueError("n_all must be positive")
    return (tally.n_miss + tally.n_err) / tally.n_all


def average_precision(events: list[BlinkEvent], gt: list[tuple[int, int]],
                      overlap: float = 0.5) -> float:
    """Rank-sum AP with greedy best-IoU matching, one match per gt interval.

    Events are taken in descending confidence; each is a true positive if
    its best IoU against a still-unmatched gt interval reaches the overlap
    threshold. AP = sum of precision-at-TP-ranks / |gt|; 0 when gt is empty.
    """
    for e in events:
        if e.confidence < 0:
            raise ValueError("negative confidence")
    for a, b in gt:
        if a > b:
            raise ValueError(f"malformed gt interval ({a}, {b})")
    if not gt:
        return 0.0
    ranked = sorted(events, key=lambda e: -e.confidence)
    matched = [False] * len(gt)
    tp = 0
    ap = 0.0
    for rank, ev in enumerate(ranked, start=1):
        best, best_iou = -1, 0.0
        for j, interval in enumerate(gt):
            if matched[j]:
                continue
            iou = temporal_iou((ev.start, ev.end), interval)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= overlap:
            matched[best] = True
            tp += 1
            ap += tp / rank
    return ap / len(gt)


@dataclass
class EvalReport:
    per_eye: dict  # eye -> {"recall","precision","f1","fr"}
    ap: float | None = None
    seed: int | None = None
    config_hash: str = ""
    timing_ms: dict = field(default_factory=dict)
    scores: list = field(default_factory=list)  # (confidence, true_label)


def _pr_rows(scores) -> list[tuple[float, float, float]]:
    """PR sweep: one row per distinct confidence plus a row at +inf."""
    positives = sum(1 for _, lbl in scores if lbl)
    rows = [(float("inf"), 0.0, 0.0)]
    for thr in sorted({c for c, _ in scores}, reverse=True):
        tp = sum(1 for c, lbl in scores if c >= thr and lbl)
        pred = sum(1 for c, _ in scores if c >= thr)
        precision = tp / pred if pred else 0.0
        recall = tp / positives if positives else 0.0
        rows.append((thr, precision, recall))
    return rows


def emit_report(report: EvalReport, path: str) -> None:
    """Write ``path``.json, ``path``.csv and ``path``_pr.csv deterministically."""
    payload = {
        "version": REPORT_VERSION,
        "per_eye": {eye: {k: report.per_eye[eye][k]
                          for k in sorted(report.per_eye[eye])}
                    for eye in sorted(report.per_eye)},
        "ap": report.ap,
        "seed": report.seed,
        "config_hash": report.config_hash,
        "timing_ms": {k: report.timing_ms[k]
                      for k in sorted(report.timing_ms)},
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path + ".json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(path + ".csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["eye", "recall", "precision", "f1", "fr"])
        for eye in sorted(report.per_eye):
            vals = report.per_eye[eye]
            writer.writerow([eye] + [repr(vals[k]) for k in
                                     ("recall", "precision", "f1", "fr")])
    with open(path + "_pr.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "precision", "recall"])
        for thr, precision, recall in _pr_rows(report.scores):
            writer.writerow([repr(thr), repr(precision), repr(recall)])


def load_report(path: str) -> dict:
    with open(path + ".json") as f:
        return json.load(f)
