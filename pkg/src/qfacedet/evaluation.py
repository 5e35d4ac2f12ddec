"""Detection matching, precision/recall and step-method average precision."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .detection import BBox, Detection, iou


@dataclass(frozen=True)
class MatchResult:
    """TP flags for detections in descending score order, plus the ground-truth count."""

    tp: np.ndarray
    scores: np.ndarray
    n_gt: int

    def __post_init__(self):
        tp = np.asarray(self.tp, dtype=bool)
        object.__setattr__(self, "tp", tp)
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        if tp.sum() > self.n_gt:
            raise ValueError("more true positives than ground-truth boxes")

    @property
    def n_tp(self) -> int:
        return int(self.tp.sum())

    @property
    def n_fp(self) -> int:
        return int((~self.tp).sum())


def match_detections(dets: Sequence[Detection], gts: Sequence[BBox], iou_threshold: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching of one image's detections to its ground truth.

    Detections are visited by descending score; each takes its best-overlapping
    still-unmatched box and is a TP when that overlap reaches the threshold.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    matched = [False] * len(gts)
    flags = []
    for i in order:
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if matched[j]:
                continue
            o = iou(dets[i].box, g)
            if o > best:
                best, best_j = o, j
        hit = best_j >= 0 and best >= iou_threshold
        if hit:
            matched[best_j] = True
        flags.append(hit)
    return MatchResult(np.array(flags, dtype=bool), np.array([dets[i].score for i in order]), len(gts))


def merge_matches(results: Iterable[MatchResult]) -> MatchResult:
    """Pool per-image results into one ranked list (stable on score ties)."""
    results = list(results)
    if not results:
        return MatchResult(np.zeros(0, bool), np.zeros(0), 0)
    tp = np.concatenate([r.tp for r in results])
    scores = np.concatenate([r.scores for r in results])
    order = np.argsort(-scores, kind="stable")
    return MatchResult(tp[order], scores[order], sum(r.n_gt for r in results))


def pr_curve(m: MatchResult) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at every rank."""
    if m.n_gt <= 0:
        raise ValueError("precision/recall needs at least one ground-truth box")
    tp = np.cumsum(m.tp)
    ranks = np.arange(1, len(m.tp) + 1)
    return tp / ranks, tp / m.n_gt


def average_precision(m: MatchResult) -> float:
    """Sum of precision at each true-positive rank divided by the ground-truth count."""
    if m.n_gt <= 0:
        raise ValueError("average precision needs at least one ground-truth box")
    if len(m.tp) == 0:
        return 0.0
    precision, _ = pr_curve(m)
    return float(precision[m.tp].sum() / m.n_gt)


def evaluate(dets: dict, gts: dict, iou_threshold: float = 0.5) -> MatchResult:
    """Match every image in ``gts``; images without detections count as misses."""
    unknown = sorted(set(dets) - set(gts))
    if unknown:
        raise KeyError(f"detections for images without annotations: {unknown}")
    return merge_matches(match_detections(dets.get(k, []), g, iou_threshold) for k, g in gts.items())


def write_pr_csv(out: TextIO, m: MatchResult) -> None:
    precision, recall = pr_curve(m)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["rank", "precision", "recall"])
    for rank, (p, r) in enumerate(zip(precision, recall), 1):
        writer.writerow([rank, f"{p:.6f}", f"{r:.6f}"])


def format_report(per_fold: dict, overall: MatchResult) -> str:
    rows = [("fold", "gt", "dets", "tp", "AP")]
    for name, m in per_fold.items():
        rows.append((name, str(m.n_gt), str(len(m.tp)), str(m.n_tp), f"{average_precision(m):.4f}"))
    rows.append(("overall", str(overall.n_gt), str(len(overall.tp)), str(overall.n_tp),
                 f"{average_precision(overall):.4f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows) + "\n"
