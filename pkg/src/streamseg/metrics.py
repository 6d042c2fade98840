"""Segmentation quality measures: frame accuracy, edit score, segmental F1.

Edit and F1 operate on maximal constant-label runs (segments). Edit compares
the two segment-label strings by Levenshtein distance; F1 greedily matches
predicted segments to same-label ground-truth segments by temporal IoU.
Dataset aggregation pools frames for accuracy but averages edit and F1 over
videos.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Segment",
    "MetricsReport",
    "F1_THRESHOLDS",
    "labels_to_segments",
    "frame_accuracy",
    "edit_score",
    "overlap_f1",
    "evaluate_pair",
    "evaluate_dataset",
    "format_report",
    "segments_text",
]

F1_THRESHOLDS = (0.1, 0.25, 0.5)


@dataclass(frozen=True)
class Segment:
    label: int
    start: int
    stop: int  # exclusive

    @property
    def length(self) -> int:
        return self.stop - self.start


@dataclass
class MetricsReport:
    acc: float
    edit: float
    f1: dict[float, float]
    per_video: list[dict] | None = None


def labels_to_segments(labels) -> list[Segment]:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label sequence")
    boundaries = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [labels.size]])
    return [Segment(int(labels[a]), int(a), int(b)) for a, b in zip(starts, stops)]


def frame_accuracy(pred, gt) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
    return 100.0 * float((pred == gt).mean())


def _levenshtein(a: list[int], b: list[int]) -> int:
    """Unit-cost insert/delete/substitute distance, iterative two-row DP."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1,
                               current[j - 1] + 1,
                               previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def edit_score(pred, gt) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
    pred_labels = [s.label for s in labels_to_segments(pred)]
    gt_labels = [s.label for s in labels_to_segments(gt)]
    distance = _levenshtein(pred_labels, gt_labels)
    return 100.0 * (1.0 - distance / max(len(pred_labels), len(gt_labels)))


def _segment_iou(a: Segment, b: Segment) -> float:
    intersection = min(a.stop, b.stop) - max(a.start, b.start)
    if intersection <= 0:
        return 0.0
    union = max(a.stop, b.stop) - min(a.start, b.start)
    return intersection / union


def overlap_f1(pred, gt, tau: float) -> float:
    """Greedy same-label IoU matching at threshold tau, scored as F1 in [0, 100].

    Each predicted segment claims its best-IoU same-label ground-truth
    segment; the claim is a true positive iff the IoU reaches tau and that
    segment is unclaimed. Unclaimed ground-truth segments count as misses.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    pred_segs = labels_to_segments(pred)
    gt_segs = labels_to_segments(gt)
    used = [False] * len(gt_segs)
    tp = fp = 0
    for ps in pred_segs:
        ious = [(_segment_iou(ps, gs) if gs.label == ps.label else 0.0)
                for gs in gt_segs]
        best = int(np.argmax(ious))
        if ious[best] >= tau and not used[best]:
            used[best] = True
            tp += 1
        else:
            fp += 1
    fn = len(gt_segs) - tp
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def evaluate_pair(pred, gt) -> dict:
    return {
        "acc": frame_accuracy(pred, gt),
        "edit": edit_score(pred, gt),
        "f1": {tau: overlap_f1(pred, gt, tau) for tau in F1_THRESHOLDS},
    }


def evaluate_dataset(pairs: list[tuple[np.ndarray, np.ndarray]]) -> MetricsReport:
    """Score (prediction, ground truth) pairs, one pair per video.

    Accuracy pools frames across the whole set; edit and F1 are computed per
    video and averaged, the convention of the standard segmentation scorers.
    """
    if not pairs:
        raise ValueError("no evaluation pairs")
    per_video = [evaluate_pair(pred, gt) for pred, gt in pairs]
    total_frames = sum(len(gt) for _, gt in pairs)
    correct = sum(float((np.asarray(p) == np.asarray(g)).sum()) for p, g in pairs)
    return MetricsReport(
        acc=100.0 * correct / total_frames,
        edit=float(np.mean([v["edit"] for v in per_video])),
        f1={tau: float(np.mean([v["f1"][tau] for v in per_video]))
            for tau in F1_THRESHOLDS},
        per_video=per_video,
    )


def format_report(report: MetricsReport) -> str:
    rows = [("Acc", report.acc), ("Edit", report.edit)]
    rows += [(f"F1@{tau:g}", report.f1[tau]) for tau in F1_THRESHOLDS]
    width = max(len(name) for name, _ in rows)
    return "".join(f"{name:<{width}}  {value:7.2f}\n" for name, value in rows)


def segments_text(labels) -> str:
    """One "label start stop" line per segment, for plotting tools."""
    return "".join(f"{s.label} {s.start} {s.stop}\n" for s in labels_to_segments(labels))
