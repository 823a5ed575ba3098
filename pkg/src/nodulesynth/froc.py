"""Detection matching and free-response ROC scoring.

A detection run is summarized per image as a :class:`DetectionRecord`
(predictions greedily matched to ground truths), and a collection of records
is swept over confidence thresholds to build the FROC curve: sensitivity
against average false positives per image. The headline score follows the
NODE21 convention, ``0.75 * AUC + 0.25 * sensitivity(0.25 FPs/image)``,
where the AUC is the trapezoidal area of the curve over [0, fp_max]
FPs/image divided by the interval length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoGroundTruth


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in continuous pixel coordinates; x = column, y = row."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    score: float | None = None  # predictions only

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass
class DetectionRecord:
    """Matching outcome for one image at fixed IoU and confidence thresholds."""

    image_id: str
    predictions: list[Box]
    ground_truths: list[Box]
    gt_detected: list[bool]
    n_false_positives: int

    @property
    def missed_indices(self) -> list[int]:
        return [i for i, hit in enumerate(self.gt_detected) if not hit]


def _greedy_match(
    predictions: list[Box], ground_truths: list[Box], iou_thresh: float
) -> tuple[list[float], list[float]]:
    """Match predictions to ground truths in descending score order.

    Returns per-GT matched score (-inf if never matched) and the scores of
    predictions left unmatched (false positives at any threshold at or below
    their score). Because greedy matching processes predictions from the
    highest score down, truncating the list at a confidence threshold cannot
    change earlier assignments, so one pass serves every threshold.
    """
    order = sorted(
        range(len(predictions)), key=lambda i: -(predictions[i].score or 0.0)
    )
    matched_score = [-math.inf] * len(ground_truths)
    taken = [False] * len(ground_truths)
    fp_scores: list[float] = []
    for pi in order:
        pred = predictions[pi]
        best_gt, best_iou = -1, iou_thresh
        for gi, gt in enumerate(ground_truths):
            if taken[gi]:
                continue
            ov = iou(pred, gt)
            if ov >= best_iou:
                best_gt, best_iou = gi, ov
        if best_gt >= 0:
            taken[best_gt] = True
            matched_score[best_gt] = pred.score or 0.0
        else:
            fp_scores.append(pred.score or 0.0)
    return matched_score, fp_scores


def match_detections(
    predictions: list[Box],
    ground_truths: list[Box],
    iou_thresh: float = 0.2,
    conf_thresh: float = 0.5,
    image_id: str = "",
) -> DetectionRecord:
    """Label each ground truth detected/missed at the given thresholds.

    A ground truth counts as detected when a prediction with score at or
    above ``conf_thresh`` overlaps it with IoU at or above ``iou_thresh``;
    each prediction can claim at most one ground truth, higher scores first.
    Qualifying predictions that claim nothing are false positives.
    """
    if not 0.0 < iou_thresh < 1.0 or not 0.0 < conf_thresh < 1.0:
        raise ValueError("thresholds must lie in (0, 1)")
    qualifying = [p for p in predictions if (p.score or 0.0) >= conf_thresh]
    matched_score, fp_scores = _greedy_match(qualifying, ground_truths, iou_thresh)
    return DetectionRecord(
        image_id=image_id,
        predictions=list(predictions),
        ground_truths=list(ground_truths),
        gt_detected=[s > -math.inf for s in matched_score],
        n_false_positives=len(fp_scores),
    )


@dataclass
class FrocSummary:
    """FROC operating points plus derived scalar scores."""

    curve: list[tuple[float, float]]  # (avg FPs/image, sensitivity)
    auc: float
    sen_at_0_25: float
    node21_score: float
    fp_max: float = 1.0

    def to_json(self) -> dict:
        return {
            "curve": [[float(f), float(s)] for f, s in self.curve],
            "auc": self.auc,
            "sen_at_0_25": self.sen_at_0_25,
            "node21_score": self.node21_score,
            "fp_max": self.fp_max,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FrocSummary":
        return cls(
            curve=[(float(f), float(s)) for f, s in obj["curve"]],
            auc=float(obj["auc"]),
            sen_at_0_25=float(obj["sen_at_0_25"]),
            node21_score=float(obj["node21_score"]),
            fp_max=float(obj.get("fp_max", 1.0)),
        )


@dataclass
class _SweepData:
    """Threshold-independent matching results for a record collection."""

    gt_scores: np.ndarray  # score of the prediction that matched each GT
    fp_scores: np.ndarray  # scores of predictions that matched nothing
    n_images: int
    n_gt: int
    thresholds: np.ndarray = field(init=False)

    def __post_init__(self):
        scores = np.concatenate([self.gt_scores[np.isfinite(self.gt_scores)], self.fp_scores])
        uniq = np.unique(scores)[::-1]
        self.thresholds = np.concatenate(([math.inf], uniq))

    def operating_points(self) -> tuple[np.ndarray, np.ndarray]:
        fps, sens = [], []
        for t in self.thresholds:
            detected = int(np.count_nonzero(self.gt_scores >= t))
            n_fp = int(np.count_nonzero(self.fp_scores >= t))
            fps.append(n_fp / self.n_images)
            sens.append(detected / self.n_gt)
        return np.asarray(fps), np.asarray(sens)


def _sweep_data(
    records: list[tuple[list[Box], list[Box]]] | list[DetectionRecord],
    iou_thresh: float,
) -> _SweepData:
    gt_scores: list[float] = []
    fp_scores: list[float] = []
    n_images = 0
    for rec in records:
        preds, gts = (
            (rec.predictions, rec.ground_truths)
            if isinstance(rec, DetectionRecord)
            else rec
        )
        matched, fps = _greedy_match(list(preds), list(gts), iou_thresh)
        gt_scores.extend(matched)
        fp_scores.extend(fps)
        n_images += 1
    if not gt_scores:
        raise NoGroundTruth("records contain no ground-truth boxes")
    return _SweepData(
        gt_scores=np.asarray(gt_scores),
        fp_scores=np.asarray(fp_scores),
        n_images=n_images,
        n_gt=len(gt_scores),
    )


def froc_summary(
    records: list[DetectionRecord],
    iou_thresh: float = 0.2,
    fp_max: float = 1.0,
) -> FrocSummary:
    """Sweep confidence thresholds over all prediction scores and score the curve.

    Sensitivity is interpolated linearly between operating points;
    ``sen_at_0_25`` reads the curve at 0.25 FPs/image. Beyond the last
    operating point the curve plateaus at its final sensitivity (no lower
    threshold exists to trade more false positives for recall).
    """
    data = _sweep_data(records, iou_thresh)
    fps, sens = data.operating_points()
    # Upper envelope: one sensitivity per FP rate (both grow as the
    # threshold drops, so the last value at a given rate is the largest).
    env: dict[float, float] = {}
    for f, s in zip(fps, sens):
        env[f] = max(s, env.get(f, 0.0))
    xs = np.asarray(sorted(env))
    ys = np.asarray([env[x] for x in xs])

    sen25 = float(np.interp(0.25, xs, ys))
    grid = np.unique(np.concatenate((xs[xs <= fp_max], [0.0, fp_max])))
    curve_y = np.interp(grid, xs, ys)
    auc = float(np.trapezoid(curve_y, grid) / fp_max)
    score = 0.75 * auc + 0.25 * sen25
    return FrocSummary(
        curve=[(float(f), float(s)) for f, s in zip(xs, ys)],
        auc=auc,
        sen_at_0_25=sen25,
        node21_score=score,
        fp_max=fp_max,
    )


def operating_threshold(
    records: list[DetectionRecord],
    fp_target: float = 0.25,
    iou_thresh: float = 0.2,
) -> float:
    """Lowest confidence threshold whose FP rate stays at or below the target.

    Used to pick the detected/missed split point for mining; defaults to the
    0.25 FPs/image operating point.
    """
    data = _sweep_data(records, iou_thresh)
    fps, _ = data.operating_points()
    best = math.inf
    for t, f in zip(data.thresholds, fps):
        if f <= fp_target and math.isfinite(t):
            best = min(best, t)
    if math.isinf(best):  # even the strictest threshold exceeds the target
        best = float(data.thresholds[1]) if len(data.thresholds) > 1 else 0.5
    return float(best)
