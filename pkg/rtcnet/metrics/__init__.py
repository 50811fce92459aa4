from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence
import csv
import io
import logging

import numpy as np

logger = logging.getLogger("rtcnet.metrics")

CATEGORIES = ["TP", "TN", "FP", "FN"]
AVERAGING = ["micro", "macro"]
PIXEL_COLUMNS = ["ACC", "SN", "SP", "PR", "DICE", "IoU"]
IMAGE_COLUMNS = ["IMG_ACC", "IMG_SN", "IMG_SP"]

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"confusion counts must be non-negative, got {self}")
        if self.total == 0:
            raise ValueError("confusion counts cover zero pixels")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}

def _check_binary(mask: np.ndarray, what: str) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != bool and not np.isin(mask, (0, 1)).all():
        raise ValueError(f"{what} mask is not binary (values {np.unique(mask)[:5]}...)")
    return mask.astype(bool)

def pixel_confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """
    Exact per-pixel counts of a predicted mask against ground truth.
    Args:
        pred (np.ndarray): Binary prediction
        gt (np.ndarray): Binary ground truth of the same shape
    Returns:
        ConfusionCounts: tp, fp, tn, fn
    """
    if np.shape(pred) != np.shape(gt):
        raise ValueError(f"prediction {np.shape(pred)} and ground truth {np.shape(gt)} are not congruent")
    pred, gt = _check_binary(pred, "prediction"), _check_binary(gt, "ground truth")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, pred.size - tp - fp - fn, fn)

def _ratio(numerator: int, denominator: int) -> float:
    # an empty denominator means nothing could go wrong
    return numerator / denominator if denominator else 1.0

def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)

def sensitivity(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)

def specificity(c: ConfusionCounts) -> float:
    return _ratio(c.tn, c.tn + c.fp)

def accuracy(c: ConfusionCounts) -> float:
    return (c.tp + c.tn) / c.total

def dice(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)

def iou(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn)

METRICS: dict[str, tuple[Callable[[ConfusionCounts], float], Callable[[ConfusionCounts], int]]] = {
    "ACC": (accuracy, lambda c: c.total),
    "SN": (sensitivity, lambda c: c.tp + c.fn),
    "SP": (specificity, lambda c: c.tn + c.fp),
    "PR": (precision, lambda c: c.tp + c.fp),
    "DICE": (dice, lambda c: 2 * c.tp + c.fp + c.fn),
    "IoU": (iou, lambda c: c.tp + c.fp + c.fn),
}

def zero_denominators(c: ConfusionCounts) -> list[str]:
    """Metrics of c that fell back to 1.0."""
    return [name for name, (_, denominator) in METRICS.items() if denominator(c) == 0]

def summarize(c: ConfusionCounts) -> dict[str, float]:
    return {name: metric(c) for name, (metric, _) in METRICS.items()}

@dataclass(frozen=True)
class ScreeningVerdict:
    """Image-level outcome: does the prediction agree with ground truth on whether exudate is present."""
    category: str
    min_area: int
    pred_area: int
    gt_area: int

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"Category not in {CATEGORIES}")

def screen_image(pred: np.ndarray, gt: np.ndarray, min_area: int = 1) -> ScreeningVerdict:
    """
    Classify one image as TP, TN, FP or FN.

    An image "has exudate" iff its positive-pixel count is at least min_area.
    """
    if np.shape(pred) != np.shape(gt):
        raise ValueError(f"prediction {np.shape(pred)} and ground truth {np.shape(gt)} are not congruent")
    if min_area < 1:
        raise ValueError(f"min_area must be >= 1, got {min_area}")
    pred_area, gt_area = int(np.count_nonzero(pred)), int(np.count_nonzero(gt))
    predicted, actual = pred_area >= min_area, gt_area >= min_area
    if predicted and actual:
        category = "TP"
    elif predicted:
        category = "FP"
    elif actual:
        category = "FN"
    else:
        category = "TN"
    return ScreeningVerdict(category, min_area, pred_area, gt_area)

@dataclass(frozen=True)
class ImageResult:
    id: str
    counts: ConfusionCounts
    verdict: ScreeningVerdict

def evaluate_image(id: str, pred: np.ndarray, gt: np.ndarray, min_area: int = 1) -> ImageResult:
    return ImageResult(id, pixel_confusion(pred, gt), screen_image(pred, gt, min_area))

def screening_counts(verdicts: Sequence[ScreeningVerdict]) -> ConfusionCounts:
    tally = {category: 0 for category in CATEGORIES}
    for verdict in verdicts:
        tally[verdict.category] += 1
    return ConfusionCounts(tally["TP"], tally["FP"], tally["TN"], tally["FN"])

@dataclass
class Report:
    dataset: str
    images: int
    averaging: str
    pixel: dict[str, float]
    image: dict[str, float]
    counts: ConfusionCounts
    screening: ConfusionCounts
    flagged: list[str] = field(default_factory=list)
    per_image: list[ImageResult] = field(default_factory=list)

    @property
    def row(self) -> list[str]:
        values = [self.pixel[name] for name in PIXEL_COLUMNS] + [self.image[name] for name in IMAGE_COLUMNS]
        return [self.dataset, str(self.images)] + [f"{value:.4f}" for value in values]

    @property
    def header(self) -> list[str]:
        return ["dataset", "images"] + PIXEL_COLUMNS + IMAGE_COLUMNS

    def to_tsv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, delimiter="\t", lineterminator="\n")
        writer.writerow(self.header)
        writer.writerow(self.row)
        return buffer.getvalue()

    def per_image_tsv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, delimiter="\t", lineterminator="\n")
        writer.writerow(["id", "tp", "fp", "tn", "fn", "verdict"] + PIXEL_COLUMNS + ["zero_denominator"])
        for result in self.per_image:
            metrics = summarize(result.counts)
            writer.writerow([result.id, result.counts.tp, result.counts.fp, result.counts.tn, result.counts.fn,
                             result.verdict.category] + [f"{metrics[name]:.4f}" for name in PIXEL_COLUMNS]
                            + [",".join(zero_denominators(result.counts))])
        return buffer.getvalue()

    def to_table(self) -> str:
        """Aligned plain-text table, flagged metrics marked with '*'."""
        header, row = self.header, self.row
        for k, name in enumerate(header):
            if name in self.flagged:
                row[k] += "*"
        widths = [max(len(a), len(b)) for a, b in zip(header, row)]
        lines = ["  ".join(cell.rjust(width) for cell, width in zip(line, widths)) for line in (header, row)]
        lines.insert(1, "  ".join("-" * width for width in widths))
        if self.flagged:
            lines.append(f"* zero denominator, reported as 1.0 ({self.averaging} averaging)")
        return "\n".join(lines) + "\n"

def aggregate_report(results: Sequence[ImageResult], dataset: str, averaging: str = "micro") -> Report:
    """
    Fold per-image results into one summary row.
    Args:
        results (Sequence[ImageResult]): One entry per evaluated image
        dataset (str): Label of the row
        averaging (str): micro sums counts before computing pixel metrics; macro averages per-image metrics
    Returns:
        Report: Pixel metrics, image-level screening metrics and zero-denominator flags
    """
    if not results:
        raise ValueError("cannot aggregate an empty result set")
    if averaging not in AVERAGING:
        raise ValueError(f"Averaging not in {AVERAGING}")
    counts = results[0].counts
    for result in results[1:]:
        counts = counts + result.counts

    if averaging == "micro":
        pixel = summarize(counts)
        flagged = zero_denominators(counts)
    else:
        per_image = [summarize(result.counts) for result in results]
        pixel = {name: float(np.mean([m[name] for m in per_image])) for name in PIXEL_COLUMNS}
        flagged = sorted({name for result in results for name in zero_denominators(result.counts)},
                         key=PIXEL_COLUMNS.index)

    screening = screening_counts([result.verdict for result in results])
    image = {"IMG_ACC": accuracy(screening), "IMG_SN": sensitivity(screening), "IMG_SP": specificity(screening)}
    flagged += [f"IMG_{name}" for name in zero_denominators(screening) if f"IMG_{name}" in IMAGE_COLUMNS]
    return Report(dataset, len(results), averaging, pixel, image, counts, screening, flagged, list(results))
