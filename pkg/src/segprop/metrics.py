"""Segmentation metrics: mIoU, Boundary IoU, and the patch-resolution bound.

Both metrics are reported on the 0-100 scale. Boundary IoU restricts each
binary mask to the band of pixels within Chebyshev distance d of the mask's
complement (image border counts as complement) before computing IoU, with
d = max(1, round(dilation_ratio * sqrt(H^2 + W^2))).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grids import LabelMap, label_downsample, label_upsample_nearest


@dataclass(frozen=True)
class BoundaryParams:
    dilation_ratio: float = 0.02
    min_band: int = 1

    def __post_init__(self):
        if self.dilation_ratio <= 0:
            raise ValueError("dilation_ratio must be > 0")

    def band_width(self, height: int, width: int) -> int:
        d = round(self.dilation_ratio * float(np.hypot(height, width)))
        return max(self.min_band, int(d))


class ConfusionAccumulator:
    """C x C confusion counts over any number of prediction/target pairs.

    counts[g, p] is the number of non-ignore pixels with ground truth g
    predicted as p. Accumulation is order-independent and accumulators
    merge associatively.
    """

    def __init__(self, num_classes: int, ignore_label: int = 255):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.ignore_label = ignore_label
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, pred: LabelMap, gt: LabelMap) -> "ConfusionAccumulator":
        if pred.labels.shape != gt.labels.shape:
            raise ValueError(
                f"shape mismatch: pred {pred.labels.shape} vs gt {gt.labels.shape}"
            )
        keep = gt.labels != gt.ignore_label
        g = gt.labels[keep].astype(np.int64)
        p = pred.labels[keep].astype(np.int64)
        if g.size:
            if g.min() < 0 or g.max() >= self.num_classes:
                raise ValueError(f"ground-truth label outside [0, {self.num_classes})")
            if p.min() < 0 or p.max() >= self.num_classes:
                raise ValueError(f"predicted label outside [0, {self.num_classes})")
            np.add.at(self.counts, (g, p), 1)
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge accumulators with different class counts")
        self.counts += other.counts
        return self


def miou(acc: ConfusionAccumulator) -> tuple[np.ndarray, float]:
    """Per-class IoU (0-100, NaN where absent) and their mean.

    IoU_c = TP / (TP + FP + FN); classes absent from both ground truth and
    prediction are excluded from the mean.
    """
    if acc.total == 0:
        raise ValueError("empty accumulator")
    tp = np.diag(acc.counts).astype(np.float64)
    fp = acc.counts.sum(axis=0) - tp
    fn = acc.counts.sum(axis=1) - tp
    union = tp + fp + fn
    per_class = np.full(acc.num_classes, np.nan)
    present = union > 0
    per_class[present] = 100.0 * tp[present] / union[present]
    return per_class, float(per_class[present].mean())


def _boundary_band(mask: np.ndarray, width: int) -> np.ndarray:
    """Mask pixels within Chebyshev distance ``width`` of the complement.

    The area outside the image counts as complement, matching an erosion
    with zero padding.
    """
    structure = np.ones((2 * width + 1, 2 * width + 1), dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~interior


def boundary_iou(
    pred: LabelMap, gt: LabelMap, params: BoundaryParams = BoundaryParams()
) -> tuple[np.ndarray, float]:
    """Per-class Boundary IoU (0-100, NaN where absent) and their mean.

    Each class mask is reduced to its boundary band in both prediction and
    ground truth; the IoU of the banded sets is averaged over classes
    present in either map (ignore pixels excluded).
    """
    if pred.labels.shape != gt.labels.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.labels.shape} vs gt {gt.labels.shape}"
        )
    h, w = gt.labels.shape
    width = params.band_width(h, w)
    gt_valid = gt.labels != gt.ignore_label
    if not gt_valid.any():
        raise ValueError("no labeled pixels")
    in_region = np.union1d(np.unique(gt.labels[gt_valid]), np.unique(pred.labels[gt_valid]))
    classes = in_region[(in_region != gt.ignore_label) & (in_region != pred.ignore_label)]
    num_classes = int(classes.max()) + 1
    per_class = np.full(num_classes, np.nan)
    for c in classes:
        gt_band = _boundary_band(gt.labels == c, width) & gt_valid
        pred_band = _boundary_band(pred.labels == c, width) & gt_valid
        inter = np.logical_and(gt_band, pred_band).sum()
        uni = np.logical_or(gt_band, pred_band).sum()
        if uni:
            per_class[c] = 100.0 * inter / uni
    present = ~np.isnan(per_class)
    if not present.any():
        raise ValueError("no class has boundary pixels in the evaluated region")
    return per_class, float(per_class[present].mean())


def oracle_patch_resolution(
    gt: LabelMap, patch: int, params: BoundaryParams = BoundaryParams()
) -> tuple[float, float]:
    """Score the ground truth against its own patch-resolution round trip.

    Downsamples the map by ``patch`` (majority vote), upsamples back
    (nearest), and evaluates the result as a prediction: the best any
    patch-resolution predictor could do. Returns (mIoU, Boundary IoU).
    """
    down = label_downsample(gt, patch)
    pred = label_upsample_nearest(down, gt.height, gt.width)
    valid = gt.labels != gt.ignore_label
    if not valid.any():
        raise ValueError("ground truth is entirely ignore")
    num_classes = int(gt.labels[valid].max()) + 1
    acc = ConfusionAccumulator(num_classes, ignore_label=gt.ignore_label)
    # the round trip can emit ignore where a block was all ignore; such
    # pixels only meet non-ignore gt at block boundaries, remap them to an
    # always-wrong extra class rather than failing validation
    pred_labels = pred.labels.copy()
    stray = (pred_labels == gt.ignore_label) & valid
    if stray.any():
        acc = ConfusionAccumulator(num_classes + 1, ignore_label=gt.ignore_label)
        pred_labels[stray] = num_classes
    pred = LabelMap(pred_labels, ignore_label=gt.ignore_label)
    acc.update(pred, gt)
    _, mean_iou = miou(acc)
    _, mean_biou = boundary_iou(pred, gt, params)
    return mean_iou, mean_biou
