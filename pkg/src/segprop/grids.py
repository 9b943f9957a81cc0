"""Dense grid primitives: feature/score/label grids and their resampling.

All resampling uses the half-pixel-center convention: destination index
``x_d`` samples source coordinate ``x_s = (x_d + 0.5) * (in / out) - 0.5``,
clamped to the valid range. The feature extractor side must use the same
convention so patch centers line up across tools.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_IGNORE_LABEL = 255

# sRGB (linear) -> XYZ under D65, and the D65 white point.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])


@dataclass(frozen=True)
class FeatureGrid:
    """A d-dimensional feature vector per cell of an H x W grid."""

    data: np.ndarray  # (H, W, d) float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"FeatureGrid expects (H, W, d) data, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ScoreGrid:
    """C class scores per cell of an H x W grid."""

    data: np.ndarray  # (H, W, C) float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"ScoreGrid expects (H, W, C) data, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("ScoreGrid values must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def classes(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """Integer class id per pixel, with a reserved ignore label."""

    labels: np.ndarray  # (H, W) int32
    ignore_label: int = DEFAULT_IGNORE_LABEL

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int32)
        if arr.ndim != 2:
            raise ValueError(f"LabelMap expects (H, W) labels, got shape {arr.shape}")
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def validate_classes(self, num_classes: int) -> None:
        """Raise if any non-ignore label is outside [0, num_classes)."""
        lab = self.labels
        valid = lab[lab != self.ignore_label]
        if valid.size and (valid.min() < 0 or valid.max() >= num_classes):
            raise ValueError(
                f"labels outside [0, {num_classes}) present (ignore={self.ignore_label})"
            )


def l2_normalize(grid: FeatureGrid) -> FeatureGrid:
    """Scale every cell vector to unit Euclidean norm.

    Cells with norm below 1e-12 are returned unchanged.
    """
    norms = np.linalg.norm(grid.data, axis=-1, keepdims=True)
    safe = np.where(norms < 1e-12, 1.0, norms)
    return FeatureGrid(grid.data / safe)


def _bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be >= 1")
    in_h, in_w = arr.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0, in_h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = arr[y0][:, x0] * (1.0 - wx) + arr[y0][:, x1] * wx
    bot = arr[y1][:, x0] * (1.0 - wx) + arr[y1][:, x1] * wx
    return top * (1.0 - wy) + bot * wy


def bilinear_resize(grid, out_h: int, out_w: int):
    """Resize a FeatureGrid or ScoreGrid with bilinear interpolation.

    Half-pixel-center sampling, channels interpolated independently.
    Weights are convex, so per-channel min/max bounds are preserved and
    constant fields are reproduced exactly.
    """
    if isinstance(grid, FeatureGrid):
        return FeatureGrid(_bilinear(grid.data, out_h, out_w))
    if isinstance(grid, ScoreGrid):
        return ScoreGrid(_bilinear(grid.data, out_h, out_w))
    raise TypeError(f"expected FeatureGrid or ScoreGrid, got {type(grid).__name__}")


def srgb_to_lab(image: np.ndarray) -> FeatureGrid:
    """Convert an 8-bit RGB raster to rescaled CIELAB features.

    Standard sRGB -> linear -> XYZ(D65) -> CIELAB, then channels rescaled to
    L/100, (a+128)/255, (b+128)/255 so each lies in roughly [0, 1]. The
    rescaling keeps the channels at unit scale, which the default color
    bandwidth of the pixel graph assumes.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB image, got shape {img.shape}")
    c = img.astype(np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T / _WHITE_D65
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    l_chan = 116.0 * f[..., 1] - 16.0
    a_chan = 500.0 * (f[..., 0] - f[..., 1])
    b_chan = 200.0 * (f[..., 1] - f[..., 2])
    out = np.stack(
        [l_chan / 100.0, (a_chan + 128.0) / 255.0, (b_chan + 128.0) / 255.0], axis=-1
    )
    return FeatureGrid(out)


def label_downsample(label_map: LabelMap, factor: int) -> LabelMap:
    """Reduce a label map by ``factor`` using per-block majority vote.

    Output size is (ceil(H/factor), ceil(W/factor)). Ignore pixels are
    excluded from the vote; ties go to the smallest label id; blocks that
    are all ignore map to the ignore label.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    lab = label_map.labels
    ignore = label_map.ignore_label
    h, w = lab.shape
    out_h = -(-h // factor)
    out_w = -(-w // factor)
    padded = np.full((out_h * factor, out_w * factor), ignore, dtype=np.int64)
    padded[:h, :w] = lab
    valid = padded != ignore
    if valid.any():
        num_values = int(padded[valid].max()) + 1
    else:
        num_values = 1
    counts = np.zeros((out_h, out_w, num_values), dtype=np.int64)
    by = np.arange(out_h * factor) // factor
    bx = np.arange(out_w * factor) // factor
    yy, xx = np.meshgrid(by, bx, indexing="ij")
    np.add.at(counts, (yy[valid], xx[valid], padded[valid]), 1)
    # argmax returns the first maximum, i.e. the smallest label id on ties
    out = counts.argmax(axis=2).astype(np.int32)
    out[counts.sum(axis=2) == 0] = ignore
    return LabelMap(out, ignore_label=ignore)


def label_upsample_nearest(label_map: LabelMap, out_h: int, out_w: int) -> LabelMap:
    """Resample a label map to (out_h, out_w) by nearest source cell.

    Half-pixel centers with round-half-up; works for both up- and
    downsampling.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be >= 1")
    lab = label_map.labels
    in_h, in_w = lab.shape
    ys = np.floor((np.arange(out_h) + 0.5) * (in_h / out_h)).astype(np.int64)
    xs = np.floor((np.arange(out_w) + 0.5) * (in_w / out_w)).astype(np.int64)
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    return LabelMap(lab[np.ix_(ys, xs)], ignore_label=label_map.ignore_label)
