"""Sliding-window planning and cross-window assembly.

Windows of a fixed size slide over the resized image at a fixed stride; the
final origin on each axis is clamped so the last window touches the border.
Patch nodes from all windows are stacked into one joint node set whose
positions are global image coordinates, so patches at the same content
location in overlapping windows coincide spatially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import FeatureGrid, ScoreGrid, _bilinear


class WindowPlanError(ValueError):
    """Invalid window geometry."""


def _axis_origins(dim: int, win: int, stride: int) -> list[int]:
    origins = list(range(0, dim - win + 1, stride))
    if origins[-1] != dim - win:
        origins.append(dim - win)
    return origins


@dataclass(frozen=True)
class WindowPlan:
    """The set of window rectangles tiling a resized image."""

    image_h: int
    image_w: int
    win_h: int
    win_w: int
    stride_h: int
    stride_w: int
    origins: tuple[tuple[int, int], ...]  # (y0, x0), lexicographically increasing
    patch: int = 16

    def __post_init__(self):
        if self.win_h % self.patch or self.win_w % self.patch:
            raise WindowPlanError(
                f"window {self.win_h}x{self.win_w} not divisible by patch {self.patch}"
            )
        for y0, x0 in self.origins:
            if y0 < 0 or x0 < 0 or y0 + self.win_h > self.image_h or x0 + self.win_w > self.image_w:
                raise WindowPlanError(f"window at ({y0}, {x0}) leaves the image")

    @property
    def num_windows(self) -> int:
        return len(self.origins)

    @property
    def grid_h(self) -> int:
        return self.win_h // self.patch

    @property
    def grid_w(self) -> int:
        return self.win_w // self.patch

    @property
    def nodes_per_window(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def num_nodes(self) -> int:
        return self.num_windows * self.nodes_per_window


def plan_windows(
    image_h: int,
    image_w: int,
    win: int | tuple[int, int] = (224, 224),
    stride: int | tuple[int, int] = (112, 112),
    patch: int = 16,
) -> WindowPlan:
    """Plan sliding-window origins over an image of the given size.

    Origins run 0, stride, 2*stride, ... along each axis, with the final
    origin clamped to dim - win; duplicates are removed.

    Raises:
        WindowPlanError: image smaller than the window (resize first), or a
            stride larger than the window (would leave uncovered pixels).
    """
    win_h, win_w = (win, win) if isinstance(win, int) else win
    stride_h, stride_w = (stride, stride) if isinstance(stride, int) else stride
    if min(win_h, win_w, stride_h, stride_w) < 1:
        raise WindowPlanError("window and stride must be >= 1")
    if image_h < win_h or image_w < win_w:
        raise WindowPlanError(
            f"image smaller than window: {image_h}x{image_w} vs {win_h}x{win_w}"
        )
    if stride_h > win_h or stride_w > win_w:
        raise WindowPlanError("stride larger than window leaves uncovered pixels")
    ys = _axis_origins(image_h, win_h, stride_h)
    xs = _axis_origins(image_w, win_w, stride_w)
    origins = tuple((y, x) for y in ys for x in xs)
    return WindowPlan(
        image_h=image_h,
        image_w=image_w,
        win_h=win_h,
        win_w=win_w,
        stride_h=stride_h,
        stride_w=stride_w,
        origins=origins,
        patch=patch,
    )


def whole_image_plan(image_h: int, image_w: int, patch: int = 16) -> WindowPlan:
    """A single window covering the entire image (no sliding)."""
    if image_h % patch or image_w % patch:
        raise WindowPlanError(
            f"image {image_h}x{image_w} not divisible by patch {patch}"
        )
    return WindowPlan(
        image_h=image_h,
        image_w=image_w,
        win_h=image_h,
        win_w=image_w,
        stride_h=image_h,
        stride_w=image_w,
        origins=((0, 0),),
        patch=patch,
    )


def patch_centers(plan: WindowPlan, window_index: int) -> np.ndarray:
    """Global (y, x) pixel centers of one window's patches, row-major."""
    y0, x0 = plan.origins[window_index]
    cy = y0 + (np.arange(plan.grid_h) + 0.5) * plan.patch
    cx = x0 + (np.arange(plan.grid_w) + 0.5) * plan.patch
    yy, xx = np.meshgrid(cy, cx, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def assemble_joint(
    plan: WindowPlan,
    window_features: list[FeatureGrid],
    window_scores: list[ScoreGrid],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack per-window patch grids into one joint node set.

    Nodes are ordered window-major, then row-major within each window.

    Returns:
        (features (K*N, d), positions (K*N, 2), scores (K*N, C)) where
        positions are global pixel coordinates of patch centers.
    """
    k = plan.num_windows
    if len(window_features) != k or len(window_scores) != k:
        raise WindowPlanError(
            f"expected {k} per-window grids, got {len(window_features)} features "
            f"and {len(window_scores)} scores"
        )
    gh, gw = plan.grid_h, plan.grid_w
    feats, pos, scores = [], [], []
    for idx, (fgrid, sgrid) in enumerate(zip(window_features, window_scores)):
        if (fgrid.height, fgrid.width) != (gh, gw) or (sgrid.height, sgrid.width) != (gh, gw):
            raise WindowPlanError(
                f"window {idx}: grids must be {gh}x{gw}, got "
                f"{fgrid.height}x{fgrid.width} and {sgrid.height}x{sgrid.width}"
            )
        feats.append(fgrid.data.reshape(-1, fgrid.dim))
        scores.append(sgrid.data.reshape(-1, sgrid.classes))
        pos.append(patch_centers(plan, idx))
    return np.concatenate(feats), np.concatenate(pos), np.concatenate(scores)


def split_joint(plan: WindowPlan, node_values: np.ndarray) -> list[np.ndarray]:
    """Inverse of the node stacking: per-window (grid_h, grid_w, C) arrays."""
    vals = np.asarray(node_values)
    if vals.shape[0] != plan.num_nodes:
        raise WindowPlanError(f"expected {plan.num_nodes} rows, got {vals.shape[0]}")
    per = plan.nodes_per_window
    return [
        vals[i * per : (i + 1) * per].reshape(plan.grid_h, plan.grid_w, -1)
        for i in range(plan.num_windows)
    ]


def combine_windows(plan: WindowPlan, window_scores: list[ScoreGrid]) -> ScoreGrid:
    """Average upsampled per-window scores into a full-image score grid.

    Each pixel receives the arithmetic mean over all windows containing it.
    """
    if len(window_scores) != plan.num_windows:
        raise WindowPlanError(
            f"expected {plan.num_windows} score grids, got {len(window_scores)}"
        )
    classes = window_scores[0].classes
    acc = np.zeros((plan.image_h, plan.image_w, classes))
    cover = np.zeros((plan.image_h, plan.image_w), dtype=np.int64)
    for (y0, x0), sgrid in zip(plan.origins, window_scores):
        if (sgrid.height, sgrid.width, sgrid.classes) != (plan.win_h, plan.win_w, classes):
            raise WindowPlanError("window scores must be win_h x win_w x C")
        acc[y0 : y0 + plan.win_h, x0 : x0 + plan.win_w] += sgrid.data
        cover[y0 : y0 + plan.win_h, x0 : x0 + plan.win_w] += 1
    return ScoreGrid(acc / cover[:, :, None])


def resize_shorter_side(image: np.ndarray, target: int = 448) -> np.ndarray:
    """Bilinearly resize so the shorter side equals ``target``.

    Aspect ratio is preserved; the longer side rounds to the nearest
    integer. uint8 inputs come back as uint8.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected (H, W, C) image, got shape {img.shape}")
    h, w = img.shape[:2]
    if min(h, w) == target:
        return img.copy()
    scale = target / min(h, w)
    out_h = target if h <= w else int(np.floor(h * scale + 0.5))
    out_w = target if w < h else int(np.floor(w * scale + 0.5))
    resized = _bilinear(img.astype(np.float64), out_h, out_w)
    if img.dtype == np.uint8:
        return np.clip(np.rint(resized), 0, 255).astype(np.uint8)
    return resized
