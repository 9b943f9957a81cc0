"""End-to-end score refinement: initial scoring, joint propagation over all
windows, pixel-level refinement, ensembling, and label decisions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    PatchGraphConfig,
    PixelGraphConfig,
    build_patch_graph,
    build_pixel_graph,
    symmetric_normalize,
)
from .grids import FeatureGrid, LabelMap, ScoreGrid, bilinear_resize, srgb_to_lab
from .solver import PropagationConfig, lp_solve_cg
from .windows import WindowPlan, assemble_joint, combine_windows, split_joint

INITIAL_SCORE_MODES = ("vlm_dot", "dinoiser", "external")


@dataclass(frozen=True)
class ClassEmbeddings:
    """Text-side class embeddings: a (d, C) matrix with one column per name."""

    matrix: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[1] != len(self.names):
            raise ValueError(
                f"embedding matrix must be (d, {len(self.names)}), got {mat.shape}"
            )
        norms = np.linalg.norm(mat, axis=0)
        if np.abs(norms - 1.0).max(initial=0.0) > 1e-4:
            warnings.warn("class embedding columns are not unit norm", stacklevel=2)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def classes(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class PipelineConfig:
    """All knobs of the refinement pipeline in one place."""

    patch_graph: PatchGraphConfig = field(default_factory=PatchGraphConfig)
    pixel_graph: PixelGraphConfig = field(default_factory=PixelGraphConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    win: tuple[int, int] = (224, 224)
    stride: tuple[int, int] = (112, 112)
    shorter_side: int = 448
    patch: int = 16
    initial_scores: str = "vlm_dot"
    # optional second (win, stride) geometry whose run is averaged in
    ensemble_with: tuple[tuple[int, int], tuple[int, int]] | None = ((448, 448), (224, 224))

    def __post_init__(self):
        if self.initial_scores not in INITIAL_SCORE_MODES:
            raise ValueError(f"initial_scores must be one of {INITIAL_SCORE_MODES}")


def vlm_scores(features: FeatureGrid, embeddings: ClassEmbeddings) -> ScoreGrid:
    """Per-cell class scores: the dot product of cell features with each
    class embedding."""
    if features.dim != embeddings.dim:
        raise ValueError(
            f"feature dim {features.dim} != embedding dim {embeddings.dim}"
        )
    return ScoreGrid(features.data @ embeddings.matrix)


def affinity_baseline(
    vm_features: FeatureGrid,
    scores: ScoreGrid,
    *,
    normalize_after: bool = False,
    vlm_features: FeatureGrid | None = None,
    embeddings: ClassEmbeddings | None = None,
) -> ScoreGrid:
    """Smooth scores with the dense patch-affinity matrix A = Z_vm^T Z_vm.

    The plain form returns A @ scores. With ``normalize_after`` the affinity
    is applied to the raw VLM features instead, the propagated features are
    l2-normalized per patch and only then projected onto the class
    embeddings (the variant used by the trained CLIP-DINOiser release).
    """
    n = vm_features.height * vm_features.width
    affinity = vm_features.data.reshape(n, -1) @ vm_features.data.reshape(n, -1).T
    if not normalize_after:
        if (scores.height, scores.width) != (vm_features.height, vm_features.width):
            raise ValueError("scores grid must match the feature grid")
        flat = scores.data.reshape(n, -1)
        return ScoreGrid((affinity @ flat).reshape(scores.height, scores.width, -1))
    if vlm_features is None or embeddings is None:
        raise ValueError("normalize_after requires vlm_features and embeddings")
    if (vlm_features.height, vlm_features.width) != (vm_features.height, vm_features.width):
        raise ValueError("vlm feature grid must match the vm feature grid")
    mixed = affinity @ vlm_features.data.reshape(n, -1)
    norms = np.linalg.norm(mixed, axis=1, keepdims=True)
    mixed = mixed / np.where(norms < 1e-12, 1.0, norms)
    out = mixed @ embeddings.matrix
    return ScoreGrid(out.reshape(vm_features.height, vm_features.width, -1))


def initial_window_scores(
    mode: str,
    vlm_features: list[FeatureGrid] | None,
    vm_features: list[FeatureGrid],
    embeddings: ClassEmbeddings | None,
    external: list[ScoreGrid] | None = None,
) -> list[ScoreGrid]:
    """Per-window initial scores according to ``mode``.

    ``vlm_dot`` projects VLM features onto the class embeddings,
    ``dinoiser`` additionally smooths them with the dense VM affinity, and
    ``external`` passes through precomputed scores unchanged.
    """
    if mode == "external":
        if external is None:
            raise ValueError("external mode needs precomputed scores")
        return list(external)
    if vlm_features is None or embeddings is None:
        raise ValueError(f"{mode} mode needs vlm features and class embeddings")
    base = [vlm_scores(f, embeddings) for f in vlm_features]
    if mode == "vlm_dot":
        return base
    if mode == "dinoiser":
        return [affinity_baseline(vm, sc) for vm, sc in zip(vm_features, base)]
    raise ValueError(f"unknown initial score mode {mode!r}")


def propagate_patch_scores(
    plan: WindowPlan,
    vm_features: list[FeatureGrid],
    scores: list[ScoreGrid],
    graph_cfg: PatchGraphConfig,
    prop_cfg: PropagationConfig,
) -> ScoreGrid:
    """Refine per-window patch scores jointly across all sliding windows.

    Patch nodes from every window form one graph built from VM features and
    global patch-center positions; scores are propagated over it, split back
    per window, bilinearly upsampled to window resolution and averaged into
    a full-image score grid.
    """
    feats, positions, stacked = assemble_joint(plan, vm_features, scores)
    adjacency = build_patch_graph(feats, positions, graph_cfg)
    refined = lp_solve_cg(symmetric_normalize(adjacency), stacked, prop_cfg)
    upsampled = [
        bilinear_resize(ScoreGrid(block), plan.win_h, plan.win_w)
        for block in split_joint(plan, refined)
    ]
    return combine_windows(plan, upsampled)


def refine_pixel_scores(
    image_scores: ScoreGrid,
    rgb_image: np.ndarray,
    pixel_cfg: PixelGraphConfig,
    prop_cfg: PropagationConfig,
) -> ScoreGrid:
    """Refine pixel-resolution scores over the color/position pixel graph.

    The graph connects each pixel to its r x r neighborhood with weights from
    the rescaled-Lab color distance; scores are propagated over it so labels
    snap to color edges.
    """
    rgb = np.asarray(rgb_image)
    if rgb.shape[:2] != (image_scores.height, image_scores.width):
        raise ValueError(
            f"image {rgb.shape[:2]} and scores "
            f"{(image_scores.height, image_scores.width)} sizes differ"
        )
    lab = srgb_to_lab(rgb)
    adjacency = build_pixel_graph(lab, pixel_cfg)
    flat = image_scores.data.reshape(adjacency.n, -1)
    refined = lp_solve_cg(symmetric_normalize(adjacency), flat, prop_cfg)
    return ScoreGrid(refined.reshape(image_scores.data.shape))


def _shift_l1_normalize(data: np.ndarray) -> np.ndarray:
    shifted = data - data.min(axis=2, keepdims=True)
    totals = shifted.sum(axis=2, keepdims=True)
    degenerate = totals <= 1e-12
    uniform = 1.0 / data.shape[2]
    return np.where(degenerate, uniform, shifted / np.where(degenerate, 1.0, totals))


def ensemble_scores(a: ScoreGrid, b: ScoreGrid) -> ScoreGrid:
    """Average two score grids after per-pixel min-shift and L1 normalization.

    Normalizing first lets runs with different score scales combine sanely;
    pixels whose scores are all equal normalize to the uniform distribution.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    return ScoreGrid(0.5 * (_shift_l1_normalize(a.data) + _shift_l1_normalize(b.data)))


def argmax_labels(scores: ScoreGrid, ignore_label: int = 255) -> LabelMap:
    """Per-pixel argmax decision; ties go to the smallest class id."""
    return LabelMap(scores.data.argmax(axis=2).astype(np.int32), ignore_label=ignore_label)
