"""Manifest-driven orchestration of the refinement pipeline."""

from __future__ import annotations

from dataclasses import replace

from .graph import PatchGraphConfig, PixelGraphConfig
from .grids import ScoreGrid, label_upsample_nearest
from .manifest import ImageSpec, ManifestError, RunManifest, SetupSpec
from .pipeline import (
    PipelineConfig,
    argmax_labels,
    ensemble_scores,
    initial_window_scores,
    propagate_patch_scores,
    refine_pixel_scores,
)
from .solver import PropagationConfig
from .windows import WindowPlan, plan_windows, resize_shorter_side, whole_image_plan

# flat override keys accepted from manifest config blocks and CLI flags
_FLAT_KEYS = (
    "alpha",
    "k",
    "gamma",
    "sigma",
    "r",
    "tau",
    "win",
    "stride",
    "short_side",
    "patch",
    "initial_scores",
    "appearance_kernel",
    "spatial_kernel",
    "cg_tol",
    "cg_max_iter",
)


def config_from_overrides(*override_maps: dict) -> PipelineConfig:
    """Build a PipelineConfig from flat override dicts (later maps win)."""
    merged: dict = {}
    for overrides in override_maps:
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in _FLAT_KEYS:
                raise ManifestError(f"unknown config key {key!r}")
            merged[key] = value

    def pair(value):
        return (value, value) if isinstance(value, int) else (int(value[0]), int(value[1]))

    patch_kwargs = {}
    for src, dst in (("k", "k"), ("gamma", "gamma"), ("sigma", "sigma"),
                     ("appearance_kernel", "appearance_kernel"),
                     ("spatial_kernel", "spatial_kernel")):
        if src in merged:
            patch_kwargs[dst] = merged[src]
    pixel_kwargs = {k: merged[k] for k in ("r", "tau") if k in merged}
    prop_kwargs = {k: merged[k] for k in ("alpha", "cg_tol", "cg_max_iter") if k in merged}
    cfg = PipelineConfig(
        patch_graph=PatchGraphConfig(**patch_kwargs),
        pixel_graph=PixelGraphConfig(**pixel_kwargs),
        propagation=PropagationConfig(**prop_kwargs),
    )
    if "win" in merged:
        cfg = replace(cfg, win=pair(merged["win"]))
    if "stride" in merged:
        cfg = replace(cfg, stride=pair(merged["stride"]))
    if "short_side" in merged:
        cfg = replace(cfg, shorter_side=int(merged["short_side"]))
    if "patch" in merged:
        cfg = replace(cfg, patch=int(merged["patch"]))
    if "initial_scores" in merged:
        cfg = replace(cfg, initial_scores=str(merged["initial_scores"]))
    return cfg


def setup_plan(setup: SetupSpec, image_h: int, image_w: int, patch: int) -> WindowPlan:
    if setup.layout == "whole_image":
        return whole_image_plan(image_h, image_w, patch)
    return plan_windows(image_h, image_w, setup.win, setup.stride, patch)


def _check_stack(plan: WindowPlan, grids, what: str) -> None:
    if len(grids) != plan.num_windows:
        raise ManifestError(
            f"{what}: {len(grids)} windows in tensor but plan has {plan.num_windows}"
        )
    if (grids[0].height, grids[0].width) != (plan.grid_h, plan.grid_w):
        raise ManifestError(
            f"{what}: grid {grids[0].height}x{grids[0].width} but plan expects "
            f"{plan.grid_h}x{plan.grid_w}"
        )


def propagate_setup(
    manifest: RunManifest,
    spec: ImageSpec,
    setup: SetupSpec,
    cfg: PipelineConfig,
    work_shape: tuple[int, int],
) -> ScoreGrid:
    """Patch-level propagation for one window setup of one image.

    Returns combined scores at the working (resized) image resolution.
    """
    if setup.vm is None:
        raise ManifestError(f"image {spec.id!r}: setup has no vm features")
    plan = setup_plan(setup, work_shape[0], work_shape[1], cfg.patch)
    vm = manifest.load_feature_stack(setup.vm)
    _check_stack(plan, vm, f"{spec.id}/vm")
    vlm = None
    if setup.vlm is not None:
        vlm = manifest.load_feature_stack(setup.vlm)
        _check_stack(plan, vlm, f"{spec.id}/vlm")
    external = None
    if setup.scores is not None:
        external = manifest.load_score_stack(setup.scores)
        _check_stack(plan, external, f"{spec.id}/scores")
    embeddings = manifest.load_embeddings() if manifest.embeddings_path else None
    initial = initial_window_scores(cfg.initial_scores, vlm, vm, embeddings, external)
    return propagate_patch_scores(plan, vm, initial, cfg.patch_graph, cfg.propagation)


def _match_geometry(setups, geometry) -> SetupSpec | None:
    if geometry is None:
        return None
    win, stride = (tuple(geometry[0]), tuple(geometry[1]))
    for setup in setups:
        if setup.win == win and setup.stride == stride:
            return setup
    return None


def select_setups(spec: ImageSpec, cfg: PipelineConfig, want: int) -> list[SetupSpec]:
    """Pick ``want`` setups for an image, honoring explicit geometries.

    The primary setup is the one matching (cfg.win, cfg.stride) if present,
    else the first listed. For ensembling, the second is the one matching
    cfg.ensemble_with if present, else the next distinct setup.
    """
    if not spec.setups:
        raise ManifestError(f"image {spec.id!r} has no feature setups")
    primary = _match_geometry(spec.setups, (cfg.win, cfg.stride)) or spec.setups[0]
    if want == 1:
        return [primary]
    second = _match_geometry(spec.setups, cfg.ensemble_with)
    if second is None or second is primary:
        others = [s for s in spec.setups if s is not primary]
        if not others:
            raise ManifestError(
                f"image {spec.id!r} has {len(spec.setups)} setups, need 2 to ensemble"
            )
        second = others[0]
    return [primary, second]


def run_image(
    manifest: RunManifest,
    spec: ImageSpec,
    cfg: PipelineConfig,
    *,
    pixel_stage: bool = True,
    ensemble: bool = False,
) -> dict:
    """Full pipeline for one image: propagate, optionally refine, decide.

    Returns a dict with the working-resolution scores ("scores"), the final
    label map at ground-truth resolution when ground truth is present, else
    at working resolution ("labels"), and the working rgb ("rgb").
    """
    rgb = manifest.load_rgb(spec)
    work = resize_shorter_side(rgb, cfg.shorter_side)
    setups = select_setups(spec, cfg, 2 if ensemble else 1)
    outputs = []
    for setup in setups:
        scores = propagate_setup(manifest, spec, setup, cfg, work.shape[:2])
        if pixel_stage:
            scores = refine_pixel_scores(scores, work, cfg.pixel_graph, cfg.propagation)
        outputs.append(scores)
    scores = outputs[0] if len(outputs) == 1 else ensemble_scores(outputs[0], outputs[1])
    labels = argmax_labels(scores)
    if spec.gt is not None:
        gt = manifest.load_gt(spec)
        if (gt.height, gt.width) != (labels.height, labels.width):
            labels = label_upsample_nearest(labels, gt.height, gt.width)
    return {"scores": scores, "labels": labels, "rgb": work}
