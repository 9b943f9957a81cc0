"""Deterministic synthetic scenes for desk-scale testing.

Each scenario writes a complete manifest plus tensors into a directory:
block-structured ground truths, two-cluster patch features whose clusters
follow the ground truth, and color-region images. A fixed seed produces
identical bytes on every run.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grids import LabelMap, label_downsample
from .manifest import write_manifest
from .tensorio import write_tensor
from .windows import plan_windows

SCENARIOS = ("halves-64", "diag-64", "noisy-flip-10pct")

_LEFT_RGB = np.array([60, 90, 180], dtype=np.float64)
_RIGHT_RGB = np.array([210, 160, 70], dtype=np.float64)


def _orthonormal(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, count)))
    return q[:, :count]


def _noisy_unit(rng: np.random.Generator, center: np.ndarray, scale: float) -> np.ndarray:
    vec = center + scale * rng.standard_normal(center.shape)
    return vec / np.linalg.norm(vec)


def _region_rgb(rng: np.random.Generator, mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    img = np.where(mask[:, :, None], _RIGHT_RGB, _LEFT_RGB)
    img = img + rng.uniform(-6.0, 6.0, size=(h, w, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _window_sides(gt: np.ndarray, plan, patch: int) -> np.ndarray:
    """Majority class of every patch, per window: [K, gh, gw] int32."""
    sides = np.empty((plan.num_windows, plan.grid_h, plan.grid_w), dtype=np.int32)
    for idx, (y0, x0) in enumerate(plan.origins):
        crop = LabelMap(gt[y0 : y0 + plan.win_h, x0 : x0 + plan.win_w])
        sides[idx] = label_downsample(crop, patch).labels
    return sides


def _feature_stacks(
    rng: np.random.Generator,
    sides: np.ndarray,
    vm_centers: np.ndarray,
    vlm_centers: np.ndarray,
    vlm_overrides: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-node cluster features with small noise, as [K, gh, gw, d] stacks."""
    k, gh, gw = sides.shape
    flat = sides.reshape(-1)
    pick = flat if vlm_overrides is None else vlm_overrides
    vm = np.empty((k * gh * gw, vm_centers.shape[0]), dtype=np.float64)
    vlm = np.empty((k * gh * gw, vlm_centers.shape[0]), dtype=np.float64)
    for node in range(flat.size):
        vm[node] = _noisy_unit(rng, vm_centers[:, flat[node]], 0.05)
        vlm[node] = _noisy_unit(rng, vlm_centers[:, pick[node]], 0.02)
    dims = (k, gh, gw)
    return (
        vm.reshape(*dims, -1).astype(np.float32),
        vlm.reshape(*dims, -1).astype(np.float32),
    )


def _two_cluster_scene(
    out: Path,
    seed: int,
    scenario: str,
    gt: np.ndarray,
    *,
    patch: int,
    win: int,
    stride: int,
    k_neighbors: int,
    flip_fraction: float = 0.0,
) -> dict:
    rng = np.random.default_rng(seed)
    h, w = gt.shape
    rgb = _region_rgb(rng, gt.astype(bool))
    plan = plan_windows(h, w, win, stride, patch)
    sides = _window_sides(gt, plan, patch)

    vm_centers = _orthonormal(rng, 16, 2)
    vlm_centers = _orthonormal(rng, 16, 2)

    flat = sides.reshape(-1)
    overrides = None
    num_flips = int(round(flip_fraction * flat.size))
    if num_flips:
        flipped = rng.choice(flat.size, size=num_flips, replace=False)
        overrides = flat.copy()
        overrides[flipped] = 1 - overrides[flipped]
    vm_stack, vlm_stack = _feature_stacks(rng, sides, vm_centers, vlm_centers, overrides)

    write_tensor(rgb, out / "rgb.lpt")
    write_tensor(gt.astype(np.int32), out / "gt.lpt")
    write_tensor(vm_stack, out / "vm.lpt")
    write_tensor(vlm_stack, out / "vlm.lpt")
    write_tensor(sides, out / "clean_sides.lpt")
    write_tensor(vlm_centers.astype(np.float32), out / "class_embeddings.lpt")

    return {
        "version": 1,
        "scenario": scenario,
        "seed": seed,
        "classes": {"names": ["left", "right"], "embeddings": "class_embeddings.lpt"},
        "config": {
            "alpha": 0.95,
            "k": k_neighbors,
            "gamma": 3.0,
            "sigma": 100.0,
            "r": 13,
            "tau": 0.01,
            "win": win,
            "stride": stride,
            "short_side": min(h, w),
            "patch": patch,
        },
        "images": [
            {
                "id": f"{scenario}-0",
                "rgb": "rgb.lpt",
                "gt": "gt.lpt",
                "setups": [
                    {
                        "win": [win, win],
                        "stride": [stride, stride],
                        "layout": "per_window",
                        "vlm": "vlm.lpt",
                        "vm": "vm.lpt",
                    }
                ],
            }
        ],
    }


def _halves_gt(size: int) -> np.ndarray:
    gt = np.zeros((size, size), dtype=np.int32)
    gt[:, size // 2 :] = 1
    return gt


def _diagonal_gt(size: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    return (yy < xx).astype(np.int32)


def synth_fixture(scenario: str, seed: int, out_dir: str | Path) -> Path:
    """Generate a named scenario under ``out_dir``; returns the manifest path.

    Scenarios:
        halves-64: two vertical color/class halves, patch-aligned boundary.
        diag-64: diagonal half-plane ground truth (for resolution oracles).
        noisy-flip-10pct: diagonal two-cluster scene with 10% of the initial
            patch scores flipped to the wrong class.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if scenario == "halves-64":
        doc = _two_cluster_scene(
            out, seed, scenario, _halves_gt(64), patch=16, win=32, stride=16, k_neighbors=8
        )
    elif scenario == "diag-64":
        rng = np.random.default_rng(seed)
        gt = _diagonal_gt(64)
        write_tensor(gt, out / "gt.lpt")
        write_tensor(_region_rgb(rng, gt.astype(bool)), out / "rgb.lpt")
        doc = {
            "version": 1,
            "scenario": scenario,
            "seed": seed,
            "classes": {"names": ["lower", "upper"]},
            "config": {"short_side": 64},
            "images": [{"id": f"{scenario}-0", "rgb": "rgb.lpt", "gt": "gt.lpt", "setups": []}],
        }
    elif scenario == "noisy-flip-10pct":
        doc = _two_cluster_scene(
            out,
            seed,
            scenario,
            _diagonal_gt(64),
            patch=4,
            win=32,
            stride=16,
            k_neighbors=40,
            flip_fraction=0.10,
        )
    else:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    manifest_path = out / "manifest.json"
    write_manifest(doc, manifest_path)
    return manifest_path
