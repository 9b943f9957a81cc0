"""Batch extraction: images to per-window feature tensors plus a manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import image_backbone, text_backbone
from .container import write_tensor
from .geometry import resize_shorter_side, window_origins
from .prompts import DEFAULT_BACKGROUND_EXPANSION, expand_class_names, fill_templates

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


class ExtractionError(ValueError):
    """Invalid job configuration or dataset layout."""


@dataclass(frozen=True)
class ExtractionJob:
    """Everything needed to produce engine inputs for one image set.

    Images are read from ``dataset_root/split``; optional label maps from
    ``dataset_root/{split}_labels/<stem>.png``. The window geometry must be
    the one the engine will run with: the engine re-derives its plan from
    the resized image size and rejects tensors that do not match it.
    """

    dataset_root: Path
    split: str
    out_dir: Path
    class_names: tuple[str, ...]
    vlm: str = "synthetic"
    vm: str = "synthetic"
    win: tuple[int, int] = (224, 224)
    stride: tuple[int, int] = (112, 112)
    short_side: int = 448
    patch: int = 16
    background_expansion: tuple[str, ...] = DEFAULT_BACKGROUND_EXPANSION

    def __post_init__(self):
        if self.win[0] % self.patch or self.win[1] % self.patch:
            raise ExtractionError(
                f"window {self.win} not divisible by patch {self.patch}"
            )
        if self.stride[0] > self.win[0] or self.stride[1] > self.win[1]:
            raise ExtractionError("stride larger than window leaves gaps")
        if not self.class_names:
            raise ExtractionError("need at least one class name")


def _discover_images(job: ExtractionJob) -> list[Path]:
    image_dir = Path(job.dataset_root) / job.split
    if not image_dir.is_dir():
        raise ExtractionError(f"no such image directory: {image_dir}")
    images = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        raise ExtractionError(f"no images under {image_dir}")
    return images


def _label_path(job: ExtractionJob, stem: str) -> Path | None:
    candidate = Path(job.dataset_root) / f"{job.split}_labels" / f"{stem}.png"
    return candidate if candidate.exists() else None


def _window_stack(image: np.ndarray, origins, win, backbone, patch) -> np.ndarray:
    grids = []
    for y0, x0 in origins:
        crop = image[y0 : y0 + win[0], x0 : x0 + win[1]]
        feats = backbone.patch_features(crop, patch)
        expected = (win[0] // patch, win[1] // patch)
        if feats.shape[:2] != expected:
            raise ExtractionError(
                f"backbone produced grid {feats.shape[:2]}, plan expects {expected}"
            )
        grids.append(feats)
    return np.stack(grids).astype(np.float32)


def class_embedding_matrix(job: ExtractionJob) -> tuple[np.ndarray, list[str], list[int]]:
    """(d, C_expanded) embedding matrix plus expanded names and class map."""
    expanded, column_to_class = expand_class_names(
        list(job.class_names), job.background_expansion
    )
    encoder = text_backbone(job.vlm)
    columns = [encoder.embed(fill_templates(name)) for name in expanded]
    return np.stack(columns, axis=1).astype(np.float32), expanded, column_to_class


def extract(job: ExtractionJob) -> Path:
    """Run the job; returns the path of the written manifest.

    Every image is resized with the engine's shorter-side rule, cropped into
    the engine's window plan (same clamping), and encoded per window by both
    backbones; features are l2-normalized per patch before writing.
    """
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vlm = image_backbone(job.vlm)
    vm = image_backbone(job.vm)

    matrix, expanded_names, column_to_class = class_embedding_matrix(job)
    write_tensor(matrix, out / "class_embeddings.lpt")

    entries = []
    for path in _discover_images(job):
        stem = path.stem
        image = Image.open(path).convert("RGB")
        resized = resize_shorter_side(image, job.short_side)
        arr = np.asarray(resized, dtype=np.uint8)
        origins = window_origins(arr.shape[0], arr.shape[1], job.win, job.stride)
        write_tensor(
            _window_stack(arr, origins, job.win, vlm, job.patch), out / f"{stem}_vlm.lpt"
        )
        write_tensor(
            _window_stack(arr, origins, job.win, vm, job.patch), out / f"{stem}_vm.lpt"
        )
        write_tensor(arr, out / f"{stem}_rgb.lpt")
        entry = {
            "id": stem,
            "rgb": f"{stem}_rgb.lpt",
            "setups": [
                {
                    "win": list(job.win),
                    "stride": list(job.stride),
                    "layout": "per_window",
                    "vlm": f"{stem}_vlm.lpt",
                    "vm": f"{stem}_vm.lpt",
                }
            ],
        }
        label_path = _label_path(job, stem)
        if label_path is not None:
            labels = np.asarray(Image.open(label_path), dtype=np.int32)
            write_tensor(labels, out / f"{stem}_gt.lpt")
            entry["gt"] = f"{stem}_gt.lpt"
        entries.append(entry)

    doc = {
        "version": 1,
        "classes": {
            "names": expanded_names,
            "embeddings": "class_embeddings.lpt",
            "column_to_class": column_to_class,
            "evaluation_names": list(job.class_names),
        },
        "config": {
            "win": list(job.win),
            "stride": list(job.stride),
            "short_side": job.short_side,
            "patch": job.patch,
        },
        "images": entries,
        "extraction": {"vlm": job.vlm, "vm": job.vm},
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path
