"""Run manifests: the JSON document gluing tensors, images and config.

A manifest lists the images of a run, the per-image tensor paths for one or
more window setups, the class-embedding tensor, and config overrides. All
paths are relative to the manifest's directory; every referenced file must
exist at load time.

Feature tensors are stored stacked per window as [K, grid_h, grid_w, d]
(``layout: per_window``) or as a single whole-image patch grid
[1, H/P, W/P, d] (``layout: whole_image``, no sliding).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .grids import FeatureGrid, LabelMap, ScoreGrid
from .pipeline import ClassEmbeddings
from .tensorio import read_tensor

LAYOUTS = ("per_window", "whole_image")


class ManifestError(ValueError):
    """Malformed or inconsistent run manifest."""


@dataclass(frozen=True)
class SetupSpec:
    """One window geometry and its tensors for an image."""

    win: tuple[int, int]
    stride: tuple[int, int]
    layout: str = "per_window"
    vlm: str | None = None  # f32 [K, gh, gw, d]
    vm: str | None = None  # f32 [K, gh, gw, d']
    scores: str | None = None  # f32 [K, gh, gw, C], for external initial scores


@dataclass(frozen=True)
class ImageSpec:
    id: str
    rgb: str | None
    gt: str | None
    setups: tuple[SetupSpec, ...]


@dataclass(frozen=True)
class RunManifest:
    root: Path
    class_names: tuple[str, ...]
    embeddings_path: str | None
    images: tuple[ImageSpec, ...]
    config: dict

    def path(self, rel: str) -> Path:
        return self.root / rel

    def image(self, image_id: str) -> ImageSpec:
        for spec in self.images:
            if spec.id == image_id:
                return spec
        raise ManifestError(f"no image {image_id!r} in manifest")

    def load_embeddings(self) -> ClassEmbeddings:
        if self.embeddings_path is None:
            raise ManifestError("manifest carries no class embeddings")
        mat = read_tensor(self.path(self.embeddings_path)).astype(np.float64)
        return ClassEmbeddings(matrix=mat, names=self.class_names)

    def load_rgb(self, spec: ImageSpec) -> np.ndarray:
        if spec.rgb is None:
            raise ManifestError(f"image {spec.id!r} has no rgb entry")
        path = self.path(spec.rgb)
        if path.suffix.lower() in (".png", ".jpg", ".jpeg"):
            arr = np.asarray(Image.open(path).convert("RGB"))
        else:
            arr = read_tensor(path)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ManifestError(f"{path}: rgb must be uint8 (H, W, 3)")
        return arr

    def load_gt(self, spec: ImageSpec, ignore_label: int = 255) -> LabelMap:
        if spec.gt is None:
            raise ManifestError(f"image {spec.id!r} has no ground truth")
        return LabelMap(read_tensor(self.path(spec.gt)), ignore_label=ignore_label)

    def load_feature_stack(self, rel: str) -> list[FeatureGrid]:
        arr = read_tensor(self.path(rel))
        if arr.ndim != 4:
            raise ManifestError(f"{rel}: expected [K, gh, gw, d] stack, got {arr.shape}")
        return [FeatureGrid(arr[i]) for i in range(arr.shape[0])]

    def load_score_stack(self, rel: str) -> list[ScoreGrid]:
        arr = read_tensor(self.path(rel))
        if arr.ndim != 4:
            raise ManifestError(f"{rel}: expected [K, gh, gw, C] stack, got {arr.shape}")
        return [ScoreGrid(arr[i]) for i in range(arr.shape[0])]


def _pair(value, name: str) -> tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (int(value[0]), int(value[1]))
    raise ManifestError(f"{name} must be an int or a pair, got {value!r}")


def load_manifest(path: str | Path) -> RunManifest:
    """Load and validate a manifest; all referenced files must exist."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    root = path.parent

    classes = doc.get("classes", {})
    names = tuple(classes.get("names", ()))
    emb = classes.get("embeddings")

    images = []
    for entry in doc.get("images", ()):
        if "id" not in entry:
            raise ManifestError("every image entry needs an id")
        setups = []
        for setup in entry.get("setups", ()):
            layout = setup.get("layout", "per_window")
            if layout not in LAYOUTS:
                raise ManifestError(f"unknown layout {layout!r}")
            setups.append(
                SetupSpec(
                    win=_pair(setup.get("win", 224), "win"),
                    stride=_pair(setup.get("stride", 112), "stride"),
                    layout=layout,
                    vlm=setup.get("vlm"),
                    vm=setup.get("vm"),
                    scores=setup.get("scores"),
                )
            )
        images.append(
            ImageSpec(
                id=str(entry["id"]),
                rgb=entry.get("rgb"),
                gt=entry.get("gt"),
                setups=tuple(setups),
            )
        )

    manifest = RunManifest(
        root=root,
        class_names=names,
        embeddings_path=emb,
        images=tuple(images),
        config=dict(doc.get("config", {})),
    )
    missing = []
    if emb is not None and not manifest.path(emb).exists():
        missing.append(emb)
    for spec in manifest.images:
        for rel in (spec.rgb, spec.gt):
            if rel is not None and not manifest.path(rel).exists():
                missing.append(rel)
        for setup in spec.setups:
            for rel in (setup.vlm, setup.vm, setup.scores):
                if rel is not None and not manifest.path(rel).exists():
                    missing.append(rel)
    if missing:
        raise ManifestError(f"{path}: missing referenced files: {', '.join(missing)}")
    return manifest


def write_manifest(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
