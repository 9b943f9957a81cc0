"""Shared fixtures: a tiny on-disk dataset with one real image."""

from __future__ import annotations

import json

import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """One 96x64 RGB photo-like image plus a label map and class list."""
    root = tmp_path_factory.mktemp("dataset")
    (root / "images").mkdir()
    (root / "images_labels").mkdir()
    rng = np.random.default_rng(99)
    yy, xx = np.meshgrid(np.arange(64), np.arange(96), indexing="ij")
    sky = yy < 24
    field = (yy >= 24) & (xx < 56)
    water = (yy >= 24) & (xx >= 56)
    img = np.zeros((64, 96, 3), dtype=np.float64)
    img[sky] = (120, 170, 230)
    img[field] = (70, 140, 60)
    img[water] = (40, 80, 160)
    img += rng.uniform(-10, 10, size=img.shape)
    img = np.clip(img, 0, 255).astype(np.uint8)
    Image.fromarray(img).save(root / "images" / "scene.png")
    labels = np.zeros((64, 96), dtype=np.uint8)
    labels[field] = 1
    labels[water] = 2
    Image.fromarray(labels, mode="L").save(root / "images_labels" / "scene.png")
    classes = root / "classes.json"
    classes.write_text(json.dumps(["sky", "field", "water"]))
    return root
