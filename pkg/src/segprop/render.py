"""Label map rendering: 8-bit indexed PNG with a fixed palette."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .grids import LabelMap


def fixed_palette() -> np.ndarray:
    """A deterministic 256-entry RGB palette (bit-reversal construction)."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    for idx in range(256):
        value = idx
        r = g = b = 0
        for shift in range(8):
            r |= ((value >> 0) & 1) << (7 - shift)
            g |= ((value >> 1) & 1) << (7 - shift)
            b |= ((value >> 2) & 1) << (7 - shift)
            value >>= 3
        palette[idx] = (r, g, b)
    palette[255] = (255, 255, 255)  # ignore renders white
    return palette


def render_labels(labels: LabelMap, path: str | Path) -> None:
    """Write a label map as an indexed PNG using the fixed palette."""
    arr = labels.labels
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
        raise ValueError("labels must fit in uint8 for indexed PNG output")
    img = Image.fromarray(arr.astype(np.uint8), mode="P")
    img.putpalette(fixed_palette().ravel().tolist())
    img.save(Path(path), format="PNG")
