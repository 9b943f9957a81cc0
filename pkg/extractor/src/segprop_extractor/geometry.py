"""Window geometry mirroring the engine's rules.

The engine recomputes its window plan from the resized image size, so the
extractor must resize and tile with the exact same conventions: shorter
side scaled to the target with the long side rounded via floor(x + 0.5),
and window origins at multiples of the stride with the last origin clamped
to ``dim - win``. Any disagreement is a hard error downstream (the engine
refuses tensors whose window count or grid does not match its plan).
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def resized_dims(height: int, width: int, target: int) -> tuple[int, int]:
    if min(height, width) == target:
        return height, width
    scale = target / min(height, width)
    out_h = target if height <= width else int(np.floor(height * scale + 0.5))
    out_w = target if width < height else int(np.floor(width * scale + 0.5))
    return out_h, out_w


def resize_shorter_side(image: Image.Image, target: int) -> Image.Image:
    out_h, out_w = resized_dims(image.height, image.width, target)
    if (out_h, out_w) == (image.height, image.width):
        return image
    return image.resize((out_w, out_h), Image.BILINEAR)


def axis_origins(dim: int, win: int, stride: int) -> list[int]:
    if dim < win:
        raise ValueError(f"image dimension {dim} smaller than window {win}")
    origins = list(range(0, dim - win + 1, stride))
    if origins[-1] != dim - win:
        origins.append(dim - win)
    return origins


def window_origins(
    image_h: int, image_w: int, win: tuple[int, int], stride: tuple[int, int]
) -> list[tuple[int, int]]:
    ys = axis_origins(image_h, win[0], stride[0])
    xs = axis_origins(image_w, win[1], stride[1])
    return [(y, x) for y in ys for x in xs]
