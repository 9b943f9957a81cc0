"""Feature backbones: deterministic synthetic stand-ins and real models.

The ``synthetic`` pair exercises the full extraction pipeline (geometry,
formats, normalization) without pretrained weights; its features are
content-derived but carry no semantics. The real backbones follow the
common dense-feature conventions: the vision model exposes the value
embedding of its last attention block, and the vision-language model the
MaskCLIP-style value pathway projected into the shared text space. Both
require locally available pretrained weights.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
CLIP_MEAN = np.array([0.48145466, 0.4578275, 0.40821073], dtype=np.float32)
CLIP_STD = np.array([0.26862954, 0.26130258, 0.27577711], dtype=np.float32)


class BackboneUnavailableError(RuntimeError):
    """Weights or dependencies for a real backbone are not available."""


def _seed(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def _l2(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    return rows / np.where(norms < 1e-12, 1.0, norms)


@dataclass(frozen=True)
class SyntheticImageBackbone:
    """Patch features from pooled pixel statistics and a fixed projection."""

    tag: str
    dim: int = 64

    def patch_features(self, window: np.ndarray, patch: int) -> np.ndarray:
        if window.ndim != 3 or window.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) window, got {window.shape}")
        h, w = window.shape[:2]
        if h % patch or w % patch:
            raise ValueError(f"window {h}x{w} not divisible by patch {patch}")
        gh, gw = h // patch, w // patch
        cells = (
            window.reshape(gh, patch, gw, patch, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(gh, gw, patch * patch, 3)
            .astype(np.float32)
            / 255.0
        )
        stats = np.concatenate([cells.mean(axis=2), cells.std(axis=2)], axis=-1)
        rng = np.random.default_rng(_seed(f"img:{self.tag}"))
        proj = rng.standard_normal((6, self.dim)).astype(np.float32)
        bias = rng.standard_normal(self.dim).astype(np.float32)
        feats = np.tanh(stats @ proj + 0.1 * bias)
        return _l2(feats).astype(np.float32)


@dataclass(frozen=True)
class SyntheticTextBackbone:
    """One deterministic unit vector per prompt, pooled over templates."""

    tag: str
    dim: int = 64

    def embed(self, prompts: list[str]) -> np.ndarray:
        rows = np.empty((len(prompts), self.dim), dtype=np.float32)
        for idx, prompt in enumerate(prompts):
            rng = np.random.default_rng(_seed(f"txt:{self.tag}:{prompt}"))
            rows[idx] = rng.standard_normal(self.dim).astype(np.float32)
        pooled = _l2(rows).mean(axis=0)
        return _l2(pooled[None])[0].astype(np.float32)


def _to_batch(window: np.ndarray, mean: np.ndarray, std: np.ndarray):
    import torch

    arr = window.astype(np.float32) / 255.0
    arr = (arr - mean) / std
    return torch.from_numpy(arr.transpose(2, 0, 1))[None]


class DinoValueBackbone:
    """Value embedding of the last attention block of a DINO ViT."""

    def __init__(self, model_id: str = "facebook/dino-vitb16"):
        try:
            import torch  # noqa: F401
            from transformers import ViTModel
        except ImportError as exc:
            raise BackboneUnavailableError(f"torch/transformers missing: {exc}") from exc
        try:
            self.model = ViTModel.from_pretrained(model_id).eval()
        except Exception as exc:
            raise BackboneUnavailableError(
                f"could not load weights for {model_id}: {exc}"
            ) from exc
        self.patch = self.model.config.patch_size

    def patch_features(self, window: np.ndarray, patch: int) -> np.ndarray:
        import torch

        if patch != self.patch:
            raise ValueError(f"model patch {self.patch} != requested {patch}")
        captured = {}
        layer = self.model.encoder.layer[-1].attention.attention.value

        def hook(_module, _inputs, output):
            captured["value"] = output

        handle = layer.register_forward_hook(hook)
        try:
            with torch.no_grad():
                self.model(pixel_values=_to_batch(window, IMAGENET_MEAN, IMAGENET_STD))
        finally:
            handle.remove()
        tokens = captured["value"][0, 1:].numpy()  # drop CLS
        gh, gw = window.shape[0] // patch, window.shape[1] // patch
        return _l2(tokens.reshape(gh, gw, -1)).astype(np.float32)


class MaskClipDenseBackbone:
    """Dense CLIP patch features via the value pathway of the last block.

    Attention mixing in the final block is replaced by the per-token value
    projection; the residual, MLP, final layernorm and visual projection are
    applied as usual, landing patch tokens in the shared image/text space.
    """

    def __init__(self, model_id: str = "openai/clip-vit-base-patch16"):
        try:
            import torch  # noqa: F401
            from transformers import CLIPVisionModelWithProjection
        except ImportError as exc:
            raise BackboneUnavailableError(f"torch/transformers missing: {exc}") from exc
        try:
            self.model = CLIPVisionModelWithProjection.from_pretrained(model_id).eval()
        except Exception as exc:
            raise BackboneUnavailableError(
                f"could not load weights for {model_id}: {exc}"
            ) from exc
        self.patch = self.model.config.patch_size

    def patch_features(self, window: np.ndarray, patch: int) -> np.ndarray:
        import torch

        if patch != self.patch:
            raise ValueError(f"model patch {self.patch} != requested {patch}")
        vision = self.model.vision_model
        with torch.no_grad():
            pixel_values = _to_batch(window, CLIP_MEAN, CLIP_STD)
            hidden = vision.embeddings(pixel_values)
            hidden = vision.pre_layrnorm(hidden)
            for block in vision.encoder.layers[:-1]:
                hidden = block(hidden, None, None)[0]
            last = vision.encoder.layers[-1]
            normed = last.layer_norm1(hidden)
            attn = last.self_attn
            value = attn.out_proj(attn.v_proj(normed))
            hidden = hidden + value
            hidden = hidden + last.mlp(last.layer_norm2(hidden))
            hidden = vision.post_layernorm(hidden)
            projected = self.model.visual_projection(hidden)[0, 1:].numpy()
        gh, gw = window.shape[0] // patch, window.shape[1] // patch
        return _l2(projected.reshape(gh, gw, -1)).astype(np.float32)


class ClipTextBackbone:
    """CLIP text features pooled over a prompt ensemble."""

    def __init__(self, model_id: str = "openai/clip-vit-base-patch16"):
        try:
            import torch  # noqa: F401
            from transformers import CLIPTextModelWithProjection, CLIPTokenizer
        except ImportError as exc:
            raise BackboneUnavailableError(f"torch/transformers missing: {exc}") from exc
        try:
            self.tokenizer = CLIPTokenizer.from_pretrained(model_id)
            self.model = CLIPTextModelWithProjection.from_pretrained(model_id).eval()
        except Exception as exc:
            raise BackboneUnavailableError(
                f"could not load weights for {model_id}: {exc}"
            ) from exc

    def embed(self, prompts: list[str]) -> np.ndarray:
        import torch

        with torch.no_grad():
            tokens = self.tokenizer(prompts, padding=True, return_tensors="pt")
            feats = self.model(**tokens).text_embeds.numpy()
        pooled = _l2(feats).mean(axis=0)
        return _l2(pooled[None])[0].astype(np.float32)


def image_backbone(identifier: str):
    if identifier == "synthetic":
        return SyntheticImageBackbone(tag="synthetic")
    if identifier.startswith("synthetic:"):
        return SyntheticImageBackbone(tag=identifier.split(":", 1)[1])
    if identifier.startswith("dino"):
        return DinoValueBackbone()
    if identifier.startswith("maskclip"):
        return MaskClipDenseBackbone()
    raise ValueError(f"unknown image backbone {identifier!r}")


def text_backbone(identifier: str):
    if identifier == "synthetic" or identifier.startswith("synthetic:"):
        tag = identifier.split(":", 1)[1] if ":" in identifier else "synthetic"
        return SyntheticTextBackbone(tag=tag)
    if identifier.startswith(("clip", "maskclip")):
        return ClipTextBackbone()
    raise ValueError(f"unknown text backbone {identifier!r}")
