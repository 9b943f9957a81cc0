"""Feature and class-embedding extraction feeding the segprop engine.

Writes per-window patch features, class-name text embeddings (ImageNet
prompt ensemble with background expansion) and run manifests in the
engine's tensor container format. Owns every model- and prompt-related
concern so the engine itself stays free of deep-learning dependencies.
"""

from .backbones import (
    BackboneUnavailableError,
    image_backbone,
    text_backbone,
)
from .container import write_tensor
from .extract import ExtractionError, ExtractionJob, class_embedding_matrix, extract
from .geometry import resize_shorter_side, resized_dims, window_origins
from .prompts import (
    DEFAULT_BACKGROUND_EXPANSION,
    IMAGENET_TEMPLATES,
    expand_class_names,
    fill_templates,
)

__version__ = "0.1.0"
