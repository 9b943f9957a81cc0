"""Training-free refinement of open-vocabulary segmentation scores.

Per-patch class scores from a vision-language model are refined by label
propagation over a sparse appearance/position graph spanning all sliding
windows of an image, then optionally at pixel resolution over a color
neighborhood graph. Includes mIoU / Boundary IoU evaluation and a bit-exact
tensor container for exchanging features with extraction tools.
"""

from .graph import (
    GraphConstructionError,
    NormalizedAdjacency,
    PatchGraphConfig,
    PixelGraphConfig,
    SparseAdjacency,
    build_patch_graph,
    build_pixel_graph,
    symmetric_normalize,
)
from .grids import (
    FeatureGrid,
    LabelMap,
    ScoreGrid,
    bilinear_resize,
    l2_normalize,
    label_downsample,
    label_upsample_nearest,
    srgb_to_lab,
)
from .metrics import (
    BoundaryParams,
    ConfusionAccumulator,
    boundary_iou,
    miou,
    oracle_patch_resolution,
)
from .pipeline import (
    ClassEmbeddings,
    PipelineConfig,
    affinity_baseline,
    argmax_labels,
    ensemble_scores,
    initial_window_scores,
    propagate_patch_scores,
    refine_pixel_scores,
    vlm_scores,
)
from .solver import (
    ConvergenceError,
    PropagationConfig,
    conjugate_gradient,
    lp_iterate,
    lp_solve_cg,
    quadratic_criterion,
)
from .tensorio import (
    TensorChecksumError,
    TensorHeaderError,
    TensorIOError,
    TensorMagicError,
    TensorVersionError,
    read_tensor,
    write_tensor,
)
from .windows import (
    WindowPlan,
    WindowPlanError,
    assemble_joint,
    combine_windows,
    patch_centers,
    plan_windows,
    resize_shorter_side,
    split_joint,
    whole_image_plan,
)

__version__ = "0.1.0"
