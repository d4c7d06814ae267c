"""Visual explanation of deep metric-learning models by activation
decomposition: overall and point-specific activation maps, Grad-CAM
comparisons, weakly supervised localization, cross-view orientation
estimation, and interactive retrieval over a minimal CNN inference core.
"""

from .decompose import (
    ActivationMap,
    DecompositionResult,
    SimilarityReport,
    cam,
    decompose_pair,
    overall_map,
    pixel_to_cell,
    point_specific_map,
    similarity_report,
)
from .errors import MetricLensError
from .evaluate import (
    AngleDeg,
    BBox,
    angle_error_histogram,
    estimate_orientation,
    iou,
    localization_accuracy,
    pixel_to_angle,
    segment_and_box,
    wrap_angle_error,
)
from .gradcam import gradcam_classification, gradcam_metric, l2norm_jacobian
from .kernels import COMPILED, backend
from .linearize import (
    LinearizedHead,
    feature_hash,
    gap_matrix,
    gmp_mask,
    linearize_head,
    relu_mask,
)
from .nn import (
    ForwardTrace,
    LayerSpec,
    ModelManifest,
    conv2d,
    forward,
    global_pool,
    head_forward,
)
from .retrieval import (
    EmbeddingIndex,
    build_index,
    load_index,
    partial_feature,
    pixel_feature,
    retrieve_interactive,
    retrieve_interactive_pixel,
    retrieve_overall,
    save_index,
)
from .tensor import bilinear_resize, inner, l2_norm, read_tensor, write_pgm, write_tensor

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
