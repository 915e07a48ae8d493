"""uvbody: UV position-map toolkit for parametric 3D body models.

Evaluate a SMPL-like body model, encode meshes as UV position maps and
decode them back, build loss weight masks, compute the map losses with
analytic gradients, fit model parameters to resampled vertices, and score
predictions with the standard joint/surface metrics.
"""

__version__ = "0.1.0"

from .augment import AugmentParams, Sample, augment
from .bodymodel import (
    BodyModel,
    Joints,
    Mesh,
    PoseParams,
    ShapeParams,
    forward,
    forward_with_jacobians,
    regress_joints,
    validate_model,
)
from .camera import (
    CameraExtrinsics,
    CropSpec,
    align_orthographic,
    alignment_root_depth_px,
    auto_crop,
    invert_orthographic,
    make_ground_truth,
)
from .errors import DegenerateInputError, LoadError, UVBodyError, ValidationError
from .fitting import (
    FitConfig,
    FitResult,
    SimilarityTransform,
    fit_from_map,
    fit_vertices,
    umeyama,
)
from .losses import (
    JointLossTerm,
    LossBreakdown,
    LossConfig,
    joint_loss,
    loss_grad,
    total_loss,
    total_variation,
    weighted_l1,
)
from .metrics import (
    MetricReport,
    evaluate_batch,
    mpjpe,
    mpjpe_pa,
    surface_error,
)
from .modelio import load_model, save_model
from .study import StudyReport, resolution_study, sample_params
from .synth import JOINT_NAMES, PART_NAMES, synth_model
from .uvmap import (
    PositionMap,
    UVLayout,
    export_png16,
    load_uvpm,
    render_position_map,
    resample_matrix,
    resample_vertices,
    save_uvpm,
    validate_layout,
)
from .weightmask import WeightMask, WeightMaskConfig, build_weight_mask, joint_uv_locations

__all__ = [
    "AugmentParams",
    "BodyModel",
    "CameraExtrinsics",
    "CropSpec",
    "DegenerateInputError",
    "FitConfig",
    "FitResult",
    "JOINT_NAMES",
    "JointLossTerm",
    "Joints",
    "LoadError",
    "LossBreakdown",
    "LossConfig",
    "Mesh",
    "MetricReport",
    "PART_NAMES",
    "PoseParams",
    "PositionMap",
    "Sample",
    "ShapeParams",
    "SimilarityTransform",
    "StudyReport",
    "UVBodyError",
    "UVLayout",
    "ValidationError",
    "WeightMask",
    "WeightMaskConfig",
    "align_orthographic",
    "alignment_root_depth_px",
    "augment",
    "auto_crop",
    "build_weight_mask",
    "evaluate_batch",
    "export_png16",
    "fit_from_map",
    "fit_vertices",
    "forward",
    "forward_with_jacobians",
    "invert_orthographic",
    "joint_loss",
    "joint_uv_locations",
    "load_model",
    "load_uvpm",
    "loss_grad",
    "make_ground_truth",
    "mpjpe",
    "mpjpe_pa",
    "regress_joints",
    "render_position_map",
    "resample_matrix",
    "resample_vertices",
    "resolution_study",
    "sample_params",
    "save_model",
    "save_uvpm",
    "surface_error",
    "synth_model",
    "total_loss",
    "total_variation",
    "umeyama",
    "validate_layout",
    "validate_model",
    "weighted_l1",
]
