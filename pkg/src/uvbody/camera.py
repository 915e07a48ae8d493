"""Orthographic alignment of world meshes to image crops.

The aligned frame is the one the position maps store: x, y in output pixel
units over [0, out_size], z root-relative and expressed in the same pixel
scale, so all three channels share one unit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bodymodel import BodyModel
from .errors import ValidationError
from .uvmap import PositionMap, render_position_map


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera rotation and translation."""

    rotation: np.ndarray  # (3, 3), proper orthonormal
    translation: np.ndarray  # (3,), meters

    def __post_init__(self) -> None:
        rot = np.ascontiguousarray(self.rotation, dtype=np.float64)
        t = np.ascontiguousarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValidationError("rotation must be 3x3")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValidationError("extrinsic rotation must have det = +1 within 1e-9")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9:
            raise ValidationError("extrinsic rotation must be orthonormal")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraExtrinsics":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CropSpec:
    """Square crop in orthographic pixel space.

    ``center_px`` is the crop center in scaled pixel coordinates
    (camera meters times ``scale``); the crop spans out_size pixels.
    """

    center_px: np.ndarray  # (2,)
    scale: float           # pixels per meter
    out_size: int = 256

    def __post_init__(self) -> None:
        c = np.ascontiguousarray(self.center_px, dtype=np.float64).reshape(2)
        if self.scale <= 0:
            raise ValidationError("scale must be positive")
        if self.out_size < 8:
            raise ValidationError("out_size must be >= 8")
        object.__setattr__(self, "center_px", c)


def auto_crop(
    camera_vertices: np.ndarray,
    out_size: int = 256,
    margin: float = 0.15,
) -> CropSpec:
    """Tight x,y bounding box expanded by ``margin`` per side, scaled so the
    expanded box fills the output square."""
    v = np.asarray(camera_vertices, dtype=np.float64)
    lo = v[:, :2].min(axis=0)
    hi = v[:, :2].max(axis=0)
    extent = float(max(hi - lo)) * (1.0 + 2.0 * margin)
    if extent <= 0:
        raise ValidationError("mesh has no lateral extent")
    scale = out_size / extent
    center = 0.5 * (lo + hi) * scale
    return CropSpec(center_px=center, scale=scale, out_size=out_size)


def _root_depth_px(vertices_cam: np.ndarray, regressor: np.ndarray, root: int, scale: float) -> float:
    joints = regressor @ vertices_cam
    return float(joints[root, 2] * scale)


def align_orthographic(
    vertices_world: np.ndarray,
    extrinsics: CameraExtrinsics,
    crop: CropSpec,
    root: int,
    regressor: np.ndarray,
) -> np.ndarray:
    """Map world vertices into the cropped orthographic pixel frame.

    x, y: camera coordinates scaled to pixels and shifted so the crop maps
    to [0, out_size]^2; z: depth relative to the regressed root joint, in
    the same pixel scale.
    """
    v = np.asarray(vertices_world, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise ValidationError("vertices must be (N, 3)")
    if not np.all(np.isfinite(v)):
        raise ValidationError("vertices contain non-finite entries")
    regressor = np.asarray(regressor, dtype=np.float64)
    if not 0 <= root < regressor.shape[0]:
        raise ValidationError("root joint index out of range")
    cam = extrinsics.apply(v)
    out = cam * crop.scale
    out[:, :2] += crop.out_size / 2.0 - crop.center_px
    out[:, 2] -= _root_depth_px(cam, regressor, root, crop.scale)
    return out


def alignment_root_depth_px(
    vertices_world: np.ndarray,
    extrinsics: CameraExtrinsics,
    crop: CropSpec,
    root: int,
    regressor: np.ndarray,
) -> float:
    """The scaled root depth that align_orthographic subtracted."""
    cam = extrinsics.apply(np.asarray(vertices_world, dtype=np.float64))
    return _root_depth_px(cam, np.asarray(regressor, dtype=np.float64), root, crop.scale)


def invert_orthographic(
    aligned: np.ndarray,
    extrinsics: CameraExtrinsics,
    crop: CropSpec,
    root_depth_px: float,
) -> np.ndarray:
    """Undo align_orthographic given the dropped absolute root depth."""
    a = np.asarray(aligned, dtype=np.float64).copy()
    a[:, 2] += root_depth_px
    a[:, :2] -= crop.out_size / 2.0 - crop.center_px
    cam = a / crop.scale
    return (cam - extrinsics.translation) @ extrinsics.rotation


def make_ground_truth(
    vertices_world: np.ndarray,
    extrinsics: CameraExtrinsics,
    crop: CropSpec,
    model: BodyModel,
) -> PositionMap:
    """Aligned position map at the crop resolution (the training target)."""
    aligned = align_orthographic(
        vertices_world, extrinsics, crop, model.root_joint, model.joint_regressor
    )
    return render_position_map(model.uv_layout, aligned, crop.out_size)
