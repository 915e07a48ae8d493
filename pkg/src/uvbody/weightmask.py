"""Per-texel loss weights: inverse part area with optional joint emphasis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bodymodel import BodyModel
from .errors import DegenerateInputError, ValidationError
from .uvmap import UVLayout

_REFERENCE_RESOLUTION = 256


@dataclass(frozen=True)
class WeightMaskConfig:
    """Joint emphasis settings.

    ``joint_radius_texels`` is expressed at resolution 256 and scaled
    proportionally for other resolutions; ``joint_gain`` multiplies the
    base weight inside that radius.
    """

    joint_radius_texels: float = 8.0
    joint_gain: float = 4.0

    def __post_init__(self) -> None:
        if self.joint_radius_texels < 0:
            raise ValidationError("joint_radius_texels must be >= 0")
        if self.joint_gain < 1:
            raise ValidationError("joint_gain must be >= 1")


@dataclass(frozen=True)
class WeightMask:
    """Nonnegative texel weights (mean 1 over valid texels) and part ids.

    ``part_id`` uses ``num_parts`` as the background sentinel on invalid
    texels; weights there are exactly zero.
    """

    weights: np.ndarray   # (H, W) float64
    part_id: np.ndarray   # (H, W) int64, num_parts = background
    num_parts: int

    @property
    def valid(self) -> np.ndarray:
        return self.part_id < self.num_parts


def build_weight_mask(
    layout: UVLayout,
    part_labels: np.ndarray,
    joint_uvs: np.ndarray | None,
    resolution: int,
    cfg: WeightMaskConfig = WeightMaskConfig(),
) -> WeightMask:
    """Base weight of a texel in part k is (valid texels / P) / area(k),
    joint-adjacent texels are multiplied by the gain, and the result is
    renormalized to mean one over valid texels.

    With ``joint_gain == 1`` each part contributes the same total weight.
    """
    part_labels = np.asarray(part_labels, dtype=np.int64)
    if part_labels.shape != (layout.num_faces,):
        raise ValidationError("part_labels must have one entry per face")
    num_parts = int(part_labels.max()) + 1 if part_labels.size else 0

    grid = layout.raster_grid(resolution)
    r = grid.resolution
    part_map = np.full((r, r), num_parts, dtype=np.int64)
    part_map[grid.tex_rows, grid.tex_cols] = part_labels[grid.face]

    areas = np.bincount(part_labels[grid.face], minlength=num_parts)
    if np.any(areas == 0):
        missing = int(np.nonzero(areas == 0)[0][0])
        raise DegenerateInputError(
            f"part {missing} covers no texels at resolution {r}"
        )
    n_valid = grid.tex_rows.size

    weights = np.zeros((r, r), dtype=np.float64)
    base = (n_valid / num_parts) / areas
    weights[grid.tex_rows, grid.tex_cols] = base[part_labels[grid.face]]

    if joint_uvs is not None and cfg.joint_gain > 1 and cfg.joint_radius_texels > 0:
        joint_uvs = np.asarray(joint_uvs, dtype=np.float64)
        radius = cfg.joint_radius_texels * r / _REFERENCE_RESOLUTION
        jx = joint_uvs[:, 0] * r - 0.5
        jy = joint_uvs[:, 1] * r - 0.5
        cols = grid.tex_cols[:, None] - jx[None, :]
        rows = grid.tex_rows[:, None] - jy[None, :]
        near = np.any(cols**2 + rows**2 <= radius**2, axis=1)
        sel = (grid.tex_rows[near], grid.tex_cols[near])
        weights[sel] *= cfg.joint_gain

    mean = weights[grid.tex_rows, grid.tex_cols].mean()
    weights /= mean
    return WeightMask(weights=weights, part_id=part_map, num_parts=num_parts)


def joint_uv_locations(model: BodyModel) -> np.ndarray:
    """UV location per joint: the uv vertex nearest each rest joint in 3D."""
    layout = model.uv_layout
    uv3d = model.template_vertices[layout.uv_to_vertex]
    joints = model.rest_joints
    out = np.empty((joints.shape[0], 2))
    for j, pos in enumerate(joints):
        d = np.linalg.norm(uv3d - pos, axis=1)
        out[j] = layout.uv_coords[int(np.argmin(d))]
    return out
