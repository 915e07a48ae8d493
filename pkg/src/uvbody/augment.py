"""Label-preserving sample augmentation: translate, rotate, flip, jitter.

The image is warped with a 2D similarity; color jitter touches pixels only.
The ground-truth map is never warped as an image (UV coordinates are
body-intrinsic, not image-space): instead vertices are resampled from the
map, pushed through the same 2D transform (depth is view-axis aligned, so
in-plane rotation leaves z untouched), mirrored through the model's vertex
permutation on flips, and re-rendered. An identity transform short-circuits,
so jitter-only augmentation leaves the map bitwise unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .bodymodel import BodyModel
from .errors import ValidationError
from .uvmap import PositionMap, render_position_map, resample_vertices


@dataclass(frozen=True)
class AugmentParams:
    translate_px: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rotate_deg: float = 0.0
    flip: bool = False
    jitter_gain: np.ndarray = field(default_factory=lambda: np.ones(3))
    jitter_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        t = np.ascontiguousarray(self.translate_px, dtype=np.float64).reshape(2)
        g = np.ascontiguousarray(self.jitter_gain, dtype=np.float64).reshape(3)
        o = np.ascontiguousarray(self.jitter_offset, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(t)) and np.isfinite(self.rotate_deg)):
            raise ValidationError("augment parameters must be finite")
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise ValidationError("jitter gains must be finite and positive")
        if not np.all(np.isfinite(o)):
            raise ValidationError("jitter offsets must be finite")
        object.__setattr__(self, "translate_px", t)
        object.__setattr__(self, "jitter_gain", g)
        object.__setattr__(self, "jitter_offset", o)

    @property
    def is_geometric_identity(self) -> bool:
        return (
            not self.flip
            and self.rotate_deg == 0.0
            and np.all(self.translate_px == 0.0)
        )

    @classmethod
    def random(cls, rng: np.random.Generator, allow_flip: bool = True) -> "AugmentParams":
        return cls(
            translate_px=rng.uniform(-16, 16, size=2),
            rotate_deg=float(rng.uniform(-30, 30)),
            flip=bool(allow_flip and rng.random() < 0.5),
            jitter_gain=rng.uniform(0.8, 1.2, size=3),
            jitter_offset=rng.uniform(-16, 16, size=3),
        )


@dataclass(frozen=True)
class Sample:
    """RGB image, its aligned ground-truth map and a provenance record."""

    image: np.ndarray          # (H, W, 3) uint8
    gt_map: PositionMap
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        img = np.ascontiguousarray(self.image, dtype=np.uint8)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValidationError("image must be (H, W, 3) uint8")
        if img.shape[0] != img.shape[1] or img.shape[0] != self.gt_map.resolution:
            raise ValidationError("image side must equal the map resolution")
        object.__setattr__(self, "image", img)


def _transform_2d(points_xy: np.ndarray, p: AugmentParams, out_size: int) -> np.ndarray:
    """translate, then rotate about the crop center, then flip in x."""
    c = out_size / 2.0
    xy = points_xy + p.translate_px
    if p.rotate_deg != 0.0:
        phi = np.deg2rad(p.rotate_deg)
        rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
        xy = (xy - c) @ rot.T + c
    if p.flip:
        xy = xy.copy()
        xy[:, 0] = out_size - xy[:, 0]
    return xy


def _warp_image(image: np.ndarray, p: AugmentParams) -> np.ndarray:
    out_size = image.shape[0]
    # Build the forward 2x3 affine in pixel-center coordinates (cv2 indexes
    # pixel centers at integers, our continuous frame puts them at i+0.5).
    c = out_size / 2.0 - 0.5
    phi = np.deg2rad(p.rotate_deg)
    rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    a = rot.copy()
    b = rot @ (p.translate_px - c) + c
    if p.flip:
        a[0, :] *= -1
        b[0] = (out_size - 1.0) - b[0]
    mat = np.hstack([a, b[:, None]])
    return cv2.warpAffine(
        image,
        mat,
        (out_size, out_size),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=(0, 0, 0),
    )


def _jitter(image: np.ndarray, p: AugmentParams) -> np.ndarray:
    out = image.astype(np.float64) * p.jitter_gain + p.jitter_offset
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def augment(sample: Sample, p: AugmentParams, model: BodyModel) -> Sample:
    """Apply the 2D similarity to image and labels consistently."""
    if p.flip and model.mirror_perm is None:
        raise ValidationError("flip augmentation requires a model with mirror_perm")

    if p.is_geometric_identity:
        image = _jitter(sample.image, p)
        gt_map = PositionMap(
            positions=sample.gt_map.positions.copy(), valid=sample.gt_map.valid.copy()
        )
    else:
        image = _jitter(_warp_image(sample.image, p), p)
        out_size = sample.gt_map.resolution
        vertices = resample_vertices(model.uv_layout, sample.gt_map)
        vertices = vertices.copy()
        vertices[:, :2] = _transform_2d(vertices[:, :2], p, out_size)
        if p.flip:
            assert model.mirror_perm is not None
            vertices = vertices[model.mirror_perm]
        gt_map = render_position_map(model.uv_layout, vertices, out_size)

    meta = dict(sample.meta)
    meta["augment"] = {
        "translate_px": p.translate_px.tolist(),
        "rotate_deg": p.rotate_deg,
        "flip": p.flip,
        "jitter_gain": p.jitter_gain.tolist(),
        "jitter_offset": p.jitter_offset.tolist(),
    }
    return Sample(image=image, gt_map=gt_map, meta=meta)
