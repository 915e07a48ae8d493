"""Joint and surface evaluation metrics, reported in millimeters.

All inputs are meters; conversion to millimeters happens here, at the
reporting boundary. Hip alignment for the plain joint error comes in two
flavors because published numbers differ: ``depth_only`` translates the
prediction along z until the root depths agree (x, y are image-aligned),
``full_root`` translates in all three axes. The Procrustes-aligned error
uses the similarity fit (scale on by default, a flag turns it off).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bodymodel import BodyModel, Joints, regress_joints
from .errors import ValidationError
from .fitting import umeyama
from .uvmap import PositionMap, resample_vertices

MPJPE_MODES = ("depth_only", "full_root")
SURFACE_MODES = ("raw", "root_depth")


def _joint_array(j: Joints | np.ndarray) -> np.ndarray:
    arr = j.positions if isinstance(j, Joints) else np.asarray(j, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError("joints must be (J, 3)")
    return arr


def mpjpe(
    pred: Joints | np.ndarray,
    gt: Joints | np.ndarray,
    root: int,
    mode: str = "depth_only",
    subset: np.ndarray | None = None,
) -> float:
    """Mean per-joint position error in mm after root alignment."""
    p = _joint_array(pred)
    g = _joint_array(gt)
    if p.shape != g.shape:
        raise ValidationError("joint counts differ")
    if not 0 <= root < p.shape[0]:
        raise ValidationError("root index out of range")
    if mode not in MPJPE_MODES:
        raise ValidationError(f"mode must be one of {MPJPE_MODES}")
    p = p.copy()
    if mode == "depth_only":
        p[:, 2] += g[root, 2] - p[root, 2]
    else:
        p += g[root] - p[root]
    if subset is not None:
        subset = np.asarray(subset, dtype=np.int64)
        p = p[subset]
        g = g[subset]
    return float(np.linalg.norm(p - g, axis=1).mean() * 1000.0)


def mpjpe_pa(
    pred: Joints | np.ndarray,
    gt: Joints | np.ndarray,
    with_scale: bool = True,
    subset: np.ndarray | None = None,
) -> float:
    """Mean joint error in mm after Procrustes (similarity) alignment."""
    p = _joint_array(pred)
    g = _joint_array(gt)
    if p.shape != g.shape:
        raise ValidationError("joint counts differ")
    if subset is not None:
        subset = np.asarray(subset, dtype=np.int64)
        p = p[subset]
        g = g[subset]
    tf = umeyama(p, g)
    if not with_scale:
        # rigid variant: re-solve translation for the unscaled rotation
        mp = p.mean(axis=0)
        mg = g.mean(axis=0)
        aligned = (p - mp) @ tf.rotation.T + mg
    else:
        aligned = tf.apply(p)
    return float(np.linalg.norm(aligned - g, axis=1).mean() * 1000.0)


def surface_error(
    pred_vertices: np.ndarray,
    gt_vertices: np.ndarray,
    mode: str = "raw",
    pred_root_z: float | None = None,
    gt_root_z: float | None = None,
) -> float:
    """Mean per-vertex distance in mm, by index correspondence."""
    p = np.asarray(pred_vertices, dtype=np.float64)
    g = np.asarray(gt_vertices, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValidationError("vertex arrays must match and be (N, 3)")
    if mode not in SURFACE_MODES:
        raise ValidationError(f"mode must be one of {SURFACE_MODES}")
    if mode == "root_depth":
        if pred_root_z is None or gt_root_z is None:
            raise ValidationError("root_depth mode needs pred_root_z and gt_root_z")
        p = p.copy()
        p[:, 2] += gt_root_z - pred_root_z
    return float(np.linalg.norm(p - g, axis=1).mean() * 1000.0)


@dataclass(frozen=True)
class SampleMetrics:
    mpjpe_mm: float
    mpjpe_pa_mm: float
    surface_mm: float


@dataclass(frozen=True)
class MetricReport:
    mpjpe_mm: float
    mpjpe_pa_mm: float
    surface_mm: float
    per_joint_mm: np.ndarray
    sample_count: int
    mpjpe_mode: str
    surface_mode: str
    pa_with_scale: bool
    samples: tuple[SampleMetrics, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "mpjpe_pa_mm": self.mpjpe_pa_mm,
            "surface_mm": self.surface_mm,
            "per_joint_mm": self.per_joint_mm.tolist(),
            "sample_count": self.sample_count,
            "mpjpe_mode": self.mpjpe_mode,
            "surface_mode": self.surface_mode,
            "pa_with_scale": self.pa_with_scale,
        }


def _as_vertices(item, model: BodyModel) -> np.ndarray:
    if isinstance(item, PositionMap):
        return resample_vertices(model.uv_layout, item)
    arr = np.asarray(item, dtype=np.float64)
    if arr.shape != (model.num_vertices, 3):
        raise ValidationError("vertex array does not match the model")
    return arr


def evaluate_batch(
    predictions: list,
    ground_truths: list,
    model: BodyModel,
    joint_subset: np.ndarray | None = None,
    mpjpe_mode: str = "depth_only",
    surface_mode: str = "raw",
    pa_with_scale: bool = True,
) -> MetricReport:
    """Per-sample metrics (position maps or vertex arrays) and batch means."""
    if len(predictions) == 0 or len(predictions) != len(ground_truths):
        raise ValidationError("need equal, nonempty prediction/ground-truth batches")
    root = model.root_joint
    subset = (
        np.arange(model.num_joints)
        if joint_subset is None
        else np.asarray(joint_subset, dtype=np.int64)
    )
    rows = []
    per_joint = np.zeros(subset.size)
    for pred_item, gt_item in zip(predictions, ground_truths):
        pv = _as_vertices(pred_item, model)
        gv = _as_vertices(gt_item, model)
        pj = regress_joints(model, pv).positions
        gj = regress_joints(model, gv).positions
        rows.append(
            SampleMetrics(
                mpjpe_mm=mpjpe(pj, gj, root, mpjpe_mode, subset),
                mpjpe_pa_mm=mpjpe_pa(pj, gj, pa_with_scale, subset),
                surface_mm=surface_error(
                    pv, gv, surface_mode,
                    pred_root_z=float(pj[root, 2]), gt_root_z=float(gj[root, 2]),
                ),
            )
        )
        aligned = pj.copy()
        if mpjpe_mode == "depth_only":
            aligned[:, 2] += gj[root, 2] - aligned[root, 2]
        else:
            aligned += gj[root] - aligned[root]
        per_joint += np.linalg.norm(aligned[subset] - gj[subset], axis=1) * 1000.0

    n = len(rows)
    return MetricReport(
        mpjpe_mm=float(np.mean([r.mpjpe_mm for r in rows])),
        mpjpe_pa_mm=float(np.mean([r.mpjpe_pa_mm for r in rows])),
        surface_mm=float(np.mean([r.surface_mm for r in rows])),
        per_joint_mm=per_joint / n,
        sample_count=n,
        mpjpe_mode=mpjpe_mode,
        surface_mode=surface_mode,
        pa_with_scale=pa_with_scale,
        samples=tuple(rows),
    )
