"""Training losses over position maps, with analytic subgradients.

All losses are plain sums over texels (any normalization lives in the
weight mask, whose mean over valid texels is one). The per-texel vector
difference is aggregated with the 1-norm over (x, y, z), which keeps every
term piecewise linear; at nondifferentiable points the subgradient zero is
chosen. Reductions use numpy's fixed pairwise summation, so results are
deterministic for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bodymodel import BodyModel, Joints
from .errors import ValidationError
from .uvmap import PositionMap, resample_matrix
from .weightmask import WeightMask


@dataclass(frozen=True)
class JointLossTerm:
    """Optional joint-consistency term for total_loss.

    Joints are regressed from vertices resampled from each map; the term is
    the mean euclidean joint distance over ``subset``.
    """

    model: BodyModel
    subset: np.ndarray

    def __post_init__(self) -> None:
        subset = np.asarray(self.subset, dtype=np.int64).reshape(-1)
        if subset.size == 0:
            raise ValidationError("joint subset must not be empty")
        if subset.min() < 0 or subset.max() >= self.model.num_joints:
            raise ValidationError("joint subset index out of range")
        object.__setattr__(self, "subset", subset)


@dataclass(frozen=True)
class LossConfig:
    """Weights and structure for the total loss."""

    mask: WeightMask
    tv_weight: float = 1e-3                  # lambda
    part_alphas: np.ndarray | None = None    # per-part TV multipliers, default 1
    joint_term: JointLossTerm | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.tv_weight) or self.tv_weight < 0:
            raise ValidationError("tv_weight must be finite and >= 0")
        alphas = self.part_alphas
        if alphas is None:
            alphas = np.ones(self.mask.num_parts)
        alphas = np.asarray(alphas, dtype=np.float64).reshape(-1)
        if alphas.shape[0] != self.mask.num_parts:
            raise ValidationError(
                f"need {self.mask.num_parts} part alphas, got {alphas.shape[0]}"
            )
        if np.any(alphas < 0):
            raise ValidationError("part alphas must be >= 0")
        object.__setattr__(self, "part_alphas", alphas)


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    tv: float
    joint: float | None
    total: float

    def to_dict(self) -> dict:
        return {"l1": self.l1, "tv": self.tv, "joint": self.joint, "total": self.total}


def _check_pair(pred: PositionMap, gt: PositionMap) -> None:
    if pred.positions.shape != gt.positions.shape:
        raise ValidationError("position map shapes differ")
    if not np.array_equal(pred.valid, gt.valid):
        raise ValidationError("position map validity masks differ")


def weighted_l1(pred: PositionMap, gt: PositionMap, mask: WeightMask) -> float:
    """Sum over valid texels of weight * |pred - gt|_1 over channels."""
    _check_pair(pred, gt)
    if mask.weights.shape != pred.valid.shape:
        raise ValidationError("weight mask resolution mismatch")
    diff = np.abs(pred.positions - gt.positions).sum(axis=2)
    return float((mask.weights * diff)[pred.valid].sum())


def _tv_pairs(part_id: np.ndarray, num_parts: int):
    """Index pairs of the included vertical and horizontal differences."""
    valid = part_id < num_parts
    v_ok = valid[1:, :] & valid[:-1, :] & (part_id[1:, :] == part_id[:-1, :])
    h_ok = valid[:, 1:] & valid[:, :-1] & (part_id[:, 1:] == part_id[:, :-1])
    return v_ok, h_ok


def total_variation(pmap: PositionMap, part_id: np.ndarray, alphas: np.ndarray) -> float:
    """Per-part TV: absolute forward differences within each part.

    Differences crossing part boundaries or validity edges are excluded.
    """
    part_id = np.asarray(part_id, dtype=np.int64)
    if part_id.shape != pmap.valid.shape:
        raise ValidationError("part_id shape mismatch")
    num_parts = int(alphas.shape[0])
    present = np.unique(part_id[pmap.valid])
    if present.size and present.max() >= num_parts:
        raise ValidationError("part alphas missing for a present part")
    v_ok, h_ok = _tv_pairs(part_id, num_parts)
    p = pmap.positions
    dv = np.abs(p[1:, :] - p[:-1, :]).sum(axis=2)
    dh = np.abs(p[:, 1:] - p[:, :-1]).sum(axis=2)
    av = alphas[np.where(v_ok, part_id[1:, :], 0)]
    ah = alphas[np.where(h_ok, part_id[:, 1:], 0)]
    return float((dv * av)[v_ok].sum() + (dh * ah)[h_ok].sum())


def joint_loss(
    pmap: PositionMap,
    model: BodyModel,
    gt_joints: Joints | np.ndarray,
    subset: np.ndarray,
) -> float:
    """Mean euclidean distance between joints regressed from the resampled
    map and the reference joints, over ``subset``."""
    term = JointLossTerm(model=model, subset=subset)
    gt = gt_joints.positions if isinstance(gt_joints, Joints) else np.asarray(gt_joints, dtype=np.float64)
    if gt.shape != (model.num_joints, 3):
        raise ValidationError(f"gt joints must be ({model.num_joints}, 3)")
    pred = _map_joints(pmap, model)
    d = np.linalg.norm(pred[term.subset] - gt[term.subset], axis=1)
    return float(d.mean())


def _map_joints(pmap: PositionMap, model: BodyModel) -> np.ndarray:
    smp = resample_matrix(model.uv_layout, pmap.resolution)
    vertices = smp @ pmap.positions.reshape(-1, 3)
    return model.joint_regressor @ vertices


def total_loss(pred: PositionMap, gt: PositionMap, cfg: LossConfig) -> LossBreakdown:
    """l1 + lambda * tv (+ joint term when configured)."""
    _check_pair(pred, gt)
    l1 = weighted_l1(pred, gt, cfg.mask)
    tv = total_variation(pred, cfg.mask.part_id, cfg.part_alphas)
    joint = None
    total = l1 + cfg.tv_weight * tv
    if cfg.joint_term is not None:
        term = cfg.joint_term
        gt_joints = _map_joints(gt, term.model)
        pred_joints = _map_joints(pred, term.model)
        d = np.linalg.norm(pred_joints[term.subset] - gt_joints[term.subset], axis=1)
        joint = float(d.mean())
        total += joint
    return LossBreakdown(l1=l1, tv=tv, joint=joint, total=float(total))


def loss_grad(pred: PositionMap, gt: PositionMap, cfg: LossConfig) -> np.ndarray:
    """Subgradient of total_loss with respect to the predicted map.

    Zero on invalid texels; sign(0) is taken as 0 everywhere.
    """
    _check_pair(pred, gt)
    valid = pred.valid
    grad = np.zeros_like(pred.positions)

    sgn = np.sign(pred.positions - gt.positions)
    grad += cfg.mask.weights[:, :, None] * sgn
    grad[~valid] = 0.0

    v_ok, h_ok = _tv_pairs(cfg.mask.part_id, cfg.mask.num_parts)
    p = pred.positions
    av = cfg.part_alphas[np.where(v_ok, cfg.mask.part_id[1:, :], 0)] * v_ok
    ah = cfg.part_alphas[np.where(h_ok, cfg.mask.part_id[:, 1:], 0)] * h_ok
    sv = np.sign(p[1:, :] - p[:-1, :]) * (cfg.tv_weight * av)[:, :, None]
    sh = np.sign(p[:, 1:] - p[:, :-1]) * (cfg.tv_weight * ah)[:, :, None]
    grad[1:, :] += sv
    grad[:-1, :] -= sv
    grad[:, 1:] += sh
    grad[:, :-1] -= sh

    if cfg.joint_term is not None:
        term = cfg.joint_term
        gt_joints = _map_joints(gt, term.model)
        pred_joints = _map_joints(pred, term.model)
        diff = pred_joints[term.subset] - gt_joints[term.subset]
        norms = np.linalg.norm(diff, axis=1)
        unit = np.zeros_like(diff)
        nz = norms > 0
        unit[nz] = diff[nz] / norms[nz, None]
        g_joints = np.zeros((term.model.num_joints, 3))
        np.add.at(g_joints, term.subset, unit / term.subset.size)
        g_vertices = term.model.joint_regressor.T @ g_joints
        smp = resample_matrix(term.model.uv_layout, pred.resolution)
        grad += (smp.T @ g_vertices).reshape(grad.shape)

    grad[~valid] = 0.0
    return grad
