"""Recover pose/shape parameters plus a similarity transform from vertices.

The optimization alternates a closed-form weighted similarity fit (Umeyama,
with reflection correction) against Levenberg-Marquardt steps on the pose
and shape parameters, which keeps the seven gauge degrees of freedom out of
the nonlinear solve. Residuals are sqrt(w_i) * (s R V_i + t - target_i)
stacked over vertices, with an L2 prior on the parameters appended; damping
is multiplicative (x10 on reject, x0.5 on accept), so the cost is monotone
non-increasing across accepted steps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bodymodel import BodyModel, PoseParams, ShapeParams, forward, forward_with_jacobians
from .errors import DegenerateInputError, ValidationError
from .rotation import rodrigues, wrap_axis_angle
from .uvmap import PositionMap, resample_vertices


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation, rotation proper."""

    scale: float
    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        rot = np.ascontiguousarray(self.rotation, dtype=np.float64)
        t = np.ascontiguousarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValidationError("rotation must be 3x3")
        if self.scale <= 0:
            raise ValidationError("scale must be positive")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValidationError("rotation must have det = +1 within 1e-9")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9:
            raise ValidationError("rotation must be orthonormal within 1e-9")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(scale=1.0, rotation=np.eye(3), translation=np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class FitConfig:
    max_outer_iters: int = 60
    lm_iters: int = 3
    lm_damping_init: float = 1e-3
    pose_prior_weight: float = 1e-3
    shape_prior_weight: float = 1e-4
    convergence_tol: float = 1e-6     # relative residual change
    vertex_weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.max_outer_iters < 1 or self.lm_iters < 1:
            raise ValidationError("iteration counts must be >= 1")
        if self.lm_damping_init <= 0 or self.convergence_tol <= 0:
            raise ValidationError("damping and tolerance must be positive")
        if self.pose_prior_weight < 0 or self.shape_prior_weight < 0:
            raise ValidationError("prior weights must be >= 0")


@dataclass(frozen=True)
class FitResult:
    pose: PoseParams
    shape: ShapeParams
    transform: SimilarityTransform
    rmse_m: float
    iters: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "theta": self.pose.axis_angle.tolist(),
            "beta": self.shape.coeffs.tolist(),
            "s": self.transform.scale,
            "R": self.transform.rotation.tolist(),
            "t": self.transform.translation.tolist(),
            "rmse_mm": self.rmse_m * 1000.0,
            "iters": self.iters,
            "converged": self.converged,
        }


def umeyama(x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> SimilarityTransform:
    """Weighted least-squares similarity aligning x to y.

    Minimizes sum_i w_i ||s R x_i + t - y_i||^2 over proper rotations;
    a reflection in the raw solution is corrected through the sign of the
    smallest singular value.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValidationError("point sets must both be (N, 3)")
    n = x.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n or np.any(w < 0):
            raise ValidationError("weights must be nonnegative, one per point")
        total = w.sum()
        if total <= 0:
            raise DegenerateInputError("all point weights are zero")
        w = w / total
    if np.count_nonzero(w) < 3:
        raise DegenerateInputError("need at least 3 weighted points")

    mx = w @ x
    my = w @ y
    dx = x - mx
    dy = y - my
    cov = (w[:, None] * dy).T @ dx
    var_x = float(np.sum(w * np.sum(dx * dx, axis=1)))
    if var_x < 1e-18:
        raise DegenerateInputError("source points have no spread")

    u, d, vt = np.linalg.svd(cov)
    if d[1] <= 1e-9 * max(d[0], 1e-300):
        raise DegenerateInputError("points are collinear")
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float((d * sign).sum() / var_x)
    if scale <= 0:
        raise DegenerateInputError("degenerate configuration: nonpositive scale")
    t = my - scale * rot @ mx
    return SimilarityTransform(scale=scale, rotation=rot, translation=t)


@dataclass
class _LMState:
    """One LM iterate: parameters, transform, and cached evaluation."""

    pose: np.ndarray
    shape: np.ndarray
    tf: SimilarityTransform
    vertices: np.ndarray
    resid: np.ndarray
    cost: float


def _transform_with_increment(
    tf: SimilarityTransform, log_s: float, omega: np.ndarray, t: np.ndarray
) -> SimilarityTransform:
    rot = rodrigues(omega) @ tf.rotation
    # re-orthonormalize so accumulated float drift never trips the invariant
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        u[:, 2] = -u[:, 2]
        rot = u @ vt
    return SimilarityTransform(
        scale=tf.scale * float(np.exp(log_s)), rotation=rot, translation=np.asarray(t, dtype=np.float64)
    )


def _evaluate(model, pose, shape, tf, target, sqrt_w, cfg) -> _LMState:
    v = forward(model, pose, shape).vertices
    data = (tf.apply(v) - target) * sqrt_w[:, None]
    prior = np.concatenate(
        [cfg.pose_prior_weight * pose.ravel(), cfg.shape_prior_weight * shape]
    )
    r = np.concatenate([data.ravel(), prior])
    return _LMState(pose=pose, shape=shape, tf=tf, vertices=v, resid=r, cost=float(r @ r))


def residual_jacobian(
    model: BodyModel,
    pose: np.ndarray,
    shape: np.ndarray,
    tf: SimilarityTransform,
    target: np.ndarray,
    sqrt_w: np.ndarray,
    cfg: FitConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Residual vector and its Jacobian for the LM parameter block.

    Parameters are ordered (pose 3K, shape S, log-scale 1, rotation
    increment 3, translation 3); the transform entries are increments
    about ``tf``, evaluated at zero. Rows are the weighted data residuals
    followed by the parameter prior.
    """
    pose = np.asarray(pose, dtype=np.float64)
    shape = np.asarray(shape, dtype=np.float64)
    mesh, d_pose, d_shape = forward_with_jacobians(model, pose, shape)
    v = mesh.vertices
    n = v.shape[0]
    k3 = pose.size
    s_dim = shape.size

    transformed = tf.apply(v)
    data = (transformed - target) * sqrt_w[:, None]
    prior = np.concatenate(
        [cfg.pose_prior_weight * pose.ravel(), cfg.shape_prior_weight * shape]
    )
    r = np.concatenate([data.ravel(), prior])

    srot = tf.scale * tf.rotation
    jac = np.zeros((3 * n + k3 + s_dim, k3 + s_dim + 7))
    jac_pose = np.einsum("ab,nbd->nad", srot, d_pose) * sqrt_w[:, None, None]
    jac_shape = np.einsum("ab,nbd->nad", srot, d_shape) * sqrt_w[:, None, None]
    jac[: 3 * n, :k3] = jac_pose.reshape(-1, k3)
    jac[: 3 * n, k3 : k3 + s_dim] = jac_shape.reshape(-1, s_dim)

    # transform increments: s = s0 exp(sigma), R = Rod(omega) R0, t absolute
    rotated = tf.scale * v @ tf.rotation.T  # s R v, without translation
    jac[: 3 * n, k3 + s_dim] = (rotated * sqrt_w[:, None]).ravel()
    for i, axis in enumerate(np.eye(3)):
        cross = np.cross(np.broadcast_to(axis, rotated.shape), rotated)
        jac[: 3 * n, k3 + s_dim + 1 + i] = (cross * sqrt_w[:, None]).ravel()
    for i in range(3):
        block = np.zeros((n, 3))
        block[:, i] = sqrt_w
        jac[: 3 * n, k3 + s_dim + 4 + i] = block.ravel()

    jac[3 * n : 3 * n + k3, :k3] = cfg.pose_prior_weight * np.eye(k3)
    jac[3 * n + k3 :, k3 : k3 + s_dim] = cfg.shape_prior_weight * np.eye(s_dim)
    return r, jac


def _lm_refine(model, target, sqrt_w, state: _LMState, cfg: FitConfig):
    """Damped Gauss-Newton on (pose, shape) plus transform increments.

    The cost is monotone non-increasing across accepted steps; returns the
    refined state and whether the damping retry budget was exhausted.
    """
    k3 = state.pose.size
    s_dim = state.shape.size
    lam = cfg.lm_damping_init
    hit_reject_limit = False

    for _ in range(cfg.lm_iters):
        r, jac = residual_jacobian(
            model, state.pose, state.shape, state.tf, target, sqrt_w, cfg
        )
        jtj = jac.T @ jac
        jtr = jac.T @ r
        rejects = 0
        improvement = 0.0
        while True:
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(jtj.shape[0]), -jtr)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                cand_tf = _transform_with_increment(
                    state.tf,
                    float(delta[k3 + s_dim]),
                    delta[k3 + s_dim + 1 : k3 + s_dim + 4],
                    state.tf.translation + delta[k3 + s_dim + 4 :],
                )
                cand = _evaluate(
                    model,
                    state.pose + delta[:k3].reshape(state.pose.shape),
                    state.shape + delta[k3 : k3 + s_dim],
                    cand_tf,
                    target,
                    sqrt_w,
                    cfg,
                )
                if cand.cost < state.cost:
                    improvement = state.cost - cand.cost
                    state = cand
                    lam = max(lam * 0.5, 1e-12)
                    break
            lam *= 10.0
            rejects += 1
            if rejects >= cfg.lm_iters:
                hit_reject_limit = True
                break
        if hit_reject_limit:
            break
        if improvement <= cfg.convergence_tol * max(state.cost, 1e-30):
            break
    return state, hit_reject_limit


def fit_vertices(
    model: BodyModel,
    target: np.ndarray,
    cfg: FitConfig = FitConfig(),
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> FitResult:
    """Fit (pose, shape, similarity) to ordered target vertices.

    Alternates the closed-form similarity against LM refinement of the
    parameters and returns the best iterate seen. ``converged`` reports
    whether the relative residual change dropped below the tolerance
    before the iteration budget (or damping retries) ran out.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (model.num_vertices, 3):
        raise ValidationError(
            f"target must be ({model.num_vertices}, 3), got {target.shape}"
        )
    if not np.all(np.isfinite(target)):
        raise ValidationError("target contains non-finite entries")
    if cfg.vertex_weights is None:
        w = np.ones(model.num_vertices)
    else:
        w = np.asarray(cfg.vertex_weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != model.num_vertices or np.any(w < 0):
            raise ValidationError("vertex weights must be nonnegative, one per vertex")
    if not np.any(w > 0):
        raise DegenerateInputError("all vertex weights are zero")
    sqrt_w = np.sqrt(w)
    w_total = w.sum()

    if init is None:
        pose = np.zeros((model.num_pose_joints, 3))
        shape = np.zeros(model.num_shape_coeffs)
    else:
        pose = np.asarray(init[0], dtype=np.float64).copy()
        shape = np.asarray(init[1], dtype=np.float64).copy()

    state = _evaluate(
        model, pose, shape, SimilarityTransform.identity(), target, sqrt_w, cfg
    )
    best = None
    prev_rnorm = np.inf
    converged = False
    iters = 0

    for outer in range(cfg.max_outer_iters):
        iters = outer + 1
        # closed-form re-centering of the transform; keeps the LM rotation
        # and scale increments small
        try:
            tf = umeyama(state.vertices, target, w)
            recentered = _evaluate(model, state.pose, state.shape, tf, target, sqrt_w, cfg)
            if recentered.cost <= state.cost or outer == 0:
                state = recentered
        except DegenerateInputError:
            if outer == 0:
                raise
        state, lm_failed = _lm_refine(model, target, sqrt_w, state, cfg)
        if best is None or state.cost < best.cost:
            best = state
        # converged when the residual norm stops moving (floors keep exact
        # fits from chasing floating-point noise below 1 nm rmse); a damping
        # failure with the residual still in motion reports converged=False
        rnorm = float(np.sqrt(state.cost))
        tiny = 1e-9 * np.sqrt(w_total)
        if rnorm <= tiny or abs(prev_rnorm - rnorm) <= cfg.convergence_tol * max(rnorm, tiny):
            converged = True
            break
        if lm_failed:
            break
        prev_rnorm = rnorm

    assert best is not None
    resid = best.tf.apply(best.vertices) - target
    rmse = float(np.sqrt((w * np.sum(resid**2, axis=1)).sum() / w_total))
    return FitResult(
        pose=PoseParams(wrap_axis_angle(best.pose)),
        shape=ShapeParams(best.shape),
        transform=best.tf,
        rmse_m=rmse,
        iters=iters,
        converged=converged,
    )


def fit_from_map(
    model: BodyModel,
    pmap: PositionMap,
    cfg: FitConfig = FitConfig(),
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> FitResult:
    """Resample vertices from a position map and fit; vertices whose uv
    neighborhoods are entirely invalid get weight zero."""
    target, unreachable = resample_vertices(model.uv_layout, pmap, return_unreachable=True)
    if cfg.vertex_weights is None:
        w = np.ones(model.num_vertices)
    else:
        w = np.asarray(cfg.vertex_weights, dtype=np.float64).copy()
    w[unreachable] = 0.0
    if not np.any(w > 0):
        raise DegenerateInputError("position map leaves no usable vertices")
    return fit_vertices(model, target, replace(cfg, vertex_weights=w), init=init)
