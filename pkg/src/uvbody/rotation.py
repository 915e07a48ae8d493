"""Axis-angle (Rodrigues) rotations and their analytic derivatives.

All functions are vectorized over a leading batch axis and computed in
float64. The small-angle branch switches to Taylor expansions well before
the trigonometric ratios lose precision, so both values and derivatives
stay smooth through omega = 0.
"""

from __future__ import annotations

import numpy as np

# Below these magnitudes the closed-form ratios are replaced by their
# series expansions (the derivative ratios cancel more severely, hence
# the larger cutoff).
_TAYLOR_EPS_VALUE = 1e-4
_TAYLOR_EPS_DERIV = 1e-3


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for vectors of shape (..., 3)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=np.float64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def _sin_cos_ratios(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """a = sin(t)/t and b = (1-cos(t))/t^2 with series fallback near 0."""
    t2 = theta * theta
    small = theta < _TAYLOR_EPS_VALUE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    return a, b


def rodrigues(omega: np.ndarray) -> np.ndarray:
    """Rotation matrices for axis-angle vectors of shape (..., 3)."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega, axis=-1)
    a, b = _sin_cos_ratios(theta)
    K = skew(omega)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def rodrigues_with_jacobian(omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrices plus dR/domega.

    Returns (R, dR) with R of shape (..., 3, 3) and dR of shape
    (..., 3, 3, 3) where dR[..., i] is the derivative of R with respect
    to component i of omega.
    """
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega, axis=-1)
    t2 = theta * theta
    a, b = _sin_cos_ratios(theta)

    # c1 = (d a / d theta) / theta, c2 = (d b / d theta) / theta
    small = theta < _TAYLOR_EPS_DERIV
    safe = np.where(small, 1.0, theta)
    c1 = np.where(
        small,
        -1.0 / 3.0 + t2 / 30.0,
        (safe * np.cos(safe) - np.sin(safe)) / safe**3,
    )
    c2 = np.where(
        small,
        -1.0 / 12.0 + t2 / 180.0,
        (safe * np.sin(safe) - 2.0 * (1.0 - np.cos(safe))) / safe**4,
    )

    K = skew(omega)
    K2 = K @ K
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + a[..., None, None] * K + b[..., None, None] * K2

    basis = np.eye(3)
    dR = np.empty(omega.shape[:-1] + (3, 3, 3), dtype=np.float64)
    for i in range(3):
        Ei = skew(np.broadcast_to(basis[i], omega.shape))
        wi = omega[..., i]
        dR[..., i] = (
            (c1 * wi)[..., None, None] * K
            + a[..., None, None] * Ei
            + (c2 * wi)[..., None, None] * K2
            + b[..., None, None] * (Ei @ K + K @ Ei)
        )
    return R, dR


def wrap_axis_angle(omega: np.ndarray) -> np.ndarray:
    """Map axis-angle rows to the equivalent rotation with angle in [0, pi]."""
    omega = np.asarray(omega, dtype=np.float64).copy()
    theta = np.linalg.norm(omega, axis=-1)
    big = theta > np.pi
    if np.any(big):
        wrapped = np.mod(theta, 2.0 * np.pi)
        flip = wrapped > np.pi
        target = np.where(flip, wrapped - 2.0 * np.pi, wrapped)
        ratio = np.where(theta > 0, target / np.where(theta > 0, theta, 1.0), 1.0)
        omega = np.where(big[..., None], omega * ratio[..., None], omega)
    return omega
