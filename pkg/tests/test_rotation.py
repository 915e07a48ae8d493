import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from uvbody.rotation import rodrigues, rodrigues_with_jacobian, skew, wrap_axis_angle


def test_matches_scipy_on_random_vectors():
    rng = np.random.default_rng(3)
    omega = rng.uniform(-2.0, 2.0, size=(200, 3))
    ours = rodrigues(omega)
    ref = Rotation.from_rotvec(omega).as_matrix()
    assert np.allclose(ours, ref, atol=1e-13)


def test_zero_gives_identity():
    assert np.array_equal(rodrigues(np.zeros(3)), np.eye(3))


@pytest.mark.parametrize("scale", [1e-10, 1e-7, 1e-5, 1e-3])
def test_small_angles_stay_accurate(scale):
    rng = np.random.default_rng(5)
    omega = rng.standard_normal((20, 3)) * scale
    ref = Rotation.from_rotvec(omega).as_matrix()
    assert np.allclose(rodrigues(omega), ref, atol=1e-15)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(11)
    omega = rng.uniform(-1.5, 1.5, size=(30, 3))
    _, jac = rodrigues_with_jacobian(omega)
    h = 1e-7
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (rodrigues(omega + e) - rodrigues(omega - e)) / (2 * h)
        assert np.max(np.abs(jac[..., i] - fd)) < 1e-8


def test_jacobian_at_zero_is_generator():
    _, jac = rodrigues_with_jacobian(np.zeros(3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        assert np.allclose(jac[..., i], skew(e))


def test_jacobian_smooth_through_small_angle_branch():
    # values just above and below the series cutoff must agree
    for mag in (0.9e-3, 1.1e-3):
        omega = np.array([mag, 0.0, 0.0])
        _, jac = rodrigues_with_jacobian(omega)
        h = 1e-9
        fd = (rodrigues(omega + [h, 0, 0]) - rodrigues(omega - [h, 0, 0])) / (2 * h)
        assert np.max(np.abs(jac[..., 0] - fd)) < 1e-6


def test_wrap_preserves_rotation():
    rng = np.random.default_rng(7)
    omega = rng.standard_normal((50, 3)) * 4.0
    wrapped = wrap_axis_angle(omega)
    assert np.all(np.linalg.norm(wrapped, axis=1) <= np.pi + 1e-12)
    assert np.allclose(rodrigues(omega), rodrigues(wrapped), atol=1e-12)
