import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvbody import (
    JointLossTerm,
    LossConfig,
    PositionMap,
    ValidationError,
    WeightMask,
    forward,
    joint_loss,
    loss_grad,
    regress_joints,
    render_position_map,
    total_loss,
    total_variation,
    weighted_l1,
)

from conftest import random_pose


def random_setup(rng, res=16, num_parts=3, all_valid=False):
    """Random maps plus a consistent weight mask with a few parts."""
    valid = np.ones((res, res), dtype=bool) if all_valid else rng.random((res, res)) < 0.8
    part_id = rng.integers(0, num_parts, size=(res, res))
    part_id[~valid] = num_parts
    weights = np.zeros((res, res))
    weights[valid] = rng.uniform(0.2, 2.0, size=int(valid.sum()))
    weights[valid] /= weights[valid].mean()
    mask = WeightMask(weights=weights, part_id=part_id, num_parts=num_parts)

    def rand_map():
        pos = rng.standard_normal((res, res, 3))
        pos[~valid] = 0.0
        return PositionMap(positions=pos, valid=valid.copy())

    return mask, rand_map


def brute_force_total(pred, gt, mask, tv_weight, alphas):
    """Independent loop-based evaluation of l1 + lambda * tv."""
    res = pred.resolution
    l1 = 0.0
    for i in range(res):
        for j in range(res):
            if pred.valid[i, j]:
                l1 += mask.weights[i, j] * np.abs(pred.positions[i, j] - gt.positions[i, j]).sum()
    tv = 0.0
    for i in range(res):
        for j in range(res):
            if not pred.valid[i, j]:
                continue
            k = mask.part_id[i, j]
            if i + 1 < res and pred.valid[i + 1, j] and mask.part_id[i + 1, j] == k:
                tv += alphas[k] * np.abs(pred.positions[i + 1, j] - pred.positions[i, j]).sum()
            if j + 1 < res and pred.valid[i, j + 1] and mask.part_id[i, j + 1] == k:
                tv += alphas[k] * np.abs(pred.positions[i, j + 1] - pred.positions[i, j]).sum()
    return l1, tv, l1 + tv_weight * tv


def test_identical_maps_give_zero_l1():
    rng = np.random.default_rng(0)
    mask, rand_map = random_setup(rng)
    p = rand_map()
    assert weighted_l1(p, p, mask) == 0.0


def test_single_texel_unit_difference():
    valid = np.zeros((8, 8), dtype=bool)
    valid[3, 4] = True
    part = np.full((8, 8), 1)
    part[~valid] = 1
    part_id = np.where(valid, 0, 1)
    mask = WeightMask(weights=valid.astype(float), part_id=part_id, num_parts=1)
    pos = np.zeros((8, 8, 3))
    gt = PositionMap(positions=pos.copy(), valid=valid)
    pos2 = pos.copy()
    pos2[3, 4] = [1.0, 1.0, 1.0]
    pred = PositionMap(positions=pos2, valid=valid)
    assert weighted_l1(pred, gt, mask) == pytest.approx(3.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_l1_linear_in_mask_weights(seed, factor):
    rng = np.random.default_rng(seed)
    mask, rand_map = random_setup(rng, res=8)
    p, g = rand_map(), rand_map()
    scaled = WeightMask(weights=mask.weights * factor, part_id=mask.part_id, num_parts=mask.num_parts)
    assert weighted_l1(p, g, scaled) == pytest.approx(factor * weighted_l1(p, g, mask), rel=1e-12)


def test_constant_map_has_zero_tv():
    rng = np.random.default_rng(1)
    mask, rand_map = random_setup(rng, all_valid=True)
    pos = np.tile([1.0, 2.0, 3.0], (16, 16, 1))
    p = PositionMap(positions=pos, valid=np.ones((16, 16), bool))
    assert total_variation(p, mask.part_id, np.ones(3)) == 0.0


def test_two_texel_tv_difference():
    valid = np.zeros((8, 8), dtype=bool)
    valid[2, 2] = valid[2, 3] = True
    part_id = np.where(valid, 0, 1)
    pos = np.zeros((8, 8, 3))
    pos[2, 3] = [1.0, 0.0, 0.0]
    p = PositionMap(positions=pos, valid=valid)
    assert total_variation(p, part_id, np.ones(1)) == pytest.approx(1.0)


def test_tv_excludes_cross_part_and_invalid_pairs():
    valid = np.ones((3, 3), dtype=bool)
    valid[0, 2] = False
    valid[2, :] = False
    part_id = np.array([[0, 1, 3], [0, 0, 2], [3, 3, 3]])
    pos = np.arange(27, dtype=float).reshape(3, 3, 3)
    pos[~valid] = 0.0
    p = PositionMap(positions=pos, valid=valid)
    # included pairs: vertical (0,0)-(1,0) same part 0; horizontal (1,0)-(1,1) same part 0
    expect = np.abs(pos[1, 0] - pos[0, 0]).sum() + np.abs(pos[1, 1] - pos[1, 0]).sum()
    assert total_variation(p, part_id, np.ones(3)) == pytest.approx(expect)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_tv_linear_in_alphas(seed, c):
    rng = np.random.default_rng(seed)
    mask, rand_map = random_setup(rng, res=8)
    p = rand_map()
    alphas = rng.uniform(0.1, 2.0, 3)
    assert total_variation(p, mask.part_id, c * alphas) == pytest.approx(
        c * total_variation(p, mask.part_id, alphas), rel=1e-12
    )


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_tv_invariant_to_constant_shift(seed):
    rng = np.random.default_rng(seed)
    mask, rand_map = random_setup(rng, res=8)
    p = rand_map()
    shifted = p.positions + np.array([3.0, -1.0, 0.5])
    shifted[~p.valid] = 0.0
    q = PositionMap(positions=shifted, valid=p.valid.copy())
    alphas = np.ones(3)
    assert total_variation(q, mask.part_id, alphas) == pytest.approx(
        total_variation(p, mask.part_id, alphas), rel=1e-9
    )


def test_total_loss_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(3):
        mask, rand_map = random_setup(rng, res=32, num_parts=4)
        alphas = rng.uniform(0.2, 2.0, 4)
        cfg = LossConfig(mask=mask, tv_weight=1e-3, part_alphas=alphas)
        p, g = rand_map(), rand_map()
        got = total_loss(p, g, cfg)
        l1, tv, total = brute_force_total(p, g, mask, 1e-3, alphas)
        assert got.l1 == pytest.approx(l1, rel=1e-12)
        assert got.tv == pytest.approx(tv, rel=1e-12)
        assert got.total == pytest.approx(total, rel=1e-10)


def test_total_loss_breakdown_identity():
    rng = np.random.default_rng(11)
    mask, rand_map = random_setup(rng)
    p, g = rand_map(), rand_map()
    cfg0 = LossConfig(mask=mask, tv_weight=0.0)
    out = total_loss(p, g, cfg0)
    assert out.total == pytest.approx(out.l1, rel=1e-12)
    cfg1 = LossConfig(mask=mask, tv_weight=0.37)
    same = total_loss(g, g, cfg1)
    assert same.l1 == 0.0
    assert same.total == pytest.approx(0.37 * same.tv, rel=1e-12)


def test_loss_one_homogeneous_in_differences_when_tv_off():
    rng = np.random.default_rng(13)
    mask, rand_map = random_setup(rng)
    g = rand_map()
    d = rand_map()
    cfg = LossConfig(mask=mask, tv_weight=0.0)
    base_pos = g.positions + d.positions
    base_pos[~g.valid] = 0.0
    scaled_pos = g.positions + 2.5 * d.positions
    scaled_pos[~g.valid] = 0.0
    base = total_loss(PositionMap(base_pos, g.valid.copy()), g, cfg).total
    scaled = total_loss(PositionMap(scaled_pos, g.valid.copy()), g, cfg).total
    assert scaled == pytest.approx(2.5 * base, rel=1e-12)


def test_shape_and_validity_mismatches_raise():
    rng = np.random.default_rng(17)
    mask, rand_map = random_setup(rng)
    p = rand_map()
    other_valid = p.valid.copy()
    other_valid[0, 0] = not other_valid[0, 0]
    q_pos = p.positions.copy()
    q_pos[~other_valid] = 0.0
    q = PositionMap(positions=q_pos, valid=other_valid)
    with pytest.raises(ValidationError):
        weighted_l1(p, q, mask)


def test_grad_zero_at_optimum_with_tv_off():
    rng = np.random.default_rng(19)
    mask, rand_map = random_setup(rng)
    p = rand_map()
    cfg = LossConfig(mask=mask, tv_weight=0.0)
    assert np.array_equal(loss_grad(p, p, cfg), np.zeros_like(p.positions))


def test_grad_single_texel_is_mask_weight():
    rng = np.random.default_rng(23)
    mask, rand_map = random_setup(rng)
    g = rand_map()
    i, j = np.argwhere(g.valid)[7]
    pos = g.positions.copy()
    pos[i, j] += 1e-3
    p = PositionMap(positions=pos, valid=g.valid.copy())
    cfg = LossConfig(mask=mask, tv_weight=0.0)
    grad = loss_grad(p, g, cfg)
    expected = np.zeros_like(grad)
    expected[i, j] = mask.weights[i, j]
    assert np.allclose(grad, expected)


def central_fd_grad(p, g, cfg, h=1e-6):
    grad = np.zeros_like(p.positions)
    for i in range(p.resolution):
        for j in range(p.resolution):
            if not p.valid[i, j]:
                continue
            for c in range(3):
                plus = p.positions.copy()
                minus = p.positions.copy()
                plus[i, j, c] += h
                minus[i, j, c] -= h
                lp = total_loss(PositionMap(plus, p.valid.copy()), g, cfg).total
                lm = total_loss(PositionMap(minus, p.valid.copy()), g, cfg).total
                grad[i, j, c] = (lp - lm) / (2 * h)
    return grad


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(29)
    mask, rand_map = random_setup(rng, res=8)
    alphas = rng.uniform(0.3, 1.5, 3)
    cfg = LossConfig(mask=mask, tv_weight=1e-2, part_alphas=alphas)
    p, g = rand_map(), rand_map()
    analytic = loss_grad(p, g, cfg)
    fd = central_fd_grad(p, g, cfg)
    denom = max(np.abs(fd).max(), 1e-12)
    assert np.abs(analytic - fd).max() / denom < 1e-5
    assert np.all(analytic[~p.valid] == 0.0)


def test_grad_with_joint_term_matches_finite_differences(model1):
    rng = np.random.default_rng(31)
    res = 16
    v = forward(model1, random_pose(rng, 23), rng.uniform(-1, 1, 10)).vertices
    gt_map = render_position_map(model1.uv_layout, v, res)
    noisy = gt_map.positions + rng.normal(0, 0.01, gt_map.positions.shape)
    noisy[~gt_map.valid] = 0.0
    pred = PositionMap(positions=noisy, valid=gt_map.valid.copy())

    part_id = np.where(gt_map.valid, 0, 1)
    weights = gt_map.valid.astype(float)
    weights[gt_map.valid] /= weights[gt_map.valid].mean()
    mask = WeightMask(weights=weights, part_id=part_id, num_parts=1)
    cfg = LossConfig(
        mask=mask,
        tv_weight=1e-3,
        part_alphas=np.ones(1),
        joint_term=JointLossTerm(model=model1, subset=np.arange(12)),
    )
    analytic = loss_grad(pred, gt_map, cfg)
    fd = central_fd_grad(pred, gt_map, cfg)
    denom = max(np.abs(fd).max(), 1e-12)
    assert np.abs(analytic - fd).max() / denom < 1e-5


def test_joint_loss_roundtrip_small(model2):
    rng = np.random.default_rng(37)
    v = forward(model2, random_pose(rng, 23), rng.uniform(-1, 1, 10)).vertices
    pmap = render_position_map(model2.uv_layout, v, 256)
    gt = regress_joints(model2, v)
    subset = np.arange(model2.num_joints)
    assert joint_loss(pmap, model2, gt, subset) < 0.002


def test_joint_loss_translation_exact_at_zero(model1):
    v = model1.template_vertices
    pmap = render_position_map(model1.uv_layout, v, 128)
    from uvbody import resample_vertices

    joints = regress_joints(model1, resample_vertices(model1.uv_layout, pmap))
    subset = np.arange(24)
    base = joint_loss(pmap, model1, joints, subset)
    assert base == pytest.approx(0.0, abs=1e-12)
    d = np.array([0.01, -0.02, 0.005])
    shifted = joints.positions + d
    assert joint_loss(pmap, model1, shifted, subset) == pytest.approx(np.linalg.norm(d), rel=1e-9)


def test_joint_loss_empty_subset_rejected(model1):
    pmap = render_position_map(model1.uv_layout, model1.template_vertices, 32)
    with pytest.raises(ValidationError):
        joint_loss(pmap, model1, regress_joints(model1, model1.template_vertices), np.array([]))
