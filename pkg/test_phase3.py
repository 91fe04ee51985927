"""
Phase 3 Test Script
Run this to verify the scene, motion, geometry and voxel fusion operators.
"""

import numpy as np
import pytest

from phase1_parsing import ConfigError, write_tensor
from phase1_parsing.schemas import VoxelConfig
from phase2_tensors import RigidTransform, ShapeError, VoxelGrid
from phase3_fusion import (
    AugmentWeights,
    CameraPose,
    DepthDistribution,
    FusionWeights,
    GateParams,
    GDStepWeights,
    GeometryFusion,
    MotionField,
    MotionFusion,
    MotionPredictor,
    SceneFusion,
    SceneParams,
    VoxelFusion,
    VoxelHidden,
    gate,
    geometry_update,
    load_fusion_weights,
    motion_gradient,
    motion_loss,
    motion_update,
    predict_motion,
    prop1_check,
    prop1_transform,
    scene_apply,
    scene_forward,
    scene_gradient,
    scene_loss,
    scene_update,
    time_embed,
    voxel_update,
    warp_geometry,
)
from phase3_fusion.geometry_fusion import renormalize


def central_diff(loss, x0, h):
    x0 = np.array(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    x = x0.copy()
    for j in np.ndindex(x0.shape):
        step = h * max(1.0, abs(x0[j]))
        x[j] = x0[j] + step
        f_plus = loss(x)
        x[j] = x0[j] - step
        f_minus = loss(x)
        x[j] = x0[j]
        grad[j] = (f_plus - f_minus) / (2.0 * step)
    return grad


def random_params(c, rng):
    return SceneParams(
        gamma=1.0 + 0.3 * rng.standard_normal(c),
        beta=0.3 * rng.standard_normal(c),
        W=np.eye(c) + 0.3 * rng.standard_normal((c, c)),
        b=0.3 * rng.standard_normal(c),
    )


class TestSceneFusion:
    @pytest.mark.parametrize("c,n", [(1, 5), (3, 7), (6, 20)])
    def test_gradient_matches_finite_differences(self, c, n):
        rng = np.random.default_rng(c * 100 + n)
        v = rng.standard_normal((c, n))
        params = random_params(c, rng)
        aug = AugmentWeights.random(c, rng)
        grad, inter = scene_gradient(v, params, aug)

        for block, analytic in (('gamma', grad.d_gamma), ('beta', grad.d_beta), ('W', grad.d_W), ('b', grad.d_b)):
            def loss(x, block=block):
                return scene_loss(v, params.model_copy(update={block: x}), aug)
            numeric = central_diff(loss, getattr(params, block), 1e-6)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6, err_msg=block)

        assert inter.delta1.shape == (c, n)
        np.testing.assert_allclose(inter.delta2, 2.0 * params.gamma[:, None] * inter.delta1)

    def test_identity_task_is_a_fixed_point(self):
        c = 4
        v = np.random.default_rng(7).standard_normal((c, 9))
        params = SceneParams.identity_start(c).model_copy(update={'gamma': np.zeros(c)})
        grad, _ = scene_gradient(v, params, AugmentWeights.identity(c))
        assert grad.max_abs() == 0.0
        assert scene_loss(v, params, AugmentWeights.identity(c)) == 0.0

    def test_single_channel_has_no_linear_gradient(self):
        rng = np.random.default_rng(8)
        grad, _ = scene_gradient(rng.standard_normal((1, 12)), SceneParams.identity_start(1), AugmentWeights.random(1, rng))
        np.testing.assert_array_equal(grad.d_W, 0.0)
        np.testing.assert_array_equal(grad.d_b, 0.0)
        assert np.all(np.isfinite(grad.d_beta))

    def test_forward_at_identity_start(self):
        x = np.random.default_rng(9).standard_normal((5, 6))
        y, inter = scene_forward(x, SceneParams.identity_start(5))
        np.testing.assert_allclose(y, inter.zhat + x)

    def test_zero_step_keeps_parameters(self):
        rng = np.random.default_rng(10)
        params = random_params(3, rng)
        grad, _ = scene_gradient(rng.standard_normal((3, 4)), params, AugmentWeights.random(3, rng))
        out = scene_update(params, grad, 0.0)
        for name in ('gamma', 'beta', 'W', 'b'):
            np.testing.assert_array_equal(getattr(out, name), getattr(params, name))

    def test_update_is_affine_in_the_step(self):
        rng = np.random.default_rng(14)
        params = random_params(3, rng)
        grad, _ = scene_gradient(rng.standard_normal((3, 7)), params, AugmentWeights.random(3, rng))
        once, twice = scene_update(params, grad, 0.03), scene_update(params, grad, 0.06)
        for name in ('gamma', 'beta', 'W', 'b'):
            start = getattr(params, name)
            np.testing.assert_allclose(getattr(twice, name) - start, 2.0 * (getattr(once, name) - start), rtol=1e-12, atol=1e-15)

    def test_negative_step_rejected(self):
        params = SceneParams.identity_start(2)
        grad, _ = scene_gradient(np.ones((2, 3)), params, AugmentWeights.identity(2))
        with pytest.raises(ValueError):
            scene_update(params, grad, -0.1)

    def test_small_step_reduces_loss(self):
        rng = np.random.default_rng(11)
        v = rng.standard_normal((4, 30))
        params = random_params(4, rng)
        aug = AugmentWeights.random(4, rng)
        grad, _ = scene_gradient(v, params, aug)
        assert scene_loss(v, scene_update(params, grad, 1e-4), aug) < scene_loss(v, params, aug)

    def test_linear_only_variant(self):
        rng = np.random.default_rng(12)
        c = 3
        params = random_params(c, rng)
        aug = AugmentWeights.random(c, rng)
        v = rng.standard_normal((c, 8))
        _, h_s = SceneFusion(aug, 0.01, update_norm_params=False).step(params, v, v)
        np.testing.assert_array_equal(h_s.gamma, params.gamma)
        np.testing.assert_array_equal(h_s.beta, params.beta)
        assert not np.array_equal(h_s.W, params.W)

    def test_step_applies_updated_params(self):
        rng = np.random.default_rng(13)
        c = 3
        params = random_params(c, rng)
        aug = AugmentWeights.random(c, rng)
        v_now, v_fused = rng.standard_normal((c, 8)), rng.standard_normal((c, 8))
        v_hat, h_s = SceneFusion(aug, 0.05).step(params, v_now, v_fused)
        np.testing.assert_array_equal(v_hat, scene_apply(v_fused, h_s, aug))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            scene_loss(np.ones((3, 4)), SceneParams.identity_start(2), AugmentWeights.identity(2))


class TestMotionFusion:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(20)
        extents = (4, 3, 5)
        h_prev = MotionField(offsets=rng.standard_normal((3, *extents)))
        m_now = MotionField(offsets=rng.uniform(0.1, 0.9, size=(3, *extents)))
        identity = RigidTransform.identity()

        analytic = motion_gradient(h_prev, m_now, identity).offsets
        numeric = central_diff(lambda x: motion_loss(h_prev, MotionField(offsets=x), identity), m_now.offsets, 1e-5)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)

    def test_constant_history_gives_residual_gradient(self):
        extents = (4, 4, 3)
        h_prev = MotionField(offsets=np.full((3, *extents), 0.5))
        m_now = MotionField.zeros(extents)
        grad = motion_gradient(h_prev, m_now, RigidTransform.identity()).offsets
        # away from the upper faces the sampler sees a flat field
        np.testing.assert_allclose(grad[:, :-1, :-1, :-1], -1.0, atol=1e-12)

    def test_update_step(self):
        m = MotionField(offsets=np.ones((3, 2, 2, 2)))
        g = MotionField(offsets=np.full((3, 2, 2, 2), 4.0))
        np.testing.assert_array_equal(motion_update(m, g, 0.0).offsets, m.offsets)
        np.testing.assert_allclose(motion_update(m, g, 0.25).offsets, 0.0)
        with pytest.raises(ValueError):
            motion_update(m, g, -1.0)

    def test_update_is_affine_in_the_step(self):
        rng = np.random.default_rng(23)
        m = MotionField(offsets=rng.standard_normal((3, 2, 3, 2)))
        g = MotionField(offsets=rng.standard_normal((3, 2, 3, 2)))
        np.testing.assert_allclose(
            motion_update(m, g, 0.2).offsets - m.offsets,
            2.0 * (motion_update(m, g, 0.1).offsets - m.offsets),
            rtol=1e-12, atol=1e-15,
        )

    def test_matching_history_is_a_fixed_point(self):
        extents = (5, 5, 4)
        offsets = np.empty((3, *extents))
        offsets[0], offsets[1], offsets[2] = 0.25, -0.5, 0.0
        h_prev = MotionField(offsets=offsets)
        m_now = MotionField(offsets=offsets.copy())
        identity = RigidTransform.identity()
        grad = motion_gradient(h_prev, m_now, identity)
        out = motion_update(m_now, grad, 0.5)
        # sampling stays inside the grid away from the faces the offsets push across
        np.testing.assert_array_equal(out.offsets[:, :-1, 1:, :], m_now.offsets[:, :-1, 1:, :])
        zero = MotionField.zeros(extents)
        np.testing.assert_array_equal(motion_update(zero, motion_gradient(zero, zero, identity), 0.5).offsets, 0.0)

    def test_prediction_is_per_voxel_linear(self):
        rng = np.random.default_rng(21)
        v = VoxelGrid(data=rng.standard_normal((4, 2, 3, 2)))
        f_m = MotionPredictor(weight=rng.standard_normal((3, 4)), bias=[1.0, 0.0, -1.0])
        m = predict_motion(v, f_m)
        assert m.extents == (2, 3, 2)
        np.testing.assert_allclose(m.offsets[:, 1, 2, 0], f_m.weight @ v.data[:, 1, 2, 0] + f_m.bias)

    def test_first_frame_is_the_prediction(self):
        rng = np.random.default_rng(22)
        v = VoxelGrid(data=rng.standard_normal((4, 3, 3, 3)))
        f_m = MotionPredictor.random(4, rng)
        out = MotionFusion(f_m, 0.5).step(v, None, RigidTransform.identity())
        np.testing.assert_array_equal(out.offsets, predict_motion(v, f_m).offsets)

    def test_extents_mismatch(self):
        with pytest.raises(ShapeError):
            motion_gradient(MotionField.zeros((2, 2, 2)), MotionField.zeros((3, 2, 2)), RigidTransform.identity())


def single_ray(bins=8):
    centers = np.arange(1.0, bins + 1.0)
    pose = CameraPose(origins=np.zeros((1, 3)), directions=[[0.0, 0.0, 1.0]])
    return centers, pose


def one_hot(index, bins=8):
    p = np.zeros((1, bins))
    p[0, index] = 1.0
    return p


class TestGeometryFusion:
    def test_identity_warp(self):
        rng = np.random.default_rng(30)
        probs = rng.dirichlet(np.ones(6), size=4)
        centers = np.linspace(2.0, 7.0, 6)
        origins = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
        pose = CameraPose(origins=origins, directions=np.tile([0.0, 0.0, 1.0], (4, 1)))
        out = warp_geometry(DepthDistribution(probs=probs, bin_centers=centers), pose)
        np.testing.assert_allclose(out.probs, probs, atol=1e-12)

    def test_whole_bin_shift(self):
        centers, pose = single_ray()
        pose = pose.model_copy(update={'transform': RigidTransform(translation=(0.0, 0.0, -1.0))})
        out = warp_geometry(DepthDistribution(probs=one_hot(3), bin_centers=centers), pose)
        np.testing.assert_array_equal(out.probs, one_hot(2))

    def test_half_bin_shift_splits_mass(self):
        centers, pose = single_ray()
        pose = pose.model_copy(update={'transform': RigidTransform(translation=(0.0, 0.0, -0.5))})
        out = warp_geometry(DepthDistribution(probs=one_hot(3), bin_centers=centers), pose)
        expected = np.zeros((1, 8))
        expected[0, 2] = expected[0, 3] = 0.5
        np.testing.assert_allclose(out.probs, expected, atol=1e-12)

    def test_mass_leaving_the_range_becomes_uniform(self):
        centers, pose = single_ray()
        pose = pose.model_copy(update={'transform': RigidTransform(translation=(0.0, 0.0, -1.0))})
        out = warp_geometry(DepthDistribution(probs=one_hot(0), bin_centers=centers), pose)
        np.testing.assert_allclose(out.probs, np.full((1, 8), 1.0 / 8))

    def test_renormalize(self):
        out = renormalize(np.array([[0.0, 0.0], [1.0, 3.0]]))
        np.testing.assert_array_equal(out, [[0.5, 0.5], [0.25, 0.75]])

    def test_zero_gate_is_one_half(self):
        centers, _ = single_ray()
        d = DepthDistribution(probs=one_hot(1), bin_centers=centers)
        np.testing.assert_array_equal(gate(d, d, GateParams.zeros(8)), [0.5])

    def test_saturated_gate_takes_observation(self):
        centers, _ = single_ray()
        h = DepthDistribution(probs=one_hot(1), bin_centers=centers)
        g = DepthDistribution(probs=one_hot(5), bin_centers=centers)
        gates = gate(h, g, GateParams.zeros(8, bias=50.0))
        assert gates[0] >= 1.0 - 1e-15
        np.testing.assert_allclose(geometry_update(h, g, gates).probs, g.probs, atol=1e-15)

    @pytest.mark.parametrize("bias", [-800.0, -50.0, 50.0, 800.0])
    def test_gate_stays_inside_the_open_interval(self, bias):
        centers, _ = single_ray()
        d = DepthDistribution(probs=one_hot(2), bin_centers=centers)
        gates = gate(d, d, GateParams.zeros(8, bias=bias))
        assert 0.0 < gates[0] < 1.0

    def test_agreement_is_a_fixed_point(self):
        rng = np.random.default_rng(31)
        probs = rng.dirichlet(np.ones(5), size=3)
        d = DepthDistribution(probs=probs, bin_centers=np.arange(5.0))
        out = geometry_update(d, d, rng.uniform(0, 1, size=3))
        np.testing.assert_array_equal(out.probs, probs)

    def test_gates_outside_unit_interval(self):
        centers, _ = single_ray()
        d = DepthDistribution(probs=one_hot(1), bin_centers=centers)
        with pytest.raises(ValueError):
            geometry_update(d, d, [1.5])

    def test_simplex_preserved_over_a_sequence(self):
        rng = np.random.default_rng(32)
        bins = 12
        centers = np.linspace(1.0, 12.0, bins)
        u, v = np.meshgrid(np.arange(4.0), np.arange(3.0), indexing='ij')
        origins = np.stack([u.ravel(), v.ravel(), np.zeros(12)], axis=1)
        directions = np.tile([0.0, 0.0, 1.0], (12, 1))
        params = GateParams(weight=rng.standard_normal(2 * bins), bias=0.3)
        fusion = GeometryFusion(params)

        h = None
        for _ in range(50):
            transform = RigidTransform.from_yaw(rng.uniform(-0.2, 0.2), rng.uniform(-0.7, 0.7, size=3), (1.5, 1.0, 5.0))
            pose = CameraPose(transform=transform, origins=origins, directions=directions)
            g = DepthDistribution(probs=rng.dirichlet(np.ones(bins), size=12), bin_centers=centers)
            h = fusion.step(h, g, pose)
            assert np.all(h.probs >= 0.0)
            np.testing.assert_allclose(h.probs.sum(axis=1), 1.0, rtol=0.0, atol=1e-9)

    def test_invalid_rows_rejected(self):
        with pytest.raises(ValueError):
            DepthDistribution(probs=[[0.5, 0.6]], bin_centers=[1.0, 2.0])
        with pytest.raises(ValueError):
            DepthDistribution(probs=[[1.5, -0.5]], bin_centers=[1.0, 2.0])


class TestVoxelFusion:
    def test_memoryless_weights_return_the_frame(self):
        rng = np.random.default_rng(40)
        c, extents = 3, (3, 4, 2)
        h = VoxelHidden(state=VoxelGrid(data=rng.standard_normal((c, *extents))))
        v = VoxelGrid(data=rng.standard_normal((c, *extents)))
        w = FusionWeights(A_v=np.zeros((c, c)), B_v=np.eye(c))
        out = voxel_update(h, v, MotionField.zeros(extents), RigidTransform.identity(), w)
        np.testing.assert_array_equal(out.state.data, v.data)

    def test_ema_without_motion(self):
        rng = np.random.default_rng(41)
        c, extents = 2, (3, 3, 3)
        h = VoxelHidden(state=VoxelGrid(data=rng.standard_normal((c, *extents))))
        v = VoxelGrid(data=rng.standard_normal((c, *extents)))
        out = voxel_update(h, v, MotionField.zeros(extents), RigidTransform.identity(), FusionWeights.ema(c, 0.25))
        np.testing.assert_allclose(out.state.data, 0.25 * h.state.data + 0.75 * v.data, atol=1e-15)

    def test_ema_steady_state_variance(self):
        rng = np.random.default_rng(42)
        extents, sigma, alpha = (32, 32, 16), 0.8, 0.5
        truth = rng.standard_normal((1, *extents))
        fusion = VoxelFusion(FusionWeights.ema(1, alpha))
        zero, identity = MotionField.zeros(extents), RigidTransform.identity()

        h = None
        for t in range(1, 31):
            v = VoxelGrid(data=truth + sigma * rng.standard_normal((1, *extents)))
            h = fusion.step(h, v, zero, identity, t)

        measured = np.var(h.state.data - truth)
        expected = sigma ** 2 * (1.0 - alpha) / (1.0 + alpha)
        assert abs(measured - expected) <= 0.1 * expected

    def test_update_is_jointly_linear(self):
        rng = np.random.default_rng(44)
        c, extents = 3, (4, 3, 3)
        w = FusionWeights(A_v=rng.standard_normal((c, c)), B_v=rng.standard_normal((c, c)))
        motion = MotionField(offsets=rng.uniform(-0.4, 0.4, size=(3, *extents)))
        transform = RigidTransform.from_yaw(0.2)
        h1, h2, v1, v2 = (rng.standard_normal((c, *extents)) for _ in range(4))
        a, b = 0.7, -1.3

        def update(h, v):
            return voxel_update(VoxelHidden(state=VoxelGrid(data=h)), VoxelGrid(data=v), motion, transform, w).state.data

        np.testing.assert_allclose(
            update(a * h1 + b * h2, a * v1 + b * v2),
            a * update(h1, v1) + b * update(h2, v2),
            atol=1e-12,
        )

    def test_static_scene_converges_geometrically(self):
        rng = np.random.default_rng(45)
        c, extents, alpha = 2, (4, 4, 3), 0.5
        truth = VoxelGrid(data=rng.standard_normal((c, *extents)))
        h = VoxelHidden(state=VoxelGrid(data=rng.standard_normal((c, *extents))))
        start = np.abs(h.state.data - truth.data).max()
        zero, identity = MotionField.zeros(extents), RigidTransform.identity()
        for t in range(2, 12):
            h = voxel_update(h, truth, zero, identity, FusionWeights.ema(c, alpha))
            assert np.abs(h.state.data - truth.data).max() <= alpha ** (t - 1) * start + 1e-12

    def test_first_frame_starts_from_the_frame(self):
        rng = np.random.default_rng(43)
        v = VoxelGrid(data=rng.standard_normal((4, 2, 2, 2)))
        fusion = VoxelFusion(FusionWeights.ema(4, 0.5), time_embedding=True, dt=0.5)
        out = fusion.step(None, v, MotionField.zeros((2, 2, 2)), RigidTransform.from_yaw(0.3), 3)
        expected = v.data + time_embed(3, 0.5, 4).reshape(-1, 1, 1, 1)
        np.testing.assert_allclose(out.state.data, expected, atol=1e-15)

    def test_time_embedding_values(self):
        np.testing.assert_array_equal(time_embed(0, 0.5, 4), [0.0, 1.0, 0.0, 1.0])
        emb = time_embed(2, 0.5, 4)
        np.testing.assert_allclose(emb, [np.sin(1.0), np.cos(1.0), np.sin(0.01), np.cos(0.01)])
        with pytest.raises(ConfigError):
            time_embed(1, 0.5, 3)

    def test_prop1_identity_case_is_ema(self):
        w = prop1_transform(GDStepWeights(A=np.eye(3), B=np.eye(3), eta=0.25))
        np.testing.assert_array_equal(w.A_v, 0.5 * np.eye(3))
        np.testing.assert_array_equal(w.B_v, 0.5 * np.eye(3))

    def test_prop1_equivalence(self):
        rng = np.random.default_rng(44)
        for _ in range(100):
            c = int(rng.integers(1, 9))
            g = GDStepWeights(A=rng.standard_normal((c, c)), B=rng.standard_normal((c, c)), eta=rng.uniform(0, 1))
            assert prop1_check(g, rng.standard_normal(c), rng.standard_normal(c)) <= 1e-11

    def test_weight_sources(self, tmp_path):
        ema = load_fusion_weights(VoxelConfig(alpha=0.3), 2)
        np.testing.assert_allclose(ema.A_v, 0.3 * np.eye(2))

        gd = load_fusion_weights(VoxelConfig(weights='gd', gd_eta=0.1), 2)
        np.testing.assert_allclose(gd.A_v, 0.8 * np.eye(2))
        np.testing.assert_allclose(gd.B_v, 0.2 * np.eye(2))

        stacked = np.stack([np.eye(2), 2.0 * np.eye(2)])
        write_tensor(tmp_path / "w.gdft", stacked)
        dense = load_fusion_weights(VoxelConfig(weights='dense', weights_file=tmp_path / "w.gdft"), 2)
        np.testing.assert_array_equal(dense.B_v, 2.0 * np.eye(2))
        with pytest.raises(ConfigError):
            load_fusion_weights(VoxelConfig(weights='dense', weights_file=tmp_path / "w.gdft"), 3)

    def test_channel_mismatch(self):
        h = VoxelHidden(state=VoxelGrid.zeros(2, (2, 2, 2)))
        with pytest.raises(ShapeError):
            voxel_update(h, VoxelGrid.zeros(3, (2, 2, 2)), MotionField.zeros((2, 2, 2)),
                         RigidTransform.identity(), FusionWeights.ema(2, 0.5))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
