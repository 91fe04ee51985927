"""
Phase 2 Test Script
Run this to verify the tensor primitives and trilinear sampling.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from phase2_tensors import (
    CoordField,
    RigidTransform,
    ShapeError,
    VoxelGrid,
    channel_mix,
    matmul,
    transform_coords,
    trilinear_jacobian,
    trilinear_sample,
    trilinear_splat,
    zscore_norm,
)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self):
        b = np.random.default_rng(0).standard_normal((3, 4))
        np.testing.assert_array_equal(matmul(np.eye(3), b), b)

    def test_matches_triple_loop_bitwise(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 2))
        np.testing.assert_array_equal(matmul(a, b), triple_loop(a, b))

    def test_zero_annihilates(self):
        a = np.random.default_rng(2).standard_normal((4, 3))
        np.testing.assert_array_equal(matmul(a, np.zeros((3, 5))), np.zeros((4, 5)))

    def test_inner_dims_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_channel_mix_adds_bias_per_row(self):
        out = channel_mix(np.eye(2), np.zeros((2, 3)), np.array([1.0, -2.0]))
        np.testing.assert_array_equal(out, [[1.0, 1.0, 1.0], [-2.0, -2.0, -2.0]])


class TestZScore:
    def test_columns_are_standardized(self):
        z = np.random.default_rng(3).standard_normal((6, 10)) * 4.0 + 2.0
        zhat, mu, sigma = zscore_norm(z, eps=1e-12)
        assert mu.shape == (1, 10) and sigma.shape == (1, 10)
        np.testing.assert_allclose(zhat.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose((zhat ** 2).mean(axis=0), 1.0, atol=1e-9)

    def test_single_channel_is_zero(self):
        zhat, mu, sigma = zscore_norm(np.array([[3.0, -1.0]]), eps=1e-6)
        np.testing.assert_array_equal(zhat, [[0.0, 0.0]])
        np.testing.assert_array_equal(mu, [[3.0, -1.0]])
        np.testing.assert_allclose(sigma, np.sqrt(1e-6))

    def test_constant_column_uses_eps(self):
        zhat, _, sigma = zscore_norm(np.full((4, 1), 7.0), eps=0.25)
        np.testing.assert_allclose(sigma, 0.5)
        np.testing.assert_array_equal(zhat, 0.0)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            zscore_norm(np.ones((2, 2)), eps=0.0)


class TestTypes:
    def test_flatten_roundtrip(self):
        data = np.arange(2 * 3 * 4 * 5, dtype=float).reshape(2, 3, 4, 5)
        grid = VoxelGrid(data=data)
        assert grid.flatten().shape == (2, 60)
        np.testing.assert_array_equal(VoxelGrid.from_flat(grid.flatten(), (3, 4, 5)).data, data)
        with pytest.raises(ShapeError):
            VoxelGrid.from_flat(grid.flatten(), (3, 4, 4))

    def test_rank_checked(self):
        with pytest.raises(ValidationError):
            VoxelGrid(data=np.zeros((2, 3, 4)))

    def test_canonical_lattice(self):
        p = CoordField.canonical((3, 4, 2))
        assert p.data.shape == (3, 3, 4, 2)
        np.testing.assert_array_equal(p.data[:, 2, 1, 0], [2.0, 1.0, 0.0])
        np.testing.assert_array_equal(p.data[:, 1, 3, 1], [1.0, 3.0, 1.0])

    def test_transform_inverse(self):
        t = RigidTransform.from_yaw(0.7, (1.0, -2.0, 0.5), center=(3.5, 3.5, 1.5))
        both = t.compose(t.inverse())
        np.testing.assert_allclose(both.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(both.translation, 0.0, atol=1e-12)
        np.testing.assert_allclose(t.rotation.T @ t.rotation, np.eye(3), atol=1e-12)

    def test_yaw_about_center_fixes_center(self):
        center = np.array([7.5, 7.5, 3.5])
        t = RigidTransform.from_yaw(0.3, center=center)
        np.testing.assert_allclose(t.apply_points(center), center, atol=1e-12)

    def test_compose_order(self):
        a = RigidTransform.from_yaw(np.pi / 2)
        b = RigidTransform(translation=(1.0, 0.0, 0.0))
        # b first, then a
        np.testing.assert_allclose(a.compose(b).apply_points([0.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValidationError):
            RigidTransform(rotation=np.diag([1.0, 2.0, 1.0]))

    def test_transform_coords_identity(self):
        p = CoordField.canonical((2, 3, 4))
        np.testing.assert_array_equal(transform_coords(RigidTransform.identity(), p).data, p.data)


class TestTrilinear:
    def test_lattice_sampling_is_exact(self):
        rng = np.random.default_rng(4)
        grid = VoxelGrid(data=rng.standard_normal((3, 4, 5, 6)))
        out = trilinear_sample(grid, CoordField.canonical((4, 5, 6)))
        np.testing.assert_array_equal(out.data, grid.data)

    def test_affine_field_is_reproduced(self):
        # f(p) = 1 + 0.5x - 0.25y + 2z is reproduced exactly inside the grid
        p = CoordField.canonical((4, 4, 4)).data
        f = 1.0 + 0.5 * p[0] - 0.25 * p[1] + 2.0 * p[2]
        grid = VoxelGrid(data=f[None])
        pt = np.array([1.25, 2.5, 0.75]).reshape(3, 1, 1, 1)
        out = trilinear_sample(grid, CoordField(data=pt)).data
        np.testing.assert_allclose(out.ravel(), [1.0 + 0.625 - 0.625 + 1.5], atol=1e-12)

    @pytest.mark.parametrize("axis", [0, 1, 2])
    def test_multilinear_along_each_axis(self, axis):
        rng = np.random.default_rng(7)
        grid = VoxelGrid(data=rng.standard_normal((2, 4, 3, 3)))
        start = np.array([1.2, 0.1, 1.4])
        direction = np.zeros(3)
        direction[axis] = 1.0
        # three collinear points inside one cell
        pts = np.stack([start + s * 0.5 * direction for s in (0.1, 0.4, 0.9)], axis=1)
        out = trilinear_sample(grid, CoordField(data=pts.reshape(3, 3, 1, 1))).data[:, :, 0, 0]
        slope_a = (out[:, 1] - out[:, 0]) / 0.3
        slope_b = (out[:, 2] - out[:, 1]) / 0.5
        np.testing.assert_allclose(slope_a, slope_b, atol=1e-12)

    def test_out_of_bounds_is_zero(self):
        grid = VoxelGrid(data=np.ones((1, 2, 2, 2)))
        pt = np.array([-3.0, 0.0, 0.0]).reshape(3, 1, 1, 1)
        np.testing.assert_array_equal(trilinear_sample(grid, CoordField(data=pt)).data, 0.0)

    def test_half_outside_edge(self):
        grid = VoxelGrid(data=np.ones((1, 2, 2, 2)))
        pt = np.array([1.5, 0.0, 0.0]).reshape(3, 1, 1, 1)
        np.testing.assert_allclose(trilinear_sample(grid, CoordField(data=pt)).data.ravel(), [0.5])

    def test_jacobian_of_affine_field(self):
        p = CoordField.canonical((4, 4, 4)).data
        grid = VoxelGrid(data=(0.5 * p[0] - 0.25 * p[1] + 2.0 * p[2])[None])
        pts = np.array([[1.3, 0.2, 2.6], [0.4, 1.7, 1.1]]).T.reshape(3, 2, 1, 1)
        jac = trilinear_jacobian(grid, CoordField(data=pts))
        assert jac.shape == (1, 3, 2, 1, 1)
        for sample in range(2):
            np.testing.assert_allclose(jac[0, :, sample, 0, 0], [0.5, -0.25, 2.0], atol=1e-12)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        grid = VoxelGrid(data=rng.standard_normal((2, 5, 4, 6)))
        cells = rng.integers(0, [4, 3, 5], size=(50, 3))
        pts = (cells + rng.uniform(0.05, 0.95, size=(50, 3))).T.reshape(3, 50, 1, 1)
        jac = trilinear_jacobian(grid, CoordField(data=pts))
        h = 1e-6
        for a in range(3):
            step = np.zeros((3, 1, 1, 1))
            step[a] = h
            plus = trilinear_sample(grid, CoordField(data=pts + step)).data
            minus = trilinear_sample(grid, CoordField(data=pts - step)).data
            np.testing.assert_allclose(jac[:, a], (plus - minus) / (2 * h), rtol=1e-6, atol=1e-8)

    def test_splat_is_adjoint_of_sample(self):
        rng = np.random.default_rng(6)
        extents = (4, 3, 5)
        grid = VoxelGrid(data=rng.standard_normal((2, *extents)))
        pts = rng.uniform(-0.5, 4.5, size=(3, 30))
        values = rng.standard_normal((2, 30))

        sampled = trilinear_sample(grid, CoordField(data=pts.reshape(3, 30, 1, 1))).data.reshape(2, 30)
        splatted, _ = trilinear_splat(values, pts, extents)
        np.testing.assert_allclose(np.sum(sampled * values), np.sum(grid.flatten() * splatted), rtol=1e-12, atol=1e-12)

    def test_splat_keeps_inside_mass(self):
        flat, kept = trilinear_splat(np.array([[2.0]]), np.array([[1.5], [0.5], [0.0]]), (3, 2, 1))
        np.testing.assert_allclose(flat.sum(), 2.0)
        np.testing.assert_allclose(kept, [1.0])

    def test_splat_shape_mismatch(self):
        with pytest.raises(ShapeError):
            trilinear_splat(np.zeros((1, 3)), np.zeros((3, 2)), (2, 2, 2))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
