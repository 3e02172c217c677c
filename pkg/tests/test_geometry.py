"""Tests for double-quaternion rotations, covariance assembly and temporal slicing."""

import numpy as np
import pytest

from gaussians.cloud import GaussianCloud
from gaussians.geometry import (
    Gaussian4D,
    Quaternion,
    covariance4,
    covariance4_batch,
    hamilton_product,
    params_from_covariance,
    quaternion_pair_from_rotation,
    rotor4,
    slice_backward,
    slice_batch,
    slice_gaussian,
    temporal_filter,
)
from tests.oracles import central_difference, conditional_gaussian, relative_error
from utils.errors import InvalidParameterError

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def hamilton_scalar(p, q):
    a1, b1, c1, d1 = p
    a2, b2, c2, d2 = q
    return np.array(
        [
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ]
    )


def random_gaussian(rng, log_scale=(-1.0, 0.0)) -> Gaussian4D:
    return Gaussian4D(
        mu4=rng.normal(size=4),
        q_l=rng.normal(size=4),
        q_r=rng.normal(size=4),
        s4=rng.uniform(*log_scale, size=4),
        c_dc=rng.normal(size=3),
        o_logit=rng.normal(),
    )


class TestQuaternion:
    def test_normalized_has_unit_norm(self):
        q = Quaternion(w=3.0, x=-1.0, y=2.0, z=0.5).normalized()
        assert abs(q.norm() - 1.0) < 1e-12

    def test_normalized_keeps_direction(self):
        q = Quaternion(w=1.0, x=2.0, y=3.0, z=4.0).normalized()
        np.testing.assert_allclose(q.as_array(), np.array([1.0, 2.0, 3.0, 4.0]) / np.sqrt(30.0), atol=1e-15)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(InvalidParameterError):
            Quaternion(w=0.0).normalized()

    def test_hamilton_product_matches_scalar_formula(self, rng):
        p, q = rng.normal(size=4), rng.normal(size=4)
        np.testing.assert_allclose(hamilton_product(p, q), hamilton_scalar(p, q), atol=1e-14)


class TestRotor4:
    def test_identity(self):
        np.testing.assert_array_equal(rotor4(IDENTITY, IDENTITY), np.eye(4))

    def test_random_is_proper_rotation(self, rng):
        for _ in range(20):
            rotation = rotor4(rng.normal(size=4), rng.normal(size=4))
            np.testing.assert_allclose(rotation.T @ rotation, np.eye(4), atol=1e-12)
            assert np.linalg.det(rotation) == pytest.approx(1.0, abs=1e-12)

    def test_matches_basis_products(self, rng):
        q_l = rng.normal(size=4)
        q_r = rng.normal(size=4)
        ql_unit, qr_unit = q_l / np.linalg.norm(q_l), q_r / np.linalg.norm(q_r)
        rotation = rotor4(q_l, q_r)
        for k in range(4):
            e = np.eye(4)[k]
            expected = hamilton_scalar(hamilton_scalar(ql_unit, e), qr_unit)
            np.testing.assert_allclose(rotation @ e, expected, atol=1e-12)

    def test_right_rotation_in_one_plane(self):
        theta = 0.3
        rotation = rotor4(IDENTITY, [np.cos(theta), np.sin(theta), 0.0, 0.0])
        for k in range(4):
            e = np.eye(4)[k]
            expected = hamilton_scalar(e, [np.cos(theta), np.sin(theta), 0.0, 0.0])
            np.testing.assert_allclose(rotation @ e, expected, atol=1e-12)

    def test_batch_zero_norm_reports_index(self):
        with pytest.raises(InvalidParameterError) as err:
            rotor4(np.array([IDENTITY, IDENTITY]), np.array([IDENTITY, np.zeros(4)]))
        assert err.value.index == 1
        assert "q_r" in str(err.value)

    def test_accepts_quaternion_models(self):
        rotation = rotor4(Quaternion(), Quaternion(w=2.0))
        np.testing.assert_allclose(rotation, np.eye(4), atol=1e-15)


class TestCovariance4:
    def test_diagonal_case(self):
        g = Gaussian4D(np.zeros(4), IDENTITY, IDENTITY, np.log([1.0, 2.0, 3.0, 4.0]), np.zeros(3), 0.0)
        np.testing.assert_allclose(covariance4(g), np.diag([1.0, 4.0, 9.0, 16.0]), atol=1e-12)

    def test_symmetric_positive_definite(self, rng):
        for _ in range(20):
            sigma = covariance4(random_gaussian(rng))
            np.testing.assert_allclose(sigma, sigma.T, atol=1e-14)
            assert np.linalg.eigvalsh(sigma).min() > 0

    def test_log_scale_shift_scales_covariance(self, rng):
        g = random_gaussian(rng)
        shifted = g.copy()
        shifted.s4 = g.s4 + np.log(2.0)
        np.testing.assert_allclose(covariance4(shifted), 4.0 * covariance4(g), rtol=1e-12, atol=1e-14)

    def test_batch_matches_single(self, rng):
        gs = [random_gaussian(rng) for _ in range(5)]
        batch = covariance4_batch(
            np.array([g.q_l for g in gs]), np.array([g.q_r for g in gs]), np.array([g.s4 for g in gs])
        )
        for g, sigma in zip(gs, batch):
            np.testing.assert_allclose(sigma, covariance4(g), atol=1e-14)


class TestSlice:
    def test_block_diagonal_case(self):
        g = Gaussian4D([0.1, 0.2, 0.3, 0.5], IDENTITY, IDENTITY, np.log([0.5, 1.0, 2.0, 0.3]), np.zeros(3), 0.0)
        for t in (0.0, 0.5, 0.9):
            sliced = slice_gaussian(g, t)
            np.testing.assert_allclose(sliced.sigma3, np.diag([0.25, 1.0, 4.0]), atol=1e-14)
            np.testing.assert_allclose(sliced.mu3_t, [0.1, 0.2, 0.3], atol=1e-15)
        assert slice_gaussian(g, 0.5).temporal_opacity == pytest.approx(1.0)

    def test_matches_conditional_gaussian(self, rng):
        for _ in range(200):
            g = random_gaussian(rng)
            t = rng.uniform(-1.0, 2.0)
            mean, cov = conditional_gaussian(g.mu4, covariance4(g), t)
            sliced = slice_gaussian(g, t)
            assert relative_error(sliced.sigma3, cov) < 1e-6
            np.testing.assert_allclose(sliced.mu3_t, mean, rtol=1e-6, atol=1e-9)

    def test_opacity_one_sigma_away(self, rng):
        g = random_gaussian(rng)
        w = covariance4(g)[3, 3]
        for sign in (-1.0, 1.0):
            sliced = slice_gaussian(g, g.mu4[3] + sign * np.sqrt(w))
            assert sliced.temporal_opacity == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_sliced_covariance_is_psd(self, rng):
        for _ in range(50):
            sigma3 = slice_gaussian(random_gaussian(rng, log_scale=(-4.0, 1.0)), 0.3).sigma3
            np.testing.assert_allclose(sigma3, sigma3.T, atol=1e-10)
            assert np.linalg.eigvalsh(sigma3).min() >= -1e-9

    def test_backward_matches_finite_differences(self, rng):
        n = 3
        mu4 = rng.normal(size=(n, 4))
        q_l = rng.normal(size=(n, 4))
        q_r = rng.normal(size=(n, 4))
        s4 = rng.uniform(-1.0, 0.0, size=(n, 4))
        t = 0.4
        a, b, c = rng.normal(size=(n, 3)), rng.normal(size=(n, 3, 3)), rng.normal(size=n)

        def loss():
            sliced, _ = slice_batch(mu4, q_l, q_r, s4, t)
            return float(np.sum(a * sliced.mu3_t) + np.sum(b * sliced.sigma3) + np.sum(c * sliced.temporal_opacity))

        _, terms = slice_batch(mu4, q_l, q_r, s4, t)
        sym_b = 0.5 * (b + np.swapaxes(b, -1, -2))
        grads = slice_backward(terms, a, sym_b, c)
        for analytic, param in zip(grads, (mu4, q_l, q_r, s4)):
            assert relative_error(analytic, central_difference(loss, param)) < 1e-5


class TestTemporalFilter:
    def test_centre_passes(self):
        cloud = GaussianCloud(mu4=[[0.0, 0.0, 0.0, 0.5]], q_l=[IDENTITY], q_r=[IDENTITY], s4=[[0, 0, 0, -2.0]],
                              c_dc=[[0, 0, 0]], o_logit=[0.0])
        np.testing.assert_array_equal(temporal_filter(cloud, 0.5, 0.05), [0])

    def test_narrow_far_gaussian_filtered(self):
        cloud = GaussianCloud(mu4=[[0.0, 0.0, 0.0, 0.0]], q_l=[IDENTITY], q_r=[IDENTITY], s4=[[0, 0, 0, -8.0]],
                              c_dc=[[0, 0, 0]], o_logit=[0.0])
        assert temporal_filter(cloud, 1.0, 0.05).size == 0

    def test_matches_direct_evaluation(self, rng):
        cloud = GaussianCloud.random(100, rng)
        t = 0.37
        expected = [
            i
            for i in range(cloud.count)
            if np.exp(-((t - cloud.mu4[i, 3]) ** 2) / (2.0 * covariance4(cloud.gaussian(i))[3, 3])) > 0.05
        ]
        np.testing.assert_array_equal(temporal_filter(cloud, t, 0.05), expected)

    def test_empty_cloud(self):
        assert temporal_filter(GaussianCloud(), 0.5).size == 0

    @pytest.mark.parametrize("threshold", [-0.1, 1.0, 2.0])
    def test_threshold_domain(self, rng, threshold):
        with pytest.raises(InvalidParameterError):
            temporal_filter(GaussianCloud.random(3, rng), 0.5, threshold)


class TestInverseMaps:
    def test_rotation_round_trip(self, rng):
        for _ in range(20):
            rotation = rotor4(rng.normal(size=4), rng.normal(size=4))
            q_l, q_r = quaternion_pair_from_rotation(rotation)
            np.testing.assert_allclose(rotor4(q_l, q_r), rotation, atol=1e-10)

    def test_covariance_round_trip(self, rng):
        for _ in range(20):
            sigma4 = covariance4(random_gaussian(rng))
            q_l, q_r, s4 = params_from_covariance(sigma4)
            np.testing.assert_allclose(covariance4_batch(q_l, q_r, s4)[0], sigma4, atol=1e-10)
