import numpy as np
import pytest

from bsgm.model import OriginalParams
from bsgm.simulate import (
    InvalidCondition,
    NonPSDJoint,
    SimCondition,
    condition_to_params,
    gen_dataset,
    gen_schedule,
    joint_factor_tic_moments,
    sample_factors_tics,
)
from bsgm.model import trajectory_batch


def base_condition(**kw):
    defaults = dict(n=200, n_waves=10, knot_mean=4.5, knot_sd=0.3, slope_diff=-1.6,
                    explained_share=0.13, theta_eps=1.0, delta=0.25)
    defaults.update(kw)
    return SimCondition(**defaults)


class TestCondition:
    def test_second_slope_mean(self):
        theta = condition_to_params(base_condition(slope_diff=-1.6))
        assert theta.alpha[2] == pytest.approx(-3.4)

    def test_knot_variance(self):
        theta = condition_to_params(base_condition(knot_sd=0.3))
        assert theta.psi[3, 3] == pytest.approx(0.09)

    def test_zero_knot_sd_zeroes_paths_and_covariances(self):
        theta = condition_to_params(base_condition(knot_sd=0.0))
        assert theta.psi[3, 3] == 0.0
        np.testing.assert_array_equal(theta.beta[3], 0.0)
        np.testing.assert_array_equal(theta.psi[3, :3], 0.0)

    def test_explained_share_identity(self):
        for share in (0.13, 0.26):
            theta = condition_to_params(base_condition(explained_share=share))
            explained = np.diag(theta.beta @ theta.phi @ theta.beta.T)
            total = explained + np.diag(theta.psi)
            np.testing.assert_allclose(explained[:3] / total[:3], share, atol=1e-12)
            # knot row follows the same identity whenever it has spread
            theta2 = condition_to_params(base_condition(explained_share=share, knot_sd=0.6))
            explained2 = np.diag(theta2.beta @ theta2.phi @ theta2.beta.T)
            total2 = explained2 + np.diag(theta2.psi)
            np.testing.assert_allclose(explained2 / total2, share, atol=1e-12)

    def test_knot_outside_range_rejected(self):
        with pytest.raises(InvalidCondition):
            base_condition(n_waves=6, knot_mean=5.5)

    def test_share_bounds(self):
        with pytest.raises(InvalidCondition):
            base_condition(explained_share=0.0)


class TestJointMoments:
    def test_zero_paths_block_diagonal(self):
        theta = condition_to_params(base_condition())
        theta = OriginalParams(alpha=theta.alpha, psi=theta.psi, beta=np.zeros((4, 2)),
                               mu_x=theta.mu_x, phi=theta.phi, theta_eps=theta.theta_eps)
        _, sigma = joint_factor_tic_moments(theta)
        np.testing.assert_allclose(sigma[:4, :4], theta.psi)
        np.testing.assert_array_equal(sigma[:4, 4:], 0.0)
        np.testing.assert_allclose(sigma[4:, 4:], theta.phi)

    def test_cross_block_equals_paths_under_identity_phi(self):
        theta = condition_to_params(base_condition())
        _, sigma = joint_factor_tic_moments(theta)
        np.testing.assert_allclose(sigma[:4, 4:], theta.beta, atol=1e-14)

    def test_factor_marginal_variance(self):
        theta = condition_to_params(base_condition(explained_share=0.26))
        _, sigma = joint_factor_tic_moments(theta)
        expected = np.diag(theta.beta @ theta.phi @ theta.beta.T) + np.diag(theta.psi)
        np.testing.assert_allclose(np.diag(sigma)[:4], expected, atol=1e-14)


class TestSampling:
    def test_large_sample_means(self):
        theta = condition_to_params(base_condition())
        rng = np.random.default_rng(7)
        eta, x = sample_factors_tics(theta, 100_000, rng)
        _, sigma = joint_factor_tic_moments(theta)
        se = np.sqrt(np.diag(sigma)[:4] / 100_000)
        np.testing.assert_array_less(np.abs(eta.mean(axis=0) - theta.alpha), 3 * se + 1e-12)
        np.testing.assert_array_less(np.abs(x.mean(axis=0)), 3 * np.sqrt(1.0 / 100_000))

    def test_zero_covariance_gives_constant_rows(self):
        theta = OriginalParams(alpha=[1.0, 2.0, 3.0, 4.0], psi=np.zeros((4, 4)),
                               beta=np.zeros((4, 2)), mu_x=np.zeros(2),
                               phi=np.zeros((2, 2)), theta_eps=1.0)
        eta, x = sample_factors_tics(theta, 5, np.random.default_rng(0))
        np.testing.assert_array_equal(eta, np.tile([1.0, 2.0, 3.0, 4.0], (5, 1)))
        np.testing.assert_array_equal(x, np.zeros((5, 2)))

    def test_same_seed_same_draws(self):
        theta = condition_to_params(base_condition())
        a = sample_factors_tics(theta, 50, np.random.default_rng(42))
        b = sample_factors_tics(theta, 50, np.random.default_rng(42))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_non_psd_rejected(self):
        psi = np.eye(4)
        psi[0, 1] = psi[1, 0] = 2.0
        theta = OriginalParams(alpha=np.zeros(4), psi=psi, beta=np.zeros((4, 0)),
                               mu_x=np.zeros(0), phi=np.zeros((0, 0)), theta_eps=1.0)
        with pytest.raises(NonPSDJoint):
            sample_factors_tics(theta, 10, np.random.default_rng(0))


class TestSchedule:
    def test_zero_window_gives_base_waves(self):
        t = gen_schedule(4, 6, 0.0, np.random.default_rng(1))
        np.testing.assert_array_equal(t, np.tile(np.arange(6.0), (4, 1)))

    def test_cells_inside_window(self):
        t = gen_schedule(500, 10, 0.25, np.random.default_rng(2))
        base = np.arange(10.0)
        assert np.all(t >= base - 0.25) and np.all(t <= base + 0.25)

    def test_rows_strictly_increasing_near_half(self):
        t = gen_schedule(2000, 6, 0.49, np.random.default_rng(3))
        assert np.all(np.diff(t, axis=1) > 0)

    def test_knot_identification_window(self):
        # every person is observed on both sides of the knot for all
        # design-grid placements
        for n_waves, knot in ((6, 2.5), (10, 3.5), (10, 4.5), (10, 5.5)):
            t = gen_schedule(300, n_waves, 0.25, np.random.default_rng(4))
            assert t.max(axis=1).min() > knot
            assert t.min(axis=1).max() < knot


class TestGenDataset:
    def test_noiseless_data_lies_on_curves(self):
        cond = base_condition(theta_eps=0.0, knot_sd=0.0, n=50)
        rng = np.random.default_rng(5)
        ds, truth = gen_dataset(cond, rng)
        eta = np.tile(truth.alpha, (50, 1))
        # covariates still shift the factors; regenerate the factor draws
        rng2 = np.random.default_rng(5)
        from bsgm.simulate import sample_factors_tics as sft
        eta2, _ = sft(truth, 50, rng2)
        np.testing.assert_allclose(ds.y, trajectory_batch(eta2, ds.t), atol=1e-12)

    def test_residual_variance_close_to_truth(self):
        cond = base_condition(n=5000, theta_eps=2.0)
        ds, truth = gen_dataset(cond, np.random.default_rng(6))
        rng2 = np.random.default_rng(6)
        eta, _ = sample_factors_tics(truth, cond.n, rng2)
        t = gen_schedule(cond.n, cond.n_waves, cond.delta, rng2)
        resid = ds.y - trajectory_batch(eta, t)
        assert abs(resid.var() / truth.theta_eps - 1.0) < 0.05

    def test_same_condition_same_seed_identical(self):
        cond = base_condition(n=30)
        a, _ = gen_dataset(cond, np.random.default_rng(11))
        b, _ = gen_dataset(cond, np.random.default_rng(11))
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.x, b.x)
