"""Synthetic data generation for the Monte Carlo evaluation design.

A condition fixes the sample size, number of waves, knot placement and
spread, slope difference, covariate effect size, and residual variance.
Growth factors and covariates are drawn jointly from a single normal
distribution whose blocks follow from the path coefficients, occasions
are jittered uniformly around equally spaced waves, and outcomes are the
piecewise curves plus white noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LongitudinalDataset, OriginalParams, trajectory_batch

# Design block held fixed across all conditions: intercept mean/variance,
# first-slope mean, slope variances, factor correlation, two standardized
# independent covariates.
INTERCEPT_MEAN = 100.0
INTERCEPT_VAR = 25.0
SLOPE1_MEAN = -5.0
SLOPE_VAR = 1.0
FACTOR_CORR = 0.3
N_TICS = 2


class InvalidCondition(ValueError):
    """Raised when a simulation condition is internally inconsistent."""


class NonPSDJoint(ValueError):
    """Raised when the joint factor/covariate covariance cannot be factorized."""


@dataclass(frozen=True)
class SimCondition:
    """One cell of the simulation design grid.

    ``slope_diff`` is the first-slope mean minus the second-slope mean;
    ``explained_share`` is the fraction of each factor's total variance
    attributable to the covariates; ``delta`` is the half-width of the
    uniform time window around each wave.
    """

    n: int
    n_waves: int
    knot_mean: float
    knot_sd: float
    slope_diff: float
    explained_share: float
    theta_eps: float
    delta: float = 0.25

    def __post_init__(self):
        if self.n < 1:
            raise InvalidCondition("n must be at least 1")
        if self.n_waves < 2:
            raise InvalidCondition("need at least two waves")
        if not 0.0 < self.knot_mean < self.n_waves - 1:
            raise InvalidCondition(
                f"knot mean {self.knot_mean} must lie strictly inside (0, {self.n_waves - 1})"
            )
        if self.knot_sd < 0:
            raise InvalidCondition("knot sd must be nonnegative")
        if not 0.0 < self.explained_share < 1.0:
            raise InvalidCondition("explained share must lie in (0, 1)")
        if self.theta_eps < 0:
            raise InvalidCondition("residual variance must be nonnegative")
        if not 0.0 <= self.delta < 0.5:
            raise InvalidCondition("delta must lie in [0, 0.5) to keep waves ordered")


def condition_to_params(cond: SimCondition) -> OriginalParams:
    """Population parameters implied by a design condition.

    The design variances are unexplained variances: each factor's path
    coefficients are sized so the covariates add exactly the requested
    share of the resulting total variance.  A zero-spread knot gets no
    paths and a zero covariance row.
    """
    alpha = np.array([
        INTERCEPT_MEAN,
        SLOPE1_MEAN,
        SLOPE1_MEAN - cond.slope_diff,
        cond.knot_mean,
    ])
    sds = np.array([np.sqrt(INTERCEPT_VAR), np.sqrt(SLOPE_VAR), np.sqrt(SLOPE_VAR), cond.knot_sd])
    corr = np.full((4, 4), FACTOR_CORR)
    np.fill_diagonal(corr, 1.0)
    psi = corr * np.outer(sds, sds)
    share = cond.explained_share
    path = np.sqrt(share * np.diag(psi) / (N_TICS * (1.0 - share)))
    beta = np.repeat(path[:, None], N_TICS, axis=1)
    return OriginalParams(
        alpha=alpha,
        psi=psi,
        beta=beta,
        mu_x=np.zeros(N_TICS),
        phi=np.eye(N_TICS),
        theta_eps=cond.theta_eps,
    )


def joint_factor_tic_moments(theta: OriginalParams):
    """Mean and covariance of the stacked (factors, covariates) vector.

    The factor block combines path-induced and unexplained variance; the
    cross block is the paths times the covariate covariance.
    """
    b_phi = theta.beta @ theta.phi
    top = np.hstack([b_phi @ theta.beta.T + theta.psi, b_phi])
    bottom = np.hstack([b_phi.T, theta.phi])
    sigma = np.vstack([top, bottom])
    mu = np.concatenate([theta.alpha, theta.mu_x])
    return mu, 0.5 * (sigma + sigma.T)


def sample_factors_tics(theta: OriginalParams, n, rng):
    """Draw n joint (factor, covariate) rows.

    Zero-variance coordinates (for example the knot when its spread is
    zero) are excluded from the factorization and filled with their
    means, so the draw never factorizes a singular matrix.
    """
    mu, sigma = joint_factor_tic_moments(theta)
    d = mu.shape[0]
    live = np.diag(sigma) > 0.0
    out = np.tile(mu, (n, 1))
    k = int(live.sum())
    if k == 0:
        return out[:, :4], out[:, 4:]
    sub = sigma[np.ix_(live, live)]
    w, v = np.linalg.eigh(sub)
    scale = max(w[-1], 1.0)
    if w[0] < -1e-9 * scale:
        raise NonPSDJoint(f"joint covariance has negative eigenvalue {w[0]:.3e}")
    w = np.clip(w, 0.0, None)
    factor = v * np.sqrt(w)
    z = rng.standard_normal((n, k))
    out[:, live] += z @ factor.T
    return out[:, :4], out[:, 4:]


def gen_schedule(n, n_waves, delta, rng):
    """Individual measurement occasions around unit-spaced waves.

    Each cell is uniform on [j - delta, j + delta]; delta below one half
    keeps every row strictly increasing.
    """
    if not 0.0 <= delta < 0.5:
        raise ValueError("delta must lie in [0, 0.5)")
    base = np.arange(n_waves, dtype=float)
    return base + rng.uniform(-delta, delta, size=(n, n_waves))


def gen_dataset(cond: SimCondition, rng):
    """Generate one dataset for a condition plus the generating truth.

    Draw order is fixed (factors and covariates, then occasions, then
    residuals) so a given (condition, seed) pair always yields the same
    dataset.
    """
    truth = condition_to_params(cond)
    eta, x = sample_factors_tics(truth, cond.n, rng)
    t = gen_schedule(cond.n, cond.n_waves, cond.delta, rng)
    noise = rng.standard_normal((cond.n, cond.n_waves)) * np.sqrt(cond.theta_eps)
    y = trajectory_batch(eta, t) + noise
    dataset = LongitudinalDataset(y=y, t=t, x=x)
    return dataset, truth
