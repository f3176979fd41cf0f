"""Core types, factor loadings, and model-implied moments.

A linear-linear piecewise trajectory is parameterized by four individual
growth factors: an intercept (value at t=0), a slope for each segment,
and the knot where the segments join.  Estimation works in a
reparameterized basis (level at the knot, mean of the two slopes, half
the slope difference, deviation of the knot from its mean) in which the
outcome is linear in the factors given the knot mean.  This module holds
both parameterizations, the loading matrices, and the implied mean /
covariance structure of the repeated measures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORIGINAL_FACTORS = ("intercept", "slope1", "slope2", "knot")
REPARAM_FACTORS = ("knot_level", "mid_slope", "half_diff", "knot_dev")

# Full model needs one extra wave for the free knot on top of the
# five-wave minimum of a fixed-knot bilinear curve.
MIN_WAVES_FULL = 6
MIN_WAVES_REDUCED = 5


def _vector(x, size=None, name="array"):
    arr = np.array(x, dtype=float, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


def _matrix(x, shape=None, name="matrix", symmetric=False, tol=1e-8):
    arr = np.array(x, dtype=float, copy=True)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if symmetric:
        if arr.shape[0] != arr.shape[1]:
            raise ValueError(f"{name} must be square, got {arr.shape}")
        if arr.size and np.max(np.abs(arr - arr.T)) > tol:
            raise ValueError(f"{name} is not symmetric within {tol}")
        arr = 0.5 * (arr + arr.T)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GrowthFactors:
    """Individual-level curve coefficients in the interpretable basis."""

    intercept: float
    slope1: float
    slope2: float
    knot: float

    def __post_init__(self):
        vals = (self.intercept, self.slope1, self.slope2, self.knot)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("growth factors must be finite")

    def as_array(self):
        return np.array([self.intercept, self.slope1, self.slope2, self.knot])


@dataclass(frozen=True)
class ReparamFactors:
    """Individual-level coefficients in the estimable basis.

    ``knot_level`` is the outcome value at the knot, ``mid_slope`` the
    average of the two segment slopes, ``half_diff`` half their
    difference, and ``knot_dev`` the deviation of the individual knot
    from the population knot mean.
    """

    knot_level: float
    mid_slope: float
    half_diff: float
    knot_dev: float

    def __post_init__(self):
        vals = (self.knot_level, self.mid_slope, self.half_diff, self.knot_dev)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("reparameterized factors must be finite")

    def as_array(self):
        return np.array([self.knot_level, self.mid_slope, self.half_diff, self.knot_dev])


@dataclass(frozen=True)
class OriginalParams:
    """Population parameters in the interpretable space.

    ``alpha`` holds the factor means (intercept, slope1, slope2, knot),
    ``psi`` the unexplained factor covariance, ``beta`` the covariate
    path coefficients (factors by covariates), ``mu_x`` / ``phi`` the
    covariate moments and ``theta_eps`` the residual variance.  Estimates
    may carry an indefinite ``psi``; propriety is diagnosed downstream,
    not enforced here.
    """

    alpha: np.ndarray
    psi: np.ndarray
    beta: np.ndarray
    mu_x: np.ndarray
    phi: np.ndarray
    theta_eps: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _vector(self.alpha, 4, "alpha"))
        object.__setattr__(self, "psi", _matrix(self.psi, (4, 4), "psi", symmetric=True))
        c = np.atleast_2d(np.asarray(self.beta, dtype=float)).shape[1] if np.asarray(self.beta).size else 0
        beta = np.asarray(self.beta, dtype=float).reshape(4, c) if c else np.zeros((4, 0))
        object.__setattr__(self, "beta", _matrix(beta, (4, c), "beta"))
        object.__setattr__(self, "mu_x", _vector(self.mu_x, c, "mu_x"))
        object.__setattr__(self, "phi", _matrix(self.phi, (c, c), "phi", symmetric=True))
        if not np.isfinite(self.theta_eps):
            raise ValueError("theta_eps must be finite")

    @property
    def n_covariates(self):
        return self.beta.shape[1]

    @property
    def knot_mean(self):
        return float(self.alpha[3])


@dataclass(frozen=True)
class ReparamParams:
    """Population parameters in the estimable space.

    The fourth entry of ``alpha`` is the knot mean itself: the knot-dev
    factor has mean zero by construction, and the knot mean is unchanged
    by the reparameterization, so it is stored in that slot.
    """

    alpha: np.ndarray
    psi: np.ndarray
    beta: np.ndarray
    mu_x: np.ndarray
    phi: np.ndarray
    theta_eps: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _vector(self.alpha, 4, "alpha"))
        object.__setattr__(self, "psi", _matrix(self.psi, (4, 4), "psi", symmetric=True))
        c = np.atleast_2d(np.asarray(self.beta, dtype=float)).shape[1] if np.asarray(self.beta).size else 0
        beta = np.asarray(self.beta, dtype=float).reshape(4, c) if c else np.zeros((4, 0))
        object.__setattr__(self, "beta", _matrix(beta, (4, c), "beta"))
        object.__setattr__(self, "mu_x", _vector(self.mu_x, c, "mu_x"))
        object.__setattr__(self, "phi", _matrix(self.phi, (c, c), "phi", symmetric=True))
        if not np.isfinite(self.theta_eps):
            raise ValueError("theta_eps must be finite")

    @property
    def n_covariates(self):
        return self.beta.shape[1]

    @property
    def knot_mean(self):
        return float(self.alpha[3])

    def factor_means(self):
        """Mean vector of the latent factors (knot-dev mean is zero)."""
        out = self.alpha.copy()
        out[3] = 0.0
        return out


@dataclass(frozen=True)
class ReducedParams:
    """Estimable-space parameters of the fixed-knot (three factor) model."""

    alpha: np.ndarray
    knot: float
    psi: np.ndarray
    beta: np.ndarray
    mu_x: np.ndarray
    phi: np.ndarray
    theta_eps: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _vector(self.alpha, 3, "alpha"))
        object.__setattr__(self, "psi", _matrix(self.psi, (3, 3), "psi", symmetric=True))
        c = np.atleast_2d(np.asarray(self.beta, dtype=float)).shape[1] if np.asarray(self.beta).size else 0
        beta = np.asarray(self.beta, dtype=float).reshape(3, c) if c else np.zeros((3, 0))
        object.__setattr__(self, "beta", _matrix(beta, (3, c), "beta"))
        object.__setattr__(self, "mu_x", _vector(self.mu_x, c, "mu_x"))
        object.__setattr__(self, "phi", _matrix(self.phi, (c, c), "phi", symmetric=True))
        if not np.isfinite(self.knot) or not np.isfinite(self.theta_eps):
            raise ValueError("knot and theta_eps must be finite")

    @property
    def n_covariates(self):
        return self.beta.shape[1]


@dataclass(frozen=True)
class ReducedOriginal:
    """Interpretable-space view of a fixed-knot model's parameters."""

    alpha: np.ndarray
    knot: float
    psi: np.ndarray
    beta: np.ndarray
    mu_x: np.ndarray
    phi: np.ndarray
    theta_eps: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _vector(self.alpha, 3, "alpha"))
        object.__setattr__(self, "psi", _matrix(self.psi, (3, 3), "psi", symmetric=True))
        c = np.atleast_2d(np.asarray(self.beta, dtype=float)).shape[1] if np.asarray(self.beta).size else 0
        beta = np.asarray(self.beta, dtype=float).reshape(3, c) if c else np.zeros((3, 0))
        object.__setattr__(self, "beta", _matrix(beta, (3, c), "beta"))
        object.__setattr__(self, "mu_x", _vector(self.mu_x, c, "mu_x"))
        object.__setattr__(self, "phi", _matrix(self.phi, (c, c), "phi", symmetric=True))

    @property
    def n_covariates(self):
        return self.beta.shape[1]


@dataclass(frozen=True)
class LongitudinalDataset:
    """Complete repeated-measures data with per-person occasions.

    ``y`` and ``t`` are (n, J); each row of ``t`` must be strictly
    increasing.  ``x`` holds time-invariant covariates, raw by default;
    ``x_centered`` marks covariates that are already centered so the
    fitting layer does not re-center them.  Missing cells are not
    supported.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    x_centered: bool = False

    def __post_init__(self):
        y = np.array(self.y, dtype=float, copy=True)
        t = np.array(self.t, dtype=float, copy=True)
        if y.ndim != 2 or t.ndim != 2:
            raise ValueError("y and t must be 2-d (individuals by waves)")
        if y.shape != t.shape:
            raise ValueError(f"y shape {y.shape} does not match t shape {t.shape}")
        if y.shape[0] < 1:
            raise ValueError("dataset needs at least one individual")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(t)):
            raise ValueError("y and t must be complete and finite")
        if np.any(np.diff(t, axis=1) <= 0):
            raise ValueError("each row of t must be strictly increasing")
        x = np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = np.zeros((y.shape[0], 0))
        if x.ndim == 1:
            x = x[:, None]
        x = np.array(x, dtype=float, copy=True)
        if x.shape[0] != y.shape[0]:
            raise ValueError("x must have one row per individual")
        if not np.all(np.isfinite(x)):
            raise ValueError("x must be complete and finite")
        for arr in (y, t, x):
            arr.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def n_individuals(self):
        return self.y.shape[0]

    @property
    def n_waves(self):
        return self.y.shape[1]

    @property
    def n_covariates(self):
        return self.x.shape[1]

    def centered_x(self):
        """Covariates centered at their sample means, plus the means."""
        if self.x_centered or self.n_covariates == 0:
            return self.x, np.zeros(self.n_covariates)
        means = self.x.mean(axis=0)
        return self.x - means, means


def loadings_full(times, knot_mean, half_diff_mean):
    """Loading matrix of the four-factor model at the given occasions.

    ``times`` may be a single occasion vector (J,) or a batch (n, J);
    one trailing axis of size four is appended.  The fourth column is
    the knot-deviation loading; its sign factor at an occasion exactly
    equal to the knot mean is taken as zero, the average of the two
    one-sided limits.
    """
    t = np.asarray(times, dtype=float)
    d = t - knot_mean
    sgn = np.sign(d)
    cols = (
        np.ones_like(d),
        d,
        np.abs(d),
        -half_diff_mean * (1.0 + sgn),
    )
    return np.stack(cols, axis=-1)


def loadings_reduced(times, knot):
    """Loading matrix of the fixed-knot (three factor) model."""
    t = np.asarray(times, dtype=float)
    d = t - knot
    return np.stack((np.ones_like(d), d, np.abs(d)), axis=-1)


def _symmetrize(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def model_moments_full(params: ReparamParams, t_row, mode="marginal", x=None):
    """Implied mean and covariance of one person's repeated measures.

    In marginal mode the covariates are integrated out, so the mean uses
    the covariate means and the covariance picks up the path-induced
    factor variance.  In conditional mode the supplied covariate vector
    enters the mean and only the unexplained factor covariance remains.
    """
    if mode not in ("marginal", "conditional"):
        raise ValueError(f"unknown mode {mode!r}")
    lam = loadings_full(np.asarray(t_row, dtype=float), params.knot_mean, params.alpha[2])
    if mode == "marginal":
        factor_mean = params.factor_means() + params.beta @ params.mu_x
        a = params.psi + params.beta @ params.phi @ params.beta.T
    else:
        if x is None and params.n_covariates > 0:
            raise ValueError("conditional mode requires a covariate vector")
        xv = np.zeros(0) if params.n_covariates == 0 else np.asarray(x, dtype=float)
        factor_mean = params.factor_means() + params.beta @ xv
        a = params.psi
    mu = lam @ factor_mean
    sigma = _symmetrize(lam @ a @ lam.T) + params.theta_eps * np.eye(lam.shape[0])
    return mu, sigma


def model_moments_reduced(params: ReducedParams, t_row, mode="marginal", x=None):
    """Fixed-knot analogue of :func:`model_moments_full`."""
    if mode not in ("marginal", "conditional"):
        raise ValueError(f"unknown mode {mode!r}")
    lam = loadings_reduced(np.asarray(t_row, dtype=float), params.knot)
    if mode == "marginal":
        factor_mean = params.alpha + params.beta @ params.mu_x
        a = params.psi + params.beta @ params.phi @ params.beta.T
    else:
        if x is None and params.n_covariates > 0:
            raise ValueError("conditional mode requires a covariate vector")
        xv = np.zeros(0) if params.n_covariates == 0 else np.asarray(x, dtype=float)
        factor_mean = params.alpha + params.beta @ xv
        a = params.psi
    mu = lam @ factor_mean
    sigma = _symmetrize(lam @ a @ lam.T) + params.theta_eps * np.eye(lam.shape[0])
    return mu, sigma


def predict_trajectory(factors: GrowthFactors, t_row):
    """Noise-free piecewise-linear curve at the given occasions."""
    t = np.asarray(t_row, dtype=float)
    pre = factors.intercept + factors.slope1 * t
    post = factors.intercept + factors.slope1 * factors.knot + factors.slope2 * (t - factors.knot)
    return np.where(t <= factors.knot, pre, post)


def trajectory_batch(eta, times):
    """Vectorized piecewise curves: eta is (n, 4), times is (n, J)."""
    eta = np.asarray(eta, dtype=float)
    t = np.asarray(times, dtype=float)
    icpt = eta[:, 0:1]
    s1 = eta[:, 1:2]
    s2 = eta[:, 2:3]
    knot = eta[:, 3:4]
    pre = icpt + s1 * t
    post = icpt + s1 * knot + s2 * (t - knot)
    return np.where(t <= knot, pre, post)
