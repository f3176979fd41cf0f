"""Delta-method transforms between the interpretable and estimable spaces.

The factor means map through a nonlinear function and its inverse; the
covariance blocks and covariate paths map through the Jacobians of those
functions evaluated at the means.  The published inverse-map Jacobian
carries a zero in its (1,4) cell, which makes the two Jacobians mutual
inverses everywhere except that cell (their product picks up the slope1
mean there).  We implement that matrix verbatim because the cell-wise
inverse expressions are consistent with it, and expose the algebraically
exact inverse behind a flag for sensitivity analysis.
"""

from __future__ import annotations

import numpy as np

from .model import OriginalParams, ReducedOriginal, ReducedParams, ReparamParams


def reparam_mean(mu):
    """Map factor means (intercept, slope1, slope2, knot) to the
    estimable basis; the returned fourth entry is the knot-deviation
    mean, which is zero by construction."""
    mu = np.asarray(mu, dtype=float)
    return np.array([
        mu[0] + mu[3] * mu[1],
        0.5 * (mu[1] + mu[2]),
        0.5 * (mu[2] - mu[1]),
        0.0,
    ])


def original_mean(mu_prime, knot_mean):
    """Inverse of :func:`reparam_mean`; ``mu_prime[3]`` is the
    knot-deviation mean (zero at the population level)."""
    mu_prime = np.asarray(mu_prime, dtype=float)
    return np.array([
        mu_prime[0] - knot_mean * mu_prime[1] + knot_mean * mu_prime[2],
        mu_prime[1] - mu_prime[2],
        mu_prime[1] + mu_prime[2],
        mu_prime[3] + knot_mean,
    ])


def reparam_jacobian(mu):
    """Jacobian of the forward mean map, evaluated at original means."""
    mu = np.asarray(mu, dtype=float)
    return np.array([
        [1.0, mu[3], 0.0, mu[1]],
        [0.0, 0.5, 0.5, 0.0],
        [0.0, -0.5, 0.5, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def original_jacobian(mu_prime, exact_inverse=False):
    """Jacobian of the inverse mean map, evaluated at estimable-space
    means whose fourth entry is the knot mean.

    With ``exact_inverse`` the (1,4) cell becomes minus the slope1 mean
    (recovered as mid_slope - half_diff), which makes this the exact
    matrix inverse of :func:`reparam_jacobian`.
    """
    mu_prime = np.asarray(mu_prime, dtype=float)
    g = mu_prime[3]
    top_right = -(mu_prime[1] - mu_prime[2]) if exact_inverse else 0.0
    return np.array([
        [1.0, -g, g, top_right],
        [0.0, 1.0, -1.0, 0.0],
        [0.0, 1.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def to_reparam(theta: OriginalParams) -> ReparamParams:
    """Transform interpretable parameters into the estimable space.

    Covariates are assumed centered; the covariate moments and residual
    variance pass through unchanged, and the knot mean is stored in the
    fourth mean slot because the knot-deviation mean is zero.
    """
    jac = reparam_jacobian(theta.alpha)
    alpha_prime = reparam_mean(theta.alpha)
    alpha_prime[3] = theta.alpha[3]
    psi_prime = jac @ theta.psi @ jac.T
    beta_prime = jac @ theta.beta
    return ReparamParams(
        alpha=alpha_prime,
        psi=0.5 * (psi_prime + psi_prime.T),
        beta=beta_prime,
        mu_x=theta.mu_x,
        phi=theta.phi,
        theta_eps=theta.theta_eps,
    )


def from_reparam(theta_prime: ReparamParams, exact_inverse=False) -> OriginalParams:
    """Transform estimable parameters back to the interpretable space."""
    jac = original_jacobian(theta_prime.alpha, exact_inverse=exact_inverse)
    mu_prime = theta_prime.alpha.copy()
    mu_prime[3] = 0.0
    alpha = original_mean(mu_prime, theta_prime.knot_mean)
    psi = jac @ theta_prime.psi @ jac.T
    beta = jac @ theta_prime.beta
    return OriginalParams(
        alpha=alpha,
        psi=0.5 * (psi + psi.T),
        beta=beta,
        mu_x=theta_prime.mu_x,
        phi=theta_prime.phi,
        theta_eps=theta_prime.theta_eps,
    )


def from_reparam_cellwise(theta_prime: ReparamParams) -> OriginalParams:
    """Scalar-expression inverse transform, one cell at a time.

    Independent of the matrix sandwich in :func:`from_reparam`; the two
    implementations cross-check each other.
    """
    a = theta_prime.alpha
    p = theta_prime.psi
    g = float(a[3])
    alpha = np.array([
        a[0] - g * a[1] + g * a[2],
        a[1] - a[2],
        a[1] + a[2],
        g,
    ])
    psi = np.empty((4, 4))
    psi[0, 0] = (p[1, 1] + p[2, 2] - 2.0 * p[1, 2]) * g * g + 2.0 * (p[0, 2] - p[0, 1]) * g + p[0, 0]
    psi[0, 1] = (2.0 * p[1, 2] - p[1, 1] - p[2, 2]) * g + (p[0, 1] - p[0, 2])
    psi[0, 2] = (p[2, 2] - p[1, 1]) * g + (p[0, 1] + p[0, 2])
    psi[0, 3] = (p[2, 3] - p[1, 3]) * g + p[0, 3]
    psi[1, 1] = p[1, 1] + p[2, 2] - 2.0 * p[1, 2]
    psi[1, 2] = p[1, 1] - p[2, 2]
    psi[1, 3] = p[1, 3] - p[2, 3]
    psi[2, 2] = p[1, 1] + p[2, 2] + 2.0 * p[1, 2]
    psi[2, 3] = p[1, 3] + p[2, 3]
    psi[3, 3] = p[3, 3]
    ix = np.tril_indices(4, -1)
    psi[ix] = psi.T[ix]
    b = theta_prime.beta
    beta = np.empty_like(b)
    for j in range(b.shape[1]):
        beta[0, j] = b[0, j] - g * b[1, j] + g * b[2, j]
        beta[1, j] = b[1, j] - b[2, j]
        beta[2, j] = b[1, j] + b[2, j]
        beta[3, j] = b[3, j]
    return OriginalParams(
        alpha=alpha,
        psi=psi,
        beta=beta,
        mu_x=theta_prime.mu_x,
        phi=theta_prime.phi,
        theta_eps=theta_prime.theta_eps,
    )


def reduce_to_reparam(theta: ReducedOriginal) -> ReducedParams:
    """Forward transform of the fixed-knot model (three factor blocks)."""
    jac = reparam_jacobian(np.r_[theta.alpha, theta.knot])[:3, :3]
    alpha_prime = np.array([
        theta.alpha[0] + theta.knot * theta.alpha[1],
        0.5 * (theta.alpha[1] + theta.alpha[2]),
        0.5 * (theta.alpha[2] - theta.alpha[1]),
    ])
    psi_prime = jac @ theta.psi @ jac.T
    return ReducedParams(
        alpha=alpha_prime,
        knot=theta.knot,
        psi=0.5 * (psi_prime + psi_prime.T),
        beta=jac @ theta.beta,
        mu_x=theta.mu_x,
        phi=theta.phi,
        theta_eps=theta.theta_eps,
    )


def reduce_transform(theta_prime: ReducedParams) -> ReducedOriginal:
    """Inverse transform of the fixed-knot model.

    Uses the leading three-by-three blocks of the full-model Jacobians
    with the fixed knot standing in for the knot mean.
    """
    g = theta_prime.knot
    jac = original_jacobian(np.r_[theta_prime.alpha, g])[:3, :3]
    alpha = np.array([
        theta_prime.alpha[0] - g * theta_prime.alpha[1] + g * theta_prime.alpha[2],
        theta_prime.alpha[1] - theta_prime.alpha[2],
        theta_prime.alpha[1] + theta_prime.alpha[2],
    ])
    psi = jac @ theta_prime.psi @ jac.T
    return ReducedOriginal(
        alpha=alpha,
        knot=g,
        psi=0.5 * (psi + psi.T),
        beta=jac @ theta_prime.beta,
        mu_x=theta_prime.mu_x,
        phi=theta_prime.phi,
        theta_eps=theta_prime.theta_eps,
    )
