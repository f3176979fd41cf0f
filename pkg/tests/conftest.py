import numpy as np
import pytest

from bsgm.model import OriginalParams, ReparamParams


def rand_pd_matrix(rng, k, scale=1.0):
    """Random positive definite matrix (A A^T plus a ridge)."""
    a = rng.standard_normal((k, k))
    return scale * (a @ a.T + 0.5 * np.eye(k))


def rand_original_params(rng, c=2):
    alpha = np.array([
        rng.uniform(50.0, 150.0),
        rng.uniform(-8.0, -2.0),
        rng.uniform(-6.0, 2.0),
        rng.uniform(1.5, 8.0),
    ])
    return OriginalParams(
        alpha=alpha,
        psi=rand_pd_matrix(rng, 4),
        beta=rng.standard_normal((4, c)),
        mu_x=np.zeros(c),
        phi=rand_pd_matrix(rng, c) if c else np.zeros((0, 0)),
        theta_eps=rng.uniform(0.5, 2.0),
    )


def rand_reparam_params(rng, c=2):
    alpha = np.array([
        rng.uniform(50.0, 150.0),
        rng.uniform(-6.0, 0.0),
        rng.uniform(-2.0, 2.0),
        rng.uniform(1.5, 8.0),
    ])
    return ReparamParams(
        alpha=alpha,
        psi=rand_pd_matrix(rng, 4),
        beta=rng.standard_normal((4, c)),
        mu_x=np.zeros(c),
        phi=rand_pd_matrix(rng, c) if c else np.zeros((0, 0)),
        theta_eps=rng.uniform(0.5, 2.0),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20250809)
