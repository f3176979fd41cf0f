"""Full-information ML estimation of the piecewise growth models.

Each person contributes a Gaussian log density with their own loading
matrix built from their own measurement occasions, so the sample
likelihood is a sum of individual terms rather than a single covariance
fit.  Estimation runs in the reparameterized space where the model is
linear in the factors; interpretable estimates and their standard errors
are derived afterwards through the inverse transform and the delta
method.

Two likelihood modes are provided.  In "marginal" mode the covariates
are treated as jointly normal with the outcomes, with their means and
covariance profiled at the sample moments; each individual then scores
the stacked (outcome, covariate) vector.  That joint density factors
exactly into a fixed-regressor term plus a covariate-only term, so
"conditional" mode (covariates as fixed regressors) maximizes the same
function up to an additive data constant and yields identical point
estimates.  The joint treatment is what identifies the direction of the
covariate paths: with the covariates integrated out entirely, the paths
would enter only through a quadratic form and their sign would be lost.

The factor covariance is parameterized by its free symmetric elements,
deliberately without a positivity constraint, so the estimator can land
on improper solutions (negative variances, out-of-range correlations)
exactly as unconstrained SEM estimators do; those are detected by
`diagnose_improper`, not prevented.  Parameter steps that make any
implied covariance non positive definite are rejected through a barrier
value.  The residual variance is optimized on the log scale.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

from .model import (
    MIN_WAVES_FULL,
    MIN_WAVES_REDUCED,
    ORIGINAL_FACTORS,
    REPARAM_FACTORS,
    LongitudinalDataset,
    ReducedParams,
    ReparamParams,
    _matrix,
    _vector,
    loadings_full,
    loadings_reduced,
)
from .transform import from_reparam, reduce_transform

LOG_2PI = float(np.log(2.0 * np.pi))
_BARRIER = 1e12

BASELINE_FACTORS = {"linear": ("intercept", "slope"), "quadratic": ("intercept", "slope", "quad")}
_N_FACTORS = {"full": 4, "reduced": 3, "linear": 2, "quadratic": 3}
_MIN_WAVES = {"full": MIN_WAVES_FULL, "reduced": MIN_WAVES_REDUCED, "linear": 3, "quadratic": 4}


class EstimationError(RuntimeError):
    pass


class NonPDCovariance(EstimationError):
    """An implied covariance matrix has a non-positive eigenvalue."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SingularInformation(EstimationError):
    """The observed information matrix cannot be inverted."""


class DegenerateData(ValueError):
    pass


class IdentificationError(ValueError):
    pass


@dataclass(frozen=True)
class FitOptions:
    """Estimation settings, including the restart protocol.

    A fit is retried with multiplicatively jittered starting values (each
    entry scaled by an independent uniform factor on [0.8, 1.2], streams
    keyed by seed and attempt number) until it converges or
    ``max_attempts`` is exhausted.  Convergence means the optimizer
    stopped on its gradient or relative-change tolerance at a point
    where every implied covariance is positive definite.
    """

    mode: str = "marginal"
    max_attempts: int = 10
    grad_tol: float = 1e-6
    rel_f_tol: float = 1e-10
    max_iter: int = 2000
    ci_level: float = 0.95
    seed: int = 0
    compute_se: bool = True

    def __post_init__(self):
        if self.mode not in ("marginal", "conditional"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass(frozen=True)
class BaselineParams:
    """Parameters of a polynomial latent growth model used for comparison."""

    form: str
    alpha: np.ndarray
    psi: np.ndarray
    beta: np.ndarray
    mu_x: np.ndarray
    phi: np.ndarray
    theta_eps: float

    def __post_init__(self):
        k = _N_FACTORS[self.form]
        object.__setattr__(self, "alpha", _vector(self.alpha, k, "alpha"))
        object.__setattr__(self, "psi", _matrix(self.psi, (k, k), "psi", symmetric=True))
        c = np.atleast_2d(np.asarray(self.beta, dtype=float)).shape[1] if np.asarray(self.beta).size else 0
        beta = np.asarray(self.beta, dtype=float).reshape(k, c) if c else np.zeros((k, 0))
        object.__setattr__(self, "beta", _matrix(beta, (k, c), "beta"))
        object.__setattr__(self, "mu_x", _vector(self.mu_x, c, "mu_x"))
        object.__setattr__(self, "phi", _matrix(self.phi, (c, c), "phi", symmetric=True))

    @property
    def n_covariates(self):
        return self.beta.shape[1]


@dataclass(frozen=True)
class FitResult:
    """Estimates in both parameter spaces with their uncertainty.

    ``converged`` is False when all restart attempts were exhausted; the
    best attempt is still reported.  ``se_failed`` marks a singular
    observed-information matrix (standard errors absent).
    """

    model: str
    mode: str
    theta_prime: object
    theta: object
    estimates_reparam: dict
    estimates_original: dict
    loglik: float
    aic: float
    bic: float
    residual_var: float
    n_params: int
    n_individuals: int
    converged: bool
    attempts: int
    improper_flags: tuple
    se_reparam: dict | None
    se_original: dict | None
    ci_reparam: dict | None
    ci_original: dict | None
    se_failed: bool
    x_means: np.ndarray
    free: np.ndarray
    options: FitOptions


# ---------------------------------------------------------------------------
# Parameter vector layout
# ---------------------------------------------------------------------------
# full:      [alpha'(3), knot_mean, vech(psi', 10), beta'(4c), log theta_eps]
# reduced:   [alpha'(3), knot,      vech(psi', 6),  beta'(3c), log theta_eps]
# baseline:  [alpha(k),             vech(psi),      beta(kc),  log theta_eps]


def _vech(m):
    return m[np.tril_indices(m.shape[0])]


def _unvech(v, k):
    m = np.zeros((k, k))
    m[np.tril_indices(k)] = v
    return m + np.tril(m, -1).T


def n_free_params(kind, c):
    # The full model's knot mean sits inside its four-entry mean head;
    # only the reduced model carries the knot as an extra slot.
    k = _N_FACTORS[kind]
    extra = 1 if kind == "reduced" else 0
    return k + extra + k * (k + 1) // 2 + k * c + 1


def free_vector(params):
    """Pack a parameter object into the optimizer's free vector."""
    if isinstance(params, ReparamParams):
        head = params.alpha
    elif isinstance(params, ReducedParams):
        head = np.r_[params.alpha, params.knot]
    elif isinstance(params, BaselineParams):
        head = params.alpha
    else:
        raise TypeError(f"cannot pack {type(params).__name__}")
    return np.concatenate([head, _vech(params.psi), params.beta.ravel(), [np.log(params.theta_eps)]])


def params_from_free(v, kind, mu_x, phi):
    """Rebuild a parameter object from a free vector.

    ``mu_x`` and ``phi`` are the profiled covariate moments; they are not
    part of the free vector.
    """
    v = np.asarray(v, dtype=float)
    k = _N_FACTORS[kind]
    c = len(mu_x)
    off = k + (1 if kind == "reduced" else 0)
    m = k * (k + 1) // 2
    psi = _unvech(v[off:off + m], k)
    beta = v[off + m:off + m + k * c].reshape(k, c)
    te = float(np.exp(v[-1]))
    if kind == "full":
        return ReparamParams(alpha=v[:4], psi=psi, beta=beta, mu_x=mu_x, phi=phi, theta_eps=te)
    if kind == "reduced":
        return ReducedParams(alpha=v[:3], knot=float(v[3]), psi=psi, beta=beta,
                             mu_x=mu_x, phi=phi, theta_eps=te)
    return BaselineParams(form=kind, alpha=v[:k], psi=psi, beta=beta,
                          mu_x=mu_x, phi=phi, theta_eps=te)


class _FitContext:
    """Precomputed per-dataset arrays shared by every objective call."""

    def __init__(self, dataset: LongitudinalDataset, kind, mode):
        if kind not in _N_FACTORS:
            raise ValueError(f"unknown model kind {kind!r}")
        if dataset.n_waves < _MIN_WAVES[kind]:
            raise IdentificationError(
                f"{kind} model needs at least {_MIN_WAVES[kind]} waves, got {dataset.n_waves}"
            )
        self.kind = kind
        self.mode = mode
        self.k = _N_FACTORS[kind]
        self.y = dataset.y
        self.t = dataset.t
        xc, x_means = dataset.centered_x()
        self.xc = xc
        self.x_means = x_means
        self.n, self.n_waves = dataset.y.shape
        self.c = xc.shape[1]
        if self.c:
            self.phi_hat = xc.T @ xc / self.n
        else:
            self.phi_hat = np.zeros((0, 0))
        self.mu_x_hat = np.zeros(self.c)
        if kind in ("linear", "quadratic"):
            self.lam_const = self.t[..., None] ** np.arange(self.k)
        else:
            self.lam_const = None
        self.eye = np.eye(self.n_waves)
        if mode == "marginal" and self.c:
            try:
                self.x_block = _gaussian_loglik_rows(xc, self.phi_hat)
            except np.linalg.LinAlgError:
                raise EstimationError(
                    "covariate sample covariance is singular; drop the constant "
                    "covariate or use conditional mode"
                ) from None
        else:
            self.x_block = 0.0

    def loadings(self, v):
        if self.kind == "full":
            return loadings_full(self.t, v[3], v[2])
        if self.kind == "reduced":
            return loadings_reduced(self.t, v[3])
        return self.lam_const

    def factor_means(self, v):
        if self.kind == "full":
            return np.array([v[0], v[1], v[2], 0.0])
        return v[:self.k]


def _gaussian_loglik_rows(resid, cov):
    """Sum of centered Gaussian log densities over the rows of ``resid``."""
    n, d = resid.shape
    cho = np.linalg.cholesky(cov)
    logdet = 2.0 * np.sum(np.log(np.diag(cho)))
    sol = np.linalg.solve(cov, resid.T)
    quad = float(np.sum(resid.T * sol))
    return -0.5 * (n * d * LOG_2PI + n * logdet + quad)


def _neg_loglik_numpy(v, ctx: _FitContext):
    """Vectorized reference implementation of the core objective."""
    k, c = ctx.k, ctx.c
    off = k + (1 if ctx.kind == "reduced" else 0)
    m = k * (k + 1) // 2
    psi = _unvech(v[off:off + m], k)
    te = np.exp(v[-1])
    lam = ctx.loadings(v)
    means = ctx.factor_means(v)[None, :]
    if c:
        beta = v[off + m:off + m + k * c].reshape(k, c)
        means = means + ctx.xc @ beta.T
    mu = np.matmul(lam, means[..., None])[..., 0]
    resid = ctx.y - mu
    sig = np.matmul(np.matmul(lam, psi), np.swapaxes(lam, -1, -2)) + te * ctx.eye
    try:
        cho = np.linalg.cholesky(sig)
    except np.linalg.LinAlgError:
        return _BARRIER
    logdet = 2.0 * np.sum(np.log(np.diagonal(cho, axis1=-2, axis2=-1)))
    sol = np.linalg.solve(sig, resid[..., None])[..., 0]
    quad = float(np.sum(resid * sol))
    return 0.5 * (ctx.n * ctx.n_waves * LOG_2PI + logdet + quad)


def _nll_kernel(y, t, x, v, kind, k):
    """Scalar-loop core objective; compiled with numba when available.

    ``kind``: 0 full, 1 reduced, 2 polynomial.  Returns the barrier value
    as soon as any person's implied covariance loses positive
    definiteness during its Cholesky factorization.
    """
    n, n_waves = y.shape
    c = x.shape[1]
    off = k + (1 if kind == 1 else 0)
    m = k * (k + 1) // 2

    psi = np.empty((k, k))
    idx = off
    for i in range(k):
        for j in range(i + 1):
            psi[i, j] = v[idx]
            psi[j, i] = v[idx]
            idx += 1
    te = np.exp(v[-1])
    base = np.zeros(k)
    g = 0.0
    h = 0.0
    if kind == 0:
        base[0], base[1], base[2] = v[0], v[1], v[2]
        g = v[3]
        h = v[2]
    elif kind == 1:
        base[0], base[1], base[2] = v[0], v[1], v[2]
        g = v[3]
    else:
        for i in range(k):
            base[i] = v[i]

    lam = np.empty((n_waves, k))
    tmp = np.empty((n_waves, k))
    cov = np.empty((n_waves, n_waves))
    resid = np.empty(n_waves)
    z = np.empty(n_waves)
    mean_i = np.empty(k)

    total = 0.0
    half_log2pi = 0.5 * n_waves * LOG_2PI
    for ii in range(n):
        for j in range(n_waves):
            tij = t[ii, j]
            if kind == 2:
                pw = 1.0
                for q in range(k):
                    lam[j, q] = pw
                    pw *= tij
            else:
                d = tij - g
                lam[j, 0] = 1.0
                lam[j, 1] = d
                lam[j, 2] = abs(d)
                if kind == 0:
                    sgn = 0.0 if d == 0.0 else (1.0 if d > 0.0 else -1.0)
                    lam[j, 3] = -h * (1.0 + sgn)
        for q in range(k):
            s = base[q]
            for cc in range(c):
                s += v[off + m + q * c + cc] * x[ii, cc]
            mean_i[q] = s
        for j in range(n_waves):
            s = 0.0
            for q in range(k):
                s += lam[j, q] * mean_i[q]
            resid[j] = y[ii, j] - s
        for j in range(n_waves):
            for q in range(k):
                s = 0.0
                for q2 in range(k):
                    s += lam[j, q2] * psi[q2, q]
                tmp[j, q] = s
        for j in range(n_waves):
            for j2 in range(j + 1):
                s = 0.0
                for q in range(k):
                    s += tmp[j, q] * lam[j2, q]
                if j == j2:
                    s += te
                cov[j, j2] = s
        log_det_half = 0.0
        for j in range(n_waves):
            s = cov[j, j]
            for q in range(j):
                s -= cov[j, q] * cov[j, q]
            if not s > 0.0:
                return _BARRIER
            piv = np.sqrt(s)
            cov[j, j] = piv
            log_det_half += np.log(piv)
            inv = 1.0 / piv
            for j2 in range(j + 1, n_waves):
                s = cov[j2, j]
                for q in range(j):
                    s -= cov[j2, q] * cov[j, q]
                cov[j2, j] = s * inv
        quad = 0.0
        for j in range(n_waves):
            s = resid[j]
            for q in range(j):
                s -= cov[j, q] * z[q]
            zj = s / cov[j, j]
            z[j] = zj
            quad += zj * zj
        total += -half_log2pi - log_det_half - 0.5 * quad
    return -total


if HAVE_NUMBA:
    _nll_kernel = njit(cache=True)(_nll_kernel)

_KIND_CODE = {"full": 0, "reduced": 1, "linear": 2, "quadratic": 2}


def _neg_loglik_core(v, ctx: _FitContext):
    """Negative fixed-regressor log likelihood; barrier outside the PD region."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)) or abs(v[-1]) > 50.0:
        return _BARRIER
    if HAVE_NUMBA:
        nll = _nll_kernel(ctx.y, ctx.t, ctx.xc, v, _KIND_CODE[ctx.kind], ctx.k)
    else:
        nll = _neg_loglik_numpy(v, ctx)
    if not np.isfinite(nll):
        return _BARRIER
    return nll


def negative_loglik(v, dataset, model, mode="marginal"):
    """Public objective over a free vector; marginal mode adds the
    covariate block so the value matches the joint likelihood."""
    ctx = _FitContext(dataset, model, mode)
    nll = _neg_loglik_core(np.asarray(v, dtype=float), ctx)
    if mode == "marginal":
        return nll - ctx.x_block
    return nll


GRAD_REL_STEP = 1e-5


def _central_gradient(fun, v, step=GRAD_REL_STEP):
    """Central-difference gradient with per-coordinate relative steps.

    Forward differences at machine-epsilon steps lose several digits on
    the stiff covariance coordinates, so the optimizer is fed this
    instead of scipy's default.
    """
    h = step * np.maximum(1.0, np.abs(v))
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h[i]
        g[i] = (fun(v + e) - fun(v - e)) / (2.0 * h[i])
    return g


def loglik_gradient(v, dataset, model, mode="marginal"):
    """The optimizer's numerical gradient of the negative log likelihood."""
    ctx = _FitContext(dataset, model, mode)
    v = np.asarray(v, dtype=float)
    return _central_gradient(lambda w: _neg_loglik_core(w, ctx), v)


# ---------------------------------------------------------------------------
# Individual / total likelihood (public API on parameter objects)
# ---------------------------------------------------------------------------


def _params_moments(theta_prime, t_row, x_row):
    """Conditional mean and covariance of one person's outcomes."""
    if isinstance(theta_prime, ReparamParams):
        lam = loadings_full(t_row, theta_prime.knot_mean, theta_prime.alpha[2])
        factor_mean = theta_prime.factor_means()
    elif isinstance(theta_prime, ReducedParams):
        lam = loadings_reduced(t_row, theta_prime.knot)
        factor_mean = theta_prime.alpha
    elif isinstance(theta_prime, BaselineParams):
        lam = np.asarray(t_row, dtype=float)[:, None] ** np.arange(len(theta_prime.alpha))
        factor_mean = theta_prime.alpha
    else:
        raise TypeError(f"unsupported parameter object {type(theta_prime).__name__}")
    if theta_prime.beta.shape[1]:
        factor_mean = factor_mean + theta_prime.beta @ np.asarray(x_row, dtype=float)
    mu = lam @ factor_mean
    sigma = lam @ theta_prime.psi @ lam.T + theta_prime.theta_eps * np.eye(lam.shape[0])
    return mu, 0.5 * (sigma + sigma.T)


def loglik_individual(theta_prime, y_row, t_row, x_row=None, mode="marginal"):
    """One person's Gaussian log likelihood.

    Conditional mode scores the outcomes given the covariates; marginal
    mode adds the covariate density so the value equals the joint normal
    density of the stacked (outcome, covariate) vector.
    """
    if mode not in ("marginal", "conditional"):
        raise ValueError(f"unknown mode {mode!r}")
    y_row = np.asarray(y_row, dtype=float)
    c = theta_prime.beta.shape[1]
    x = np.zeros(0) if x_row is None else np.asarray(x_row, dtype=float)
    if c and x.shape[0] != c:
        raise ValueError(f"expected {c} covariates, got {x.shape[0]}")
    mu, sigma = _params_moments(theta_prime, t_row, x)
    resid = y_row - mu
    try:
        cho = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NonPDCovariance("implied outcome covariance is not positive definite") from exc
    logdet = 2.0 * np.sum(np.log(np.diag(cho)))
    sol = np.linalg.solve(sigma, resid)
    value = -0.5 * (y_row.shape[0] * LOG_2PI + logdet + float(resid @ sol))
    if mode == "marginal" and c:
        xr = (x - theta_prime.mu_x)[None, :]
        try:
            value += _gaussian_loglik_rows(xr, theta_prime.phi)
        except np.linalg.LinAlgError as exc:
            raise NonPDCovariance("covariate covariance is not positive definite") from exc
    return value


def loglik_total(theta_prime, dataset: LongitudinalDataset, mode="marginal"):
    """Sample log likelihood: the sum of the individual contributions."""
    total = 0.0
    has_x = dataset.n_covariates > 0
    for i in range(dataset.n_individuals):
        try:
            total += loglik_individual(
                theta_prime, dataset.y[i], dataset.t[i],
                dataset.x[i] if has_x else None, mode=mode,
            )
        except NonPDCovariance as exc:
            raise NonPDCovariance(f"covariance not positive definite for individual {i}", index=i) from exc
    return total


# ---------------------------------------------------------------------------
# Starting values
# ---------------------------------------------------------------------------


def initial_values(dataset: LongitudinalDataset, model="full"):
    """Deterministic data-driven starting values.

    The knot starts at the midpoint of the pooled time range; pooled
    least-squares lines on each side give the intercept and the two
    slopes, mapped into the estimable space.  Factor variances start
    from the spread of per-person mean residuals and per-person slopes,
    paths start at zero, and the residual variance starts from the
    within-person residual spread around the pooled piecewise line.
    """
    t = dataset.t
    y = dataset.y
    t_min, t_max = float(t.min()), float(t.max())
    if t_max - t_min < 1e-12:
        raise DegenerateData("all measurement occasions coincide")
    knot0 = 0.5 * (t_min + t_max)

    def _pooled_line(mask):
        tt, yy = t[mask], y[mask]
        if tt.size < 2 or np.ptp(tt) < 1e-12:
            return float(yy.mean()) if yy.size else 0.0, 0.0
        slope, icpt = np.polyfit(tt, yy, 1)
        return float(icpt), float(slope)

    a_l, b_l = _pooled_line(t <= knot0)
    _, b_r = _pooled_line(t >= knot0)

    pred = a_l + b_l * np.minimum(t, knot0) + b_r * np.maximum(t - knot0, 0.0)
    resid = y - pred
    person_mean = resid.mean(axis=1)
    within = resid - person_mean[:, None]
    # tiny floors only guard exact degeneracy; they must not inflate the
    # start on very clean data
    theta_eps0 = max(float(np.mean(within ** 2)), 1e-8)
    icpt_var0 = max(float(np.var(person_mean)), 1e-8)

    t_c = t - t.mean(axis=1, keepdims=True)
    y_c = y - y.mean(axis=1, keepdims=True)
    person_slope = np.sum(t_c * y_c, axis=1) / np.sum(t_c ** 2, axis=1)
    slope_var0 = max(float(np.var(person_slope)) / 2.0, 1e-8)
    knot_dev_var0 = ((t_max - t_min) / 20.0) ** 2

    c = dataset.n_covariates
    mu_x = np.zeros(c)
    phi = np.eye(c)

    if model == "full":
        alpha_prime = np.array([a_l + knot0 * b_l, 0.5 * (b_l + b_r), 0.5 * (b_r - b_l), knot0])
        psi_prime = np.diag([icpt_var0, slope_var0, slope_var0, knot_dev_var0])
        return ReparamParams(alpha=alpha_prime, psi=psi_prime, beta=np.zeros((4, c)),
                             mu_x=mu_x, phi=phi, theta_eps=theta_eps0)
    if model == "reduced":
        alpha_prime = np.array([a_l + knot0 * b_l, 0.5 * (b_l + b_r), 0.5 * (b_r - b_l)])
        psi_prime = np.diag([icpt_var0, slope_var0, slope_var0])
        return ReducedParams(alpha=alpha_prime, knot=knot0, psi=psi_prime, beta=np.zeros((3, c)),
                             mu_x=mu_x, phi=phi, theta_eps=theta_eps0)
    if model in ("linear", "quadratic"):
        k = _N_FACTORS[model]
        coefs = np.polyfit(t.ravel(), y.ravel(), k - 1)[::-1]
        diag = [icpt_var0, slope_var0] + ([slope_var0 / 10.0] if k == 3 else [])
        return BaselineParams(form=model, alpha=coefs, psi=np.diag(diag), beta=np.zeros((k, c)),
                              mu_x=mu_x, phi=phi, theta_eps=theta_eps0)
    raise ValueError(f"unknown model {model!r}")


def _jitter_free(v0, seed, attempt):
    """Multiplicative restart jitter; attempt 0 is the unjittered start."""
    if attempt == 0:
        return v0.copy()
    rng = np.random.default_rng([int(seed), int(attempt)])
    u = rng.uniform(0.8, 1.2, size=v0.size)
    v = v0 * u
    v[-1] = v0[-1] + np.log(u[-1])
    return v


# ---------------------------------------------------------------------------
# Parameter naming
# ---------------------------------------------------------------------------


def _cov_names(labels):
    names = []
    for i, j in zip(*np.tril_indices(len(labels))):
        names.append(f"var_{labels[i]}" if i == j else f"cov_{labels[j]}_{labels[i]}")
    return names


def _beta_names(labels, c):
    return [f"beta_x{j + 1}_{lab}" for lab in labels for j in range(c)]


def param_names(kind, c, space):
    """Flat parameter names for a model kind, in packing order.

    ``space`` is "reparam" (the estimable basis, matching the free
    vector with the residual variance on its natural scale) or
    "original" (the interpretable basis).  The knot mean keeps the same
    name in both spaces because it is shared verbatim.
    """
    if kind == "full":
        labels = REPARAM_FACTORS if space == "reparam" else ORIGINAL_FACTORS
        means = [f"mean_{lab}" for lab in labels[:3]] + ["mean_knot"]
        if space == "original":
            means = [f"mean_{lab}" for lab in labels]
        return means + _cov_names(labels) + _beta_names(labels, c) + ["resid_var"]
    if kind == "reduced":
        labels = REPARAM_FACTORS[:3] if space == "reparam" else ORIGINAL_FACTORS[:3]
        means = [f"mean_{lab}" for lab in labels] + ["mean_knot"]
        return means + _cov_names(labels) + _beta_names(labels, c) + ["resid_var"]
    labels = BASELINE_FACTORS[kind]
    means = [f"mean_{lab}" for lab in labels]
    return means + _cov_names(labels) + _beta_names(labels, c) + ["resid_var"]


def _reparam_flat(v):
    out = v.copy()
    out[-1] = np.exp(v[-1])
    return out


def _original_flat(v, kind, mu_x, phi):
    """Interpretable-space parameter vector as a function of the free vector."""
    prime = params_from_free(v, kind, mu_x, phi)
    if kind == "full":
        theta = from_reparam(prime)
        head = theta.alpha
    elif kind == "reduced":
        theta = reduce_transform(prime)
        head = np.r_[theta.alpha, theta.knot]
    else:
        theta = prime
        head = theta.alpha
    return np.concatenate([head, _vech(theta.psi), theta.beta.ravel(), [theta.theta_eps]])


# ---------------------------------------------------------------------------
# Diagnostics, intervals, information criteria
# ---------------------------------------------------------------------------


def diagnose_improper_psi(psi, labels):
    """Flags for negative variances and out-of-range correlations.

    A correlation involving a non-positive variance is reported only
    through the variance flag.
    """
    psi = np.asarray(psi, dtype=float)
    flags = []
    k = psi.shape[0]
    for i in range(k):
        if psi[i, i] < 0.0:
            flags.append(f"negativeVariance({labels[i]})")
    for i in range(k):
        for j in range(i + 1, k):
            if psi[i, i] <= 0.0 or psi[j, j] <= 0.0:
                continue
            if psi[i, j] ** 2 > psi[i, i] * psi[j, j]:
                flags.append(f"outOfRangeCorrelation({labels[i]},{labels[j]})")
    return tuple(flags)


def diagnose_improper(fit: FitResult):
    """Improper-solution flags of a fit, from its interpretable-space psi."""
    if fit.model == "full":
        labels = ORIGINAL_FACTORS
    elif fit.model == "reduced":
        labels = ORIGINAL_FACTORS[:3]
    else:
        labels = BASELINE_FACTORS[fit.model]
    return diagnose_improper_psi(fit.theta.psi, labels)


def wald_ci(estimate, se, level):
    """Symmetric normal-quantile interval around an estimate."""
    if se < 0:
        raise ValueError("standard error must be nonnegative")
    z = norm.ppf(0.5 * (1.0 + level))
    return estimate - z * se, estimate + z * se


def information_criteria(loglik, p, n):
    """AIC and BIC from a log likelihood and a parameter count."""
    if p < 1:
        raise ValueError("parameter count must be at least 1")
    if n < 1:
        raise ValueError("sample size must be at least 1")
    return -2.0 * loglik + 2.0 * p, -2.0 * loglik + p * np.log(n)


# ---------------------------------------------------------------------------
# Hessian / delta-method standard errors
# ---------------------------------------------------------------------------


def _fd_steps(v):
    return np.maximum(1e-4, 1e-4 * np.abs(v))


def _fd_hessian(fun, v):
    """Central finite-difference Hessian with per-coordinate steps."""
    p = v.size
    h = _fd_steps(v)
    hess = np.empty((p, p))
    f0 = fun(v)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        hess[i, i] = (fun(v + ei) - 2.0 * f0 + fun(v - ei)) / h[i] ** 2
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                fun(v + ei + ej) - fun(v + ei - ej) - fun(v - ei + ej) + fun(v - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return hess


def _fd_jacobian(fun, v):
    """Central finite-difference Jacobian of a vector-valued function."""
    h = _fd_steps(v)
    cols = []
    for i in range(v.size):
        ei = np.zeros(v.size)
        ei[i] = h[i]
        cols.append((fun(v + ei) - fun(v - ei)) / (2.0 * h[i]))
    return np.stack(cols, axis=1)


def _se_from_cov(cov):
    d = np.diagonal(cov).copy()
    d[d < 0] = np.nan
    return np.sqrt(d)


def _mean_slot_paths(ctx, v_hat):
    """Path matrix rows aligned with the free-vector mean slots.

    The reported factor means are anchored at the sample covariate
    means, so their sampling variance carries the covariate-mean noise
    through the paths: an extra B Phi B^T / n block.  In the full model
    all four mean slots (including the knot mean) have path rows; the
    reduced model's fixed knot has none.
    """
    k, c = ctx.k, ctx.c
    off = k + (1 if ctx.kind == "reduced" else 0)
    m = k * (k + 1) // 2
    beta = v_hat[off + m:off + m + k * c].reshape(k, c)
    if ctx.kind == "full":
        return np.arange(4), beta
    return np.arange(k), beta[:k]


def _compute_se(ctx, v_hat):
    """Observed-information SEs in both spaces.

    Returns (se_reparam, se_original) vectors, or raises
    SingularInformation when the Hessian cannot be inverted.
    """
    hess = _fd_hessian(lambda w: _neg_loglik_core(w, ctx), v_hat)
    if not np.all(np.isfinite(hess)):
        raise SingularInformation("observed information contains non-finite entries")
    try:
        cov_free = np.linalg.inv(hess)
    except np.linalg.LinAlgError as exc:
        raise SingularInformation("observed information is singular") from exc
    if not np.all(np.isfinite(cov_free)):
        raise SingularInformation("observed information is numerically singular")
    if ctx.c:
        slots, beta = _mean_slot_paths(ctx, v_hat)
        extra = beta @ ctx.phi_hat @ beta.T / ctx.n
        cov_free = cov_free.copy()
        cov_free[np.ix_(slots, slots)] += extra
    se_free = _se_from_cov(cov_free)
    se_rep = se_free.copy()
    se_rep[-1] = np.exp(v_hat[-1]) * se_free[-1]

    jac = _fd_jacobian(lambda w: _original_flat(w, ctx.kind, ctx.mu_x_hat, ctx.phi_hat), v_hat)
    cov_orig = jac @ cov_free @ jac.T
    se_orig = _se_from_cov(cov_orig)
    return se_rep, se_orig


def standard_errors(fit: FitResult, dataset: LongitudinalDataset) -> FitResult:
    """Attach observed-information SEs and Wald intervals to a fit."""
    if not fit.converged:
        raise EstimationError("standard errors require a converged fit")
    ctx = _FitContext(dataset, fit.model, fit.mode)
    names_rep = param_names(fit.model, ctx.c, "reparam")
    names_orig = param_names(fit.model, ctx.c, "original")
    try:
        se_rep, se_orig = _compute_se(ctx, fit.free)
    except SingularInformation:
        return dataclasses.replace(fit, se_reparam=None, se_original=None,
                                   ci_reparam=None, ci_original=None, se_failed=True)
    level = fit.options.ci_level
    est_rep = _reparam_flat(fit.free)
    est_orig = _original_flat(fit.free, fit.model, ctx.mu_x_hat, ctx.phi_hat)

    def _ci_dict(names, est, se):
        return {nm: wald_ci(e, s, level) if np.isfinite(s) else (np.nan, np.nan)
                for nm, e, s in zip(names, est, se)}

    return dataclasses.replace(
        fit,
        se_reparam=dict(zip(names_rep, se_rep)),
        se_original=dict(zip(names_orig, se_orig)),
        ci_reparam=_ci_dict(names_rep, est_rep, se_rep),
        ci_original=_ci_dict(names_orig, est_orig, se_orig),
        se_failed=False,
    )


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _fit(dataset, kind, options: FitOptions):
    ctx = _FitContext(dataset, kind, options.mode)
    v0 = free_vector(initial_values(dataset, kind))
    fun = lambda w: _neg_loglik_core(w, ctx)

    best = None
    converged = False
    attempts_used = options.max_attempts
    for attempt in range(options.max_attempts):
        start = _jitter_free(v0, options.seed, attempt)
        # cheap forward-difference pass first, then a central-difference
        # polish whose stopping state defines convergence
        pre = minimize(
            fun, start, method="L-BFGS-B",
            options={"maxiter": options.max_iter, "ftol": max(options.rel_f_tol, 1e-9),
                     "gtol": options.grad_tol},
        )
        start2 = pre.x if (np.isfinite(pre.fun) and pre.fun < 0.5 * _BARRIER) else start
        res = minimize(
            fun, start2, method="L-BFGS-B",
            jac=lambda w: _central_gradient(fun, w),
            options={"maxiter": options.max_iter, "ftol": options.rel_f_tol,
                     "gtol": options.grad_tol},
        )
        ok = bool(res.status == 0 and np.isfinite(res.fun) and res.fun < 0.5 * _BARRIER)
        if best is None or res.fun < best.fun:
            best = res
        if ok:
            converged = True
            attempts_used = attempt + 1
            break

    v_hat = np.asarray(best.x, dtype=float)
    core_ll = -float(best.fun)
    loglik = core_ll + (ctx.x_block if options.mode == "marginal" else 0.0)

    theta_prime = params_from_free(v_hat, kind, ctx.mu_x_hat, ctx.phi_hat)
    if kind == "full":
        theta = from_reparam(theta_prime)
        labels = ORIGINAL_FACTORS
    elif kind == "reduced":
        theta = reduce_transform(theta_prime)
        labels = ORIGINAL_FACTORS[:3]
    else:
        theta = theta_prime
        labels = BASELINE_FACTORS[kind]

    p = n_free_params(kind, ctx.c)
    if options.mode == "marginal" and ctx.c:
        p += ctx.c + ctx.c * (ctx.c + 1) // 2
    aic, bic = information_criteria(loglik, p, ctx.n)

    names_rep = param_names(kind, ctx.c, "reparam")
    names_orig = param_names(kind, ctx.c, "original")
    est_rep = _reparam_flat(v_hat)
    est_orig = _original_flat(v_hat, kind, ctx.mu_x_hat, ctx.phi_hat)

    fit = FitResult(
        model=kind,
        mode=options.mode,
        theta_prime=theta_prime,
        theta=theta,
        estimates_reparam=dict(zip(names_rep, est_rep)),
        estimates_original=dict(zip(names_orig, est_orig)),
        loglik=loglik,
        aic=float(aic),
        bic=float(bic),
        residual_var=float(np.exp(v_hat[-1])),
        n_params=p,
        n_individuals=ctx.n,
        converged=converged,
        attempts=attempts_used,
        improper_flags=diagnose_improper_psi(theta.psi, labels),
        se_reparam=None,
        se_original=None,
        ci_reparam=None,
        ci_original=None,
        se_failed=False,
        x_means=ctx.x_means,
        free=v_hat,
        options=options,
    )
    if options.compute_se and converged:
        fit = standard_errors(fit, dataset)
    return fit


def fit_full(dataset: LongitudinalDataset, options: FitOptions | None = None) -> FitResult:
    """Fit the four-factor model with a freely varying knot."""
    return _fit(dataset, "full", options or FitOptions())


def fit_reduced(dataset: LongitudinalDataset, options: FitOptions | None = None) -> FitResult:
    """Fit the three-factor model with a single shared knot."""
    return _fit(dataset, "reduced", options or FitOptions())


def fit_baseline(dataset: LongitudinalDataset, form="linear",
                 options: FitOptions | None = None) -> FitResult:
    """Fit a polynomial latent growth model for comparison purposes."""
    if form not in ("linear", "quadratic"):
        raise ValueError(f"unknown baseline form {form!r}")
    return _fit(dataset, form, options or FitOptions())
