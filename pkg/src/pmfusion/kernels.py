"""Shared statistical kernels.

Covariance construction and factorization, simple kriging, first-order
temporal conditional-autoregressive (CAR) pieces, logit transforms, and
small samplers reused by the downscaler and ensemble fitters.

Conventions: distances in km, exponential covariance
``C(d) = marginal_variance * exp(-d / range_km)``, CAR full conditionals
``E[a_t | a_-t] = eta * sum_{t' ~ t} a_t' / n_t`` and
``Var[a_t | a_-t] = sigma2 / n_t`` with n_t = 1 at the series endpoints
and 2 in the interior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import (
    cho_factor,
    cho_solve,
    cho_solve_banded,
    cholesky_banded,
    eigh_tridiagonal,
    solve_banded,
    solve_triangular,
)
from scipy.special import ndtri

from .errors import DomainError, NotPositiveDefiniteError
from .geo import distance_matrix

# logit outputs are clamped so round trips through inv_logit stay finite
_W_CLIP = 1e-12

# jitter ladder relative to the mean marginal variance
_JITTER_START = 1e-8
_JITTER_MAX = 1e-4

# the CAR dependence parameter is sampled on interval midpoints of [0, 1];
# midpoints keep eta < 1 so the implied joint prior stays proper
ETA_GRID = (np.arange(1000, dtype=float) + 0.5) / 1000.0


@dataclass(frozen=True)
class ExpCovParams:
    """Exponential covariance: marginal variance (sill) and range in km."""

    marginal_variance: float
    range_km: float

    def __post_init__(self):
        if self.marginal_variance < 0:
            raise ValueError("marginal_variance must be >= 0")
        if self.range_km <= 0:
            raise ValueError("range_km must be > 0")


@dataclass(frozen=True)
class CarParams:
    """First-order temporal CAR: dependence eta, conditional variance, horizon T."""

    dependence: float
    conditional_variance: float
    horizon: int

    def __post_init__(self):
        if not 0.0 <= self.dependence <= 1.0:
            raise ValueError("dependence must lie in [0, 1]")
        if self.conditional_variance <= 0:
            raise ValueError("conditional_variance must be > 0")
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")


@dataclass(frozen=True)
class GaussianSummary:
    """A Normal predictive summarized by its mean and variance."""

    mean: float
    variance: float

    def __post_init__(self):
        if not np.isfinite(self.mean) or not np.isfinite(self.variance):
            raise ValueError("summary moments must be finite")
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance))

    def quantile(self, p: float) -> float:
        if not 0.0 < p < 1.0:
            raise DomainError("quantile level must lie in (0, 1)")
        return self.mean + self.sd * float(ndtri(p))


def exp_cov_matrix(d: np.ndarray, p: ExpCovParams) -> np.ndarray:
    """Exponential covariance matrix from a distance matrix (km)."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise DomainError("distances must be nonnegative")
    return p.marginal_variance * np.exp(-d / p.range_km)


def jittered_cholesky(c: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a symmetric PSD matrix with escalating jitter.

    Tries the plain factorization first, then adds eps * mean(diag) to the
    diagonal with eps = 1e-8, 1e-7, ..., 1e-4. Returns (L, jitter_added).
    Raises NotPositiveDefiniteError when even the largest jitter fails.
    """
    c = np.asarray(c, dtype=float)
    scale = float(np.mean(np.diag(c)))
    if scale <= 0:
        scale = 1.0
    eps = 0.0
    rel = _JITTER_START
    while True:
        try:
            l = np.linalg.cholesky(c if eps == 0.0 else c + eps * np.eye(c.shape[0]))
            return l, eps
        except np.linalg.LinAlgError:
            if rel > _JITTER_MAX:
                raise NotPositiveDefiniteError(
                    f"matrix not positive definite at jitter {eps:.3e}"
                ) from None
            eps = rel * scale
            rel *= 10.0


def chol_solve(c: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve C x = b through the jittered Cholesky factor."""
    l, _ = jittered_cholesky(c)
    return cho_solve((l, True), np.asarray(b, dtype=float))


def chol_logdet(c: np.ndarray) -> float:
    """log det C through the jittered Cholesky factor."""
    l, _ = jittered_cholesky(c)
    return 2.0 * float(np.sum(np.log(np.diag(l))))


def mvn_logpdf_zero_mean(x: np.ndarray, chol_lower: np.ndarray) -> float:
    """Log density of N(0, C) at x given the lower Cholesky factor of C."""
    x = np.asarray(x, dtype=float)
    w = solve_triangular(chol_lower, x, lower=True)
    n = x.shape[0]
    return -0.5 * (
        n * np.log(2.0 * np.pi)
        + 2.0 * float(np.sum(np.log(np.diag(chol_lower))))
        + float(w @ w)
    )


def gp_univariate_conditional(
    i: int, values: np.ndarray, c: np.ndarray
) -> tuple[float, float]:
    """Conditional N(mean, var) of component i of a zero-mean MVN given the rest.

    Parameters
    ----------
    i      : index of the component being conditioned on the others
    values : the other components, length n-1, in original order with i removed
    c      : full (n, n) covariance matrix
    """
    n = c.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"index {i} out of range for {n} components")
    values = np.asarray(values, dtype=float)
    if values.shape[0] != n - 1:
        raise ValueError("values must hold the n-1 remaining components")
    keep = np.arange(n) != i
    c_rest = c[np.ix_(keep, keep)]
    cross = c[i, keep]
    sol = chol_solve(c_rest, cross)
    mean = float(sol @ values)
    var = float(c[i, i] - sol @ cross)
    return mean, max(var, 0.0)


def krige(
    observed_locations,
    observed_values: np.ndarray,
    targets,
    p: ExpCovParams,
    mean: float = 0.0,
) -> list[GaussianSummary]:
    """Simple kriging with known constant mean.

    Returns one GaussianSummary per target. Exact (up to jitter) at observed
    locations; reverts to N(mean, marginal_variance) far from all data.
    """
    m, v = krige_arrays(observed_locations, observed_values, targets, p, mean)
    return [GaussianSummary(float(mi), float(vi)) for mi, vi in zip(m, v)]


def krige_arrays(
    observed_locations,
    observed_values: np.ndarray,
    targets,
    p: ExpCovParams,
    mean: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Array-valued simple kriging: (means, variances) at targets."""
    values = np.asarray(observed_values, dtype=float)
    d_obs = distance_matrix(observed_locations)
    d_cross = distance_matrix(observed_locations, targets)
    c_obs = exp_cov_matrix(d_obs, p)
    k = exp_cov_matrix(d_cross, p)
    l, _ = jittered_cholesky(c_obs)
    lk = solve_triangular(l, k, lower=True)
    lv = solve_triangular(l, values - mean, lower=True)
    mu = mean + lk.T @ lv
    var = p.marginal_variance - np.sum(lk * lk, axis=0)
    return mu, np.maximum(var, 0.0)


def car_neighbor_count(horizon: int) -> np.ndarray:
    """n_t for t = 1..T: one neighbor at the endpoints, two in the interior."""
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    n = np.full(horizon, 2.0)
    n[0] = 1.0
    n[-1] = 1.0
    return n


def car_full_conditional(t: int, series: np.ndarray, p: CarParams) -> tuple[float, float]:
    """Mean and variance of a_t given the rest of the series under the CAR model.

    t is 1-based with 1 <= t <= horizon; series holds the full vector a_1..a_T
    (the value at t itself is ignored).
    """
    series = np.asarray(series, dtype=float)
    if series.shape[0] != p.horizon:
        raise ValueError("series length must equal the horizon")
    if not 1 <= t <= p.horizon:
        raise DomainError(f"t={t} outside 1..{p.horizon}")
    neighbors = []
    if t > 1:
        neighbors.append(series[t - 2])
    if t < p.horizon:
        neighbors.append(series[t])
    n_t = float(len(neighbors))
    mean = p.dependence * float(np.sum(neighbors)) / n_t
    return mean, p.conditional_variance / n_t


def car_precision_tridiag(p: CarParams) -> tuple[np.ndarray, np.ndarray]:
    """(diag, superdiag) of the joint CAR precision (D - eta W) / sigma2."""
    n_t = car_neighbor_count(p.horizon)
    diag = n_t / p.conditional_variance
    off = np.full(p.horizon - 1, -p.dependence / p.conditional_variance)
    return diag, off


def car_normalized_eigvals(horizon: int) -> np.ndarray:
    """Eigenvalues of D^{-1/2} W D^{-1/2} for the path graph of length T.

    Used for the determinant |D - eta W| = |D| * prod(1 - eta * lambda_i),
    which makes the discrete eta update O(grid * T) once per fit.
    """
    n_t = car_neighbor_count(horizon)
    off = 1.0 / np.sqrt(n_t[:-1] * n_t[1:])
    return eigh_tridiagonal(np.zeros(horizon), off, eigvals_only=True)


def car_logdet_table(horizon: int, eta_grid: np.ndarray = ETA_GRID) -> np.ndarray:
    """log |D - eta W| for every eta on the grid (log|D| included)."""
    lam = car_normalized_eigvals(horizon)
    n_t = car_neighbor_count(horizon)
    one_minus = 1.0 - np.outer(eta_grid, lam)
    if np.any(one_minus <= 0):
        raise NotPositiveDefiniteError("CAR precision singular on the eta grid")
    return float(np.sum(np.log(n_t))) + np.sum(np.log(one_minus), axis=1)


def sample_tridiag_mvn(
    prec_diag: np.ndarray,
    prec_off: np.ndarray,
    b: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One draw from N(Q^{-1} b, Q^{-1}) for tridiagonal precision Q.

    Q has diagonal prec_diag and sub/super diagonal prec_off. O(T) via a
    banded Cholesky factorization.
    """
    t = prec_diag.shape[0]
    ab = np.zeros((2, t))
    ab[1] = prec_diag
    ab[0, 1:] = prec_off
    try:
        u = cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None
    mean = cho_solve_banded((u, False), b)
    z = rng.standard_normal(t)
    return mean + solve_banded((0, 1), u, z)


def tridiag_conditional_moments(
    prec_diag: np.ndarray, prec_off: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and dense covariance of N(Q^{-1} b, Q^{-1}); small-T oracle use."""
    t = prec_diag.shape[0]
    q = np.diag(prec_diag)
    q[np.arange(t - 1), np.arange(1, t)] = prec_off
    q[np.arange(1, t), np.arange(t - 1)] = prec_off
    cov = np.linalg.inv(q)
    return cov @ b, cov


def sample_from_log_weights(logw: np.ndarray, rng: np.random.Generator) -> int:
    """Sample an index proportionally to exp(logw), stable under shifts."""
    logw = np.asarray(logw, dtype=float)
    p = np.exp(logw - np.max(logw))
    cdf = np.cumsum(p)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def logit(w) -> np.ndarray | float:
    """log(w / (1 - w)); DomainError outside the open unit interval."""
    arr = np.asarray(w, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("logit requires values in (0, 1)")
    out = np.log(arr / (1.0 - arr))
    return float(out) if np.isscalar(w) else out


def inv_logit(q) -> np.ndarray | float:
    """1 / (1 + exp(-q)), evaluated without overflow on either tail."""
    arr = np.asarray(q, dtype=float)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    return float(out) if np.isscalar(q) else out


def log1pexp(x) -> np.ndarray | float:
    """log(1 + e^x) without overflow."""
    arr = np.asarray(x, dtype=float)
    out = np.where(arr > 30.0, arr, np.log1p(np.exp(np.minimum(arr, 30.0))))
    return float(out) if np.isscalar(x) else out


def norm_logpdf(x, mean, var) -> np.ndarray | float:
    """Normal log density, elementwise."""
    x = np.asarray(x, dtype=float)
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)
