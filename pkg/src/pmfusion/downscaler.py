"""Spatio-temporal downscaler: calibrates one gridded source against monitors.

Model for monitor value Y_st at site s, day t with linked grid value X_st:

    Y_st = alpha_st + beta_st * X_st + Z_st @ gamma + eps_st,
    eps_st ~ N(0, sigma2_y)

    alpha_st = alpha0_t + alpha1_s      beta_st = beta0_t + beta1_s

The daily terms alpha0, beta0 follow independent first-order temporal CAR
models (dependence eta, conditional variance sigma2 / n_t). The site terms
are a linear coregionalization (alpha1_s, beta1_s)' = A @ (v1_s, v2_s)' of
two independent unit-variance GPs with exponential covariance and ranges
theta1, theta2; A is 2x2 lower triangular with nonnegative diagonal
(samples reflected into that half-space). The covariate block Z enters the
satellite model only; covariates are standardized internally and gamma gets
a flat prior. Variances get IG(a, b) priors, GP ranges Gamma(shape, rate).

Estimation is MCMC: conditionally conjugate Gibbs blocks for gamma, the
daily series, the latent fields, A and the variances, a discrete grid
update for each eta, and adaptive random-walk Metropolis on log theta.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .config import MCMCConfig
from .errors import InsufficientDataError, OutOfDomainError
from .geo import CTM, SAT, Location, distance_matrix
from .kernels import (
    ETA_GRID,
    car_logdet_table,
    car_neighbor_count,
    jittered_cholesky,
    mvn_logpdf_zero_mean,
    sample_from_log_weights,
    sample_tridiag_mvn,
)
from .tables import N_COVARIATES, ObservationTable

# N(0, A_PRIOR_VAR) prior on each free element of the coregionalization matrix
A_PRIOR_VAR = 1.0e3

_ADAPT_WINDOW = 50
_ADAPT_LOW = 0.30
_ADAPT_HIGH = 0.45


@dataclass(frozen=True)
class DownscalerState:
    """One posterior sample of all downscaler parameters."""

    gamma: np.ndarray
    alpha0: np.ndarray
    beta0: np.ndarray
    a_coreg: np.ndarray  # (A11, A21, A22), lower-triangular by construction
    v1: np.ndarray
    v2: np.ndarray
    sigma2_y: float
    sigma2_alpha0: float
    sigma2_beta0: float
    eta_alpha0: float
    eta_beta0: float
    theta1: float
    theta2: float

    @property
    def a_matrix(self) -> np.ndarray:
        a11, a21, a22 = self.a_coreg
        return np.array([[a11, 0.0], [a21, a22]])

    @property
    def alpha1(self) -> np.ndarray:
        return self.a_coreg[0] * self.v1

    @property
    def beta1(self) -> np.ndarray:
        return self.a_coreg[1] * self.v1 + self.a_coreg[2] * self.v2


@dataclass
class DownscalerFit:
    """Posterior sample set from fit_downscaler, arrays indexed by sample."""

    source: str
    sites: list[Location]
    n_days: int
    gamma: np.ndarray
    alpha0: np.ndarray
    beta0: np.ndarray
    a_coreg: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    sigma2_y: np.ndarray
    sigma2_alpha0: np.ndarray
    sigma2_beta0: np.ndarray
    eta_alpha0: np.ndarray
    eta_beta0: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    z_mean: np.ndarray
    z_sd: np.ndarray
    acceptance: dict

    def __len__(self) -> int:
        return self.sigma2_y.shape[0]

    def state(self, i: int) -> DownscalerState:
        return DownscalerState(
            gamma=self.gamma[i],
            alpha0=self.alpha0[i],
            beta0=self.beta0[i],
            a_coreg=self.a_coreg[i],
            v1=self.v1[i],
            v2=self.v2[i],
            sigma2_y=float(self.sigma2_y[i]),
            sigma2_alpha0=float(self.sigma2_alpha0[i]),
            sigma2_beta0=float(self.sigma2_beta0[i]),
            eta_alpha0=float(self.eta_alpha0[i]),
            eta_beta0=float(self.eta_beta0[i]),
            theta1=float(self.theta1[i]),
            theta2=float(self.theta2[i]),
        )


@dataclass
class SourcePredictions:
    """Posterior predictive summaries for one source at arbitrary targets."""

    ids: np.ndarray
    day: np.ndarray
    mu: np.ndarray
    var: np.ndarray
    available: np.ndarray


class _Blocks:
    """Full-conditional updates for one source's model.

    Holds the data layout and the current state; each draw_* method is one
    Gibbs/MH block so the blocks can be exercised and checked in isolation.
    """

    def __init__(self, data: ObservationTable, source: str, mcmc: MCMCConfig):
        if source not in (CTM, SAT):
            raise ValueError(f"unknown source {source!r}")
        self.source = source
        self.mcmc = mcmc
        mask = data.usable_mask(source)
        bad = [
            data.sites[s].site_id
            for s in range(data.n_sites)
            if not mask[data.site_idx == s].any()
        ]
        if bad:
            raise InsufficientDataError(
                f"sites with no usable {source} records: {', '.join(bad)}"
            )
        if data.n_days < 2:
            raise InsufficientDataError("need a horizon of at least 2 days")

        self.sites = data.sites
        self.S = data.n_sites
        self.T = data.n_days
        self.site = data.site_idx[mask]
        self.day0 = data.day[mask] - 1
        self.y = data.y[mask]
        self.x = data.x_for(source)[mask]
        self.n = self.y.shape[0]

        if source == SAT:
            z_raw = data.z[mask]
            self.z_mean = z_raw.mean(axis=0)
            self.z_sd = z_raw.std(axis=0)
            flat = np.flatnonzero(self.z_sd <= 0)
            if flat.size:
                raise InsufficientDataError(
                    f"constant covariate column(s) {flat.tolist()}; "
                    "gamma is not identifiable under a flat prior"
                )
            self.zmat = (z_raw - self.z_mean) / self.z_sd
            self.ztz_chol, _ = jittered_cholesky(self.zmat.T @ self.zmat)
            self.p_cov = N_COVARIATES
        else:
            self.z_mean = np.zeros(N_COVARIATES)
            self.z_sd = np.ones(N_COVARIATES)
            self.zmat = None
            self.ztz_chol = None
            self.p_cov = 0

        self.counts_day = np.bincount(self.day0, minlength=self.T).astype(float)
        self.sum_x2_day = np.bincount(self.day0, weights=self.x**2, minlength=self.T)
        self.n_t = car_neighbor_count(self.T)
        self.logdet_table = car_logdet_table(self.T)
        self.d_sites = distance_matrix(self.sites)
        diam = float(self.d_sites.max())
        self.theta_floor = max(diam * 1e-4, 1e-6)

        rng = np.random.default_rng(mcmc.seed)
        self.rng = rng

        # starting values from a pooled least-squares line through (x, y)
        xbar, ybar = self.x.mean(), self.y.mean()
        vx = float(np.var(self.x))
        b0 = float(np.cov(self.x, self.y)[0, 1] / vx) if vx > 0 and self.n > 1 else 0.0
        day_sum = np.bincount(self.day0, weights=self.y - b0 * self.x, minlength=self.T)
        day_mean = np.where(
            self.counts_day > 0, day_sum / np.maximum(self.counts_day, 1.0), ybar - b0 * xbar
        )
        self.alpha0 = day_mean.copy()
        self.beta0 = np.full(self.T, b0)
        self.gamma = np.zeros(self.p_cov)
        self.v1 = np.zeros(self.S)
        self.v2 = np.zeros(self.S)
        self.a = np.array([1.0, 0.0, 1.0])
        resid = self.y - self.alpha0[self.day0] - b0 * self.x
        self.sigma2_y = max(float(np.var(resid)), 1e-3)
        self.sigma2_a = max(float(np.var(self.alpha0)), 0.1)
        self.sigma2_b = 0.1
        self.eta_a = 0.5
        self.eta_b = 0.5
        self.theta1 = max(diam / 4.0, self.theta_floor)
        self.theta2 = max(diam / 4.0, self.theta_floor)
        self._set_range_cache(1, self.theta1)
        self._set_range_cache(2, self.theta2)
        self.step_theta = [0.5, 0.5]
        self.theta_accept = [0, 0]
        self.theta_tries = [0, 0]
        self.theta_window = [0, 0]

    # -- residual helpers ------------------------------------------------

    def _zg(self) -> np.ndarray:
        if self.p_cov:
            return self.zmat @ self.gamma
        return np.zeros(self.n)

    def _site_effects(self) -> tuple[np.ndarray, np.ndarray]:
        alpha1 = self.a[0] * self.v1
        beta1 = self.a[1] * self.v1 + self.a[2] * self.v2
        return alpha1, beta1

    def _resid_no_site(self) -> np.ndarray:
        """y minus everything except the site-level terms and noise."""
        return self.y - self.alpha0[self.day0] - self.beta0[self.day0] * self.x - self._zg()

    def _set_range_cache(self, which: int, theta: float) -> None:
        corr = np.exp(-self.d_sites / theta)
        chol, _ = jittered_cholesky(corr)
        rinv = cho_solve((chol, True), np.eye(self.S))
        if which == 1:
            self.chol_r1, self.rinv1 = chol, rinv
        else:
            self.chol_r2, self.rinv2 = chol, rinv

    # -- Gibbs blocks ----------------------------------------------------

    def draw_gamma(self) -> None:
        if not self.p_cov:
            return
        alpha1, beta1 = self._site_effects()
        r = (
            self.y
            - self.alpha0[self.day0]
            - alpha1[self.site]
            - (self.beta0[self.day0] + beta1[self.site]) * self.x
        )
        mean = cho_solve((self.ztz_chol, True), self.zmat.T @ r)
        z = self.rng.standard_normal(self.p_cov)
        self.gamma = mean + np.sqrt(self.sigma2_y) * solve_triangular(
            self.ztz_chol, z, lower=True, trans="T"
        )

    def _daily_series_draw(
        self, weights_diag: np.ndarray, wr_day: np.ndarray,
        eta: float, sigma2_car: float,
    ) -> np.ndarray:
        prior_diag = self.n_t / sigma2_car
        prior_off = np.full(self.T - 1, -eta / sigma2_car)
        post_diag = prior_diag + weights_diag / self.sigma2_y
        b = wr_day / self.sigma2_y
        return sample_tridiag_mvn(post_diag, prior_off, b, self.rng)

    def draw_alpha0(self) -> None:
        alpha1, beta1 = self._site_effects()
        r = (
            self.y
            - alpha1[self.site]
            - (self.beta0[self.day0] + beta1[self.site]) * self.x
            - self._zg()
        )
        wr = np.bincount(self.day0, weights=r, minlength=self.T)
        self.alpha0 = self._daily_series_draw(self.counts_day, wr, self.eta_a, self.sigma2_a)

    def draw_beta0(self) -> None:
        alpha1, beta1 = self._site_effects()
        r = (
            self.y
            - self.alpha0[self.day0]
            - alpha1[self.site]
            - beta1[self.site] * self.x
            - self._zg()
        )
        wr = np.bincount(self.day0, weights=self.x * r, minlength=self.T)
        self.beta0 = self._daily_series_draw(self.sum_x2_day, wr, self.eta_b, self.sigma2_b)

    def _draw_site_field(self, coef: np.ndarray, resid: np.ndarray, rinv: np.ndarray) -> np.ndarray:
        g = np.bincount(self.site, weights=coef * coef, minlength=self.S)
        b = np.bincount(self.site, weights=coef * resid, minlength=self.S) / self.sigma2_y
        prec = rinv + np.diag(g / self.sigma2_y)
        chol, _ = jittered_cholesky(prec)
        mean = cho_solve((chol, True), b)
        z = self.rng.standard_normal(self.S)
        return mean + solve_triangular(chol, z, lower=True, trans="T")

    def draw_v1(self) -> None:
        e = self._resid_no_site()
        c = self.a[0] + self.a[1] * self.x
        r = e - self.a[2] * self.v2[self.site] * self.x
        self.v1 = self._draw_site_field(c, r, self.rinv1)

    def draw_v2(self) -> None:
        e = self._resid_no_site()
        c = self.a[0] + self.a[1] * self.x
        d = self.a[2] * self.x
        r = e - c * self.v1[self.site]
        self.v2 = self._draw_site_field(d, r, self.rinv2)

    def draw_a(self) -> None:
        e = self._resid_no_site()
        v1s, v2s = self.v1[self.site], self.v2[self.site]
        f = np.column_stack([v1s, v1s * self.x, v2s * self.x])
        prec = f.T @ f / self.sigma2_y + np.eye(3) / A_PRIOR_VAR
        rhs = f.T @ e / self.sigma2_y
        chol, _ = jittered_cholesky(prec)
        mean = cho_solve((chol, True), rhs)
        z = self.rng.standard_normal(3)
        a = mean + solve_triangular(chol, z, lower=True, trans="T")
        # reflect into the identified half-space A11 >= 0, A22 >= 0; the joint
        # sign flips leave alpha1, beta1 and both GP priors invariant
        if a[0] < 0:
            a[0], a[1] = -a[0], -a[1]
            self.v1 = -self.v1
        if a[2] < 0:
            a[2] = -a[2]
            self.v2 = -self.v2
        self.a = a

    def _inv_gamma(self, shape: float, rate: float) -> float:
        return float(rate / self.rng.gamma(shape, 1.0))

    def draw_sigma2_y(self) -> None:
        alpha1, beta1 = self._site_effects()
        resid = (
            self.y
            - self.alpha0[self.day0]
            - alpha1[self.site]
            - (self.beta0[self.day0] + beta1[self.site]) * self.x
            - self._zg()
        )
        ssr = float(resid @ resid)
        self.sigma2_y = self._inv_gamma(self.mcmc.ig_a + 0.5 * self.n, self.mcmc.ig_b + 0.5 * ssr)

    @staticmethod
    def _car_quads(series: np.ndarray, n_t: np.ndarray) -> tuple[float, float]:
        qd = float(np.dot(n_t * series, series))
        qw = 2.0 * float(np.dot(series[:-1], series[1:]))
        return qd, qw

    def draw_car_variance(self, series: np.ndarray, eta: float) -> float:
        qd, qw = self._car_quads(series, self.n_t)
        quad = qd - eta * qw
        return self._inv_gamma(self.mcmc.ig_a + 0.5 * self.T, self.mcmc.ig_b + 0.5 * quad)

    def draw_eta(self, series: np.ndarray, sigma2_car: float) -> float:
        _, qw = self._car_quads(series, self.n_t)
        logw = 0.5 * self.logdet_table + ETA_GRID * (qw / (2.0 * sigma2_car))
        return float(ETA_GRID[sample_from_log_weights(logw, self.rng)])

    def draw_sigma2_alpha0(self) -> None:
        self.sigma2_a = self.draw_car_variance(self.alpha0, self.eta_a)

    def draw_sigma2_beta0(self) -> None:
        self.sigma2_b = self.draw_car_variance(self.beta0, self.eta_b)

    def draw_eta_alpha0(self) -> None:
        self.eta_a = self.draw_eta(self.alpha0, self.sigma2_a)

    def draw_eta_beta0(self) -> None:
        self.eta_b = self.draw_eta(self.beta0, self.sigma2_b)

    def _log_range_prior(self, theta: float) -> float:
        return (self.mcmc.rho_prior_shape - 1.0) * np.log(theta) - self.mcmc.rho_prior_rate * theta

    def draw_theta(self, which: int, adapt: bool) -> None:
        theta = self.theta1 if which == 1 else self.theta2
        v = self.v1 if which == 1 else self.v2
        chol = self.chol_r1 if which == 1 else self.chol_r2
        step = self.step_theta[which - 1]
        prop = float(theta * np.exp(step * self.rng.standard_normal()))
        self.theta_tries[which - 1] += 1
        accepted = False
        if prop >= self.theta_floor:
            chol_prop, _ = jittered_cholesky(np.exp(-self.d_sites / prop))
            cur = mvn_logpdf_zero_mean(v, chol) + self._log_range_prior(theta) + np.log(theta)
            new = mvn_logpdf_zero_mean(v, chol_prop) + self._log_range_prior(prop) + np.log(prop)
            if np.log(self.rng.random()) < new - cur:
                accepted = True
                self._set_range_cache(which, prop)
                if which == 1:
                    self.theta1 = prop
                else:
                    self.theta2 = prop
        if accepted:
            self.theta_accept[which - 1] += 1
            self.theta_window[which - 1] += 1
        if adapt and self.theta_tries[which - 1] % _ADAPT_WINDOW == 0:
            rate = self.theta_window[which - 1] / _ADAPT_WINDOW
            if rate > _ADAPT_HIGH:
                self.step_theta[which - 1] *= 1.25
            elif rate < _ADAPT_LOW:
                self.step_theta[which - 1] *= 0.8
            self.theta_window[which - 1] = 0

    def sweep(self, adapt: bool) -> None:
        self.draw_gamma()
        self.draw_alpha0()
        self.draw_beta0()
        self.draw_v1()
        self.draw_v2()
        self.draw_a()
        self.draw_sigma2_y()
        self.draw_sigma2_alpha0()
        self.draw_eta_alpha0()
        self.draw_sigma2_beta0()
        self.draw_eta_beta0()
        self.draw_theta(1, adapt)
        self.draw_theta(2, adapt)


def fit_downscaler(data: ObservationTable, source: str, mcmc: MCMCConfig) -> DownscalerFit:
    """Run the MCMC and return the thinned post-burn-in sample set.

    Parameters
    ----------
    data   : ObservationTable; records with a missing value for `source`
             are excluded from that source's likelihood
    source : "ctm" (no covariate block) or "sat" (covariates included)
    mcmc   : chain configuration; the run is deterministic given mcmc.seed

    Raises InsufficientDataError when any site has no usable record for the
    source, the horizon is shorter than 2 days, or a covariate is constant.
    """
    blocks = _Blocks(data, source, mcmc)
    kept = list(mcmc.kept_iterations())
    n_kept = len(kept)
    out = DownscalerFit(
        source=source,
        sites=blocks.sites,
        n_days=blocks.T,
        gamma=np.zeros((n_kept, blocks.p_cov)),
        alpha0=np.zeros((n_kept, blocks.T)),
        beta0=np.zeros((n_kept, blocks.T)),
        a_coreg=np.zeros((n_kept, 3)),
        v1=np.zeros((n_kept, blocks.S)),
        v2=np.zeros((n_kept, blocks.S)),
        sigma2_y=np.zeros(n_kept),
        sigma2_alpha0=np.zeros(n_kept),
        sigma2_beta0=np.zeros(n_kept),
        eta_alpha0=np.zeros(n_kept),
        eta_beta0=np.zeros(n_kept),
        theta1=np.zeros(n_kept),
        theta2=np.zeros(n_kept),
        z_mean=blocks.z_mean,
        z_sd=blocks.z_sd,
        acceptance={},
    )
    keep_at = {it: j for j, it in enumerate(kept)}
    accept_at_burn = [0, 0]
    tries_at_burn = [0, 0]
    for it in range(mcmc.n_iter):
        blocks.sweep(adapt=it < mcmc.burn_in)
        if it + 1 == mcmc.burn_in:
            accept_at_burn = list(blocks.theta_accept)
            tries_at_burn = list(blocks.theta_tries)
        j = keep_at.get(it)
        if j is not None:
            out.gamma[j] = blocks.gamma
            out.alpha0[j] = blocks.alpha0
            out.beta0[j] = blocks.beta0
            out.a_coreg[j] = blocks.a
            out.v1[j] = blocks.v1
            out.v2[j] = blocks.v2
            out.sigma2_y[j] = blocks.sigma2_y
            out.sigma2_alpha0[j] = blocks.sigma2_a
            out.sigma2_beta0[j] = blocks.sigma2_b
            out.eta_alpha0[j] = blocks.eta_a
            out.eta_beta0[j] = blocks.eta_b
            out.theta1[j] = blocks.theta1
            out.theta2[j] = blocks.theta2
    out.acceptance = {
        "theta1": (blocks.theta_accept[0] - accept_at_burn[0])
        / max(blocks.theta_tries[0] - tries_at_burn[0], 1),
        "theta2": (blocks.theta_accept[1] - accept_at_burn[1])
        / max(blocks.theta_tries[1] - tries_at_burn[1], 1),
        "step_theta": tuple(blocks.step_theta),
    }
    return out


def predict_at(
    fit: DownscalerFit,
    locations: list[Location],
    loc_idx: np.ndarray,
    days: np.ndarray,
    linked_x: np.ndarray,
    z: np.ndarray | None = None,
    *,
    seed: int = 0,
    sample_stride: int = 1,
) -> SourcePredictions:
    """Posterior predictive mean/variance at arbitrary targets.

    Targets are records (locations[loc_idx[i]], days[i]) with linked grid
    value linked_x[i] (NaN marks a missing satellite retrieval, yielding
    available=False). Latent site fields at new locations are drawn from
    their GP conditionals given the fitted monitors, per posterior sample;
    at a fitted monitor the conditional collapses onto the sampled value.
    The returned variance is the spread of per-sample predictions plus the
    mean residual variance, i.e. a full posterior predictive.

    z holds raw-scale covariates (standardized internally with the scaler
    from the fit); required when the fit used the satellite source.
    """
    loc_idx = np.asarray(loc_idx, dtype=np.int64)
    days = np.asarray(days, dtype=np.int64)
    linked_x = np.asarray(linked_x, dtype=float)
    n = days.shape[0]
    if loc_idx.shape[0] != n or linked_x.shape[0] != n:
        raise ValueError("loc_idx, days, linked_x must have equal length")
    if days.min(initial=1) < 1 or days.max(initial=1) > fit.n_days:
        raise OutOfDomainError(f"target days must lie in 1..{fit.n_days}")
    if fit.source == SAT:
        if z is None:
            raise ValueError("satellite predictions need the covariate block z")
        z = np.asarray(z, dtype=float)
        if z.shape != (n, N_COVARIATES):
            raise ValueError(f"z must have shape ({n}, {N_COVARIATES})")
        z_std = (z - fit.z_mean) / fit.z_sd
    else:
        z_std = None

    avail = np.isfinite(linked_x)
    ids = np.array([locations[i].site_id for i in loc_idx], dtype=object)
    mu = np.full(n, np.nan)
    var = np.full(n, np.nan)
    if not avail.any():
        return SourcePredictions(ids=ids, day=days, mu=mu, var=var, available=avail)

    rng = np.random.default_rng(seed)
    sub = np.flatnonzero(avail)
    sub_loc = loc_idx[sub]
    sub_day0 = days[sub] - 1
    sub_x = linked_x[sub]
    sub_zg_base = z_std[sub] if z_std is not None else None

    d_sites = distance_matrix(fit.sites)
    d_cross = distance_matrix(fit.sites, locations)
    n_loc = len(locations)

    sample_ids = range(0, len(fit), max(sample_stride, 1))
    count = 0
    mean_acc = np.zeros(sub.size)
    m2_acc = np.zeros(sub.size)
    s2y_acc = 0.0
    for j in sample_ids:
        v1_star = _conditional_field_draw(
            d_sites, d_cross, fit.v1[j], float(fit.theta1[j]), rng
        )
        v2_star = _conditional_field_draw(
            d_sites, d_cross, fit.v2[j], float(fit.theta2[j]), rng
        )
        a11, a21, a22 = fit.a_coreg[j]
        alpha1 = a11 * v1_star
        beta1 = a21 * v1_star + a22 * v2_star
        pred = (
            fit.alpha0[j][sub_day0]
            + alpha1[sub_loc]
            + (fit.beta0[j][sub_day0] + beta1[sub_loc]) * sub_x
        )
        if sub_zg_base is not None:
            pred = pred + sub_zg_base @ fit.gamma[j]
        count += 1
        delta = pred - mean_acc
        mean_acc += delta / count
        m2_acc += delta * (pred - mean_acc)
        s2y_acc += float(fit.sigma2_y[j])

    mu[sub] = mean_acc
    spread = m2_acc / max(count - 1, 1)
    var[sub] = spread + s2y_acc / count
    return SourcePredictions(ids=ids, day=days, mu=mu, var=var, available=avail)


def _conditional_field_draw(
    d_sites: np.ndarray,
    d_cross: np.ndarray,
    v: np.ndarray,
    theta: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw a unit-variance exponential-GP field at targets given site values."""
    corr = np.exp(-d_sites / theta)
    chol, _ = jittered_cholesky(corr)
    lk = solve_triangular(chol, np.exp(-d_cross / theta), lower=True)
    lv = solve_triangular(chol, v, lower=True)
    mean = lk.T @ lv
    sd = np.sqrt(np.maximum(1.0 - np.sum(lk * lk, axis=0), 0.0))
    return mean + sd * rng.standard_normal(mean.shape[0])


def cv_predict(
    data: ObservationTable,
    fold_of_record: np.ndarray,
    source: str,
    mcmc: MCMCConfig,
) -> SourcePredictions:
    """Out-of-sample predictive for every record via fold-held-out refits.

    fold_of_record assigns each record of `data` to a fold; for each fold
    the model is refit on the complement and the fold's records predicted.
    Fold fits use independent child seeds of mcmc.seed, so the result is
    deterministic and independent of fold ordering.
    """
    fold_of_record = np.asarray(fold_of_record, dtype=np.int64)
    if fold_of_record.shape[0] != data.n_records:
        raise ValueError("fold assignment length must match the record count")
    n = data.n_records
    mu = np.full(n, np.nan)
    var = np.full(n, np.nan)
    avail = data.usable_mask(source)
    ids = np.array([data.sites[i].site_id for i in data.site_idx], dtype=object)

    folds = np.unique(fold_of_record)
    seed_seq = np.random.SeedSequence(mcmc.seed)
    children = seed_seq.spawn(2 * folds.size)
    for k, fold in enumerate(folds):
        held = fold_of_record == fold
        train = data.subset(~held)
        fit_seed = int(children[2 * k].generate_state(1)[0])
        pred_seed = int(children[2 * k + 1].generate_state(1)[0])
        fit = fit_downscaler(train, source, replace(mcmc, seed=fit_seed))
        held_idx = np.flatnonzero(held & avail)
        if held_idx.size == 0:
            continue
        held_sites = np.unique(data.site_idx[held_idx])
        remap = {int(s): i for i, s in enumerate(held_sites)}
        loc_list = [data.sites[int(s)] for s in held_sites]
        loc_idx = np.array([remap[int(s)] for s in data.site_idx[held_idx]])
        pred = predict_at(
            fit,
            loc_list,
            loc_idx,
            data.day[held_idx],
            data.x_for(source)[held_idx],
            data.z[held_idx] if source == SAT else None,
            seed=pred_seed,
        )
        mu[held_idx] = pred.mu
        var[held_idx] = pred.var
    return SourcePredictions(ids=ids, day=data.day.copy(), mu=mu, var=var, available=avail)
