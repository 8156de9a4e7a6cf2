"""Spatially varying model averaging of the two downscalers.

Given per-(site, day) Gaussian predictive summaries (mu, sigma2) for the
CTM-based model (component 1) and the satellite-based model (component 2),
the observed monitor values follow the two-component mixture

    p(y_st) = w_s N(y | mu1, var1) + (1 - w_s) N(y | mu2, var2)

with a site-level weight w_s whose logit q_s = logit(w_s) is a zero-mean
GP with covariance tau2 * exp(-d / rho). Estimation augments the mixture
with daily memberships z_st and cycles four updates:

  1. z_st | rest  ~ Bernoulli of the posterior membership probability;
  2. q_s  | rest  by random-walk MH against the Bernoulli likelihood
     sum_t [z_st q_s - log(1 + e^{q_s})] plus the univariate GP
     conditional prior of q_s given q_{-s};
  3. tau2 | rest  ~ IG(a + S/2, b + q' C(rho)^{-1} q / 2), C the
     correlation matrix;
  4. rho  | rest  by MH with a log-normal proposal; the acceptance ratio
     multiplies the MVN likelihood of q, the Gamma(shape, rate) prior and
     the proposal Jacobian rho_new / rho_old.

The two-stage alternative replaces 2-4 with per-site conjugate
Beta(1 + sum z, 1 + T_s - sum z) weights and kriges the logits of the
posterior medians afterwards. Component summaries are treated as fixed
known inputs; fit them out-of-sample (cross-validated) to avoid rewarding
overfit components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import brentq
from scipy.special import ndtr

from .config import MCMCConfig
from .errors import DomainError, NoInputsError
from .geo import Location, distance_matrix
from .kernels import (
    inv_logit,
    jittered_cholesky,
    log1pexp,
    logit,
    norm_logpdf,
)

_ADAPT_WINDOW = 50
_ADAPT_LOW = 0.30
_ADAPT_HIGH = 0.45

# refresh r = P q from scratch periodically to cap round-off accumulation
_REFRESH_EVERY = 128


@dataclass(frozen=True)
class WeightField:
    """One posterior sample of the weight surface parameters."""

    q: np.ndarray
    tau2: float
    rho: float


@dataclass
class WeightFieldSamples:
    """Posterior sample set of (q, tau2, rho) over a fixed site list."""

    locations: list[Location]
    q: np.ndarray  # (n_samples, S)
    tau2: np.ndarray
    rho: np.ndarray
    t_s: np.ndarray  # usable-day count per site
    acceptance: dict = field(default_factory=dict)

    @property
    def site_ids(self) -> list[str]:
        return [l.site_id for l in self.locations]

    def __len__(self) -> int:
        return self.tau2.shape[0]

    def sample(self, i: int) -> WeightField:
        return WeightField(q=self.q[i], tau2=float(self.tau2[i]), rho=float(self.rho[i]))

    def w_samples(self) -> np.ndarray:
        return inv_logit(self.q)

    def summary(self) -> dict[str, np.ndarray]:
        w = self.w_samples()
        return {
            "w_mean": w.mean(axis=0),
            "w_lo": np.quantile(w, 0.025, axis=0),
            "w_hi": np.quantile(w, 0.975, axis=0),
            "q_mean": self.q.mean(axis=0),
        }


@dataclass(frozen=True)
class LatentAssignment:
    """Daily component memberships for the records where both sources exist."""

    record_idx: np.ndarray
    site_idx: np.ndarray
    day: np.ndarray
    z: np.ndarray
    prob: np.ndarray


@dataclass(frozen=True)
class MixtureDistribution:
    """Two-component Normal mixture; w is the weight on component 1 (CTM)."""

    w: float
    mu1: float
    var1: float
    mu2: float
    var2: float

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise DomainError("mixture weight must lie in [0, 1]")
        if self.var1 <= 0 or self.var2 <= 0:
            raise DomainError("component variances must be positive")

    @property
    def mean(self) -> float:
        return self.w * self.mu1 + (1.0 - self.w) * self.mu2

    @property
    def variance(self) -> float:
        m = self.mean
        second = self.w * (self.var1 + self.mu1**2) + (1.0 - self.w) * (
            self.var2 + self.mu2**2
        )
        return second - m * m

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        c = self.w * ndtr((x - self.mu1) / math.sqrt(self.var1)) + (
            1.0 - self.w
        ) * ndtr((x - self.mu2) / math.sqrt(self.var2))
        return float(c) if c.ndim == 0 else c

    def quantile(self, p: float) -> float:
        """Inverse CDF by monotone root-finding."""
        if not 0.0 < p < 1.0:
            raise DomainError("quantile level must lie in (0, 1)")
        sd1, sd2 = math.sqrt(self.var1), math.sqrt(self.var2)
        scale = max(sd1, sd2)
        lo = min(self.mu1 - 10 * sd1, self.mu2 - 10 * sd2)
        hi = max(self.mu1 + 10 * sd1, self.mu2 + 10 * sd2)
        while self.cdf(lo) > p:
            lo -= 10 * scale
        while self.cdf(hi) < p:
            hi += 10 * scale
        return float(brentq(lambda x: self.cdf(x) - p, lo, hi, xtol=1e-13 * scale + 1e-300, rtol=8.9e-16))


def predict_mixture(
    w: float,
    comp1: tuple[float, float] | None,
    comp2: tuple[float, float] | None,
) -> MixtureDistribution:
    """Combine the available component predictives into a mixture.

    comp1/comp2 are (mu, var) for the CTM and satellite models, or None when
    that source is unavailable at the target. A missing satellite component
    collapses the mixture onto the CTM model (w forced to 1), and vice versa.
    Raises NoInputsError when neither component exists.
    """
    if comp1 is None and comp2 is None:
        raise NoInputsError("no available component to combine")
    if comp2 is None:
        mu, var = comp1
        return MixtureDistribution(1.0, mu, var, mu, var)
    if comp1 is None:
        mu, var = comp2
        return MixtureDistribution(0.0, mu, var, mu, var)
    return MixtureDistribution(float(w), comp1[0], comp1[1], comp2[0], comp2[1])


def mixture_quantiles_arrays(
    w: np.ndarray,
    mu1: np.ndarray,
    var1: np.ndarray,
    mu2: np.ndarray,
    var2: np.ndarray,
    p: float,
    tol: float = 1e-10,
) -> np.ndarray:
    """Vectorized mixture quantiles by bisection; used for gridded surfaces."""
    sd1, sd2 = np.sqrt(var1), np.sqrt(var2)
    lo = np.minimum(mu1 - 10 * sd1, mu2 - 10 * sd2)
    hi = np.maximum(mu1 + 10 * sd1, mu2 + 10 * sd2)
    scale = np.maximum(sd1, sd2)

    def cdf(x):
        return w * ndtr((x - mu1) / sd1) + (1.0 - w) * ndtr((x - mu2) / sd2)

    for _ in range(100):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max((hi - lo) / np.maximum(scale, 1e-300)) < tol:
            break
    return 0.5 * (lo + hi)


# -- MCMC steps ----------------------------------------------------------


def membership_prob(
    y: np.ndarray,
    mu1: np.ndarray,
    var1: np.ndarray,
    mu2: np.ndarray,
    var2: np.ndarray,
    w,
) -> np.ndarray:
    """Posterior probability that y came from component 1."""
    delta = norm_logpdf(y, mu1, var1) - norm_logpdf(y, mu2, var2)
    return inv_logit(logit(np.clip(w, 1e-12, 1 - 1e-12)) + delta)


def update_z(
    y: np.ndarray,
    inputs,
    q: np.ndarray,
    rng: np.random.Generator,
    locations: list[Location] | None = None,
) -> LatentAssignment:
    """Step 1: draw daily memberships where both components are available.

    q is ordered like `locations` (or like the site order of first
    appearance in inputs.ids when locations is None).
    """
    both = inputs.both_available()
    idx = np.flatnonzero(both)
    site_idx = _site_index(inputs.ids, locations)
    p = membership_prob(
        np.asarray(y, dtype=float)[idx],
        inputs.mu[idx, 0],
        inputs.var[idx, 0],
        inputs.mu[idx, 1],
        inputs.var[idx, 1],
        inv_logit(np.asarray(q, dtype=float))[site_idx[idx]],
    )
    z = (rng.random(idx.size) < p).astype(np.int8)
    return LatentAssignment(
        record_idx=idx, site_idx=site_idx[idx], day=inputs.day[idx], z=z, prob=p
    )


def _site_index(ids: np.ndarray, locations: list[Location] | None) -> np.ndarray:
    if locations is not None:
        order = {l.site_id: i for i, l in enumerate(locations)}
    else:
        order = {}
        for sid in ids:
            if sid not in order:
                order[sid] = len(order)
    try:
        return np.array([order[sid] for sid in ids], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"record id {exc.args[0]!r} not among the weight-field sites") from None


def _scalar_log1pexp(x: float) -> float:
    if x > 30.0:
        return x
    return math.log1p(math.exp(x))


def update_q(
    z_sum: np.ndarray,
    t_s: np.ndarray,
    q: np.ndarray,
    prec: np.ndarray,
    r: np.ndarray,
    step_sd: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Step 2: sequential random-walk MH sweep over the site logits.

    prec is the precision of the GP prior (tau2 * C(rho))^{-1}; r must
    equal prec @ q on entry and is kept in sync in place. Returns the
    per-site acceptance indicator array.
    """
    s_count = q.shape[0]
    accepted = np.zeros(s_count, dtype=bool)
    normals = rng.standard_normal(s_count)
    uniforms = rng.random(s_count)
    for s in range(s_count):
        var_s = 1.0 / prec[s, s]
        mean_s = q[s] - r[s] * var_s
        prop = q[s] + step_sd[s] * normals[s]
        d_lik = z_sum[s] * (prop - q[s]) - t_s[s] * (
            _scalar_log1pexp(prop) - _scalar_log1pexp(q[s])
        )
        d_pri = ((q[s] - mean_s) ** 2 - (prop - mean_s) ** 2) / (2.0 * var_s)
        if math.log(uniforms[s]) < d_lik + d_pri:
            dq = prop - q[s]
            r += prec[:, s] * dq
            q[s] = prop
            accepted[s] = True
    return accepted


def update_tau2(
    q: np.ndarray,
    rho: float,
    locations,
    rng: np.random.Generator,
    ig_a: float = 0.001,
    ig_b: float = 0.001,
) -> float:
    """Step 3: conjugate IG draw given the correlation matrix at rho."""
    q = np.asarray(q, dtype=float)
    d = distance_matrix(locations)
    chol, _ = jittered_cholesky(np.exp(-d / rho))
    half = solve_triangular(chol, q, lower=True)
    quad = float(half @ half)
    shape = ig_a + 0.5 * q.shape[0]
    rate = ig_b + 0.5 * quad
    return float(rate / rng.gamma(shape, 1.0))


def _q_loglik(q: np.ndarray, tau2: float, corr_chol: np.ndarray) -> float:
    """MVN(0, tau2 * C) log density of q given the Cholesky factor of C."""
    s = q.shape[0]
    half = solve_triangular(corr_chol, q, lower=True)
    return -0.5 * (
        s * math.log(2.0 * math.pi * tau2)
        + 2.0 * float(np.sum(np.log(np.diag(corr_chol))))
        + float(half @ half) / tau2
    )


def update_rho(
    q: np.ndarray,
    tau2: float,
    rho: float,
    locations,
    kappa_rho: float,
    rng: np.random.Generator,
    prior_shape: float = 0.5,
    prior_rate: float = 0.005,
    d: np.ndarray | None = None,
    corr_chol: np.ndarray | None = None,
) -> tuple[float, bool, np.ndarray]:
    """Step 4: log-normal proposal MH on the weight-field range.

    Returns (rho, accepted, corr_chol at the returned rho). The acceptance
    ratio includes the proposal Jacobian factor rho_prop / rho_cur.
    """
    q = np.asarray(q, dtype=float)
    if d is None:
        d = distance_matrix(locations)
    if corr_chol is None:
        corr_chol, _ = jittered_cholesky(np.exp(-d / rho))
    prop = float(rho * math.exp(math.sqrt(kappa_rho) * rng.standard_normal()))
    chol_prop, _ = jittered_cholesky(np.exp(-d / prop))

    def log_target(r: float, chol: np.ndarray) -> float:
        return (
            _q_loglik(q, tau2, chol)
            + (prior_shape - 1.0) * math.log(r)
            - prior_rate * r
        )

    # + log(prop) - log(rho) is the Jacobian of the log-normal proposal
    delta = log_target(prop, chol_prop) - log_target(rho, corr_chol) + math.log(prop) - math.log(rho)
    if math.log(rng.random()) < delta:
        return prop, True, chol_prop
    return rho, False, corr_chol


# -- fitters -------------------------------------------------------------


class _EnsembleProblem:
    """Aligned arrays for the weight-field samplers."""

    def __init__(self, y, inputs, locations):
        self.locations = list(locations)
        self.s_count = len(self.locations)
        self.y = np.asarray(y, dtype=float)
        if self.y.shape[0] != inputs.n_records:
            raise ValueError("y length must match the predictive table")
        self.site_idx = _site_index(inputs.ids, self.locations)
        both = inputs.both_available()
        self.rows = np.flatnonzero(both)
        self.row_site = self.site_idx[self.rows]
        self.delta_ll = norm_logpdf(
            self.y[self.rows], inputs.mu[self.rows, 0], inputs.var[self.rows, 0]
        ) - norm_logpdf(
            self.y[self.rows], inputs.mu[self.rows, 1], inputs.var[self.rows, 1]
        )
        self.t_s = np.bincount(self.row_site, minlength=self.s_count).astype(float)
        self.d = distance_matrix(self.locations)
        diam = float(self.d.max())
        self.rho_init = max(diam / 4.0, 1e-3)

    def draw_assignment_sums(self, q: np.ndarray, rng) -> np.ndarray:
        p = inv_logit(q[self.row_site] + self.delta_ll)
        z = rng.random(self.rows.size) < p
        return np.bincount(self.row_site, weights=z.astype(float), minlength=self.s_count)


def fit_joint(y, inputs, locations, mcmc: MCMCConfig) -> WeightFieldSamples:
    """Joint MCMC over memberships, logits and GP hyperparameters.

    y aligns with inputs row-wise; only rows with both components present
    enter the likelihood. Sites with no such rows keep their GP prior.
    Inputs should be out-of-sample (stage-1) predictive summaries.
    """
    prob = _EnsembleProblem(y, inputs, locations)
    rng = np.random.default_rng(mcmc.seed)
    s_count = prob.s_count

    q = np.zeros(s_count)
    tau2 = 1.0
    rho = prob.rho_init
    corr_chol, _ = jittered_cholesky(np.exp(-prob.d / rho))
    corr_inv = cho_solve((corr_chol, True), np.eye(s_count))
    prec = corr_inv / tau2
    r = prec @ q

    step_sd = np.full(s_count, math.sqrt(mcmc.kappa_w))
    step_rho = math.sqrt(mcmc.kappa_rho)
    acc_q = np.zeros(s_count)
    acc_q_window = np.zeros(s_count)
    acc_rho = 0
    acc_rho_window = 0
    n_kept = mcmc.n_kept
    out_q = np.zeros((n_kept, s_count))
    out_tau2 = np.zeros(n_kept)
    out_rho = np.zeros(n_kept)
    keep_at = {it: j for j, it in enumerate(mcmc.kept_iterations())}
    acc_q_at_burn = np.zeros(s_count)
    acc_rho_at_burn = 0

    for it in range(mcmc.n_iter):
        z_sum = prob.draw_assignment_sums(q, rng)
        accepted = update_q(z_sum, prob.t_s, q, prec, r, step_sd, rng)
        acc_q += accepted
        acc_q_window += accepted

        quad = tau2 * float(q @ r)  # q' C^{-1} q with the current precision
        shape = mcmc.ig_a + 0.5 * s_count
        rate = mcmc.ig_b + 0.5 * quad
        tau2_new = float(rate / rng.gamma(shape, 1.0))
        prec *= tau2 / tau2_new
        r *= tau2 / tau2_new
        tau2 = tau2_new

        rho, rho_accepted, corr_chol = update_rho(
            q,
            tau2,
            rho,
            prob.locations,
            step_rho**2,
            rng,
            mcmc.rho_prior_shape,
            mcmc.rho_prior_rate,
            d=prob.d,
            corr_chol=corr_chol,
        )
        if rho_accepted:
            corr_inv = cho_solve((corr_chol, True), np.eye(s_count))
            prec = corr_inv / tau2
            r = prec @ q
            acc_rho += 1
            acc_rho_window += 1
        elif it % _REFRESH_EVERY == 0:
            r = prec @ q

        if it < mcmc.burn_in and (it + 1) % _ADAPT_WINDOW == 0:
            rates = acc_q_window / _ADAPT_WINDOW
            step_sd[rates > _ADAPT_HIGH] *= 1.25
            step_sd[rates < _ADAPT_LOW] *= 0.8
            acc_q_window[:] = 0
            rho_rate = acc_rho_window / _ADAPT_WINDOW
            if rho_rate > _ADAPT_HIGH:
                step_rho *= 1.25
            elif rho_rate < _ADAPT_LOW:
                step_rho *= 0.8
            acc_rho_window = 0

        if it + 1 == mcmc.burn_in:
            acc_q_at_burn = acc_q.copy()
            acc_rho_at_burn = acc_rho

        j = keep_at.get(it)
        if j is not None:
            out_q[j] = q
            out_tau2[j] = tau2
            out_rho[j] = rho

    post = max(mcmc.n_iter - mcmc.burn_in, 1)
    return WeightFieldSamples(
        locations=prob.locations,
        q=out_q,
        tau2=out_tau2,
        rho=out_rho,
        t_s=prob.t_s,
        acceptance={
            "q": float(np.mean(acc_q - acc_q_at_burn) / post),
            "rho": (acc_rho - acc_rho_at_burn) / post,
        },
    )


def fit_site_weights(y, inputs, locations, mcmc: MCMCConfig) -> tuple[np.ndarray, np.ndarray]:
    """Stage A of the two-stage fit: independent conjugate site weights.

    Gibbs alternates memberships z | w with w_s | z ~ Beta(1 + sum z,
    1 + T_s - sum z), all sites in parallel. Returns (w_samples with shape
    (n_kept, S), t_s).
    """
    prob = _EnsembleProblem(y, inputs, locations)
    rng = np.random.default_rng(mcmc.seed)
    s_count = prob.s_count
    w = np.full(s_count, 0.5)
    n_kept = mcmc.n_kept
    out_w = np.zeros((n_kept, s_count))
    keep_at = {it: j for j, it in enumerate(mcmc.kept_iterations())}
    for it in range(mcmc.n_iter):
        q = logit(np.clip(w, 1e-12, 1 - 1e-12))
        z_sum = prob.draw_assignment_sums(q, rng)
        w = rng.beta(1.0 + z_sum, 1.0 + prob.t_s - z_sum)
        j = keep_at.get(it)
        if j is not None:
            out_w[j] = w
    return out_w, prob.t_s


def fit_two_stage(y, inputs, locations, mcmc: MCMCConfig) -> WeightFieldSamples:
    """Two-stage estimation: conjugate site weights, then GP hyperparameters.

    The kriging data are the logits of the per-site posterior medians,
    treated as known; tau2 and rho are then sampled against that fixed
    vector with steps 3 and 4. Sites with no usable days are excluded from
    the field.
    """
    w_samples, t_s = fit_site_weights(y, inputs, locations, mcmc)
    keep = t_s > 0
    if not keep.any():
        raise NoInputsError("no site with both components available")
    kept_locs = [l for l, k in zip(locations, keep) if k]
    q_med = logit(np.clip(np.median(w_samples[:, keep], axis=0), 1e-12, 1 - 1e-12))

    rng = np.random.default_rng(np.random.SeedSequence(mcmc.seed).spawn(1)[0].generate_state(1)[0])
    d = distance_matrix(kept_locs)
    diam = float(d.max())
    rho = max(diam / 4.0, 1e-3)
    tau2 = max(float(np.var(q_med)), 1e-3)
    corr_chol, _ = jittered_cholesky(np.exp(-d / rho))
    step_rho = math.sqrt(mcmc.kappa_rho)
    acc_window = 0
    n_kept = mcmc.n_kept
    out_q = np.tile(q_med, (n_kept, 1))
    out_tau2 = np.zeros(n_kept)
    out_rho = np.zeros(n_kept)
    keep_at = {it: j for j, it in enumerate(mcmc.kept_iterations())}
    for it in range(mcmc.n_iter):
        half = solve_triangular(corr_chol, q_med, lower=True)
        quad = float(half @ half)
        shape = mcmc.ig_a + 0.5 * q_med.shape[0]
        rate = mcmc.ig_b + 0.5 * quad
        tau2 = float(rate / rng.gamma(shape, 1.0))
        rho, accepted, corr_chol = update_rho(
            q_med,
            tau2,
            rho,
            kept_locs,
            step_rho**2,
            rng,
            mcmc.rho_prior_shape,
            mcmc.rho_prior_rate,
            d=d,
            corr_chol=corr_chol,
        )
        acc_window += accepted
        if it < mcmc.burn_in and (it + 1) % _ADAPT_WINDOW == 0:
            rate_w = acc_window / _ADAPT_WINDOW
            if rate_w > _ADAPT_HIGH:
                step_rho *= 1.25
            elif rate_w < _ADAPT_LOW:
                step_rho *= 0.8
            acc_window = 0
        j = keep_at.get(it)
        if j is not None:
            out_tau2[j] = tau2
            out_rho[j] = rho
    return WeightFieldSamples(
        locations=kept_locs,
        q=out_q,
        tau2=out_tau2,
        rho=out_rho,
        t_s=t_s[keep],
        acceptance={},
    )


def krige_weights(
    field: WeightFieldSamples,
    targets,
    seed: int = 0,
    chunk: int = 2048,
    sample_stride: int = 1,
) -> dict[str, np.ndarray]:
    """Krige the logit field to targets and push draws through inv_logit.

    For each posterior sample the logits are kriged (simple kriging, known
    mean 0) with that sample's (tau2, rho), a conditional draw is taken, and
    the weight is its inverse logit. Returns per-target posterior summaries
    {w_mean, w_lo, w_hi, q_mean}. Far from all monitors the draws revert to
    N(0, tau2), i.e. weights centered on 1/2 with wide intervals.
    """
    rng = np.random.default_rng(seed)
    d_obs = distance_matrix(field.locations)
    d_cross = distance_matrix(field.locations, targets)
    n_t = d_cross.shape[1]
    idx = np.arange(0, len(field), max(sample_stride, 1))
    n_s = idx.size
    w_mean = np.zeros(n_t)
    w_lo = np.zeros(n_t)
    w_hi = np.zeros(n_t)
    q_mean = np.zeros(n_t)
    for start in range(0, n_t, chunk):
        stop = min(start + chunk, n_t)
        dc = d_cross[:, start:stop]
        draws = np.zeros((n_s, stop - start))
        for out_j, j in enumerate(idx):
            tau2_j = float(field.tau2[j])
            rho_j = float(field.rho[j])
            chol, _ = jittered_cholesky(np.exp(-d_obs / rho_j))
            lk = solve_triangular(chol, np.exp(-dc / rho_j), lower=True)
            lv = solve_triangular(chol, field.q[j], lower=True)
            mean = lk.T @ lv
            var = tau2_j * np.maximum(1.0 - np.sum(lk * lk, axis=0), 0.0)
            draws[out_j] = mean + np.sqrt(var) * rng.standard_normal(stop - start)
        w_draws = inv_logit(draws)
        w_mean[start:stop] = w_draws.mean(axis=0)
        w_lo[start:stop] = np.quantile(w_draws, 0.025, axis=0)
        w_hi[start:stop] = np.quantile(w_draws, 0.975, axis=0)
        q_mean[start:stop] = draws.mean(axis=0)
    return {"w_mean": w_mean, "w_lo": w_lo, "w_hi": w_hi, "q_mean": q_mean}
