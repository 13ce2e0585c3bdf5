"""Gaussian mixture models: EM fitting, BIC model selection, density, sampling.

These supply the bias distribution q(x) for the importance-sampling
baselines: a mixture is fit to surrogate-predicted failure points, then
samples are drawn from it and reweighted by p(x)/q(x).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .rng import RngStream

EM_REL_TOL = 1e-6
EM_MAX_ITER = 500
WEIGHT_FLOOR = 1e-8
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianMixture:
    """Full-covariance Gaussian mixture; immutable after fitting."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 2:
            cov = cov[None, :, :]
        if not (w.ndim == 1 and mu.shape[0] == w.size and cov.shape[0] == w.size):
            raise ValueError("weights/means/covariances shapes disagree")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        for c in cov:
            cholesky(c, lower=True)  # SPD or raise
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _component_log_pdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = mean.size
    chol = cholesky(cov, lower=True)
    z = solve_triangular(chol, (x - mean).T, lower=True)
    return (
        -0.5 * np.sum(z * z, axis=0)
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * d * _LOG_2PI
    )


def _log_weighted_densities(g: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """Shape (n, k): log(weight_j) + log N(x_i; mu_j, cov_j)."""
    out = np.empty((x.shape[0], g.k))
    for j in range(g.k):
        out[:, j] = np.log(g.weights[j]) + _component_log_pdf(
            x, g.means[j], g.covariances[j]
        )
    return out


def gmm_pdf(g: GaussianMixture, x: np.ndarray):
    """Mixture density, strictly positive everywhere on R^d."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != g.dim:
        raise ValueError(f"expected {g.dim} columns, got {x.shape[1]}")
    dens = np.exp(logsumexp(_log_weighted_densities(g, x), axis=1))
    return float(dens[0]) if single else dens


def gmm_sample(g: GaussianMixture, n: int, rng: RngStream) -> np.ndarray:
    """n draws: categorical component choice, then the component's normal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.generator()
    comp = gen.choice(g.k, size=n, p=g.weights)
    z = gen.standard_normal((n, g.dim))
    out = np.empty((n, g.dim))
    for j in range(g.k):
        sel = comp == j
        if not np.any(sel):
            continue
        chol = cholesky(g.covariances[j], lower=True)
        out[sel] = g.means[j] + z[sel] @ chol.T
    return out


def _regularize(cov: np.ndarray, floor: float) -> np.ndarray:
    """Add the dataset-scale diagonal bump.

    The floor is 1e-6 * trace(data covariance)/d, fixed for the whole fit:
    keying it to each component's own trace would let a component shrinking
    onto a single point regularize itself with a vanishing bump, producing
    an unbounded likelihood spike that corrupts BIC model selection.
    """
    return cov + floor * np.eye(cov.shape[0])


def _cov_floor(points: np.ndarray) -> float:
    d = points.shape[1]
    raw = np.atleast_2d(np.cov(points.T)).reshape(d, d)
    return 1e-6 * float(np.trace(raw)) / d + 1e-12


def _kmeanspp_centers(points: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    m = points.shape[0]
    centers = [points[int(gen.integers(m))]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = float(d2.sum())
        if total <= 0:
            centers.append(points[int(gen.integers(m))])
            continue
        centers.append(points[int(gen.choice(m, p=d2 / total))])
    return np.asarray(centers)


def em_fit(
    points: np.ndarray,
    k: int,
    rng: RngStream,
    return_ll_sequence: bool = False,
):
    """Standard EM with k-means++-style init; returns the fit and its log-likelihood.

    Components that collapse (vanishing weight or a covariance that stays
    singular after regularization) are dropped with a warning and the fit
    continues with one fewer component. With ``return_ll_sequence`` the
    per-iteration log-likelihoods are returned as a third element so the
    nondecreasing-likelihood property can be checked from outside.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, d = points.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if m < k * (d + 1):
        raise ValueError(f"need at least k*(d+1) = {k * (d + 1)} points, got {m}")

    gen = rng.generator()
    means = _kmeanspp_centers(points, k, gen)
    floor = _cov_floor(points)
    base_cov = _regularize(np.atleast_2d(np.cov(points.T)).reshape(d, d), floor)
    covs = np.repeat(base_cov[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)

    prev_ll = -np.inf
    ll = -np.inf
    ll_sequence = []
    for _ in range(EM_MAX_ITER):
        g = GaussianMixture(weights, means, covs)
        logdens = _log_weighted_densities(g, points)
        lse = logsumexp(logdens, axis=1)
        ll = float(np.sum(lse))
        ll_sequence.append(ll)
        if not ll >= prev_ll - 1e-8 * (1.0 + abs(prev_ll)):
            raise AssertionError("EM log-likelihood decreased")
        if np.isfinite(prev_ll) and ll - prev_ll < EM_REL_TOL * (1.0 + abs(ll)):
            break
        prev_ll = ll

        resp = np.exp(logdens - lse[:, None])
        mass = resp.sum(axis=0)
        drop = []
        new_means = np.empty_like(means)
        new_covs = np.empty_like(covs)
        for j in range(weights.size):
            if mass[j] / m < WEIGHT_FLOOR:
                drop.append(j)
                continue
            mu = resp[:, j] @ points / mass[j]
            diff = points - mu
            cov = _regularize((resp[:, j] * diff.T) @ diff / mass[j], floor)
            try:
                cholesky(cov, lower=True)
            except np.linalg.LinAlgError:
                drop.append(j)
                continue
            new_means[j] = mu
            new_covs[j] = cov
        if drop:
            warnings.warn(f"dropping {len(drop)} collapsed mixture component(s)")
            keep = np.array([j for j in range(weights.size) if j not in drop])
            if keep.size == 0:
                raise np.linalg.LinAlgError("all mixture components collapsed")
            means = new_means[keep]
            covs = new_covs[keep]
            weights = mass[keep] / mass[keep].sum()
            prev_ll = -np.inf
            ll_sequence.clear()  # a smaller model starts its own sequence
            continue
        weights = mass / m
        weights = weights / weights.sum()
        means, covs = new_means, new_covs

    g_final = GaussianMixture(weights, means, covs)
    if return_ll_sequence:
        return g_final, ll, ll_sequence
    return g_final, ll


def select_k(points: np.ndarray, k_max: int, rng: RngStream, restarts: int = 3) -> GaussianMixture:
    """Fit k = 1..k_max (best of `restarts` each), return the minimum-BIC mixture."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, d = points.shape
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    best_g, best_bic = None, np.inf
    last_err = None
    for k in range(1, k_max + 1):
        if m < k * (d + 1):
            break
        best_ll, best_fit = -np.inf, None
        for r in range(restarts):
            try:
                g, ll = em_fit(points, k, rng.fork(f"em-{k}-{r}"))
            except (np.linalg.LinAlgError, AssertionError) as err:
                last_err = err
                continue
            if ll > best_ll:
                best_ll, best_fit = ll, g
        if best_fit is None:
            continue
        kk = best_fit.k
        n_params = (kk - 1) + kk * d + kk * d * (d + 1) // 2
        bic = -2.0 * best_ll + n_params * np.log(m)
        if bic < best_bic:
            best_bic, best_g = bic, best_fit
    if best_g is None:
        raise np.linalg.LinAlgError(f"no mixture size could be fit: {last_err}")
    return best_g
