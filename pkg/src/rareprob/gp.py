"""Gaussian-process regression with an anisotropic squared-exponential kernel.

The surrogate is trained on inputs rescaled to the unit box and on responses
centered to mean zero; all public interfaces speak natural units. Predictive
equations follow the standard conditional-normal form with a Cholesky-cached
factorization of the training covariance. Hyperparameters (lengthscales,
signal variance, relative nugget) maximize the log marginal likelihood via
multi-start Nelder-Mead in log space.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .design import latin_hypercube
from .distributions import BoxDomain
from .rng import RngStream

NUGGET_FLOOR = 1e-8
NUGGET_CEIL = 1e-2
PREDICT_CHUNK = 200_000

# log-space fitting bounds: lengthscales in unit-box coordinates, signal
# variance relative to var(y), nugget relative to signal variance
_LEN_BOUNDS = (0.02, 5.0)
_SV_REL_BOUNDS = (1e-3, 1e3)
_NUG_REL_BOUNDS = (1e-8, 1e-4)


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the anisotropic squared-exponential kernel."""

    lengthscales: np.ndarray
    signal_variance: float
    nugget: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be strictly positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be strictly positive")
        if self.nugget < NUGGET_FLOOR:
            raise ValueError(f"nugget must be >= {NUGGET_FLOOR}")
        object.__setattr__(self, "lengthscales", ls)


@dataclass(frozen=True)
class Prediction:
    """Posterior mean and standard deviation at a single input."""

    mean: float
    sd: float


@dataclass(frozen=True)
class BatchPrediction:
    """Posterior means and standard deviations at a batch of inputs."""

    mean: np.ndarray
    sd: np.ndarray

    def __len__(self) -> int:
        return self.mean.size

    def __getitem__(self, i: int) -> Prediction:
        return Prediction(float(self.mean[i]), float(self.sd[i]))


def kernel(x1: np.ndarray, x2: np.ndarray, params: KernelParams) -> float:
    """tau^2 * exp(-sum_j (x1_j - x2_j)^2 / l_j^2)."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    d2 = np.sum(((x1 - x2) / params.lengthscales) ** 2)
    return float(params.signal_variance * np.exp(-d2))


def _cross_sq_dists(a: np.ndarray, b: np.ndarray, ls: np.ndarray) -> np.ndarray:
    """Scaled squared distances sum_j ((a_i - b_k)_j / l_j)^2, shape (len(a), len(b))."""
    aw = a / ls
    bw = b / ls
    d2 = (
        np.sum(aw**2, axis=1)[:, None]
        + np.sum(bw**2, axis=1)[None, :]
        - 2.0 * (aw @ bw.T)
    )
    return np.maximum(d2, 0.0)


def _cov_train(u: np.ndarray, params: KernelParams) -> np.ndarray:
    k = params.signal_variance * np.exp(-_cross_sq_dists(u, u, params.lengthscales))
    # exact symmetry keeps the Cholesky deterministic
    return 0.5 * (k + k.T)


def _chol_with_escalation(k_nonug: np.ndarray, nugget: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky of K + g*I, escalating g by 10x up to the ceiling."""
    g = max(nugget, NUGGET_FLOOR)
    n = k_nonug.shape[0]
    while True:
        try:
            chol = cholesky(k_nonug + g * np.eye(n), lower=True)
            return chol, g
        except np.linalg.LinAlgError:
            if g * 10.0 > NUGGET_CEIL * (1.0 + 1e-12):
                raise np.linalg.LinAlgError(
                    "covariance singular even at the nugget ceiling; "
                    "design is degenerate or contains duplicate rows"
                )
            g *= 10.0


@dataclass(frozen=True)
class TrainedSurrogate:
    """Immutable fitted GP: training data, hyperparameters, cached factorization."""

    X: np.ndarray
    y: np.ndarray
    y_mean: float
    params: KernelParams
    chol: np.ndarray
    alpha_vec: np.ndarray
    domain: BoxDomain
    Xs: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def sd_max(self) -> float:
        return float(np.sqrt(self.params.signal_variance + self.params.nugget)) + 1e-6

    def log_marginal_likelihood(self) -> float:
        n = self.n
        return float(
            -0.5 * self.y @ self.alpha_vec
            - np.sum(np.log(np.diag(self.chol)))
            - 0.5 * n * np.log(2.0 * np.pi)
        )


def _assemble(
    X: np.ndarray,
    y_raw: np.ndarray,
    domain: BoxDomain,
    params: KernelParams,
) -> TrainedSurrogate:
    u = domain.to_unit(X)
    y_mean = float(np.mean(y_raw))
    y = y_raw - y_mean
    k = _cov_train(u, params)
    chol, g = _chol_with_escalation(k, params.nugget)
    if g != params.nugget:
        warnings.warn(f"nugget escalated to {g:g} for a stable factorization")
        params = KernelParams(params.lengthscales, params.signal_variance, g)
    alpha_vec = cho_solve((chol, True), y)
    return TrainedSurrogate(
        X=X, y=y, y_mean=y_mean, params=params, chol=chol,
        alpha_vec=alpha_vec, domain=domain, Xs=u,
    )


def _neg_lml(theta: np.ndarray, sqdiff: np.ndarray, y: np.ndarray) -> float:
    d = sqdiff.shape[2]
    ls = np.exp(theta[:d])
    sv = np.exp(theta[d])
    rel = np.exp(theta[d + 1])
    g = max(rel * sv, NUGGET_FLOOR)
    # sqdiff holds per-dimension squared differences, computed once per fit
    k = sv * np.exp(-(sqdiff @ (1.0 / ls**2)))
    np.fill_diagonal(k, sv + g)
    try:
        chol = cholesky(k, lower=True)
    except np.linalg.LinAlgError:
        return 1e25
    alpha = cho_solve((chol, True), y)
    n = y.size
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * np.log(2 * np.pi)
    if not np.isfinite(lml):
        return 1e25
    return -float(lml)


def _heuristic_start(u: np.ndarray, vy: float, rng: RngStream) -> np.ndarray:
    n, d = u.shape
    if n > 200:
        idx = rng.generator().choice(n, size=200, replace=False)
        sub = u[idx]
    else:
        sub = u
    ls = np.empty(d)
    for j in range(d):
        diffs = np.abs(sub[:, j][:, None] - sub[:, j][None, :])
        med = np.median(diffs[np.triu_indices(sub.shape[0], k=1)])
        ls[j] = np.clip(med if med > 0 else 0.3, 0.05, 2.0)
    return np.concatenate([np.log(ls), [np.log(vy)], [np.log(1e-6)]])


def fit(
    X: np.ndarray,
    y: np.ndarray,
    domain: BoxDomain,
    rng: RngStream,
    n_starts: int = 5,
) -> TrainedSurrogate:
    """Fit hyperparameters by multi-start Nelder-Mead on the log marginal likelihood."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 training points")
    if y.size != n:
        raise ValueError("X and y lengths differ")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite training data")

    u = domain.to_unit(X)
    yc = y - np.mean(y)
    vy = max(float(np.var(yc)), 1e-12)

    lo = np.concatenate(
        [np.full(d, np.log(_LEN_BOUNDS[0])),
         [np.log(_SV_REL_BOUNDS[0] * vy)], [np.log(_NUG_REL_BOUNDS[0])]]
    )
    hi = np.concatenate(
        [np.full(d, np.log(_LEN_BOUNDS[1])),
         [np.log(_SV_REL_BOUNDS[1] * vy)], [np.log(_NUG_REL_BOUNDS[1])]]
    )
    log_box = BoxDomain(lo, hi)
    starts = [_heuristic_start(u, vy, rng.fork("heuristic"))]
    starts.extend(latin_hypercube(n_starts, log_box, rng.fork("starts")))

    sqdiff = (u[:, None, :] - u[None, :, :]) ** 2
    bounds = list(zip(lo, hi))
    # screen every start with a short run, then polish the two best basins
    screened = []
    for i, s0 in enumerate(starts):
        res = minimize(
            _neg_lml,
            np.clip(s0, lo, hi),
            args=(sqdiff, yc),
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxfev": 40 * (d + 2), "xatol": 3e-2, "fatol": 1e-2},
        )
        screened.append((res.fun, i, res.x))
    screened.sort(key=lambda item: (item[0], item[1]))

    best_theta, best_val = None, np.inf
    for f0, _, x0 in screened[:2]:
        res = minimize(
            _neg_lml,
            x0,
            args=(sqdiff, yc),
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxfev": 150 * (d + 2), "xatol": 1e-2, "fatol": 1e-3},
        )
        if res.fun < best_val:
            best_val, best_theta = res.fun, res.x

    if best_theta is None or not np.isfinite(best_val):
        raise np.linalg.LinAlgError("hyperparameter search found no valid point")

    theta = np.clip(best_theta, lo, hi)
    ls = np.exp(theta[:d])
    sv = float(np.exp(theta[d]))
    g = max(float(np.exp(theta[d + 1])) * sv, NUGGET_FLOOR)
    params = KernelParams(lengthscales=ls, signal_variance=sv, nugget=g)
    return _assemble(X, y, domain, params)


def predict(s: TrainedSurrogate, Xstar: np.ndarray, chunk: int = PREDICT_CHUNK) -> BatchPrediction:
    """Posterior mean and sd at each row of Xstar; singleton and batch agree pointwise."""
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.ndim == 1:
        Xstar = Xstar[None, :]
    m = Xstar.shape[0]
    if m == 0:
        return BatchPrediction(np.empty(0), np.empty(0))
    mean = np.empty(m)
    sd = np.empty(m)
    ustar = s.domain.to_unit(Xstar)
    for a in range(0, m, chunk):
        b = min(a + chunk, m)
        ks = s.params.signal_variance * np.exp(
            -_cross_sq_dists(ustar[a:b], s.Xs, s.params.lengthscales)
        )
        mean[a:b] = ks @ s.alpha_vec + s.y_mean
        v = solve_triangular(s.chol, ks.T, lower=True)
        var = s.params.signal_variance - np.sum(v * v, axis=0)
        sd[a:b] = np.sqrt(np.maximum(var, 0.0))
    return BatchPrediction(mean=mean, sd=sd)


def predict_mean(s: TrainedSurrogate, Xstar: np.ndarray, chunk: int = PREDICT_CHUNK) -> np.ndarray:
    """Posterior mean only; skips the O(n^2)-per-point variance solve."""
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.ndim == 1:
        Xstar = Xstar[None, :]
    m = Xstar.shape[0]
    mean = np.empty(m)
    ustar = s.domain.to_unit(Xstar)
    for a in range(0, m, chunk):
        b = min(a + chunk, m)
        ks = s.params.signal_variance * np.exp(
            -_cross_sq_dists(ustar[a:b], s.Xs, s.params.lengthscales)
        )
        mean[a:b] = ks @ s.alpha_vec + s.y_mean
    return mean


DUPLICATE_TOL = 1e-10


def _duplicate_mask(unew: np.ndarray, uexist: np.ndarray) -> np.ndarray:
    """True for rows of unew within DUPLICATE_TOL (unit-box distance) of uexist or an earlier new row."""
    m = unew.shape[0]
    dup = np.zeros(m, dtype=bool)
    for i in range(m):
        if uexist.size and np.min(np.linalg.norm(uexist - unew[i], axis=1)) < DUPLICATE_TOL:
            dup[i] = True
            continue
        for j in range(i):
            if not dup[j] and np.linalg.norm(unew[j] - unew[i]) < DUPLICATE_TOL:
                dup[i] = True
                break
    return dup


def update(
    s: TrainedSurrogate,
    Xnew: np.ndarray,
    ynew: np.ndarray,
    refit_hypers: bool,
    rng: RngStream,
) -> TrainedSurrogate:
    """Extend the training set; refit hyperparameters when asked, else refactorize."""
    Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
    ynew = np.atleast_1d(np.asarray(ynew, dtype=float))
    if Xnew.shape[0] == 0:
        return s
    if Xnew.shape[1] != s.X.shape[1]:
        raise ValueError("dimension mismatch in update")
    if Xnew.shape[0] != ynew.size:
        raise ValueError("Xnew and ynew lengths differ")

    dup = _duplicate_mask(s.domain.to_unit(Xnew), s.Xs)
    if np.any(dup):
        warnings.warn(f"skipping {int(dup.sum())} duplicate training row(s) in update")
        Xnew, ynew = Xnew[~dup], ynew[~dup]
        if Xnew.shape[0] == 0:
            return s

    Xall = np.vstack([s.X, Xnew])
    yall = np.concatenate([s.y + s.y_mean, ynew])
    if refit_hypers:
        return fit(Xall, yall, s.domain, rng)
    return _assemble(Xall, yall, s.domain, s.params)


def log_marginal_likelihood(s: TrainedSurrogate) -> float:
    return s.log_marginal_likelihood()
