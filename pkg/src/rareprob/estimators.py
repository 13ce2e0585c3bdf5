"""Failure-probability estimators and their reporting conventions.

All estimators target alpha = P(failure), where failure is by default the
event f(x) > t (strict; ties count as a pass). Problems whose failure event
is f(x) < t carry an orientation flag that negates the comparison rather
than the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import gp
from .distributions import InputDistribution
from .gmm import GaussianMixture, gmm_pdf
from .rng import RngStream

FAIL_ABOVE = "FAIL_ABOVE"
FAIL_BELOW = "FAIL_BELOW"

MIN_BIAS_DENSITY = 1e-300


class Method(str, Enum):
    BRUTE_MC = "BRUTE_MC"
    SURR_MC = "SURR_MC"
    HYBRID_MC = "HYBRID_MC"
    SIIS = "SIIS"
    SIIS_UCB = "SIIS_UCB"
    TWO_STAGE_PROX = "TWO_STAGE_PROX"
    EXHAUSTIVE_CL = "EXHAUSTIVE_CL"

    def __str__(self) -> str:
        return self.value


def fails(vals, t: float, orientation: str = FAIL_ABOVE) -> np.ndarray:
    """Boolean failure indicator, strict inequality in the flagged direction."""
    vals = np.asarray(vals, dtype=float)
    if orientation == FAIL_ABOVE:
        return vals > t
    if orientation == FAIL_BELOW:
        return vals < t
    raise ValueError(f"unknown orientation {orientation!r}")


@dataclass(frozen=True)
class FailureEstimate:
    """A single failure-probability estimate with its evaluation ledger."""

    method: Method
    alpha_hat: float
    sigma_hat: float
    n_surrogate: int
    b_estimation: int
    sim_evals_total: int
    seed: int

    def with_ledger(self, n_surrogate: int, b_estimation: int,
                    sim_evals_total: int, seed: int) -> "FailureEstimate":
        return replace(self, n_surrogate=n_surrogate, b_estimation=b_estimation,
                       sim_evals_total=sim_evals_total, seed=seed)


@dataclass
class McPool:
    """The fixed Monte Carlo sample X_M with a refreshable prediction cache.

    `samples` never changes over the lifetime of a run; `mean`/`sd` are
    caches of the latest surrogate refresh (sd may be absent when only means
    were refreshed); `truth_overrides` maps pool indices with observed
    simulator values (the Stage-2 set) to those values.
    """

    samples: np.ndarray
    mean: Optional[np.ndarray] = None
    sd: Optional[np.ndarray] = None
    truth_overrides: dict = field(default_factory=dict)
    _mean_token: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.samples.setflags(write=False)

    @classmethod
    def from_distribution(cls, dist: InputDistribution, m: int, rng: RngStream) -> "McPool":
        if m < 1:
            raise ValueError("pool size must be >= 1")
        return cls(samples=dist.sample(m, rng))

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @staticmethod
    def _token(s: gp.TrainedSurrogate) -> tuple:
        return (
            s.n,
            float(s.y_mean),
            float(np.sum(s.alpha_vec)),
            float(s.params.nugget),
        )

    def refresh_means(self, s: gp.TrainedSurrogate, chunk: int = gp.PREDICT_CHUNK) -> None:
        self.mean = gp.predict_mean(s, self.samples, chunk=chunk)
        self.sd = None
        self._mean_token = self._token(s)

    def refresh(self, s: gp.TrainedSurrogate, chunk: int = gp.PREDICT_CHUNK) -> None:
        pred = gp.predict(s, self.samples, chunk=chunk)
        self.mean, self.sd = pred.mean, pred.sd
        self._mean_token = self._token(s)

    def ensure_means(self, s: gp.TrainedSurrogate, chunk: int = gp.PREDICT_CHUNK) -> None:
        """Refresh means unless the cache already reflects this surrogate."""
        if self.mean is None or self._mean_token != self._token(s):
            self.refresh_means(s, chunk=chunk)

    def set_override(self, index: int, value: float) -> None:
        if not 0 <= index < self.m:
            raise IndexError(f"override index {index} outside [0, {self.m})")
        self.truth_overrides[int(index)] = float(value)

    def fresh_overrides(self) -> "McPool":
        """Same samples and caches, empty override set (for paired methods)."""
        return McPool(
            samples=self.samples,
            mean=None if self.mean is None else self.mean.copy(),
            sd=None if self.sd is None else self.sd.copy(),
            truth_overrides={},
            _mean_token=self._mean_token,
        )


def mc_std_err(alpha_hat: float, m: int) -> float:
    """sqrt(alpha_hat * (1 - alpha_hat) / M)."""
    if not 0.0 <= alpha_hat <= 1.0:
        raise ValueError("alpha_hat must lie in [0, 1]")
    if m < 1:
        raise ValueError("M must be >= 1")
    return math.sqrt(alpha_hat * (1.0 - alpha_hat) / m)


def required_m(alpha_guess: float, rel_err: float) -> int:
    """Smallest M with sqrt(alpha(1-alpha)/M) < rel_err * alpha (strict)."""
    if not 0.0 < alpha_guess < 1.0:
        raise ValueError("alpha_guess must lie in (0, 1)")
    if not 0.0 < rel_err < 1.0:
        raise ValueError("rel_err must lie in (0, 1)")
    bound = (1.0 - alpha_guess) / (rel_err**2 * alpha_guess)
    return int(math.floor(bound + 1e-9)) + 1


def brute_mc(
    f: Callable[[np.ndarray], np.ndarray],
    pool: McPool,
    t: float,
    orientation: str = FAIL_ABOVE,
    seed: int = 0,
) -> FailureEstimate:
    """Plain Monte Carlo over the pool: evaluates the simulator at every sample."""
    vals = np.asarray(f(pool.samples), dtype=float)
    n_fail = int(np.count_nonzero(fails(vals, t, orientation)))
    alpha = n_fail / pool.m
    return FailureEstimate(
        method=Method.BRUTE_MC, alpha_hat=alpha, sigma_hat=mc_std_err(alpha, pool.m),
        n_surrogate=0, b_estimation=0, sim_evals_total=pool.m, seed=seed,
    )


def surrogate_mc(
    s: gp.TrainedSurrogate,
    pool: McPool,
    t: float,
    orientation: str = FAIL_ABOVE,
    seed: int = 0,
) -> FailureEstimate:
    """Monte Carlo with posterior means in place of the simulator; overrides ignored."""
    if pool.mean is None:
        pool.refresh_means(s)
    n_fail = int(np.count_nonzero(fails(pool.mean, t, orientation)))
    alpha = n_fail / pool.m
    return FailureEstimate(
        method=Method.SURR_MC, alpha_hat=alpha, sigma_hat=mc_std_err(alpha, pool.m),
        n_surrogate=s.n, b_estimation=0, sim_evals_total=s.n, seed=seed,
    )


def hybrid_mc(
    s: gp.TrainedSurrogate,
    pool: McPool,
    t: float,
    u_indices=None,
    orientation: str = FAIL_ABOVE,
    seed: int = 0,
) -> FailureEstimate:
    """Observed failure indicators on the override set, posterior-mean indicators elsewhere.

    Override values take precedence over predictions even after the surrogate
    has been updated with them, so observed classifications are honored
    exactly rather than through nugget-imperfect interpolation.
    """
    if u_indices is None:
        u = sorted(pool.truth_overrides)
    else:
        u = sorted(int(i) for i in u_indices)
        missing = [i for i in u if i not in pool.truth_overrides]
        if missing:
            raise ValueError(f"missing truth override(s) for indices {missing[:5]}")
    if pool.mean is None:
        pool.refresh_means(s)
    flags = fails(pool.mean, t, orientation)
    if u:
        idx = np.fromiter(u, dtype=np.intp)
        truth = np.array([pool.truth_overrides[i] for i in u], dtype=float)
        flags = flags.copy()
        flags[idx] = fails(truth, t, orientation)
    alpha = int(np.count_nonzero(flags)) / pool.m
    b = len(u)
    return FailureEstimate(
        method=Method.HYBRID_MC, alpha_hat=alpha, sigma_hat=mc_std_err(alpha, pool.m),
        n_surrogate=max(s.n - b, 0), b_estimation=b, sim_evals_total=s.n, seed=seed,
    )


def importance_sampling(
    f_vals: np.ndarray,
    xs: np.ndarray,
    p: InputDistribution,
    q: GaussianMixture,
    t: float,
    orientation: str = FAIL_ABOVE,
    method: Method = Method.SIIS,
    seed: int = 0,
) -> FailureEstimate:
    """Weighted failure estimate with bias weights w_i = p(x_i)/q(x_i).

    sigma_hat is the empirical standard error of the weighted terms,
    std(terms, ddof=1)/sqrt(B). Weights can be zero when q-samples land
    outside the support of p; a numerically vanishing q density is an error.
    """
    f_vals = np.asarray(f_vals, dtype=float).ravel()
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    b = f_vals.size
    if xs.shape[0] != b or b < 1:
        raise ValueError("f_vals and xs lengths differ or are empty")
    qv = gmm_pdf(q, xs)
    if np.any(qv < MIN_BIAS_DENSITY):
        raise ValueError("bias density vanishes at a sample (invalid bias support)")
    w = p.pdf(xs) / qv
    terms = w * fails(f_vals, t, orientation)
    alpha = float(np.mean(terms))
    sigma = float(np.std(terms, ddof=1) / math.sqrt(b)) if b > 1 else 0.0
    return FailureEstimate(
        method=method, alpha_hat=alpha, sigma_hat=sigma,
        n_surrogate=0, b_estimation=b, sim_evals_total=b, seed=seed,
    )
