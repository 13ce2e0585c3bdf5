"""Classification entropy and the contour-location acquisition rule.

A candidate's score is the binary entropy of its predicted failure
probability, maximal where the surrogate is least certain about which side
of the threshold the response falls on. Acquisition scores a small Latin
hypercube of candidates and polishes the best one with a single bounded
derivative-free local search.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import xlogy

from .design import latin_hypercube
from .distributions import BoxDomain
from .gp import DUPLICATE_TOL, TrainedSurrogate, predict
from .rng import RngStream
from .special import std_normal_cdf

CANDIDATES_PER_DIM = 100
LOCAL_SEARCH_EVALS = 200


@dataclass(frozen=True)
class EntropyScore:
    """Predicted failure probability and its binary entropy at a point."""

    p_fail: float
    entropy: float


def failure_probability(mean, sd, t: float):
    """P(f(x) > t) under the Gaussian posterior; indicator 1{mean > t} when sd = 0.

    Accepts scalars or arrays; shapes broadcast.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0):
        raise ValueError("sd must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, (mean - t) / np.where(sd > 0, sd, 1.0), 0.0)
    p = std_normal_cdf(z)
    p = np.where(sd > 0, p, (mean > t).astype(float))
    return p if p.shape else float(p)


def entropy(p):
    """Binary entropy -p*ln(p) - (1-p)*ln(1-p) in nats, with 0*ln(0) = 0."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p must lie in [0, 1]")
    h = -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))
    return h if h.shape else float(h)


def score_point(s: TrainedSurrogate, x: np.ndarray, t: float) -> EntropyScore:
    pred = predict(s, np.atleast_2d(x))
    p = failure_probability(pred.mean[0], pred.sd[0], t)
    return EntropyScore(p_fail=float(p), entropy=float(entropy(p)))


def _entropy_at(s: TrainedSurrogate, X: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    pred = predict(s, X)
    p = failure_probability(pred.mean, pred.sd, t)
    return entropy(p), pred.sd


def _is_duplicate(s: TrainedSurrogate, x: np.ndarray) -> bool:
    u = s.domain.to_unit(x)
    return bool(np.min(np.linalg.norm(s.Xs - u, axis=1)) < DUPLICATE_TOL)


def acquire_cl(
    s: TrainedSurrogate,
    t: float,
    domain: BoxDomain,
    rng: RngStream,
) -> np.ndarray:
    """Next contour-location input: best-of-LHS entropy, then one local polish.

    Draws 100*d Latin hypercube candidates, scores each by classification
    entropy, then runs a bounded Nelder-Mead maximization (at most 200 score
    evaluations) from the best candidate. Never returns a point that
    coincides with a training row. If the surrogate is certain everywhere
    (all candidate entropies zero), returns the candidate of maximal
    posterior sd and warns.
    """
    d = domain.dim
    cands = latin_hypercube(CANDIDATES_PER_DIM * d, domain, rng.fork("cand"))
    h, sd = _entropy_at(s, cands, t)

    if np.max(h) <= 0.0:
        warnings.warn(
            "surrogate certain at every candidate; falling back to max posterior sd"
        )
        order = np.lexsort((np.arange(len(cands)), -sd))
        for i in order:
            if not _is_duplicate(s, cands[i]):
                return cands[i].copy()
        return cands[order[0]].copy()

    best = int(np.argmax(h))

    def neg_score(x: np.ndarray) -> float:
        xc = domain.clip(x)
        pred = predict(s, xc[None, :])
        p = failure_probability(pred.mean[0], pred.sd[0], t)
        return -float(entropy(p))

    res = minimize(
        neg_score,
        cands[best],
        method="Nelder-Mead",
        bounds=list(zip(domain.lower, domain.upper)),
        options={"maxfev": LOCAL_SEARCH_EVALS, "xatol": 1e-6, "fatol": 1e-12},
    )
    x_best, h_best = cands[best], h[best]
    if np.isfinite(res.fun) and -res.fun >= h_best:
        x_best, h_best = domain.clip(res.x), -res.fun

    if not _is_duplicate(s, x_best):
        return np.asarray(x_best, dtype=float).copy()

    # exact re-acquisition: fall back to the best distinct LHS candidate
    order = np.lexsort((np.arange(len(cands)), -sd, -h))
    for i in order:
        if not _is_duplicate(s, cands[i]):
            return cands[i].copy()
    raise RuntimeError("no distinct acquisition candidate found")
