"""The two-stage design state machine and the baseline method pipelines.

Stage 1 runs contour-location acquisitions until a Monte Carlo stopping
criterion fires (or the budget runs out); Stage 2 spends the remaining
budget on the highest-entropy pool samples and returns the hybrid estimate.
Baselines reuse the identical Stage-1 prefix for paired comparisons:
exhaustive contour location, proximity-based Stage-2 allocation, and
surrogate-informed importance sampling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import gp
from .acquisition import acquire_cl, entropy
from .design import latin_hypercube
from .estimators import (
    FAIL_ABOVE,
    FailureEstimate,
    McPool,
    Method,
    fails,
    hybrid_mc,
    importance_sampling,
    mc_std_err,
    surrogate_mc,
)
from .gmm import gmm_sample, select_k
from .rng import RngStream
from .special import std_normal_cdf
from .testbed import BenchmarkProblem, SimulatorFault

CONTINUE = "CONTINUE"
STOP = "STOP"
CRITERION_MET = "CRITERION_MET"
BUDGET_EXHAUSTED = "BUDGET_EXHAUSTED"

REFIT_EVERY_N_MAX = 100
REFIT_PERIOD_LATE = 5
UCB_Z = 1.645
GMM_K_MAX = 5
SIIS_FALLBACK_MIN = 50


@dataclass(frozen=True)
class BudgetConfig:
    """Budgets and stopping-rule knobs for a single design run."""

    n0: int
    N: int
    check_interval: int = 10
    min_failures: int = 10
    min_n_factor: int = 2
    stage2_batch: Optional[int] = None  # None = one single batch

    def __post_init__(self):
        if self.n0 < 2:
            raise ValueError("n0 must be >= 2")
        if not self.N > 2 * self.n0:
            raise ValueError("N must exceed 2*n0")
        if self.check_interval < 1:
            raise ValueError("check_interval must be >= 1")
        if self.min_failures < 0:
            raise ValueError("min_failures must be >= 0")
        if self.min_n_factor < 1:
            raise ValueError("min_n_factor must be >= 1")
        if self.stage2_batch is not None and self.stage2_batch < 1:
            raise ValueError("stage2_batch must be >= 1 when given")


@dataclass
class StageOneTrace:
    """Per-check estimates from Stage 1 and how the stage ended."""

    alpha_history: list = field(default_factory=list)  # (n, alpha_hat, sigma_hat)
    n_chosen: int = 0
    stop_reason: str = BUDGET_EXHAUSTED

    def copy(self) -> "StageOneTrace":
        return StageOneTrace(
            alpha_history=list(self.alpha_history),
            n_chosen=self.n_chosen,
            stop_reason=self.stop_reason,
        )


def stopping_check(trace: StageOneTrace, cfg: BudgetConfig, failures_observed: int) -> str:
    """STOP when two successive estimate updates each moved less than one
    standard error, provided enough failures were observed, the design has at
    least min_n_factor*n0 points, and the current estimate is positive."""
    hist = trace.alpha_history
    if len(hist) < 3:
        return CONTINUE
    n_k, a_k, s_k = hist[-1]
    _, a_k1, s_k1 = hist[-2]
    a_k2 = hist[-3][1]
    if failures_observed < cfg.min_failures:
        return CONTINUE
    if n_k < cfg.min_n_factor * cfg.n0:
        return CONTINUE
    if not a_k > 0.0:
        return CONTINUE
    if abs(a_k - a_k1) < s_k and abs(a_k1 - a_k2) < s_k1:
        return STOP
    return CONTINUE


def _pool_alpha(pool: McPool, problem: BenchmarkProblem) -> tuple[float, float]:
    n_fail = int(np.count_nonzero(problem.is_failure(pool.mean)))
    alpha = n_fail / pool.m
    return alpha, mc_std_err(alpha, pool.m)


def _check_response(y: np.ndarray) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not np.all(np.isfinite(y)):
        raise SimulatorFault("simulator returned a non-finite response")
    return y


def _refit_due(n_after: int, acq_count: int) -> bool:
    return n_after <= REFIT_EVERY_N_MAX or acq_count % REFIT_PERIOD_LATE == 0


def _stage1_loop(
    problem: BenchmarkProblem,
    s: gp.TrainedSurrogate,
    pool: McPool,
    cfg: BudgetConfig,
    rng: RngStream,
    trace: StageOneTrace,
    failures_observed: int,
    stop_enabled: bool,
) -> tuple[gp.TrainedSurrogate, StageOneTrace, int]:
    """Acquisition loop from the surrogate's current size up to N.

    Acquisition and refit streams are forked per global step index, so a run
    that stops early and is later continued (exhaustive baseline) makes
    exactly the same acquisitions as an uninterrupted run.
    """
    acq_rng = rng.fork("acq")
    fit_rng = rng.fork("fit")
    n = s.n
    while n < cfg.N:
        step = n - cfg.n0  # 0-based global acquisition index
        x = acquire_cl(s, problem.t, problem.domain, acq_rng.fork(step))
        y = _check_response(problem.evaluate(x))
        failures_observed += int(np.count_nonzero(problem.is_failure(y)))
        n += 1
        s = gp.update(
            s, x[None, :], y,
            refit_hypers=_refit_due(n, step + 1),
            rng=fit_rng.fork(step),
        )
        if (n - cfg.n0) % cfg.check_interval == 0:
            pool.refresh_means(s)
            alpha, sigma = _pool_alpha(pool, problem)
            trace.alpha_history.append((n, alpha, sigma))
            if stop_enabled and stopping_check(trace, cfg, failures_observed) == STOP:
                trace.n_chosen = n
                trace.stop_reason = CRITERION_MET
                return s, trace, failures_observed
    trace.n_chosen = n
    trace.stop_reason = BUDGET_EXHAUSTED
    return s, trace, failures_observed


def run_stage1(
    problem: BenchmarkProblem,
    s0: gp.TrainedSurrogate,
    pool: McPool,
    cfg: BudgetConfig,
    rng: RngStream,
) -> tuple[gp.TrainedSurrogate, StageOneTrace]:
    """Contour-location acquisitions with the stopping criterion from an initial fit."""
    y0 = s0.y + s0.y_mean
    failures = int(np.count_nonzero(problem.is_failure(y0)))
    s, trace, _ = _stage1_loop(
        problem, s0, pool, cfg, rng, StageOneTrace(), failures, stop_enabled=True
    )
    return s, trace


def _entropy_from_mean_sd(mean: np.ndarray, sd: np.ndarray, t: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, np.abs(mean - t) / np.where(sd > 0, sd, 1.0), np.inf)
    p = std_normal_cdf(-z)  # the smaller tail; entropy is symmetric in p vs 1-p
    return entropy(p)


def _allowed_mask(pool: McPool) -> np.ndarray:
    mask = np.ones(pool.m, dtype=bool)
    if pool.truth_overrides:
        mask[np.fromiter(pool.truth_overrides, dtype=np.intp)] = False
    return mask


def _exact_entropy_sd(
    s: gp.TrainedSurrogate, pool: McPool, idx: np.ndarray, t: float
) -> tuple[np.ndarray, np.ndarray]:
    pred = gp.predict(s, pool.samples[idx])
    return _entropy_from_mean_sd(pred.mean, pred.sd, t), pred.sd


def _top_b_by_entropy(
    h: np.ndarray, sd: np.ndarray, idx: np.ndarray, b: int
) -> np.ndarray:
    order = np.lexsort((idx, -sd, -h))
    return order[:b]


def select_stage2(
    s: gp.TrainedSurrogate,
    pool: McPool,
    b: int,
    t: Optional[float] = None,
) -> np.ndarray:
    """Indices of the b highest-entropy unobserved pool samples, ascending.

    Ties broken by larger posterior sd, then by lower index. Uses a screened
    exact search: an entropy upper bound from the maximal posterior sd
    prunes the pool, and candidates are expanded until the selection is
    certified, so the result equals a full exact scan.
    """
    if b == 0:
        return np.array([], dtype=int)
    if pool.mean is None:
        raise ValueError("pool means must be refreshed before selection")
    if t is None:
        raise ValueError("threshold t is required")
    allowed = np.flatnonzero(_allowed_mask(pool))
    if b > allowed.size:
        raise ValueError(f"cannot select {b} from {allowed.size} unobserved samples")

    if pool.sd is not None:
        h = _entropy_from_mean_sd(pool.mean[allowed], pool.sd[allowed], t)
        pick = _top_b_by_entropy(h, pool.sd[allowed], allowed, b)
        return np.sort(allowed[pick])

    z = np.abs(pool.mean[allowed] - t) / s.sd_max
    h_ub = entropy(std_normal_cdf(-z))
    by_ub = np.lexsort((allowed, -h_ub))
    order = allowed[by_ub]
    ub_sorted = h_ub[by_ub]

    count = min(max(4 * b, 1024), allowed.size)
    while True:
        cand = order[:count]
        h, sd = _exact_entropy_sd(s, pool, cand, t)
        pick = _top_b_by_entropy(h, sd, cand, b)
        kth = h[pick[-1]]
        if count >= allowed.size or kth > ub_sorted[count]:
            return np.sort(cand[pick])
        count = min(count * 4, allowed.size)


def select_proximity(pool: McPool, t: float, b: int) -> np.ndarray:
    """Indices of the b unobserved samples with means closest to the threshold."""
    if b == 0:
        return np.array([], dtype=int)
    if pool.mean is None:
        raise ValueError("pool means must be refreshed before selection")
    allowed = np.flatnonzero(_allowed_mask(pool))
    if b > allowed.size:
        raise ValueError(f"cannot select {b} from {allowed.size} unobserved samples")
    dist = np.abs(pool.mean[allowed] - t)
    pick = np.lexsort((allowed, dist))[:b]
    return np.sort(allowed[pick])


def run_stage2(
    s: gp.TrainedSurrogate,
    pool: McPool,
    problem: BenchmarkProblem,
    b: int,
    batch: Optional[int],
    rng: RngStream,
    selector: str = "entropy",
) -> tuple[gp.TrainedSurrogate, McPool]:
    """Spend b evaluations on selected pool samples, updating the surrogate per batch."""
    if b == 0:
        return s, pool
    batch_size = b if batch is None else int(batch)
    fit_rng = rng.fork("s2fit")
    remaining = b
    batch_index = 0
    while remaining > 0:
        take = min(batch_size, remaining)
        pool.ensure_means(s)
        if selector == "entropy":
            idx = select_stage2(s, pool, take, t=problem.t)
        elif selector == "proximity":
            idx = select_proximity(pool, problem.t, take)
        else:
            raise ValueError(f"unknown selector {selector!r}")
        xs = pool.samples[idx]
        ys = _check_response(problem.evaluate(xs))
        for i, v in zip(idx, ys):
            pool.set_override(int(i), float(v))
        s = gp.update(s, xs, ys, refit_hypers=True, rng=fit_rng.fork(batch_index))
        pool.refresh_means(s)
        remaining -= take
        batch_index += 1
    return s, pool


def _init_run(
    problem: BenchmarkProblem,
    cfg: BudgetConfig,
    rng: RngStream,
    m: Optional[int],
) -> tuple[gp.TrainedSurrogate, McPool]:
    m = int(m) if m is not None else problem.table_M
    x0 = latin_hypercube(cfg.n0, problem.domain, rng.fork("lhs"))
    y0 = _check_response(problem.evaluate(x0))
    s0 = gp.fit(x0, y0, problem.domain, rng.fork("fit0"))
    pool = McPool.from_distribution(problem.dist, m, rng.fork("pool"))
    return s0, pool


def run_two_stage(
    problem: BenchmarkProblem,
    cfg: BudgetConfig,
    rng: RngStream,
    m: Optional[int] = None,
) -> tuple[FailureEstimate, StageOneTrace]:
    """Full pipeline: LHS init, Stage-1 contour location, Stage-2 entropy
    allocation of the leftover budget, hybrid estimate."""
    s0, pool = _init_run(problem, cfg, rng, m)
    s1, trace = run_stage1(problem, s0, pool, cfg, rng)
    b = cfg.N - trace.n_chosen
    s2, pool = run_stage2(s1, pool, problem, b, cfg.stage2_batch, rng)
    pool.ensure_means(s2)
    est = hybrid_mc(
        s2, pool, problem.t, orientation=problem.orientation, seed=rng.seed
    ).with_ledger(trace.n_chosen, b, trace.n_chosen + b, rng.seed)
    return est, trace


def run_exhaustive_cl(
    problem: BenchmarkProblem,
    cfg: BudgetConfig,
    rng: RngStream,
    m: Optional[int] = None,
) -> tuple[FailureEstimate, StageOneTrace]:
    """Contour location continued to the full budget, then the surrogate estimate."""
    s0, pool = _init_run(problem, cfg, rng, m)
    y0 = s0.y + s0.y_mean
    failures = int(np.count_nonzero(problem.is_failure(y0)))
    s, trace, _ = _stage1_loop(
        problem, s0, pool, cfg, rng, StageOneTrace(), failures, stop_enabled=False
    )
    pool.ensure_means(s)
    est = surrogate_mc(
        s, pool, problem.t, orientation=problem.orientation, seed=rng.seed
    )
    est = replace(est, method=Method.EXHAUSTIVE_CL).with_ledger(
        trace.n_chosen, 0, trace.n_chosen, rng.seed
    )
    return est, trace


def run_two_stage_proximity(
    problem: BenchmarkProblem,
    cfg: BudgetConfig,
    rng: RngStream,
    m: Optional[int] = None,
) -> tuple[FailureEstimate, StageOneTrace]:
    """Two-stage design whose Stage 2 picks the samples predicted closest to t."""
    s0, pool = _init_run(problem, cfg, rng, m)
    s1, trace = run_stage1(problem, s0, pool, cfg, rng)
    b = cfg.N - trace.n_chosen
    s2, pool = run_stage2(
        s1, pool, problem, b, cfg.stage2_batch, rng, selector="proximity"
    )
    pool.ensure_means(s2)
    est = hybrid_mc(
        s2, pool, problem.t, orientation=problem.orientation, seed=rng.seed
    )
    est = replace(est, method=Method.TWO_STAGE_PROX).with_ledger(
        trace.n_chosen, b, trace.n_chosen + b, rng.seed
    )
    return est, trace


def _siis_candidates(
    s: gp.TrainedSurrogate,
    pool: McPool,
    t: float,
    orientation: str,
    variant: str,
    b: int,
) -> np.ndarray:
    """Pool points predicted to fail (MEAN) or whose 95% optimistic bound fails (UCB95)."""
    mean = pool.mean
    if variant == "MEAN":
        mask = fails(mean, t, orientation)
        return np.flatnonzero(mask)
    if variant != "UCB95":
        raise ValueError(f"unknown variant {variant!r}")
    if orientation == FAIL_ABOVE:
        possible = np.flatnonzero(mean + UCB_Z * s.sd_max > t)
    else:
        possible = np.flatnonzero(mean - UCB_Z * s.sd_max < t)
    if possible.size == 0:
        return possible
    pred = gp.predict(s, pool.samples[possible])
    if orientation == FAIL_ABOVE:
        keep = pred.mean + UCB_Z * pred.sd > t
    else:
        keep = pred.mean - UCB_Z * pred.sd < t
    return possible[keep]


def _siis_fallback(
    s: gp.TrainedSurrogate, pool: McPool, t: float, orientation: str, b: int
) -> np.ndarray:
    """Highest predicted-failure-probability points when no candidate exceeds t."""
    pred = gp.predict(s, pool.samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(
            pred.sd > 0,
            (pred.mean - t) / np.where(pred.sd > 0, pred.sd, 1.0),
            np.where(fails(pred.mean, t, orientation), np.inf, -np.inf),
        )
    if orientation != FAIL_ABOVE:
        z = -z
    take = min(max(SIIS_FALLBACK_MIN, b), pool.m)
    order = np.lexsort((np.arange(pool.m), -z))
    return order[:take]


def run_siis(
    problem: BenchmarkProblem,
    cfg: BudgetConfig,
    rng: RngStream,
    variant: str = "MEAN",
    m: Optional[int] = None,
    k_max: int = GMM_K_MAX,
    clip_to_domain: bool = False,
) -> tuple[FailureEstimate, StageOneTrace]:
    """Surrogate-informed importance sampling with the Stage-1 budget split.

    Stage 1 fixes n; a Gaussian-mixture bias distribution is fit to the
    surrogate-predicted failure points of the pool, the remaining budget is
    drawn from it, and the weighted estimator is returned.
    """
    s0, pool = _init_run(problem, cfg, rng, m)
    s1, trace = run_stage1(problem, s0, pool, cfg, rng)
    b = cfg.N - trace.n_chosen
    est = _siis_estimate(problem, s1, pool, trace, b, rng, variant, k_max, clip_to_domain)
    return est, trace


def _siis_estimate(
    problem: BenchmarkProblem,
    s1: gp.TrainedSurrogate,
    pool: McPool,
    trace: StageOneTrace,
    b: int,
    rng: RngStream,
    variant: str,
    k_max: int,
    clip_to_domain: bool,
) -> FailureEstimate:
    if b < 2:
        warnings.warn(
            f"stage 1 left a remaining budget of {b}; importance sampling "
            "needs >= 2 draws, so the surrogate classification estimate is "
            "returned instead"
        )
        pool.ensure_means(s1)
        method = Method.SIIS if variant == "MEAN" else Method.SIIS_UCB
        est = surrogate_mc(
            s1, pool, problem.t, orientation=problem.orientation, seed=rng.seed
        )
        return replace(est, method=method).with_ledger(
            trace.n_chosen, 0, trace.n_chosen, rng.seed
        )
    pool.ensure_means(s1)
    d = problem.dim
    cand = _siis_candidates(s1, pool, problem.t, problem.orientation, variant, b)
    if cand.size < d + 2:
        warnings.warn(
            "no predicted failures in the pool; falling back to the "
            "highest failure-probability points for the bias fit"
        )
        cand = _siis_fallback(s1, pool, problem.t, problem.orientation, b)
    tag = "gmm" if variant == "MEAN" else "gmm-ucb"
    q = select_k(pool.samples[cand], k_max=k_max, rng=rng.fork(tag))
    xs = gmm_sample(q, b, rng.fork("is" if variant == "MEAN" else "is-ucb"))
    if clip_to_domain:
        outside = int(np.count_nonzero(~np.all(
            (xs >= problem.domain.lower) & (xs <= problem.domain.upper), axis=1
        )))
        if outside:
            warnings.warn(f"clipped {outside} bias samples to the domain boundary")
        xs = problem.domain.clip(xs)
    ys = _check_response(problem.evaluate(xs))
    method = Method.SIIS if variant == "MEAN" else Method.SIIS_UCB
    est = importance_sampling(
        ys, xs, problem.dist, q, problem.t,
        orientation=problem.orientation, method=method, seed=rng.seed,
    )
    return est.with_ledger(trace.n_chosen, b, trace.n_chosen + b, rng.seed)


def run_method_suite(
    problem: BenchmarkProblem,
    cfg: BudgetConfig,
    methods,
    rng: RngStream,
    m: Optional[int] = None,
) -> dict:
    """Run several methods on one seed, sharing the Stage-1 prefix.

    Returns {Method: (FailureEstimate, StageOneTrace)}. All methods see
    identical initial designs, pools, acquisitions, and stopping decisions,
    which makes cross-method comparisons paired.
    """
    methods = [Method(m_) for m_ in methods]
    out = {}
    if not methods:
        raise ValueError("methods must be nonempty")

    plain_brute = [mt for mt in methods if mt == Method.BRUTE_MC]
    staged = [mt for mt in methods if mt != Method.BRUTE_MC]

    s0 = pool = s1 = trace = None
    if staged:
        s0, pool = _init_run(problem, cfg, rng, m)
        s1, trace = run_stage1(problem, s0, pool, cfg, rng)

    for mt in staged:
        mpool = pool.fresh_overrides()
        mtrace = trace.copy()
        if mt == Method.HYBRID_MC:
            b = cfg.N - mtrace.n_chosen
            s2, mpool = run_stage2(s1, mpool, problem, b, cfg.stage2_batch, rng)
            mpool.ensure_means(s2)
            est = hybrid_mc(
                s2, mpool, problem.t, orientation=problem.orientation, seed=rng.seed
            ).with_ledger(mtrace.n_chosen, b, mtrace.n_chosen + b, rng.seed)
        elif mt == Method.TWO_STAGE_PROX:
            b = cfg.N - mtrace.n_chosen
            s2, mpool = run_stage2(
                s1, mpool, problem, b, cfg.stage2_batch, rng, selector="proximity"
            )
            mpool.ensure_means(s2)
            est = hybrid_mc(
                s2, mpool, problem.t, orientation=problem.orientation, seed=rng.seed
            )
            est = replace(est, method=Method.TWO_STAGE_PROX).with_ledger(
                mtrace.n_chosen, b, mtrace.n_chosen + b, rng.seed
            )
        elif mt == Method.EXHAUSTIVE_CL:
            y0 = s0.y + s0.y_mean
            failures = int(np.count_nonzero(problem.is_failure(y0)))
            sx, mtrace, _ = _stage1_loop(
                problem, s1, mpool, cfg, rng,
                trace.copy(), failures, stop_enabled=False,
            )
            mpool.ensure_means(sx)
            est = surrogate_mc(
                sx, mpool, problem.t, orientation=problem.orientation, seed=rng.seed
            )
            est = replace(est, method=Method.EXHAUSTIVE_CL).with_ledger(
                mtrace.n_chosen, 0, mtrace.n_chosen, rng.seed
            )
        elif mt == Method.SURR_MC:
            mpool.ensure_means(s1)
            est = surrogate_mc(
                s1, mpool, problem.t, orientation=problem.orientation, seed=rng.seed
            ).with_ledger(mtrace.n_chosen, 0, mtrace.n_chosen, rng.seed)
        elif mt in (Method.SIIS, Method.SIIS_UCB):
            variant = "MEAN" if mt == Method.SIIS else "UCB95"
            b = cfg.N - mtrace.n_chosen
            est = _siis_estimate(
                problem, s1, mpool, mtrace, b, rng, variant, GMM_K_MAX, False
            )
        else:
            raise ValueError(f"unsupported method {mt}")
        out[mt] = (est, mtrace)

    for mt in plain_brute:
        mpool = (
            pool.fresh_overrides()
            if pool is not None
            else McPool.from_distribution(
                problem.dist, m if m is not None else problem.table_M, rng.fork("pool")
            )
        )
        vals = np.asarray(problem.f(mpool.samples), dtype=float)
        n_fail = int(np.count_nonzero(problem.is_failure(vals)))
        alpha = n_fail / mpool.m
        est = FailureEstimate(
            method=Method.BRUTE_MC, alpha_hat=alpha,
            sigma_hat=mc_std_err(alpha, mpool.m),
            n_surrogate=0, b_estimation=0, sim_evals_total=mpool.m, seed=rng.seed,
        )
        out[mt] = (est, StageOneTrace(n_chosen=0, stop_reason=BUDGET_EXHAUSTED))

    return out
