"""Analytic benchmark problems: functions, thresholds, input distributions, oracle.

Each problem bundles a cheap deterministic test function with its failure
threshold, box domain, input distribution, and reference table values
(failure probability, pool size, budget, initial design size). A streaming
brute-force Monte Carlo oracle estimates the true failure probability for
validation.

Calibration notes. The benchmark states normals as N(a, b) without labeling
b as variance or standard deviation, and two responses admit more than one
event convention. Each ambiguity was resolved by checking every candidate
against the benchmark's reference failure probability with an independent
oracle (near-exact quadrature where the function structure allows it,
large-M Monte Carlo otherwise); the study is reproducible with
scripts/resolve_testbed.py and the adopted choices are recorded per problem
in machine-readable `calibration` metadata. Adopted calibration:

* HERBIE: b is the standard deviation (sigma = 0.36); response as stated.
  Exact alpha 7.5239e-5 vs reference 7.533e-5 (0.1 oracle SE at M=1e8);
  the variance reading is off by a factor of 70 in alpha.
* ISHIGAMI: b is the standard deviation (x1 sigma = 1, x2 sigma = 1.5);
  response NEGATED. The stated response has range well below the +10.244
  threshold, so failures must live in the lower tail; with the negated
  response and sd reading, exact alpha 1.9032e-4 vs reference 1.904e-4
  (0.1 SE). The variance reading misses by 14 SE.
* HARTMANN6: b is the standard deviation (sigma = 0.1); response NEGATED,
  with the A matrix exactly as stated (entry A[0, 4] = 7.0). The stated
  response is negative-valued against a +2.46 threshold, and neither it
  nor the rescaled variant can ever exceed 2.46, leaving negation as the
  only possible orientation. Monte Carlo at M=4e8 gives alpha 1.019e-5 vs
  reference 1.001e-5 (1.1 SE); swapping in the classical-literature entry
  A[0, 4] = 1.7 misses by 49 SE, so the stated matrix is correct.
* PLATEAU4: b is the standard deviation (sigma = 0.11); response sums over
  ALL FOUR coordinates. The stated form leaves the fourth coordinate inert,
  but its exact failure probability (FFT convolution of the coordinate-sum
  density) is 4.4362e-4, 6.2 SE from the reference 4.308e-4 at M=1e8; the
  all-coordinates form gives exactly 4.2927e-4 (0.7 SE) and is adopted for
  the benchmark event. `plateau4` keeps the stated inert-coordinate
  semantics; `plateau4_full` is the benchmark response.
"""

from __future__ import annotations

import math
import subprocess
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .distributions import (
    BoxDomain,
    InputDistribution,
    MarginalDistribution,
    TruncatedNormal,
    Uniform,
)
from .estimators import FAIL_ABOVE, FailureEstimate, Method, fails, mc_std_err
from .rng import RngStream
from .special import std_normal_cdf

HERBIE = "HERBIE"
ISHIGAMI = "ISHIGAMI"
HARTMANN6 = "HARTMANN6"
PLATEAU4 = "PLATEAU4"

PROBLEM_NAMES = (HERBIE, ISHIGAMI, HARTMANN6, PLATEAU4)

ORACLE_CHUNK = 1_000_000


def _as_batch(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != d:
            raise ValueError(f"expected a {d}-vector, got shape {x.shape}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected (n, {d}) inputs, got shape {x.shape}")
    return x, False


def herbie(x):
    """2d Herbie: product over coordinates of a two-bump-plus-ripple profile."""
    xb, single = _as_batch(x, 2)
    term = (
        np.exp(-((xb - 1.0) ** 2))
        + np.exp(-0.8 * (xb + 1.0) ** 2)
        - 0.05 * np.sin(8.0 * (xb + 1.0))
    )
    out = np.prod(term, axis=1)
    return float(out[0]) if single else out


def ishigami(x):
    """3d Ishigami variant: sin(x1) + 5 sin(x2)^2 + 0.1 x3^4 sin(x1)."""
    xb, single = _as_batch(x, 3)
    s1 = np.sin(xb[:, 0])
    out = s1 + 5.0 * np.sin(xb[:, 1]) ** 2 + 0.1 * xb[:, 2] ** 4 * s1
    return float(out[0]) if single else out


def neg_ishigami(x):
    """Benchmark response for ISHIGAMI: the negated Ishigami function.

    The stated response never reaches the +10.244 failure threshold; the
    calibration study (module docstring) shows the negated response
    reproduces the reference failure probability.
    """
    val = ishigami(x)
    return -val


HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])

# Benchmark A matrix (stated transposed; stored here as 4 x 6). Entry
# [0, 4] is 7.0 where the classical Hartmann table has 1.7; the
# calibration study confirms the 7.0 entry (see module docstring).
HARTMANN_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 7.0, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)

HARTMANN_A_CLASSIC = HARTMANN_A.copy()
HARTMANN_A_CLASSIC[0, 4] = 1.7

HARTMANN_P = np.array(
    [
        [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
        [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
        [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
        [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
    ]
)


def _hartmann6_with(a_matrix: np.ndarray, x):
    xb, single = _as_batch(x, 6)
    sq = (xb[:, None, :] - HARTMANN_P[None, :, :]) ** 2
    inner = np.einsum("nij,ij->ni", sq, a_matrix)
    out = -np.exp(-inner) @ HARTMANN_ALPHA
    return float(out[0]) if single else out


def hartmann6(x):
    """6d Hartmann (negative-valued), with the benchmark A matrix (A[0, 4] = 7)."""
    return _hartmann6_with(HARTMANN_A, x)


def hartmann6_classic(x):
    """6d Hartmann with the classical-literature A matrix (A[0, 4] = 1.7)."""
    return _hartmann6_with(HARTMANN_A_CLASSIC, x)


def hartmann6_rescaled(x):
    """Rescaled 6d Hartmann variant: -(1/1.94) * (2.58 + hartmann6(x))."""
    val = hartmann6(x)
    return -(2.58 + val) / 1.94


def neg_hartmann6(x):
    """Benchmark response for HARTMANN6: the negated Hartmann function."""
    val = hartmann6(x)
    return -val


def plateau4(x):
    """4d plateau: 2*Phi(sqrt(2)*(-4 - 3*sum_{i<=3}(4x_i - 2))) - 1; 4th coordinate inert."""
    xb, single = _as_batch(x, 4)
    arg = math.sqrt(2.0) * (-4.0 - 3.0 * np.sum(4.0 * xb[:, :3] - 2.0, axis=1))
    out = 2.0 * std_normal_cdf(arg) - 1.0
    return float(out[0]) if single else out


def plateau4_full(x):
    """Benchmark response for PLATEAU4: the plateau form with all four coordinates active.

    Same shape as `plateau4` but the sum runs over every coordinate; only
    this form reproduces the reference failure probability (module
    docstring), so the benchmark failure event uses it.
    """
    xb, single = _as_batch(x, 4)
    arg = math.sqrt(2.0) * (-4.0 - 3.0 * np.sum(4.0 * xb - 2.0, axis=1))
    out = 2.0 * std_normal_cdf(arg) - 1.0
    return float(out[0]) if single else out


@dataclass
class BenchmarkProblem:
    """A test function with its failure event, input law, and reference values."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    t: float
    orientation: str
    domain: BoxDomain
    dist: InputDistribution
    table_alpha: float
    table_M: int
    table_N: int
    table_n0: int
    calibration: dict = field(default_factory=dict)
    sim_evals: int = 0

    @property
    def dim(self) -> int:
        return self.domain.dim

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Simulator call; every row is charged to the evaluation ledger."""
        xb, single = _as_batch(x, self.dim)
        self.sim_evals += xb.shape[0]
        out = np.asarray(self.f(xb), dtype=float)
        return float(out[0]) if single else out

    def is_failure(self, vals) -> np.ndarray:
        return fails(vals, self.t, self.orientation)


def _herbie_marginals(reading: str) -> tuple[MarginalDistribution, ...]:
    sigma = math.sqrt(0.36) if reading == "variance" else 0.36
    return tuple(TruncatedNormal(0.0, sigma, -2.0, 2.0) for _ in range(2))


def _ishigami_marginals(reading: str) -> tuple[MarginalDistribution, ...]:
    s2 = math.sqrt(1.5) if reading == "variance" else 1.5
    return (
        TruncatedNormal(-1.0, 1.0, -math.pi, math.pi),
        TruncatedNormal(1.5, s2, -math.pi, math.pi),
        Uniform(-math.pi, math.pi),
    )


def _hartmann_marginals(reading: str) -> tuple[MarginalDistribution, ...]:
    sigma = math.sqrt(0.1) if reading == "variance" else 0.1
    return tuple(TruncatedNormal(0.5, sigma, 0.0, 1.0) for _ in range(6))


def _plateau_marginals(reading: str) -> tuple[MarginalDistribution, ...]:
    sigma = math.sqrt(0.11) if reading == "variance" else 0.11
    return tuple(TruncatedNormal(0.6, sigma, 0.0, 1.0) for _ in range(4))


# Adopted second-parameter reading per problem, fixed by the calibration
# study (see module docstring and scripts/resolve_testbed.py).
ADOPTED_READING = {
    HERBIE: "sd",
    ISHIGAMI: "sd",
    HARTMANN6: "sd",
    PLATEAU4: "sd",
}

_TABLE = {
    HERBIE: dict(t=1.065, d=2, n0=20, N=150, M=35_000_000, alpha=7.533e-5),
    ISHIGAMI: dict(t=10.244, d=3, n0=50, N=300, M=15_000_000, alpha=1.904e-4),
    HARTMANN6: dict(t=2.46, d=6, n0=100, N=600, M=100_000_000, alpha=1.001e-5),
    PLATEAU4: dict(t=0.0, d=4, n0=30, N=200, M=3_500_000, alpha=4.308e-4),
}

# Benchmark failure responses, fixed by the same calibration study.
_FUNCS = {
    HERBIE: herbie,
    ISHIGAMI: neg_ishigami,
    HARTMANN6: neg_hartmann6,
    PLATEAU4: plateau4_full,
}

_RESPONSE_FORM = {
    HERBIE: "as-stated",
    ISHIGAMI: "negated",
    HARTMANN6: "negated",
    PLATEAU4: "all-coordinates",
}

_MARGINALS = {
    HERBIE: _herbie_marginals,
    ISHIGAMI: _ishigami_marginals,
    HARTMANN6: _hartmann_marginals,
    PLATEAU4: _plateau_marginals,
}

_DOMAINS = {
    HERBIE: (-2.0, 2.0),
    ISHIGAMI: (-math.pi, math.pi),
    HARTMANN6: (0.0, 1.0),
    PLATEAU4: (0.0, 1.0),
}


def make_problem(name: str, reading: Optional[str] = None) -> BenchmarkProblem:
    """Build a benchmark problem by name with its adopted distribution reading.

    `reading` overrides the adopted variance-vs-sd interpretation ("sd" or
    "variance"); the default is the oracle-validated choice.
    """
    key = name.upper()
    if key not in _TABLE:
        raise ValueError(f"unknown problem {name!r}; choose from {PROBLEM_NAMES}")
    if reading is None:
        reading = ADOPTED_READING[key]
    if reading not in ("sd", "variance"):
        raise ValueError("reading must be 'sd' or 'variance'")
    row = _TABLE[key]
    lo, hi = _DOMAINS[key]
    d = row["d"]
    domain = BoxDomain(np.full(d, lo), np.full(d, hi))
    dist = InputDistribution(_MARGINALS[key](reading))
    dist.check_within(domain)
    return BenchmarkProblem(
        name=key,
        f=_FUNCS[key],
        t=row["t"],
        orientation=FAIL_ABOVE,
        domain=domain,
        dist=dist,
        table_alpha=row["alpha"],
        table_M=row["M"],
        table_N=row["N"],
        table_n0=row["n0"],
        calibration={
            "reading": reading,
            "adopted_reading": reading == ADOPTED_READING[key],
            "response": _RESPONSE_FORM[key],
        },
    )


def _oracle_chunk_failures(
    f: Callable[[np.ndarray], np.ndarray],
    dist: InputDistribution,
    t: float,
    orientation: str,
    rng: RngStream,
    chunk_index: int,
    chunk_size: int,
) -> int:
    xs = dist.sample(chunk_size, rng.fork("oracle").fork(chunk_index))
    vals = np.asarray(f(xs), dtype=float)
    return int(np.count_nonzero(fails(vals, t, orientation)))


def _oracle_worker(args) -> int:
    name, reading, f_override, rng, idx, size = args
    p = make_problem(name, reading)
    f = p.f if f_override is None else f_override
    return _oracle_chunk_failures(f, p.dist, p.t, p.orientation, rng, idx, size)


def oracle_alpha(
    p: BenchmarkProblem,
    m_oracle: int,
    rng: RngStream,
    workers: int = 1,
    chunk: int = ORACLE_CHUNK,
    f_override: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> FailureEstimate:
    """Brute-force Monte Carlo estimate of alpha over a fresh sample of size m_oracle.

    Work is split into fixed-size chunks with per-chunk forked rng streams,
    so the result is deterministic for a given seed regardless of the worker
    count. `f_override` substitutes an alternative response (used by the
    distribution-reading resolution study); it bypasses the problem's
    evaluation ledger, as the oracle is for cheap analytic functions only.
    """
    if m_oracle < 1:
        raise ValueError("m_oracle must be >= 1")
    f = f_override if f_override is not None else p.f
    sizes = [chunk] * (m_oracle // chunk)
    if m_oracle % chunk:
        sizes.append(m_oracle % chunk)

    if workers > 1 and p.name in _TABLE and len(sizes) > 1:
        reading = p.calibration.get("reading")
        args = [
            (p.name, reading, f_override, rng, i, s) for i, s in enumerate(sizes)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            failures = sum(pool.map(_oracle_worker, args, chunksize=4))
    else:
        failures = 0
        for i, s in enumerate(sizes):
            failures += _oracle_chunk_failures(
                f, p.dist, p.t, p.orientation, rng, i, s
            )

    alpha = failures / m_oracle
    return FailureEstimate(
        method=Method.BRUTE_MC,
        alpha_hat=alpha,
        sigma_hat=mc_std_err(alpha, m_oracle),
        n_surrogate=0,
        b_estimation=0,
        sim_evals_total=m_oracle,
        seed=rng.seed,
    )


class SimulatorFault(RuntimeError):
    """An external simulator broke the line protocol or returned a non-finite value."""


class ExternalSimulator:
    """Adapter for an executable simulator speaking a line protocol.

    Protocol: one whitespace-separated d-vector per input line on stdin, one
    float per output line on stdout, flushed per evaluation. Wrap with a
    BenchmarkProblem to plug external simulators into the same pipelines.
    """

    def __init__(self, command, dim: int):
        self.command = list(command) if not isinstance(command, str) else [command]
        self.dim = int(dim)
        self._proc: Optional[subprocess.Popen] = None

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def __call__(self, x: np.ndarray) -> np.ndarray:
        xb, single = _as_batch(x, self.dim)
        proc = self._ensure_started()
        out = np.empty(xb.shape[0])
        try:
            for i, row in enumerate(xb):
                line = " ".join(repr(float(v)) for v in row)
                proc.stdin.write(line + "\n")
                proc.stdin.flush()
                reply = proc.stdout.readline()
                if not reply:
                    raise SimulatorFault("simulator closed its output stream")
                out[i] = float(reply.strip())
        except (ValueError, OSError) as err:
            raise SimulatorFault(f"simulator protocol error: {err}") from err
        if not np.all(np.isfinite(out)):
            raise SimulatorFault("simulator returned a non-finite value")
        return float(out[0]) if single else out

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None

    def __enter__(self) -> "ExternalSimulator":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
