"""Input domains and independent-marginal input distributions.

The benchmark problems all use coordinates that are independently either
uniform or truncated normal, so the joint density is a product of marginals.
Truncated normals are sampled by inverse CDF on the renormalized interval,
which is exact and loop-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .rng import RngStream
from .special import std_normal_cdf, std_normal_pdf, std_normal_quantile

# Tightest interval on which the standard-normal quantile is finite.
_QUANTILE_FLOOR = np.finfo(float).tiny
_QUANTILE_CEIL = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box in R^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
            raise ValueError("lower/upper must be matching 1-d vectors")
        if not np.all(lo < hi):
            raise ValueError("domain requires lower[i] < upper[i]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        x = np.atleast_2d(x)
        return bool(
            np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol)
        )

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.widths

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.widths

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


@dataclass(frozen=True)
class Uniform:
    """Uniform marginal on [a, b]."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("uniform requires a < b")

    @property
    def support(self) -> tuple[float, float]:
        return (self.a, self.b)

    def sample(self, rng: RngStream, size: int | None = None):
        u = rng.generator().random(size)
        return self.a + u * (self.b - self.a)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)
        return out if out.shape else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.clip((x - self.a) / (self.b - self.a), 0.0, 1.0)
        return out if out.shape else float(out)


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(mu, sigma^2) truncated to [a, b], renormalized."""

    mu: float
    sigma: float
    a: float
    b: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not self.a < self.b:
            raise ValueError("truncation requires a < b")

    @property
    def support(self) -> tuple[float, float]:
        return (self.a, self.b)

    def _cdf_bounds(self) -> tuple[bool, float, float]:
        """Endpoint CDF values in a frame where they stay away from 1.0.

        When the whole interval sits above the mean, plain CDF values of both
        endpoints round to 1.0 long before the interval's actual probability
        mass underflows (Phi saturates near +8 sigma, but survival values stay
        representable out to ~38 sigma).  In that case work with survival
        values instead, which mirrors the frame: ``hi`` then belongs to ``a``
        and ``lo`` to ``b``.  Returns ``(flipped, lo, hi)``.
        """
        za = (self.a - self.mu) / self.sigma
        zb = (self.b - self.mu) / self.sigma
        if za > 0.0:
            flipped, lo, hi = True, std_normal_cdf(-zb), std_normal_cdf(-za)
        else:
            flipped, lo, hi = False, std_normal_cdf(za), std_normal_cdf(zb)
        if hi - lo <= 0.0:
            raise ValueError("truncation interval has no usable mass")
        return flipped, lo, hi

    def sample(self, rng: RngStream, size: int | None = None):
        flipped, lo, hi = self._cdf_bounds()
        u = rng.generator().random(size)
        # Clamp strictly inside (0, 1): endpoint CDF values that underflow to
        # 0.0 or round up to 1.0 would otherwise leave the quantile's domain.
        q = np.clip(lo + u * (hi - lo), _QUANTILE_FLOOR, _QUANTILE_CEIL)
        z = std_normal_quantile(q)
        x = self.mu - self.sigma * z if flipped else self.mu + self.sigma * z
        return np.clip(x, self.a, self.b)

    def pdf(self, x):
        _, lo, hi = self._cdf_bounds()
        x = np.asarray(x, dtype=float)
        z = (x - self.mu) / self.sigma
        dens = std_normal_pdf(z) / (self.sigma * (hi - lo))
        out = np.where((x >= self.a) & (x <= self.b), dens, 0.0)
        return out if out.shape else float(out)

    def cdf(self, x):
        flipped, lo, hi = self._cdf_bounds()
        x = np.asarray(x, dtype=float)
        z = (x - self.mu) / self.sigma
        if flipped:
            raw = (hi - std_normal_cdf(-z)) / (hi - lo)
        else:
            raw = (std_normal_cdf(z) - lo) / (hi - lo)
        out = np.clip(raw, 0.0, 1.0)
        return out if out.shape else float(out)


MarginalDistribution = Union[Uniform, TruncatedNormal]


def sample_marginal(m: MarginalDistribution, rng: RngStream, size: int | None = None):
    return m.sample(rng, size)


def marginal_pdf(m: MarginalDistribution, x):
    return m.pdf(x)


@dataclass(frozen=True)
class InputDistribution:
    """Product distribution of independent marginals, one per coordinate."""

    marginals: tuple[MarginalDistribution, ...]

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if len(self.marginals) < 1:
            raise ValueError("need at least one marginal")

    @property
    def dim(self) -> int:
        return len(self.marginals)

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        cols = [
            m.sample(rng.fork(j), n) for j, m in enumerate(self.marginals)
        ]
        return np.column_stack(cols)

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} columns, got {x.shape[1]}")
        out = np.ones(x.shape[0])
        for j, m in enumerate(self.marginals):
            out *= m.pdf(x[:, j])
        return out

    def check_within(self, domain: BoxDomain) -> None:
        if domain.dim != self.dim:
            raise ValueError("distribution/domain dimension mismatch")
        for j, m in enumerate(self.marginals):
            a, b = m.support
            if a < domain.lower[j] or b > domain.upper[j]:
                raise ValueError(f"marginal {j} support exceeds the domain axis")
