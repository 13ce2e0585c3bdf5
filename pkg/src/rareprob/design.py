"""Space-filling designs."""

from __future__ import annotations

import numpy as np

from .distributions import BoxDomain
from .rng import RngStream


def latin_hypercube(n: int, domain: BoxDomain, rng: RngStream) -> np.ndarray:
    """Random Latin hypercube of ``n`` points in ``domain``.

    Each coordinate places exactly one point in each of the ``n`` equal-width
    strata, with the pairing of strata across coordinates randomized and the
    position within a stratum uniform.
    """
    if n < 1:
        raise ValueError("latin hypercube needs n >= 1")
    gen = rng.generator()
    d = domain.dim
    unit = np.empty((n, d))
    for j in range(d):
        perm = gen.permutation(n)
        unit[:, j] = (perm + gen.random(n)) / n
    return domain.lower + unit * (domain.upper - domain.lower)
