"""Standard-normal special functions shared across the package."""

from __future__ import annotations

import numpy as np
from scipy import special as sp_special

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def std_normal_cdf(z):
    """Phi(z), computed from the complementary error function.

    Saturates to exactly 0/1 in the extreme tails; accepts scalars or arrays.
    """
    return sp_special.ndtr(z)


def std_normal_pdf(z):
    z = np.asarray(z, dtype=float)
    out = INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return out if out.shape else float(out)


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open interval (0, 1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("quantile argument must lie strictly inside (0, 1)")
    out = sp_special.ndtri(p_arr)
    return out if out.shape else float(out)
