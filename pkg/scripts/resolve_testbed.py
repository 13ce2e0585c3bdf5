#!/usr/bin/env python3
"""Calibration study fixing the benchmark testbed's ambiguous definitions.

The benchmark states normal input parameters as N(a, b) without labeling b
as variance or standard deviation, and some responses admit more than one
failure-event convention (sign, matrix entry, inert coordinate). This
script evaluates every candidate against the reference failure probability
and reports the deviation in units of the Monte Carlo standard error at
M = 1e8 (the scale at which the oracle is validated). The candidate within
a few SE is adopted in `rareprob.testbed`.

Where the function structure allows, alpha is computed near-exactly
without Monte Carlo:

* HERBIE is a product of identical 1d profiles, so P(w(x1)w(x2) > t)
  reduces to integrating the level-set measure of one profile (sorted
  cumulative masses on a fine grid).
* ISHIGAMI failure reduces to a closed-form truncated-normal measure in
  x2 given (x1, x3): |sin x2| below/above a threshold that depends only on
  sin(x1) and x3^4, so a 2d quadrature over (x1, x3) suffices.
* PLATEAU4 failure depends only on the coordinate sum, so the exact alpha
  is one tail mass of the 3- or 4-fold convolution of the marginal density
  (computed by FFT on a fine grid).

HARTMANN6 (6d, no separable structure) uses plain Monte Carlo; the raw and
rescaled responses are bounded below the threshold, so only the negated
response can produce failures, and the study compares the stated A matrix
(entry [0, 4] = 7.0) against the classical-literature variant (1.7).

Deviations quoted in the `rareprob.testbed` docstring come from this
script with --m-hartmann 400000000 (a few minutes of runtime).
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np
from scipy.special import ndtr

sys.path.insert(0, "src")

from rareprob.rng import RngStream  # noqa: E402
from rareprob.testbed import (  # noqa: E402
    HARTMANN6,
    HERBIE,
    ISHIGAMI,
    PLATEAU4,
    hartmann6,
    hartmann6_classic,
    hartmann6_rescaled,
    ishigami,
    make_problem,
    neg_ishigami,
    oracle_alpha,
    plateau4,
    plateau4_full,
)

REFERENCE = {
    HERBIE: 7.533e-5,
    ISHIGAMI: 1.904e-4,
    HARTMANN6: 1.001e-5,
    PLATEAU4: 4.308e-4,
}

SE_SCALE_M = 100_000_000


def se_at_scale(alpha_ref: float) -> float:
    return math.sqrt(alpha_ref * (1.0 - alpha_ref) / SE_SCALE_M)


def exact_herbie_alpha(sigma: float, t: float = 1.065, npts: int = 2**22) -> float:
    """P(w(x1) w(x2) > t) for iid truncated N(0, sigma^2) on [-2, 2]."""
    edges = np.linspace(-2.0, 2.0, npts + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    z = ndtr(2.0 / sigma) - ndtr(-2.0 / sigma)
    cdf = (ndtr(edges / sigma) - ndtr(-2.0 / sigma)) / z
    mass = np.diff(cdf)
    w = (
        np.exp(-((mids - 1.0) ** 2))
        + np.exp(-0.8 * (mids + 1.0) ** 2)
        - 0.05 * np.sin(8.0 * (mids + 1.0))
    )
    order = np.argsort(w)[::-1]
    w_sorted = w[order]
    cum = np.cumsum(mass[order])
    pos = w > t / w.max()
    levels = t / w[pos]
    k = np.searchsorted(-w_sorted, -levels, side="right")
    tail = np.concatenate([[0.0], cum])[k]
    return float(np.sum(mass[pos] * tail))


def exact_ishigami_alpha(
    s1: float,
    s2: float,
    negated: bool,
    t: float = 10.244,
    n1: int = 6000,
    n3: int = 6000,
) -> float:
    """Failure probability of the (optionally negated) Ishigami response.

    Failure of the negated response is sin(x1)(1 + 0.1 x3^4) + 5 sin^2(x2)
    < -t, i.e. sin^2(x2) < c(x1, x3); the stated response fails when
    sin^2(x2) > c'(x1, x3). Either way the x2 measure is a closed-form
    truncated-normal expression, leaving a 2d quadrature over (x1, x3).
    """
    pi = math.pi
    z1 = ndtr((pi + 1.0) / s1) - ndtr((-pi + 1.0) / s1)
    e1 = np.linspace(-pi, pi, n1 + 1)
    c1 = (ndtr((e1 + 1.0) / s1) - ndtr((-pi + 1.0) / s1)) / z1
    m1 = np.diff(c1)
    x1 = 0.5 * (e1[:-1] + e1[1:])
    e3 = np.linspace(-pi, pi, n3 + 1)
    x3 = 0.5 * (e3[:-1] + e3[1:])
    m3 = np.full(n3, 1.0 / n3)
    z2 = ndtr((pi - 1.5) / s2) - ndtr((-pi - 1.5) / s2)

    def trunc_cdf_x2(x):
        return (ndtr((x - 1.5) / s2) - ndtr((-pi - 1.5) / s2)) / z2

    g = np.sin(x1)[:, None] * (1.0 + 0.1 * x3**4)[None, :]
    if negated:
        c = (-t - g) / 5.0
    else:
        c = (t - g) / 5.0
    inside = np.clip(c, 0.0, 1.0)
    s = np.sqrt(inside)
    a = np.arcsin(s)
    # P(|sin x2| < s) on [-pi, pi]: intervals (-a, a), (pi-a, pi], [-pi, -pi+a)
    p_below = (
        (trunc_cdf_x2(a) - trunc_cdf_x2(-a))
        + (trunc_cdf_x2(pi) - trunc_cdf_x2(pi - a))
        + (trunc_cdf_x2(-pi + a) - trunc_cdf_x2(-pi))
    )
    if negated:
        p = np.where(c <= 0.0, 0.0, p_below)
        p = np.where(c >= 1.0, 1.0, p)
    else:
        p = np.where(c <= 0.0, 1.0, 1.0 - p_below)
        p = np.where(c >= 1.0, 0.0, p)
    return float(np.einsum("i,ij,j->", m1, p, m3))


def exact_plateau_alpha(sigma: float, n_coords: int, npts: int = 2**16) -> float:
    """Exact tail mass P(sum of n_coords coordinates < threshold) by FFT convolution.

    The plateau response is positive (a failure, t = 0) exactly when the
    coordinate sum S over the active coordinates satisfies
    S < (2 n_coords - 4/3) / 4, with coordinates iid truncated
    N(0.6, sigma^2) on [0, 1].
    """
    thresh = (2.0 * n_coords - 4.0 / 3.0) / 4.0
    z = ndtr((1.0 - 0.6) / sigma) - ndtr((0.0 - 0.6) / sigma)
    grid = np.linspace(0.0, 1.0, npts + 1)
    cdf = (ndtr((grid - 0.6) / sigma) - ndtr((0.0 - 0.6) / sigma)) / z
    mass = np.diff(cdf)
    # n_coords-fold convolution on the lattice of cell midpoints
    size = npts * n_coords
    fft_len = 1 << (size - 1).bit_length()
    f = np.fft.rfft(mass, fft_len)
    conv = np.fft.irfft(f**n_coords, fft_len)[:size]
    h = 1.0 / npts
    # cell i of the convolution sits at sum ~ (i + n_coords/2) * h
    centers = (np.arange(size) + 0.5 * n_coords) * h
    return float(conv[centers < thresh].sum())


def mc_row(problem_name, reading, f_override, m, rng, label):
    p = make_problem(problem_name, reading=reading)
    est = oracle_alpha(p, m, rng, f_override=f_override)
    return dict(
        problem=problem_name,
        candidate=label,
        method=f"mc (M={m:.1e})",
        alpha=est.alpha_hat,
        mc_se=est.sigma_hat,
    )


def exact_row(problem_name, label, alpha):
    return dict(
        problem=problem_name, candidate=label, method="exact", alpha=alpha, mc_se=0.0
    )


def finish(rows, adopted):
    for r in rows:
        ref = REFERENCE[r["problem"]]
        r["reference"] = ref
        r["dev_se_1e8"] = abs(r["alpha"] - ref) / se_at_scale(ref)
        r["adopted"] = r["candidate"] == adopted[r["problem"]]
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m-small", type=float, default=2e7, help="MC size for screens")
    ap.add_argument("--m-hartmann", type=float, default=2e7, help="MC size for HARTMANN6")
    ap.add_argument("--seed", type=int, default=20260819)
    ap.add_argument("--json", type=str, default=None, help="also write rows as JSON")
    args = ap.parse_args(argv)
    m_small = int(args.m_small)
    m_h = int(args.m_hartmann)
    rng = RngStream(args.seed, 0)

    rows = []

    rows.append(exact_row(HERBIE, "sd reading", exact_herbie_alpha(0.36)))
    rows.append(exact_row(HERBIE, "variance reading", exact_herbie_alpha(math.sqrt(0.36))))

    cases = [
        ("stated, sd", 1.0, 1.5, False),
        ("stated, variance", 1.0, math.sqrt(1.5), False),
        ("negated, sd", 1.0, 1.5, True),
        ("negated, variance", 1.0, math.sqrt(1.5), True),
    ]
    for label, s1, s2, neg in cases:
        rows.append(exact_row(ISHIGAMI, label, exact_ishigami_alpha(s1, s2, neg)))

    for label, sigma in [("sd", 0.11), ("variance", math.sqrt(0.11))]:
        rows.append(
            exact_row(PLATEAU4, f"inert 4th coord, {label}", exact_plateau_alpha(sigma, 3))
        )
        rows.append(
            exact_row(PLATEAU4, f"all four coords, {label}", exact_plateau_alpha(sigma, 4))
        )

    # Hartmann: raw and rescaled responses are bounded below t = 2.46
    # (max ~ 0 and ~ 0.33), so alpha = 0 for them; only negation is viable.
    rows.append(exact_row(HARTMANN6, "stated (bounded below t)", 0.0))
    rows.append(exact_row(HARTMANN6, "rescaled (bounded below t)", 0.0))
    hartmann_cases = [
        ("negated, stated A, sd", "sd", lambda x: -hartmann6(x)),
        ("negated, classic A, sd", "sd", lambda x: -hartmann6_classic(x)),
        ("negated, stated A, variance", "variance", lambda x: -hartmann6(x)),
    ]
    for label, reading, f in hartmann_cases:
        rows.append(mc_row(HARTMANN6, reading, f, m_h, rng, label))

    # MC cross-checks of the exact adopted values
    rows.append(mc_row(HERBIE, "sd", None, m_small, rng, "sd reading [mc check]"))
    rows.append(
        mc_row(ISHIGAMI, "sd", neg_ishigami, m_small, rng, "negated, sd [mc check]")
    )
    rows.append(
        mc_row(PLATEAU4, "sd", plateau4_full, m_small, rng, "all four coords, sd [mc check]")
    )
    rows.append(
        mc_row(PLATEAU4, "sd", plateau4, m_small, rng, "inert 4th coord, sd [mc check]")
    )

    adopted = {
        HERBIE: "sd reading",
        ISHIGAMI: "negated, sd",
        HARTMANN6: "negated, stated A, sd",
        PLATEAU4: "all four coords, sd",
    }
    finish(rows, adopted)

    hdr = f"{'problem':10s} {'candidate':34s} {'method':14s} {'alpha':>12s} {'ref':>10s} {'dev(SE@1e8)':>12s}  adopted"
    print(hdr)
    print("-" * len(hdr))
    for r in rows:
        print(
            f"{r['problem']:10s} {r['candidate']:34s} {r['method']:14s} "
            f"{r['alpha']:12.4e} {r['reference']:10.3e} {r['dev_se_1e8']:12.1f}  "
            f"{'<-- ADOPTED' if r['adopted'] else ''}"
        )

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
        print(f"\nwrote {args.json}")

    bad = [
        r
        for r in rows
        if r["adopted"] and r["dev_se_1e8"] > 3.0 + 3.0 * (r["mc_se"] > 0)
    ]
    return 1 if bad else 0


if __name__ == "__main__":
    raise SystemExit(main())
