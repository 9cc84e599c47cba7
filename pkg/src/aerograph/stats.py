"""Gumbel fitting, rank correlation, and power-law regression.

The Gumbel (Extreme Value Type I, right-tailed) fit is maximum likelihood:
the scale beta solves the one-dimensional stationarity condition

    g(beta) = beta - mean(x) + sum(x_i w_i) / sum(w_i) = 0,
    w_i = exp(-x_i / beta),

by Newton iteration seeded with the method-of-moments estimate
beta0 = s * sqrt(6) / pi. The derivative g'(beta) = 1 + Var_w(x) / beta^2
is at least 1, so the iteration is well behaved. The location follows in
closed form: mu = c - beta * ln(mean(exp(-(x_i - c) / beta))).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100


class StatsError(Exception):
    """Inputs outside a statistic's domain, or a fit that failed."""


@dataclass(frozen=True)
class GumbelFit:
    mu: float
    beta: float  # NaN when degenerate
    degenerate: bool
    iterations: int
    n: int


def fit_gumbel(samples) -> GumbelFit:
    """Maximum-likelihood Gumbel fit of a 1-d sample.

    All-equal samples are flagged degenerate with mu set to the common value
    and beta undefined (NaN). Non-convergence raises with diagnostics.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 3:
        raise StatsError(f"Gumbel fit needs at least 3 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise StatsError("Gumbel fit needs finite samples")
    if np.all(x == x[0]):
        return GumbelFit(mu=float(x[0]), beta=math.nan, degenerate=True, iterations=0, n=x.size)

    # Work in min-shifted coordinates throughout: the fit is location
    # equivariant, the exponentials stay bounded, and the residual g avoids
    # the cancellation that a large common offset would otherwise cause.
    shift = float(x.min())
    centered = x - shift
    mean_c = float(centered.mean())
    beta = float(x.std()) * math.sqrt(6.0) / math.pi

    for iteration in range(1, NEWTON_MAX_ITER + 1):
        w = np.exp(-centered / beta)
        total = w.sum()
        weighted_mean = float((centered * w).sum() / total)
        g = beta - mean_c + weighted_mean
        # Var_w under the weights w
        var_w = float((w * (centered - weighted_mean) ** 2).sum() / total)
        g_prime = 1.0 + var_w / (beta * beta)
        step = g / g_prime
        candidate = beta - step
        if candidate <= 0.0:
            candidate = beta / 2.0
        done = abs(candidate - beta) <= NEWTON_TOL * max(1.0, abs(beta))
        beta = candidate
        if done:
            w = np.exp(-(centered - mean_c) / beta)
            mu = shift + mean_c - beta * math.log(float(w.mean()))
            return GumbelFit(
                mu=float(mu), beta=float(beta), degenerate=False,
                iterations=iteration, n=x.size,
            )
    raise StatsError(
        f"Gumbel fit did not converge in {NEWTON_MAX_ITER} iterations "
        f"(n={x.size}, last beta={beta:.6g}, residual={g:.3g})"
    )


def gumbel_density(x, mu: float, beta: float) -> np.ndarray:
    """Gumbel pdf, handy for plot emission and eyeballing fits."""
    z = (np.asarray(x, dtype=np.float64) - mu) / beta
    return np.exp(-(z + np.exp(-z))) / beta


def average_ranks(x) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    v = np.asarray(x, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(x, y) -> float:
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.size != b.size:
        raise StatsError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 3:
        raise StatsError("correlation needs at least 3 points")
    da = a - a.mean()
    db = b - b.mean()
    var_a = float(da @ da)
    var_b = float(db @ db)
    if var_a == 0.0 or var_b == 0.0:
        raise StatsError("correlation is undefined for a zero-variance vector")
    return float((da @ db) / math.sqrt(var_a * var_b))


def spearman(x, y) -> float:
    """Rank correlation: Pearson on average ranks."""
    return pearson(average_ranks(x), average_ranks(y))


@dataclass(frozen=True)
class PowerLawFit:
    a: float
    b: float
    r_fit: float  # Pearson between fitted and observed y


def power_law_fit(x, y) -> PowerLawFit:
    """Least squares of log y on log x: y = a * x**b."""
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.size != yv.size:
        raise StatsError(f"length mismatch: {xv.size} vs {yv.size}")
    if xv.size < 3:
        raise StatsError("power-law fit needs at least 3 points")
    if np.any(xv <= 0) or np.any(yv <= 0):
        raise StatsError("power-law fit needs strictly positive data")
    lx = np.log(xv)
    ly = np.log(yv)
    dlx = lx - lx.mean()
    var = float(dlx @ dlx)
    if var == 0.0:
        raise StatsError("power-law fit is undefined for constant x")
    slope = float(dlx @ (ly - ly.mean())) / var
    intercept = float(ly.mean() - slope * lx.mean())
    a = math.exp(intercept)
    fitted = a * np.power(xv, slope)
    return PowerLawFit(a=a, b=slope, r_fit=pearson(fitted, yv))
