"""Slow, obviously-correct reference computations used by the tests."""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy.optimize import minimize

from peloton.stats.lmm import LmmDataset


def random_dataset(rng: np.random.Generator, max_n: int = 40, max_subjects: int = 10) -> LmmDataset:
    """Unbalanced random-intercept data with one or two covariates."""
    g = int(rng.integers(3, max_subjects + 1))
    n = int(rng.integers(max(g + 4, 8), max_n + 1))
    groups = np.concatenate([np.arange(g), rng.integers(0, g, n - g)])
    k = int(rng.integers(1, 3))
    X = rng.normal(size=(n, k))
    beta = rng.normal(size=k + 1)
    s = rng.normal(scale=rng.uniform(0.3, 2.0), size=g)
    y = beta[0] + X @ beta[1:] + s[groups] + rng.normal(scale=rng.uniform(0.5, 1.5), size=n)
    return LmmDataset(tuple(f"g{i}" for i in groups), y, X)


def dense_deviance(data: LmmDataset, beta, sigma2_s, sigma2, method="reml") -> float:
    """-2 log (restricted) likelihood with V formed explicitly."""
    X = data.design()
    y = data.response
    n, p = X.shape
    gi = data.group_index()
    Z = (gi[:, None] == np.arange(gi.max() + 1)[None, :]).astype(float)
    V = sigma2 * np.eye(n) + sigma2_s * Z @ Z.T
    Vinv = np.linalg.inv(V)
    r = y - X @ beta
    dev = np.linalg.slogdet(V)[1] + r @ Vinv @ r
    if method == "reml":
        dev += np.linalg.slogdet(X.T @ Vinv @ X)[1] + (n - p) * math.log(2 * math.pi)
    else:
        dev += n * math.log(2 * math.pi)
    return float(dev)


def brute_force_fit(data: LmmDataset, method="reml"):
    """Minimize the dense deviance jointly over (beta, log sigma_s^2, log sigma^2).

    With beta left free the restricted deviance has the same minimizer as the
    usual beta-free form, since its quadratic term is minimized at the GLS beta.
    """
    X = data.design()
    y = data.response
    p = X.shape[1]
    ols, *_ = np.linalg.lstsq(X, y, rcond=None)
    s2 = float(np.var(y - X @ ols))

    def obj(z):
        return dense_deviance(data, z[:p], math.exp(z[p]), math.exp(z[p + 1]), method)

    best = None
    for start_s in (s2, 0.1 * s2, 0.01 * s2):
        z0 = np.concatenate([ols, [math.log(start_s), math.log(s2)]])
        res = minimize(obj, z0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 40000, "maxfev": 40000})
        res = minimize(obj, res.x, method="BFGS", options={"gtol": 1e-10})
        if best is None or res.fun < best.fun:
            best = res
    z = best.x
    return z[:p], math.exp(z[p]), math.exp(z[p + 1]), best.fun


def balanced_layout(rng, a: int, m: int, sigma_s: float = 2.0, sigma: float = 1.0):
    groups = np.repeat(np.arange(a), m)
    y = 3.0 + rng.normal(scale=sigma_s, size=a)[groups] + rng.normal(scale=sigma, size=a * m)
    return groups, y


def anova_components(groups, y):
    """One-way ANOVA (method of moments) estimates of (sigma_s^2, sigma^2)."""
    a = groups.max() + 1
    m = len(y) // a
    means = np.array([y[groups == i].mean() for i in range(a)])
    msb = m * np.sum((means - y.mean()) ** 2) / (a - 1)
    msw = np.sum((y - means[groups]) ** 2) / (a * (m - 1))
    return (msb - msw) / m, msw


mpmath.mp.dps = 40


def normal_cdf_quad(x: float) -> float:
    pdf = lambda t: mpmath.exp(-t * t / 2) / mpmath.sqrt(2 * mpmath.pi)  # noqa: E731
    if x < 0:
        return float(mpmath.quad(pdf, [-mpmath.inf, x]))
    return float(1 - mpmath.quad(pdf, [x, mpmath.inf]))


def t_cdf_quad(x: float, df: float) -> float:
    nu = mpmath.mpf(df)
    c = mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / 2))
    pdf = lambda t: c * (1 + t * t / nu) ** (-(nu + 1) / 2)  # noqa: E731
    if x < 0:
        return float(mpmath.quad(pdf, [-mpmath.inf, x]))
    return float(1 - mpmath.quad(pdf, [x, mpmath.inf]))


def random_chicken(rng):
    T, R, S, P = sorted(rng.uniform(-10, 10, size=4), reverse=True)
    return T, R, S, P
