"""Random-intercept linear mixed model.

    y = X beta + Z s + e,   s ~ N(0, sigma_s^2 I),   e ~ N(0, sigma^2 I)

with one intercept per subject.  The variance ratio ``theta = sigma_s^2 / sigma^2``
is profiled: beta and sigma^2 have closed forms given theta, and the profiled
(restricted) deviance is minimized over ``log(theta)``.  Because V = I + theta Z Z'
is block diagonal with rank-one blocks, every quantity reduces to per-subject
sums and nothing of size n x n is ever formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Hashable, Sequence

import numpy as np

from .distributions import normal_sf

Z_975 = NormalDist().inv_cdf(0.975)
LOG_THETA_BOUNDS = (-20.0, 20.0)


class LmmError(ValueError):
    """Invalid model input (degenerate design, too few rows or subjects)."""


class LmmConvergenceError(ArithmeticError):
    """The variance-ratio search did not converge."""


@dataclass(frozen=True)
class LmmDataset:
    subjects: tuple[Hashable, ...]
    response: np.ndarray
    covariates: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        y = np.asarray(self.response, dtype=float)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if not (len(self.subjects) == y.shape[0] == X.shape[0]):
            raise LmmError("subjects, response and covariates differ in length")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise LmmError("missing or non-finite values in data")
        if len(set(self.subjects)) < 2:
            raise LmmError("at least two subjects are required")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{i + 1}" for i in range(X.shape[1])))
        if len(self.names) != X.shape[1]:
            raise LmmError("one name per covariate is required")

    @property
    def n(self) -> int:
        return self.response.shape[0]

    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n), self.covariates])

    def group_index(self) -> np.ndarray:
        codes: dict[Hashable, int] = {}
        return np.array([codes.setdefault(s, len(codes)) for s in self.subjects])


@dataclass(frozen=True)
class LmmFit:
    names: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    ci: np.ndarray
    p: np.ndarray
    sigma2_residual: float
    sigma2_subject: float
    theta: float
    loglik: float
    n: int
    n_subjects: int
    method: str
    diagnostics: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        coefs = {}
        for i, name in enumerate(self.names):
            coefs[name] = {
                "estimate": float(self.beta[i]),
                "se": float(self.se[i]),
                "ci95": [float(self.ci[i, 0]), float(self.ci[i, 1])],
                "p": float(self.p[i]),
            }
        return {
            "coefficients": coefs,
            "variance_components": {
                "residual": self.sigma2_residual,
                "subject": self.sigma2_subject,
                "ratio": self.theta,
            },
            "loglik": self.loglik,
            "n": self.n,
            "n_subjects": self.n_subjects,
            "method": self.method,
            "convergence": dict(self.diagnostics),
        }


class _Profile:
    """Profiled deviance of a random-intercept model as a function of theta."""

    def __init__(self, X: np.ndarray, y: np.ndarray, groups: np.ndarray, method: str):
        self.X, self.y = X, y
        self.n, self.p = X.shape
        self.method = method
        self.n_groups = int(groups.max()) + 1
        self.groups = groups
        self.sizes = np.bincount(groups, minlength=self.n_groups).astype(float)
        self.Sx = np.zeros((self.n_groups, self.p))
        np.add.at(self.Sx, groups, X)
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.sy = np.bincount(groups, weights=y, minlength=self.n_groups)
        self.dof = self.n - self.p if method == "reml" else self.n

    def solve(self, theta: float) -> dict:
        w = theta / (1.0 + self.sizes * theta)
        A = self.XtX - self.Sx.T @ (w[:, None] * self.Sx)
        b = self.Xty - self.Sx.T @ (w * self.sy)
        L = np.linalg.cholesky(A)
        beta = np.linalg.solve(L.T, np.linalg.solve(L, b))
        r = self.y - self.X @ beta
        sr = np.bincount(self.groups, weights=r, minlength=self.n_groups)
        q = r @ r - np.sum(w * sr * sr)
        logdet_v = float(np.sum(np.log1p(self.sizes * theta)))
        dev = self.dof * math.log(2 * math.pi * q / self.dof) + logdet_v + self.dof
        if self.method == "reml":
            dev += 2.0 * float(np.sum(np.log(np.diag(L))))
        return {"A": A, "L": L, "beta": beta, "q": q, "sr": sr, "deviance": dev}

    def deviance(self, theta: float) -> float:
        return self.solve(theta)["deviance"]

    def gradient(self, theta: float) -> float:
        """d deviance / d theta."""
        s = self.solve(theta)
        inv1 = 1.0 / (1.0 + self.sizes * theta)
        if self.method == "reml":
            Ainv_Sx = np.linalg.solve(s["A"], self.Sx.T)
            quad = np.einsum("gp,pg->g", self.Sx, Ainv_Sx)
            trace = float(np.sum(self.sizes * inv1 - quad * inv1 * inv1))
        else:
            trace = float(np.sum(self.sizes * inv1))
        ypgpy = float(np.sum((s["sr"] * inv1) ** 2))
        return trace - self.dof * ypgpy / s["q"]


def brent_minimize(f, a: float, b: float, rtol: float = 1e-10, maxiter: int = 500):
    """Golden-section search with parabolic steps on [a, b].

    Returns ``(x, f(x), iterations, final bracket width, converged)``.
    """
    golden = 0.5 * (3.0 - math.sqrt(5.0))
    x = w = v = a + golden * (b - a)
    fx = fw = fv = f(x)
    d = e = 0.0
    for it in range(1, maxiter + 1):
        m = 0.5 * (a + b)
        tol = rtol * abs(x) + 1e-12
        tol2 = 2.0 * tol
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            return x, fx, it, b - a, True
        parabolic = False
        if abs(e) > tol:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0:
                p = -p
            q = abs(q)
            e_prev, e = e, d
            if abs(p) < abs(0.5 * q * e_prev) and q * (a - x) < p < q * (b - x):
                d = p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol if x < m else -tol
                parabolic = True
        if not parabolic:
            e = (b - x) if x < m else (a - x)
            d = golden * e
        u = x + d if abs(d) >= tol else x + math.copysign(tol, d)
        fu = f(u)
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x, fx, maxiter, b - a, False


def _polish_root(g, x: float, step: float = 1e-6, maxiter: int = 200) -> float:
    """Refine a stationary point by bisection/secant on the analytic gradient."""
    gx = g(x)
    if gx == 0.0:
        return x
    lo, hi = x, x
    glo = ghi = gx
    h = step
    while glo * ghi > 0:
        if h > 1.0:
            return x
        lo, hi = x - h, x + h
        glo, ghi = g(lo), g(hi)
        h *= 4.0
    for _ in range(maxiter):
        mid = hi - ghi * (hi - lo) / (ghi - glo)
        if not lo < mid < hi:
            mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm == 0.0 or hi - lo < 1e-14 * max(1.0, abs(mid)):
            return mid
        if (gm < 0) == (glo < 0):
            lo, glo = mid, gm
        else:
            hi, ghi = mid, gm
        # Alternate with bisection so the bracket always shrinks geometrically.
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm == 0.0:
            return mid
        if (gm < 0) == (glo < 0):
            lo, glo = mid, gm
        else:
            hi, ghi = mid, gm
    return 0.5 * (lo + hi)


def _estimate_theta(prof: _Profile, rtol: float, maxiter: int) -> tuple[float, dict]:
    if np.all(prof.sizes == 1):
        # A single row per subject: the intercept variance is not identifiable.
        return 0.0, {"converged": True, "iterations": 0, "note": "singleton subjects; ratio fixed at 0"}

    lo_u, hi_u = LOG_THETA_BOUNDS
    grid = np.arange(lo_u, hi_u + 0.5, 1.0)
    devs = np.array([prof.deviance(math.exp(u)) for u in grid])
    dev0 = prof.deviance(0.0)
    k = int(np.argmin(devs))

    if k == 0 and dev0 <= devs[0] and prof.gradient(0.0) >= 0:
        return 0.0, {"converged": True, "iterations": 0, "boundary": True, "gradient": prof.gradient(0.0)}

    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]

    def f(u: float) -> float:
        return prof.deviance(math.exp(u))

    u, fu, iters, width, ok = brent_minimize(f, a, b, rtol=rtol, maxiter=maxiter)
    if not ok:
        raise LmmConvergenceError(f"variance-ratio search did not converge in {maxiter} iterations")
    if u >= hi_u - 1.0 + 1e-6 and k == len(grid) - 1:
        raise LmmConvergenceError("residual variance collapsed to zero (ratio at upper bound)")

    def g(u: float) -> float:
        t = math.exp(u)
        return t * prof.gradient(t)

    # Near the optimum the deviance is flat to rounding, so Brent alone pins u
    # to about sqrt(machine eps); the gradient root is far sharper.  Keep it
    # unless it moved away or is measurably worse.
    u_pol = _polish_root(g, u)
    if abs(u_pol - u) < 1e-3 and f(u_pol) <= fu + 1e-10 * max(1.0, abs(fu)):
        u = u_pol
    theta = math.exp(u)
    if dev0 < prof.deviance(theta):
        return 0.0, {"converged": True, "iterations": iters, "boundary": True, "gradient": prof.gradient(0.0)}
    return theta, {
        "converged": True,
        "iterations": iters,
        "bracket_width": width,
        "boundary": False,
        "gradient": prof.gradient(theta),
    }


def fit_lmm(
    data: LmmDataset,
    method: str = "reml",
    theta: float | None = None,
    rtol: float = 1e-10,
    maxiter: int = 500,
) -> LmmFit:
    """Fit the random-intercept model by REML (default) or ML.

    ``theta`` pins the variance ratio instead of estimating it.  Intervals are
    Wald intervals with normal quantiles and p-values are two-sided Wald tests.
    """
    if method not in ("reml", "ml"):
        raise LmmError(f"method must be 'reml' or 'ml', got {method!r}")
    X = data.design()
    y = data.response
    n, p = X.shape
    if n < p + 1:
        raise LmmError(f"{n} observations cannot support {p} fixed effects")
    if np.linalg.matrix_rank(X) < p:
        raise LmmError("design matrix is rank deficient")
    groups = data.group_index()
    prof = _Profile(X, y, groups, method)

    if theta is None:
        theta, diag = _estimate_theta(prof, rtol, maxiter)
    else:
        if theta < 0:
            raise LmmError("theta must be non-negative")
        diag = {"converged": True, "iterations": 0, "fixed_theta": True}

    s = prof.solve(theta)
    sigma2 = s["q"] / prof.dof
    if not sigma2 > 0:
        raise LmmConvergenceError("residual variance is zero")
    cov = sigma2 * np.linalg.inv(s["A"])
    se = np.sqrt(np.diag(cov))
    beta = s["beta"]
    ci = np.column_stack([beta - Z_975 * se, beta + Z_975 * se])
    pvals = np.array([min(1.0, 2.0 * normal_sf(abs(b / e))) for b, e in zip(beta, se)])
    return LmmFit(
        names=("intercept",) + tuple(data.names),
        beta=beta,
        se=se,
        ci=ci,
        p=pvals,
        sigma2_residual=float(sigma2),
        sigma2_subject=float(theta * sigma2),
        theta=float(theta),
        loglik=-0.5 * s["deviance"],
        n=n,
        n_subjects=prof.n_groups,
        method=method,
        diagnostics=diag,
    )


def profile_deviance(data: LmmDataset, theta: float, method: str = "reml") -> float:
    """Profiled -2 log (restricted) likelihood at a given variance ratio."""
    prof = _Profile(data.design(), data.response, data.group_index(), method)
    return prof.deviance(theta)


def dataset_from_rows(
    subjects: Sequence[Hashable],
    response: Sequence[float],
    covariates: Sequence[Sequence[float]] | Sequence[float],
    names: Sequence[str] = (),
) -> LmmDataset:
    return LmmDataset(tuple(subjects), np.asarray(response, float), np.asarray(covariates, float), tuple(names))
