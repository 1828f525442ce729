"""Maximum-likelihood estimation of covariance-structure models."""

from __future__ import annotations

import logging
import warnings
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .covariance import Discrepancy, NotPositiveDefinite, ParameterVector, implied_covariance, ml_discrepancy
from .model import ModelSpec

logger = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


class NotPositiveDefiniteSample(EstimationError):
    pass


class UnidentifiedModel(EstimationError):
    pass


class BoundaryWarning(UserWarning):
    """A variance estimate sits at its lower bound (Heywood case)."""


@dataclass(frozen=True)
class SampleMoments:
    """Sample covariance (divisor N - 1), means and case count."""

    names: tuple[str, ...]
    cov: np.ndarray
    n: int
    means: np.ndarray | None = None
    cases: tuple = ()

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float)
        p = len(self.names)
        if cov.shape != (p, p):
            raise ValueError(f"covariance shape {cov.shape} does not match {p} names")
        if not np.array_equal(cov, cov.T):
            cov = 0.5 * (cov + cov.T)
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)
        if self.n <= p:
            raise EstimationError(f"need more cases than observed variables (N={self.n}, p={p})")
        try:
            linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteSample("sample covariance matrix is not positive definite") from exc

    @classmethod
    def from_data(cls, data: np.ndarray, names: Sequence[str], cases: Sequence = ()) -> SampleMoments:
        """Moments from an N x p array after listwise deletion of NaN rows."""
        data = np.asarray(data, dtype=float)
        keep = np.all(np.isfinite(data), axis=1)
        kept_cases = tuple(c for c, k in zip(cases, keep) if k) if len(cases) else ()
        x = data[keep]
        if x.shape[0] < 2:
            raise EstimationError("fewer than two complete cases")
        means = x.mean(axis=0)
        cov = np.cov(x, rowvar=False, ddof=1).reshape(len(names), len(names))
        return cls(tuple(names), cov, int(x.shape[0]), means, kept_cases)

    def subset(self, names: Sequence[str]) -> SampleMoments:
        idx = [self.names.index(n) for n in names]
        means = None if self.means is None else self.means[idx]
        return SampleMoments(tuple(names), self.cov[np.ix_(idx, idx)], self.n, means, self.cases)

    def correlation(self) -> SampleMoments:
        sd = np.sqrt(np.diag(self.cov))
        return SampleMoments(self.names, self.cov / np.outer(sd, sd), self.n, self.means, self.cases)


@dataclass(frozen=True)
class FitOptions:
    gtol: float = 1e-6
    max_iter: int = 500
    variance_floor: float = 1e-8
    threads: int = 1
    compute_se: bool = True
    max_halvings: int = 60


@dataclass
class FitResult:
    spec: ModelSpec
    estimates: ParameterVector
    moments: SampleMoments
    fmin: float
    iterations: int
    grad_norm: float
    converged: bool
    message: str
    warnings: list[str] = field(default_factory=list)
    se: np.ndarray | None = None
    standardized: dict[str, float] = field(default_factory=dict)
    statistics: dict[str, float] = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        return self.spec.param_names

    @property
    def df(self) -> int:
        return self.spec.degrees_of_freedom()

    def estimate(self, name: str) -> float:
        return self.estimates[name]

    def sigma(self) -> np.ndarray:
        return implied_covariance(self.spec, self.estimates)

    @property
    def z(self) -> np.ndarray:
        if self.se is None:
            return np.full(self.spec.n_free, np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.estimates.values / self.se

    @property
    def pvalues(self) -> np.ndarray:
        return two_sided_p(self.z)

    def table(self) -> list[dict]:
        se = self.se if self.se is not None else np.full(self.spec.n_free, np.nan)
        rows = []
        for prm, est, s, z, p in zip(self.spec.params, self.estimates.values, se, self.z, self.pvalues):
            rows.append({
                "name": prm.name, "kind": prm.kind, "lhs": prm.lhs, "op": prm.op, "rhs": prm.rhs,
                "estimate": float(est), "se": float(s), "z": float(z), "p": float(p),
                "standardized": self.standardized.get(prm.name, float("nan")),
            })
        return rows


def two_sided_p(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return 2.0 * stats.norm.sf(np.abs(z))


# -- parameter transforms --------------------------------------------------

def _to_internal(values, var_mask, floor):
    u = np.array(values, dtype=float)
    v = np.maximum(u[var_mask] - floor, 1e-300)
    u[var_mask] = np.log(v)
    return u


def _to_natural(u, var_mask, floor):
    t = np.array(u, dtype=float)
    t[var_mask] = floor + np.exp(u[var_mask])
    return t


def start_values(spec: ModelSpec, s: np.ndarray) -> np.ndarray:
    """Deterministic start: paths 0; Phi = variance of the first indicator
    of each exogenous latent; disturbance variance and residual variances
    half the (reference) indicator variance; each free loading is its
    covariance with the block's reference divided by that start latent
    variance, so reverse-keyed indicators start with the right sign."""
    var = np.diag(s)
    obs = {o: i for i, o in enumerate(spec.observed)}
    exo = set(spec.exogenous)
    latent_var = {}
    for b in spec.blocks:
        if b.latent in exo:
            latent_var[b.latent] = var[obs[b.indicators[0]]]
        else:
            latent_var[b.latent] = 0.5 * var[obs[b.reference]]
    out = []
    for prm in spec.params:
        if prm.kind == "loading":
            ref = obs[spec.block(prm.lhs).reference]
            out.append(s[prm.row, ref] / latent_var[prm.lhs])
        elif prm.kind == "path":
            out.append(0.0)
        elif prm.kind == "phi":
            out.append(latent_var[prm.lhs] if prm.lhs == prm.rhs else 0.0)
        elif prm.kind == "psi":
            out.append(latent_var[prm.lhs])
        else:
            out.append(0.5 * var[prm.row])
    return np.array(out)


def _bfgs(fun, u0, h0_fn, gtol, max_iter, max_halvings, max_step=4.0):
    """Inverse-BFGS with Armijo backtracking; infeasible steps (f = inf) are halved away."""
    u = u0.copy()
    f, g = fun(u)
    if not np.isfinite(f):
        raise EstimationError("start values give a non-positive-definite implied covariance")
    h = h0_fn(u)
    fresh = True
    it = 0
    message = "iteration limit reached"
    converged = False
    while True:
        gnorm = float(np.max(np.abs(g)))
        if gnorm < gtol:
            converged, message = True, "gradient tolerance reached"
            break
        if it >= max_iter:
            break
        it += 1
        d = -h @ g
        slope = float(g @ d)
        if slope >= 0:
            h, fresh = h0_fn(u), True
            d = -h @ g
            slope = float(g @ d)
            if slope >= 0:
                h = np.eye(len(u))
                d, slope = -g, -float(g @ g)
        big = np.max(np.abs(d))
        step = min(1.0, max_step / big) if big > 0 else 1.0
        accepted = False
        for _ in range(max_halvings):
            un = u + step * d
            fn, gn = fun(un)
            if np.isfinite(fn) and fn <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if fresh:
                message = "line search failed"
                break
            h, fresh = h0_fn(u), True
            continue
        s = un - u
        y = gn - g
        sy = float(s @ y)
        u, f, g = un, fn, gn
        fresh = False
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            hy = h @ y
            h = h - rho * (np.outer(s, hy) + np.outer(hy, s)) + (rho * rho * (y @ hy) + rho) * np.outer(s, s)
    return u, f, g, it, converged, message


def fit(spec: ModelSpec, moments: SampleMoments, options: FitOptions | None = None,
        start: np.ndarray | None = None) -> FitResult:
    """Minimize F_ML over the free parameters of ``spec``.

    Variances are optimized as ``floor + exp(u)``; the convergence test is
    on the max-norm of the gradient in those internal coordinates.
    Returns a :class:`FitResult` with standardized estimates, standard
    errors (unless disabled) and fit statistics; a result that did not
    converge is returned with ``converged=False`` and a warning.
    """
    options = options or FitOptions()
    df = spec.degrees_of_freedom()
    if df < 0:
        raise UnidentifiedModel(f"model has negative degrees of freedom ({df})")
    m = moments.subset(spec.observed) if moments.names != spec.observed else moments
    disc = Discrepancy(spec, m.cov)
    mask = spec.variance_mask()
    floor = options.variance_floor
    theta0 = start_values(spec, m.cov) if start is None else np.asarray(start, float)
    u0 = _to_internal(theta0, mask, floor)

    def jac_scale(u):
        sc = np.ones_like(u)
        sc[mask] = np.exp(u[mask])
        return sc

    def fun(u):
        theta = _to_natural(u, mask, floor)
        try:
            f, g = disc.value_and_gradient(theta)
        except NotPositiveDefinite:
            return np.inf, None
        return f, g * jac_scale(u)

    def h0(u):
        theta = _to_natural(u, mask, floor)
        sc = jac_scale(u)
        try:
            info = disc.expected_information(theta) * np.outer(sc, sc)
        except NotPositiveDefinite:
            return np.eye(len(u))
        ridge = 1e-10 * max(np.trace(info) / len(u), 1e-12)
        try:
            return linalg.inv(info + ridge * np.eye(len(u)))
        except linalg.LinAlgError:
            return np.eye(len(u))

    u, f, g, it, converged, message = _bfgs(
        fun, u0, h0, options.gtol, options.max_iter, options.max_halvings
    )
    theta = _to_natural(u, mask, floor)
    result = FitResult(
        spec=spec, estimates=ParameterVector(spec, theta), moments=m, fmin=max(float(f), 0.0),
        iterations=it, grad_norm=float(np.max(np.abs(g))), converged=converged, message=message,
    )
    if not converged:
        msg = f"optimizer did not converge: {message} (max|grad| = {result.grad_norm:.3g})"
        result.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    var = np.diag(m.cov)
    for prm, val in zip(spec.params, theta):
        if prm.is_variance:
            scale = var[prm.row] if prm.kind == "theta" else var[
                spec.observed.index(spec.block(prm.lhs).reference)]
            if val <= max(10 * floor, 1e-6 * scale):
                msg = f"boundary estimate: {prm.name} = {val:.3g}"
                result.warnings.append(msg)
                warnings.warn(msg, BoundaryWarning, stacklevel=2)
    try:
        result.standardized = standardize(result.estimates)
    except EstimationError as exc:
        result.warnings.append(str(exc))
    if options.compute_se:
        result.se = standard_errors(result, threads=options.threads)
    result.statistics = fit_statistics(result)
    return result


def standardize(estimates: ParameterVector) -> dict[str, float]:
    """Standardized loadings, paths and (co)variances from model-implied variances.

    A loading becomes ``lambda * sd(latent) / sd(observed)``, a path
    ``beta * sd(predictor) / sd(outcome)``. Residual variances are given as
    proportions of the implied variance of what they belong to.
    """
    spec = estimates.spec
    mats = estimates.matrices()
    a = mats.latent_covariance()
    sigma = implied_covariance(spec, estimates)
    lat_var = np.diag(a)
    obs_var = np.diag(sigma)
    if np.any(lat_var <= 0) or np.any(obs_var <= 0):
        raise EstimationError("zero or negative implied variance; standardized solution undefined")
    lat_sd, obs_sd = np.sqrt(lat_var), np.sqrt(obs_var)
    out = {}
    for prm, val in zip(spec.params, estimates.values):
        if prm.kind == "loading":
            out[prm.name] = val * lat_sd[prm.col] / obs_sd[prm.row]
        elif prm.kind == "path":
            out[prm.name] = val * lat_sd[prm.col] / lat_sd[prm.row]
        elif prm.kind in ("phi", "psi"):
            out[prm.name] = val / (lat_sd[prm.row] * lat_sd[prm.col])
        else:
            out[prm.name] = val / obs_var[prm.row]
    # reference loadings are fixed at 1 but their standardized value is free
    lat = {l: i for i, l in enumerate(spec.latents)}
    obs = {o: i for i, o in enumerate(spec.observed)}
    for b in spec.blocks:
        out[f"{b.latent}=~{b.reference}"] = lat_sd[lat[b.latent]] / obs_sd[obs[b.reference]]
    return {k: float(v) for k, v in out.items()}


def numerical_hessian(grad_fn, x: np.ndarray, steps: np.ndarray, threads: int = 1) -> np.ndarray:
    """Central differences of an analytic gradient, column by column."""
    def column(k):
        e = np.zeros_like(x)
        e[k] = steps[k]
        return (grad_fn(x + e) - grad_fn(x - e)) / (2.0 * steps[k])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cols = list(pool.map(column, range(len(x))))
    else:
        cols = [column(k) for k in range(len(x))]
    h = np.column_stack(cols)
    return 0.5 * (h + h.T)


def standard_errors(result: FitResult, threads: int = 1) -> np.ndarray:
    """sqrt(diag(((N - 1)/2 * H)^-1)) with H the Hessian of F_ML at the estimate.

    Missing (NaN) standard errors are returned, with a warning, when the
    information matrix is singular or not positive definite.
    """
    spec, m = result.spec, result.moments
    disc = Discrepancy(spec, m.cov)
    theta = result.estimates.values.copy()
    steps = 1e-5 * np.maximum(np.abs(theta), 1e-2)
    try:
        h = numerical_hessian(disc.gradient, theta, steps, threads)
        info = 0.5 * (m.n - 1) * h
        c = linalg.cho_factor(info, lower=True)
        cov = linalg.cho_solve(c, np.eye(len(theta)))
        se = np.sqrt(np.diag(cov))
        if not np.all(np.isfinite(se)):
            raise linalg.LinAlgError("non-finite standard errors")
        return se
    except (NotPositiveDefinite, linalg.LinAlgError):
        msg = "information matrix is singular or not positive definite; standard errors missing"
        result.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return np.full(len(theta), np.nan)


def baseline_discrepancy(moments: SampleMoments) -> float:
    """F_ML of the independence model, whose ML solution is diag(S)."""
    return ml_discrepancy(moments.cov, np.diag(np.diag(moments.cov)))


def rmsea(chi2: float, df: int, n: int) -> float:
    if df <= 0:
        return float("nan")
    return float(np.sqrt(max(chi2 - df, 0.0) / (df * (n - 1))))


def cfi(chi2: float, df: int, chi2_base: float, df_base: int) -> float:
    num = max(chi2 - df, 0.0)
    den = max(chi2_base - df_base, chi2 - df, 0.0)
    return 1.0 if den == 0 else float(1.0 - num / den)


def fit_statistics(result: FitResult) -> dict[str, float]:
    m = result.moments
    p = len(m.names)
    df = result.df
    chi2 = (m.n - 1) * result.fmin
    chi2_b = (m.n - 1) * baseline_discrepancy(m)
    df_b = p * (p - 1) // 2
    return {
        "fmin": result.fmin,
        "chi2": chi2,
        "df": df,
        "pvalue": float(stats.chi2.sf(chi2, df)) if df > 0 else float("nan"),
        "rmsea": rmsea(chi2, df, m.n),
        "cfi": cfi(chi2, df, chi2_b, df_b),
        "baseline_chi2": chi2_b,
        "baseline_df": df_b,
        "n": m.n,
        "n_free": result.spec.n_free,
    }


def standardized_truth(spec: ModelSpec, values: np.ndarray) -> dict[str, float]:
    """Standardized solution of a known parameter vector."""
    return standardize(ParameterVector(spec, values))


__all__ = [
    "BoundaryWarning", "EstimationError", "FitOptions", "FitResult", "NotPositiveDefiniteSample",
    "SampleMoments", "UnidentifiedModel", "baseline_discrepancy", "cfi", "fit", "fit_statistics",
    "numerical_hessian", "rmsea", "standard_errors", "standardize", "standardized_truth",
    "start_values", "two_sided_p",
]
