"""Implied covariance, ML discrepancy and its analytic derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .model import ModelSpec


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ModelMatrices:
    """Dense matrices of a parameter vector.

    ``loadings`` is p x L over all latents in declaration order;
    ``gamma[outcome, predictor]`` holds structural paths; ``omega`` is the
    covariance of exogenous latents and endogenous disturbances
    (``phi`` block plus diagonal ``psi``); ``theta`` the residual
    variances of the observed variables.
    """

    loadings: np.ndarray
    gamma: np.ndarray
    omega: np.ndarray
    theta: np.ndarray

    @property
    def transfer(self) -> np.ndarray:
        # latents = gamma @ latents + disturbances and gamma is nilpotent of
        # order 2, so (I - gamma)^-1 = I + gamma
        return np.eye(self.gamma.shape[0]) + self.gamma

    def latent_covariance(self) -> np.ndarray:
        t = self.transfer
        a = t @ self.omega @ t.T
        return 0.5 * (a + a.T)

    def latent_observed_covariance(self) -> np.ndarray:
        """Cov(latents, observed), L x p."""
        return self.latent_covariance() @ self.loadings.T


@dataclass(frozen=True)
class ParameterVector:
    """Free parameters of ``spec`` in its packing order, natural scale."""

    spec: ModelSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.spec.n_free:
            raise ValueError(f"expected {self.spec.n_free} parameters, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.spec.param_names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.spec.param_names, map(float, self.values)))

    @classmethod
    def from_dict(cls, spec: ModelSpec, values: dict[str, float]) -> ParameterVector:
        missing = [n for n in spec.param_names if n not in values]
        if missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        return cls(spec, np.array([values[n] for n in spec.param_names]))

    def matrices(self) -> ModelMatrices:
        return unpack(self.spec, self.values)


def unpack(spec: ModelSpec, values: np.ndarray) -> ModelMatrices:
    p, L = spec.n_observed, len(spec.latents)
    lat = {l: i for i, l in enumerate(spec.latents)}
    obs = {o: i for i, o in enumerate(spec.observed)}
    lam = np.zeros((p, L))
    for b in spec.blocks:
        lam[obs[b.reference], lat[b.latent]] = 1.0
    gamma = np.zeros((L, L))
    omega = np.zeros((L, L))
    theta = np.zeros(p)
    for v, prm in zip(values, spec.params):
        if prm.kind == "loading":
            lam[prm.row, prm.col] = v
        elif prm.kind == "path":
            gamma[prm.row, prm.col] = v
        elif prm.kind in ("phi", "psi"):
            omega[prm.row, prm.col] = v
            omega[prm.col, prm.row] = v
        else:
            theta[prm.row] = v
    return ModelMatrices(lam, gamma, omega, theta)


def implied_covariance(spec: ModelSpec, theta: ParameterVector | np.ndarray) -> np.ndarray:
    """Model-implied covariance of the observed variables, exactly symmetric."""
    values = theta.values if isinstance(theta, ParameterVector) else np.asarray(theta, float)
    m = unpack(spec, values)
    b = m.loadings @ m.transfer
    sigma = b @ m.omega @ b.T
    sigma[np.diag_indices_from(sigma)] += m.theta
    return 0.5 * (sigma + sigma.T)


def ml_discrepancy(s: np.ndarray, sigma: np.ndarray) -> float:
    """ln|Sigma| + tr(S Sigma^-1) - ln|S| - p.

    Raises :class:`NotPositiveDefinite` if either matrix is not positive
    definite.
    """
    s = np.asarray(s, float)
    p = s.shape[0]
    try:
        cs = linalg.cho_factor(sigma, lower=True, check_finite=True)
        css = linalg.cho_factor(s, lower=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    logdet_sigma = 2.0 * np.sum(np.log(np.diag(cs[0])))
    logdet_s = 2.0 * np.sum(np.log(np.diag(css[0])))
    tr = np.trace(linalg.cho_solve(cs, s))
    return float(logdet_sigma + tr - logdet_s - p)


class Discrepancy:
    """F_ML(theta) and its gradient for a fixed spec and sample covariance.

    Works on natural-scale parameter vectors; raising
    :class:`NotPositiveDefinite` when Sigma(theta) is not positive definite.
    """

    def __init__(self, spec: ModelSpec, s: np.ndarray):
        self.spec = spec
        self.s = np.asarray(s, float)
        if self.s.shape != (spec.n_observed, spec.n_observed):
            raise ValueError("sample covariance does not match the number of observed variables")
        c = linalg.cho_factor(self.s, lower=True)
        self.logdet_s = 2.0 * np.sum(np.log(np.diag(c[0])))
        self.p = spec.n_observed
        self._params = spec.params
        self._kind = np.array([p.kind for p in self._params])
        self._rows = np.array([p.row for p in self._params], dtype=int)
        self._cols = np.array([p.col for p in self._params], dtype=int)

    def _factor(self, sigma):
        try:
            return linalg.cho_factor(sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from exc

    def value(self, values: np.ndarray) -> float:
        sigma = implied_covariance(self.spec, values)
        c = self._factor(sigma)
        logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
        return float(logdet + np.trace(linalg.cho_solve(c, self.s)) - self.logdet_s - self.p)

    def value_and_gradient(self, values: np.ndarray) -> tuple[float, np.ndarray]:
        values = np.asarray(values, float)
        m = unpack(self.spec, values)
        t = m.transfer
        b = m.loadings @ t
        sigma = b @ m.omega @ b.T
        sigma[np.diag_indices_from(sigma)] += m.theta
        sigma = 0.5 * (sigma + sigma.T)
        c = self._factor(sigma)
        inv = linalg.cho_solve(c, np.eye(self.p))
        inv = 0.5 * (inv + inv.T)
        sinv_s = inv @ self.s
        f = float(2.0 * np.sum(np.log(np.diag(c[0]))) + np.trace(sinv_s) - self.logdet_s - self.p)
        # dF = tr(G dSigma) with G = Sigma^-1 (Sigma - S) Sigma^-1
        g_mat = inv - sinv_s @ inv
        g_mat = 0.5 * (g_mat + g_mat.T)
        gb = g_mat @ b
        a = t @ m.omega @ t.T
        d_lam = 2.0 * g_mat @ m.loadings @ a
        m_lat = m.loadings.T @ gb  # Lambda' G Lambda T
        d_t = 2.0 * m_lat @ m.omega
        d_omega = b.T @ gb
        grad = np.empty(len(values))
        k, r, cc = self._kind, self._rows, self._cols
        sel = k == "loading"
        grad[sel] = d_lam[r[sel], cc[sel]]
        sel = k == "path"
        grad[sel] = d_t[r[sel], cc[sel]]
        sel = (k == "phi") | (k == "psi")
        off = r != cc
        grad[sel] = d_omega[r[sel], cc[sel]] * np.where(off[sel], 2.0, 1.0)
        sel = k == "theta"
        grad[sel] = np.diag(g_mat)[r[sel]]
        return f, grad

    def gradient(self, values: np.ndarray) -> np.ndarray:
        return self.value_and_gradient(values)[1]

    def sigma_derivatives(self, values: np.ndarray) -> np.ndarray:
        """d Sigma / d theta_k for every free parameter, shape (q, p, p)."""
        m = unpack(self.spec, np.asarray(values, float))
        t = m.transfer
        lam, om = m.loadings, m.omega
        a = t @ om @ t.T
        b = lam @ t
        L = a.shape[0]
        out = np.zeros((len(self._params), self.p, self.p))
        for i, prm in enumerate(self._params):
            if prm.kind == "loading":
                e = np.zeros((self.p, L))
                e[prm.row, prm.col] = 1.0
                d = e @ a @ lam.T
                out[i] = d + d.T
            elif prm.kind == "path":
                e = np.zeros((L, L))
                e[prm.row, prm.col] = 1.0
                d = lam @ e @ om @ b.T
                out[i] = d + d.T
            elif prm.kind in ("phi", "psi"):
                e = np.zeros((L, L))
                e[prm.row, prm.col] = 1.0
                e[prm.col, prm.row] = 1.0
                out[i] = b @ e @ b.T
            else:
                out[i, prm.row, prm.row] = 1.0
        return out

    def expected_information(self, values: np.ndarray) -> np.ndarray:
        """tr(Sigma^-1 dSigma_k Sigma^-1 dSigma_l): the expected Hessian of F_ML."""
        sigma = implied_covariance(self.spec, values)
        c = self._factor(sigma)
        inv = linalg.cho_solve(c, np.eye(self.p))
        d = self.sigma_derivatives(values)
        w = np.einsum("ij,kjl->kil", inv, d)  # Sigma^-1 dSigma_k
        return np.einsum("kij,lji->kl", w, w)
