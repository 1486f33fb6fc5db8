"""Classical Gaussian sample selection estimators.

Both estimators use linear predictors built from named covariates plus an
intercept.  :func:`two_step` is the probit plus augmented least squares
procedure; :func:`gaussian_fiml` maximizes the bivariate normal selection
likelihood directly and is written independently of the copula code.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .model import Dataset
from .optimizer import ConvergenceError, _penalized_probit, trust_region_fit

__all__ = ["inverse_mills", "TwoStepFit", "FIMLFit", "two_step", "gaussian_fiml", "fiml_loglik"]


def inverse_mills(u):
    """``phi(u) / Phi(u)``, stable for large negative ``u``."""
    u = np.asarray(u, dtype=float)
    return np.exp(-0.5 * u * u - 0.5 * np.log(2.0 * np.pi) - special.log_ndtr(u))


def _design(d: Dataset, names) -> np.ndarray:
    return np.column_stack([np.ones(d.n)] + [d.covariates[k] for k in names])


def _check_exclusion(selection, outcome):
    if not set(selection) - set(outcome):
        warnings.warn("no exclusion restriction: every selection covariate also enters the outcome equation",
                      stacklevel=3)


@dataclass
class TwoStepFit:
    beta1: np.ndarray
    xi: np.ndarray
    beta2: np.ndarray
    gamma: float
    sigma: float
    sigma_printed: float
    rho_raw: float
    rho: float
    n_s: int
    selection: tuple
    outcome: tuple


def two_step(d: Dataset, selection, outcome) -> TwoStepFit:
    """Probit first stage, then least squares with the inverse Mills ratio added.

    ``sigma`` is ``(mean(e^2) + gamma^2 mean(xi (xi + x b1)))^{1/2}``.
    ``sigma_printed`` omits the ``gamma^2`` factor; it is reported for
    comparison only.
    """
    selection, outcome = tuple(selection), tuple(outcome)
    _check_exclusion(selection, outcome)
    X1 = _design(d, selection)
    y1 = d.sel.astype(float)
    b1 = _penalized_probit(X1, y1, np.zeros((X1.shape[1],) * 2), ridge=0.0)
    s = d.selected
    idx = X1[s] @ b1
    xi = inverse_mills(idx)
    Z = np.column_stack([_design(d, outcome)[s], xi])
    y = d.out[s]
    Q, R = np.linalg.qr(Z)
    if np.min(np.abs(np.diag(R))) < 1e-10 * np.max(np.abs(np.diag(R))):
        raise np.linalg.LinAlgError("second-stage design is singular")
    coef = np.linalg.solve(R, Q.T @ y)
    beta2, gamma = coef[:-1], float(coef[-1])
    resid = y - Z @ coef
    ns = int(s.sum())
    delta = xi * (xi + idx)
    sigma = float(np.sqrt(np.mean(resid**2) + gamma**2 * np.mean(delta)))
    sigma_printed = float(np.sqrt(np.mean(resid**2) + np.mean(delta)))
    rho_raw = gamma / sigma
    return TwoStepFit(b1, xi, beta2, gamma, sigma, sigma_printed, rho_raw, float(np.clip(rho_raw, -1.0, 1.0)),
                      ns, selection, outcome)


@dataclass
class FIMLFit:
    beta1: np.ndarray
    beta2: np.ndarray
    sigma: float
    rho: float
    loglik: float
    converged: bool
    iterations: int
    params: np.ndarray


def fiml_loglik(params, X1, X2, y1, y2, order: int = 0):
    """Bivariate normal selection log-likelihood and its gradient.

    ``params = (beta1, beta2, log sigma, atanh rho)``.
    """
    p, q = X1.shape[1], X2.shape[1]
    b1, b2 = params[:p], params[p : p + q]
    ls, t = params[p + q], params[p + q + 1]
    sig, rho = np.exp(ls), np.tanh(t)
    sq = np.sqrt(1.0 - rho * rho)
    a = X1 @ b1
    s = y1 == 1
    a0 = a[~s]
    a1 = a[s]
    r = (y2[s] - X2[s] @ b2) / sig
    w = (a1 + rho * r) / sq
    val = special.log_ndtr(-a0).sum() + (special.log_ndtr(w) - 0.5 * r * r - 0.5 * np.log(2 * np.pi) - ls).sum()
    if order == 0:
        return float(val)
    lam0 = inverse_mills(-a0)
    lam1 = inverse_mills(w)
    ga = np.zeros(a.size)
    ga[~s] = -lam0
    ga[s] = lam1 / sq
    dr = lam1 * rho / sq - r
    g = np.concatenate([
        X1.T @ ga,
        X2[s].T @ (-dr / sig),
        [np.sum(-dr * r - 1.0), np.sum(lam1 * (r + rho * a1) / sq)],
    ])
    return float(val), g


def gaussian_fiml(d: Dataset, selection, outcome, start=None, h: float = 1e-5) -> FIMLFit:
    """Full-information maximum likelihood for the bivariate normal model.

    The Hessian used by the trust region is the central difference of the
    analytic gradient.
    """
    selection, outcome = tuple(selection), tuple(outcome)
    X1 = _design(d, selection)
    X2 = _design(d, outcome)
    y1 = d.sel
    y2 = np.where(d.selected, d.out, 0.0)
    if start is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ts = two_step(d, selection, outcome)
        start = np.concatenate([ts.beta1, ts.beta2, [np.log(ts.sigma), np.arctanh(np.clip(ts.rho, -0.9, 0.9))]])

    def obj(x, order):
        if order == 0:
            return fiml_loglik(x, X1, X2, y1, y2)
        v, g = fiml_loglik(x, X1, X2, y1, y2, 1)
        H = np.empty((x.size, x.size))
        for j in range(x.size):
            e = np.zeros(x.size)
            e[j] = h
            H[:, j] = (fiml_loglik(x + e, X1, X2, y1, y2, 1)[1] - fiml_loglik(x - e, X1, X2, y1, y2, 1)[1]) / (2 * h)
        return v, g, 0.5 * (H + H.T)

    res = trust_region_fit(obj, np.asarray(start, dtype=float), label="fiml")
    if not np.isfinite(res.value):
        raise ConvergenceError("FIML likelihood is not finite", res)
    p, q = X1.shape[1], X2.shape[1]
    x = res.x
    return FIMLFit(x[:p], x[p : p + q], float(np.exp(x[p + q])), float(np.tanh(x[p + q + 1])), res.value,
                   res.converged, res.iterations, x)
