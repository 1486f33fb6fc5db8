"""Marginal distributions for the selection and outcome equations.

The latent selection variable is unit-variance normal, so its only
quantity of interest is ``P(Y1* <= 0) = Phi(-eta1)``.  The outcome margin
is parameterized by a linear predictor ``eta`` (identity link for the
Gaussian, log link for the gamma) and one auxiliary parameter ``aux`` on
an unconstrained scale (``log sigma`` for the Gaussian, ``log shape`` for
the gamma).

Every quantity the likelihood needs is available from :meth:`Margin.evaluate`,
which returns first and second derivatives of the log density and of the
cdf with respect to ``eta`` and ``aux``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "MarginSpec",
    "MarginEval",
    "Margin",
    "GaussianMargin",
    "GammaMargin",
    "make_margin",
    "margin_logpdf",
    "margin_cdf",
    "margin_cdf_deta",
    "margin_cdf_d2eta",
    "margin_sample",
    "selection_prob_zero",
    "CDF_CLAMP",
]

LOG_2PI = np.log(2.0 * np.pi)
CDF_CLAMP = 1e-14


class DomainError(ValueError):
    """Raised when an argument lies outside the support of a distribution."""


@dataclass(frozen=True)
class MarginSpec:
    family: str = "gaussian"
    aux: float = 0.0
    fix_aux: bool = False

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in ("gaussian", "gamma"):
            raise ValueError(f"unknown margin family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if not np.isfinite(self.aux):
            raise ValueError("aux must be finite")

    @property
    def link(self) -> str:
        return "identity" if self.family == "gaussian" else "log"


@dataclass
class MarginEval:
    """Per-observation evaluation of an outcome margin.

    Names follow ``d<order><variable>``; ``a`` is the unconstrained
    auxiliary parameter.
    """

    logpdf: np.ndarray
    cdf: np.ndarray
    dlogpdf_deta: np.ndarray
    d2logpdf_deta2: np.ndarray
    dlogpdf_da: np.ndarray
    d2logpdf_deta_da: np.ndarray
    d2logpdf_da2: np.ndarray
    dcdf_deta: np.ndarray
    d2cdf_deta2: np.ndarray
    dcdf_da: np.ndarray
    d2cdf_deta_da: np.ndarray
    d2cdf_da2: np.ndarray
    sf: np.ndarray | None = None


def selection_prob_zero(eta1):
    """``F1(0) = P(Y1* <= 0) = Phi(-eta1)`` for the unit-variance probit margin."""
    return special.ndtr(-np.asarray(eta1, dtype=float))


class Margin:
    family: str = ""

    def __init__(self, aux: float = 0.0, fix_aux: bool = False):
        self.aux = float(aux)
        self.fix_aux = bool(fix_aux)

    @property
    def spec(self) -> MarginSpec:
        return MarginSpec(self.family, self.aux, self.fix_aux)

    def with_aux(self, aux: float) -> "Margin":
        return type(self)(aux, self.fix_aux)

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError("outcome values must be finite")
        return y

    # Subclasses implement the following on numpy arrays.
    def logpdf(self, y, eta):
        raise NotImplementedError

    def cdf(self, y, eta):
        raise NotImplementedError

    def sf(self, y, eta):
        """``1 - cdf``, accurate in the upper tail."""
        return 1.0 - self.cdf(y, eta)

    def evaluate(self, y, eta) -> MarginEval:
        raise NotImplementedError

    def ppf(self, u, eta):
        raise NotImplementedError

    def mean(self, eta):
        raise NotImplementedError

    def variance(self, eta):
        raise NotImplementedError

    def score_scale(self, eta):
        """Factor ``s`` with ``d log f / d eta = s * (y - mean)``."""
        raise NotImplementedError

    def unit_deviance(self, y, eta):
        raise NotImplementedError

    def link_fn(self, mu):
        raise NotImplementedError

    def moment_aux(self, y, mu) -> float:
        """Method-of-moments estimate of ``aux`` from outcomes and fitted means."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(aux={self.aux:.6g}, fix_aux={self.fix_aux})"


class GaussianMargin(Margin):
    """Normal outcome with identity link; ``aux = log(sigma)``."""

    family = "gaussian"

    @property
    def sigma(self) -> float:
        return float(np.exp(self.aux))

    def logpdf(self, y, eta):
        y = self.check_support(y)
        z = (y - eta) / self.sigma
        return -0.5 * LOG_2PI - self.aux - 0.5 * z * z

    def cdf(self, y, eta):
        y = np.asarray(y, dtype=float)
        return special.ndtr((y - eta) / self.sigma)

    def sf(self, y, eta):
        y = np.asarray(y, dtype=float)
        return special.ndtr((eta - y) / self.sigma)

    def evaluate(self, y, eta) -> MarginEval:
        y = self.check_support(y)
        eta = np.asarray(eta, dtype=float)
        s = self.sigma
        z = (y - eta) / s
        pdf = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
        ones = np.ones_like(z)
        return MarginEval(
            logpdf=-0.5 * LOG_2PI - self.aux - 0.5 * z * z,
            cdf=special.ndtr(z),
            dlogpdf_deta=z / s,
            d2logpdf_deta2=-ones / s**2,
            dlogpdf_da=z * z - 1.0,
            d2logpdf_deta_da=-2.0 * z / s,
            d2logpdf_da2=-2.0 * z * z,
            dcdf_deta=-pdf / s,
            d2cdf_deta2=-z * pdf / s**2,
            dcdf_da=-z * pdf,
            d2cdf_deta_da=pdf * (1.0 - z * z) / s,
            d2cdf_da2=z * pdf * (1.0 - z * z),
            sf=special.ndtr(-z),
        )

    def ppf(self, u, eta):
        return np.asarray(eta, dtype=float) + self.sigma * special.ndtri(u)

    def mean(self, eta):
        return np.asarray(eta, dtype=float)

    def variance(self, eta):
        return np.full_like(np.asarray(eta, dtype=float), self.sigma**2)

    def score_scale(self, eta):
        return np.full_like(np.asarray(eta, dtype=float), 1.0 / self.sigma**2)

    def unit_deviance(self, y, eta):
        return (np.asarray(y, dtype=float) - eta) ** 2

    def link_fn(self, mu):
        return np.asarray(mu, dtype=float)

    def moment_aux(self, y, mu) -> float:
        resid = np.asarray(y, dtype=float) - mu
        sd = float(np.sqrt(np.mean(resid**2)))
        return float(np.log(max(sd, 1e-8)))


_LAGUERRE = np.polynomial.laguerre.laggauss(60)


def _gamma_shape_derivs(k, x):
    """Derivatives of the regularized lower incomplete gamma P(k, x) in k.

    Below the upper tail the series P(k, x) = sum_n x^(k+n) e^-x / Gamma(k+n+1)
    is differentiated term by term.  In the upper tail that sum cancels, so
    ``-dQ/dk`` is used instead, with ``Q = 1 - P`` written as an integral over
    ``t = x + s`` and evaluated by Gauss-Laguerre quadrature in ``s``.
    """
    x = np.asarray(x, dtype=float)
    dk = np.zeros_like(x)
    dkk = np.zeros_like(x)
    tail = x > k + 4.0 * np.sqrt(k) + 4.0
    live = (x > 0) & ~tail
    if np.any(live):
        xl = x[live]
        nterms = int(np.ceil(xl.max() + 12.0 * np.sqrt(xl.max()) + 40.0))
        n = np.arange(nterms, dtype=float)
        shape = k + n + 1.0
        logx = np.log(xl)[:, None]
        logt = (k + n)[None, :] * logx - xl[:, None] - special.gammaln(shape)[None, :]
        t = np.exp(logt)
        dev = logx - special.digamma(shape)[None, :]
        dk[live] = np.sum(t * dev, axis=1)
        dkk[live] = np.sum(t * (dev * dev - special.polygamma(1, shape)[None, :]), axis=1)
    if np.any(tail):
        s, w = _LAGUERRE
        xt = x[tail][:, None]
        logt = np.log(xt + s[None, :])
        dens = w[None, :] * np.exp((k - 1.0) * logt - xt - special.gammaln(k))
        dev = logt - special.digamma(k)
        dk[tail] = -np.sum(dens * dev, axis=1)
        dkk[tail] = -np.sum(dens * (dev * dev - special.polygamma(1, k)), axis=1)
    return dk, dkk


class GammaMargin(Margin):
    """Gamma outcome with log link: mean ``exp(eta)``, ``aux = log(shape)``."""

    family = "gamma"

    def __init__(self, aux: float = float(np.log(2.0)), fix_aux: bool = False):
        super().__init__(aux, fix_aux)

    @property
    def shape(self) -> float:
        return float(np.exp(self.aux))

    def check_support(self, y):
        y = super().check_support(y)
        if np.any(y <= 0):
            raise DomainError("gamma outcome must be strictly positive")
        return y

    def logpdf(self, y, eta):
        y = self.check_support(y)
        k = self.shape
        x = k * y * np.exp(-np.asarray(eta, dtype=float))
        return k * np.log(x) - x - np.log(y) - special.gammaln(k)

    def cdf(self, y, eta):
        y = np.asarray(y, dtype=float)
        k = self.shape
        x = k * np.clip(y, 0.0, None) * np.exp(-np.asarray(eta, dtype=float))
        return special.gammainc(k, x)

    def sf(self, y, eta):
        y = np.asarray(y, dtype=float)
        k = self.shape
        x = k * np.clip(y, 0.0, None) * np.exp(-np.asarray(eta, dtype=float))
        return special.gammaincc(k, x)

    def evaluate(self, y, eta) -> MarginEval:
        y = self.check_support(y)
        eta = np.asarray(eta, dtype=float)
        k = self.shape
        x = k * y * np.exp(-eta)
        logx = np.log(x)
        psi = special.digamma(k)
        # x * g(x), g the gamma(k, 1) density
        xg = np.exp(k * logx - x - special.gammaln(k))
        dlog_xg = k * (logx + 1.0 - psi) - x
        pa, paa = _gamma_shape_derivs(k, x)
        return MarginEval(
            logpdf=k * logx - x - np.log(y) - special.gammaln(k),
            cdf=special.gammainc(k, x),
            dlogpdf_deta=x - k,
            d2logpdf_deta2=-x,
            dlogpdf_da=k * (logx + 1.0 - psi) - x,
            d2logpdf_deta_da=x - k,
            d2logpdf_da2=k * (logx + 1.0 - psi) + k * (1.0 - k * special.polygamma(1, k)) - x,
            dcdf_deta=-xg,
            d2cdf_deta2=xg * (k - x),
            dcdf_da=k * pa + xg,
            d2cdf_deta_da=-xg * dlog_xg,
            d2cdf_da2=k * pa + k * k * paa + k * xg * (logx - psi) + xg * dlog_xg,
            sf=special.gammaincc(k, x),
        )

    def ppf(self, u, eta):
        k = self.shape
        return special.gammaincinv(k, u) * np.exp(np.asarray(eta, dtype=float)) / k

    def mean(self, eta):
        return np.exp(np.asarray(eta, dtype=float))

    def variance(self, eta):
        return np.exp(2.0 * np.asarray(eta, dtype=float)) / self.shape

    def score_scale(self, eta):
        return self.shape * np.exp(-np.asarray(eta, dtype=float))

    def unit_deviance(self, y, eta):
        r = np.asarray(y, dtype=float) * np.exp(-np.asarray(eta, dtype=float))
        return 2.0 * (r - 1.0 - np.log(r))

    def link_fn(self, mu):
        return np.log(np.asarray(mu, dtype=float))

    def moment_aux(self, y, mu) -> float:
        r = np.asarray(y, dtype=float) / mu - 1.0
        cv2 = float(np.mean(r**2))
        return float(np.log(1.0 / max(cv2, 1e-6)))


_MARGINS = {"gaussian": GaussianMargin, "gamma": GammaMargin}


def make_margin(spec: MarginSpec | str, aux: float | None = None, fix_aux: bool = False) -> Margin:
    if isinstance(spec, str):
        cls = _MARGINS[spec.lower()]
        return cls(fix_aux=fix_aux) if aux is None else cls(aux, fix_aux)
    return _MARGINS[spec.family](spec.aux, spec.fix_aux)


def _as_margin(m) -> Margin:
    return m if isinstance(m, Margin) else make_margin(m)


def margin_logpdf(m, y, eta):
    """Log density of the outcome at ``y`` under linear predictor ``eta``."""
    return _as_margin(m).logpdf(y, eta)


def margin_cdf(m, y, eta):
    return _as_margin(m).cdf(y, eta)


def margin_cdf_deta(m, y, eta):
    m = _as_margin(m)
    y = np.asarray(y, dtype=float)
    if m.family == "gamma" and np.any(y <= 0):
        out = np.zeros(np.broadcast(y, eta).shape)
        pos = np.broadcast_to(y, out.shape) > 0
        out[pos] = m.evaluate(np.broadcast_to(y, out.shape)[pos], np.broadcast_to(eta, out.shape)[pos]).dcdf_deta
        return out if out.ndim else float(out)
    return m.evaluate(y, eta).dcdf_deta


def margin_cdf_d2eta(m, y, eta):
    m = _as_margin(m)
    y = np.asarray(y, dtype=float)
    if m.family == "gamma" and np.any(y <= 0):
        out = np.zeros(np.broadcast(y, eta).shape)
        pos = np.broadcast_to(y, out.shape) > 0
        out[pos] = m.evaluate(np.broadcast_to(y, out.shape)[pos], np.broadcast_to(eta, out.shape)[pos]).d2cdf_deta2
        return out if out.ndim else float(out)
    return m.evaluate(y, eta).d2cdf_deta2


def margin_sample(m, eta, u):
    """Quantile transform: the outcome value whose cdf equals ``u``."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise DomainError("u must lie strictly inside (0, 1)")
    return _as_margin(m).ppf(u, eta)

