"""Bivariate copulas: Normal, Clayton, Joe, Frank, Gumbel, AMH (and independence).

Derivatives of ``C`` are closed-form.  For each family the conditional
distribution ``h(u, v) = dC/dv`` is written down symbolically once,
differentiated with sympy and compiled to numpy code on first use.  To keep
the tails accurate, the Normal copula is differentiated in the normal scores
``Phi^-1(u)``, Clayton and Gumbel in ``-log u`` and Joe in ``log(1 - u)``.
Callers that know ``1 - u`` or ``1 - v`` more precisely than by subtraction
can pass them as ``ubar`` and ``vbar``.

Each family carries a link between its natural parameter ``theta`` and an
unconstrained value ``t`` used by the optimizer:

=========  ===================  ======================
family     theta space          theta(t)
=========  ===================  ======================
clayton    (0, inf)             exp(t)
joe        (1, inf)             1 + exp(t)
gumbel     [1, inf)             1 + exp(t)
frank      R minus {0}          t, punctured at +-1e-6
amh        [-1, 1]              tanh(t)
normal     (-1, 1)              tanh(t)
=========  ===================  ======================
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "FAMILIES",
    "ARCHIMEDEAN",
    "UV_CLAMP",
    "Copula",
    "CopulaDerivs",
    "UnsupportedGeneratorError",
    "copula_cdf",
    "copula_derivs",
    "generator",
    "generator_deriv",
    "generator_inverse",
    "kendall_tau",
    "tau_to_theta",
    "copula_sample",
]

FAMILIES = ("normal", "clayton", "joe", "frank", "gumbel", "amh", "independence")
ARCHIMEDEAN = ("clayton", "joe", "frank", "gumbel", "amh")
UV_CLAMP = 1e-14
FRANK_PUNCTURE = 1e-6
# below this |theta| the Frank closed form cancels catastrophically in its
# theta-derivatives and a Taylor expansion in theta is used instead
FRANK_SERIES_BELOW = 1e-2

# Taylor coefficients of the Frank cdf in theta, as polynomials in (a, b) = (u, v)
_FRANK_SERIES = (
    "a*b",
    "a*b*(a - 1)*(b - 1)/2",
    "a*b*(a - 1)*(2*a - 1)*(b - 1)*(2*b - 1)/12",
    "a*b*(a - 1)*(b - 1)*(6*a**2*b**2 - 6*a**2*b + a**2 - 6*a*b**2 + 6*a*b - a + b**2 - b)/24",
    "a*b*(a - 1)*(2*a - 1)*(b - 1)*(2*b - 1)*(36*a**2*b**2 - 36*a**2*b + 3*a**2 - 36*a*b**2"
    " + 36*a*b - 3*a + 3*b**2 - 3*b - 1)/720",
    "a*b*(a - 1)*(b - 1)*(240*a**4*b**4 - 480*a**4*b**3 + 300*a**4*b**2 - 60*a**4*b + 2*a**4"
    " - 480*a**3*b**4 + 960*a**3*b**3 - 600*a**3*b**2 + 120*a**3*b - 4*a**3 + 300*a**2*b**4"
    " - 600*a**2*b**3 + 365*a**2*b**2 - 65*a**2*b + a**2 - 60*a*b**4 + 120*a*b**3 - 65*a*b**2"
    " + 5*a*b + a + 2*b**4 - 4*b**3 + b**2 + b)/1440",
)


class UnsupportedGeneratorError(TypeError):
    """The copula family has no Archimedean generator."""


@dataclass
class CopulaDerivs:
    """Value and partial derivatives of ``C(u, v; theta)``.

    ``dv`` is ``dC/dv``; further names list the remaining differentiation
    variables, e.g. ``du2dv`` is ``d^3 C / du^2 dv`` and ``dtheta_dvv`` is
    ``d^4 C / dtheta dv^2`` on the natural ``theta`` scale.
    """

    c: np.ndarray
    dv: np.ndarray
    duv: np.ndarray
    dvv: np.ndarray
    du2dv: np.ndarray
    duvv: np.ndarray
    dvvv: np.ndarray
    dtheta_dv: np.ndarray
    dtheta_duv: np.ndarray
    dtheta_dvv: np.ndarray
    dtheta2_dv: np.ndarray
    clamped: int = field(default=0)


# --------------------------------------------------------------------------
# symbolic derivation


def _sym_cdf(family, a, b, th, sp):
    from sympy.codegen.cfunctions import expm1, log1p

    if family == "frank_series":
        loc = {"a": a, "b": b}
        return sum(sp.sympify(c, locals=loc) * th**k for k, c in enumerate(_FRANK_SERIES))
    if family == "clayton":
        return (a ** (-th) + b ** (-th) - 1) ** (-1 / th)
    if family == "joe":
        p, q = (1 - a) ** th, (1 - b) ** th
        return 1 - (p + q - p * q) ** (1 / th)
    if family == "frank":
        return -log1p(expm1(-th * a) * expm1(-th * b) / expm1(-th)) / th
    if family == "gumbel":
        return sp.exp(-(((-sp.log(a)) ** th + (-sp.log(b)) ** th) ** (1 / th)))
    if family == "amh":
        return a * b / (1 - th * (1 - a) * (1 - b))
    raise KeyError(family)


_SCORE_FAMILIES = ("clayton", "gumbel", "joe")


@functools.cache
def _compiled(family):
    import sympy as sp

    a, b, th = sp.symbols("a b theta", real=True)
    if family == "normal":
        s = sp.sqrt(1 - th**2)
        h = sp.erfc(-(a - th * b) / (s * sp.sqrt(2))) / 2
        ja = sp.sqrt(2 * sp.pi) * sp.exp(a**2 / 2)
        jb = sp.sqrt(2 * sp.pi) * sp.exp(b**2 / 2)
    elif family in _SCORE_FAMILIES:
        from sympy.codegen.cfunctions import expm1

        # C in score variables that stay well conditioned where u or v is
        # close to 1; ja = du/da inverted, so du(f) = df/du
        if family == "clayton":
            # a = -log u
            C = (1 + expm1(th * a) + expm1(th * b)) ** (-1 / th)
            ja, jb = -sp.exp(a), -sp.exp(b)
        elif family == "gumbel":
            C = sp.exp(-((a**th + b**th) ** (1 / th)))
            ja, jb = -sp.exp(a), -sp.exp(b)
        else:
            # joe, a = log(1 - u)
            p, q = sp.exp(th * a), sp.exp(th * b)
            C = 1 - (p + q - p * q) ** (1 / th)
            ja, jb = -sp.exp(-a), -sp.exp(-b)
        h = sp.diff(C, b) * jb
    elif family == "frank_pos":
        from sympy.codegen.cfunctions import expm1

        # for theta > 0 the denominator is a sum of two nonnegative terms, which
        # avoids the cancellation in expm1(-theta) + expm1(-theta a) expm1(-theta b)
        num = sp.exp(-th * b) * -expm1(-th * a)
        den = sp.exp(-th * a) * -expm1(-th * b) + sp.exp(-th * b) * -expm1(-th * (1 - b))
        h = num / den
        ja = jb = sp.Integer(1)
    else:
        h = sp.diff(_sym_cdf(family, a, b, th, sp), b)
        ja = jb = sp.Integer(1)

    def du(f):
        return sp.diff(f, a) * ja

    def dv(f):
        return sp.diff(f, b) * jb

    def dt(f):
        return sp.diff(f, th)

    duv = du(h)
    dvv = dv(h)
    exprs = [h, duv, dvv, du(duv), dv(duv), dv(dvv), dt(h), dt(duv), dt(dvv), dt(dt(h))]
    mods = ["scipy", "numpy"]
    full = sp.lambdify((a, b, th), exprs, modules=mods, cse=True)
    hfun = sp.lambdify((a, b, th), h, modules=mods, cse=True)
    dfun = sp.lambdify((a, b, th), duv, modules=mods, cse=True)
    return full, hfun, dfun


# --------------------------------------------------------------------------
# closed-form cdfs


def _bvn_cdf(x, y, rho):
    """Standard bivariate normal cdf via Owen's T function."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    s = np.sqrt(1.0 - rho * rho)
    out = np.empty(x.shape)
    flat_x, flat_y, flat_o = x.ravel(), y.ravel(), out.ravel()
    for i in range(flat_x.size):
        h, k = flat_x[i], flat_y[i]
        if h == 0.0 and k == 0.0:
            flat_o[i] = 0.25 + np.arcsin(rho) / (2.0 * np.pi)
            continue
        if h == 0.0:
            h = 1e-300 if k >= 0 else -1e-300
        if k == 0.0:
            k = 1e-300 if h >= 0 else -1e-300
        beta = 0.0 if h * k > 0 or (h * k == 0 and h + k >= 0) else 0.5
        flat_o[i] = (0.5 * special.ndtr(h) + 0.5 * special.ndtr(k)
                     - special.owens_t(h, (k - rho * h) / (h * s))
                     - special.owens_t(k, (h - rho * k) / (k * s)) - beta)
    return out


def _archimedean_cdf(family, u, v, th):
    if family == "clayton":
        return np.maximum(u ** (-th) + v ** (-th) - 1.0, 0.0) ** (-1.0 / th)
    if family == "joe":
        p, q = (1.0 - u) ** th, (1.0 - v) ** th
        return 1.0 - (p + q - p * q) ** (1.0 / th)
    if family == "frank":
        return -np.log1p(np.expm1(-th * u) * np.expm1(-th * v) / np.expm1(-th)) / th
    if family == "gumbel":
        with np.errstate(divide="ignore"):
            lu, lv = -np.log(u), -np.log(v)
        return np.exp(-((lu**th + lv**th) ** (1.0 / th)))
    if family == "amh":
        return u * v / (1.0 - th * (1.0 - u) * (1.0 - v))
    raise KeyError(family)


# --------------------------------------------------------------------------


class Copula:
    """A bivariate copula family with a fixed association parameter.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES` (case-insensitive).
    theta : float
        Natural parameter (``rho`` for the Normal copula).  Ignored for
        the independence copula.
    """

    def __init__(self, family: str, theta: float = 0.0):
        family = family.lower()
        if family not in FAMILIES:
            raise ValueError(f"unknown copula family {family!r}")
        self.family = family
        self.theta = self._validate(float(theta))

    def _validate(self, th):
        f = self.family
        if f == "independence":
            return 0.0
        ok = {
            "clayton": th > 0,
            "joe": th > 1,
            "gumbel": th >= 1,
            "frank": th != 0 and np.isfinite(th),
            "amh": -1 <= th <= 1,
            "normal": -1 < th < 1,
        }[f]
        if not ok or not np.isfinite(th):
            raise ValueError(f"theta={th} outside the {f} parameter space")
        if f == "frank" and abs(th) < FRANK_PUNCTURE:
            th = FRANK_PUNCTURE if th >= 0 else -FRANK_PUNCTURE
        return th

    def __repr__(self):
        return f"Copula({self.family!r}, theta={self.theta:.6g})"

    @property
    def has_parameter(self) -> bool:
        return self.family != "independence"

    @property
    def is_archimedean(self) -> bool:
        return self.family in ARCHIMEDEAN

    # ---- unconstrained parameterization ----

    @classmethod
    def from_unconstrained(cls, family: str, t: float) -> "Copula":
        family = family.lower()
        t = float(t)
        if family == "clayton":
            th = np.exp(t)
        elif family in ("joe", "gumbel"):
            th = 1.0 + np.exp(t)
            if family == "joe" and th <= 1.0:
                th = np.nextafter(1.0, 2.0)
        elif family == "frank":
            th = t
            if abs(th) < FRANK_PUNCTURE:
                th = FRANK_PUNCTURE if th >= 0 else -FRANK_PUNCTURE
        elif family in ("amh", "normal"):
            th = np.tanh(t)
            if family == "normal":
                th = float(np.clip(th, -1 + 1e-15, 1 - 1e-15))
        else:
            th = 0.0
        return cls(family, th)

    @classmethod
    def from_tau(cls, family: str, tau: float) -> "Copula":
        return cls(family, tau_to_theta(family, tau))

    @property
    def t(self) -> float:
        """Unconstrained parameter."""
        f, th = self.family, self.theta
        if f == "clayton":
            return float(np.log(th))
        if f in ("joe", "gumbel"):
            return float(np.log(th - 1.0)) if th > 1 else -np.inf
        if f == "frank":
            return th
        if f in ("amh", "normal"):
            return float(np.arctanh(th))
        return 0.0

    def dtheta_dt(self):
        """First and second derivatives of ``theta`` with respect to ``t``."""
        f, th = self.family, self.theta
        if f == "clayton":
            return th, th
        if f in ("joe", "gumbel"):
            return th - 1.0, th - 1.0
        if f == "frank":
            return 1.0, 0.0
        if f in ("amh", "normal"):
            d = 1.0 - th * th
            return d, -2.0 * th * d
        return 0.0, 0.0

    # ---- evaluation ----

    def _clamp(self, u, v, ubar=None, vbar=None):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        uc = np.clip(u, UV_CLAMP, 1.0 - UV_CLAMP)
        vc = np.clip(v, UV_CLAMP, 1.0 - UV_CLAMP)
        n = int(np.count_nonzero(uc != u) + np.count_nonzero(vc != v))
        ub = 1.0 - uc if ubar is None else np.clip(np.asarray(ubar, dtype=float), UV_CLAMP, 1.0 - UV_CLAMP)
        vb = 1.0 - vc if vbar is None else np.clip(np.asarray(vbar, dtype=float), UV_CLAMP, 1.0 - UV_CLAMP)
        return uc, vc, ub, vb, n

    def _kernel(self):
        if self.family == "frank":
            if abs(self.theta) < FRANK_SERIES_BELOW:
                return "frank_series"
            if self.theta > 0:
                return "frank_pos"
        return self.family

    def _score(self, u, ubar):
        # each score is computed from whichever of u, 1 - u carries full precision
        low = u < 0.5
        f = self.family
        if f == "normal":
            return np.where(low, special.ndtri(u), -special.ndtri(ubar))
        if f in ("clayton", "gumbel"):
            return np.where(low, -np.log(u), -np.log1p(-ubar))
        if f == "joe":
            return np.where(low, np.log1p(-u), np.log(ubar))
        return u

    def _scores(self, u, v, ubar=None, vbar=None):
        ubar = 1.0 - u if ubar is None else ubar
        vbar = 1.0 - v if vbar is None else vbar
        return self._score(u, ubar), self._score(v, vbar)

    def cdf(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)) or np.any(np.isnan(u) | np.isnan(v)):
            raise ValueError("copula arguments must lie in [0, 1]")
        u, v = np.broadcast_arrays(u, v)
        out = np.minimum(u, v).astype(float)
        inner = (u > 0) & (u < 1) & (v > 0) & (v < 1)
        out = np.where(u >= 1, v, out)
        out = np.where(v >= 1, u, out)
        out = np.where((u <= 0) | (v <= 0), 0.0, out)
        if np.any(inner):
            ui, vi = u[inner], v[inner]
            if self.family == "independence":
                val = ui * vi
            elif self.family == "normal":
                val = _bvn_cdf(special.ndtri(ui), special.ndtri(vi), self.theta)
            else:
                val = _archimedean_cdf(self.family, ui, vi, self.theta)
            out = np.array(out, dtype=float)
            out[inner] = np.clip(val, np.maximum(ui + vi - 1.0, 0.0), np.minimum(ui, vi))
        return out if out.ndim else float(out)

    def h(self, u, v, ubar=None, vbar=None):
        """Conditional cdf ``dC/dv = P(U <= u | V = v)``.

        ``ubar`` and ``vbar`` optionally supply ``1 - u`` and ``1 - v``
        computed without cancellation.
        """
        return np.clip(self._h_raw(u, v, ubar, vbar)[0], 0.0, 1.0)

    def _h_raw(self, u, v, ubar=None, vbar=None):
        # unclipped h and the number of clamped arguments
        u, v, ubar, vbar, nclamp = self._clamp(u, v, ubar, vbar)
        shape = np.broadcast(u, v).shape
        if self.family == "independence":
            return np.broadcast_to(u, shape).astype(float), nclamp
        a, b = self._scores(u, v, ubar, vbar)
        _, hfun, _ = _compiled(self._kernel())
        return np.broadcast_to(np.asarray(hfun(a, b, self.theta), dtype=float), shape).copy(), nclamp

    def density(self, u, v, ubar=None, vbar=None):
        u, v, ubar, vbar, _ = self._clamp(u, v, ubar, vbar)
        if self.family == "independence":
            return np.ones(np.broadcast(u, v).shape)
        a, b = self._scores(u, v, ubar, vbar)
        _, _, dfun = _compiled(self._kernel())
        return dfun(a, b, self.theta) * np.ones(np.broadcast(u, v).shape)

    def derivs(self, u, v, ubar=None, vbar=None) -> CopulaDerivs:
        """Value and derivatives of ``C``; see :meth:`h` for ``ubar``, ``vbar``."""
        u, v, ubar, vbar, nclamp = self._clamp(u, v, ubar, vbar)
        u, v, ubar, vbar = np.broadcast_arrays(u, v, ubar, vbar)
        if self.family == "independence":
            z = np.zeros(u.shape)
            return CopulaDerivs(u * v, u.copy(), np.ones(u.shape), z, z, z, z, z, z, z, z, nclamp)
        a, b = self._scores(u, v, ubar, vbar)
        full, _, _ = _compiled(self._kernel())
        vals = full(a, b, self.theta)
        vals = [np.broadcast_to(np.asarray(x, dtype=float), u.shape).copy() for x in vals]
        c = self.cdf(u, v)
        return CopulaDerivs(np.asarray(c, dtype=float), *vals, clamped=nclamp)

    # ---- Archimedean generator ----

    def _need_generator(self):
        if not self.is_archimedean:
            raise UnsupportedGeneratorError(f"{self.family} copula has no Archimedean generator")

    def generator(self, t):
        self._need_generator()
        t = np.asarray(t, dtype=float)
        th = self.theta
        f = self.family
        if f == "clayton":
            return (t ** (-th) - 1.0) / th
        if f == "joe":
            return -np.log1p(-((1.0 - t) ** th))
        if f == "frank":
            return -np.log(np.expm1(-th * t) / np.expm1(-th))
        if f == "gumbel":
            return (-np.log(t)) ** th
        return np.log((1.0 - th * (1.0 - t)) / t)

    def generator_deriv(self, t):
        self._need_generator()
        t = np.asarray(t, dtype=float)
        th = self.theta
        f = self.family
        if f == "clayton":
            return -(t ** (-th - 1.0))
        if f == "joe":
            w = (1.0 - t) ** th
            return -th * (1.0 - t) ** (th - 1.0) / (1.0 - w)
        if f == "frank":
            return th * np.exp(-th * t) / np.expm1(-th * t)
        if f == "gumbel":
            return -th * (-np.log(t)) ** (th - 1.0) / t
        return th / (1.0 - th * (1.0 - t)) - 1.0 / t

    def generator_inverse(self, s):
        self._need_generator()
        s = np.asarray(s, dtype=float)
        th = self.theta
        f = self.family
        if f == "clayton":
            return (1.0 + th * s) ** (-1.0 / th)
        if f == "joe":
            return 1.0 - (-np.expm1(-s)) ** (1.0 / th)
        if f == "frank":
            return -np.log1p(np.exp(-s) * np.expm1(-th)) / th
        if f == "gumbel":
            return np.exp(-(s ** (1.0 / th)))
        return (1.0 - th) / (np.exp(s) - th)

    # ---- dependence ----

    def kendall_tau(self) -> float:
        f, th = self.family, self.theta
        if f == "independence":
            return 0.0
        if f == "normal":
            return float(2.0 / np.pi * np.arcsin(th))
        if f == "clayton":
            return th / (th + 2.0)
        if f == "gumbel":
            return 1.0 - 1.0 / th
        if f == "frank":
            debye, _ = integrate.quad(lambda x: x / np.expm1(x) if x != 0 else 1.0, 0.0, th,
                                      epsabs=1e-14, epsrel=1e-13)
            return float(1.0 + 4.0 / th * (debye / th - 1.0))
        if f == "amh":
            if abs(th) < 1e-6:
                return 2.0 * th / 9.0
            if th == 1.0:
                return 1.0 / 3.0
            return float(1.0 - 2.0 * (th + (1.0 - th) ** 2 * np.log1p(-th)) / (3.0 * th * th))
        # joe: 1 - 4 sum_k 1 / (k (th k + 2) (th (k - 1) + 2))
        k = np.arange(1, 200001, dtype=float)
        terms = 1.0 / (k * (th * k + 2.0) * (th * (k - 1.0) + 2.0))
        tail = 1.0 / (2.0 * th * th * k[-1] ** 2)
        return float(1.0 - 4.0 * (terms.sum() + tail))

    def kendall_tau_numeric(self) -> float:
        """``1 + 4 * int_0^1 phi(t) / phi'(t) dt`` by adaptive quadrature."""
        self._need_generator()
        val, _ = integrate.quad(lambda t: float(self.generator(t) / self.generator_deriv(t)),
                                0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
        return 1.0 + 4.0 * val

    # ---- sampling ----

    def sample(self, n: int, seed=None, method: str = "auto") -> np.ndarray:
        """Draw ``n`` pairs ``(u, v)``.

        ``method`` is ``"conditional"`` (invert ``dC/dv`` in ``u`` by
        bisection), ``"frailty"`` (Gumbel only) or ``"auto"``.
        """
        n = int(n)
        if n < 1:
            raise ValueError("n must be positive")
        rng = np.random.default_rng(seed)
        if method == "auto":
            method = "frailty" if self.family == "gumbel" else "conditional"
        if self.family == "independence":
            return rng.random((n, 2))
        if method == "frailty":
            if self.family != "gumbel":
                raise ValueError("frailty sampling is implemented for the Gumbel copula only")
            return _gumbel_frailty(self.theta, n, rng)
        if self.family == "normal":
            z = rng.standard_normal((n, 2))
            rho = self.theta
            x = z[:, 0]
            y = rho * x + np.sqrt(1 - rho * rho) * z[:, 1]
            return np.column_stack([special.ndtr(x), special.ndtr(y)])
        v = rng.random(n)
        w = rng.random(n)
        u = self.invert_h(w, v)
        return np.column_stack([u, v])

    def invert_h(self, w, v, iters: int = 60):
        """Solve ``dC/dv(u, v) = w`` for ``u`` by vectorized bisection."""
        w = np.asarray(w, dtype=float)
        v = np.asarray(v, dtype=float)
        lo = np.zeros_like(w)
        hi = np.ones_like(w)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            below = self.h(mid, v) < w
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


def _positive_stable(alpha, n, rng):
    """Kanter's representation of S with E exp(-sS) = exp(-s^alpha)."""
    w = rng.uniform(0.0, np.pi, n)
    e = rng.exponential(1.0, n)
    a = np.sin(alpha * w) / np.sin(w) ** (1.0 / alpha)
    b = (np.sin((1.0 - alpha) * w) / e) ** ((1.0 - alpha) / alpha)
    return a * b


def _gumbel_frailty(theta, n, rng):
    if theta == 1.0:
        return rng.random((n, 2))
    alpha = 1.0 / theta
    s = _positive_stable(alpha, n, rng)
    e = rng.exponential(1.0, (n, 2))
    return np.exp(-((e / s[:, None]) ** alpha))


# --------------------------------------------------------------------------
# functional interface


def _as_copula(f) -> Copula:
    if isinstance(f, Copula):
        return f
    fam, th = f
    return Copula(fam, th)


def copula_cdf(f, u, v):
    return _as_copula(f).cdf(u, v)


def copula_derivs(f, u, v) -> CopulaDerivs:
    return _as_copula(f).derivs(u, v)


def generator(f, t):
    return _as_copula(f).generator(t)


def generator_deriv(f, t):
    return _as_copula(f).generator_deriv(t)


def generator_inverse(f, s):
    return _as_copula(f).generator_inverse(s)


def kendall_tau(f) -> float:
    return _as_copula(f).kendall_tau()


_TAU_RANGE = {
    "clayton": (0.0, 1.0),
    "joe": (0.0, 1.0),
    "gumbel": (0.0, 1.0),
    "frank": (-1.0, 1.0),
    "amh": (-0.18170, 1.0 / 3.0),
    "normal": (-1.0, 1.0),
}


def tau_to_theta(family: str, tau: float) -> float:
    """Invert Kendall's tau to the natural parameter by bracketed root finding."""
    family = family.lower()
    tau = float(tau)
    if family == "independence":
        if tau != 0:
            raise ValueError("independence copula has tau = 0")
        return 0.0
    lo, hi = _TAU_RANGE[family]
    if family == "gumbel" and tau == 0.0:
        return 1.0
    if not lo < tau < hi or (family == "frank" and tau == 0.0):
        raise ValueError(f"tau={tau} is not attainable by the {family} copula")
    if family == "clayton":
        return 2.0 * tau / (1.0 - tau)
    if family == "gumbel":
        return 1.0 / (1.0 - tau)
    if family == "normal":
        return float(np.sin(np.pi * tau / 2.0))

    def gap(t):
        return Copula.from_unconstrained(family, t).kendall_tau() - tau

    if family == "frank":
        a, b = (1e-6, 1.0) if tau > 0 else (-1.0, -1e-6)
        while np.sign(gap(a)) == np.sign(gap(b)):
            b = b * 2.0 if tau > 0 else b
            a = a * 2.0 if tau < 0 else a
    elif family == "amh":
        a, b = -20.0, 20.0
    else:  # joe
        a, b = -20.0, 1.0
        while gap(b) < 0:
            b += 2.0
    t = optimize.brentq(gap, a, b, xtol=1e-12, rtol=1e-13, maxiter=500)
    return Copula.from_unconstrained(family, t).theta


def copula_sample(f, n: int, seed=None, method: str = "auto") -> np.ndarray:
    return _as_copula(f).sample(n, seed, method)
