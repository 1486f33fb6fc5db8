"""Copula sample-selection log-likelihood with analytic derivatives.

For row ``i`` with selection predictor ``eta1`` and outcome predictor
``eta2`` the contribution is::

    (1 - y1) log Phi(-eta1) + y1 [log f2(y2; eta2, a) + log(1 - z)]

where ``z = dC(u, v)/dv`` at ``u = Phi(-eta1)`` and ``v = F2(y2)``.  Each
contribution depends on the parameter vector only through four per-row
scalars ``(eta1, eta2, t, a)``; ``t`` is the unconstrained copula
parameter and ``a`` the unconstrained auxiliary margin parameter.  The
gradient is ``X^T g`` and the Hessian is the sandwich ``X^T W X`` with a
per-row 4x4 weight matrix ``W``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .copulas import Copula
from .margins import Margin, make_margin
from .model import Dataset, ModelSpec
from .splines import DesignBlocks, build_design

__all__ = [
    "Z_CLAMP",
    "NonFiniteLikelihood",
    "ParamVector",
    "LikeEval",
    "SelectionLikelihood",
    "z_fn",
    "loglik",
    "penalized_loglik",
    "gradient",
    "hessian",
    "selection_bias",
    "cov_identity_check",
]

Z_CLAMP = 1e-12


class NonFiniteLikelihood(FloatingPointError):
    def __init__(self, row: int, what: str = "log-likelihood"):
        super().__init__(f"non-finite {what} at row {row}")
        self.row = row


@dataclass
class ParamVector:
    alpha: np.ndarray
    beta: np.ndarray
    t: float = 0.0
    aux: float = 0.0

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, [self.t, self.aux]])

    @classmethod
    def from_vector(cls, x, p1: int) -> "ParamVector":
        x = np.asarray(x, dtype=float)
        return cls(x[:p1].copy(), x[p1:-2].copy(), float(x[-2]), float(x[-1]))


@dataclass
class LikeEval:
    value: float
    penalized: float
    gradient: np.ndarray | None = None
    penalized_gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    penalized_hessian: np.ndarray | None = None
    z: np.ndarray | None = None
    n_clamped: int = 0


def _log_mills(eta1):
    """``phi(eta1) / Phi(-eta1)`` computed in log space."""
    logphi = -0.5 * eta1 * eta1 - 0.5 * np.log(2.0 * np.pi)
    return np.exp(logphi - special.log_ndtr(-eta1))


@dataclass
class _RowTerms:
    ll: np.ndarray
    g: np.ndarray  # (4, n): eta1, eta2, t, a
    W: np.ndarray | None  # (4, 4, n)
    z: np.ndarray
    n_clamped: int


class SelectionLikelihood:
    """Log-likelihood of the copula selection model on a fixed design.

    Parameters
    ----------
    X1, X2 : ndarray
        Selection and outcome design matrices over all rows.
    sel, out : ndarray
        Selection indicator and outcome (ignored where ``sel == 0``).
    margin, copula : str
        Family names.
    S1, S2 : list of (slice, ndarray)
        Per-smooth penalty blocks for each equation.
    outcome_only : bool
        Drop the selection part entirely (every row must be selected and
        the copula must be the independence copula).  Gives the plain
        penalized GLM/GAM likelihood of the outcome equation.
    """

    def __init__(self, X1, X2, sel, out, margin: str, copula: str, S1=(), S2=(), outcome_only=False):
        self.X1 = np.asarray(X1, dtype=float)
        self.X2 = np.asarray(X2, dtype=float)
        self.sel = np.asarray(sel).astype(bool)
        self.out = np.asarray(out, dtype=float)
        self.margin_family = margin
        self.copula_family = copula
        self.p1 = self.X1.shape[1]
        self.p2 = self.X2.shape[1]
        self.M = self.p1 + self.p2 + 2
        self.idx_t = self.M - 2
        self.idx_a = self.M - 1
        self.S_blocks = [(s, P) for s, P in S1] + [(slice(self.p1 + s.start, self.p1 + s.stop), P) for s, P in S2]
        # square-root factors: the penalty value is then a sum of squares, free of the
        # cancellation in delta' S delta that swamps changes in l_p at large lambda
        self._roots = [_psd_root(P) for _, P in self.S_blocks]
        self.outcome_only = bool(outcome_only)
        if self.outcome_only and (copula != "independence" or not self.sel.all()):
            raise ValueError("outcome-only likelihood needs all rows selected and the independence copula")
        self._X2s = self.X2[self.sel]
        self._y2s = self.out[self.sel]
        make_margin(margin).check_support(self._y2s)

    @classmethod
    def from_design(cls, design: DesignBlocks, data: Dataset, spec: ModelSpec) -> "SelectionLikelihood":
        S1 = [(t.cols, t.penalty) for t in design.eq1.smooth_terms]
        S2 = [(t.cols, t.penalty) for t in design.eq2.smooth_terms]
        return cls(design.X1, design.X2, data.sel, data.out, spec.margin, spec.copula, S1, S2)

    @property
    def n_smooth(self) -> int:
        return len(self.S_blocks)

    def penalty_matrix(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if lam.size != self.n_smooth:
            raise ValueError(f"expected {self.n_smooth} smoothing parameters, got {lam.size}")
        if np.any(lam < 0):
            raise ValueError("smoothing parameters must be nonnegative")
        S = np.zeros((self.M, self.M))
        for l, (s, P) in zip(lam, self.S_blocks):
            S[s, s] += l * P
        return S

    def penalty_components(self) -> list[np.ndarray]:
        out = []
        for s, P in self.S_blocks:
            S = np.zeros((self.M, self.M))
            S[s, s] = P
            out.append(S)
        return out

    def copula(self, t: float) -> Copula:
        return Copula.from_unconstrained(self.copula_family, t)

    def margin(self, a: float) -> Margin:
        return make_margin(self.margin_family, a)

    # ------------------------------------------------------------------

    def _rows(self, delta, order: int) -> _RowTerms:
        delta = np.asarray(delta, dtype=float)
        eta1 = self.X1 @ delta[: self.p1]
        beta = delta[self.p1 : self.p1 + self.p2]
        t, a = delta[self.idx_t], delta[self.idx_a]
        n = eta1.size
        sel = self.sel
        ll = np.empty(n)
        g = np.zeros((4, n))
        W = np.zeros((4, 4, n)) if order >= 2 else None
        z = np.zeros(n)

        # unselected rows: log Phi(-eta1)
        e0 = eta1[~sel]
        ll[~sel] = special.log_ndtr(-e0)
        if order >= 1:
            r = _log_mills(e0)
            g[0, ~sel] = -r
            if order >= 2:
                W[0, 0, ~sel] = -r * (r - e0)

        # selected rows
        e1 = eta1[sel]
        e2 = self._X2s @ beta
        cop = self.copula(t)
        u = special.ndtr(-e1)
        nclamp = 0
        if order == 0 and self.copula_family != "independence":
            # values only: skip the derivative kernels
            m = self.margin(a)
            logf = m.logpdf(self._y2s, e2)
            h, nclamp = cop._h_raw(u, m.cdf(self._y2s, e2), special.ndtr(e1), m.sf(self._y2s, e2))
            nclamp += int(np.count_nonzero(h > 1.0 - Z_CLAMP))
            h = np.minimum(h, 1.0 - Z_CLAMP)
            z[sel] = h
            ll[sel] = logf + np.log(1.0 - h)
            return _RowTerms(ll, g, W, z, nclamp)
        me = self.margin(a).evaluate(self._y2s, e2)
        v = me.cdf
        if self.copula_family == "independence":
            h = u
            log1mh = np.zeros_like(e1) if self.outcome_only else special.log_ndtr(e1)
            z[sel] = h
            ll[sel] = me.logpdf + log1mh
            if order >= 1:
                # d/deta1 log Phi(eta1) = phi(eta1) / Phi(eta1)
                r = np.zeros_like(e1) if self.outcome_only else _log_mills(-e1)
                g[0, sel] = r
                g[1, sel] = me.dlogpdf_deta
                g[3, sel] = me.dlogpdf_da
                if order >= 2:
                    W[0, 0, sel] = -r * (r + e1)
                    W[1, 1, sel] = me.d2logpdf_deta2
                    W[1, 3, sel] = W[3, 1, sel] = me.d2logpdf_deta_da
                    W[3, 3, sel] = me.d2logpdf_da2
            return _RowTerms(ll, g, W, z, nclamp)

        d = cop.derivs(u, v, ubar=special.ndtr(e1), vbar=me.sf)
        # the same kernel as the value-only path, so every order agrees on the value
        h, nclamp = cop._h_raw(u, v, special.ndtr(e1), me.sf)
        hmax = 1.0 - Z_CLAMP
        nclamp += int(np.count_nonzero(h > hmax))
        h = np.minimum(h, hmax)
        z[sel] = h
        omh = 1.0 - h
        ll[sel] = me.logpdf + np.log(omh)
        if order == 0:
            return _RowTerms(ll, g, W, z, nclamp)

        phi1 = np.exp(-0.5 * e1 * e1) / np.sqrt(2.0 * np.pi)
        u1 = -phi1
        u11 = e1 * phi1
        th1, th2 = cop.dtheta_dt()
        v2, va = me.dcdf_deta, me.dcdf_da
        # first derivatives of h in (eta1, eta2, t, a)
        hd = [d.duv * u1, d.dvv * v2, d.dtheta_dv * th1, d.dvv * va]
        lf = [0.0, me.dlogpdf_deta, 0.0, me.dlogpdf_da]
        for k in range(4):
            g[k, sel] = lf[k] - hd[k] / omh
        if order >= 2:
            hdd = {
                (0, 0): d.du2dv * u1 * u1 + d.duv * u11,
                (0, 1): d.duvv * u1 * v2,
                (0, 2): d.dtheta_duv * th1 * u1,
                (0, 3): d.duvv * u1 * va,
                (1, 1): d.dvvv * v2 * v2 + d.dvv * me.d2cdf_deta2,
                (1, 2): d.dtheta_dvv * th1 * v2,
                (1, 3): d.dvvv * v2 * va + d.dvv * me.d2cdf_deta_da,
                (2, 2): d.dtheta2_dv * th1 * th1 + d.dtheta_dv * th2,
                (2, 3): d.dtheta_dvv * th1 * va,
                (3, 3): d.dvvv * va * va + d.dvv * me.d2cdf_da2,
            }
            lff = {(1, 1): me.d2logpdf_deta2, (1, 3): me.d2logpdf_deta_da, (3, 3): me.d2logpdf_da2}
            for (i, j), hij in hdd.items():
                w = -hij / omh - hd[i] * hd[j] / omh**2 + lff.get((i, j), 0.0)
                W[i, j, sel] = w
                W[j, i, sel] = w
        return _RowTerms(ll, g, W, z, nclamp)

    def evaluate(self, delta, lam=None, order: int = 2) -> LikeEval:
        """Log-likelihood and optionally its gradient (``order >= 1``) and Hessian."""
        delta = np.asarray(delta, dtype=float)
        lam = np.zeros(self.n_smooth) if lam is None else lam
        S = self.penalty_matrix(lam)
        # trial points far from the optimum can overflow; caught below as non-finite
        with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
            rows = self._rows(delta, order)
        bad = ~np.isfinite(rows.ll)
        if np.any(bad):
            raise NonFiniteLikelihood(int(np.flatnonzero(bad)[0]))
        value = float(np.sum(rows.ll))
        pen = 0.5 * sum(float(l) * float(np.sum((delta[s] @ L) ** 2))
                        for l, (s, _), L in zip(np.asarray(lam, dtype=float).reshape(-1), self.S_blocks, self._roots))
        res = LikeEval(value, value - pen, z=rows.z, n_clamped=rows.n_clamped)
        if order >= 1:
            gbad = ~np.all(np.isfinite(rows.g), axis=0)
            if np.any(gbad):
                raise NonFiniteLikelihood(int(np.flatnonzero(gbad)[0]), "gradient")
            G = np.concatenate([self.X1.T @ rows.g[0], self.X2.T @ rows.g[1],
                                [rows.g[2].sum(), rows.g[3].sum()]])
            res.gradient = G
            res.penalized_gradient = G - S @ delta
        if order >= 2:
            res.hessian = self._assemble(rows.W)
            res.penalized_hessian = res.hessian - S
        return res

    def _assemble(self, W) -> np.ndarray:
        if not np.all(np.isfinite(W)):
            raise NonFiniteLikelihood(int(np.flatnonzero(~np.all(np.isfinite(W), axis=(0, 1)))[0]), "Hessian")
        X1, X2 = self.X1, self.X2
        p1, p2 = self.p1, self.p2
        H = np.zeros((self.M, self.M))
        a, b = slice(0, p1), slice(p1, p1 + p2)
        H[a, a] = X1.T @ (W[0, 0][:, None] * X1)
        H[b, b] = X2.T @ (W[1, 1][:, None] * X2)
        H[a, b] = X1.T @ (W[0, 1][:, None] * X2)
        H[b, a] = H[a, b].T
        for k, idx in ((2, self.idx_t), (3, self.idx_a)):
            H[a, idx] = H[idx, a] = X1.T @ W[0, k]
            H[b, idx] = H[idx, b] = X2.T @ W[1, k]
        H[self.idx_t, self.idx_t] = W[2, 2].sum()
        H[self.idx_a, self.idx_a] = W[3, 3].sum()
        H[self.idx_t, self.idx_a] = H[self.idx_a, self.idx_t] = W[2, 3].sum()
        # BLAS products of the diagonal blocks are symmetric only to round-off
        return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# functional interface


def _psd_root(P) -> np.ndarray:
    """``L`` with ``L L^T = P`` for a symmetric PSD ``P``."""
    w, Q = np.linalg.eigh(0.5 * (P + P.T))
    keep = w > 1e-12 * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    return Q[:, keep] * np.sqrt(w[keep])


def _copula_of(cop) -> Copula:
    if isinstance(cop, Copula):
        return cop
    fam, th = cop
    return Copula(fam, th)


def _margin_of(m) -> Margin:
    return m if isinstance(m, Margin) else make_margin(m)


def z_fn(y2, eta1, eta2, cop, m) -> np.ndarray:
    """``dC(Phi(-eta1), v)/dv`` at ``v = F2(y2; eta2)``, clamped below ``1 - 1e-12``."""
    cop = _copula_of(cop)
    m = _margin_of(m)
    u = special.ndtr(-np.asarray(eta1, dtype=float))
    v = m.cdf(y2, eta2)
    ubar = special.ndtr(np.asarray(eta1, dtype=float))
    return np.minimum(cop.h(u, v, ubar, m.sf(y2, eta2)), 1.0 - Z_CLAMP)


def _setup(p, d: Dataset, spec: ModelSpec):
    design = build_design(d, spec)
    lik = SelectionLikelihood.from_design(design, d, spec)
    x = p.vector if isinstance(p, ParamVector) else np.asarray(p, dtype=float)
    return lik, x


def loglik(p, d: Dataset, spec: ModelSpec) -> float:
    lik, x = _setup(p, d, spec)
    return lik.evaluate(x, order=0).value


def penalized_loglik(p, d: Dataset, spec: ModelSpec, lam) -> float:
    lik, x = _setup(p, d, spec)
    return lik.evaluate(x, lam, order=0).penalized


def gradient(p, d: Dataset, spec: ModelSpec, lam) -> np.ndarray:
    lik, x = _setup(p, d, spec)
    return lik.evaluate(x, lam, order=1).penalized_gradient


def hessian(p, d: Dataset, spec: ModelSpec, lam) -> np.ndarray:
    lik, x = _setup(p, d, spec)
    return lik.evaluate(x, lam, order=2).penalized_hessian


# ---------------------------------------------------------------------------
# population quantities


def selection_bias(m, cop, eta1: float, eta2: float) -> float:
    """``E(Y2* | Y1 = 1) - E(Y2*)`` for an Archimedean copula.

    Uses the generator form of the conditional cdf,
    ``dC/dv = phi'(v) / phi'(C(u, v))``, and integrates on the probability
    scale: ``int y f2(y) dC/dv dy = int_0^1 F2^{-1}(v) dC/dv dv``.
    """
    cop = _copula_of(cop)
    m = _margin_of(m)
    cop._need_generator()
    u0 = float(special.ndtr(-eta1))
    p1 = 1.0 - u0
    if p1 <= 0.0:
        return float("nan")
    if u0 <= 0.0:
        return 0.0

    def integrand(v):
        c = cop.cdf(u0, v)
        if c <= 0.0:
            return 0.0
        return float(m.ppf(v, eta2) * cop.generator_deriv(v) / cop.generator_deriv(c))

    val, _ = integrate.quad(integrand, 0.0, 1.0, limit=400, epsabs=1e-12, epsrel=1e-10)
    mean = float(m.mean(eta2))
    return (u0 * mean - val) / p1


@dataclass
class CovIdentity:
    """Both sides of the selection covariance identity with standard errors."""

    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    printed_rhs: float
    n: int
    extras: dict = field(default_factory=dict)

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.lhs_se, self.rhs_se))

    @property
    def agree(self) -> bool:
        return abs(self.lhs - self.rhs) <= 3.0 * self.combined_se

    @property
    def printed_agree(self) -> bool:
        return abs(self.lhs - self.printed_rhs) <= 3.0 * self.combined_se


def cov_identity_check(m, cop, eta1: float, eta2: float, n: int = 1_000_000, seed=0) -> CovIdentity:
    """Monte Carlo check of the score identity behind the selection correction.

    The outcome score of the log-likelihood has mean zero, which gives::

        E[y1 * dlog f2/deta2] = E[y1 * z' / (1 - z)],   z' = dz/deta2.

    With ``dlog f2/deta2 = s * (Y2* - mu)`` (``s`` is ``1/sigma^2`` for the
    Gaussian and ``k/mu`` for the gamma) the left side is
    ``s * Cov(Y1, Y2*)``.  ``lhs`` is the sample covariance of ``Y1`` and
    the latent ``Y2*``; ``rhs`` is ``mean(y1 * z'/(1 - z)) / s``.
    ``printed_rhs`` is the same quantity with the opposite sign and no
    scale factor, kept so callers can see that form does not hold.
    """
    cop = _copula_of(cop)
    m = _margin_of(m)
    uv = cop.sample(n, seed)
    y1 = (uv[:, 0] > special.ndtr(-eta1)).astype(float)
    y2 = m.ppf(np.clip(uv[:, 1], 1e-16, 1 - 1e-16), np.full(n, eta2))
    lhs_terms = (y1 - y1.mean()) * (y2 - y2.mean())
    lhs = float(lhs_terms.sum() / (n - 1))
    lhs_se = float(lhs_terms.std(ddof=1) / np.sqrt(n))

    ev = m.evaluate(y2, np.full(n, eta2))
    u = np.full(n, special.ndtr(-eta1))
    if cop.family == "independence":
        zp = np.zeros(n)
        zz = u
    else:
        d = cop.derivs(u, ev.cdf, ubar=np.full(n, special.ndtr(eta1)), vbar=ev.sf)
        zz = np.minimum(d.dv, 1.0 - Z_CLAMP)
        zp = d.dvv * ev.dcdf_deta
    s = float(np.asarray(m.score_scale(eta2)))
    terms = y1 * zp / (1.0 - zz) / s
    rhs = float(terms.mean())
    rhs_se = float(terms.std(ddof=1) / np.sqrt(n))
    printed = float(-np.mean(y1 * zp / (1.0 - zz)))
    return CovIdentity(lhs, lhs_se, rhs, rhs_se, printed, n, {"score_scale": s})
