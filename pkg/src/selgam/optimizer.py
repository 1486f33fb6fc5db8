"""Penalized maximum likelihood fitting with automatic smoothing.

Coefficients are found by a trust-region Newton method for fixed
smoothing parameters.  Smoothing parameters are chosen by minimizing the
UBRE criterion of a working linear model built from the converged fit
(performance iteration), and the two steps alternate until both settle.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize, special

from .copulas import _TAU_RANGE, FRANK_PUNCTURE, Copula
from .likelihood import LikeEval, SelectionLikelihood
from .margins import make_margin
from .model import Dataset, ModelSpec
from .splines import EquationDesign, build_design

__all__ = [
    "ConvergenceError",
    "TrustRegionResult",
    "trust_region_fit",
    "solve_subproblem",
    "starting_values",
    "UBREState",
    "ubre",
    "select_lambda",
    "FittedModel",
    "fit",
    "fit_likelihood",
    "LAMBDA_BOUNDS",
]

log = logging.getLogger("selgam.optimizer")

LAMBDA_BOUNDS = (1e-8, 1e8)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


# ---------------------------------------------------------------------------
# trust region


def solve_subproblem(g, H, radius):
    """Maximize ``g.p + p.H.p / 2`` subject to ``|p| <= radius``.

    Exact solution through the eigendecomposition of ``B = -H``: the step
    is ``(B + mu I)^{-1} g`` with ``mu >= max(0, -lambda_min(B))`` chosen so
    the step is interior (``mu = 0``) or lies on the boundary.  The hard
    case adds a multiple of the leading eigenvector.
    """
    B = -0.5 * (H + H.T)
    lam, Q = np.linalg.eigh(B)
    gq = Q.T @ g
    lmin = lam[0]
    tol = 1e-12 * max(1.0, np.max(np.abs(lam)))

    def step(mu):
        return Q @ (gq / (lam + mu))

    def gap(mu):
        return np.linalg.norm(gq / (lam + mu)) - radius

    if lmin > 0:
        # positive definite, however badly conditioned: the Newton step is
        # optimal when it fits and otherwise the boundary is reached for mu > 0
        p = step(0.0)
        if np.linalg.norm(p) <= radius:
            return p
        lo = 0.0
    else:
        lo = -lmin + tol
    if lmin <= 0 and gap(lo) < 0:
        # hard case: boundary cannot be reached along the regular path
        mask = lam + lo > 10 * tol
        p = Q[:, mask] @ (gq[mask] / (lam[mask] + lo))
        rest = radius**2 - p @ p
        if rest > 0:
            p = p + np.sqrt(rest) * Q[:, 0]
        return p
    hi = lo + np.linalg.norm(g) / radius + 1.0
    while gap(hi) > 0:
        hi *= 2.0
    mu = optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-12, maxiter=200)
    return step(mu)


@dataclass
class TrustRegionResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    iterations: int
    converged: bool
    radius: float
    trace: list = field(default_factory=list)


def trust_region_fit(objective, x0, max_iter: int = 200, ftol: float = 1e-9, gtol: float = 1e-6,
                     radius: float = 1.0, max_radius: float = 100.0, raise_on_fail: bool = False,
                     label: str = "") -> TrustRegionResult:
    """Maximize ``objective`` by trust-region Newton steps.

    ``objective(x, order)`` returns ``(value, gradient, hessian)`` for
    ``order == 2`` and the value alone for ``order == 0``; it may raise
    :class:`FloatingPointError` (or return a non-finite value) to reject a
    trial point.  Convergence requires the max-norm of the gradient below
    ``gtol`` and, after the first accepted step, a relative change of the
    objective below ``ftol``.
    """
    x = np.array(x0, dtype=float)
    f, g, H = objective(x, 2)
    if not np.isfinite(f):
        raise ConvergenceError("objective is not finite at the starting point", x)
    trace = []
    converged = False
    last_rel = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < gtol and (last_rel < ftol or gnorm < 1e-3 * gtol):
            converged = True
            it -= 1
            break
        p = solve_subproblem(g, H, radius)
        pred = float(g @ p + 0.5 * p @ H @ p)
        try:
            f_new = objective(x + p, 0)
        except FloatingPointError:
            f_new = -np.inf
        if not np.isfinite(f_new):
            f_new = -np.inf
        actual = f_new - f
        ratio = actual / pred if pred > 0 else (1.0 if actual >= 0 else -1.0)
        pnorm = float(np.linalg.norm(p))
        accepted = ratio > 1e-4 and np.isfinite(f_new)
        cached = None
        noise = 1e-12 * (1.0 + abs(f))
        if not accepted and np.isfinite(f_new) and pred < noise and actual > -noise:
            # change in the objective is below round-off: judge the step by the gradient
            try:
                cached = objective(x + p, 2)
            except FloatingPointError:
                cached = None
            if cached is not None and np.max(np.abs(cached[1])) < gnorm:
                accepted, ratio = True, 1.0
        if ratio < 0.25:
            radius = 0.25 * pnorm if pnorm > 0 else 0.25 * radius
        elif ratio > 0.75 and pnorm > 0.99 * radius:
            radius = min(2.0 * radius, max_radius)
        rec = {"fit": label, "iteration": it, "lp": float(f), "radius": float(radius),
               "ratio": float(ratio) if np.isfinite(ratio) else None, "accepted": bool(accepted),
               "grad_max": gnorm}
        trace.append(rec)
        log.debug("trust-region step", extra={"record": rec})
        if accepted:
            try:
                f2, g2, H2 = cached if cached is not None else objective(x + p, 2)
            except FloatingPointError:
                accepted = False
                rec["accepted"] = False
                radius = 0.25 * pnorm
                continue
            last_rel = abs(actual) / (1.0 + abs(f))
            x = x + p
            f, g, H = f2, g2, H2
        elif pred <= 1e-15 * (1.0 + abs(f)) or radius < 1e-14:
            # no predicted progress possible at working precision
            gnorm = float(np.max(np.abs(g))) if g.size else 0.0
            converged = gnorm < max(gtol, 1e-6 * (1.0 + abs(f)))
            break
    else:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        converged = gnorm < gtol and last_rel < ftol
    res = TrustRegionResult(x, float(f), g, H, it, converged, radius, trace)
    if not converged and raise_on_fail:
        raise ConvergenceError(f"trust region did not converge in {max_iter} iterations", res)
    return res


# ---------------------------------------------------------------------------
# free-parameter view of the likelihood


class _Problem:
    """Likelihood restricted to the free parameters (fixed theta/aux removed)."""

    def __init__(self, lik: SelectionLikelihood, spec: ModelSpec, base: np.ndarray):
        self.lik = lik
        self.base = np.array(base, dtype=float)
        free = np.ones(lik.M, dtype=bool)
        if spec.copula == "independence" or spec.fix_theta:
            free[lik.idx_t] = False
        if spec.fix_aux:
            free[lik.idx_a] = False
        self.free = free
        self.components = [S[np.ix_(free, free)] for S in lik.penalty_components()]

    def full(self, xf):
        x = self.base.copy()
        x[self.free] = xf
        return x

    def evaluate(self, xf, lam, order=2) -> LikeEval:
        return self.lik.evaluate(self.full(xf), lam, order)

    def objective(self, lam):
        f = self.free

        def obj(xf, order):
            e = self.evaluate(xf, lam, order)
            if order == 0:
                return e.penalized
            return e.penalized, e.penalized_gradient[f], e.penalized_hessian[np.ix_(f, f)]

        return obj

    def penalty(self, lam):
        S = np.zeros((self.free.sum(),) * 2)
        for l, C in zip(lam, self.components):
            S += l * C
        return S


# ---------------------------------------------------------------------------
# starting values


def _penalized_glm(X, y, margin, S, aux=None):
    """Penalized GLM for the outcome margin on its own, by trust region."""
    m = make_margin(margin)
    mu0 = float(np.mean(y))
    b0 = np.zeros(X.shape[1])
    b0[0] = float(m.link_fn(mu0))
    if aux is None:
        aux = m.moment_aux(y, np.full(y.shape, mu0))
    mm = make_margin(margin, aux)

    def obj(b, order):
        eta = X @ b
        if order == 0:
            v = mm.logpdf(y, eta).sum() - 0.5 * b @ S @ b
            return float(v)
        e = mm.evaluate(y, eta)
        val = float(e.logpdf.sum() - 0.5 * b @ S @ b)
        return val, X.T @ e.dlogpdf_deta - S @ b, X.T @ (e.d2logpdf_deta2[:, None] * X) - S

    res = trust_region_fit(obj, b0, label="glm-start")
    b = res.x
    return b, mm.moment_aux(y, mm.mean(X @ b))


def _penalized_probit(X, y1, S, ridge: float = 1e-4):
    """Penalized probit; a small ridge keeps separated data finite."""
    ridge = S + ridge * np.eye(X.shape[1])
    p = float(np.clip(np.mean(y1), 1e-3, 1 - 1e-3))
    a0 = np.zeros(X.shape[1])
    a0[0] = float(special.ndtri(p))
    s = 2.0 * y1 - 1.0

    def obj(a, order):
        q = s * (X @ a)
        val = float(special.log_ndtr(q).sum() - 0.5 * a @ ridge @ a)
        if order == 0:
            return val
        r = np.exp(-0.5 * q * q - 0.5 * np.log(2 * np.pi) - special.log_ndtr(q))
        g = X.T @ (s * r) - ridge @ a
        w = -r * (q + r)
        return val, g, X.T @ (w[:, None] * X) - ridge

    return trust_region_fit(obj, a0, label="probit").x


def _start_t(family: str) -> float:
    if family == "frank":
        return FRANK_PUNCTURE
    if family in ("clayton",):
        return float(np.log(0.1))
    if family in ("gumbel", "joe"):
        return float(np.log(0.1))
    return 0.0


def starting_values(lik: SelectionLikelihood, spec: ModelSpec, lam=None) -> np.ndarray:
    """Independent penalized probit and GLM fits plus a near-independence ``theta``."""
    lam = np.ones(lik.n_smooth) if lam is None else np.asarray(lam, dtype=float)
    S = lik.penalty_matrix(lam)
    a_sl = slice(0, lik.p1)
    b_sl = slice(lik.p1, lik.p1 + lik.p2)
    x = np.zeros(lik.M)
    try:
        if lik.p1:
            x[a_sl] = _penalized_probit(lik.X1, lik.sel.astype(float), S[a_sl, a_sl])
    except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError):
        x[0] = float(special.ndtri(np.clip(lik.sel.mean(), 1e-3, 1 - 1e-3)))
    y = lik._y2s
    aux_fixed = spec.aux if spec.fix_aux else None
    try:
        beta, aux = _penalized_glm(lik._X2s, y, spec.margin, S[b_sl, b_sl], aux_fixed)
    except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError):
        m = make_margin(spec.margin)
        beta = np.zeros(lik.p2)
        beta[0] = float(m.link_fn(np.mean(y)))
        aux = m.moment_aux(y, np.full(y.shape, np.mean(y)))
    x[b_sl] = beta
    x[lik.idx_a] = spec.aux if spec.aux is not None else aux
    if spec.theta is not None and spec.copula != "independence":
        x[lik.idx_t] = Copula(spec.copula, spec.theta).t
    else:
        x[lik.idx_t] = _start_t(spec.copula)
    return x


# ---------------------------------------------------------------------------
# smoothing parameter selection


@dataclass
class UBREState:
    """Working linear model at a converged fit: ``z = R d + R^{-1} G``."""

    R: np.ndarray
    Rinv: np.ndarray
    info: np.ndarray
    z: np.ndarray
    components: list
    n_tilde: float
    ridge: float = 0.0

    @classmethod
    def build(cls, delta, grad, hess, components, n_obs: int) -> "UBREState":
        info = -0.5 * (hess + hess.T)
        ev, Q = np.linalg.eigh(info)
        ridge = 0.0
        floor = 1e-10 * max(1.0, float(np.max(np.abs(ev))))
        if ev[0] < floor:
            ridge = floor - ev[0]
            ev = ev + ridge
            log.info("information matrix ridge-repaired", extra={"record": {"ridge": ridge}})
        if not np.all(np.isfinite(ev)):
            raise np.linalg.LinAlgError("information matrix is not finite")
        sq = np.sqrt(ev)
        R = (Q * sq) @ Q.T
        Rinv = (Q / sq) @ Q.T
        info = (Q * ev) @ Q.T
        z = R @ delta + Rinv @ grad
        return cls(R, Rinv, info, z, list(components), 3.0 * n_obs, ridge)

    def _parts(self, lam):
        S = sum((l * C for l, C in zip(lam, self.components)), np.zeros_like(self.info))
        F = self.info + S
        cf = linalg.cho_factor(0.5 * (F + F.T))
        Binv_R = linalg.cho_solve(cf, self.R)  # (I + S)^{-1} R
        A = self.R @ Binv_R
        return A, Binv_R, cf

    def value(self, lam) -> float:
        A, _, _ = self._parts(lam)
        r = self.z - A @ self.z
        return float(r @ r - self.n_tilde + 2.0 * np.trace(A))

    def value_and_grad(self, rho):
        lam = np.exp(rho)
        A, Binv_R, cf = self._parts(lam)
        Az = A @ self.z
        r = self.z - Az
        val = float(r @ r - self.n_tilde + 2.0 * np.trace(A))
        grad = np.empty(len(lam))
        w = Binv_R @ self.z  # (I + S)^{-1} R z
        for j, (l, C) in enumerate(zip(lam, self.components)):
            # dA/drho_j = -lam_j R (I+S)^{-1} C (I+S)^{-1} R
            dAz = -l * (self.R @ linalg.cho_solve(cf, C @ w))
            dtr = -l * np.sum(Binv_R * (C @ Binv_R))
            grad[j] = -2.0 * r @ dAz + 2.0 * dtr
        return val, grad

    def influence(self, lam) -> np.ndarray:
        return self._parts(lam)[0]

    def edf(self, lam) -> float:
        return float(np.trace(self.influence(lam)))


def ubre(lam, state: UBREState) -> float:
    """UBRE score ``|z - A z|^2 - 3n + 2 tr(A)`` of the working model."""
    return state.value(np.asarray(lam, dtype=float))


def select_lambda(state: UBREState, lam0, method: str = "auto") -> np.ndarray:
    """Minimize the UBRE score over ``log lambda`` within :data:`LAMBDA_BOUNDS`.

    ``method`` is ``"lbfgs"`` (bounded quasi-Newton with analytic
    gradient), ``"coordinate"`` (cyclic bounded scalar searches) or
    ``"auto"`` (quasi-Newton, with the coordinate search as a fallback and
    polish).
    """
    lo, hi = np.log(LAMBDA_BOUNDS[0]), np.log(LAMBDA_BOUNDS[1])
    rho0 = np.clip(np.log(np.asarray(lam0, dtype=float)), lo, hi)
    if rho0.size == 0:
        return np.exp(rho0)

    def f_only(rho):
        return state.value_and_grad(rho)[0]

    best_rho, best_val = rho0, f_only(rho0)
    qn_ok = False
    if method in ("auto", "lbfgs"):
        try:
            res = optimize.minimize(state.value_and_grad, rho0, jac=True, method="L-BFGS-B",
                                    bounds=[(lo, hi)] * rho0.size,
                                    options={"maxiter": 200, "ftol": 1e-12, "gtol": 1e-8})
            if np.isfinite(res.fun) and res.fun <= best_val:
                best_rho, best_val = res.x, float(res.fun)
            qn_ok = bool(res.success)
        except (ValueError, linalg.LinAlgError):
            pass
    if method == "coordinate" or (method == "auto" and not qn_ok):
        rho = best_rho.copy()
        for _ in range(5):
            prev = rho.copy()
            for j in range(rho.size):
                def fj(r, j=j):
                    rr = rho.copy()
                    rr[j] = r
                    return f_only(rr)

                res = optimize.minimize_scalar(fj, bounds=(lo, hi), method="bounded",
                                               options={"xatol": 1e-4})
                if res.fun <= fj(rho[j]):
                    rho[j] = res.x
            if np.max(np.abs(rho - prev)) < 1e-4:
                break
        val = f_only(rho)
        if val <= best_val:
            best_rho, best_val = rho, val
    return np.exp(best_rho)


# ---------------------------------------------------------------------------
# fitted model


@dataclass
class FittedModel:
    spec: ModelSpec
    delta: np.ndarray
    lambdas: np.ndarray
    free: np.ndarray
    eq1: EquationDesign
    eq2: EquationDesign
    loglik: float
    penalized_loglik: float
    gradient: np.ndarray
    hessian: np.ndarray
    penalized_hessian: np.ndarray
    covariance: np.ndarray
    edf: float
    edf_terms: dict
    convergence: dict
    n: int
    n_selected: int
    trace: list = field(default_factory=list, repr=False)

    @property
    def p1(self) -> int:
        return self.eq1.ncol

    @property
    def p2(self) -> int:
        return self.eq2.ncol

    @property
    def alpha(self) -> np.ndarray:
        return self.delta[: self.p1]

    @property
    def beta(self) -> np.ndarray:
        return self.delta[self.p1 : self.p1 + self.p2]

    @property
    def copula(self) -> Copula:
        return Copula.from_unconstrained(self.spec.copula, self.delta[-2])

    @property
    def theta(self) -> float:
        return self.copula.theta

    @property
    def tau(self) -> float:
        return self.copula.kendall_tau()

    @property
    def aux(self) -> float:
        return float(self.delta[-1])

    @property
    def margin(self):
        return make_margin(self.spec.margin, self.aux)

    def coef(self, equation: str, name: str) -> float:
        """Coefficient of a linear term (or ``"(Intercept)"``)."""
        eq, off = (self.eq1, 0) if equation == "selection" else (self.eq2, self.p1)
        if name == "(Intercept)":
            return float(self.delta[off])
        for t in eq.terms:
            if t.name == name and t.kind == "linear":
                return float(self.delta[off + t.cols.start])
        raise KeyError(name)

    def predict(self, covariates: dict, clip: bool = True):
        """Linear predictors ``(eta1, eta2)`` at new covariate values."""
        X1 = self.eq1.matrix(covariates, clip=clip)
        X2 = self.eq2.matrix(covariates, clip=clip)
        return X1 @ self.alpha, X2 @ self.beta

    def eta_variance(self, covariates: dict, equation: str = "outcome", clip: bool = True):
        """Diagonal of ``X V X^T`` for the sandwich covariance ``V``."""
        if equation == "selection":
            X = self.eq1.matrix(covariates, clip=clip)
            V = self.covariance[: self.p1, : self.p1]
        else:
            X = self.eq2.matrix(covariates, clip=clip)
            V = self.covariance[self.p1 : self.p1 + self.p2, self.p1 : self.p1 + self.p2]
        return np.einsum("ij,jk,ik->i", X, V, X)

    def smooth(self, name: str, x, equation: str = "outcome"):
        """Centered smooth estimate ``s(x)`` and its pointwise standard error."""
        eq, off = (self.eq1, 0) if equation == "selection" else (self.eq2, self.p1)
        for t in eq.smooth_terms:
            if t.name == name:
                B = t.basis(np.asarray(x, dtype=float), clip=True)
                idx = np.arange(off + t.cols.start, off + t.cols.stop)
                est = B @ self.delta[idx]
                V = self.covariance[np.ix_(idx, idx)]
                se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", B, V, B), 0.0))
                return est, se
        raise KeyError(name)

    def to_dict(self) -> dict:
        def fl(a):
            return np.asarray(a, dtype=float).tolist()

        return {
            "spec": self.spec.to_dict(),
            "delta": fl(self.delta),
            "lambdas": fl(self.lambdas),
            "free": [bool(b) for b in self.free],
            "selection_design": self.eq1.to_dict(),
            "outcome_design": self.eq2.to_dict(),
            "loglik": self.loglik,
            "penalized_loglik": self.penalized_loglik,
            "gradient": fl(self.gradient),
            "hessian": fl(self.hessian),
            "penalized_hessian": fl(self.penalized_hessian),
            "covariance": fl(self.covariance),
            "edf": self.edf,
            "edf_terms": self.edf_terms,
            "theta": self.theta,
            "tau": self.tau,
            "aux": self.aux,
            "convergence": self.convergence,
            "n": self.n,
            "n_selected": self.n_selected,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        return cls(
            spec=ModelSpec.from_dict(d["spec"]),
            delta=np.array(d["delta"]),
            lambdas=np.array(d["lambdas"]),
            free=np.array(d["free"], dtype=bool),
            eq1=EquationDesign.from_dict(d["selection_design"]),
            eq2=EquationDesign.from_dict(d["outcome_design"]),
            loglik=d["loglik"],
            penalized_loglik=d["penalized_loglik"],
            gradient=np.array(d["gradient"]),
            hessian=np.array(d["hessian"]),
            penalized_hessian=np.array(d["penalized_hessian"]),
            covariance=np.array(d["covariance"]),
            edf=d["edf"],
            edf_terms=d["edf_terms"],
            convergence=d["convergence"],
            n=d["n"],
            n_selected=d["n_selected"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FittedModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _term_names(eq1, eq2):
    return [f"selection:{t.name}" for t in eq1.smooth_terms] + [f"outcome:{t.name}" for t in eq2.smooth_terms]


def fit(data: Dataset, spec: ModelSpec, lam=None, select: bool = True, max_outer: int = 30,
        start=None, lam_init: float = 1.0) -> FittedModel:
    """Fit the model, alternating trust-region fits and UBRE smoothing selection.

    Parameters
    ----------
    lam : array_like, optional
        Fixed smoothing parameters.  When given (or when ``select`` is
        false) no smoothing selection is performed.
    start : array_like, optional
        Full-length starting parameter vector.
    """
    design = build_design(data, spec)
    lik = SelectionLikelihood.from_design(design, data, spec)
    return fit_likelihood(lik, spec, design.eq1, design.eq2, lam=lam, select=select, max_outer=max_outer,
                          start=start, lam_init=lam_init)


_EDGE_LINKS = ("clayton", "gumbel", "joe")


def _restart_dependence(prob, lik, spec, lam, xf, res):
    """Refit from moderate dependence and keep the better optimum.

    The near-independence start can drift to the edge of the parameter
    space (for instance ``theta = 1 + exp(t)`` with ``t -> -inf``), where the
    gradient in ``t`` vanishes even though an interior optimum is higher.
    Only the exponential links have that edge; the other families keep the
    optimum reached from the independence start.
    """
    if spec.copula not in _EDGE_LINKS or spec.fix_theta or spec.theta is not None:
        return res
    lo, hi = _TAU_RANGE[spec.copula]
    pos = prob.free[: lik.idx_t].sum()
    best = res
    for tau in (0.5 * hi, 0.5 * lo):
        if tau == 0.0:
            continue
        x = xf.copy()
        x[pos] = Copula.from_tau(spec.copula, tau).t
        try:
            alt = trust_region_fit(prob.objective(lam), x, label="restart")
        except FloatingPointError:
            continue
        if alt.value > best.value + 1e-8:
            best = alt
    return best


def fit_likelihood(lik: SelectionLikelihood, spec: ModelSpec, eq1: EquationDesign, eq2: EquationDesign,
                   lam=None, select: bool = True, max_outer: int = 30, start=None,
                   lam_init: float = 1.0) -> FittedModel:
    """Core of :func:`fit` for an already assembled likelihood."""
    ns = lik.n_smooth
    fixed_lam = lam is not None or not select or ns == 0
    lam = np.full(ns, lam_init) if lam is None else np.asarray(lam, dtype=float).reshape(ns)
    x0 = starting_values(lik, spec, lam) if start is None else np.asarray(start, dtype=float)
    if spec.fix_aux and spec.aux is not None:
        x0[lik.idx_a] = spec.aux
    prob = _Problem(lik, spec, x0)
    xf = x0[prob.free]
    trace: list = []
    warnings: list = []
    outer = 0
    inner_converged = True
    lam_converged = fixed_lam
    tr_iters = 0
    for outer in range(1, (1 if fixed_lam else max_outer) + 1):
        res = trust_region_fit(prob.objective(lam), xf, label=f"outer{outer}")
        if outer == 1 and start is None:
            res = _restart_dependence(prob, lik, spec, lam, xf, res)
        tr_iters += res.iterations
        trace.extend(res.trace)
        inner_converged = res.converged
        dx = np.max(np.abs(res.x - xf)) / (1.0 + np.max(np.abs(xf)))
        xf = res.x
        if fixed_lam:
            break
        e = prob.evaluate(xf, lam, order=2)
        f = prob.free
        state = UBREState.build(xf, e.gradient[f], e.hessian[np.ix_(f, f)], prob.components, lik.X1.shape[0])
        new = select_lambda(state, lam)
        # relative change, measured on the log scale
        lam_change = float(np.max(np.abs(np.log(new) - np.log(lam))))
        rec = {"fit": "outer", "iteration": outer, "lp": float(e.penalized), "lambda": new.tolist(),
               "ubre": state.value(new), "edf": state.edf(new), "lambda_change": lam_change, "delta_change": dx}
        trace.append(rec)
        log.debug("smoothing update", extra={"record": rec})
        lam = new
        if lam_change < 1e-3 and (dx < 1e-6 or outer > 1):
            lam_converged = True
            break
    else:
        if not fixed_lam:
            warnings.append("smoothing selection reached the outer iteration limit")
    if not fixed_lam:
        # final inner fit so the estimate is stationary at the reported lambda
        res = trust_region_fit(prob.objective(lam), xf, label="final")
        tr_iters += res.iterations
        trace.extend(res.trace)
        inner_converged = res.converged
        xf = res.x
    if not inner_converged:
        warnings.append("trust region did not converge")

    e = prob.evaluate(xf, lam, order=2)
    f = prob.free
    H = e.hessian[np.ix_(f, f)]
    Hp = e.penalized_hessian[np.ix_(f, f)]
    nHp_inv = _safe_inv(-Hp)
    cov_f = nHp_inv @ (-H) @ nHp_inv
    cov = np.zeros((lik.M, lik.M))
    cov[np.ix_(f, f)] = 0.5 * (cov_f + cov_f.T)
    # edf from the influence matrix (I + S)^{-1} I of the working model
    info = -H
    F = nHp_inv @ info
    diag = np.diag(F)
    full_idx = np.flatnonzero(f)
    edf_terms = {}
    for name, (s, _) in zip(_term_names(eq1, eq2), lik.S_blocks):
        cols = [k for k, gi in enumerate(full_idx) if s.start <= gi < s.stop]
        edf_terms[name] = float(diag[cols].sum())
    gmax = float(np.max(np.abs(e.penalized_gradient[f])))
    conv = {
        "converged": bool(inner_converged and (lam_converged or fixed_lam)),
        "inner_converged": bool(inner_converged),
        "lambda_converged": bool(lam_converged),
        "outer_iterations": int(outer),
        "trust_region_iterations": int(tr_iters),
        "gradient_max": gmax,
        "gradient_ok": bool(gmax < 1e-6 * (1.0 + abs(e.penalized))),
        "z_clamped": int(e.n_clamped),
        "warnings": warnings,
    }
    if warnings:
        log.warning("; ".join(warnings))
    return FittedModel(
        spec=spec, delta=prob.full(xf), lambdas=np.asarray(lam, dtype=float), free=f, eq1=eq1,
        eq2=eq2, loglik=e.value, penalized_loglik=e.penalized, gradient=e.penalized_gradient,
        hessian=e.hessian, penalized_hessian=e.penalized_hessian, covariance=cov, edf=float(np.trace(F)),
        edf_terms=edf_terms, convergence=conv, n=int(lik.sel.size), n_selected=int(lik.sel.sum()), trace=trace,
    )


def _safe_inv(A):
    A = 0.5 * (A + A.T)
    try:
        c = linalg.cho_factor(A)
        return linalg.cho_solve(c, np.eye(A.shape[0]))
    except linalg.LinAlgError:
        return np.linalg.pinv(A, hermitian=True)

