"""Simulation designs, competing estimators and the Monte Carlo harness.

Two designs are provided:

``consistency``
    Additive selection and gamma outcome equations with smooth effects
    of ``x1, x2, x3`` and binary ``x4, x5``, linked by a Gumbel copula.
``logged``
    Linear selection and gamma outcome equations with correlated
    covariates, linked by a Normal, Frank or Clayton copula.

In both, ``(U, V)`` is drawn from the copula, the latent selection value
is ``eta1 + Phi^{-1}(U)`` and the latent outcome is the gamma quantile of
``V``.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from .copulas import Copula, tau_to_theta
from .likelihood import SelectionLikelihood
from .margins import make_margin
from .model import Dataset, EquationSpec, ModelSpec, Term
from .optimizer import FittedModel, fit, fit_likelihood
from .splines import EquationDesign, build_equation

__all__ = [
    "DGPSpec",
    "CONSISTENCY",
    "LOGGED",
    "generate",
    "generate_latent",
    "true_eta",
    "true_smooths",
    "consistency_model",
    "logged_model",
    "gassm_estimator",
    "naive_gam_estimator",
    "logged_normal_estimator",
    "Estimate",
    "MCReport",
    "mc_study",
    "ESTIMATORS",
    "model_for",
]

CONSISTENCY = {
    "alpha0": 0.7,
    "alpha4": 0.6,
    "alpha5": -0.4,
    "beta0": -1.5,
    "beta4": -1.0,
    "beta5": 0.75,
    "shape": 2.0,
    "copula": "gumbel",
    "theta": 3.0,
}

LOGGED = {
    "alpha0": 0.58,
    "alpha1": 2.5,
    "alpha2": -1.0,
    "alpha3": 0.8,
    "beta0": -0.68,
    "beta1": -1.5,
    "beta2": 0.5,
    "shape": 2.0,
    "copula": "normal",
    "tau": 0.5,
    "corr": 0.5,
}


def s1(x):
    return -0.2 * np.sin(np.pi * x / 46.0)


def s2(x):
    return -0.0004 * (x + 0.01 * np.cbrt(x))


def s3(x):
    return 0.0006 * np.exp(0.1 * x)


def s4(x):
    return 0.03 * x


SMOOTH_TRUTH = {"s3": (s3, "x1", (16.0, 66.0)), "s4": (s4, "x3", (0.0, 20.0))}


@dataclass(frozen=True)
class DGPSpec:
    """One simulation design.

    ``overrides`` replaces any structural constant of the design, for
    example ``{"alpha0": 40.0}`` to force every row to be selected.
    """

    which: str = "consistency"
    n: int = 500
    copula: str | None = None
    theta: float | None = None
    tau: float | None = None
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.which not in ("consistency", "logged"):
            raise ValueError(f"unknown design {self.which!r}")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def constants(self) -> dict:
        base = dict(CONSISTENCY if self.which == "consistency" else LOGGED)
        base.update(self.overrides)
        if self.copula is not None:
            base["copula"] = self.copula.lower()
        if self.theta is not None:
            base["theta"] = float(self.theta)
        elif self.tau is not None:
            base["theta"] = tau_to_theta(base["copula"], self.tau)
        elif "theta" not in base:
            base["theta"] = tau_to_theta(base["copula"], base["tau"])
        base.pop("tau", None)
        return base

    def make_copula(self) -> Copula:
        c = self.constants
        return Copula(c["copula"], c["theta"])

    def replace(self, **kw) -> "DGPSpec":
        d = asdict(self)
        d.update(kw)
        return DGPSpec(**d)


def _covariates(spec: DGPSpec, n: int, rng) -> dict:
    if spec.which == "consistency":
        return {
            "x1": rng.uniform(16.0, 66.0, n),
            "x2": rng.uniform(10.0, 70.0, n),
            "x3": rng.uniform(0.0, 20.0, n),
            "x4": rng.integers(0, 2, n).astype(float),
            "x5": rng.integers(0, 2, n).astype(float),
        }
    r = spec.constants["corr"]
    cov = np.full((3, 3), r)
    np.fill_diagonal(cov, 1.0)
    z = rng.multivariate_normal(np.zeros(3), cov, size=n, method="cholesky")
    # Phi(z) makes x2 and x3 uniform on (0, 1)
    return {
        "x1": (z[:, 0] > 0.0).astype(float),
        "x2": special.ndtr(z[:, 1]),
        "x3": special.ndtr(z[:, 2]),
    }


def true_eta(spec: DGPSpec, cov: dict):
    """True linear predictors ``(eta1, eta2)`` at covariate values ``cov``."""
    c = spec.constants
    if spec.which == "consistency":
        eta1 = c["alpha0"] + s1(cov["x1"]) + s2(cov["x2"]) + c["alpha4"] * cov["x4"] + c["alpha5"] * cov["x5"]
        eta2 = c["beta0"] + s3(cov["x1"]) + s4(cov["x3"]) + c["beta4"] * cov["x4"] + c["beta5"] * cov["x5"]
    else:
        eta1 = c["alpha0"] + c["alpha1"] * cov["x1"] + c["alpha2"] * cov["x2"] + c["alpha3"] * cov["x3"]
        eta2 = c["beta0"] + c["beta1"] * cov["x1"] + c["beta2"] * cov["x2"]
    return eta1, eta2


def true_smooths(spec: DGPSpec) -> dict:
    return dict(SMOOTH_TRUTH) if spec.which == "consistency" else {}


def generate_latent(spec: DGPSpec, n: int | None = None, seed=None):
    """Dataset plus the latent outcome ``Y2*`` for every row."""
    n = spec.n if n is None else n
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    cov = _covariates(spec, n, rng)
    eta1, eta2 = true_eta(spec, cov)
    uv = spec.make_copula().sample(n, rng)
    u = np.clip(uv[:, 0], 1e-16, 1 - 1e-16)
    v = np.clip(uv[:, 1], 1e-16, 1 - 1e-16)
    y1_star = eta1 + special.ndtri(u)
    y2_star = make_margin("gamma", np.log(spec.constants["shape"])).ppf(v, eta2)
    sel = (y1_star > 0).astype(int)
    out = np.where(sel == 1, y2_star, np.nan)
    return Dataset(sel, out, cov), y2_star


def generate(spec: DGPSpec) -> Dataset:
    return generate_latent(spec)[0]


# ---------------------------------------------------------------------------
# model specifications and estimators


def consistency_model(copula: str = "gumbel", margin: str = "gamma", knots: int = 8) -> ModelSpec:
    return ModelSpec(
        selection=EquationSpec((Term("x1"), Term("x2"), Term("x4", "linear"), Term("x5", "linear"))),
        outcome=EquationSpec((Term("x1"), Term("x3"), Term("x4", "linear"), Term("x5", "linear"))),
        margin=margin,
        copula=copula,
        knots=knots,
    )


def logged_model(copula: str = "normal", margin: str = "gamma") -> ModelSpec:
    return ModelSpec(
        selection=EquationSpec((Term("x1", "linear"), Term("x2", "linear"), Term("x3", "linear"))),
        outcome=EquationSpec((Term("x1", "linear"), Term("x2", "linear"))),
        margin=margin,
        copula=copula,
    )


def model_for(spec: DGPSpec, margin: str = "gamma", copula: str | None = None) -> ModelSpec:
    cop = copula or spec.constants["copula"]
    if spec.which == "consistency":
        return consistency_model(cop, margin)
    return logged_model(cop, margin)


@dataclass
class Estimate:
    """What the harness records from one fitted estimator."""

    params: dict
    smooths: dict = field(default_factory=dict)
    mean_fn: object = None
    eta2_fn: object = None
    converged: bool = True


def _summarize(fm: FittedModel, spec: DGPSpec, names) -> Estimate:
    params = {}
    for key, term in names.items():
        params[key] = fm.coef("outcome", term)
    if fm.spec.copula != "independence":
        params["tau"] = fm.tau
    smooths = {}
    for key, (_, var, (lo, hi)) in true_smooths(spec).items():
        grid = np.linspace(lo, hi, 200)
        smooths[key] = fm.smooth(var, grid)[0]
    return Estimate(params, smooths, converged=bool(fm.convergence["converged"]))


def _param_names(spec: DGPSpec) -> dict:
    if spec.which == "consistency":
        return {"beta0": "(Intercept)", "beta4": "x4", "beta5": "x5"}
    return {"beta0": "(Intercept)", "beta1": "x1", "beta2": "x2"}


def gassm_estimator(data: Dataset, spec: DGPSpec) -> tuple[Estimate, FittedModel]:
    fm = fit(data, model_for(spec))
    est = _summarize(fm, spec, _param_names(spec))
    est.mean_fn = lambda cov: np.exp(fm.predict(cov)[1])
    est.eta2_fn = lambda cov: fm.predict(cov)[1]
    return est, fm


def naive_gam_estimator(data: Dataset, spec_or_model, lam=None) -> FittedModel:
    """Outcome equation alone, fitted on the selected rows.

    ``spec_or_model`` is a :class:`ModelSpec` (its outcome equation and
    margin are used) or a :class:`DGPSpec` (the matching design model).
    """
    model = spec_or_model if isinstance(spec_or_model, ModelSpec) else model_for(spec_or_model)
    model = model.replace(copula="independence", theta=None, fix_theta=False)
    sub = data.subset(data.selected)
    eq2 = build_equation(sub.covariates, model.outcome, model.knots, model.degree, model.penalty_order)
    X2 = eq2.matrix(sub.covariates)
    S2 = [(t.cols, t.penalty) for t in eq2.smooth_terms]
    lik = SelectionLikelihood(np.zeros((sub.n, 0)), X2, sub.sel, sub.out, model.margin, "independence",
                              (), S2, outcome_only=True)
    return fit_likelihood(lik, model, EquationDesign([], 0), eq2, lam=lam)


def _gam_estimate(data: Dataset, spec: DGPSpec) -> tuple[Estimate, FittedModel]:
    fm = naive_gam_estimator(data, spec)
    est = _summarize(fm, spec, _param_names(spec))
    est.mean_fn = lambda cov: np.exp(fm.predict(cov)[1])
    est.eta2_fn = lambda cov: fm.predict(cov)[1]
    return est, fm


def logged_normal_estimator(data: Dataset, model: ModelSpec | None = None) -> FittedModel:
    """Normal-copula selection model with a Gaussian margin for ``log(Y2)``."""
    y = data.out[data.selected]
    if np.any(y <= 0):
        raise ValueError("logged estimator needs strictly positive outcomes")
    model = model or logged_model()
    model = model.replace(margin="gaussian", copula="normal", theta=None, fix_theta=False, aux=None,
                          fix_aux=False)
    out = np.where(data.selected, np.log(np.where(data.selected, data.out, 1.0)), np.nan)
    return fit(data.with_outcome(out), model)


def _logged_estimate(data: Dataset, spec: DGPSpec) -> tuple[Estimate, FittedModel]:
    fm = logged_normal_estimator(data, model_for(spec))
    est = _summarize(fm, spec, _param_names(spec))
    sig2 = float(np.exp(2.0 * fm.aux))
    est.mean_fn = lambda cov: np.exp(fm.predict(cov)[1] + 0.5 * sig2)
    est.eta2_fn = lambda cov: fm.predict(cov)[1]
    return est, fm


ESTIMATORS = {"GASSM": gassm_estimator, "GAM": _gam_estimate, "L": _logged_estimate}


# ---------------------------------------------------------------------------
# Monte Carlo harness


def _true_params(spec: DGPSpec) -> dict:
    c = spec.constants
    out = {k: c[k] for k in _param_names(spec)}
    if spec.which == "consistency":
        # smooths are centred, so the intercept also carries their means
        for fn, _, (lo, hi) in SMOOTH_TRUTH.values():
            out["beta0"] += integrate.quad(fn, lo, hi)[0] / (hi - lo)
    out["tau"] = spec.make_copula().kendall_tau()
    return out


def _eval_points(spec: DGPSpec, seed: int, size: int = 200) -> dict:
    ss = np.random.SeedSequence([int(seed), 0x6E7A])
    return _covariates(spec, size, np.random.default_rng(ss))


def _one_rep(args):
    spec, estimators, child, points = args
    data_ss, test_ss = child.spawn(2)
    data, _ = generate_latent(spec, seed=np.random.default_rng(data_ss))
    test, y2_test = generate_latent(spec, seed=np.random.default_rng(test_ss))
    _, eta2_pts = true_eta(spec, points)
    gamma = make_margin("gamma", np.log(spec.constants["shape"]))
    rows = {}
    for name in estimators:
        try:
            est, fm = ESTIMATORS[name](data, spec)
            mu = est.mean_fn(test.covariates)
            test_err = float(np.mean(gamma.unit_deviance(y2_test, np.log(mu))))
            eta_mse = float(np.mean((est.eta2_fn(points) - eta2_pts) ** 2))
            rows[name] = {
                "params": est.params,
                "smooths": {k: v.tolist() for k, v in est.smooths.items()},
                "eta2_mse": eta_mse,
                "test_error": test_err,
                "converged": est.converged,
                "selected_fraction": float(data.sel.mean()),
            }
        except Exception as exc:  # recorded, not fatal
            rows[name] = {"error": f"{type(exc).__name__}: {exc}"}
    return rows


@dataclass
class MCReport:
    study: str
    n: int
    copula: str
    theta: float
    tau: float
    reps: int
    seed: int
    estimators: list
    truth: dict
    raw: list = field(repr=False, default_factory=list)

    # ---- summaries ----

    def ok(self, estimator: str) -> list:
        return [r[estimator] for r in self.raw if "error" not in r[estimator]]

    def failures(self, estimator: str) -> int:
        return self.reps - len(self.ok(estimator))

    def param_summary(self, estimator: str) -> dict:
        rows = self.ok(estimator)
        out = {}
        if not rows:
            return out
        for p in rows[0]["params"]:
            if p not in self.truth:
                continue
            x = np.array([r["params"][p] for r in rows])
            true = self.truth[p]
            mean = float(x.mean())
            bias = mean - true
            sd = float(x.std(ddof=0)) if x.size >= 2 else None
            out[p] = {
                "true": true,
                "mean": mean,
                "bias": bias,
                "sd": sd,
                "rel_bias_pct": 100.0 * bias / true if true != 0 else None,
                "rmse": float(np.sqrt(np.mean((x - true) ** 2))),
                "n_ok": int(x.size),
            }
        return out

    def mise(self, estimator: str) -> dict:
        rows = self.ok(estimator)
        out = {}
        for key, (fun, _, (lo, hi)) in SMOOTH_TRUTH.items():
            if not rows or key not in rows[0]["smooths"]:
                continue
            grid = np.linspace(lo, hi, 200)
            truth = fun(grid)
            truth = truth - truth.mean()
            errs = []
            for r in rows:
                s = np.asarray(r["smooths"][key])
                errs.append(np.mean((s - s.mean() - truth) ** 2))
            out[key] = float(np.mean(errs))
        return out

    def eta2_mse(self, estimator: str) -> float | None:
        rows = self.ok(estimator)
        return float(np.mean([r["eta2_mse"] for r in rows])) if rows else None

    def test_error(self, estimator: str) -> float | None:
        rows = self.ok(estimator)
        return float(np.mean([r["test_error"] for r in rows])) if rows else None

    def summary(self) -> dict:
        return {
            "study": self.study,
            "n": self.n,
            "copula": self.copula,
            "theta": self.theta,
            "tau": self.tau,
            "reps": self.reps,
            "seed": self.seed,
            "estimators": {
                e: {
                    "failures": self.failures(e),
                    "params": self.param_summary(e),
                    "mise": self.mise(e),
                    "eta2_mse": self.eta2_mse(e),
                    "test_error": self.test_error(e),
                }
                for e in self.estimators
            },
        }

    # ---- serialization ----

    CSV_COLUMNS = ("study", "n", "copula", "tau", "estimator", "quantity", "parameter", "true", "mean", "sd",
                   "bias", "rel_bias_pct", "rmse", "value", "n_ok", "failures")

    def csv_rows(self) -> list:
        rows = []
        base = {"study": self.study, "n": self.n, "copula": self.copula, "tau": _fmt(self.tau)}
        for e in self.estimators:
            fails = self.failures(e)
            for p, s in self.param_summary(e).items():
                rows.append({**base, "estimator": e, "quantity": "parameter", "parameter": p,
                             **{k: _fmt(s[k]) for k in ("true", "mean", "sd", "bias", "rel_bias_pct", "rmse")},
                             "value": "", "n_ok": s["n_ok"], "failures": fails})
            for k, v in self.mise(e).items():
                rows.append({**base, "estimator": e, "quantity": "mise", "parameter": k, "value": _fmt(v),
                             "n_ok": self.reps - fails, "failures": fails})
            for q, v in (("eta2_mse", self.eta2_mse(e)), ("test_error", self.test_error(e))):
                rows.append({**base, "estimator": e, "quantity": q, "parameter": "", "value": _fmt(v),
                             "n_ok": self.reps - fails, "failures": fails})
        return rows

    def to_csv(self, path=None, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_COLUMNS, lineterminator="\n", restval="")
        if header:
            w.writeheader()
        for r in self.csv_rows():
            w.writerow(r)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None, raw: bool = False) -> str:
        d = self.summary()
        if raw:
            d["replications"] = self.raw
        text = json.dumps(d, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def mc_study(dgp: DGPSpec, estimators=("GASSM", "GAM"), reps: int = 100, seed: int = 0, threads: int = 1,
             progress=None) -> MCReport:
    """Run ``reps`` seeded replications of ``dgp`` and fit every estimator on each.

    Replication ``r`` uses child ``r`` of ``SeedSequence(seed)``, so results
    do not depend on ``threads``.  Fit failures are recorded per
    replication and excluded from the summaries.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    for e in estimators:
        if e not in ESTIMATORS:
            raise ValueError(f"unknown estimator {e!r}")
    children = np.random.SeedSequence(int(seed)).spawn(int(reps))
    points = _eval_points(dgp, seed)
    tasks = [(dgp, tuple(estimators), c, points) for c in children]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            raw = list(ex.map(_one_rep, tasks))
    else:
        raw = []
        for i, t in enumerate(tasks):
            raw.append(_one_rep(t))
            if progress is not None:
                progress(i + 1, reps)
    c = dgp.constants
    cop = dgp.make_copula()
    return MCReport(dgp.which, dgp.n, c["copula"], float(cop.theta), float(cop.kendall_tau()), int(reps), int(seed),
                    list(estimators), _true_params(dgp), raw)
