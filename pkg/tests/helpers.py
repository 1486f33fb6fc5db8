"""Shared fixtures for the derivative checks and fitting tests."""

import numpy as np

from selgam.copulas import Copula
from selgam.likelihood import SelectionLikelihood
from selgam.simulate import DGPSpec, consistency_model, generate
from selgam.splines import build_design

FAMILIES = ["normal", "clayton", "joe", "frank", "gumbel", "amh"]
MARGINS = ["gaussian", "gamma"]
TAU_RANGE = {"normal": (-0.6, 0.8), "clayton": (0.05, 0.8), "joe": (0.05, 0.8), "frank": (-0.6, 0.8),
             "gumbel": (0.05, 0.8), "amh": (-0.15, 0.3)}


def small_problem(family, margin, n=150, knots=5, seed=0):
    """A two-smooth-per-equation likelihood on simulated data."""
    data = generate(DGPSpec("consistency", n=n, seed=seed))
    if margin == "gaussian":
        out = np.where(data.selected, np.log(np.where(data.selected, data.out, 1.0)), np.nan)
        data = data.with_outcome(out)
    spec = consistency_model(family, margin, knots=knots)
    design = build_design(data, spec)
    return SelectionLikelihood.from_design(design, data, spec), data, spec


def random_point(lik, family, rng, min_gap=1e-4):
    """Random parameter vector with ``1 - z >= min_gap`` on every selected row.

    Where ``1 - z`` is tiny, ``log(1 - z)`` loses most of its digits in double
    precision and central differences stop being a usable reference.
    """
    while True:
        x = _draw(lik, family, rng)
        z = lik.evaluate(x, order=0).z
        if np.min(1.0 - z[lik.sel]) >= min_gap:
            return x


def _draw(lik, family, rng):
    x = rng.normal(0.0, 0.3, lik.M)
    x[0] = rng.uniform(-0.2, 0.8)
    x[lik.p1] = rng.uniform(-1.5, 0.0) if lik.margin_family == "gamma" else rng.uniform(-2.0, -0.5)
    lo, hi = TAU_RANGE[family]
    tau = rng.uniform(lo, hi)
    if family == "frank" and abs(tau) < 0.02:
        tau = 0.1
    x[lik.idx_t] = Copula.from_tau(family, tau).t
    x[lik.idx_a] = rng.uniform(-0.7, 1.0)
    return x


def fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_hessian(grad, x, h=1e-5):
    H = np.empty((x.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        H[:, i] = (grad(x + e) - grad(x - e)) / (2 * h)
    return H


def rel_err(a, b):
    """Largest elementwise ``|a - b| / max(|b|, 1)``."""
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0)))


def derivative_errors(lik, x, lam):
    ev = lik.evaluate(x, lam, order=2)
    g_fd = fd_gradient(lambda y: lik.evaluate(y, lam, order=0).penalized, x)
    H_fd = fd_hessian(lambda y: lik.evaluate(y, lam, order=1).penalized_gradient, x)
    return rel_err(ev.penalized_gradient, g_fd), rel_err(ev.penalized_hessian, H_fd)


def heckman_data(n, rho, seed, sigma=1.5):
    """Bivariate normal selection data with one exclusion covariate ``z``."""
    from selgam.model import Dataset

    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    z = rng.normal(size=n)
    e = rng.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]], size=n)
    sel = (0.3 + 0.8 * x - 1.0 * z + e[:, 0] > 0).astype(int)
    y = 1.0 + 0.5 * x + sigma * e[:, 1]
    return Dataset(sel, np.where(sel == 1, y, np.nan), {"x": x, "z": z})
