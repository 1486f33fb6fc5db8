import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from oracles import DERIV_ORDERS, mp_copula_cdf, mp_copula_partial
from selgam.copulas import (
    FRANK_PUNCTURE,
    Copula,
    UnsupportedGeneratorError,
    copula_cdf,
    copula_derivs,
    copula_sample,
    generator,
    generator_inverse,
    kendall_tau,
    tau_to_theta,
)

THETAS = {
    "clayton": [0.5, 2.0, 8.0],
    "joe": [1.5, 3.0, 6.0],
    "frank": [-5.0, -0.5, 0.5, 5.0],
    "gumbel": [1.2, 3.0, 6.0],
    "amh": [-0.8, 0.3, 0.9],
    "normal": [-0.7, 0.0, 0.5, 0.9],
}
CASES = [(f, th) for f, ths in THETAS.items() for th in ths]
ARCH = ["clayton", "joe", "frank", "gumbel", "amh"]


# --- worked values ---------------------------------------------------------


def test_clayton_values():
    c = Copula("clayton", 2.0)
    np.testing.assert_allclose(copula_cdf(c, 0.5, 0.5), 7**-0.5, rtol=1e-14)
    np.testing.assert_allclose(copula_derivs(c, 0.5, 0.5).dv, 8 * 7**-1.5, rtol=1e-13)


def test_clayton_value_by_density_integration():
    c = Copula("clayton", 2.0)
    val, _ = integrate.dblquad(lambda v, u: c.density(u, v), 0, 0.5, 0, 0.5, epsabs=1e-10)
    np.testing.assert_allclose(val, 7**-0.5, rtol=1e-6)


@pytest.mark.parametrize("family,theta", CASES)
def test_uniform_margin_example(family, theta):
    assert copula_cdf(Copula(family, theta), 0.3, 1.0) == pytest.approx(0.3, abs=1e-12)


def test_frank_independence_limit():
    c = Copula("frank", 1e-8)
    assert abs(copula_cdf(c, 0.4, 0.6) - 0.24) < 1e-7
    u = np.linspace(0.05, 0.95, 7)
    np.testing.assert_allclose(copula_derivs(c, u, 0.37).dv, u, atol=1e-7)
    assert abs(c.kendall_tau()) < 1e-6  # theta is punctured to 1e-6


@pytest.mark.parametrize("family,theta", CASES)
def test_dv_is_one_at_u_one(family, theta):
    v = np.linspace(0.01, 0.99, 9)
    np.testing.assert_allclose(copula_derivs(Copula(family, theta), np.ones_like(v), v).dv, 1.0, atol=1e-12)


def test_generator_values():
    assert generator(Copula("clayton", 1.0), 0.5) == pytest.approx(1.0, rel=1e-14)
    assert generator(Copula("gumbel", 2.0), np.exp(-1.0)) == pytest.approx(1.0, rel=1e-14)
    for f in ARCH:
        assert generator(Copula(f, THETAS[f][1]), 1.0) == pytest.approx(0.0, abs=1e-15)


def test_normal_has_no_generator():
    with pytest.raises(UnsupportedGeneratorError):
        generator(Copula("normal", 0.3), 0.5)


def test_tau_values():
    assert kendall_tau(Copula("gumbel", 3.0)) == pytest.approx(2 / 3, abs=1e-14)
    assert kendall_tau(Copula("clayton", 2.0)) == pytest.approx(0.5, abs=1e-14)
    assert kendall_tau(Copula("normal", np.sin(np.pi / 4))) == pytest.approx(0.5, abs=1e-14)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        Copula("clayton", -1.0)
    with pytest.raises(ValueError):
        Copula("joe", 0.5)
    with pytest.raises(ValueError):
        Copula("normal", 1.0)
    with pytest.raises(ValueError):
        Copula("frank", 0.0)
    with pytest.raises(ValueError):
        copula_cdf(Copula("clayton", 1.0), 1.2, 0.3)
    with pytest.raises(ValueError):
        tau_to_theta("clayton", -0.2)
    with pytest.raises(ValueError):
        tau_to_theta("amh", 0.5)


# --- structural properties -------------------------------------------------


@pytest.mark.parametrize("family,theta", CASES)
def test_boundary_conditions_exact(family, theta):
    c = Copula(family, theta)
    g = np.linspace(0.0, 1.0, 21)
    np.testing.assert_allclose(c.cdf(g, np.ones_like(g)), g, atol=1e-12)
    np.testing.assert_allclose(c.cdf(np.ones_like(g), g), g, atol=1e-12)
    np.testing.assert_allclose(c.cdf(np.zeros_like(g), g), 0.0, atol=1e-12)
    np.testing.assert_allclose(c.cdf(g, np.zeros_like(g)), 0.0, atol=1e-12)


@pytest.mark.parametrize("family,theta", CASES)
def test_two_increasing_on_lattice(family, theta):
    c = Copula(family, theta)
    g = np.linspace(0.0, 1.0, 51)
    U, V = np.meshgrid(g, g, indexing="ij")
    C = c.cdf(U, V)
    mass = C[1:, 1:] - C[:-1, 1:] - C[1:, :-1] + C[:-1, :-1]
    assert mass.min() >= -1e-12


@pytest.mark.parametrize("family,theta", [(f, THETAS[f][1]) for f in THETAS] + [("clayton", 8.0), ("frank", -5.0)])
def test_density_integrates_to_one(family, theta):
    c = Copula(family, theta)
    val, _ = integrate.dblquad(lambda v, u: float(c.density(u, v)), 0, 1, 0, 1, epsabs=1e-6, epsrel=1e-6)
    assert abs(val - 1.0) < 1e-3


@pytest.mark.parametrize("family,theta", CASES)
def test_h_is_conditional_cdf(family, theta):
    # dC/dv(., v) is the conditional cdf of U given V = v
    c = Copula(family, theta)
    u = np.linspace(0.0, 1.0, 201)
    for v in (0.05, 0.5, 0.95):
        h = c.h(u, np.full_like(u, v))
        assert np.all(np.diff(h) >= -1e-12)
        assert h[0] == pytest.approx(0.0, abs=1e-10)
        assert h[-1] == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("family", ARCH)
def test_generator_additivity_and_shape(family):
    for theta in THETAS[family]:
        c = Copula(family, theta)
        g = np.linspace(0.02, 0.98, 15)
        U, V = np.meshgrid(g, g)
        np.testing.assert_allclose(c.generator(c.cdf(U, V)), c.generator(U) + c.generator(V), rtol=1e-9, atol=1e-12)
        t = np.linspace(0.01, 1.0, 200)
        d = c.generator_deriv(t)
        assert np.all(d[:-1] < 0) and d[-1] <= 0  # phi'(1) = 0 for Gumbel and Joe
        assert np.all(np.diff(d) >= -1e-12)  # convex
        np.testing.assert_allclose(c.generator_inverse(c.generator(t)), t, rtol=1e-10)


@pytest.mark.parametrize("family", ["clayton", "gumbel", "frank", "joe", "amh"])
def test_tau_closed_form_vs_generator_integral(family):
    for theta in THETAS[family]:
        c = Copula(family, theta)
        assert abs(c.kendall_tau() - c.kendall_tau_numeric()) < 1e-6


@settings(max_examples=30, deadline=None)
@given(family=st.sampled_from(["clayton", "gumbel", "frank", "joe", "normal", "amh"]), frac=st.floats(0.05, 0.95))
def test_tau_to_theta_inverts(family, frac):
    lo, hi = {"clayton": (0, 0.95), "gumbel": (0, 0.95), "joe": (0.01, 0.9), "frank": (-0.9, 0.9),
              "normal": (-0.95, 0.95), "amh": (-0.18, 0.33)}[family]
    tau = lo + frac * (hi - lo)
    if family == "frank" and abs(tau) < 1e-3:
        return
    theta = tau_to_theta(family, tau)
    assert abs(Copula(family, theta).kendall_tau() - tau) < 1e-8


@pytest.mark.parametrize("family,theta", CASES)
def test_unconstrained_round_trip(family, theta):
    c = Copula(family, theta)
    back = Copula.from_unconstrained(family, c.t)
    assert back.theta == pytest.approx(theta, rel=1e-12, abs=1e-12)


def test_frank_puncture():
    assert abs(Copula.from_unconstrained("frank", 0.0).theta) == FRANK_PUNCTURE


def test_clamped_inputs_flagged():
    c = Copula("clayton", 2.0)
    assert c.derivs(np.array([0.0, 0.5]), np.array([0.5, 1.0])).clamped == 2
    assert c.derivs(0.4, 0.6).clamped == 0


# --- derivatives vs arbitrary-precision differentiation ----------------------


def _points(n, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, size=(n, 2))


@pytest.mark.parametrize("family,theta", [(f, THETAS[f][1]) for f in THETAS] + [("frank", -5.0), ("amh", -0.8)])
def test_derivs_match_mpmath(family, theta):
    c = Copula(family, theta)
    pts = _points(100, sum(map(ord, family)))
    d = c.derivs(pts[:, 0], pts[:, 1])
    for name, orders in DERIV_ORDERS.items():
        ref = np.array([mp_copula_partial(family, u, v, theta, orders) for u, v in pts])
        got = getattr(d, name)
        scale = np.maximum(np.abs(ref), 1e-3)
        assert np.max(np.abs(got - ref) / scale) < 1e-5, name
    ref_c = np.array([float(mp_copula_cdf(family, u, v, theta)) for u, v in pts[:5]]) if family != "normal" else None
    if ref_c is not None:
        np.testing.assert_allclose(d.c[:5], ref_c, rtol=1e-12)


def test_frank_series_branch_derivatives():
    # |theta| below the series threshold
    theta = 3e-3
    c = Copula("frank", theta)
    pts = _points(5, 3)
    d = c.derivs(pts[:, 0], pts[:, 1])
    for name, orders in DERIV_ORDERS.items():
        ref = np.array([mp_copula_partial("frank", u, v, theta, orders) for u, v in pts])
        np.testing.assert_allclose(getattr(d, name), ref, rtol=1e-5, atol=1e-8, err_msg=name)


# --- sampling --------------------------------------------------------------


@pytest.mark.parametrize("family,theta,tau_tol", [
    ("clayton", 2.0, 0.03), ("gumbel", 3.0, 0.03), ("frank", 5.0, 0.03), ("joe", 3.0, 0.03),
    ("amh", 0.7, 0.03), ("normal", 0.5, 0.03), ("frank", -5.0, 0.03)])
def test_sample_tau_and_uniform_margins(family, theta, tau_tol):
    c = Copula(family, theta)
    uv = copula_sample(c, 10_000, seed=42)
    assert uv.shape == (10_000, 2)
    tau_hat = stats.kendalltau(uv[:, 0], uv[:, 1])[0]
    assert abs(tau_hat - c.kendall_tau()) < tau_tol
    for j in range(2):
        assert stats.kstest(uv[:, j], "uniform").pvalue > 0.01


def test_independence_sample_tau():
    uv = copula_sample(Copula("frank", 1e-8), 10_000, seed=5)
    n = uv.shape[0]
    se = np.sqrt(2 * (2 * n + 5) / (9 * n * (n - 1)))
    assert abs(stats.kendalltau(uv[:, 0], uv[:, 1])[0]) < 3 * se


def test_gumbel_frailty_matches_conditional_method():
    c = Copula("gumbel", 3.0)
    a = c.sample(5000, seed=1, method="frailty")
    b = c.sample(5000, seed=2, method="conditional")
    for j in range(2):
        assert stats.ks_2samp(a[:, j], b[:, j]).pvalue > 0.01
    assert abs(stats.kendalltau(*a.T)[0] - stats.kendalltau(*b.T)[0]) < 0.04


def test_sample_reproducible():
    c = Copula("clayton", 2.0)
    np.testing.assert_array_equal(c.sample(100, seed=9), c.sample(100, seed=9))


@pytest.mark.parametrize("family,theta", [("normal", 0.5), ("clayton", 2.0), ("gumbel", 3.0), ("joe", 3.0)])
@pytest.mark.parametrize("vbar", [1e-6, 3.3e-12])
def test_upper_tail_with_exact_complement(family, theta, vbar):
    # v = 1 - vbar rounds in double precision; the complement argument does not
    import mpmath as mp

    c = Copula(family, theta)
    u = np.array([0.2, 0.6, 0.9])
    d = c.derivs(u, np.full(3, 1.0 - vbar), vbar=np.full(3, vbar))
    with mp.workdps(60):
        v = 1 - mp.mpf(vbar)
        for name in ("dv", "dvv", "duv"):
            ref = [mp_copula_partial(family, mp.mpf(x), v, theta, DERIV_ORDERS[name]) for x in u]
            np.testing.assert_allclose(getattr(d, name), ref, rtol=1e-6, atol=1e-300, err_msg=name)
