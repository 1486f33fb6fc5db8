import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selgam.model import DataError, Dataset, EquationSpec, ModelSpec, Term
from selgam.splines import (
    EquationDesign,
    bspline_basis,
    bspline_row,
    build_design,
    build_equation,
    difference_matrix,
    difference_penalty,
    make_knots,
)


def test_knot_examples():
    np.testing.assert_array_equal(make_knots(2, 1).knots, [0, 0, 0.5, 1, 1])
    np.testing.assert_array_equal(make_knots(1, 0).knots, [0, 1])
    kv = make_knots(4, 3)
    assert kv.knots.size == 4 + 2 * 3 + 1
    np.testing.assert_allclose(np.diff(kv.knots[3:8]), 0.25)
    assert kv.n_basis == 7


def test_knots_invalid():
    with pytest.raises(ValueError):
        make_knots(0, 3)


def test_hand_evaluated_row():
    np.testing.assert_allclose(bspline_row(0.25, make_knots(2, 1)), [0.5, 0.5, 0.0], atol=1e-15)


def test_degree_zero_indicators():
    kv = make_knots(4, 0)
    x = np.array([0.0, 0.1, 0.25, 0.6, 0.99])
    B = bspline_basis(x, kv)
    expected = np.zeros((5, 4))
    expected[[0, 1, 2, 3, 4], [0, 0, 1, 2, 3]] = 1
    np.testing.assert_array_equal(B, expected)


def test_right_endpoint():
    for p in (0, 1, 3):
        row = bspline_row(1.0, make_knots(5, p))
        assert row.sum() == pytest.approx(1.0)
        assert row[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("K,p", [(1, 0), (2, 1), (8, 3), (5, 2), (13, 4)])
def test_partition_of_unity_and_support(K, p):
    kv = make_knots(K, p)
    x = np.random.default_rng(K * 10 + p).uniform(0, 1, 1000)
    B = bspline_basis(x, kv)
    assert B.shape == (1000, K + p)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert B.min() >= 0 and B.max() <= 1 + 1e-15
    assert np.all((B > 0).sum(axis=1) <= p + 1)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_gram_matrix_is_banded(p):
    kv = make_knots(7, p)
    B = bspline_basis(np.random.default_rng(p).uniform(0, 1, 400), kv)
    G = B.T @ B
    i, j = np.nonzero(G)
    assert np.max(np.abs(i - j)) <= p


def test_out_of_range_raises():
    with pytest.raises(DataError):
        bspline_basis(np.array([1.2]), make_knots(3, 2))
    with pytest.raises(DataError):
        bspline_basis(np.array([np.nan]), make_knots(3, 2))


def test_difference_penalty_examples():
    np.testing.assert_array_equal(difference_penalty(1, 3), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    P = difference_penalty(2, 5)
    a = np.arange(5.0)
    assert a @ P @ a == pytest.approx(0.0, abs=1e-12)
    for m in (1, 2, 3):
        c = np.full(8, 3.7)
        assert c @ difference_penalty(m, 8) @ c == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        difference_matrix(5, 5)


@settings(max_examples=25, deadline=None)
@given(m=st.integers(1, 4), extra=st.integers(1, 10))
def test_penalty_psd_with_polynomial_null_space(m, extra):
    dim = m + extra
    P = difference_penalty(m, dim)
    w = np.linalg.eigvalsh(P)
    assert w.min() > -1e-10
    assert np.linalg.matrix_rank(P) == dim - m
    k = np.arange(dim, dtype=float)
    for deg in range(m):
        q = k**deg
        assert abs(q @ P @ q) < 1e-8 * max(1.0, q @ q)


def _data(n=60, seed=0):
    rng = np.random.default_rng(seed)
    cov = {"a": rng.uniform(2, 5, n), "b": rng.normal(size=n), "c": rng.integers(0, 2, n).astype(float)}
    sel = np.ones(n, dtype=int)
    return Dataset(sel, rng.normal(size=n), cov)


def test_design_layout_and_centering():
    d = _data()
    K, p = 6, 3
    eq = build_equation(d.covariates, EquationSpec((Term("a"), Term("b"), Term("c", "linear"))), K, p, 2)
    assert isinstance(eq, EquationDesign)
    assert eq.ncol == 1 + 2 * (K + p - 1) + 1
    X = eq.matrix(d.covariates)
    np.testing.assert_array_equal(X[:, 0], 1.0)
    lin = eq.terms[2]
    np.testing.assert_array_equal(X[:, lin.cols][:, 0], d.covariates["c"])
    for t in eq.smooth_terms:
        np.testing.assert_allclose(X[:, t.cols].sum(axis=0), 0.0, atol=1e-10)
        B = bspline_basis(t.rescale(d.covariates[t.name]), t.kv)
        np.testing.assert_allclose(X[:, t.cols], B @ t.Z, atol=1e-14)
        # the centred block spans every non-constant direction of the raw basis
        resid = B - X[:, t.cols] @ np.linalg.lstsq(X[:, t.cols], B, rcond=None)[0]
        assert np.linalg.matrix_rank(resid, tol=1e-8) == 1


def test_small_design_rows_are_basis_rows():
    cov = {"x": np.array([0.0, 0.5, 1.0])}
    eq = build_equation(cov, EquationSpec((Term("x"),)), 2, 1, 1)
    t = eq.terms[0]
    B = np.vstack([bspline_row(x, make_knots(2, 1)) for x in cov["x"]])
    np.testing.assert_allclose(eq.matrix(cov)[:, t.cols], B @ t.Z, atol=1e-15)


def test_penalty_block_is_projected_difference_penalty():
    d = _data()
    eq = build_equation(d.covariates, EquationSpec((Term("a"),)), 8, 3, 2)
    t = eq.terms[0]
    np.testing.assert_allclose(t.penalty, t.Z.T @ difference_penalty(2, 11) @ t.Z)
    S = eq.penalty([2.5])
    np.testing.assert_allclose(S[t.cols, t.cols], 2.5 * t.penalty)
    assert np.all(S[0] == 0)


def test_constant_covariate_rejected():
    d = _data()
    d.covariates["a"] = np.full(d.n, 3.0)
    with pytest.raises(DataError, match="constant"):
        build_equation(d.covariates, EquationSpec((Term("a"),)), 8, 3, 2)


def test_missing_covariate_rejected():
    d = _data()
    with pytest.raises(DataError, match="missing"):
        build_equation(d.covariates, EquationSpec((Term("zz"),)), 8, 3, 2)


def test_prediction_uses_stored_rescaling():
    d = _data()
    eq = build_equation(d.covariates, EquationSpec((Term("a"),)), 5, 3, 2)
    X = eq.matrix(d.covariates)
    back = EquationDesign.from_dict(eq.to_dict())
    np.testing.assert_array_equal(back.matrix(d.covariates), X)
    with pytest.raises(DataError):
        back.matrix({"a": np.array([100.0])})
    clipped = back.matrix({"a": np.array([100.0])}, clip=True)
    np.testing.assert_allclose(clipped, back.matrix({"a": np.array([d.covariates["a"].max()])}))


def test_build_design_blocks():
    d = _data()
    spec = ModelSpec(EquationSpec((Term("a"), Term("c", "linear"))), EquationSpec((Term("b"),)), knots=4)
    blocks = build_design(d, spec)
    assert blocks.X1.shape == (d.n, 1 + (4 + 3 - 1) + 1)
    assert blocks.X2.shape == (d.n, 1 + (4 + 3 - 1))
