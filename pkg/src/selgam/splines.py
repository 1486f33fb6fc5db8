"""B-spline bases on [0, 1], difference penalties and design matrices.

Each smooth term uses ``K`` equal-width knot intervals and degree ``p``
(``K + p`` basis functions).  Smooths are made identifiable by absorbing a
sum-to-zero constraint over the observed rows, which removes one column
per smooth; each equation then carries a single intercept column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DataError, Dataset, EquationSpec, ModelSpec

__all__ = [
    "KnotVector",
    "make_knots",
    "bspline_row",
    "bspline_basis",
    "difference_matrix",
    "difference_penalty",
    "TermDesign",
    "EquationDesign",
    "DesignBlocks",
    "build_equation",
    "build_design",
]


@dataclass(frozen=True)
class KnotVector:
    K: int
    p: int
    knots: np.ndarray

    @property
    def n_basis(self) -> int:
        return self.K + self.p


def make_knots(K: int, p: int) -> KnotVector:
    """Equidistant interior knots with ``p + 1`` coincident knots at 0 and 1."""
    if K < 1 or p < 0:
        raise ValueError("need K >= 1 and p >= 0")
    inner = np.linspace(0.0, 1.0, K + 1)
    knots = np.concatenate([np.zeros(p), inner, np.ones(p)])
    return KnotVector(K, p, knots)


def bspline_basis(x, kv: KnotVector) -> np.ndarray:
    """Cox-de Boor recursion for every basis function at every ``x``.

    Returns an ``(len(x), K + p)`` array.  The right end point ``x = 1`` is
    assigned to the last non-degenerate interval so the basis still sums
    to one there.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise DataError("B-spline arguments must lie in [0, 1]; rescale covariates first")
    t = kv.knots
    nint = t.size - 1
    B = np.zeros((x.size, nint))
    for i in range(nint):
        if t[i] < t[i + 1]:
            B[:, i] = (t[i] <= x) & (x < t[i + 1])
    last = kv.p + kv.K - 1
    B[x == 1.0, last] = 1.0
    for d in range(1, kv.p + 1):
        nb = nint - d
        new = np.zeros((x.size, nb))
        for i in range(nb):
            left = t[i + d] - t[i]
            right = t[i + d + 1] - t[i + 1]
            if left > 0:
                new[:, i] += (x - t[i]) / left * B[:, i]
            if right > 0:
                new[:, i] += (t[i + d + 1] - x) / right * B[:, i + 1]
        B = new
    return B


def bspline_row(x: float, kv: KnotVector) -> np.ndarray:
    return bspline_basis(np.array([x]), kv)[0]


def difference_matrix(m: int, dim: int) -> np.ndarray:
    if not 1 <= m < dim:
        raise ValueError("difference order must satisfy 1 <= m < dim")
    return np.diff(np.eye(dim), n=m, axis=0)


def difference_penalty(m: int, dim: int) -> np.ndarray:
    """``Delta_m^T Delta_m`` for the ``m``-th order difference matrix."""
    D = difference_matrix(m, dim)
    return D.T @ D


@dataclass
class TermDesign:
    name: str
    kind: str
    cols: slice
    lo: float = 0.0
    hi: float = 1.0
    Z: np.ndarray | None = None
    penalty: np.ndarray | None = None
    kv: KnotVector | None = None

    def rescale(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)

    def basis(self, x, clip: bool = False) -> np.ndarray:
        if self.kind == "linear":
            return np.asarray(x, dtype=float)[:, None]
        s = self.rescale(x)
        if clip:
            s = np.clip(s, 0.0, 1.0)
        return bspline_basis(s, self.kv) @ self.Z

    def to_dict(self) -> dict:
        d = {"name": self.name, "type": self.kind, "cols": [self.cols.start, self.cols.stop]}
        if self.kind == "smooth":
            d.update(lo=self.lo, hi=self.hi, K=self.kv.K, p=self.kv.p, Z=self.Z.tolist(),
                     penalty=self.penalty.tolist())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TermDesign":
        cols = slice(*d["cols"])
        if d["type"] == "linear":
            return cls(d["name"], "linear", cols)
        return cls(d["name"], "smooth", cols, d["lo"], d["hi"], np.array(d["Z"]),
                   np.array(d["penalty"]), make_knots(d["K"], d["p"]))


@dataclass
class EquationDesign:
    """Column layout ``[intercept | term_1 | ... | term_D]`` of one equation."""

    terms: list[TermDesign] = field(default_factory=list)
    ncol: int = 1

    @property
    def smooth_terms(self) -> list[TermDesign]:
        return [t for t in self.terms if t.kind == "smooth"]

    def matrix(self, covariates: dict, clip: bool = False) -> np.ndarray:
        n = len(next(iter(covariates.values()))) if covariates else 0
        X = np.zeros((n, self.ncol))
        if self.ncol:
            X[:, 0] = 1.0
        for t in self.terms:
            if t.name not in covariates:
                raise DataError(f"missing covariate {t.name!r}")
            X[:, t.cols] = t.basis(covariates[t.name], clip=clip)
        return X

    def penalty(self, lambdas) -> np.ndarray:
        S = np.zeros((self.ncol, self.ncol))
        for lam, t in zip(lambdas, self.smooth_terms):
            S[t.cols, t.cols] += lam * t.penalty
        return S

    def to_dict(self) -> dict:
        return {"ncol": self.ncol, "terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "EquationDesign":
        return cls([TermDesign.from_dict(t) for t in d["terms"]], d["ncol"])


@dataclass
class DesignBlocks:
    X1: np.ndarray
    X2: np.ndarray
    eq1: EquationDesign
    eq2: EquationDesign


def _sum_to_zero_basis(colsum: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the complement of ``colsum`` (via QR)."""
    q, _ = np.linalg.qr(colsum[:, None], mode="complete")
    return q[:, 1:]


def build_equation(covariates: dict, eq: EquationSpec, K: int, p: int, m: int) -> EquationDesign:
    kv = make_knots(K, p)
    P = difference_penalty(m, kv.n_basis)
    terms = []
    col = 1
    for term in eq.terms:
        if term.name not in covariates:
            raise DataError(f"missing covariate {term.name!r}")
        x = np.asarray(covariates[term.name], dtype=float)
        lo, hi = float(np.min(x)), float(np.max(x))
        if hi <= lo:
            raise DataError(f"covariate {term.name!r} is constant; design is degenerate")
        if term.kind == "linear":
            terms.append(TermDesign(term.name, "linear", slice(col, col + 1)))
            col += 1
            continue
        B = bspline_basis((x - lo) / (hi - lo), kv)
        Z = _sum_to_zero_basis(B.sum(axis=0))
        width = Z.shape[1]
        terms.append(TermDesign(term.name, "smooth", slice(col, col + width), lo, hi, Z, Z.T @ P @ Z, kv))
        col += width
    return EquationDesign(terms, col)


def build_design(data: Dataset, spec: ModelSpec) -> DesignBlocks:
    K, p, m = spec.knots, spec.degree, spec.penalty_order
    eq1 = build_equation(data.covariates, spec.selection, K, p, m)
    eq2 = build_equation(data.covariates, spec.outcome, K, p, m)
    X1 = eq1.matrix(data.covariates)
    X2 = eq2.matrix(data.covariates)
    for X, name in ((X1, "selection"), (X2, "outcome")):
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise DataError(f"{name} design matrix is rank deficient")
    return DesignBlocks(X1, X2, eq1, eq2)
