"""Model specification and dataset containers, with their JSON/CSV forms."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .copulas import FAMILIES

__all__ = ["Term", "EquationSpec", "ModelSpec", "Dataset", "DataError"]


class DataError(ValueError):
    """Malformed dataset or model specification."""


@dataclass(frozen=True)
class Term:
    name: str
    kind: str = "smooth"

    def __post_init__(self):
        if self.kind not in ("smooth", "linear"):
            raise DataError(f"term {self.name!r}: type must be 'smooth' or 'linear'")


@dataclass(frozen=True)
class EquationSpec:
    terms: tuple[Term, ...] = ()

    @property
    def smooth_terms(self):
        return [t for t in self.terms if t.kind == "smooth"]


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of both equations.

    ``knots`` is the number of equal-width intervals ``K`` per smooth, so
    each smooth has ``K + degree`` B-spline basis functions before the
    sum-to-zero constraint removes one.
    """

    selection: EquationSpec
    outcome: EquationSpec
    margin: str = "gaussian"
    copula: str = "normal"
    degree: int = 3
    penalty_order: int = 2
    knots: int = 8
    theta: float | None = None
    fix_theta: bool = False
    aux: float | None = None
    fix_aux: bool = False

    def __post_init__(self):
        if self.margin not in ("gaussian", "gamma"):
            raise DataError(f"unknown margin {self.margin!r}")
        if self.copula not in FAMILIES:
            raise DataError(f"unknown copula {self.copula!r}")
        if self.degree < 0 or self.knots < 1:
            raise DataError("degree must be >= 0 and knots >= 1")
        if not 1 <= self.penalty_order < self.knots + self.degree:
            raise DataError("penalty order must satisfy 1 <= m < K + p")
        if self.fix_theta and self.theta is None and self.copula != "independence":
            raise DataError("fix_theta requires theta")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        def eq(part):
            terms = part.get("terms", []) if isinstance(part, dict) else part
            return EquationSpec(tuple(Term(t["name"], t.get("type", "smooth")) for t in terms))

        known = {"margin", "copula", "degree", "penalty_order", "knots", "theta", "fix_theta",
                 "aux", "fix_aux"}
        unknown = set(d) - known - {"selection", "outcome", "tau"}
        if unknown:
            raise DataError(f"unknown model-spec keys: {sorted(unknown)}")
        kw = {k: d[k] for k in known if k in d}
        if "margin" in kw:
            kw["margin"] = kw["margin"].lower()
        if "copula" in kw:
            kw["copula"] = kw["copula"].lower()
        if d.get("tau") is not None:
            from .copulas import tau_to_theta

            kw["theta"] = tau_to_theta(kw.get("copula", "normal"), d["tau"])
        return cls(eq(d["selection"]), eq(d["outcome"]), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        for part in ("selection", "outcome"):
            d[part] = {"terms": [{"name": t.name, "type": t.kind} for t in getattr(self, part).terms]}
        return d

    @classmethod
    def load(cls, path) -> "ModelSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"invalid model spec {path}: {exc}") from exc

    def replace(self, **kw) -> "ModelSpec":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return ModelSpec(**d)


@dataclass
class Dataset:
    """Selection indicator, outcome (NaN where unobserved) and covariates."""

    sel: np.ndarray
    out: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.sel = np.asarray(self.sel).astype(int)
        self.out = np.asarray(self.out, dtype=float)
        self.covariates = {k: np.asarray(v, dtype=float) for k, v in self.covariates.items()}
        n = self.sel.shape[0]
        if self.out.shape != (n,):
            raise DataError("sel and out must have equal length")
        if not np.all((self.sel == 0) | (self.sel == 1)):
            bad = int(np.flatnonzero((self.sel != 0) & (self.sel != 1))[0])
            raise DataError(f"row {bad}: selection indicator must be 0 or 1")
        missing = (self.sel == 1) & ~np.isfinite(self.out)
        if np.any(missing):
            raise DataError(f"row {int(np.flatnonzero(missing)[0])}: outcome missing for a selected row")
        for k, v in self.covariates.items():
            if v.shape != (n,):
                raise DataError(f"covariate {k!r} has wrong length")
            if not np.all(np.isfinite(v)):
                raise DataError(f"row {int(np.flatnonzero(~np.isfinite(v))[0])}: covariate {k!r} not finite")

    @property
    def n(self) -> int:
        return int(self.sel.shape[0])

    @property
    def selected(self) -> np.ndarray:
        return self.sel == 1

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.sel[mask], self.out[mask], {k: v[mask] for k, v in self.covariates.items()})

    def with_outcome(self, out) -> "Dataset":
        return Dataset(self.sel, out, self.covariates)

    # ---- CSV ----

    def to_csv(self, path) -> None:
        names = list(self.covariates)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sel", "out", *names])
            for i in range(self.n):
                out = repr(float(self.out[i])) if self.sel[i] == 1 else ""
                w.writerow([int(self.sel[i]), out, *(repr(float(self.covariates[k][i])) for k in names)])

    @classmethod
    def from_csv(cls, path, sel_col: str = "sel", out_col: str = "out") -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            for col in (sel_col, out_col):
                if col not in header:
                    raise DataError(f"{path}: missing column {col!r}")
            rows = list(reader)
        isel, iout = header.index(sel_col), header.index(out_col)
        cov_names = [h for j, h in enumerate(header) if j not in (isel, iout)]
        n = len(rows)
        sel = np.empty(n, dtype=int)
        out = np.full(n, np.nan)
        cov = {k: np.empty(n) for k in cov_names}
        for i, row in enumerate(rows):
            if len(row) != len(header):
                raise DataError(f"row {i}: expected {len(header)} fields, got {len(row)}")
            try:
                sel[i] = int(float(row[isel]))
                if row[iout].strip() != "":
                    out[i] = float(row[iout])
                for j, h in enumerate(header):
                    if j not in (isel, iout):
                        cov[h][i] = float(row[j])
            except ValueError as exc:
                raise DataError(f"row {i}: {exc}") from None
            if sel[i] == 1 and not np.isfinite(out[i]):
                raise DataError(f"row {i}: outcome missing for a selected row")
        out[sel == 0] = np.nan
        return cls(sel, out, cov)
