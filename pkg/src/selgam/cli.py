"""Command-line interface: ``selgam fit | simulate | mc | report``.

Exit codes: 0 success, 2 input/parse error, 3 fit failure.  Errors are
also printed to stderr as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .copulas import tau_to_theta
from .likelihood import NonFiniteLikelihood
from .model import DataError, Dataset, ModelSpec
from .optimizer import ConvergenceError, fit
from .simulate import DGPSpec, MCReport, generate, mc_study, model_for

OUT_DIR_ENV = "SELGAM_OUT_DIR"
DEFAULT_OUT_DIR = "selgam-out"
DEFAULT_SEED = 20240101

EXIT_OK, EXIT_PARSE, EXIT_FIT = 0, 2, 3


class CLIError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _out_dir(args) -> Path:
    d = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


class _JSONFormatter(logging.Formatter):
    def format(self, record):
        d = {"level": record.levelname, "logger": record.name, "msg": record.getMessage()}
        if hasattr(record, "record"):
            d.update(record.record)
        return json.dumps(d, sort_keys=True)


# ---------------------------------------------------------------------------
# fit


def _load_spec(args) -> ModelSpec:
    spec = ModelSpec.load(args.model)
    kw = {}
    if args.margin:
        kw["margin"] = args.margin
    if args.copula:
        kw["copula"] = args.copula
    if kw:
        spec = spec.replace(**kw)
    if args.tau is not None:
        spec = spec.replace(theta=tau_to_theta(spec.copula, args.tau))
    if args.theta is not None:
        spec = spec.replace(theta=args.theta)
    if args.fix_theta:
        spec = spec.replace(fix_theta=True)
    return spec


def _curves(fm, out: Path) -> list:
    written = []
    for eq_name, eq, data_range in (("selection", fm.eq1, None), ("outcome", fm.eq2, None)):
        for t in eq.smooth_terms:
            grid = np.linspace(t.lo, t.hi, 200)
            est, se = fm.smooth(t.name, grid, equation=eq_name)
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["x", "estimate", "se", "lower", "upper"])
            for row in zip(grid, est, se, est - 1.96 * se, est + 1.96 * se):
                w.writerow([repr(float(v)) for v in row])
            name = f"curve_{eq_name}_{t.name}.csv"
            _write(out / name, buf.getvalue())
            written.append(name)
    return written


def cmd_fit(args) -> int:
    try:
        spec = _load_spec(args)
        data = Dataset.from_csv(args.data)
    except (DataError, ValueError, OSError) as exc:
        raise CLIError(EXIT_PARSE, "parse_error", str(exc)) from None
    out = _out_dir(args)
    try:
        fm = fit(data, spec)
    except DataError as exc:
        raise CLIError(EXIT_PARSE, "parse_error", str(exc)) from None
    except (ConvergenceError, NonFiniteLikelihood, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise CLIError(EXIT_FIT, "fit_failure", str(exc)) from None
    d = fm.to_dict()
    eta1, eta2 = fm.predict(data.covariates, clip=False)
    d["fitted_eta1"] = eta1.tolist()
    d["fitted_eta2"] = eta2.tolist()
    d["var_eta2"] = fm.eta_variance(data.covariates, "outcome", clip=False).tolist()
    d["seed"] = args.seed
    d["curves"] = _curves(fm, out)
    _write(out / "fit.json", _dump(d))
    print(f"wrote {out / 'fit.json'}")
    if not fm.convergence["converged"]:
        raise CLIError(EXIT_FIT, "fit_failure", "fit did not converge; best iterate written to fit.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _dgp(args, n, copula=None, tau=None) -> DGPSpec:
    return DGPSpec(args.study, n=n, copula=copula, tau=tau, theta=getattr(args, "theta", None), seed=args.seed)


def cmd_simulate(args) -> int:
    try:
        dgp = _dgp(args, args.n, args.copula, args.tau)
        data = generate(dgp)
    except ValueError as exc:
        raise CLIError(EXIT_PARSE, "parse_error", str(exc)) from None
    out = _out_dir(args)
    data.to_csv(out / "data.csv")
    consts = dgp.constants
    meta = {"study": dgp.which, "n": dgp.n, "seed": dgp.seed, "constants": consts,
            "tau": dgp.make_copula().kendall_tau()}
    _write(out / "dgp.json", _dump(meta))
    _write(out / "model.json", _dump(model_for(dgp).to_dict()))
    print(f"wrote {out / 'data.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# mc


def _series_rows(rep: MCReport) -> list:
    rows = []
    for e in rep.estimators:
        for p, s in rep.param_summary(e).items():
            rows.append((rep.n, rep.copula, rep.tau, e, f"mean_{p}", s["mean"]))
            rows.append((rep.n, rep.copula, rep.tau, e, f"rmse_{p}", s["rmse"]))
        for k, v in rep.mise(e).items():
            rows.append((rep.n, rep.copula, rep.tau, e, f"mise_{k}", v))
    return rows


def cmd_mc(args) -> int:
    study = args.study
    ns = args.n or ([500, 1000, 2000] if study == "consistency" else [1000])
    copulas = args.copula or [None]
    taus = args.tau or [None]
    estimators = args.estimators or (["GASSM", "GAM"] if study == "consistency" else ["GASSM", "L"])
    if args.reps < 1:
        raise CLIError(EXIT_PARSE, "parse_error", "--reps must be positive")
    out = _out_dir(args)
    reports = []
    total = ok = 0
    for cop in copulas:
        for tau in taus:
            for n in ns:
                try:
                    dgp = DGPSpec(study, n=n, copula=cop, tau=tau, seed=args.seed)
                    dgp.make_copula()
                except ValueError as exc:
                    raise CLIError(EXIT_PARSE, "parse_error", str(exc)) from None

                def progress(i, k, n=n, cop=cop, tau=tau):
                    if args.progress:
                        print(f"[{study} n={n} copula={cop} tau={tau}] {i}/{k}", file=sys.stderr)

                rep = mc_study(dgp, estimators, reps=args.reps, seed=args.seed, threads=args.threads,
                               progress=progress)
                reports.append(rep)
                for e in estimators:
                    total += rep.reps
                    ok += rep.reps - rep.failures(e)
    csv_text = "".join(r.to_csv(header=(i == 0)) for i, r in enumerate(reports))
    _write(out / f"mc_{study}.csv", csv_text)
    summaries = [r.summary() for r in reports]
    _write(out / f"mc_{study}.json", _dump({"study": study, "seed": args.seed, "reports": summaries}))
    if args.raw:
        _write(out / f"mc_{study}_raw.json", _dump([r.raw for r in reports]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "copula", "tau", "estimator", "series", "value"])
    for r in reports:
        for row in _series_rows(r):
            w.writerow([row[0], row[1], repr(float(row[2])), row[3], row[4], repr(float(row[5]))])
    _write(out / f"series_{study}.csv", buf.getvalue())
    print(f"wrote {out / f'mc_{study}.csv'}")
    if total and ok / total < 0.9:
        raise CLIError(EXIT_FIT, "fit_failure", f"only {ok}/{total} replications succeeded")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def load_reference() -> dict:
    text = resources.files("selgam").joinpath("data/reference.json").read_text(encoding="utf-8")
    return json.loads(text)


def _within(stat, ours, ref, tol) -> bool:
    if ours is None:
        return False
    if stat == "rel_bias_pct":
        return abs(ours - ref) <= max(tol["absolute"], tol["relative"] * abs(ref))
    return abs(ours - ref) <= tol["relative"] * abs(ref)


def compare(summaries: list, reference: dict) -> list:
    """Rows ``(section, label, ours, reference, pass)`` for every matching reference value."""
    tol = reference["tolerances"]
    rows = []
    for s in summaries:
        study = s["study"]
        for e, es in s["estimators"].items():
            for ref in reference.get(study, []):
                if ref["estimator"] != e:
                    continue
                if study == "consistency" and ref["n"] != s["n"]:
                    continue
                if study == "logged" and (ref["copula"] != s["copula"] or abs(ref["tau"] - s["tau"]) > 1e-6):
                    continue
                stat = ref["stat"]
                if stat == "test_error":
                    continue  # definition differs; not compared
                ps = es["params"].get(ref["parameter"])
                if ps is None:
                    continue
                ours = ps[stat]
                label = f"n={s['n']} copula={s['copula']} tau={s['tau']:.3g} {e} {stat}({ref['parameter']})"
                rows.append((study, label, ours, ref["value"], _within(stat, ours, ref["value"], tol[stat])))
    return rows


def cmd_report(args) -> int:
    if not args.inputs:
        raise CLIError(EXIT_PARSE, "missing_input", "no MC report files given")
    summaries = []
    for p in args.inputs:
        try:
            d = json.loads(Path(p).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(EXIT_PARSE, "missing_input", f"{p}: {exc}") from None
        summaries.extend(d["reports"] if "reports" in d else [d])
    if not summaries:
        raise CLIError(EXIT_PARSE, "missing_input", "input files contain no reports")
    ref = load_reference()
    lines = []
    for study in sorted({s["study"] for s in summaries}):
        lines.append(f"== {study} ==")
        for s in [x for x in summaries if x["study"] == study]:
            lines.append(f"-- n={s['n']} copula={s['copula']} tau={s['tau']:.4g} reps={s['reps']}")
            for e, es in s["estimators"].items():
                lines.append(f"   {e} (failures {es['failures']})")
                for p, ps in es["params"].items():
                    sd = "null" if ps["sd"] is None else f"{ps['sd']:.4f}"
                    rb = "null" if ps["rel_bias_pct"] is None else f"{ps['rel_bias_pct']:+.2f}%"
                    lines.append(f"     {p:6s} mean {ps['mean']:+.4f}  bias {rb}  sd {sd}  rmse {ps['rmse']:.4f}")
                for k, v in es["mise"].items():
                    lines.append(f"     MISE({k}) {v:.3e}")
                if es.get("eta2_mse") is not None:
                    lines.append(f"     MSE(eta2 grid) {es['eta2_mse']:.4e}  test error {es['test_error']:.4f}")
        rows = [r for r in compare(summaries, ref) if r[0] == study]
        if rows:
            lines.append("   reference comparison:")
            for _, label, ours, ref_value, ok in rows:
                lines.append(f"     [{'PASS' if ok else 'FAIL'}] {label}: ours {ours:.4g} reference {ref_value:.4g}")
    text = "\n".join(lines) + "\n"
    out = _out_dir(args)
    _write(out / "report.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selgam", description="Copula generalized additive sample selection models.")
    p.add_argument("--verbose", action="store_true", help="emit JSON log records (convergence trace) on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--threads", type=int, default=1)

    f = sub.add_parser("fit", help="fit a model to a CSV dataset")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--model", required=True, help="model spec JSON")
    f.add_argument("--copula")
    f.add_argument("--margin")
    f.add_argument("--tau", type=float)
    f.add_argument("--theta", type=float)
    f.add_argument("--fix-theta", action="store_true")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="generate a dataset from a simulation design")
    common(s)
    s.add_argument("--study", choices=["consistency", "logged"], default="consistency")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--copula")
    s.add_argument("--tau", type=float)
    s.add_argument("--theta", type=float)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("mc", help="run a Monte Carlo study")
    common(m)
    m.add_argument("--study", choices=["consistency", "logged"], default="consistency")
    m.add_argument("--n", type=int, nargs="+")
    m.add_argument("--copula", nargs="+")
    m.add_argument("--tau", type=float, nargs="+")
    m.add_argument("--reps", type=int, default=100)
    m.add_argument("--estimators", nargs="+", choices=["GASSM", "GAM", "L"])
    m.add_argument("--raw", action="store_true", help="also write per-replication results")
    m.add_argument("--progress", action="store_true")
    m.set_defaults(func=cmd_mc)

    r = sub.add_parser("report", help="summarize MC JSON files and compare with reference values")
    r.add_argument("inputs", nargs="*")
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code not in (0, None) else EXIT_OK
    if args.verbose:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(_JSONFormatter())
        logging.getLogger("selgam").addHandler(h)
        logging.getLogger("selgam").setLevel(logging.DEBUG)
    try:
        return args.func(args)
    except CLIError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc), "exit_code": exc.code}) + "\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
