"""
Command-line interface.

    multicmh test --input data.csv --x X --y Y --z Z1,Z2 [--out report.json]
    multicmh cmh  --input data.csv --x X --y Y --z Z1   (binary X and Y)
    multicmh sim  --scenario t1e|roc|scale|eta [--n 400 --d 10 --reps 100]

Exit status: 0 on success (whether or not the null is rejected), 2 on bad
input, 3 if an internal consistency check fails. Errors are reported as a
single ``error: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from .cmh import cmh_statistic, effect_estimate
from .multiscan import (ScanConfig, adjusted_alpha, config_dict, scan,
                        sidak_ladder)
from .simbench import (SCENARIOS, SimSpec, median_runtimes, run_eta_sweep,
                       run_roc, run_scaling, run_t1e)
from .stratify import medtree
from .tabulate import IngestError, rank_columns, read_csv


class InvariantError(RuntimeError):
    pass


# -- serialisation -------------------------------------------------------------

def _num(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if not math.isfinite(v):
        return "null"
    return format(v, ".17g")


def dumps(obj, indent: int = 1, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    return _num(obj)


def _window_dict(w) -> dict:
    e = w.effect
    return {
        "l1": w.l1, "l2": w.l2, "pos_i": w.pos_i, "pos_j": w.pos_j,
        "n": w.n, "T": w.T, "screened": w.screened, "p": w.p_value,
        "alpha_n": w.alpha_n, "significant": w.significant,
        "statistic_m": w.statistic_m,
        "theta_hat": e.theta_hat if e else None,
        "sigma_hat": e.sigma_hat if e else None,
        "ci": [e.ci_low, e.ci_high] if e else [None, None],
        "effect_state": e.state if e else None,
        "stratum_thetas": list(e.stratum_thetas) if e else [],
        "x_range": list(w.x_range), "y_range": list(w.y_range),
    }


def report_to_dict(report) -> dict:
    return {
        "overall_p": report.overall_p,
        "no_valid_window": report.no_valid_window,
        "n": report.n,
        "depths": list(report.depths),
        "config": config_dict(report.config),
        "resolutions": [{"k": k, "p_k": p, "U": u}
                        for k, p, u in report.resolution_ps],
        "partitions": [{"l1": l1, "l2": l2, "p": p, "L": L}
                       for (l1, l2), (p, L) in report.partition_ps.items()],
        "windows": [_window_dict(w) for w in report.windows],
    }


def check_report(doc: dict) -> None:
    """Raise :class:`InvariantError` unless the ladder and flags are coherent."""
    if recompute_overall(doc) != doc["overall_p"]:
        raise InvariantError("overall p-value does not round-trip")
    k1, k2 = doc["depths"]
    alpha = doc["config"]["alpha"]
    U = {r["k"]: r["U"] for r in doc["resolutions"]}
    L = {(q["l1"], q["l2"]): q["L"] for q in doc["partitions"]}
    for w in doc["windows"]:
        if not w["screened"]:
            ok = not w["significant"] and w["p"] is None
        else:
            a_n = adjusted_alpha(alpha, k1 + k2 - 1, U[w["l1"] + w["l2"]],
                                 L[(w["l1"], w["l2"])])
            ok = a_n == w["alpha_n"] and w["significant"] == (w["p"] <= a_n)
        if not ok:
            raise InvariantError(
                f"significance flag incoherent at window "
                f"({w['l1']},{w['l2']},{w['pos_i']},{w['pos_j']})")


def recompute_overall(doc: dict) -> float:
    """Overall p-value rebuilt from the window entries of a report."""
    parts = {}
    for w in doc["windows"]:
        if w["screened"]:
            parts.setdefault((w["l1"], w["l2"]), []).append(w["p"])
    k1, k2 = doc["depths"]
    return sidak_ladder(parts, k1, k2)[0]


WINDOW_COLUMNS = ["l1", "l2", "pos_i", "pos_j", "n", "T", "screened", "p",
                  "alpha_n", "significant", "statistic_m", "theta_hat",
                  "sigma_hat", "ci_low", "ci_high", "effect_state",
                  "x_lo", "x_hi", "y_lo", "y_hi", "stratum_thetas"]


def windows_csv(doc: dict) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(WINDOW_COLUMNS)
    for w in doc["windows"]:
        row = dict(w, ci_low=w["ci"][0], ci_high=w["ci"][1],
                   x_lo=w["x_range"][0], x_hi=w["x_range"][1],
                   y_lo=w["y_range"][0], y_hi=w["y_range"][1],
                   stratum_thetas=";".join(_num(t) for t in w["stratum_thetas"]))
        wr.writerow(["" if row[c] is None else
                     (row[c] if isinstance(row[c], str) else _num(row[c]))
                     for c in WINDOW_COLUMNS])
    return buf.getvalue()


# -- commands ------------------------------------------------------------------

def _config(args) -> ScanConfig:
    depths = None
    if getattr(args, "depths", None):
        depths = tuple(int(v) for v in args.depths.split(","))
    return ScanConfig(eta=args.eta, k_max=args.kmax, v_all=args.v_all,
                      v_margin=args.v_margin, alpha=args.alpha,
                      strata_floor=args.strata_floor, depths=depths)


def _read(args):
    z = [c for c in args.z.split(",") if c]
    return read_csv(args.input, args.x, args.y, z)


def _emit(text: str, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def cmd_test(args) -> int:
    data = _read(args)
    report = scan(data, _config(args), workers=args.workers)
    doc = report_to_dict(report)
    check_report(json.loads(dumps(doc)))
    text = dumps(doc) + "\n" if args.format == "json" else windows_csv(doc)
    _emit(text, args.out)
    return 0


def cmd_cmh(args) -> int:
    data = _read(args)
    for name, arity in (("x", data.x_arity), ("y", data.y_arity)):
        if arity != "binary":
            raise IngestError(f"arity: {name} must be binary for the cmh command")
    cfg = _config(args)
    strat = medtree(rank_columns(data.z), eta=cfg.eta, floor_T=cfg.strata_floor)
    quad = 2 * (data.x != data.x.min()) + (data.y != data.y.min())
    labels = np.empty(data.n, dtype=np.int64)
    labels[strat.indices] = strat.labels
    cells = np.bincount(labels * 4 + quad,
                        minlength=4 * strat.T).reshape(strat.T, 4)
    res = cmh_statistic(cells)
    eff = effect_estimate(cells)
    doc = {
        "statistic_m": res.statistic_m, "statistic_m2": res.statistic_m2,
        "p_value": res.p_value, "strata_used": res.strata_used,
        "degenerate": res.degenerate, "T": strat.T,
        "theta_hat": eff.theta_hat, "sigma_hat": eff.sigma_hat,
        "ci": [eff.ci_low, eff.ci_high], "effect_state": eff.state,
        "stratum_thetas": list(eff.stratum_thetas),
        "cells": cells.tolist(),
    }
    if args.format == "csv":
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["stratum", "a", "b", "c", "d", "theta"])
        for t, (row, th) in enumerate(zip(cells, eff.stratum_thetas)):
            wr.writerow([t, *row.tolist(), _num(th)])
        text = buf.getvalue()
    else:
        text = dumps(doc) + "\n"
    _emit(text, args.out)
    return 0


def _bundle_scalars(b) -> dict:
    out = {"label": b.label, "seed": b.seed, "alpha": b.alpha}
    if b.rejection_rate is not None:
        out["rejection_rate"] = b.rejection_rate
    if b.auroc is not None:
        out["auroc"] = b.auroc
    if b.null_pvalues is not None:
        out["null_pvalues"] = list(b.null_pvalues)
    if b.alt_pvalues is not None:
        out["alt_pvalues"] = list(b.alt_pvalues)
    return out


def _grid_csv(header, *cols) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in zip(*cols):
        wr.writerow([_num(v) for v in row])
    return buf.getvalue()


def _write_bundle(b, outdir, suffix=""):
    files = {}
    if b.ecdf is not None:
        files[f"ecdf{suffix}.csv"] = _grid_csv(["t", "ecdf"], b.grid, b.ecdf)
    if b.roc_fpr is not None:
        files[f"roc{suffix}.csv"] = _grid_csv(["fpr", "tpr"], b.roc_fpr, b.roc_tpr)
    if b.label.get("experiment") == "scale":
        rows = [(n, r, t) for n, ts in b.runtimes.items()
                for r, t in enumerate(ts)]
        files[f"runtimes{suffix}.csv"] = _grid_csv(
            ["n", "repeat", "cpu_seconds"], *zip(*rows))
    for name, text in files.items():
        with open(os.path.join(outdir, name), "w", encoding="utf-8",
                  newline="") as fh:
            fh.write(text)


def cmd_sim(args) -> int:
    spec = SimSpec(scenario=args.generator, n=args.n, d=args.d,
                   replications=args.reps, seed=args.seed, config=_config(args),
                   alt_scenario=args.alt_generator,
                   etas=tuple(int(v) for v in args.etas.split(",")),
                   ns=tuple(int(v) for v in args.ns.split(",")))
    if args.scenario == "t1e":
        bundles = [run_t1e(spec, args.workers)]
    elif args.scenario == "roc":
        bundles = [run_roc(spec, args.workers)]
    elif args.scenario == "eta":
        bundles = run_eta_sweep(spec, args.workers)
    else:
        bundles = [run_scaling(spec)]
    scalars = []
    for b in bundles:
        s = _bundle_scalars(b)
        if b.label.get("experiment") == "scale":
            s["median_runtimes"] = {str(n): t for n, t in
                                    median_runtimes(b).items()}
        scalars.append(s)
    doc = scalars[0] if len(scalars) == 1 else {"runs": scalars}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for b in bundles:
            suffix = f"_eta{b.label['eta']}" if args.scenario == "eta" else ""
            _write_bundle(b, args.out, suffix)
        _emit(dumps(doc) + "\n", os.path.join(args.out, "metrics.json"))
    else:
        _emit(dumps(doc) + "\n", None)
    return 0


# -- argument parsing ------------------------------------------------------------

def _scan_flags(p):
    p.add_argument("--eta", type=int, default=10)
    p.add_argument("--kmax", type=int, default=7)
    p.add_argument("--v-all", type=int, default=20)
    p.add_argument("--v-margin", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--strata-floor", type=int, default=None)
    p.add_argument("--depths", default=None, help="fixed depths 'k1,k2'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help="defaults to $MULTICMH_WORKERS or 1")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def _data_flags(p):
    p.add_argument("--input", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--z", required=True, help="comma-separated column names")
    p.add_argument("--out", default=None)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise IngestError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multicmh",
                     description="Multiscale CMH conditional independence test")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    p = sub.add_parser("test", help="scan a dataset")
    _data_flags(p)
    _scan_flags(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("cmh", help="single CMH test for binary x and y")
    _data_flags(p)
    _scan_flags(p)
    p.set_defaults(func=cmd_cmh)

    p = sub.add_parser("sim", help="run a simulation experiment")
    p.add_argument("--scenario", choices=("t1e", "roc", "scale", "eta"),
                   required=True)
    p.add_argument("--generator", choices=SCENARIOS, default=None)
    p.add_argument("--alt-generator", choices=SCENARIOS, default="alt_pnl")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--ns", default="1000,2000,4000,8000")
    p.add_argument("--etas", default="5,10,15,20")
    p.add_argument("--out", default=None, help="output directory")
    _scan_flags(p)
    p.set_defaults(func=cmd_sim)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "sim" and args.generator is None:
            args.generator = ("pure_null_gaussian" if args.scenario == "scale"
                              else "null_pnl")
        return args.func(args)
    except (IngestError, ValueError, OSError) as exc:
        kind = "io" if isinstance(exc, OSError) else "input"
        msg = str(exc).replace("\n", " ")
        if msg.startswith("usage: ") or msg.startswith("arity: "):
            kind, msg = msg.split(": ", 1)
        print(f"error: {kind}: {msg}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"error: invariant: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
