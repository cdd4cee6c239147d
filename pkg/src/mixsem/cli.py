"""Command-line interface.

Subcommands: ``fit`` (estimate at fixed K), ``select`` (BIC scan over K),
``simulate`` (forward-sample a fitted or hand-written model),
``classify`` (MAP class assignment), ``report`` (human-readable
coefficient tables).  Exit codes are a stable scripting contract:
0 success, 1 input or usage error, 2 estimation completed without
convergence.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, inference
from .em import EmConfig, EstimationError, MStepError, e_step, fit_multistart
from .model import DegenerateSigmaError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_estimation_flags(p: _Parser) -> None:
    p.add_argument("--starts", type=int, default=EmConfig.n_random_starts, help="number of random starts")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--tol", type=float, default=EmConfig.tol, help="EM convergence tolerance")
    p.add_argument("--max-iter", type=int, default=EmConfig.max_iter, help="EM iteration cap")
    p.add_argument("--threads", type=int, default=None, help="concurrent starts (default 1)")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("MIXSEM_THREADS")
    return max(1, int(env)) if env else 1


def _config(args) -> EmConfig:
    return EmConfig(
        tol=args.tol,
        max_iter=args.max_iter,
        n_random_starts=args.starts,
        master_seed=args.seed,
    )


def _progress(verbosity: int):
    if verbosity < 2:
        return None

    def cb(start_id, iteration, loglik, delta):
        print(f"start {start_id} iter {iteration}: loglik={loglik:.6f} delta={delta:.3g}")

    return cb


def _load_inputs(args, verbosity: int):
    schema = dataio.SchemaConfig.from_json(args.schema)
    dataset, report = dataio.load_csv(args.data, schema)
    if verbosity >= 1:
        print(
            f"read {report.n_rows} rows: kept {report.n_kept}, "
            f"filtered {report.n_filtered_weeks + report.n_filtered_weight}, "
            f"invalid {report.n_invalid}"
        )
    return schema, dataset


def cmd_fit(args) -> int:
    if args.k < 1:
        print("K must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    schema, dataset = _load_inputs(args, args.verbose)
    spec = dataio.build_model_spec(schema, K=args.k)
    config = _config(args)
    try:
        fit = fit_multistart(
            dataset, spec, config, threads=_threads(args), progress=_progress(args.verbose)
        )
    except (EstimationError, MStepError, DegenerateSigmaError) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = inference.build_report(fit, dataset)
    npar = inference.count_parameters(spec)
    value = inference.bic(fit.loglik, npar, dataset.n)
    out = Path(args.out)
    dataio.write_results(fit, report, out, format="json", x_names=dataset.x_names)
    dataio.write_coefficient_tables(fit, report, out, x_names=dataset.x_names)
    print(f"loglik = {fit.loglik:.6f}")
    print(f"BIC = {value:.6f}")
    print(f"iterations = {fit.iterations}")
    print(f"converged = {str(fit.converged).lower()}")
    print("class weights: " + ", ".join(f"{w:.4f}" for w in fit.theta.latent.pi))
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_select(args) -> int:
    if args.k_max < 1:
        print("k-max must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    schema, dataset = _load_inputs(args, args.verbose)
    spec = dataio.build_model_spec(schema, K=1)
    config = _config(args)
    try:
        table = inference.select_k(
            dataset, spec, k_max=args.k_max, config=config, threads=_threads(args)
        )
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    dataio.write_selection_csv(table, args.out)
    for row in table.rows:
        ll = "failed" if row.loglik is None else f"{row.loglik:.4f}"
        b = "failed" if row.bic is None else f"{row.bic:.4f}"
        print(f"K={row.K}: loglik={ll} npar={row.npar} BIC={b}")
    print(f"chosen K = {table.chosen_K}")
    chosen = next(r for r in table.rows if r.K == table.chosen_K)
    return EXIT_OK if chosen.converged else EXIT_NOT_CONVERGED


def cmd_simulate(args) -> int:
    if args.n < 1:
        print("n must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    schema = dataio.SchemaConfig.from_json(args.schema)
    try:
        theta, spec, _doc = dataio.read_results(args.params)
    except (KeyError, ValueError) as exc:
        print(f"invalid parameter file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    source = None
    if args.covariates:
        source, _ = dataio.load_csv(args.covariates, schema)
    dataset = dataio.simulate(
        theta, spec, schema, n=args.n, seed=args.seed, covariate_source=source
    )
    dataio.write_dataset_csv(dataset, schema, args.out, include_true_class=True)
    print(f"wrote {dataset.n} simulated records to {args.out}")
    return EXIT_OK


def cmd_classify(args) -> int:
    schema, dataset = _load_inputs(args, args.verbose)
    try:
        theta, spec, _doc = dataio.read_results(args.params)
    except (KeyError, ValueError) as exc:
        print(f"invalid parameter file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if spec.n_x != dataset.x.shape[1]:
        print(
            f"parameter/data mismatch: model expects {spec.n_x} covariate columns, "
            f"data has {dataset.x.shape[1]}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        posterior = e_step(dataset, theta, spec)
    except ValueError as exc:
        print(f"parameter/data mismatch: {exc}", file=sys.stderr)
        return EXIT_USAGE
    labels, confidence = inference.classify(posterior)
    dataio.write_classification_csv(labels, confidence, posterior, args.out)
    print(f"classified {dataset.n} records into {spec.K} classes")
    return EXIT_OK


def _render_table(header, rows) -> str:
    cols = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(row[j]) for row in cols) for j in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in cols[1:]:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def _doc_rows(doc) -> dict:
    rows = {}
    for r in (doc.get("inference") or {}).get("rows", []):
        rows[r["name"]] = r
    return rows


def _wald_cells(rows, name, estimate):
    r = rows.get(name)
    if r is None:
        return [f"{estimate:.3f}", "--", "--", "--"]
    se, t, p = r["se"], r["t"], r["p"]
    fmt = lambda v: "--" if v is None or not np.isfinite(v) else f"{v:.3f}"
    return [f"{estimate:.3f}", fmt(se), fmt(t), fmt(p)]


def cmd_report(args) -> int:
    try:
        theta, spec, doc = dataio.read_results(args.params)
    except (KeyError, ValueError) as exc:
        print(f"invalid parameter file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x_names = tuple(doc.get("x_names") or (f"x{j}" for j in range(spec.n_x)))
    lay = inference.parameter_layout(spec, x_names)
    rows = _doc_rows(doc)
    header = ["covariate", "category", "estimate", "se", "t_stat", "p_value"]

    tbl = [["intercept", "--"] + _wald_cells(rows, lay.names[lay.mu1], theta.ordinal.mu1)]
    tbl.append(["cutpoint_1", "--", "0.000", "--", "--", "--"])
    for j, name in enumerate(lay.names[lay.tau]):
        tbl.append([f"cutpoint_{j + 2}", "--"] + _wald_cells(rows, name, theta.ordinal.tau[j + 1]))
    for i, j in enumerate(spec.x_ordinal):
        tbl.append([x_names[j], "--"] + _wald_cells(rows, lay.names[lay.beta1][i], theta.ordinal.beta1[i]))
    dataio._atomic_write_text(out / "ordinal.txt", _render_table(header, tbl))

    tbl = [["intercept", "--"] + _wald_cells(rows, lay.names[lay.mu2], theta.binary.mu2)]
    for i, j in enumerate(spec.x_binary):
        tbl.append([x_names[j], "--"] + _wald_cells(rows, lay.names[lay.beta2][i], theta.binary.beta2[i]))
    if spec.z1_in_binary:
        tbl.append(["z1", "category 1", "0.000", "--", "--", "--"])
        for i, name in enumerate(lay.names[lay.gamma]):
            tbl.append(["z1", f"category {i + 2}"] + _wald_cells(rows, name, theta.binary.gamma[i]))
    dataio._atomic_write_text(out / "binary.txt", _render_table(header, tbl))

    header3 = ["response", "covariate", "category", "estimate", "se", "t_stat", "p_value"]
    tbl = []
    p3 = len(spec.x_gaussian)
    for a in range(spec.d):
        resp = f"y{a + 1}"
        tbl.append([resp, "intercept", "--"] + _wald_cells(rows, lay.names[lay.nu][a], theta.gaussian.nu[a]))
        for i, j in enumerate(spec.x_gaussian):
            name = lay.names[lay.Phi][a * p3 + i]
            tbl.append([resp, x_names[j], "--"] + _wald_cells(rows, name, theta.gaussian.Phi[a, i]))
        col = 0
        if spec.z1_in_gaussian:
            tbl.append([resp, "z1", "category 1", "0.000", "--", "--", "--"])
            for jcat in range(2, spec.J + 1):
                name = lay.names[lay.Psi][a * spec.psi_dim + col]
                tbl.append([resp, "z1", f"category {jcat}"] + _wald_cells(rows, name, theta.gaussian.Psi[a, col]))
                col += 1
        if spec.z2_in_gaussian:
            tbl.append([resp, "z2", "level 0", "0.000", "--", "--", "--"])
            name = lay.names[lay.Psi][a * spec.psi_dim + col]
            tbl.append([resp, "z2", "level 1"] + _wald_cells(rows, name, theta.gaussian.Psi[a, col]))
    Sigma = theta.gaussian.Sigma
    for a in range(spec.d):
        tbl.append(["sigma", f"var(y{a + 1})", "--", f"{Sigma[a, a]:.3f}", "--", "--", "--"])
    if spec.d >= 2:
        tbl.append(["sigma", "cov(y1,y2)", "--", f"{Sigma[0, 1]:.3f}", "--", "--", "--"])
        inf_doc = doc.get("inference") or {}
        rho = inf_doc.get("rho")
        if rho is not None:
            tbl.append(["sigma", "correlation", "--", f"{rho:.3f}", "--", "--", "--"])
    dataio._atomic_write_text(out / "outcome.txt", _render_table(header3, tbl))

    # latent structure, one column per class; contrast p-values vs class 1
    contrasts = {}
    for c in (doc.get("inference") or {}).get("contrasts", []):
        contrasts[(c["dim"], c["k"])] = c["p"]
    lat = theta.latent
    header_l = ["quantity"] + [f"class{k + 1}" for k in range(spec.K)]
    dims = [("xi1", lat.xi1), ("xi2", lat.xi2)] + [
        (f"zeta{a + 1}", lat.zeta[:, a]) for a in range(spec.d)
    ]
    tbl = []
    for dim, values in dims:
        cells = [f"{values[0]:.3f}"]
        for k in range(2, spec.K + 1):
            p = contrasts.get((dim, k))
            cell = f"{values[k - 1]:.3f}"
            if p is not None and np.isfinite(p):
                cell += f" ({p:.3f})"
            cells.append(cell)
        tbl.append([dim] + cells)
    tbl.append(["pi"] + [f"{v:.3f}" for v in lat.pi])
    dataio._atomic_write_text(out / "latent.txt", _render_table(header_l, tbl))
    print(f"wrote report tables to {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="mixsem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[], help="estimate the model at fixed K")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_estimation_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="choose the number of classes by BIC")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k-max", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_estimation_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="forward-sample from fitted parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--covariates", default=None, help="CSV to resample covariates from")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("classify", help="MAP class assignment per record")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("report", help="human-readable coefficient tables")
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (dataio.SchemaError, dataio.IngestionError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
