"""Batch command-line interface.

Commands: ``run`` (one analysis on a CSV or named scenario), ``simulate``
(replicated FDR/power tables), ``baselines`` (reference procedures on a
CSV), and ``serve`` (the interactive session server).  Exit codes:
0 success, 1 usage error, 2 data error, 3 internal error.
"""

import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import click
import numpy as np

from .baselines import barber_candes, bh, storey_bh
from .core import HypothesisSet, ingest
from .engine import AdaptConfig, info_loss_correlation, run_adapt
from .glm import Featurization
from .sim import Scenario, score

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

SCHEMA_VERSION = 1


class CliDataError(Exception):
    pass


def _read_csv(path, p_column="p"):
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or p_column not in reader.fieldnames:
                raise CliDataError(f"CSV must have a header with a {p_column!r} column")
            x_columns = [c for c in reader.fieldnames if c != p_column]
            for lineno, row in enumerate(reader, start=2):
                try:
                    p = float(row[p_column])
                    x = [float(row[c]) for c in x_columns] if x_columns else [0.0]
                    rows.append((p, x))
                except (TypeError, ValueError) as exc:
                    raise CliDataError(f"row {lineno}: {exc}") from exc
    except OSError as exc:
        raise CliDataError(str(exc)) from exc
    if not rows:
        raise CliDataError("no data rows in CSV")
    pvals = [r[0] for r in rows]
    covs = [r[1] for r in rows]
    return pvals, covs, (x_columns or ["x1"])


def _load_input(input_path, scenario, seed, p_column):
    if (input_path is None) == (scenario is None):
        raise click.UsageError("provide exactly one of --input or --scenario")
    if input_path is not None:
        pvals, covs, names = _read_csv(input_path, p_column)
        return ingest(pvals, covs), names
    h = Scenario(scenario, seed=seed).generate()
    return h, [f"x{j + 1}" for j in range(h.d)]


def _build_config(family, s0, refit_every, alpha, seed, fitter, featurization,
                  selection, store_fits):
    feats = "auto"
    if featurization == "identity":
        feats = [(Featurization("identity"), Featurization("identity"))]
    elif featurization.startswith("spline:"):
        ks = [int(k) for k in featurization.split(":", 1)[1].split(",")]
        feats = [(Featurization("spline", knots=k), Featurization("spline", knots=k))
                 for k in ks]
    elif featurization.startswith("subset:"):
        idx = tuple(int(i) for i in featurization.split(":", 1)[1].split(","))
        feats = [(Featurization("subset", indices=idx),
                  Featurization("subset", indices=idx))]
    elif featurization != "auto":
        raise click.UsageError(f"unknown featurization spec {featurization!r}")
    return AdaptConfig(
        family=family,
        featurization=feats,
        selection=selection,
        s0=s0,
        refit_every="auto" if refit_every is None else refit_every,
        alpha=alpha,
        fitter=fitter,
        seed=seed,
        store_fits=store_fits,
    )


def _fmt(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_results_csv(path, h, names, result, alphas):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = (["index"] + names + ["p", "q_value", "lfdr_final"]
                  + [f"rejected_at_{a:g}" for a in alphas])
        writer.writerow(header)
        q = result.qvalues
        lf = result.lfdr
        rej_sets = {}
        for a in alphas:
            if q is not None:
                rej_sets[a] = set(result.rejections_at(a).tolist())
            else:
                rej_sets[a] = set(result.rejections.tolist())
        for i in range(h.n):
            row = ([i] + [_fmt(v) for v in h.covariates[i]]
                   + [_fmt(float(h.pvalues[i])),
                      _fmt(None if q is None else float(q[i])),
                      _fmt(None if lf is None else float(lf[i]))]
                   + [int(i in rej_sets[a]) for a in alphas])
            writer.writerow(row)


@click.group()
def main():
    """Covariate-adaptive FDR control toolkit."""


@main.command("run")
@click.option("--input", "input_path", type=click.Path(), default=None,
              help="CSV with a 'p' column; other numeric columns are covariates.")
@click.option("--scenario", default=None,
              help="Named scenario, e.g. example1-circle or example2.")
@click.option("--p-column", default="p", show_default=True)
@click.option("--alpha", type=float, default=None,
              help="Single target level; stops the protocol early.")
@click.option("--alpha-grid", default=None,
              help="Comma-separated levels; forces a full run with q-values.")
@click.option("--family", default="beta_mixture", show_default=True,
              type=click.Choice(["beta_mixture", "gaussian_mixture"]))
@click.option("--featurization", default="auto", show_default=True,
              help="auto | identity | spline:6,8,10 | subset:0,1")
@click.option("--selection", default="bic", type=click.Choice(["bic", "cv"]),
              show_default=True)
@click.option("--fitter", default="glm", type=click.Choice(["glm", "lasso"]),
              show_default=True)
@click.option("--s0", type=float, default=0.45, show_default=True)
@click.option("--refit-every", type=int, default=None,
              help="Reveals between model refits (default: ceil(n/20)).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--info-loss/--no-info-loss", default=True, show_default=True)
@click.option("--output-dir", type=click.Path(), default=".", show_default=True)
def cmd_run(input_path, scenario, p_column, alpha, alpha_grid, family,
            featurization, selection, fitter, s0, refit_every, seed,
            info_loss, output_dir):
    """Run one analysis; writes results.csv and diagnostics.json."""
    import pathlib

    try:
        h, names = _load_input(input_path, scenario, seed, p_column)
    except CliDataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    try:
        alphas = [alpha] if alpha is not None else []
        if alpha_grid:
            alphas = [float(a) for a in alpha_grid.split(",")]
        full_run = alpha is None
        config = _build_config(family, s0, refit_every,
                               None if full_run else alpha, seed, fitter,
                               featurization, selection, store_fits=True)
        result = run_adapt(h, config)
        if not alphas:
            alphas = [0.05, 0.1, 0.2]

        out = pathlib.Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_results_csv(out / "results.csv", h, names, result, alphas)

        diag = {
            "schema": SCHEMA_VERSION,
            "config": {k: (v if isinstance(v, (int, float, str, bool, type(None)))
                           else str(v))
                       for k, v in asdict(config).items()},
            "n": h.n,
            "trace": result.trace.to_jsonable(),
            "selection": [list(r) for r in result.selection],
            "rejections": result.rejections.tolist(),
            "final_thresholds": [],
            "info_loss": [],
        }
        if result.final_fit is not None:
            diag["fit"] = {
                "family": result.final_fit.family,
                "featurization": result.final_fit.label,
                "theta": result.final_fit.theta.tolist(),
                "beta": result.final_fit.beta.tolist(),
                "expected_loglik": result.final_fit.expected_loglik,
            }
        if info_loss and result.fit_snapshots and result.trace.complete:
            diag["info_loss"] = [
                [a, None if math.isnan(r) else r]
                for a, r in info_loss_correlation(h, result, alphas, config)
            ]
        with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
            json.dump(diag, fh, sort_keys=True, indent=1)
        n_rej = (result.rejections.size if not full_run
                 else result.rejections_at(alphas[0]).size)
        click.echo(f"n={h.n} rejections@{alphas[0]:g}={n_rej} "
                   f"outputs in {out}")
    except click.UsageError:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


def _one_replicate(args):
    scenario_name, rep_seed, methods, alphas, family, featurization, fitter = args
    h = Scenario(scenario_name, seed=rep_seed).generate()
    rows = []
    result = None
    if "adapt" in methods:
        config = _build_config(family, 0.45, None, None, rep_seed, fitter,
                               featurization, "bic", store_fits=False)
        result = run_adapt(h, config)
    for alpha in alphas:
        for method in methods:
            if method == "adapt":
                rej = result.rejections_at(alpha)
            elif method == "bh":
                rej = bh(h.pvalues, alpha).rejections
            elif method == "storey":
                rej = storey_bh(h.pvalues, alpha).rejections
            elif method == "bc":
                rej = barber_candes(h.pvalues, alpha).rejections
            else:
                raise ValueError(f"unknown method {method!r}")
            fdp, power = score(rej, h.truth)
            rows.append((rep_seed, method, alpha, fdp, power, rej.size))
    return rows


@main.command("simulate")
@click.option("--scenario", required=True)
@click.option("--reps", type=int, default=10, show_default=True)
@click.option("--alpha-grid", default="0.05,0.1,0.2", show_default=True)
@click.option("--methods", default="adapt,bh,storey,bc", show_default=True)
@click.option("--family", default="gaussian_mixture", show_default=True)
@click.option("--featurization", default="auto", show_default=True)
@click.option("--fitter", default="glm", show_default=True,
              type=click.Choice(["glm", "lasso"]))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--output", type=click.Path(), default="fdr_power.csv",
              show_default=True)
def cmd_simulate(scenario, reps, alpha_grid, methods, family, featurization,
                 fitter, seed, workers, output):
    """Replicate a scenario and tabulate mean FDP / power per method."""
    try:
        if reps < 1:
            raise click.UsageError("reps must be >= 1")
        alphas = [float(a) for a in alpha_grid.split(",")]
        method_list = [m.strip() for m in methods.split(",") if m.strip()]
        jobs = [(scenario, seed + r, method_list, alphas, family,
                 featurization, fitter) for r in range(reps)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                all_rows = list(pool.map(_one_replicate, jobs))
        else:
            all_rows = [_one_replicate(j) for j in jobs]

        by_key = {}
        for rows in all_rows:
            for _, method, alpha, fdp, power, nrej in rows:
                by_key.setdefault((method, alpha), []).append((fdp, power, nrej))
        with open(output, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "alpha", "reps", "mean_fdp", "se_fdp",
                             "mean_power", "se_power", "mean_rejections"])
            for (method, alpha) in sorted(by_key):
                vals = by_key[(method, alpha)]
                fdps = np.array([v[0] for v in vals])
                powers = np.array([v[1] for v in vals])
                nrejs = np.array([v[2] for v in vals])
                ok = ~np.isnan(powers)
                writer.writerow([
                    method, _fmt(alpha), len(vals),
                    _fmt(float(np.mean(fdps))),
                    _fmt(float(np.std(fdps) / math.sqrt(len(fdps)))),
                    _fmt(float(np.mean(powers[ok])) if ok.any() else None),
                    _fmt(float(np.std(powers[ok]) / math.sqrt(ok.sum()))
                         if ok.any() else None),
                    _fmt(float(np.mean(nrejs))),
                ])
        click.echo(f"wrote {output}")
    except click.UsageError:
        raise
    except ValueError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


@main.command("baselines")
@click.option("--input", "input_path", type=click.Path(), required=True)
@click.option("--p-column", default="p", show_default=True)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--output", type=click.Path(), default="baselines.csv",
              show_default=True)
def cmd_baselines(input_path, p_column, alpha, output):
    """Run BH, Storey-BH, and the constant-threshold procedure on a CSV."""
    try:
        pvals, _, _ = _read_csv(input_path, p_column)
    except CliDataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    try:
        results = [bh(pvals, alpha), storey_bh(pvals, alpha),
                   barber_candes(pvals, alpha)]
        with open(output, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "alpha", "n_rejections", "threshold",
                             "rejections"])
            for res in results:
                writer.writerow([res.method, _fmt(alpha), res.n_rejections,
                                 _fmt(res.threshold),
                                 " ".join(str(i) for i in res.rejections)])
        click.echo(f"wrote {output}")
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--persist-dir", type=click.Path(), default=None,
              help="Directory for session snapshots and action logs.")
def cmd_serve(host, port, persist_dir):
    """Start the interactive session server."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(persist_dir=persist_dir), host=host, port=port)


if __name__ == "__main__":
    main()
