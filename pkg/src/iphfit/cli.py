"""Command-line front end.

Subcommands: ``fit`` (absorption-time CSV -> model.json + report.json),
``fit-density`` (tabulated density -> weighted fit), ``eval`` (model ->
density/survival/hazard CSV), ``sample`` (simulate absorption times or
full paths), ``approx`` (phase-type approximation export).

Exit codes: 0 success, 2 fit did not converge (outputs still written),
1 any error.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import em, ph_approx, simulate
from .errors import IphfitError
from .model import HAZARD_SURVIVAL_FLOOR, IPHModel, load_model, save_model
from .poisson_glm import RegressionSpec


class CliError(IphfitError):
    pass


# -- input parsing ----------------------------------------------------------


def _read_csv_columns(path, required, optional=()):
    """Read float columns from a headered CSV; abort with the 1-based line
    number on the first malformed row."""
    cols = {name: [] for name in (*required, *optional)}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for name in required:
            if name not in header:
                raise CliError(f"{path}: missing required column {name!r}")
        present = [name for name in (*required, *optional) if name in header]
        where = {name: header.index(name) for name in present}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CliError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for name in present:
                try:
                    cols[name].append(float(row[where[name]]))
                except ValueError:
                    raise CliError(
                        f"{path}:{lineno}: column {name!r} is not a number: {row[where[name]]!r}"
                    )
    return {name: np.asarray(vals) for name, vals in cols.items() if name in present}


def read_sample_csv(path):
    cols = _read_csv_columns(path, required=("tau",), optional=("weight",))
    return em.WeightedSample(cols["tau"], cols.get("weight"))


def read_density_csv(path, scale=1.0):
    """Tabulated density -> weighted sample, local mesh times height as
    weight, normalized to total weight 1."""
    cols = _read_csv_columns(path, required=("x", "density"))
    x = cols["x"] / scale
    h = cols["density"]
    if np.any(np.diff(x) <= 0) or np.any(x <= 0):
        raise CliError(f"{path}: x values must be positive and strictly increasing")
    if np.any(h < 0):
        raise CliError(f"{path}: density heights must be nonnegative")
    mesh = np.diff(np.concatenate(([0.0], x)))
    w = h * mesh
    keep = w > 0
    if not keep.any():
        raise CliError(f"{path}: all density heights are zero")
    return em.WeightedSample(x[keep], w[keep] / w[keep].sum())


def parse_config(path, seed_override=None):
    with open(path) as fh:
        doc = json.load(fh)
    basis = doc.get("basis", "saturated")
    if isinstance(basis, dict):
        spec = RegressionSpec(basis="poly", degree=int(basis["poly"]),
                              covariate_rule=doc.get("covariate_rule", "midpoint"))
    else:
        spec = RegressionSpec(basis=basis, covariate_rule=doc.get("covariate_rule", "midpoint"))
    breakpoints = doc.get("breakpoints")
    quantiles = None
    if isinstance(breakpoints, dict):
        quantiles = int(breakpoints["quantiles"])
        breakpoints = None
    scale = float(doc.get("scale", 1.0))
    if scale <= 0:
        raise CliError(f"{path}: scale must be positive, got {scale}")
    config = em.EMConfig(
        p=int(doc["p"]),
        breakpoints=breakpoints,
        quantiles=quantiles,
        spec=spec,
        tol_rel_loglik=float(doc.get("tol", 1e-7)),
        max_iter=int(doc.get("max_iter", 1000)),
        seed=int(doc["seed"] if seed_override is None else seed_override),
    )
    return config, scale


def parse_grid(text):
    try:
        x0, x1, dx = (float(v) for v in text.split(":"))
    except ValueError:
        raise CliError(f"grid must look like x0:x1:dx, got {text!r}")
    if x0 <= 0 or dx <= 0 or x1 < x0:
        raise CliError(f"grid needs 0 < x0 <= x1 and dx > 0, got {text!r}")
    return np.arange(x0, x1 + 0.5 * dx, dx)


def _theta_document(theta):
    if theta is None:
        return None
    doc = {
        "basis": theta.spec.basis,
        "covariate_rule": theta.spec.covariate_rule,
        "coef": {f"{i}->{j}": list(map(float, c)) for (i, j), c in sorted(theta.coef.items())},
    }
    if theta.spec.basis == "poly":
        doc["degree"] = theta.spec.degree
    if theta.intervals:
        doc["intervals"] = {f"{i}->{j}": ks for (i, j), ks in sorted(theta.intervals.items())}
    return doc


# -- subcommands -------------------------------------------------------------


def _write_fit_outputs(result, outdir, scale):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    result.model.meta["scale"] = scale
    save_model(result.model, outdir / "model.json", theta=_theta_document(result.theta))
    report = {
        "loglik_trace": result.loglik_trace,
        "iterations": result.iterations,
        "converged": result.converged,
        "messages": result.messages,
    }
    with open(outdir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def cmd_fit(args):
    config, scale = parse_config(args.config, args.seed)
    data = read_sample_csv(args.data)
    if scale != 1.0:
        data = em.WeightedSample(data.values / scale, data.weights)
    result = em.fit(data, config)
    _write_fit_outputs(result, args.out, scale)
    if not result.converged:
        print(f"warning: stopped after {result.iterations} iterations without converging",
              file=sys.stderr)
        return 2
    return 0


def cmd_fit_density(args):
    config, scale = parse_config(args.config, args.seed)
    data = read_density_csv(args.target, scale)
    result = em.fit(data, config)
    _write_fit_outputs(result, args.out, scale)
    return 0 if result.converged else 2


def cmd_eval(args):
    model = load_model(args.model)
    xs = parse_grid(args.grid)
    dens, surv = model._eval(xs)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["x", "density", "survival", "hazard"])
        for x, d, s in zip(xs, dens, surv):
            hazard = repr(float(d) / float(s)) if s >= HAZARD_SURVIVAL_FLOOR else ""
            writer.writerow([repr(float(x)), repr(float(d)), repr(float(s)), hazard])
    finally:
        if args.out:
            out.close()
    return 0


def cmd_sample(args):
    model = load_model(args.model)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        if args.paths:
            # states are reported 1-based, p+1 = absorbing
            writer.writerow(["path_id", "time", "from", "to"])
            for pid, path in enumerate(simulate.iter_paths(model, args.n, args.seed)):
                for t, i, j in path.events:
                    writer.writerow([pid, repr(float(t)), i + 1, j + 1])
        else:
            writer.writerow(["tau"])
            for tau in simulate.sample_absorptions(model, args.n, args.seed):
                writer.writerow([repr(float(tau))])
    finally:
        if args.out:
            out.close()
    return 0


def cmd_approx(args):
    model = load_model(args.model)
    floor = ph_approx.min_valid_n(model)
    if args.rate < floor:
        raise CliError(f"n={args.rate} is too small: the model needs n >= {floor}")
    tail = model.tail_time(1e-8)
    m = args.m if args.m is not None else ph_approx.choose_m(args.rate, tail)
    approx = ph_approx.PHApproximation(model, args.rate, m)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    doc = {
        "n": approx.n,
        "m": approx.m,
        "erlang_rate": approx.n,
        "mixture_coefficients": list(map(float, approx.mixture_coefficients)),
    }
    with open(outdir / "approx.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")

    xs = parse_grid(args.grid) if args.grid else np.linspace(tail / 200, tail, 200)
    dens = approx.density(xs)
    with open(outdir / "approx_density.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "density"])
        for x, d in zip(xs, dens):
            writer.writerow([repr(float(x)), repr(float(d))])
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="iphfit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to absorption-time data")
    p_fit.add_argument("data", help="CSV with column tau (optional weight)")
    p_fit.add_argument("--config", required=True, help="fit configuration JSON")
    p_fit.add_argument("--out", default=".", help="output directory")
    p_fit.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_fit.add_argument("--threads", type=int, default=1, help="worker hint (advisory)")
    p_fit.set_defaults(func=cmd_fit)

    p_fd = sub.add_parser("fit-density", help="fit to a tabulated density")
    p_fd.add_argument("target", help="CSV with columns x,density")
    p_fd.add_argument("--config", required=True)
    p_fd.add_argument("--out", default=".")
    p_fd.add_argument("--seed", type=int, default=None)
    p_fd.add_argument("--threads", type=int, default=1)
    p_fd.set_defaults(func=cmd_fit_density)

    p_eval = sub.add_parser("eval", help="tabulate density/survival/hazard")
    p_eval.add_argument("model", help="model JSON")
    p_eval.add_argument("--grid", required=True, help="x0:x1:dx")
    p_eval.add_argument("--out", default=None, help="output CSV (default stdout)")
    p_eval.set_defaults(func=cmd_eval)

    p_sample = sub.add_parser("sample", help="simulate the fitted process")
    p_sample.add_argument("model")
    p_sample.add_argument("n", type=int, help="number of draws")
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--paths", action="store_true", help="dump full paths")
    p_sample.add_argument("--out", default=None)
    p_sample.set_defaults(func=cmd_sample)

    p_approx = sub.add_parser("approx", help="phase-type approximation export")
    p_approx.add_argument("model")
    p_approx.add_argument("rate", type=float, help="uniformization rate n")
    p_approx.add_argument("-m", type=int, default=None, help="stages (default: ceil(n * tail))")
    p_approx.add_argument("--grid", default=None, help="density grid x0:x1:dx")
    p_approx.add_argument("--out", default=".")
    p_approx.set_defaults(func=cmd_approx)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IphfitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
