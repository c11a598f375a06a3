"""Command-line entry point ``pra-toolkit``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .exceptions import PRAError
from .fitting import fit_two_scale
from .leverage import LagCurve, additivity_residual, binned_conditional, leverage_full, leverage_partials
from .nulls import XI_LAWS, null_ensemble, rmt_identity_spectrum
from .panel import MissingPolicy, index_series, instantaneous_stats, load_panel, normalize, write_panel_csv
from .pipeline import (
    PipelineConfig,
    compare_runs,
    parse_range,
    read_csv_columns,
    run_pipeline,
    validate_config,
    write_csv,
    write_json,
)
from .pra import PrincipalRegressionAnalysis, conditioning_series
from .sidecar import write_sidecar
from .synth import SynthSpec, generate

log = logging.getLogger("pra_toolkit")


def _add_input(p, multiple=False):
    p.add_argument("--input", required=True, nargs="+" if multiple else None, metavar="PATH",
                   help="panel CSV (date column plus one column per ticker)")
    p.add_argument("--missing-drop-frac", type=float, default=0.5, metavar="F",
                   help="drop tickers missing on more than this fraction of days")
    p.add_argument("--missing-fill", choices=("zero", "drop-day"), default="zero")


def _npanel(args, path=None):
    policy = MissingPolicy(args.missing_drop_frac, args.missing_fill)
    return normalize(load_panel(path or args.input, policy))


def _mu_range(text):
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI:N, got {text!r}")


def _mem(text):
    try:
        short, long_ = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected SHORT,LONG, got {text!r}")
    return short, long_


def cmd_run(args):
    cfg = PipelineConfig.from_toml(args.config)
    lags = validate_config(cfg)
    if args.dry_run:
        print(f"config ok: {lags.size} lags ({lags[0]}..{lags[-1]}), output {cfg.out_dir}")
        return 0
    bundle = run_pipeline(cfg)
    print(f"wrote {len(bundle.manifest['files'])} files to {bundle.out_dir}")
    return 0


def cmd_synth(args):
    short, long_ = args.mem
    spec = SynthSpec(n_stocks=args.n, n_days=args.t, rho0=args.rho0, g_minus=args.g_minus,
                     g_plus=args.g_plus, memory_short=short, memory_long=long_,
                     weight_long=args.weight_long, vol_leverage=args.vol_leverage, seed=args.seed,
                     n_sectors=args.sectors, sector_rho0=args.sector_rho0,
                     sector_g_minus=args.sector_g_minus, sector_g_plus=args.sector_g_plus)
    write_panel_csv(generate(spec), args.out)
    return 0


def _leverage_curves(npanel, tau_max):
    idx = index_series(npanel)
    inst = instantaneous_stats(npanel)
    l_I = leverage_full(idx, tau_max)
    l_s, l_r = leverage_partials(idx, inst, tau_max)
    res = additivity_residual(l_I, l_s, l_r, inst.rho0, inst.sigma0_sq)
    return idx, inst, np.stack([l_I.values, l_s.values, l_r.values, res.values])


def cmd_leverage(args):
    if len(args.input) > 1 and not args.average:
        raise PRAError("several --input panels need --average")
    curves, binned = [], []
    for path in args.input:
        idx, inst, c = _leverage_curves(_npanel(args, path), args.tau_max)
        curves.append(c)
        binned.append([binned_conditional(y, idx, args.bin_lag, args.bins)
                       for y in (inst.sigma2, inst.rho, idx.values**2)])
    mean = np.mean(curves, axis=0)
    lags = np.arange(1, args.tau_max + 1)
    write_csv(args.out, ["tau", "L_I", "L_sigma", "L_rho", "residual"], zip(lags, *mean))
    if args.binned_out:
        rows = []
        for k, name in enumerate(("sigma2", "rho", "I2")):
            bs = [b[k] for b in binned]
            cols = [np.mean([getattr(b, a) for b in bs], axis=0)
                    for a in ("bin_centers", "means", "stderr")]
            counts = np.sum([b.counts for b in bs], axis=0)
            rows += [(name, args.bin_lag, c, m, s, n) for c, m, s, n in zip(*cols, counts)]
        write_csv(args.binned_out, ["series", "tau", "bin_center", "mean", "stderr", "count"], rows)
    return 0


def cmd_pra(args):
    npanel = _npanel(args)
    est = PrincipalRegressionAnalysis(
        lags=parse_range(args.tau), conditioning=args.conditioning, split_sign=args.split_sign,
        quadratic=args.quadratic, exact_ols=args.exact_ols, n_modes=args.modes,
        keep_matrices=args.sidecar is not None, n_jobs=args.jobs,
    ).fit_normalized(npanel)
    write_json(args.out, {
        "n_stocks": npanel.n_stocks, "n_days": npanel.n_days, "conditioning": args.conditioning,
        "lags": est.lags_, "correlation_eigenvalues": est.correlation_eig_.eigenvalues,
        "records": est.records_,
    })
    if args.sidecar is not None:
        write_sidecar(args.sidecar, est.matrices_["D"])
    return 0


def cmd_null(args):
    npanel = _npanel(args)
    estimator = "sign-split" if args.sign_split else "regression"
    cond = None
    if args.xi == "permute":
        cond = conditioning_series(npanel, args.conditioning)
    stats = null_ensemble(npanel, args.xi, args.samples, seed=args.seed, tau=args.tau,
                          estimator=estimator, cond=cond, n_jobs=args.jobs)
    write_json(args.out, stats.to_dict())
    return 0


def cmd_rmt(args):
    spec = rmt_identity_spectrum(args.q, args.xi, mu_grid=args.mu_range, epsilon=args.epsilon)
    write_csv(args.out, ["mu", "density", "g_real", "cdf"],
              zip(spec.mu_grid, spec.density, spec.g_real, spec.cdf()))
    return 0


def cmd_fit(args):
    cols = read_csv_columns(args.in_path)
    names = list(cols)
    column = args.column or next(n for n in names if n != "tau")
    if "tau" not in cols or column not in cols:
        raise PRAError(f"{args.in_path} needs columns 'tau' and {column!r}")
    curve = LagCurve(np.asarray(cols["tau"], dtype=np.int64), cols[column], column)
    rng = tuple(parse_range(args.range)[[0, -1]]) if args.range else None
    res = fit_two_scale(curve, c_inf=args.pin_asymptote, fit_range=rng)
    write_json(args.out, {**res.to_dict(), "column": column, "fit_range": rng})
    return 0


def cmd_compare(args):
    summary = compare_runs(args.a, args.b, tolerance=args.tol)
    print(summary.to_text())
    return 1 if summary.flagged else 0


def build_parser():
    p = argparse.ArgumentParser(prog="pra-toolkit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run the full pipeline from a flat TOML config")
    s.add_argument("--config", required=True)
    s.add_argument("--dry-run", action="store_true", help="validate the config only")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("synth", help="write a synthetic panel CSV")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--t", type=int, default=4000)
    s.add_argument("--rho0", type=float, default=0.3)
    s.add_argument("--g-minus", type=float, default=0.0)
    s.add_argument("--g-plus", type=float, default=0.0)
    s.add_argument("--mem", type=_mem, default=(20.0, 250.0), metavar="SHORT,LONG")
    s.add_argument("--weight-long", type=float, default=0.5)
    s.add_argument("--vol-leverage", type=float, default=0.0)
    s.add_argument("--sectors", type=int, default=0)
    s.add_argument("--sector-rho0", type=float, default=0.0)
    s.add_argument("--sector-g-minus", type=float, default=0.0)
    s.add_argument("--sector-g-plus", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("leverage", help="index leverage functions and binned curves")
    _add_input(s, multiple=True)
    s.add_argument("--average", action="store_true", help="average curves over several panels")
    s.add_argument("--tau-max", type=int, default=250)
    s.add_argument("--bins", type=int, default=12)
    s.add_argument("--bin-lag", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--binned-out")
    s.set_defaults(func=cmd_leverage)

    s = sub.add_parser("pra", help="principal regression analysis over a lag grid")
    _add_input(s)
    s.add_argument("--tau", default="1:250", metavar="LO:HI")
    s.add_argument("--conditioning", choices=("raw", "gaussianized"), default="gaussianized")
    s.add_argument("--split-sign", action="store_true")
    s.add_argument("--quadratic", action="store_true")
    s.add_argument("--exact-ols", action="store_true")
    s.add_argument("--modes", type=int, default=3)
    s.add_argument("--jobs", type=int)
    s.add_argument("--sidecar", metavar="PATH", help="also write every D(tau) to a binary file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pra)

    s = sub.add_parser("null", help="Monte-Carlo null ensemble")
    _add_input(s)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--xi", choices=XI_LAWS, default="gauss")
    s.add_argument("--tau", type=int, default=1)
    s.add_argument("--sign-split", action="store_true",
                   help="use the sign-restricted estimator (part laws only)")
    s.add_argument("--conditioning", choices=("raw", "gaussianized"), default="gaussianized",
                   help="series shuffled by the permutation null")
    s.add_argument("--jobs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_null)

    s = sub.add_parser("rmt", help="identity-correlation null spectrum")
    s.add_argument("--q", type=float, required=True)
    s.add_argument("--xi", choices=("gauss", "neg-part", "pos-part"), default="gauss")
    s.add_argument("--mu-range", type=_mu_range, default=_mu_range("-15:15:600"), metavar="LO:HI:N")
    s.add_argument("--epsilon", type=float, default=1e-3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rmt)

    s = sub.add_parser("fit", help="two-timescale exponential fit of a lag curve")
    s.add_argument("--in", dest="in_path", required=True)
    s.add_argument("--column", help="value column (default: first non-tau column)")
    s.add_argument("--pin-asymptote", type=float, metavar="VALUE")
    s.add_argument("--range", metavar="LO:HI")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("compare", help="diff two report bundles")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--tol", type=float, help="flag metrics whose max |diff| exceeds this")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PRAError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
