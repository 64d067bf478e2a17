"""Command-line entry points.

Verbs:
  simulate <config>   Monte-Carlo sweep; writes trial and summary CSVs.
  crb <config>        Cramer-Rao bound curves; writes a CSV.
  estimate <data>     One-shot estimation from a binary observation matrix.
  presets             List shipped scenario names.

<config> is a YAML file path or a shipped preset name.  Exit status is 0 on
success and 2 on configuration/validation problems.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import matio
from .arrays import PilotBlock, full_ula
from .estimator import EstimatorConfig, estimate, estimate_aqnm, estimate_ls
from .experiments import (ConfigError, aggregate, build_quantizer, load_config,
                          parse_variant, run_crb_curves, run_experiment,
                          write_crb_csv, write_summary_csv, write_trial_csv)
from .presets import list_presets, load_preset
from .quantizer import quantize_complex


def _resolve_config(ref):
    if os.path.exists(ref):
        return load_config(ref)
    try:
        return load_preset(ref)
    except KeyError:
        raise ConfigError(f"{ref!r} is neither a config file nor a preset name; "
                          f"presets: {list_presets()}")


def _cmd_simulate(args):
    cfg = _resolve_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    records = run_experiment(cfg, workers=args.workers)
    out = args.out or f"{cfg.scenario}_results.csv"
    stem, ext = os.path.splitext(out)
    summary_path = f"{stem}_summary{ext or '.csv'}"
    write_trial_csv(records, out)
    summary = aggregate(records)
    write_summary_csv(summary, summary_path)
    print(f"wrote {len(records)} trial rows to {out}")
    print(f"wrote {len(summary)} summary rows to {summary_path}")
    for row in summary:
        sr = "" if row["success_rate"] is None else f"  P(success)={row['success_rate']:.3f}"
        print(f"  {row['variant']:>22s}  {row['sweep_name']}={row['sweep_value']}"
              f"  NMSE={row['nmse_db']:.2f} dB{sr}")
    return 0


def _cmd_crb(args):
    cfg = _resolve_config(args.config)
    rows = run_crb_curves(cfg)
    out = args.out or f"{cfg.scenario}_crb.csv"
    write_crb_csv(rows, out)
    print(f"wrote {len(rows)} CRB rows to {out}")
    return 0


def _cmd_estimate(args):
    data = matio.read_matrix(args.data_file)   # T x M observation matrix
    t, m = data.shape
    if args.pilot_file:
        x = matio.read_matrix(args.pilot_file).ravel()
        if x.size != t:
            raise ConfigError(f"pilot length {x.size} != data rows {t}")
    else:
        x = np.ones(t, dtype=complex)
    pilot = PilotBlock(x=x)
    geom = full_ula(m)
    y = data.reshape(-1)                        # pilot-major stacking
    pv = parse_variant(args.variant)
    if pv.sequential:
        raise ConfigError("one-shot estimation takes a non-sequential variant")
    est_cfg = EstimatorConfig()
    if pv.family == "ls":
        est = estimate_ls(y, pilot)
    elif pv.family == "gl-vbce":
        est = estimate(y, pilot, geom, args.sigma2, config=est_cfg, power=args.power)
    else:
        bits = pv.bit_depth if pv.bit_depth is not None else args.bit_depth
        spec = build_quantizer(bits, args.power)
        codes = quantize_complex(spec, y)
        if pv.family == "gl-qvbce":
            est = estimate(codes, pilot, geom, args.sigma2, quantizer=spec,
                           config=est_cfg, power=args.power)
        else:
            est = estimate_aqnm(codes, pilot, geom, args.sigma2, spec,
                                config=est_cfg, power=args.power)
    if est.l_hat is None:
        print(f"variant={args.variant}  (no path model)")
    else:
        print(f"variant={args.variant}  L_hat={est.l_hat}  "
              f"iterations={est.iterations_used}  converged={est.converged}")
        for k in range(est.l_hat):
            print(f"  path {k}: theta={est.theta_hat[k]:+.6f} rad  "
                  f"g={est.g_hat[k]:.6f}  phi={est.varphi_hat[k]:+.6f} rad")
    if args.out:
        matio.write_matrix(args.out, est.h_hat[None, :])
        print(f"wrote channel estimate (1 x {m}) to {args.out}")
    return 0


def _cmd_presets(_args):
    for name in list_presets():
        print(name)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="qvbce",
                                description="Gridless quantized variational "
                                            "Bayesian channel estimation")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte-Carlo sweep")
    sim.add_argument("config", help="config file path or preset name")
    sim.add_argument("--seed", type=int, default=None, help="override master seed")
    sim.add_argument("--trials", type=int, default=None, help="override trial count")
    sim.add_argument("--out", default=None, help="trial CSV path")
    sim.add_argument("--workers", type=int, default=1, help="parallel trial workers")
    sim.set_defaults(func=_cmd_simulate)

    crb = sub.add_parser("crb", help="emit Cramer-Rao bound curves")
    crb.add_argument("config", help="config file path or preset name")
    crb.add_argument("--out", default=None, help="CSV path")
    crb.set_defaults(func=_cmd_crb)

    est = sub.add_parser("estimate", help="estimate a channel from a data file")
    est.add_argument("data_file", help="binary T x M complex observation matrix")
    est.add_argument("--pilot-file", default=None,
                     help="binary pilot vector (length T); default all-ones")
    est.add_argument("--variant", default="gl-vbce",
                     help="estimator variant (default gl-vbce)")
    est.add_argument("--sigma2", type=float, default=1.0, help="noise variance")
    est.add_argument("--power", type=float, default=1.0, help="signal power P")
    est.add_argument("--bit-depth", type=int, default=1,
                     help="ADC bits for quantized variants without a suffix")
    est.add_argument("--out", default=None, help="write h_hat as a 1 x M matrix")
    est.set_defaults(func=_cmd_estimate)

    pre = sub.add_parser("presets", help="list shipped scenario presets")
    pre.set_defaults(func=_cmd_presets)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
