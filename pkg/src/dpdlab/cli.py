"""Command line entry point: ``dpdlab {simulate,verify-theorem,fit,benchmark,table1}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .chain import DemodConfig, chain_S, cubic_model
from .compensator import compensate, fit_S_hat, prune, save_model
from .experiments import (
    ExperimentConfig,
    _fast_system,
    _structures,
    emit_outputs,
    qam_source,
    read_rows_csv,
    run_benchmark,
    table1_report,
    verify_theorem,
)
from .frames import DtFrame
from .metrics import evm


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _cases(text):
    # "0:2:5,0:4:5,2:2:5"
    return tuple(tuple(int(v) for v in c.split(":")) for c in text.split(",") if c.strip())


# flag -> (config field, converter)
_OVERRIDES = {
    "T": ("T", float),
    "M": ("M", int),
    "R": ("R", int),
    "N": ("N", int),
    "deltas": ("deltas", _floats),
    "taus": ("taus", _floats),
    "qam_order": ("qam_order", int),
    "plain_cases": ("plain_cases", _cases),
    "fit_seed": ("fit_seed", int),
    "val_seed": ("val_seed", int),
    "fit_frames": ("fit_frames", int),
    "epsilon": ("prune_epsilon", float),
    "ridge": ("ridge", float),
    "jobs": ("jobs", int),
    "csv": ("csv_path", str),
    "svg": ("svg_path", str),
}


def build_config(args) -> ExperimentConfig:
    doc = {}
    if args.config:
        doc.update(ExperimentConfig.from_json(args.config).__dict__)
    for flag, (name, conv) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            doc[name] = conv(value)
    if args.no_equalize:
        doc["equalize"] = False
    if args.no_prune:
        doc["prune"] = False
    if args.no_time:
        doc["record_time"] = False
    if args.paper_scale:
        return ExperimentConfig.paper_scale(**{k: v for k, v in doc.items() if k not in ("R", "N", "fit_frames")})
    return ExperimentConfig.from_dict(doc)


def _common(p):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--paper-scale", action="store_true", help="R=1000, N=4096, one fit frame")
    for flag in _OVERRIDES:
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, default=None)
    p.add_argument("--no-equalize", action="store_true")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--no-time", action="store_true", help="write 0 wall time so CSVs are reproducible")
    p.add_argument("-v", "--verbose", action="store_true")


def cmd_simulate(args, config):
    params = config.params
    cfg = DemodConfig(equalize=config.equalize)
    model = cubic_model(args.delta, config.taus, config.T)
    u = qam_source(config.qam_order, params, config.val_seed)
    v = chain_S(u, model, cfg)
    ideal = chain_S(DtFrame(2 * u.samples - v.samples, params), model, cfg)
    print(f"delta={args.delta:g} N={params.N} R={params.R}")
    print(f"EVM none   {evm(u, v):8.2f} dB")
    print(f"EVM ideal  {evm(u, ideal):8.2f} dB")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("n", "u_re", "u_im", "v_re", "v_im"))
            for n, (a, b) in enumerate(zip(u.samples, v.samples)):
                w.writerow((n, repr(a.real), repr(a.imag), repr(b.real), repr(b.imag)))
    return 0


def cmd_verify(args, config):
    report = verify_theorem(config)
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def cmd_fit(args, config):
    params = config.params
    cfg = DemodConfig(equalize=config.equalize)
    model = cubic_model(args.delta, config.taus, config.T)
    basis = dict(_structures(config))[args.structure]
    rng = np.random.default_rng(config.fit_seed)
    w_fit = [qam_source(config.qam_order, params, rng) for _ in range(config.fit_frames)]
    v_fit = [chain_S(w, model, cfg) for w in w_fit]
    fitted = fit_S_hat(w_fit, v_fit, basis, config.ridge)
    u = qam_source(config.qam_order, params, config.val_seed)
    v_u = chain_S(u, model, cfg)
    print(f"{args.structure}: {fitted.n_coeffs} coefficients")
    print(f"EVM none       {evm(u, v_u):8.2f} dB")
    print(f"EVM fitted     {evm(u, chain_S(compensate(fitted, u), model, cfg)):8.2f} dB")
    out = fitted
    if config.prune:
        system = _fast_system(model, params, cfg, u, v_u)
        out, report = prune(fitted, u, system, config.prune_epsilon, args.structure)
        print(f"EVM pruned     {evm(u, chain_S(compensate(out, u), model, cfg)):8.2f} dB")
        print(f"significant    {report.n_significant} (threshold {report.threshold:.3e})")
    if args.save:
        save_model(out, args.save)
    return 0


def cmd_benchmark(args, config):
    result = run_benchmark(config)
    for r in result.rows:
        print(f"{r.delta:<7g} {r.structure:<18} {r.evm_db:8.2f} dB  {r.n_significant:>5}/{r.n_coeffs:<5}")
    for key, msg in result.errors.items():
        print(f"fit failed {key}: {msg}", file=sys.stderr)
    return 0


def cmd_table1(args, config):
    rows = read_rows_csv(args.from_csv) if args.from_csv else None
    print(table1_report(rows, config, args.delta))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpdlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the chain on one QAM frame")
    _common(p)
    p.add_argument("--delta", type=float, default=0.02)
    p.add_argument("--out", help="CSV of input and output samples")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-theorem", help="closed form vs oracle; exit 1 on violation")
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fit", help="fit and prune a single compensator structure")
    _common(p)
    p.add_argument("--structure", default="structured", choices=("structured", "volterra1", "volterra2", "volterra3"))
    p.add_argument("--delta", type=float, default=0.02)
    p.add_argument("--save", help="write the (pruned) model as JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("benchmark", help="full delta sweep")
    _common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("table1", help="coefficient totals and significant counts")
    _common(p)
    p.add_argument("--from-csv", help="benchmark CSV to take significant counts from")
    p.add_argument("--delta", type=float, default=0.02)
    p.set_defaults(func=cmd_table1)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = build_config(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return args.func(args, config)


if __name__ == "__main__":
    sys.exit(main())
