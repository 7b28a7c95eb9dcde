"""Command-line entry point: ``dsmatch {estimate,balance,simulate}``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DSMError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("dsmatch")


def _write_json(obj, out):
    text = json.dumps(obj, indent=2, default=_json_default)
    if out is None or str(out) == "-":
        sys.stdout.write(text + "\n")
    else:
        Path(out).write_text(text + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _load(args):
    from .data import load_config, load_dataset
    cfg = load_config(args.config)
    if args.data is None:
        raise ConfigError("--data is required")
    try:
        with open(args.data, "rb") as fh:
            ds = load_dataset(fh, cfg)
    except OSError as exc:
        raise DataError(f"cannot read data file {args.data}: {exc}") from exc
    return cfg, ds


def cmd_estimate(args):
    from .analysis import estimate
    cfg, ds = _load(args)
    report = estimate(ds, cfg, seed=args.seed, with_replicates=args.replicates)
    _write_json(report, args.out)
    return EXIT_OK


def cmd_balance(args):
    from .analysis import balance_table, format_balance
    cfg, ds = _load(args)
    table = balance_table(ds, cfg)
    if args.out is None or str(args.out) == "-":
        print(format_balance(table))
    else:
        _write_json(table, args.out)
        print(format_balance(table))
    return EXIT_OK


def _scenario_config(args):
    from .data import read_config_file
    from .simulation import ScenarioConfig
    raw = read_config_file(args.config)
    raw = raw.get("simulation", raw)
    cfg = ScenarioConfig.from_dict(raw)
    if args.seed is not None:
        cfg = replace(cfg, seed=int(args.seed))
    if args.threads is not None:
        cfg = replace(cfg, threads=int(args.threads))
    return cfg


def cmd_simulate(args):
    from .simulation import run_monte_carlo
    cfg = _scenario_config(args)

    def progress(done, total):
        log.info("replication %d/%d", done, total)

    report = run_monte_carlo(cfg, progress=progress)
    table = report.table()
    if args.out is None or str(args.out) == "-":
        _write_json(report.to_dict(), None)
    else:
        out = Path(args.out)
        _write_json(report.to_dict(), out)
        out.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
        write_error_csv(report, out.with_name(out.stem + "_errors.csv"))
    print(table, file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return EXIT_OK


def write_error_csv(report, path):
    """Long-format estimation errors (tag, estimand, replication, error) for plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "estimand", "index", "error"])
        for tag, by_est in report.errors.items():
            for est, errs in by_est.items():
                for i, e in enumerate(errs):
                    w.writerow([tag, est, i, repr(float(e))])


def build_parser():
    p = argparse.ArgumentParser(prog="dsmatch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", required=True, help="TOML or JSON config file")
        if data:
            sp.add_argument("--data", help="CSV file")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, help="worker processes")

    e = sub.add_parser("estimate", help="point estimates with bootstrap Wald CIs")
    common(e)
    e.add_argument("--replicates", action="store_true",
                   help="include per-replicate bootstrap values in the report")
    e.set_defaults(func=cmd_estimate)
    b = sub.add_parser("balance", help="covariate balance before and after matching")
    common(b)
    b.set_defaults(func=cmd_balance)
    s = sub.add_parser("simulate", help="repeated-sampling study on the synthetic design")
    common(s, data=False)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DSMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
