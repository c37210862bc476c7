"""Command line front end.

    safefilt list [--filter MODULE]
    safefilt run-builtin ID [--dt DT] [--T T] [--seed N] [--paths N]
                            [--out-dir DIR]
    safefilt run CONFIG [same flags]

Exit status: 0 when every scenario check passed, 1 when a check
failed, 2 for unusable input (unknown id, malformed config). Reports
are printed as "key = value" lines and also written to the output
directory next to any trajectory CSVs.
"""

import argparse
import sys

from .scenarios import (BUILTINS, FILTER_MODULES, ConfigError, run_builtin,
                        run_config, _fmt)


def _add_run_flags(p):
    p.add_argument("--dt", type=float, default=None,
                   help="integration step override")
    p.add_argument("--T", type=float, default=None,
                   help="horizon override")
    p.add_argument("--seed", type=int, default=None,
                   help="noise seed override")
    p.add_argument("--paths", type=int, default=None,
                   help="sample path count override")
    p.add_argument("--out-dir", default=".",
                   help="directory for CSV and report files")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="safefilt",
        description="safety filter scenarios and certificates")
    sub = parser.add_subparsers(dest="command", required=True)

    p_list = sub.add_parser("list", help="list built-in scenarios")
    p_list.add_argument("--filter", default=None, metavar="MODULE",
                        help="only scenarios exercising this module (%s)"
                        % ", ".join(FILTER_MODULES))

    p_rb = sub.add_parser("run-builtin", help="run a built-in scenario")
    p_rb.add_argument("id", help="scenario id from `safefilt list`")
    _add_run_flags(p_rb)

    p_run = sub.add_parser("run", help="run a flat key=value config file")
    p_run.add_argument("config", help="path to the config file")
    _add_run_flags(p_run)
    return parser


def _print_report(result):
    for k, v in result.report.items():
        print("%s = %s" % (k, _fmt(v)))


def _overrides(args):
    return {"dt": args.dt, "T": args.T, "seed": args.seed,
            "paths": args.paths}


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.command == "list":
        if args.filter is not None and args.filter not in FILTER_MODULES:
            print("unknown module %r (choose from: %s)"
                  % (args.filter, ", ".join(FILTER_MODULES)),
                  file=sys.stderr)
            return 2
        for name, b in BUILTINS.items():
            if args.filter is not None and b.module != args.filter:
                continue
            print("%-18s %-13s %s" % (name, b.module, b.summary))
        return 0

    if args.command == "run-builtin":
        if args.id not in BUILTINS:
            print("unknown scenario %r (known: %s)"
                  % (args.id, ", ".join(sorted(BUILTINS))), file=sys.stderr)
            return 2
        result = run_builtin(args.id, _overrides(args), args.out_dir)
        _print_report(result)
        return 0 if result.passed else 1

    # run <config>
    try:
        result = run_config(args.config, _overrides(args), args.out_dir)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    _print_report(result)
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
