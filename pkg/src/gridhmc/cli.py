"""Command-line entry point: ``gridhmc <command> <config> [options]``.

Exit codes: 0 success, 1 usage error, 2 validation error (bad config,
cache mismatch, missing files), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiment as ex
from .config import load_config
from .diagnostics import efficiency_report, format_table
from .errors import NumericalError, ValidationError
from .verify import SUITES, run_suite

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config_arg(sub, many=False):
    if many:
        sub.add_argument("configs", nargs="*", help="experiment config files")
        sub.add_argument("--config", action="append", default=[], help="config file (repeatable)")
    else:
        sub.add_argument("config_pos", nargs="?", metavar="config", help="experiment config file")
        sub.add_argument("--config", help="experiment config file")
    sub.add_argument("--out", help="output directory (overrides [output] dir)")


def build_parser():
    p = _Parser(prog="gridhmc", description="HMC with precomputed grid and sparse-grid forces")
    p.add_argument("-v", "--verbose", action="store_true")
    subs = p.add_subparsers(dest="command", parser_class=_Parser)

    s = subs.add_parser("precompute", help="build or reuse the force grid / sparse interpolant cache")
    _config_arg(s)
    s.add_argument("--force", action="store_true", help="overwrite a cache whose fingerprint differs")
    s.add_argument("--threads", type=int, default=None, help="worker threads for grid evaluation")

    s = subs.add_parser("sample", help="run the configured sampler and write chain CSVs")
    _config_arg(s)
    s.add_argument("--chains", type=int, default=1)
    s.add_argument("--threads", type=int, default=None)

    s = subs.add_parser("compare", help="tabulate efficiency of two or more completed runs")
    _config_arg(s, many=True)
    s.add_argument("--json", dest="json_out", help="also write the comparison as JSON here")

    s = subs.add_parser("diagnose", help="efficiency report for a run or for chain CSV files")
    _config_arg(s)
    s.add_argument("--chain", action="append", default=[], help="chain CSV to diagnose (repeatable)")

    s = subs.add_parser("domain", help="print the domain of interest for a config")
    _config_arg(s)

    s = subs.add_parser("verify-kl", help="check the KL bound for the configured approximation")
    _config_arg(s)

    s = subs.add_parser("verify", help="run a property suite")
    s.add_argument("suite", help="one of: " + ", ".join(SUITES))
    return p


def _one_config(args):
    path = args.config or args.config_pos
    if args.config and args.config_pos:
        raise UsageError("give the config either positionally or with --config, not both")
    if not path:
        raise UsageError(f"{args.command}: a config file is required")
    return load_config(path, args.out)


def _emit(doc):
    print(json.dumps(doc, indent=2, sort_keys=True, default=float))


def cmd_precompute(args):
    cfg = _one_config(args)
    obj, info = ex.precompute(cfg, force=args.force, workers=args.threads)
    kind = "grid" if cfg.uses_grid else "sparse"
    doc = {"cache": str(ex._cache_path(cfg)), "kind": kind, **info, "domain": obj.domain.to_dict()}
    if kind == "grid":
        doc["cells"] = list(obj.cells)
    else:
        doc["nodes"] = obj.n_points
        doc["error_estimate"] = obj.error_estimate
    _emit(doc)


def cmd_sample(args):
    cfg = _one_config(args)
    if args.chains < 1:
        raise UsageError("--chains must be at least 1")
    results = ex.run_sampling(cfg, args.chains, args.threads)
    _emit(
        {
            "out": str(cfg.out_dir),
            "chains": [
                {"acceptance_rate": r.acceptance_rate, "sampling_s": r.total_seconds, "fallback_rate": r.fallback_rate}
                for r in results
            ],
        }
    )


def cmd_compare(args):
    paths = list(args.configs) + list(args.config)
    if len(paths) < 2:
        raise ValidationError("compare needs at least two runs")
    cfgs = [load_config(p) for p in paths]
    if args.out:
        raise UsageError("--out is ambiguous with several configs; set [output] dir in each")
    reports, table = ex.compare(cfgs)
    print(table)
    doc = [r.to_dict() for r in reports]
    print(json.dumps(doc, indent=2, default=float))
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(doc, fh, indent=2, default=float)


def cmd_diagnose(args):
    if args.chain:
        reports = [efficiency_report(ex.read_chain_csv(p), label=p) for p in args.chain]
    else:
        cfg = _one_config(args)
        bad = ex.verify_manifest(cfg)
        if bad:
            raise ValidationError(f"manifest hash mismatch for: {', '.join(bad)}")
        reports, _ = ex.reports_for(cfg)
    print(format_table(reports))
    print(json.dumps([r.to_dict() for r in reports], indent=2, default=float))


def cmd_domain(args):
    cfg = _one_config(args)
    model, _ = ex.load_model(cfg)
    _emit(ex.resolve_domain(cfg, model).to_dict())


def cmd_verify_kl(args):
    cfg = _one_config(args)
    _emit(ex.kl_report(cfg).to_dict())


def cmd_verify(args):
    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    report = run_suite(args.suite)
    _emit(report)


COMMANDS = {
    "precompute": cmd_precompute,
    "sample": cmd_sample,
    "compare": cmd_compare,
    "diagnose": cmd_diagnose,
    "domain": cmd_domain,
    "verify-kl": cmd_verify_kl,
    "verify": cmd_verify,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
