"""Command line front end: ``sicnode <subcommand> --config PATH``.

Exit codes are listed in :data:`EXIT_CODES`; every failure also prints a
one-line JSON object ``{"error": kind, "message": ..., "field": ...}`` on
stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import (run_bell, run_dd_t2, run_odmr, run_odnmr, run_rabi, run_ramsey,
                          run_tomo, write_result)

log = logging.getLogger(__name__)

EXIT_CODES = {
    "ok": 0,
    "unknown_subcommand": 2,
    "unreadable_config": 3,
    "schema_violation": 4,
    "runtime_error": 5,
    "usage": 64,
}

SUBCOMMANDS = ("odmr", "odnmr", "rabi", "ramsey", "dd-t2", "bell", "tomo", "validate-config")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits on its own; route errors through our codes instead
    def error(self, message):
        raise _UsageError(message)


def _parser():
    p = _Parser(prog="sicnode", description="Spin-register experiment simulations.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, metavar="PATH")
        s.add_argument("--seed", type=int, default=None, metavar="N")
        s.add_argument("--out", default=None, metavar="DIR")
        s.add_argument("--threads", type=int, default=1, metavar="N")
        if name == "ramsey":
            s.add_argument("--target", choices=("electron", "nuclear"), default=None)
    return p


def _fail(kind, message, field=None):
    err = {"error": kind, "message": message}
    if field is not None:
        err["field"] = field
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return EXIT_CODES[kind]


def _run(args, cfg):
    out = Path(args.out or cfg.output_path)
    threads = max(1, args.threads)
    if args.command == "validate-config":
        print(json.dumps({"valid": True, "config_hash": cfg.hash()}))
        return
    if args.command == "tomo":
        result, table = run_tomo(cfg, threads)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "tomo.counts.csv")
        paths = write_result(result, out, "tomo")
    elif args.command == "ramsey":
        result = run_ramsey(cfg, args.target, threads)
        paths = write_result(result, out, result.kind)
    else:
        runner = {"odmr": run_odmr, "odnmr": run_odnmr, "rabi": run_rabi,
                  "dd-t2": run_dd_t2, "bell": run_bell}[args.command]
        result = runner(cfg, threads)
        paths = write_result(result, out, args.command.replace("-", "_"))
    for p in paths:
        print(p)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv and not argv[0].startswith("-") and argv[0] not in SUBCOMMANDS:
        return _fail("unknown_subcommand", f"unknown subcommand {argv[0]!r}; "
                     f"expected one of {', '.join(SUBCOMMANDS)}")
    try:
        args = _parser().parse_args(argv)
    except _UsageError as exc:
        return _fail("usage", str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        return _fail("usage", "a subcommand is required")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(exc.kind, str(exc), exc.field)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
        cfg.noise["seed"] = None
    try:
        _run(args, cfg)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable error
        log.debug("runner failed", exc_info=True)
        return _fail("runtime_error", f"{type(exc).__name__}: {exc}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
