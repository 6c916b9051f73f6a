"""Command line entry point: ``transpoint <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import audit
from .continuation import continue_solutions
from .errors import ConfigError
from .jacobi import classify, morse_index
from .records import TranslatedPointRecord
from .solver import dedup_cluster, families, window_scan

log = logging.getLogger("transpoint")

LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _window(text: str):
    try:
        a, b = (float(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("window must look like a,b") from exc
    return a, b


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON model configuration")
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--seed", type=int, default=None, help="sampling jitter seed (default 0)")
    common.add_argument("--threads", type=int, default=None)

    p = argparse.ArgumentParser(prog="transpoint", description="Translated points of maps on unit tangent bundles.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="scan a shift window for translated points")
    s.add_argument("--window", type=_window)
    c = sub.add_parser("classify", parents=[common], help="add Morse index and nondegeneracy data")
    c.add_argument("--records", required=True)
    k = sub.add_parser("continue", parents=[common], help="continue records along a homotopy")
    k.add_argument("--from", dest="source", required=True)
    k.add_argument("--steps", type=int, default=20)
    z = sub.add_parser("audit-zoll", parents=[common], help="run the Zoll audits")
    z.add_argument("--window", type=_window)
    z.add_argument("--unbounded", action="store_true", help="also run the unbounded-shift audit")
    sp = sub.add_parser("spectrum", parents=[common], help="shift spectrum report")
    sp.add_argument("--window", type=_window)
    sp.add_argument("--csv")
    sp.add_argument("--svg")
    return p


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config(args, window=None) -> audit.AuditConfig:
    if not args.config:
        raise ConfigError("--config is required")
    return audit.load_config(args.config, seed=args.seed, threads=args.threads, window=window)


def _load_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _records(data) -> list[TranslatedPointRecord]:
    return [TranslatedPointRecord.from_dict(r) for r in data["records"]]


def cmd_solve(args) -> int:
    cfg = _config(args, args.window)
    recs = window_scan(cfg.fmap, cfg.window, cfg.scan, cfg.solver)
    _emit(audit.to_json({"config": cfg.echo(), "records": [r.to_dict() for r in recs]}), args.out)
    return 0


def cmd_classify(args) -> int:
    data = _load_json(args.records)
    cfg = audit.AuditConfig.from_dict(data["config"], seed=args.seed, threads=args.threads)
    recs = [classify(cfg.fmap, r) for r in _records(data)]
    recs = dedup_cluster(recs, cfg.fmap)
    # the index is constant along a connected family; one representative each
    for members in families(recs).values():
        idx = morse_index(cfg.fmap, members[0])
        for r in members:
            r.morse_index = idx
    _emit(audit.to_json({"config": cfg.echo(), "records": [r.to_dict() for r in recs]}), args.out)
    return 0


def cmd_continue(args) -> int:
    cfg = _config(args)
    if cfg.homotopy is None:
        raise ConfigError("continue needs a 'homotopy' in the config")
    recs = _records(_load_json(args.source))
    branches = continue_solutions(cfg.homotopy, recs, args.steps, cfg.solver)
    _emit(audit.to_json({"config": cfg.echo(), "steps": args.steps,
                         "branches": [b.to_dict() for b in branches]}), args.out)
    return 0


def cmd_audit(args) -> int:
    cfg = _config(args, args.window)
    rep = audit.run_zoll_audit(cfg)
    if args.unbounded:
        rep.verdicts.append(audit.audit_unbounded(cfg))
    _emit(audit.report(rep), args.out)
    for v in rep.verdicts:
        log.info("%s: %s", v.name, v.status)
        if v.status == audit.VIOLATED:
            log.error("%s: hypothesis violated (%s)", v.name, v.details.get("reason"))
    return 0 if rep.ok else 1


def cmd_spectrum(args) -> int:
    cfg = _config(args, args.window)
    rep = audit.run_spectrum(cfg)
    _emit(audit.report(rep), args.out)
    if args.csv:
        _emit(audit.report(rep, "csv"), args.csv)
    if args.svg:
        _emit(audit.report(rep, "svg"), args.svg)
    return 0


COMMANDS = {"solve": cmd_solve, "classify": cmd_classify, "continue": cmd_continue,
            "audit-zoll": cmd_audit, "spectrum": cmd_spectrum}


def main(argv=None) -> int:
    level = os.environ.get("TP_LOG", "error").lower()
    logging.basicConfig(level=LEVELS.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"transpoint: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
