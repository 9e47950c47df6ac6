"""Command-line entry point: ``quantile-ipp run | report | render``.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import (ConfigError, DimensionError, DomainError, FieldFormatError, PairingError,
                      RangeError)
from ..field import load_field
from ..team import TrialResult
from .render import render_paths
from .report import parse_pairs, report
from .sweep import PRESETS, ResultsTable, SweepSpec, preset

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2
_VALIDATION = (ConfigError, DomainError, PairingError, FieldFormatError, DimensionError, RangeError)


def _cmd_run(args) -> int:
    if args.config is None and args.preset is None:
        raise ConfigError("run needs --config or --preset")
    spec = SweepSpec.from_json(args.config) if args.config else preset(args.preset)
    if args.config and args.preset:
        raise ConfigError("give only one of --config and --preset")
    if args.seeds is not None:
        spec = spec.with_seeds(args.seeds)
    if args.master_seed is not None:
        d = spec.to_dict()
        d["master_seed"] = args.master_seed
        spec = SweepSpec.from_dict(d)
    from .sweep import run_sweep
    table = run_sweep(spec, workers=args.workers, keep_trials=args.keep_trials)
    out = Path(args.out)
    path = table.write(out)
    (out / "sweep.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"{len(table)} rows -> {path}; {len(table.aborted)} aborted")
    return EXIT_OK


def _cmd_report(args) -> int:
    table = ResultsTable.read_csv(args.input)
    pairs = parse_pairs(args.pairs) if args.pairs else []
    ignore = [c for c in (args.ignore or "").split(",") if c]
    rep = report(table, args.group_by, pairs, ignore=ignore)
    out = Path(args.out) if args.out else Path(args.input).parent
    csv_path, svg_path = rep.write(out)
    for g in rep.groups:
        print(f"{args.group_by}={g.group}: n={g.n} median={g.five[2]:.4f}")
    for t in rep.tests:
        print(f"{t.pair.a} vs {t.pair.b} ({t.pair.alternative}): W={t.w:g} p={t.p:.4g} {t.band}")
    print(f"wrote {csv_path} and {svg_path}")
    return EXIT_OK


def _cmd_render(args) -> int:
    with open(args.trial) as fh:
        try:
            result = TrialResult.from_dict(json.load(fh))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"{args.trial}: not a trial record ({exc})") from exc
    fld = load_field(args.field)
    render_paths(result, fld, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quantile-ipp", description="Multirobot quantile-estimation experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every finished trial")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a parameter sweep")
    r.add_argument("--config", help="sweep JSON file")
    r.add_argument("--preset", choices=PRESETS)
    r.add_argument("--seeds", type=int, help="use seeds 0..k-1")
    r.add_argument("--master-seed", type=int)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default="results")
    r.add_argument("--keep-trials", action="store_true", help="also write one JSON record per trial")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("report", help="summarize a results.csv")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--group-by", required=True)
    s.add_argument("--pairs", default="", help="comma list of A:B, A<B or A>B")
    s.add_argument("--ignore", default="", help="comma list of columns left out of the pairing key")
    s.add_argument("--out", help="output directory (default: next to the input)")
    s.set_defaults(func=_cmd_report)

    d = sub.add_parser("render", help="draw a trial's paths over its field")
    d.add_argument("--trial", required=True)
    d.add_argument("--field", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _VALIDATION as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
