"""Command-line entry point: ``nicsim run|list-scenarios|print-config``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path

from ..fabric import ConfigError
from . import scenario as sc

log = logging.getLogger("nicsim")


def cmd_run(ns: argparse.Namespace) -> int:
    names = ns.scenario
    if names == ["all"]:
        names = sc.bundled_names()
    scenarios = [sc.load(n) for n in names]  # validate everything before any simulation starts
    out_dir = Path(ns.out or os.environ.get("NICSIM_OUT", "results"))
    failed = 0
    for s in scenarios:
        rows = sc.run_scenario(s, ns.seed, jobs=max(1, ns.jobs))
        path = sc.emit_csv(rows, out_dir / f"{s['name']}.csv")
        print(sc.summarize(s, rows))
        print(f"wrote {path}")
        if ns.accept:
            failed += sum(1 for _, ok, _ in sc.evaluate(s, rows) if not ok)
    if failed:
        print(f"{failed} acceptance check(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_list(ns: argparse.Namespace) -> int:
    for name in sc.bundled_names():
        s = sc.load(name)
        print(f"{name:<16}{s['kind']:<12}{s.get('description', '')}")
    return 0


def cmd_print_config(ns: argparse.Namespace) -> int:
    s = sc.load(ns.scenario)
    print(json.dumps(s, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nicsim", description="Host-NIC discrete-event simulator benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one or more scenarios and write CSV results")
    r.add_argument("scenario", nargs="+", help="bundled name, path to a JSON file, or 'all'")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory (default $NICSIM_OUT or ./results)")
    r.add_argument("--accept", action="store_true", help="exit nonzero if a bundled check fails")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")
    r.set_defaults(fn=cmd_run)
    ls = sub.add_parser("list-scenarios", help="list bundled scenarios")
    ls.set_defaults(fn=cmd_list)
    pc = sub.add_parser("print-config", help="print a scenario after validation")
    pc.add_argument("scenario")
    pc.set_defaults(fn=cmd_print_config)
    return p


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return ns.fn(ns)
    except (sc.ScenarioError, ConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
