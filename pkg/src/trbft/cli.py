"""Command-line entry point: ``trbft run|sweep|check-formula|compare|replay``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .sim.config import ConfigInvalid, SimConfig, load_config, overrides
from .sim.experiments import analytic_comparison, check_formula, sweep
from .sim.export import export, to_csv
from .sim.faults import ScriptError
from .sim.trace import read_trace
from .sim.world import run


def _int_list(text: str):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = overrides(cfg, seed=args.seed)
    result = run(cfg)
    if args.trace:
        Path(args.trace).write_bytes(result.trace)
    print(json.dumps(result.metrics.summary(), indent=2))
    return 0 if result.metrics.safety and result.metrics.liveness else 1


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    rows = sweep(cfg, args.groups)
    if args.out:
        export(rows, args.out)
    sys.stdout.write(to_csv(rows))
    for r in rows:
        if r.note:
            print(f"# k={r.k}: {r.note}")
    return 0 if all(r.safety and r.liveness for r in rows) else 1


def cmd_check_formula(args) -> int:
    print("k,n,N,formula,note")
    for row in check_formula(args.n_total, args.groups):
        print(f"{row['k']},{row['n']},{row['N']},{row['formula']},{row['note']}")
    return 0


def cmd_compare(args) -> int:
    n = args.n_total // args.groups
    for row in analytic_comparison(args.n_total, args.groups, n):
        print(json.dumps(row))
    return 0


def cmd_replay(args) -> int:
    data = Path(args.trace).read_bytes()
    header, events = read_trace(data)
    cfg = SimConfig.from_json(header.config_json)
    again = run(cfg).trace
    same = again == data
    print(f"events={len(events)} identical={'yes' if same else 'no'}")
    return 0 if same else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trbft", description="Two-tier BFT simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one configuration")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--trace", help="write the binary event trace here")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="vary the group count at fixed N")
    s.add_argument("--config", required=True)
    s.add_argument("--groups", type=_int_list, required=True)
    s.add_argument("--out", help="CSV or JSON file, chosen by suffix")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check-formula", help="closed-form message counts for every valid k")
    c.add_argument("--n-total", type=int, required=True)
    c.add_argument("--groups", type=_int_list)
    c.set_defaults(func=cmd_check_formula)

    a = sub.add_parser("compare", help="analytic comparison with baseline protocols")
    a.add_argument("--n-total", type=int, required=True)
    a.add_argument("--groups", type=int, required=True)
    a.set_defaults(func=cmd_compare)

    t = sub.add_parser("replay", help="re-run a trace's configuration and compare bytes")
    t.add_argument("--trace", required=True)
    t.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigInvalid, ScriptError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
