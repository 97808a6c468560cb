"""Deterministic simulation runner: scripted scenarios and seed sweeps."""

from __future__ import annotations

import argparse
import re
from pathlib import Path
from random import Random

from ..simnet import (
    Scenario,
    assert_confidentiality,
    audit_expectation,
    format_trace,
    random_scenario,
    run_scenario,
    spawn_topology,
)


def _spawn(args, seed: int):
    return spawn_topology(
        agencies=args.agencies,
        relays_per_agency=args.relays,
        clients_per_agency=args.clients,
        seed=seed,
        no_seal=getattr(args, "no_seal", False),
    )


def _add_topology_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--agencies", type=int, default=2)
    p.add_argument("--relays", type=int, default=3, help="relay nodes per agency")
    p.add_argument("--clients", type=int, default=2, help="clients per agency")


def _check(result) -> tuple[bool, str]:
    sent, delivered = len(result.sent), len(result.delivered_letters())
    expected, actual = audit_expectation(result)
    violations = assert_confidentiality(result.trace, result.plaintexts)
    ok = delivered == sent and expected == actual and not violations
    line = (f"messages={sent} delivered={delivered} "
            f"audit={actual}/{expected} leaks={len(violations)}")
    return ok, line


def cmd_run(args) -> int:
    net = _spawn(args, args.seed)
    if args.scenario:
        scenario = Scenario.from_text(Path(args.scenario).read_text(encoding="utf-8"))
    else:
        scenario = random_scenario(net, Random(f"scenario:{args.seed}"))
    result = run_scenario(net, scenario)
    ok, line = _check(result)
    print(f"seed={args.seed} {line} trace_frames={len(result.trace)} "
          f"{'ok' if ok else 'FAIL'}")
    if args.trace:
        Path(args.trace).write_text(format_trace(result.trace), encoding="utf-8")
        print(f"trace written to {args.trace}")
    return 0 if ok else 1


def cmd_fuzz(args) -> int:
    m = re.fullmatch(r"(\d+)\.\.(\d+)", args.seeds)
    if m is None:
        print("--seeds wants a range like 0..99")
        return 2
    first, last = int(m.group(1)), int(m.group(2))
    failures = 0
    for seed in range(first, last + 1):
        net = _spawn(args, seed)
        scenario = random_scenario(net, Random(f"scenario:{seed}"))
        result = run_scenario(net, scenario)
        ok, line = _check(result)
        print(f"seed={seed} {line} {'ok' if ok else 'FAIL'}")
        if not ok:
            failures += 1
    print(f"{last - first + 1} seeds, {failures} failures")
    return 0 if failures == 0 else 1


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="simnet",
        description="Run deterministic in-process network simulations.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario")
    run_p.add_argument("--seed", type=int, required=True)
    run_p.add_argument("--scenario", help="scenario file (`step actor action args` "
                                          "lines); omitted = generated from the seed")
    run_p.add_argument("--trace", help="write the frame trace to this file")
    run_p.add_argument("--no-seal", action="store_true",
                       help="negative control: disable sealing; the "
                            "confidentiality check is expected to fail")
    _add_topology_args(run_p)
    run_p.set_defaults(func=cmd_run)

    fuzz_p = sub.add_parser("fuzz", help="sweep seeds with generated scenarios")
    fuzz_p.add_argument("--seeds", required=True, help="inclusive range, e.g. 0..99")
    _add_topology_args(fuzz_p)
    fuzz_p.set_defaults(func=cmd_fuzz)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
