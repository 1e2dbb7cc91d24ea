"""
Command-line front end.

    gridshift schedule <scenario> [--out plan.json]
    gridshift simulate <scenario> [--out run.csv] [--summary run.json]
    gridshift check-stability <scenario>
    gridshift oracle <scenario> [--trials N] [--seed S]

Exit status: 0 on success, 1 on scenario diagnostics or an oracle
counterexample, 2 on infeasible allocation, I/O errors or bad usage.
Diagnostics go to stderr; ``GRIDSHIFT_LOG`` (error, info, debug) sets the
log level, default info.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import control as ctl
from . import scenario as scn
from .sweeps import DEFAULT_SEED, allocation_sweep, stability_sweep
from .wireless import AllocationError

log = logging.getLogger("gridshift")

EXIT_OK = 0
EXIT_DIAG = 1
EXIT_FAIL = 2

_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _setup_logging() -> None:
    name = os.environ.get("GRIDSHIFT_LOG", "info").strip().lower()
    level = _LEVELS.get(name, logging.INFO)
    root = logging.getLogger("gridshift")
    root.handlers[:] = []
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False
    if name not in _LEVELS:
        log.warning("unknown GRIDSHIFT_LOG=%r, using info", name)


def _load(args: argparse.Namespace) -> scn.Scenario:
    try:
        sc = scn.load_scenario(args.scenario)
    except OSError as exc:
        raise _Fail(EXIT_FAIL, f"cannot read {args.scenario}: {exc}")
    except scn.tomllib.TOMLDecodeError as exc:
        raise _Fail(EXIT_FAIL, f"{args.scenario}: not a valid scenario file: {exc}")
    except scn.ScenarioError as exc:
        for d in exc.diagnostics or [scn.Diagnostic("E_PARAM", str(exc))]:
            print(str(d), file=sys.stderr)
        raise _Fail(EXIT_DIAG, "scenario rejected")
    try:
        sc = scn.with_gains(sc, getattr(args, "K_omega", None), getattr(args, "K_P", None),
                            getattr(args, "K_U", None))
    except ctl.ControlError as exc:
        raise _Fail(EXIT_DIAG, f"bad gain override: {exc}")
    diags = scn.validate(sc)
    if diags:
        for d in diags:
            print(str(d), file=sys.stderr)
        raise _Fail(EXIT_DIAG, f"{len(diags)} diagnostic(s)")
    return sc


def _write(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise _Fail(EXIT_FAIL, f"cannot write {path}: {exc}")
    log.info("wrote %s", path)


def _schedule(sc: scn.Scenario):
    try:
        return scn.schedule(sc)
    except AllocationError as exc:
        raise _Fail(EXIT_FAIL, f"allocation infeasible: {exc}")


def cmd_schedule(args: argparse.Namespace) -> int:
    sc = _load(args)
    _, plan, Ts = _schedule(sc)
    doc = plan.to_dict()
    for r, ts in zip(doc["regions"], Ts):
        r["Ts_s"] = ts
    for spec, r in zip(sc.regions, doc["regions"]):
        r["region"] = spec.name
    _write(args.out, json.dumps(doc, indent=2) + "\n")
    for r in doc["regions"]:
        log.info("region %s: tau_max = %.4f ms, Ts = %g ms", r["region"], 1e3 * r["tau_max_s"], 1e3 * r["Ts_s"])
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    sc = _load(args)
    _schedule(sc)  # surfaces infeasibility with the right exit status before running
    ts = scn.run(sc)
    _write(args.out, ts.to_csv())
    if args.summary is not None or args.out is None:
        _write(args.summary, json.dumps(scn.summary(ts), indent=2) + "\n")
    return EXIT_OK


def _fmt_eig(z: complex) -> str:
    return f"{z.real:+.6f}{z.imag:+.6f}j"


def cmd_check_stability(args: argparse.Namespace) -> int:
    sc = _load(args)
    for spec in sc.regions:
        g = spec.graph()
        gains = sc.region_gains(spec)
        rep = ctl.check_gains(gains, g)
        orc = ctl.spectral_radius_oracle(g, gains.K_P)
        print(f"region {spec.name}: {g.n} DGs, edges {[list(e) for e in g.edges]}")
        print(f"  criterion: {rep}")
        print(f"  oracle:    {orc.verdict.value} (spectral radius {orc.spectral_radius:.6f},"
              f" second radius {orc.second_radius:.6f})")
        eigs = sorted(orc.eigenvalues, key=lambda z: (-abs(z), z.real, z.imag))
        left = [f"{i:>4} {int(d):>3} {kw:>8.4g} {kp:>8.4g} {d * kp:>7.4g}"
                for i, (d, kw, kp) in enumerate(zip(g.degrees, gains.K_omega, gains.K_P))]
        head = f"{'node':>4} {'d':>3} {'K_omega':>8} {'K_P':>8} {'d*K_P':>7}"
        width = len(head)
        print(f"  {head} | {'eigenvalue':>22} {'|lambda|':>9}")
        for k in range(max(len(left), len(eigs))):
            lhs = left[k] if k < len(left) else ""
            rhs = f"{_fmt_eig(eigs[k]):>22} {abs(eigs[k]):>9.6f}" if k < len(eigs) else ""
            print(f"  {lhs:<{width}} | {rhs}")
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    sc = _load(args)
    if args.trials < 1:
        raise _Fail(EXIT_FAIL, "--trials must be positive")
    cases = stability_sweep(args.trials, args.seed)
    bad = [c for c in cases if c.verdict is not ctl.Verdict.CONSENSUS_STABLE]
    worst = max(c.second_radius for c in cases)
    print(f"gain criterion vs eigenvalues: {len(cases) - len(bad)}/{len(cases)} ConsensusStable"
          f" (worst second radius {worst:.6f}, seed {args.seed})")
    for c in bad[:5]:
        print(f"  counterexample: n={c.graph.n} edges={[list(e) for e in c.graph.edges]}"
              f" K_P={np.round(c.gains.K_P, 6).tolist()} verdict={c.verdict.value}")

    alloc = allocation_sweep(args.trials, args.seed, base=sc.channel)
    ratios = np.array([a.ratio for a in alloc])
    sym_bad = [a for a in alloc if a.symmetric and a.heuristic != a.optimum]
    far = [a for a in alloc if a.ratio < 0.95 or a.ratio > 1.0 + 1e-12]
    print(f"allocation vs enumeration: worst ratio {ratios.min():.6f}, mean {ratios.mean():.6f};"
          f" {len(alloc) - len(far)}/{len(alloc)} within 5%;"
          f" symmetric exact {sum(a.symmetric for a in alloc) - len(sym_bad)}/{sum(a.symmetric for a in alloc)}")
    for a in (far + sym_bad)[:5]:
        print(f"  counterexample: {a.shape} S={a.S} heuristic={a.heuristic!r} optimum={a.optimum!r}")
    return EXIT_DIAG if (bad or far or sym_bad) else EXIT_OK


def _add_gain_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K-omega", dest="K_omega", type=float, help="override the frequency gain of every DG")
    p.add_argument("--K-P", dest="K_P", type=float, help="override the power-sharing gain of every DG")
    p.add_argument("--K-U", dest="K_U", type=float, help="override the voltage gain of every DG")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridshift", description="Emergency microgrid wireless control testbed.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("schedule", help="allocate carriers and power, print or write the plan")
    p.add_argument("scenario")
    p.add_argument("--out", help="plan JSON path (default: stdout)")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("simulate", help="run the full pipeline")
    p.add_argument("scenario")
    p.add_argument("--out", help="trajectory CSV path (default: stdout)")
    p.add_argument("--summary", help="summary JSON path (default: stdout when --out is not given)")
    _add_gain_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check-stability", help="gain criterion and loop eigenvalues per region")
    p.add_argument("scenario")
    _add_gain_flags(p)
    p.set_defaults(func=cmd_check_stability)

    p = sub.add_parser("oracle", help="seeded randomized cross-checks of the solvers")
    p.add_argument("scenario", help="supplies the channel parameters for the allocation instances")
    p.add_argument("--trials", type=int, default=500, help="instances per sweep (default 500)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"generator seed (default {DEFAULT_SEED})")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except _Fail as exc:
        log.error("%s", exc)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
