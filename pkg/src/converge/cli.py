"""Command-line entry point: ``converge run|examples|simulate|check-lyapunov``."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .convergent import find_reference, verify_convergent_lyapunov
from .dsl import parse_candidate, parse_system
from .dynamics import simulate
from .errors import ConfigError, ConvergeError, ReferenceFailure
from .incremental import verify_incremental_lyapunov
from .registry import check_rules, expectation_table, load_registry
from .report import envelope_csvs, exit_code, gnuplot_script, load_config, run, to_json
from .sampling import as_box, default_threads, random_pair_grid, random_points


def _system(arg):
    reg = load_registry()
    if arg in reg:
        return reg[arg].system()
    try:
        text = Path(arg).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read system {arg}: {exc}") from None
    return parse_system(text, name=Path(arg).stem)


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def cmd_run(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    threads = args.threads or default_threads()
    report = run(cfg, threads)
    text = to_json(report)
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        for i, (name, csv_text) in enumerate(envelope_csvs(report)):
            side = out.with_name(f"{out.stem}.{name}.csv")
            side.write_text(csv_text)
            if args.emit_gnuplot and i == 0:
                out.with_name(f"{out.stem}.gp").write_text(gnuplot_script(side.name))
    else:
        sys.stdout.write(text)
        if args.emit_gnuplot and envelope_csvs(report):
            sys.stdout.write(gnuplot_script("envelope.csv"))
    exp = report["expectation"]
    summary = f"{report['verdict']['label']}"
    if exp is not None:
        summary += f" ({exp['property']}: expected {exp['expected']}, observed {exp['observed']}: {exp['result']})"
    print(summary, file=sys.stderr)
    return exit_code(report)


def _flag(v):
    return "?" if v is None else ("yes" if v else "no")


def cmd_examples(args):
    reg = load_registry()
    rows = expectation_table(reg)
    cols = list(rows[0][2]) if rows else []
    if args.json:
        print(json.dumps([{"name": n, "title": t, "expected": f} for n, t, f in rows], indent=2))
    else:
        print("name  " + "  ".join(f"{c:>14}" for c in cols) + "  title")
        for name, title, flags in rows:
            print(f"{name:<5} " + "  ".join(f"{_flag(flags[c]):>14}" for c in cols) + f"  {title}")
    problems = check_rules(reg)
    for p in problems:
        print(f"rule check: {p}", file=sys.stderr)
    if not args.json:
        print("rule check: " + ("ok" if not problems else f"{len(problems)} problem(s)"))
    return 1 if problems else 0


def cmd_simulate(args):
    defn = _system(args.system)
    xi = np.array(_floats(args.xi))
    traj = simulate(defn, args.k0, xi, args.steps)
    print("k," + ",".join(f"x{i + 1}" for i in range(defn.n)))
    for k, x in zip(traj.times, traj.states):
        print(f"{int(k)}," + ",".join(repr(float(v)) for v in x))
    if traj.overflowed:
        print(f"overflow at k={traj.overflow_at}", file=sys.stderr)
    return 0


def cmd_check_lyapunov(args):
    defn = _system(args.system)
    try:
        cand = parse_candidate(Path(args.candidate).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read candidate {args.candidate}: {exc}") from None
    box = as_box(args.box, defn.n)
    k_range = (0, 0) if defn.time_invariant else (args.k_min, args.k_max)
    if cand.mode == "convergent":
        ref = find_reference(defn, (k_range[0], k_range[1] + 1), args.washout)
        verdict = verify_convergent_lyapunov(defn, cand, ref, random_points(box, args.samples, k_range, args.seed))
    else:
        verdict = verify_incremental_lyapunov(defn, cand, random_pair_grid(box, args.samples, k_range, args.seed))
    print(json.dumps(verdict.to_dict(), indent=2, sort_keys=True))
    return 0 if verdict.status.value == "Certified" else 1


def build_parser():
    p = argparse.ArgumentParser(prog="converge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an analysis described by a config file")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None)
    r.add_argument("--emit-gnuplot", action="store_true")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("examples", help="list builtin systems and check the expectation matrix")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_examples)

    s = sub.add_parser("simulate", help="print a trajectory as CSV")
    s.add_argument("system")
    s.add_argument("--k0", type=int, default=0)
    s.add_argument("--xi", required=True, help="initial state, comma separated")
    s.add_argument("--steps", type=int, default=10)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check-lyapunov", help="verify a Lyapunov candidate on random samples")
    c.add_argument("system")
    c.add_argument("candidate")
    c.add_argument("--box", type=float, default=1.0)
    c.add_argument("--samples", type=int, default=10000)
    c.add_argument("--seed", type=int, default=42)
    c.add_argument("--k-min", type=int, default=-20)
    c.add_argument("--k-max", type=int, default=20)
    c.add_argument("--washout", type=int, default=100)
    c.set_defaults(func=cmd_check_lyapunov)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (ConfigError, SyntaxError, NameError, ConvergeError, ValueError) as exc:
        if isinstance(exc, ReferenceFailure):
            print(f"error: {exc.kind}: {exc}", file=sys.stderr)
            return 1
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
