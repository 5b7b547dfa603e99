"""Command-line front end.

Exit codes: 0 success, 1 validation error (bad flags, bad spec), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import io
import os
import sys
import tempfile

import numpy as np

from . import simlab
from .assortment import brute_force_assortment, optimal_assortment, plan_assortment
from .bandit import read_traces_csv
from .choice import Instance, InvalidInputError
from .estimator import read_theta_csv

SEED_ENV = "ASSORTMAX_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}")


def _write_text(text: str, out: str):
    """Write atomically to ``out``, or to stdout for ``-``."""
    if out == "-":
        sys.stdout.write(text)
        return
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _load_spec(args, expect):
    spec = simlab.load_spec(args.spec)
    if spec.kind not in expect:
        raise InvalidInputError(f"{args.spec}: kind {spec.kind!r} is not valid here (expected {expect})")
    if args.seed is not None:
        spec.seed = args.seed
    elif os.environ.get(SEED_ENV) is not None and "seed" not in _raw_keys(args.spec):
        spec.seed = _default_seed()
    if args.threads is not None:
        if args.threads < 1:
            raise InvalidInputError("--threads must be >= 1")
        spec.threads = args.threads
    if args.deterministic:
        spec.deterministic = True
    if args.output is not None:
        spec.output_dir = args.output
    if getattr(args, "no_svg", False):
        spec.svg = False
    return spec


def _raw_keys(path):
    import json

    with open(path) as fh:
        return set(json.load(fh))


def cmd_gen(args):
    seed = _default_seed() if args.seed is None else args.seed
    for name in ("m", "n", "r", "K"):
        if getattr(args, name) < 1:
            raise InvalidInputError(f"--{name} must be positive")
    if args.K > args.n:
        raise InvalidInputError("--K must not exceed --n")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    inst = simlab.generate_instance(args.m, args.n, args.r, args.K, rng, args.revenue_rule, args.revenue_param)
    _write_text(inst.to_json(), args.output)


def cmd_estimate(args):
    spec = _load_spec(args, ("static-rmse", "rmse-vs-per-row"))
    rows = simlab.run_rmse_per_row(spec) if spec.kind == "rmse-vs-per-row" else simlab.run_static(spec)
    if spec.output_dir == "-":
        buf = io.StringIO()
        simlab.write_results_csv(rows, buf, spec.deterministic)
        sys.stdout.write(buf.getvalue())
        return
    formats = ("csv", "svg") if spec.svg else ("csv",)
    for p in simlab.emit_report(rows, spec.output_dir, formats, spec.deterministic):
        print(p, file=sys.stderr)


def cmd_bandit(args):
    spec = _load_spec(args, ("dynamic-regret",))
    if spec.checkpoint_dir is None and spec.output_dir != "-":
        spec.checkpoint_dir = os.path.join(spec.output_dir, ".checkpoints")
    try:
        traces, rows = simlab.run_dynamic(spec)
    except KeyboardInterrupt:
        print(f"interrupted; progress saved under {spec.checkpoint_dir}", file=sys.stderr)
        raise
    if spec.checkpoint_dir and os.path.isdir(spec.checkpoint_dir) and not os.listdir(spec.checkpoint_dir):
        os.rmdir(spec.checkpoint_dir)
    if spec.output_dir == "-":
        from .bandit import traces_to_csv

        buf = io.StringIO()
        traces_to_csv(traces, buf, stride=spec.trace_stride)
        sys.stdout.write(buf.getvalue())
        return
    formats = ("csv", "svg") if spec.svg else ("csv",)
    paths = simlab.emit_report(traces, spec.output_dir, formats, spec.deterministic, stride=spec.trace_stride)
    paths += simlab.emit_report(rows, os.path.join(spec.output_dir, "summary"), ("csv",), spec.deterministic)
    for p in paths:
        print(p, file=sys.stderr)


def cmd_plan(args):
    with open(args.instance) as fh:
        inst = Instance.from_json(fh.read())
    theta = inst.theta_star if args.theta is None else read_theta_csv(args.theta, inst.m, inst.n)
    K = inst.K if args.K is None else args.K
    lines = ["type,assortment,value"]
    for i in range(inst.m):
        sol = optimal_assortment(inst.W[i], theta[i], K)
        lines.append(f"{i + 1},{';'.join(str(j + 1) for j in sol.S)},{float(sol.value)!r}")
    sol = plan_assortment(inst.W, theta, inst.mu_star, K)
    lines.append(f"all,{';'.join(str(j + 1) for j in sol.S)},{float(sol.value)!r}")
    _write_text("\n".join(lines) + "\n", args.output)


def cmd_oracle_check(args):
    if not 1 <= args.K <= args.n <= 20:
        raise InvalidInputError("need 1 <= K <= n <= 20")
    seed = _default_seed() if args.seed is None else args.seed
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    failures = 0
    for _ in range(args.trials):
        theta = rng.normal(0.0, 2.0, args.n)
        w = rng.random(args.n)
        a = optimal_assortment(w, theta, args.K).value
        b = brute_force_assortment(w, theta, args.K).value
        if abs(a - b) > 1e-9:
            failures += 1
    print(f"oracle-check: {args.trials - failures}/{args.trials} trials match", file=sys.stderr)
    return 0 if failures == 0 else 2


def cmd_report(args):
    with open(args.results) as fh:
        header = fh.readline().strip()
    if header == "policy,replicate,t,regret_step,regret_cum":
        table = read_traces_csv(args.results)
    elif header.split(",") == simlab.RESULT_FIELDS:
        table = simlab.read_results_csv(args.results)
    else:
        raise InvalidInputError(f"{args.results}: unrecognized CSV header {header!r}")
    formats = ("csv",) if args.no_svg else ("csv", "svg")
    for p in simlab.emit_report(table, args.output, formats):
        print(p, file=sys.stderr)


def build_parser():
    p = _Parser(prog="assortmax", description="Low-rank MNL personalization toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic instance (JSON)")
    g.add_argument("--m", type=int, required=True, help="number of customer types")
    g.add_argument("--n", type=int, required=True, help="number of items")
    g.add_argument("--r", type=int, required=True, help="rank of the preference matrix")
    g.add_argument("--K", type=int, required=True, help="assortment size cap")
    g.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
    g.add_argument("--revenue-rule", choices=simlab.REVENUE_RULES, default="uniform01")
    g.add_argument("--revenue-param", type=float, default=1.0,
                   help="constant value or lognormal sigma")
    g.add_argument("-o", "--output", default="-", help="output path, '-' for stdout")
    g.set_defaults(func=cmd_gen)

    def spec_flags(sp):
        sp.add_argument("--spec", required=True, help="experiment spec (JSON)")
        sp.add_argument("-o", "--output", default=None, help="output directory ('-' for CSV on stdout)")
        sp.add_argument("--seed", type=int, default=None, help="override the spec's master seed")
        sp.add_argument("--threads", type=int, default=None, help="worker processes")
        sp.add_argument("--deterministic", action="store_true", help="canonical, reproducible outputs")
        sp.add_argument("--no-svg", action="store_true", help="skip SVG charts")

    e = sub.add_parser("estimate", help="static recovery experiment (RMSE)")
    spec_flags(e)
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bandit", help="dynamic regret experiment")
    spec_flags(b)
    b.set_defaults(func=cmd_bandit)

    pl = sub.add_parser("plan", help="optimal assortments per type and for the whole population")
    pl.add_argument("--instance", required=True, help="instance JSON from 'gen'")
    pl.add_argument("--theta", default=None, help="preference CSV (type,item,value); default: true preferences")
    pl.add_argument("--K", type=int, default=None, help="assortment cap (default: instance K)")
    pl.add_argument("-o", "--output", default="-", help="output path, '-' for stdout")
    pl.set_defaults(func=cmd_plan)

    oc = sub.add_parser("oracle-check", help="cross-check the assortment optimizer against enumeration")
    oc.add_argument("--n", type=int, required=True)
    oc.add_argument("--K", type=int, required=True)
    oc.add_argument("--trials", type=int, default=200)
    oc.add_argument("--seed", type=int, default=None)
    oc.set_defaults(func=cmd_oracle_check)

    rp = sub.add_parser("report", help="render CSV/SVG from a results or regret-trace CSV")
    rp.add_argument("--results", required=True, help="results.csv or regret_trace.csv")
    rp.add_argument("-o", "--output", required=True, help="output directory")
    rp.add_argument("--no-svg", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        code = args.func(args)
        return 0 if code is None else code
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
