"""Command-line front end: ``rateless-avc <subcommand> [flags]``.

Exit codes: 0 success, 1 a reproduction check failed, 2 usage or input error.
Reports go to standard output; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Sequence

from .adversary import AdversaryError, AdversarySpec, cr1_pair, s_hat_1, s_hat_2
from .channel import CapacityError, ChannelError, ChannelFamily, is_example_family, load_family
from .competitive import (
    Parametrization,
    PolicySearchSpace,
    SearchError,
    optimize_cr,
    optimize_regret,
    reproduce_paper,
    rows_to_csv,
)
from .sim import DecoderConfig, SimError, run_sim
from .stopping import (
    GrammarError,
    StateProfile,
    _parse_number,
    optimal_stopping_time,
    parse_policy,
    ratio_from_times,
    regret_from_times,
    stopping_time_fluid,
    stopping_time_integer,
)

THREADS_ENV = "RATELESS_AVC_THREADS"


class UsageError(Exception):
    pass


def _number(text: str) -> float:
    """Float or ``a/b`` fraction, for argparse."""
    try:
        return _parse_number(text, text, 0)
    except GrammarError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _step(text: str) -> float:
    """Grid step; a decimal within 1e-4 (relative) of 1/n is read as exactly 1/n."""
    value = _number(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("grid step must be positive")
    n = round(1 / value)
    if n >= 1 and abs(1 / n - value) <= 1e-4 * value:
        return 1 / n
    return value


def _pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected lo,hi")
    return _number(parts[0]), _number(parts[1])


def _numbers(text: str) -> tuple[float, ...]:
    return tuple(_number(t) for t in text.split(",") if t.strip())


def parse_adversary(text: str, family: ChannelFamily) -> AdversarySpec:
    """``blocks:max=4,grid=0.0625[,horizon=4]`` or ``fixed:<set>[+<set>...]``.

    Fixed sets are ``shat1``, ``shat2``, ``cr1`` or literal profiles separated by ``;``.
    """
    kind, _, rest = text.partition(":")
    if kind == "blocks":
        opts = {"max": "4", "grid": "0.0625"}
        for item in filter(None, rest.split(",")):
            key, eq, value = item.partition("=")
            if not eq or key not in {"max", "grid", "horizon"}:
                raise GrammarError(f"unknown adversary option {item!r}", text, text.find(item))
            opts[key] = value
        try:
            horizon = _number(opts["horizon"]) if "horizon" in opts else None
            return AdversarySpec.blocks(int(opts["max"]), _step(opts["grid"]), horizon)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise GrammarError(str(exc), text, len(kind) + 1) from None
    if kind == "fixed":
        named = {"shat1": s_hat_1, "shat2": s_hat_2, "cr1": cr1_pair}
        profiles: list[StateProfile] = []
        for part in filter(None, rest.split("+")):
            if part in named:
                profiles.extend(named[part](family))
            else:
                profiles.extend(StateProfile.parse(p) for p in part.split(";") if p.strip())
        return AdversarySpec.fixed(profiles, rest)
    raise GrammarError("adversary must start with 'blocks:' or 'fixed:'", text, 0)


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise UsageError(f"{THREADS_ENV} must be an integer >= 1, got {raw!r}")
    return value


def _clean(obj):
    """JSON-safe copy: infinities become the string "inf"."""
    if isinstance(obj, float):
        return "inf" if math.isinf(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def _emit(args, report: dict, csv_text: str | None = None, text: str | None = None) -> None:
    if args.format == "json":
        sys.stdout.write(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
    elif args.format == "csv":
        if csv_text is None:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            flat = {k: v for k, v in _clean(report).items() if not isinstance(v, (dict, list))}
            writer.writerow(flat.keys())
            writer.writerow(flat.values())
            csv_text = buf.getvalue()
        sys.stdout.write(csv_text)
    else:
        if text is None:
            text = "\n".join(f"{k}: {v}" for k, v in _clean(report).items()) + "\n"
        sys.stdout.write(text)


# -- subcommands ----------------------------------------------------------------


def cmd_capacity(args, family: ChannelFamily) -> int:
    states = []
    for (label, _), res in zip(family.states, family.capacity_results):
        states.append(
            {
                "label": label,
                "capacity": res.capacity,
                "maximizer": res.maximizer.tolist(),
                "iterations": res.iterations,
                "residual": res.residual,
            }
        )
    report = {"channel": args.channel, "states": states}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "capacity", "maximizer"])
    for s in states:
        writer.writerow([s["label"], repr(s["capacity"]), " ".join(repr(x) for x in s["maximizer"])])
    text = "".join(f"C{s['label']} = {s['capacity']:.10f} bits\n" for s in states)
    _emit(args, report, buf.getvalue(), text)
    return 0


def cmd_stopping(args, family: ChannelFamily) -> int:
    policy = parse_policy(args.policy)
    profile = StateProfile.parse(args.profile)
    tau = stopping_time_fluid(family, policy, profile).tau
    tau_star = optimal_stopping_time(family, profile).tau
    report = {
        "policy": policy.to_dict(),
        "profile": profile.encode(),
        "tau": tau,
        "tau_star": tau_star,
        "ratio": ratio_from_times(tau_star, tau),
        "regret": regret_from_times(tau_star, tau),
    }
    if args.k is not None:
        report["k"] = args.k
        report["tau_integer"] = stopping_time_integer(family, policy, profile, args.k)
    text = (
        f"tau = {tau:.12g} (per k)\ntau* = {tau_star:.12g} (per k)\n"
        f"ratio = {report['ratio']:.12g}\nregret = {report['regret']:.12g}\n"
    )
    if args.k is not None:
        text += f"tau_k = {report['tau_integer']} channel uses at k = {args.k}\n"
    _emit(args, report, text=text)
    return 0


def _space(args, family: ChannelFamily) -> PolicySearchSpace:
    param = Parametrization(args.parametrization)
    ranges = None
    if param is Parametrization.EXAMPLE_SYMMETRIC and args.pieces >= 2:
        p1_max = args.p1_max if args.p1_max is not None else (2 / 3 if is_example_family(family) else 1.0)
        ranges = ((0.0, p1_max),) + ((0.0, 1.0),) * (args.pieces - 1)
    return PolicySearchSpace(
        args.pieces,
        args.grid,
        args.tgrid,
        args.t_range,
        param,
        ranges,
        args.inject_p,
        args.inject_t,
    )


def _search(args, family: ChannelFamily, objective: str) -> int:
    adversary = parse_adversary(args.adversary, family)
    space = _space(args, family)
    fn = optimize_cr if objective == "ratio" else optimize_regret
    rep = fn(family, space, adversary, args.refine, args.exhaustive, _threads())
    diag = rep.diagnostics
    print(
        f"searched {diag['policies']} policies, {diag['exact_evaluations']} evaluated exactly "
        f"against {diag['adversary_profiles']} profiles",
        file=sys.stderr,
    )
    key = "cr_lower" if objective == "ratio" else "regret"
    value = rep.cr_lower if objective == "ratio" else rep.regret
    report = {
        key: value,
        "best_policy": rep.best_policy.to_dict(),
        "worst_witness": rep.worst_witness.encode(),
        "adversary": adversary.describe(),
        "diagnostics": diag,
    }
    text = (
        f"{key} = {value:.12g}\nbest policy = {json.dumps(_clean(rep.best_policy.to_dict()))}\n"
        f"worst profile = {rep.worst_witness.encode()}\nadversary = {adversary.describe()}\n"
        f"note = {diag['note']}\n"
    )
    value_name = "worst_ratio" if objective == "ratio" else "worst_regret"
    _emit(args, report, rows_to_csv(rep.rows, space.ell, value_name), text)
    return 0


def cmd_cr(args, family: ChannelFamily) -> int:
    return _search(args, family, "ratio")


def cmd_regret(args, family: ChannelFamily) -> int:
    return _search(args, family, "regret")


def cmd_simulate(args, family: ChannelFamily) -> int:
    policy = parse_policy(args.policy)
    profile = StateProfile.parse(args.profile)
    config = DecoderConfig(args.g, args.delta, args.min_subchunk)
    out = run_sim(
        family, policy, profile, args.k, config, args.trials, args.seed,
        decode_time=args.decode_time, ensemble=args.ensemble, max_k=args.max_k, workers=_threads(),
    )
    report = {
        "k": args.k,
        "delta": args.delta,
        "g": args.g,
        "trials": out.trials,
        "errors": out.errors,
        "error_rate": out.error_rate,
        "decode_time": out.decode_time,
        "stopping_time": out.stopping_time,
        "seed": args.seed,
        "profile": profile.encode(),
        "policy": args.policy,
        "ensemble": args.ensemble,
        "subchunks": [d.__dict__ for d in out.per_subchunk_diag],
    }
    text = (
        f"errors = {out.errors}/{out.trials} ({out.error_rate:.4f})\n"
        f"decode time = {out.decode_time} channel uses (tau_k = {out.stopping_time})\n"
    )
    _emit(args, report, text=text)
    return 0


def cmd_reproduce(args, family: ChannelFamily) -> int:
    rep = reproduce_paper(family, fast=args.fast)
    lines = [
        f"(a) CR_1            = {rep.cr1:.12g}",
        f"(b) CR_2 lower      = {rep.cr2_lower:.12g}",
        f"(c) CR upper        = {rep.cr_upper:.12g}",
        f"    CR_1 < CR_2 lower: {rep.cr1 < rep.cr2_lower}",
    ]
    lines += [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.12g} (target {c.target})" for c in rep.checks]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["check", "value", "target", "passed"])
    for c in rep.checks:
        writer.writerow([c.name, repr(c.value), c.target, int(c.passed)])
    report = rep.to_dict()
    report["strict_separation"] = rep.cr1 < rep.cr2_lower
    _emit(args, report, buf.getvalue(), "\n".join(lines) + "\n")
    for c in rep.checks:
        if not c.passed:
            print(f"check failed: {c.name}: {c.value!r} (target {c.target})", file=sys.stderr)
    return 0 if rep.passed else 1


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--channel", default="example", help='channel JSON file or "example" (default)')
    common.add_argument("--format", choices=("json", "csv", "text"), default="text", help="output format")
    common.add_argument("--seed", type=int, default=0, help="random seed (simulate)")

    parser = argparse.ArgumentParser(
        prog="rateless-avc",
        description="Stopping times, competitive ratio and regret of rateless codes over arbitrarily varying channels.",
        epilog=f"Searches and simulations use {THREADS_ENV} threads (default: all cores).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("capacity", parents=[common], help="per-state capacities")

    p = sub.add_parser("stopping", parents=[common], help="stopping times of one policy on one profile")
    p.add_argument("--policy", required=True, help="single:<p>, two:<p1>@<t>,<p2> or policy JSON")
    p.add_argument("--profile", required=True, help='state profile, e.g. "1^1,2^inf"')
    p.add_argument("--k", type=int, help="also report the integer stopping time for k message bits")

    for name, helptext in (("cr", "best competitive ratio over a policy grid"), ("regret", "least worst-case regret over a policy grid")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--pieces", type=int, default=2, help="number of policy pieces")
        p.add_argument("--grid", type=_step, default=1 / 66, help="step of the distribution-parameter grid")
        p.add_argument("--tgrid", type=_step, default=0.125, help="step of the switch-time grid")
        p.add_argument("--t-range", type=_pair, default=(1.0, 2.0), help="switch-time range lo,hi")
        p.add_argument("--p1-max", type=_number, help="cap on the first piece's parameter (example default 2/3)")
        p.add_argument("--inject-p", type=_numbers, default=(), help="extra parameter values, comma separated")
        p.add_argument("--inject-t", type=_numbers, default=(), help="extra switch times, comma separated")
        p.add_argument("--parametrization", choices=("symmetric", "simplex"), default="symmetric")
        p.add_argument("--adversary", default="blocks:max=4,grid=0.0625", help="blocks:max=..,grid=..[,horizon=..] or fixed:shat1+shat2")
        p.add_argument("--refine", action="store_true", help="local refinement around the grid optimum")
        p.add_argument("--exhaustive", action="store_true", help="evaluate every policy exactly (no screening)")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo decoding error")
    p.add_argument("--policy", default="single:2/3")
    p.add_argument("--profile", default="1^inf")
    p.add_argument("--k", type=int, default=8, help="message bits")
    p.add_argument("--delta", type=float, default=0.25, help="decode at ceil((1+delta) tau_k)")
    p.add_argument("--g", type=float, default=DecoderConfig.g, help="joint-type tolerance (l-inf)")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--decode-time", type=int, help="override the decoding time in channel uses")
    p.add_argument("--min-subchunk", type=int, default=4, help="shorter sub-chunks are ignored")
    p.add_argument("--ensemble", action="store_true", help="fresh codebook per trial")
    p.add_argument("--max-k", type=int, default=14, help="size guard on k")

    p = sub.add_parser("reproduce", parents=[common], help="check the ratio chain on the example family")
    p.add_argument("--fast", action="store_true", help="coarser grids, tolerance 0.03")
    return parser


COMMANDS = {
    "capacity": cmd_capacity,
    "stopping": cmd_stopping,
    "cr": cmd_cr,
    "regret": cmd_regret,
    "simulate": cmd_simulate,
    "reproduce": cmd_reproduce,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        family = load_family(args.channel)
        return COMMANDS[args.command](args, family)
    except (ChannelError, CapacityError, AdversaryError, SearchError, SimError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
