"""Command-line front end: ``mrenforce run|check|explore|replay``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import jsonschema
import yaml

from . import em, env_for, lang, oracle, policies, tracefmt
from .lang import ChannelEnv

BUDGET_ENV = "MRENFORCE_BUDGET"

# run
EXIT_OK = 0
EXIT_BUDGET = 2
EXIT_LOAD = 3
EXIT_DEADLOCK = 4
# check / explore / replay
EXIT_VIOLATED = 1
EXIT_INCONCLUSIVE = 2

RUN_EXIT = {em.COMPLETED: EXIT_OK, em.QUIESCENT: EXIT_OK, em.DEADLOCKED: EXIT_DEADLOCK,
            em.BUDGET: EXIT_BUDGET, "terminated": EXIT_OK, "residual": EXIT_OK,
            "stuck": EXIT_DEADLOCK, "budget": EXIT_BUDGET}


class LoadError(Exception):
    pass


def default_budget() -> int:
    raw = os.environ.get(BUDGET_ENV)
    if raw is None:
        return 10_000
    try:
        val = int(raw)
    except ValueError:
        raise LoadError(f"{BUDGET_ENV}={raw!r} is not an integer") from None
    if val < 1:
        raise LoadError(f"{BUDGET_ENV} must be positive")
    return val


# --------------------------------------------------------------------------
# loading


def load_env(args) -> ChannelEnv:
    if getattr(args, "channels", None):
        return lang.load_channels(args.channels)
    return env_for(args.program)


def load_program(path, env: ChannelEnv) -> tuple[lang.Stmt, str]:
    text = Path(path).read_text()
    return lang.parse_program(text, env), text


def load_policy_arg(name: str) -> tuple[str, policies.PolicyConfig]:
    if name in policies.SHIPPED:
        return name, policies.get_policy(name)
    pol = policies.load_policy(name)
    return pol.name, pol


def parse_alphabets(specs: list[str]) -> dict:
    """``--alphabet cL2=0,1,2`` (channel, level H/L, or kind bool/int)."""
    out = {}
    for spec in specs or []:
        key, sep, vals = spec.partition("=")
        if not sep or not vals:
            raise LoadError(f"bad alphabet {spec!r}; expected NAME=V1,V2,...")
        out[key.strip()] = tuple(lang.parse_value(v.strip()) for v in vals.split(","))
    return out


def _sched(args) -> em.SchedulerSpec:
    if args.seed is not None:
        return em.SchedulerSpec("random", args.seed)
    return em.SchedulerSpec(args.sched, 0)


def _write_doc(doc: dict, path: Optional[str]) -> None:
    text = json.dumps(doc, indent=2)
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _loading(fn):
    """Run ``fn`` and turn file and parse problems into LoadError."""
    try:
        return fn()
    except (OSError, lang.ParseError, lang.ChannelError, lang.KindError, policies.PolicyError,
            yaml.YAMLError, jsonschema.ValidationError, ValueError, KeyError, TypeError, em.EmError) as exc:
        raise LoadError(str(exc)) from exc


# --------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    def setup():
        env = load_env(args)
        prog, text = load_program(args.program, env)
        inq = lang.load_trace(args.input) if args.input else ()
        budget = args.budget or default_budget()
        pol = None if args.policy == "none" else load_policy_arg(args.policy)
        return env, prog, text, inq, budget, pol

    env, prog, text, inq, budget, pol = _loading(setup)
    if pol is None:
        out = lang.run_program(prog, inq, budget, env)
        doc = tracefmt.standalone_doc(out, inq, env, budget, text)
        status = out.status
    else:
        name, config = pol
        res = _loading(lambda: em.run_enforced(prog, config, inq, env, _sched(args), budget, args.mode))
        doc = tracefmt.enforced_doc(res, inq, name, env, args.mode, budget, text)
        if name not in policies.SHIPPED:
            doc["policy_config"] = config.to_doc()
        status = res.outcome
    tracefmt.validate(doc)
    if args.pretty:
        print(tracefmt.pretty(doc))
    if args.output or not args.pretty:
        _write_doc(doc, args.output)
    if args.emit_schedule and "schedule" in doc:
        Path(args.emit_schedule).write_text("".join(lb + "\n" for lb in doc["schedule"]))
    return RUN_EXIT[status]


def cmd_check(args) -> int:
    def setup():
        env = load_env(args)
        prog, text = load_program(args.program, env)
        dom = oracle.InputDomain.make(env, args.max_len, parse_alphabets(args.alphabet))
        budget = args.budget or default_budget()
        runner = None
        if args.enforced:
            name, config = load_policy_arg(args.enforced)
            runner = oracle.EnforcedRunner(prog, config, env, budget, mode=args.mode)
        return env, prog, text, dom, budget, runner

    env, prog, text, dom, budget, runner = _loading(setup)
    defaults = dom.env_defaults() if runner is not None else None
    res = oracle.check(args.property, prog, dom, budget, runner, args.di_strict, defaults,
                       max_candidates=args.max_candidates)
    print(res.summary())
    if res.witness is not None:
        wit = dict(res.witness)
        wit["bounds"] = res.bounds
        wit["program"] = text
        wit["channels"] = lang.channels_to_doc(env)
        if args.enforced:
            wit["enforced"] = args.enforced
        path = args.witness or f"{Path(args.program).stem}.{args.property}.witness.json"
        Path(path).write_text(json.dumps(wit, indent=2) + "\n")
        print(f"witness written to {path}")
        return EXIT_VIOLATED
    return EXIT_OK if res.verdict == oracle.HOLDS else EXIT_INCONCLUSIVE


def _fmt_class(c: tuple) -> str:
    outcome, consumed, out = c

    def show(pc):
        return "; ".join(f"{ch}: " + " ".join(lang.show_value(bool(k[1]) if k[0] else k[1]) for k in vals)
                         for ch, vals in pc) or "-"

    return f"{outcome}  consumed [{show(consumed)}]  output [{show(out)}]"


def cmd_explore(args) -> int:
    def setup():
        env = load_env(args)
        prog, _ = load_program(args.program, env)
        inq = lang.load_trace(args.input) if args.input else ()
        _, config = load_policy_arg(args.policy)
        return env, prog, inq, config

    env, prog, inq, config = _loading(setup)
    res = _loading(lambda: em.explore(prog, config, inq, env, args.depth, args.max_states, args.mode))
    print(f"{len(res.classes)} class(es), {res.states} states{' (frontier cap hit)' if res.partial else ''}")
    for c in sorted(res.classes):
        print("  " + _fmt_class(c))
    if res.partial:
        return EXIT_INCONCLUSIVE
    if not res.singleton or em.DEADLOCKED in res.outcomes():
        return EXIT_VIOLATED
    return EXIT_OK


COMPARED = ("outcome", "consumed", "residual", "global_output", "clone_count", "schedule")


def cmd_replay(args) -> int:
    def setup():
        doc = yaml.safe_load(Path(args.trace).read_text())
        if not isinstance(doc, dict) or "schedule" not in doc:
            raise ValueError("trace document has no schedule")
        tracefmt.validate(doc)
        env = lang.channels_from_doc(doc["channels"])
        if args.program:
            text = Path(args.program).read_text()
        else:
            text = doc["program"]
        prog = lang.parse_program(text, env)
        if "policy_config" in doc:
            config = policies.policy_from_doc(doc["policy_config"])
        else:
            config = policies.get_policy(doc["policy"])
        return doc, env, prog, text, config

    try:
        doc, env, prog, text, config = _loading(setup)
    except LoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATED
    inq = lang.items_from_doc(doc["input"])
    mode = doc.get("mode", "channel")
    try:
        res = em.replay(prog, config, inq, env, doc["schedule"], mode)
    except em.ReplayDivergence as exc:
        print(f"diverged: {exc}")
        return EXIT_VIOLATED
    except (em.EmError, lang.KindError) as exc:
        print(f"diverged: {exc}")
        return EXIT_VIOLATED
    again = tracefmt.enforced_doc(res, inq, doc["policy"], env, mode)
    for key in COMPARED:
        if again.get(key) != doc.get(key):
            print(f"diverged on {key}:\n  recorded: {doc.get(key)}\n  replayed: {again.get(key)}")
            return EXIT_VIOLATED
    print(f"reproduced {len(res.schedule)} steps: {res.outcome}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrenforce",
                                     description="Multi-execution enforcement of information-flow policies")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        p.add_argument("--program", required=True, help="program file (.ifc)")
        p.add_argument("--channels", help="channel environment (YAML); defaults to a sidecar "
                                          "NAME.chan.yaml, else the running-example channels")
        if needs_input:
            p.add_argument("--input", help="input trace (CHANNEL=VALUE lines, or JSON/YAML document)")
        p.add_argument("--mode", choices=("channel", "head"), default="channel",
                       help="how MAP reads global input: first item on the channel, or queue head only")

    p = sub.add_parser("run", help="run a program bare or under an enforcement policy")
    common(p)
    p.add_argument("--policy", default="ri", help="shipped policy name, a policy YAML file, or 'none'")
    p.add_argument("--sched", choices=("lowest", "round-robin", "random"), default="round-robin")
    p.add_argument("--seed", type=int, help="use seeded random scheduling")
    p.add_argument("--budget", type=int, help=f"step budget (default ${BUDGET_ENV} or 10000)")
    p.add_argument("--output", "-o", help="write the trace document here ('-' for stdout)")
    p.add_argument("--pretty", action="store_true", help="print time x channel tables")
    p.add_argument("--emit-schedule", metavar="PATH", help="also write the schedule, one label per line")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="bounded check of an information-flow property")
    common(p, needs_input=False)
    p.add_argument("--property", required=True, choices=oracle.PROPERTIES)
    p.add_argument("--max-len", type=int, default=3, help="maximum input length K")
    p.add_argument("--alphabet", action="append", metavar="NAME=V1,V2",
                   help="alphabet for a channel, level (H/L) or kind (bool/int)")
    p.add_argument("--budget", type=int)
    p.add_argument("--di-strict", action="store_true",
                   help="bound per-channel default counts after the deleted item by the original counts")
    p.add_argument("--max-candidates", type=int, default=100_000,
                   help="corrections tried per input before giving up (Inconclusive)")
    p.add_argument("--enforced", metavar="POLICY", help="check the enforced system instead of the bare program")
    p.add_argument("--witness", help="witness output path")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("explore", help="explore all interleavings and report I/O classes")
    common(p)
    p.add_argument("--policy", default="ri")
    p.add_argument("--depth", type=int, default=400)
    p.add_argument("--max-states", type=int, default=200_000)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("replay", help="re-execute a run trace with its recorded schedule")
    p.add_argument("trace", help="trace document produced by 'run'")
    p.add_argument("--program", help="override the program text stored in the trace")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("budget", "max_len", "depth", "max_states", "max_candidates"):
        val = getattr(args, name, None)
        if val is not None and val < (0 if name in ("max_len", "max_candidates") else 1):
            parser.error(f"--{name.replace('_', '-')} must be positive")
    try:
        return args.func(args)
    except LoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD if args.command == "run" else EXIT_INCONCLUSIVE


if __name__ == "__main__":
    sys.exit(main())
