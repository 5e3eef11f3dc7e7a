"""The MAP-REDUCE enforcement machine.

A configuration holds the privilege tables, the stack of local executions,
the MAP and REDUCE components and the global I/O queues.  Every transition
is atomic and named by a label:

    local:<i>:<RULE>   one step of local execution i (LINP1, LINP2, LOUTP, ASSG, ...)
    mact:<i>:<c>       MAP activated on execution i's request for channel c
    ract:<i>:<c>       REDUCE activated on execution i's output to channel c
    map::<RULE>        one step of the running MAP handler
    red::<RULE>        one step of the running REDUCE handler

``step`` applies one label and reports what happened as a list of events,
which run_enforced turns into the instrumentation log.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

from . import lang
from .lang import (ChannelEnv, Clean, Clone, Effect, Input, IoItem, KindError, MapTo, Memory,
                   Output, Retrieve, Skip, Stmt, Wake, EMPTY_MEMORY, SKIP)
from .policies import PolicyConfig, PolicyInstance, PrivTable, eval_predicate

EXECUTING = "E"
SLEEPING = "S"

COMPLETED = "Completed"
QUIESCENT = "QuiescentWithResidual"
DEADLOCKED = "Deadlocked"
BUDGET = "BudgetExceeded"


class EmError(Exception):
    pass


class NotEnabled(EmError):
    pass


@lang.cache_hash
@dataclass(frozen=True)
class LocalExec:
    stt: str
    sig: Optional[str]
    prg: Stmt
    mem: Memory = EMPTY_MEMORY
    inq: tuple = ()
    outq: tuple = ()


@lang.cache_hash
@dataclass(frozen=True)
class Component:
    """MAP or REDUCE.  ``owner``/``chan`` record the activation parameters."""

    prg: Stmt = SKIP
    mem: Memory = EMPTY_MEMORY
    owner: Optional[int] = None
    chan: Optional[str] = None

    @property
    def idle(self) -> bool:
        return isinstance(self.prg, Skip)


IDLE = Component()


@dataclass(frozen=True)
class Context:
    """Static data shared by every configuration of one run."""

    program: Stmt
    inst: PolicyInstance
    mode: str = "channel"  # how a MAP `input` picks the global item: "channel" | "head"

    @property
    def env(self) -> ChannelEnv:
        return self.inst.env


@lang.cache_hash
@dataclass(frozen=True)
class EmConfig:
    t_m: PrivTable
    t_r: PrivTable
    ex: tuple[LocalExec, ...]
    map: Component
    red: Component
    inq: tuple[IoItem, ...]
    outq: tuple[IoItem, ...]
    ctx: Context = field(compare=False, hash=False, repr=False)

    @property
    def top(self) -> int:
        return len(self.ex) - 1


def init_em(program: Stmt, policy: PolicyConfig, inq: Sequence[IoItem], env: ChannelEnv,
            mode: str = "channel") -> EmConfig:
    if mode not in ("channel", "head"):
        raise ValueError("mode must be 'channel' or 'head'")
    lang.check_channels(program, env)
    for item in inq:
        if item.channel not in env or env[item.channel].direction != "in":
            raise lang.ChannelError(f"input item on undeclared input channel {item.channel!r}")
    inst = policy.instantiate(env)
    ctx = Context(program, inst, mode)
    ex = tuple(LocalExec(EXECUTING, None, program) for _ in range(policy.executions))
    return EmConfig(inst.t_m, inst.t_r, ex, IDLE, IDLE, tuple(inq), (), ctx)


# --------------------------------------------------------------------------
# enabled transitions


def _local_step(cfg: EmConfig, i: int):
    """(rule, new LocalExec) for execution i, or None.  Raises KindError."""
    e = cfg.ex[i]
    if e.stt != EXECUTING or isinstance(e.prg, Skip):
        return None
    h = lang.head(e.prg)
    if isinstance(h, Input):
        val, rest = lang.dequeue(e.inq, h.chan)
        if val is None:
            return "LINP2", replace(e, stt=SLEEPING, sig=h.chan)
        new_prg, eff = lang.step_stmt(e.prg, e.mem, lambda s, m: Effect("LINP1", SKIP, m.set(s.var, val)))
        return "LINP1", replace(e, prg=new_prg, mem=eff.mem, inq=rest)
    if isinstance(h, Output):
        env = cfg.ctx.env
        item = None

        def leaf(s, m):
            nonlocal item
            item = IoItem(s.chan, lang.output_value(m, s.expr, env[s.chan].kind))
            return Effect("LOUTP", SKIP, m)

        new_prg, eff = lang.step_stmt(e.prg, e.mem, leaf)
        return "LOUTP", replace(e, stt=SLEEPING, sig=h.chan, prg=new_prg, outq=e.outq + (item,))

    def no_leaf(s, m):
        raise KindError(f"{type(s).__name__} cannot run in a local execution")

    r = lang.step_stmt(e.prg, e.mem, no_leaf)
    if r is None:
        return None
    new_prg, eff = r
    return eff.rule, replace(e, prg=new_prg, mem=eff.mem)


def _waiting(cfg: EmConfig, i: int, direction: str) -> bool:
    e = cfg.ex[i]
    if e.stt != SLEEPING or e.sig is None:
        return False
    env = cfg.ctx.env
    if e.sig not in env or env[e.sig].direction != direction:
        return False
    if direction == "in":
        h = lang.head(e.prg)
        return isinstance(h, Input) and h.chan == e.sig
    # The output has already been replaced by skip when the signal was raised.
    return True


def _with(cfg: EmConfig, ex=None, map=None, red=None, inq=None, outq=None, t_m=None, t_r=None) -> EmConfig:
    return EmConfig(cfg.t_m if t_m is None else t_m, cfg.t_r if t_r is None else t_r,
                    cfg.ex if ex is None else ex, cfg.map if map is None else map,
                    cfg.red if red is None else red, cfg.inq if inq is None else inq,
                    cfg.outq if outq is None else outq, cfg.ctx)


def _set_ex(cfg: EmConfig, i: int, e: LocalExec) -> tuple:
    return cfg.ex[:i] + (e,) + cfg.ex[i + 1:]


def transitions(cfg: EmConfig) -> list:
    """Enabled transitions as ``(label, thunk)``; calling the thunk yields
    ``(successor, events)``.  Locals come first by index, then MAP, then REDUCE."""
    out = []
    for i in range(len(cfg.ex)):
        try:
            r = _local_step(cfg, i)
        except KindError:
            r = None
        if r is not None:
            rule, new = r

            def local(i=i, rule=rule, new=new):
                events = []
                if rule == "LOUTP":
                    events.append(("local_out", i, new.outq[-1].channel, new.outq[-1].value))
                return _with(cfg, ex=_set_ex(cfg, i, new)), events

            out.append((f"local:{i}:{rule}", local))
    for role, kind, direction in (("map", "mact", "in"), ("red", "ract", "out")):
        comp = getattr(cfg, role)
        if comp.idle:
            for i, e in enumerate(cfg.ex):
                if _waiting(cfg, i, direction):
                    def activate(i=i, c=e.sig, role=role):
                        prg = cfg.ctx.inst.handler("map" if role == "map" else "reduce", i, c)
                        new_comp = IDLE if isinstance(prg, Skip) else Component(prg, EMPTY_MEMORY, i, c)
                        ex = _set_ex(cfg, i, LocalExec(cfg.ex[i].stt, None, cfg.ex[i].prg, cfg.ex[i].mem,
                                                       cfg.ex[i].inq, cfg.ex[i].outq))
                        return _with(cfg, ex=ex, **{role: new_comp}), [("activate", role, i, c)]

                    out.append((f"{kind}:{i}:{e.sig}", activate))
        else:
            r = _handler_step(cfg, role)
            if r is not None:
                rule, changes, events = r
                out.append((f"{role}::{rule}", lambda changes=changes, events=events: (_with(cfg, **changes), events)))
    return out


def enabled(cfg: EmConfig) -> list[str]:
    return [lb for lb, _ in transitions(cfg)]


def stuck_reasons(cfg: EmConfig) -> list[str]:
    """Human-readable reasons why parts of the machine cannot move."""
    out = []
    for i, e in enumerate(cfg.ex):
        try:
            _local_step(cfg, i)
        except KindError as exc:
            out.append(f"execution {i}: kind error: {exc}")
            continue
        h = lang.head(e.prg)
        if e.stt == SLEEPING and isinstance(h, lang.Input):
            out.append(f"execution {i}: asleep waiting for input on {h.chan}")
        elif e.stt == SLEEPING and not isinstance(e.prg, Skip):
            out.append(f"execution {i}: asleep at {lang.pretty(h)}")
    for role in ("map", "red"):
        comp = getattr(cfg, role)
        if comp.idle:
            continue
        try:
            if _handler_step(cfg, role, strict=True) is None:
                h = lang.head(comp.prg)
                out.append(f"{role}: blocked at {lang.pretty(h)}")
        except (KindError, EmError) as exc:
            out.append(f"{role}: {exc}")
    return out


# --------------------------------------------------------------------------
# handler steps


def _builtins(cfg: EmConfig, role: str):
    table = cfg.t_m if role == "map" else cfg.t_r
    env = cfg.ctx.env

    def chan_arg(a) -> str:
        if not isinstance(a, lang.Var) or a.name not in env:
            raise KindError(f"expected a channel name, got {lang.pretty_expr(a)}")
        return a.name

    def call(name, args, ev):
        if name in ("ask", "tell"):
            idx = ev(args[0])
            if type(idx) is bool or idx is lang.UNSET:
                raise KindError(f"{name}: index must be an integer")
            c = chan_arg(args[1])
            if idx >= table.columns:
                return False
            return table.has(idx, c, "a" if name == "ask" else "t")
        c = chan_arg(args[0])
        if name == "high":
            return env[c].level == lang.HIGH
        if name == "default":
            return env[c].default
        raise KindError(f"unknown builtin {name}")

    return call


def _matching(cfg: EmConfig, pred: lang.Pred, mem: Memory, bi) -> list[int]:
    target = None
    if pred.name == "identical":
        target = lang.eval_expr(mem, pred.arg, "int", bi)
    env = cfg.ctx.env
    return [k for k, e in enumerate(cfg.ex) if eval_predicate(pred, k, e, cfg.t_m, env, target)]


def _handler_step(cfg: EmConfig, role: str, strict: bool = False):
    """Compute one handler step: (rule, new_cfg_fields, events) or None if blocked.

    With ``strict`` a failing retrieve raises instead of blocking.
    """
    comp: Component = getattr(cfg, role)
    bi = _builtins(cfg, role)
    env = cfg.ctx.env
    changes: dict = {}
    events: list = []

    def leaf(s: Stmt, mem: Memory) -> Optional[Effect]:
        if role == "map" and isinstance(s, Input):
            q = changes.get("inq", cfg.inq)
            if cfg.ctx.mode == "head":
                if not q or q[0].channel != s.chan:
                    return None
                val, rest = q[0].value, q[1:]
            else:
                val, rest = lang.dequeue(q, s.chan)
                if val is None:
                    return None
            changes["inq"] = rest
            events.append(("read", s.chan, val, comp.owner))
            return Effect("INPM", SKIP, mem.set(s.var, val))
        if role == "map" and isinstance(s, MapTo):
            val = lang.output_value(mem, s.expr, env[s.chan].kind, bi)
            who = _matching(cfg, s.pred, mem, bi)
            ex = list(cfg.ex)
            for k in who:
                ex[k] = replace(ex[k], inq=ex[k].inq + (IoItem(s.chan, val),))
            changes["ex"] = tuple(ex)
            if who:
                events.append(("deliver", s.chan, val, tuple(who)))
            return Effect("MAP", SKIP, mem)
        if isinstance(s, Wake):
            who = _matching(cfg, s.pred, mem, bi)
            ex = list(cfg.ex)
            for k in who:
                ex[k] = replace(ex[k], stt=EXECUTING, sig=None)
            changes["ex"] = tuple(ex)
            events.append(("wake", tuple(who)))
            return Effect("WAKM" if role == "map" else "WAKR", SKIP, mem)
        if role == "map" and isinstance(s, Clone):
            who = _matching(cfg, s.pred, mem, bi)
            tpl_m = cfg.ctx.inst.templates[s.priv_tm]
            tpl_r = cfg.ctx.inst.templates[s.priv_tr]
            ex = list(cfg.ex)
            t_m, t_r = cfg.t_m, cfg.t_r
            for k in who:
                ex.append(replace(cfg.ex[k], stt=SLEEPING))
                t_m = t_m.add_column({c: tpl_m[c] for c in t_m.channels})
                t_r = t_r.add_column({c: tpl_r[c] for c in t_r.channels})
                events.append(("clone", k, len(ex) - 1))
            changes.update(ex=tuple(ex), t_m=t_m, t_r=t_r)
            return Effect("CLON", SKIP, mem)
        if role == "red" and isinstance(s, Retrieve):
            k = lang.eval_expr(mem, s.index, "int", bi)
            if not 0 <= k < len(cfg.ex):
                raise EmError(f"retrieve from missing execution {k}")
            val, _ = lang.dequeue(cfg.ex[k].outq, s.chan)
            if val is None:
                if strict:
                    raise EmError(f"retrieve found no output of execution {k} on {s.chan}")
                return None
            return Effect("RETR", SKIP, mem.set(s.var, val))
        if role == "red" and isinstance(s, Output):
            val = lang.output_value(mem, s.expr, env[s.chan].kind, bi)
            item = IoItem(s.chan, val)
            changes["outq"] = cfg.outq + (item,)
            events.append(("write", s.chan, val, comp.owner))
            return Effect("OUTR", SKIP, mem)
        if role == "red" and isinstance(s, Clean):
            who = _matching(cfg, s.pred, mem, bi)
            ex = list(cfg.ex)
            for k in who:
                ex[k] = replace(ex[k], outq=lang.dequeue(ex[k].outq, s.chan)[1])
            changes["ex"] = tuple(ex)
            events.append(("clean", s.chan, tuple(who)))
            return Effect("CLN", SKIP, mem)
        raise KindError(f"{type(s).__name__} is not allowed in the {role} handler")

    try:
        r = lang.step_stmt(comp.prg, comp.mem, leaf, bi)
    except (KindError, EmError):
        if strict:
            raise
        return None
    if r is None:
        return None
    new_prg, eff = r
    new_comp = IDLE if isinstance(new_prg, Skip) else replace(comp, prg=new_prg, mem=eff.mem)
    changes[role] = new_comp
    return eff.rule, changes, events


# --------------------------------------------------------------------------
# applying a label


def step(cfg: EmConfig, label: str) -> tuple[EmConfig, list]:
    """Apply ``label``; raise NotEnabled when its premises do not hold."""
    for lb, thunk in transitions(cfg):
        if lb == label:
            return thunk()
    raise NotEnabled(label)


def apply_transition(cfg: EmConfig, label: str) -> EmConfig:
    return step(cfg, label)[0]


def actor(label: str) -> str:
    kind, who, _ = label.split(":", 2)
    if kind == "local":
        return who
    return "map" if kind in ("mact", "map") else "red"


# --------------------------------------------------------------------------
# classification


def classify(cfg: EmConfig, labels: Optional[list] = None) -> Optional[str]:
    """Outcome of a configuration with no enabled transition (None otherwise)."""
    if labels is None:
        labels = enabled(cfg)
    if labels:
        return None
    done = all(isinstance(e.prg, Skip) for e in cfg.ex) and cfg.map.idle and cfg.red.idle
    if not done:
        return DEADLOCKED
    return COMPLETED if not cfg.inq else QUIESCENT


def consumed_of(original: Sequence[IoItem], residual: Sequence[IoItem]) -> tuple[IoItem, ...]:
    """Items of ``original`` that are not in ``residual``.

    Reads are per-channel FIFO, so on every channel the consumed items are a
    prefix of that channel's items."""
    left: dict[str, int] = {}
    for it in residual:
        left[it.channel] = left.get(it.channel, 0) + 1
    total: dict[str, int] = {}
    for it in original:
        total[it.channel] = total.get(it.channel, 0) + 1
    seen: dict[str, int] = {}
    out = []
    for it in original:
        seen[it.channel] = seen.get(it.channel, 0) + 1
        if seen[it.channel] <= total[it.channel] - left.get(it.channel, 0):
            out.append(it)
    return tuple(out)


# --------------------------------------------------------------------------
# schedulers


class ReplayDivergence(EmError):
    def __init__(self, step_no: int, wanted: str, enabled_labels: list):
        super().__init__(f"step {step_no}: recorded label {wanted!r} is not enabled "
                         f"(enabled: {', '.join(enabled_labels) or 'none'})")
        self.step_no = step_no
        self.wanted = wanted
        self.enabled = enabled_labels


@dataclass(frozen=True)
class SchedulerSpec:
    kind: str = "lowest"  # lowest | round-robin | random | scripted
    seed: int = 0
    script: tuple[str, ...] = ()

    def make(self) -> "Scheduler":
        if self.kind == "lowest":
            return LowestFirst()
        if self.kind in ("round-robin", "rr"):
            return RoundRobin()
        if self.kind == "random":
            return SeededRandom(self.seed)
        if self.kind == "scripted":
            return Scripted(self.script)
        raise ValueError(f"unknown scheduler {self.kind!r}")


class Scheduler:
    def choose(self, cfg: EmConfig, labels: list[str], step_no: int) -> str:
        raise NotImplementedError

    def exhausted(self, step_no: int) -> bool:
        return False


class LowestFirst(Scheduler):
    """Always the first enabled label: locals by index, then MAP, then REDUCE."""

    def choose(self, cfg, labels, step_no):
        return labels[0]


class RoundRobin(Scheduler):
    """Rotate over actors (executions, MAP, REDUCE); each actor also rotates
    over its own enabled labels, so select() in MACT/RACT is round-robin too."""

    def __init__(self):
        self.last: Optional[str] = None
        self.turns: dict[str, int] = {}

    def choose(self, cfg, labels, step_no):
        order = [str(i) for i in range(len(cfg.ex))] + ["map", "red"]
        by_actor: dict[str, list] = {}
        for lb in labels:
            by_actor.setdefault(actor(lb), []).append(lb)
        start = order.index(self.last) + 1 if self.last in order else 0
        for k in range(len(order)):
            a = order[(start + k) % len(order)]
            if a in by_actor:
                n = self.turns.get(a, 0)
                self.turns[a] = n + 1
                self.last = a
                opts = by_actor[a]
                return opts[n % len(opts)]
        raise EmError("no enabled label")


class SeededRandom(Scheduler):
    def __init__(self, seed: int):
        self.rng = random.Random(seed)

    def choose(self, cfg, labels, step_no):
        return labels[self.rng.randrange(len(labels))]


class Scripted(Scheduler):
    def __init__(self, script: Sequence[str]):
        self.script = list(script)

    def choose(self, cfg, labels, step_no):
        if step_no >= len(self.script):
            raise ReplayDivergence(step_no, "<end of script>", labels)
        want = self.script[step_no]
        if want not in labels:
            raise ReplayDivergence(step_no, want, labels)
        return want

    def exhausted(self, step_no):
        return step_no >= len(self.script)


# --------------------------------------------------------------------------
# runs


@dataclass
class GlobalWrite:
    step: int
    channel: str
    value: lang.Value
    source_exec: Optional[int]


@dataclass
class RunResult:
    outcome: str
    consumed: tuple[IoItem, ...]
    residual: tuple[IoItem, ...]
    global_out: tuple[IoItem, ...]
    writes: list[GlobalWrite]
    reads: list[tuple]  # (step, channel, value, requesting exec)
    final: EmConfig
    schedule: list[str]
    log: list[tuple]  # (step, event...)
    steps: int
    clone_count: int
    reasons: list[str] = field(default_factory=list)

    @property
    def executions(self) -> tuple[LocalExec, ...]:
        return self.final.ex

    def channel_class(self) -> tuple:
        return (self.outcome, lang.per_channel(self.consumed), lang.per_channel(self.global_out))


def run_enforced(program: Stmt, policy: PolicyConfig, inq: Sequence[IoItem], env: ChannelEnv,
                 sched: Optional[SchedulerSpec] = None, budget: int = 10_000, mode: str = "channel",
                 check_invariants: bool = False) -> RunResult:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    sched = sched or SchedulerSpec()
    chooser = sched.make()
    cfg = init_em(program, policy, inq, env, mode)
    return drive(cfg, chooser, budget, check_invariants)


def drive(cfg: EmConfig, chooser: Scheduler, budget: int, check_invariants: bool = False) -> RunResult:
    original = cfg.inq
    schedule: list[str] = []
    log: list[tuple] = []
    writes: list[GlobalWrite] = []
    reads: list[tuple] = []
    clones = 0
    n = 0
    outcome = None
    while True:
        trans = transitions(cfg)
        if not trans:
            outcome = classify(cfg, [])
            break
        if n >= budget or chooser.exhausted(n):
            outcome = BUDGET
            break
        labels = [lb for lb, _ in trans]
        label = chooser.choose(cfg, labels, n)
        new, events = dict(trans)[label]()
        if check_invariants:
            check_step(cfg, label, new)
        schedule.append(label)
        for ev in events:
            log.append((n,) + ev)
            if ev[0] == "read":
                reads.append((n, ev[1], ev[2], ev[3]))
            elif ev[0] == "write":
                writes.append(GlobalWrite(n, ev[1], ev[2], ev[3]))
            elif ev[0] == "clone":
                clones += 1
        cfg = new
        n += 1
    reasons = stuck_reasons(cfg) if outcome == DEADLOCKED else []
    return RunResult(outcome, consumed_of(original, cfg.inq), cfg.inq, cfg.outq, writes, reads, cfg,
                     schedule, log, n, clones, reasons)


def replay(program: Stmt, policy: PolicyConfig, inq: Sequence[IoItem], env: ChannelEnv,
           schedule: Sequence[str], mode: str = "channel") -> RunResult:
    """Re-run a recorded schedule; raises ReplayDivergence on the first mismatch."""
    cfg = init_em(program, policy, inq, env, mode)
    return drive(cfg, Scripted(schedule), max(len(schedule), 1))


# --------------------------------------------------------------------------
# instrumentation checks


class InvariantViolation(AssertionError):
    pass


def check_step(before: EmConfig, label: str, after: EmConfig) -> None:
    """Structural invariants that must hold across every transition."""
    for k, (a, b) in enumerate(zip(before.ex, after.ex)):
        if a.stt == SLEEPING and b.stt == EXECUTING and b.sig is not None:
            raise InvariantViolation(f"{label}: execution {k} woke with a pending signal")
    for k, e in enumerate(after.ex):
        if e.sig is not None and e.stt != SLEEPING:
            raise InvariantViolation(f"{label}: execution {k} has a signal while executing")
    cols = len(after.ex)
    if any(t.rows and t.columns != cols for t in (after.t_m, after.t_r)):
        raise InvariantViolation(f"{label}: tables have {after.t_m.columns}/{after.t_r.columns} columns "
                                 f"for {cols} executions")
    if len(after.ex) < len(before.ex):
        raise InvariantViolation(f"{label}: execution stack shrank")


def footprint(label: str) -> set:
    """Configuration fields a label may touch, for frame checks.

    Fields are 'ex<i>', 'ex*' (any execution, including new ones), 'map',
    'red', 'inq', 'outq', 't_m', 't_r'."""
    kind, who, what = label.split(":", 2)
    if kind == "local":
        return {f"ex{who}"}
    if kind == "mact":
        return {f"ex{who}", "map"}
    if kind == "ract":
        return {f"ex{who}", "red"}
    if kind == "map":
        fp = {"map"}
        if what == "INPM":
            fp.add("inq")
        if what in ("MAP", "WAKM"):
            fp.add("ex*")
        if what == "CLON":
            fp |= {"ex*", "t_m", "t_r"}
        return fp
    fp = {"red"}
    if what == "OUTR":
        fp.add("outq")
    if what in ("WAKR", "CLN"):
        fp.add("ex*")
    return fp


def changed_fields(a: EmConfig, b: EmConfig) -> set:
    out = set()
    for name in ("map", "red", "inq", "outq", "t_m", "t_r"):
        if getattr(a, name) != getattr(b, name):
            out.add(name)
    n = max(len(a.ex), len(b.ex))
    for k in range(n):
        if k >= len(a.ex) or k >= len(b.ex) or a.ex[k] != b.ex[k]:
            out.add(f"ex{k}")
    return out


def frame_ok(label: str, a: EmConfig, b: EmConfig) -> bool:
    fp = footprint(label)
    for f in changed_fields(a, b):
        if f in fp or (f.startswith("ex") and "ex*" in fp):
            continue
        return False
    return True


ATTRIBUTED = ("ni", "ri", "di", "subdi")


def io_event_violations(event: tuple, policy_name: str, env: ChannelEnv) -> list[str]:
    """Input/output attribution rules of the shipped two-copy policies,
    checked on one logged event ``(step, kind, ...)``:

    * only execution 1 makes the machine read a low channel;
    * under NI and DI only execution 0 makes it read a high channel;
    * execution 1 only ever receives defaults on high channels;
    * high outputs come from execution 0 and low outputs from execution 1,
      so nothing written by a clone reaches the environment.
    """
    if policy_name not in ATTRIBUTED:
        return []
    levels = env.levels()
    step_no, kind = event[0], event[1]
    bad = []
    if kind == "read":
        chan, who = event[2], event[4]
        if levels[chan] == lang.LOW and who != 1:
            bad.append(f"step {step_no}: execution {who} caused a global read on {chan}")
        if levels[chan] == lang.HIGH and policy_name in ("ni", "di") and who != 0:
            bad.append(f"step {step_no}: execution {who} caused a global read on {chan}")
    elif kind == "deliver":
        chan, val, who = event[2], event[3], event[4]
        if 1 in who and levels[chan] == lang.HIGH and lang.vkey(val) != lang.vkey(env[chan].default):
            bad.append(f"step {step_no}: execution 1 received a real value on {chan}")
    elif kind == "write":
        chan, who = event[2], event[4]
        want = 0 if levels[chan] == lang.HIGH else 1
        if who != want:
            bad.append(f"step {step_no}: output on {chan} attributed to execution {who}")
    return bad


def check_io_props(res: RunResult, policy_name: str, env: ChannelEnv) -> list[str]:
    """All attribution violations in a finished run (empty when all hold)."""
    bad = []
    for ev in res.log:
        bad.extend(io_event_violations(ev, policy_name, env))
    return bad


# --------------------------------------------------------------------------
# exhaustive exploration


@dataclass
class ExploreResult:
    classes: set
    states: int
    partial: bool

    @property
    def singleton(self) -> bool:
        return len(self.classes) == 1

    def outcomes(self) -> set:
        return {c[0] for c in self.classes}


def state_class(cfg: EmConfig, original: Sequence[IoItem], outcome: str) -> tuple:
    if outcome == BUDGET:
        return (BUDGET, (), ())
    return (outcome, lang.per_channel(consumed_of(original, cfg.inq)), lang.per_channel(cfg.outq))


INVISIBLE = {"ASSG", "IF-T", "IF-F", "WHIL-T", "WHIL-F", "SKIP", "LINP1"}


def _identical_i(p: lang.Pred) -> bool:
    return p.name == "identical" and not p.negated and p.arg == lang.Var("i")


def reduction_safe(policy: PolicyConfig) -> bool:
    """Whether an internal step of an executing local execution commutes with
    every other transition under ``policy``.

    Such a step only touches its own execution, which stays Executing, and no
    predicate can tell the difference while it is Executing.  The one
    observer is ``clone``, which copies whole executions.  Cloning is
    harmless when it copies only the requester, happens before the handler
    wakes anybody, and REDUCE only ever wakes its own requester: the
    requester then sleeps throughout the clone."""
    m, r = policy.parsed()
    if not any(isinstance(s, Clone) for s in lang.walk(m)):
        return True
    if not isinstance(m, lang.Seq):
        return False
    first, rest = m.first, m.second
    if any(isinstance(s, Clone) for s in lang.walk(rest)):
        return False
    for s in lang.walk(first):
        if isinstance(s, Wake) or (isinstance(s, Clone) and not _identical_i(s.pred)):
            return False
    return all(_identical_i(s.pred) for s in lang.walk(r) if isinstance(s, Wake))


# Handler steps that only touch the handler's own program and memory.
HANDLER_INTERNAL = {"ASSG", "IF-T", "IF-F", "WHIL-T", "WHIL-F", "SKIP", "RETR"}


def _ample(trans: list, locals_ok: bool) -> list:
    for t in trans:
        kind, _, rule = t[0].split(":", 2)
        if kind in ("map", "red") and rule in HANDLER_INTERNAL:
            return [t]
        if locals_ok and kind == "local" and rule in INVISIBLE:
            return [t]
    return trans


def explore(program: Stmt, policy: PolicyConfig, inq: Sequence[IoItem], env: ChannelEnv,
            depth: int = 400, max_states: int = 200_000, mode: str = "channel",
            reduce: Optional[bool] = None,
            observe: Optional[Callable[[str, list], None]] = None) -> ExploreResult:
    """Enumerate every interleaving up to ``depth`` transitions and collect the
    distinct terminal classes (outcome, per-channel consumed input, per-channel
    global output).

    A branch cut by ``depth``, or one that runs around a cycle, yields a
    BudgetExceeded class.  Unless ``reduce`` is False, steps that commute
    with everything else are taken eagerly, one at a time: handler-internal
    steps always, and internal local steps when reduction_safe holds.  This
    keeps every reachable terminal configuration.

    ``observe(label, events)`` is called for every transition taken."""
    locals_ok = reduction_safe(policy) if reduce is None else reduce
    reduce = reduce is not False
    init = init_em(program, policy, inq, env, mode)
    original = init.inq
    seen: dict[EmConfig, int] = {}
    on_path: set = set()
    classes: set = set()
    partial = False
    stack: list = [(init, depth, False)]
    while stack:
        cfg, left, leaving = stack.pop()
        if leaving:
            on_path.discard(cfg)
            continue
        if cfg in on_path:
            classes.add(state_class(cfg, original, BUDGET))
            continue
        prev = seen.get(cfg)
        if prev is not None and prev >= left:
            continue
        if len(seen) >= max_states and prev is None:
            partial = True
            continue
        seen[cfg] = left
        trans = transitions(cfg)
        if not trans:
            classes.add(state_class(cfg, original, classify(cfg, [])))
            continue
        if left == 0:
            classes.add(state_class(cfg, original, BUDGET))
            continue
        if reduce:
            trans = _ample(trans, locals_ok)
        on_path.add(cfg)
        stack.append((cfg, left, True))
        for label, thunk in reversed(trans):
            nxt, events = thunk()
            if observe is not None:
                observe(label, events)
            stack.append((nxt, left - 1, False))
    return ExploreResult(classes, len(seen), partial)
