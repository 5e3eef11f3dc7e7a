"""Bounded brute-force checkers for TINI, TSNI, RI and DI.

Inputs are enumerated up to a maximum length over finite per-channel
alphabets.  A *runner* maps an input queue to a RunView; the standalone
runner executes the bare program, and the enforced runner executes it inside
the enforcement machine so the same checkers can judge enforced behaviour.

Every "Holds" verdict is relative to the bounds (length, alphabets, step
budget).  A run that exhausts the budget counts as non-terminating.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

from . import em, lang
from .lang import HIGH, LOW, ChannelEnv, IoItem, Stmt, Value
from .policies import PolicyConfig

HOLDS = "Holds"
VIOLATED = "Violated"
INCONCLUSIVE = "Inconclusive"

PROPERTIES = ("tini", "tsni", "ri", "di")

DEFAULT_ALPHABETS = {"bool": (False, True), "int": (0, 1)}


@dataclass(frozen=True)
class InputDomain:
    env: ChannelEnv
    max_len: int = 3
    alphabets: tuple = ()  # ((channel, (values...)), ...) for every input channel

    @classmethod
    def make(cls, env: ChannelEnv, max_len: int = 3, overrides: Optional[dict] = None) -> "InputDomain":
        overrides = overrides or {}
        alph = []
        for ch in env.inputs:
            vals = overrides.get(ch.name, overrides.get(ch.level, overrides.get(ch.kind)))
            if vals is None:
                vals = DEFAULT_ALPHABETS[ch.kind]
            vals = tuple(vals)
            if not vals:
                raise ValueError(f"empty alphabet for {ch.name}")
            alph.append((ch.name, vals))
        return cls(env, max_len, tuple(alph))

    def alphabet(self, chan: str) -> tuple:
        return dict(self.alphabets)[chan]

    def items(self) -> list[IoItem]:
        return [IoItem(c, v) for c, vals in self.alphabets for v in vals]

    def inputs(self) -> Iterator[tuple[IoItem, ...]]:
        items = self.items()
        for n in range(self.max_len + 1):
            yield from itertools.product(items, repeat=n)

    @property
    def levels(self) -> dict[str, str]:
        return self.env.levels()

    def high_inputs(self) -> list[lang.Channel]:
        return [c for c in self.env.inputs if c.level == HIGH]

    def default_assignments(self) -> list[dict[str, Value]]:
        """Candidate defaults for the high input channels.

        One default per value kind, drawn from the high channels' alphabets;
        channels of the same kind share it.  Each assignment maps channel
        name to value."""
        pools: dict[str, list] = {}
        for ch in self.high_inputs():
            pool = pools.setdefault(ch.kind, [])
            for v in self.alphabet(ch.name):
                if lang.vkey(v) not in [lang.vkey(p) for p in pool]:
                    pool.append(v)
        kinds = sorted(pools)
        out = []
        for combo in itertools.product(*(pools[k] for k in kinds)):
            by_kind = dict(zip(kinds, combo))
            out.append({ch.name: by_kind[ch.kind] for ch in self.high_inputs()})
        return out

    def env_defaults(self) -> list[dict[str, Value]]:
        """The single assignment fixed by the channel environment."""
        return [{ch.name: ch.default for ch in self.high_inputs()}]

    def describe(self) -> dict:
        return {"max_len": self.max_len,
                "alphabets": {c: [lang.show_value(v) for v in vals] for c, vals in self.alphabets}}


# --------------------------------------------------------------------------
# runners


@dataclass(frozen=True)
class RunView:
    status: str  # terminated | residual | stuck | budget
    out: tuple[IoItem, ...]
    residual: tuple[IoItem, ...] = ()

    @property
    def terminated(self) -> bool:
        return self.status == "terminated"

    def finished(self, levels: dict) -> bool:
        """Terminated, or finished leaving only high items unread."""
        return self.terminated or (self.status == "residual"
                                   and all(levels[it.channel] == HIGH for it in self.residual))


class StandaloneRunner:
    def __init__(self, prog: Stmt, env: ChannelEnv, budget: int = 10_000):
        self.prog, self.env, self.budget = prog, env, budget
        self.cache: dict = {}

    def __call__(self, inq: Sequence[IoItem]) -> RunView:
        key = tuple(inq)
        r = self.cache.get(key)
        if r is None:
            o = lang.run_program(self.prog, key, self.budget, self.env)
            r = RunView(o.status, o.out, o.residual)
            self.cache[key] = r
        return r


ENFORCED_STATUS = {em.COMPLETED: "terminated", em.QUIESCENT: "residual",
                   em.DEADLOCKED: "stuck", em.BUDGET: "budget"}


class EnforcedRunner:
    """The enforcement machine seen as a program from global input to global output."""

    def __init__(self, prog: Stmt, policy: PolicyConfig, env: ChannelEnv, budget: int = 10_000,
                 sched: Optional[em.SchedulerSpec] = None, mode: str = "channel"):
        self.prog, self.policy, self.env, self.budget = prog, policy, env, budget
        self.sched = sched or em.SchedulerSpec("round-robin")
        self.mode = mode
        self.cache: dict = {}
        self.results: dict = {}

    def run(self, inq: Sequence[IoItem]) -> em.RunResult:
        key = tuple(inq)
        if key not in self.results:
            self.results[key] = em.run_enforced(self.prog, self.policy, key, self.env, self.sched,
                                                self.budget, self.mode)
        return self.results[key]

    def in_read_order(self, inq: Sequence[IoItem]) -> bool:
        """True when the run consumes ``inq`` front to back.

        In channel mode the machine only sees per-channel subsequences, so
        every input is channel-equivalent to one in read order and behaves
        identically to it."""
        res = self.run(inq)
        return tuple(IoItem(c, v) for _, c, v, _ in res.reads) == tuple(inq)

    def __call__(self, inq: Sequence[IoItem]) -> RunView:
        key = tuple(inq)
        r = self.cache.get(key)
        if r is None:
            res = self.run(key)
            r = RunView(ENFORCED_STATUS[res.outcome], res.global_out, res.residual)
            self.cache[key] = r
        return r


# --------------------------------------------------------------------------
# results


@dataclass
class CheckResult:
    prop: str
    verdict: str
    witness: Optional[dict] = None
    bounds: dict = field(default_factory=dict)
    checked: int = 0

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    def summary(self) -> str:
        b = self.bounds
        s = f"{self.prop.upper()}: {self.verdict} (K={b.get('max_len')}, budget={b.get('budget')}, {self.checked} inputs)"
        if self.witness:
            s += f"\n  clause: {self.witness['clause']}\n  input:  {fmt_queue(self.witness['input'])}"
            if "other_input" in self.witness:
                s += f"\n  other:  {fmt_queue(self.witness['other_input'])}"
        return s


def fmt_queue(items: Iterable) -> str:
    items = list(items)
    if items and isinstance(items[0], dict):
        items = lang.items_from_doc(items)
    return " ".join(repr(it) for it in items) or "ε"


def _qdoc(q) -> list[dict]:
    return lang.items_to_doc(q)


def _defaults_doc(d: dict) -> dict:
    return {k: lang.show_value(v) for k, v in d.items()}


def _bounds(dom: InputDomain, budget: int, **extra) -> dict:
    b = dom.describe()
    b["budget"] = budget
    b.update(extra)
    return b


# --------------------------------------------------------------------------
# noninterference


def _low_groups(dom: InputDomain, runner) -> dict:
    levels = dom.levels
    groups: dict = {}
    for inq in dom.inputs():
        groups.setdefault(lang.restrict_level(inq, levels, LOW), []).append(inq)
    return groups


def check_tini(prog: Stmt, dom: InputDomain, budget: int = 10_000, runner=None) -> CheckResult:
    """For low-equivalent inputs on which both runs terminate, low outputs agree."""
    runner = runner or StandaloneRunner(prog, dom.env, budget)
    levels = dom.levels
    n = 0
    for low, members in _low_groups(dom, runner).items():
        ref = None
        for inq in members:
            n += 1
            r = runner(inq)
            if not r.terminated:
                continue
            if ref is None:
                ref = (inq, r)
                continue
            if not lang.low_eq(r.out, ref[1].out, levels):
                return CheckResult("tini", VIOLATED, {
                    "property": "tini", "clause": "terminating low-equivalent inputs give low-distinguishable outputs",
                    "input": _qdoc(ref[0]), "output": _qdoc(ref[1].out),
                    "other_input": _qdoc(inq), "other_output": _qdoc(r.out)}, _bounds(dom, budget), n)
    return CheckResult("tini", HOLDS, None, _bounds(dom, budget), n)


def check_tsni(prog: Stmt, dom: InputDomain, budget: int = 10_000, runner=None) -> CheckResult:
    """If I terminates then every low-equivalent I' finishes (leaving at most
    high items unread) with a low-equivalent output."""
    runner = runner or StandaloneRunner(prog, dom.env, budget)
    levels = dom.levels
    n = 0
    for low, members in _low_groups(dom, runner).items():
        runs = [(inq, runner(inq)) for inq in members]
        n += len(runs)
        for inq, r in runs:
            if not r.terminated:
                continue
            for inq2, r2 in runs:
                clause = None
                if not r2.finished(levels):
                    clause = f"termination: the low-equivalent run is {r2.status}"
                elif not lang.low_eq(r.out, r2.out, levels):
                    clause = "low-equivalent inputs give low-distinguishable outputs"
                if clause:
                    return CheckResult("tsni", VIOLATED, {
                        "property": "tsni", "clause": clause,
                        "input": _qdoc(inq), "output": _qdoc(r.out),
                        "other_input": _qdoc(inq2), "other_output": _qdoc(r2.out),
                        "other_status": r2.status}, _bounds(dom, budget), n)
            break  # one terminating representative per class suffices
    return CheckResult("tsni", HOLDS, None, _bounds(dom, budget), n)


# --------------------------------------------------------------------------
# removal and deletion of inputs


def interleavings(fixed: Sequence, extra: Sequence) -> Iterator[tuple]:
    """All merges of ``fixed`` (order kept) with the multiset ``extra``."""
    counts = Counter(extra)

    def rec(k: int, counts: Counter):
        if k == len(fixed) and not +counts:
            yield ()
            return
        if k < len(fixed):
            for rest in rec(k + 1, counts):
                yield (fixed[k],) + rest
        for item in sorted(+counts, key=repr):
            counts[item] -= 1
            for rest in rec(k, counts):
                yield (item,) + rest
            counts[item] += 1

    yield from rec(0, counts)


def _default_item(ch: lang.Channel, d: dict) -> IoItem:
    return IoItem(ch.name, d[ch.name])


def _is_default(item: IoItem, d: dict) -> bool:
    return lang.vkey(item.value) == lang.vkey(d[item.channel])


def ri_candidates(inq: Sequence[IoItem], dom: InputDomain, d: dict) -> Iterator[tuple]:
    """I' with I'|L = I|L, only default high items, and per-channel counts
    bounded by those of I."""
    levels = dom.levels
    low = lang.restrict_level(inq, levels, LOW)
    highs = dom.high_inputs()
    bounds = [len(lang.restrict_channel(inq, ch.name)) for ch in highs]
    for counts in itertools.product(*(range(b + 1) for b in bounds)):
        extra = [_default_item(ch, d) for ch, n in zip(highs, counts) for _ in range(n)]
        yield from interleavings(low, extra)


def _correction(runner, cands: Iterable, ref_out, levels, cap: int):
    tried = 0
    for cand in cands:
        tried += 1
        if tried > cap:
            return None, tried, True
        r = runner(cand)
        if r.terminated and lang.low_eq(r.out, ref_out, levels):
            return cand, tried, False
    return None, tried, False


def check_ri(prog: Stmt, dom: InputDomain, budget: int = 10_000, runner=None,
             max_candidates: int = 100_000, defaults: Optional[list] = None,
             only: Optional[Callable[[tuple], bool]] = None) -> CheckResult:
    runner = runner or StandaloneRunner(prog, dom.env, budget)
    levels = dom.levels
    n = 0
    capped = False
    defaults = defaults if defaults is not None else dom.default_assignments()
    for inq in dom.inputs():
        r = runner(inq)
        if not r.terminated or (only is not None and not only(inq)):
            continue
        n += 1
        for d in defaults:
            found, tried, hit = _correction(runner, ri_candidates(inq, dom, d), r.out, levels, max_candidates)
            if found is None and hit:
                capped = True
            elif found is None:
                return CheckResult("ri", VIOLATED, {
                    "property": "ri", "clause": "no corrected input with default high items",
                    "input": _qdoc(inq), "output": _qdoc(r.out), "defaults": _defaults_doc(d),
                    "candidates_tried": tried}, _bounds(dom, budget), n)
    return CheckResult("ri", INCONCLUSIVE if capped else HOLDS, None, _bounds(dom, budget), n)


def di_decompositions(inq: Sequence[IoItem], dom: InputDomain, d: dict) -> list[int]:
    """Positions p with inq[p] high and only default high items after it."""
    levels = dom.levels
    out = []
    for p, item in enumerate(inq):
        if levels[item.channel] != HIGH:
            continue
        tail = inq[p + 1:]
        if all(levels[t.channel] == LOW or _is_default(t, d) for t in tail):
            out.append(p)
    return out


def di_candidates(inq: Sequence[IoItem], p: int, dom: InputDomain, d: dict,
                  strict: bool = False) -> Iterator[tuple]:
    """I' = I1 . I2' where I2' keeps the low items of I2 and interleaves them
    with at most ``dom.max_len`` default high items (and, when ``strict``,
    per-channel counts of I2' bounded by those of I2)."""
    levels = dom.levels
    i1, i2 = tuple(inq[:p]), tuple(inq[p + 1:])
    low2 = lang.restrict_level(i2, levels, LOW)
    highs = dom.high_inputs()
    room = dom.max_len
    if strict:
        bounds = [len(lang.restrict_channel(i2, ch.name)) for ch in highs]
    else:
        bounds = [room] * len(highs)
    for counts in itertools.product(*(range(b + 1) for b in bounds)):
        if sum(counts) > room:
            continue
        extra = [_default_item(ch, d) for ch, n in zip(highs, counts) for _ in range(n)]
        for tail in interleavings(low2, extra):
            yield i1 + tail


def check_di(prog: Stmt, dom: InputDomain, budget: int = 10_000, runner=None, strict: bool = False,
             max_candidates: int = 100_000, defaults: Optional[list] = None,
             only: Optional[Callable[[tuple], bool]] = None) -> CheckResult:
    runner = runner or StandaloneRunner(prog, dom.env, budget)
    levels = dom.levels
    n = 0
    capped = False
    defaults = defaults if defaults is not None else dom.default_assignments()
    for inq in dom.inputs():
        r = runner(inq)
        if not r.terminated or (only is not None and not only(inq)):
            continue
        n += 1
        for d in defaults:
            for p in di_decompositions(inq, dom, d):
                cands = di_candidates(inq, p, dom, d, strict)
                found, tried, hit = _correction(runner, cands, r.out, levels, max_candidates)
                if found is None and hit:
                    capped = True
                elif found is None:
                    return CheckResult("di", VIOLATED, {
                        "property": "di", "clause": "deleting the last high input admits no correction",
                        "input": _qdoc(inq), "output": _qdoc(r.out), "defaults": _defaults_doc(d),
                        "position": p, "strict": strict, "candidates_tried": tried},
                        _bounds(dom, budget, strict=strict), n)
    return CheckResult("di", INCONCLUSIVE if capped else HOLDS, None, _bounds(dom, budget, strict=strict), n)


def check(prop: str, prog: Stmt, dom: InputDomain, budget: int = 10_000, runner=None,
          strict: bool = False, defaults: Optional[list] = None,
          only: Optional[Callable[[tuple], bool]] = None, max_candidates: int = 100_000) -> CheckResult:
    """Bounded check of ``prop``.  ``defaults`` restricts the default
    assignments quantified over by RI and DI (all candidates when None);
    ``only`` restricts which terminating inputs RI and DI examine.  When
    more than ``max_candidates`` corrections would be needed for one input
    without finding one, the verdict is Inconclusive."""
    if prop == "tini":
        return check_tini(prog, dom, budget, runner)
    if prop == "tsni":
        return check_tsni(prog, dom, budget, runner)
    if prop == "ri":
        return check_ri(prog, dom, budget, runner, max_candidates, defaults, only)
    if prop == "di":
        return check_di(prog, dom, budget, runner, strict, max_candidates, defaults, only)
    raise ValueError(f"unknown property {prop!r}")


# --------------------------------------------------------------------------
# witness confirmation


def _parse_defaults(doc: dict) -> dict:
    return {k: lang.parse_value(v) for k, v in doc.items()}


def confirm_witness(prog: Stmt, dom: InputDomain, witness: dict, budget: int = 10_000,
                    runner=None) -> tuple[bool, str]:
    """Re-run a Violated witness and re-establish the failed clause from scratch.

    Returns (confirmed, explanation)."""
    runner = runner or StandaloneRunner(prog, dom.env, budget)
    levels = dom.levels
    prop = witness["property"]
    inq = lang.items_from_doc(witness["input"])
    r = runner(inq)
    if not r.terminated:
        return False, f"witness input does not terminate ({r.status})"
    if prop in ("tini", "tsni"):
        other = lang.items_from_doc(witness["other_input"])
        if not lang.low_eq(inq, other, levels):
            return False, "witness inputs are not low-equivalent"
        r2 = runner(other)
        if prop == "tini":
            if not r2.terminated:
                return False, "other input does not terminate"
            if lang.low_eq(r.out, r2.out, levels):
                return False, "outputs are low-equivalent"
            return True, "terminating low-equivalent inputs with low-distinguishable outputs"
        if not r2.finished(levels):
            return True, f"low-equivalent input does not terminate ({r2.status})"
        if not lang.low_eq(r.out, r2.out, levels):
            return True, "low-equivalent inputs with low-distinguishable outputs"
        return False, "other input terminates with a low-equivalent output"
    d = _parse_defaults(witness["defaults"])
    if prop == "ri":
        cands = ri_candidates(inq, dom, d)
    elif prop == "di":
        p = witness["position"]
        if p not in di_decompositions(inq, dom, d):
            return False, f"position {p} is not a valid last-high-input decomposition"
        cands = di_candidates(inq, p, dom, d, witness.get("strict", False))
    else:
        return False, f"unknown property {prop!r}"
    tried = 0
    for cand in cands:
        tried += 1
        c = runner(cand)
        if c.terminated and lang.low_eq(c.out, r.out, levels):
            return False, f"correction exists: {fmt_queue(cand)}"
    return True, f"none of {tried} candidate corrections terminates with a low-equivalent output"


POLICY_FOR = {"tini": "ni", "tsni": "ni", "ri": "ri", "di": "di"}
