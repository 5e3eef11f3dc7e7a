"""Privilege tables, handler templates and the four shipped enforcement
configurations (NI, RI, DI, SubDI), plus predicate evaluation.

A policy is plain data: table templates keyed by level (``H``/``L``) or by
concrete channel name, named clone templates, and MAP/REDUCE handler programs
written in the handler dialect of :mod:`mrenforce.lang`.  Inside a handler the
identifiers ``i`` (requesting execution) and ``c`` (channel) are parameters
that are substituted on activation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import yaml

from . import lang
from .lang import (HIGH, LOW, Call, ChannelEnv, Clean, Clone, If, Input, Lit, MapTo, Not,
                   Output, Pred, Retrieve, Seq, Stmt, Var, Wake, While, Assign, BinOp)


class PolicyError(Exception):
    pass


def norm_cell(cell) -> str:
    """Canonical cell text: any of '', 'a', 't', 'at'.  '-' and None mean empty."""
    if cell is None:
        return ""
    text = str(cell).strip()
    if text in ("-", "", "none"):
        return ""
    bad = set(text) - {"a", "t"}
    if bad:
        raise PolicyError(f"bad privilege cell {cell!r}")
    return ("a" if "a" in text else "") + ("t" if "t" in text else "")


def show_cell(cell: str) -> str:
    return cell or "-"


@lang.cache_hash
@dataclass(frozen=True)
class PrivTable:
    """Channel x execution-index table of privilege cells."""

    rows: tuple[tuple[str, tuple[str, ...]], ...]

    def cell(self, index: int, chan: str) -> str:
        for name, cells in self.rows:
            if name == chan:
                if index >= len(cells):
                    raise PolicyError(f"no column {index} in table")
                return cells[index]
        raise PolicyError(f"channel {chan!r} missing from table")

    def has(self, index: int, chan: str, priv: str) -> bool:
        return priv in self.cell(index, chan)

    @property
    def columns(self) -> int:
        return len(self.rows[0][1]) if self.rows else 0

    @property
    def channels(self) -> list[str]:
        return [name for name, _ in self.rows]

    def add_column(self, cells: dict[str, str]) -> "PrivTable":
        return PrivTable(tuple((name, cs + (cells[name],)) for name, cs in self.rows))

    def as_dict(self) -> dict[str, list[str]]:
        return {name: [show_cell(c) for c in cs] for name, cs in self.rows}


def _resolve(template: dict, chan: lang.Channel):
    if chan.name in template:
        return template[chan.name]
    if chan.level in template:
        return template[chan.level]
    raise PolicyError(f"channel {chan.name!r} missing from table template")


def build_table(template: dict, chans: list[lang.Channel], n: int) -> PrivTable:
    rows = []
    for ch in chans:
        cells = _resolve(template, ch)
        if isinstance(cells, str):
            cells = [cells] * n
        cells = [norm_cell(c) for c in cells]
        if len(cells) < n:
            raise PolicyError(f"row for {ch.name!r} has {len(cells)} cells, need {n}")
        rows.append((ch.name, tuple(cells[:n])))
    return PrivTable(tuple(rows))


# --------------------------------------------------------------------------
# handler templates


def _subst_expr(e, i: int, c: str):
    if isinstance(e, Var):
        if e.name == "i":
            return Lit(i)
        if e.name == "c":
            return Var(c)
        return e
    if isinstance(e, Not):
        return Not(_subst_expr(e.operand, i, c))
    if isinstance(e, BinOp):
        return BinOp(e.op, _subst_expr(e.left, i, c), _subst_expr(e.right, i, c))
    if isinstance(e, Call):
        return Call(e.name, tuple(_subst_expr(a, i, c) for a in e.args))
    return e


def _ch(name: str, c: str) -> str:
    return c if name == "c" else name


def _subst_pred(p: Pred, i: int, c: str) -> Pred:
    arg = p.arg
    if isinstance(arg, str):
        arg = _ch(arg, c)
    elif arg is not None:
        arg = _subst_expr(arg, i, c)
    return Pred(p.name, arg, p.negated)


def instantiate(stmt: Stmt, i: int, c: str) -> Stmt:
    """Substitute the handler parameters ``i`` and ``c``."""
    s, e, ch = stmt, (lambda x: _subst_expr(x, i, c)), (lambda x: _ch(x, c))
    if isinstance(s, Seq):
        return Seq(instantiate(s.first, i, c), instantiate(s.second, i, c))
    if isinstance(s, If):
        return If(e(s.cond), instantiate(s.then, i, c), instantiate(s.orelse, i, c))
    if isinstance(s, While):
        return While(e(s.cond), instantiate(s.body, i, c))
    if isinstance(s, Assign):
        return Assign(s.var, e(s.expr))
    if isinstance(s, Input):
        return Input(s.var, ch(s.chan))
    if isinstance(s, Output):
        return Output(e(s.expr), ch(s.chan))
    if isinstance(s, MapTo):
        return MapTo(e(s.expr), ch(s.chan), _subst_pred(s.pred, i, c))
    if isinstance(s, Wake):
        return Wake(_subst_pred(s.pred, i, c))
    if isinstance(s, Clone):
        return Clone(_subst_pred(s.pred, i, c), s.priv_tm, s.priv_tr)
    if isinstance(s, Retrieve):
        return Retrieve(s.var, e(s.index), ch(s.chan))
    if isinstance(s, Clean):
        return Clean(ch(s.chan), _subst_pred(s.pred, i, c))
    return s


MAP_FORBIDDEN = (Output, Retrieve, Clean)
REDUCE_FORBIDDEN = (Input, MapTo, Clone)
ALLOWED = {"map": (lang.Skip, Assign, Seq, If, While, Input, MapTo, Wake, Clone),
           "reduce": (lang.Skip, Assign, Seq, If, While, Retrieve, Output, Wake, Clean)}


def lint_handler(stmt: Stmt, role: str) -> list[str]:
    """Problems with a handler program; empty list when it is well-formed."""
    problems = []
    for s in lang.walk(stmt):
        if not isinstance(s, ALLOWED[role]):
            problems.append(f"{role} handler may not use {type(s).__name__}")
    return problems


# --------------------------------------------------------------------------
# policy data


@dataclass(frozen=True)
class PolicyConfig:
    name: str
    executions: int
    t_m: dict
    t_r: dict
    map_handler: str
    reduce_handler: str
    templates: dict = field(default_factory=dict)
    description: str = ""

    def __hash__(self):
        return hash((self.name, self.executions, self.map_handler, self.reduce_handler))

    def parsed(self) -> tuple[Stmt, Stmt]:
        return _parse_handlers(self.map_handler, self.reduce_handler)

    def clones(self) -> bool:
        m, _ = self.parsed()
        return any(isinstance(s, Clone) for s in lang.walk(m))

    def instantiate(self, env: ChannelEnv) -> "PolicyInstance":
        m, r = self.parsed()
        tm = build_table(self.t_m, env.inputs, self.executions)
        tr = build_table(self.t_r, env.outputs, self.executions)
        templates = {}
        for name, tpl in self.templates.items():
            templates[name] = {ch.name: norm_cell(_resolve(tpl, ch)) for ch in env}
        for s in lang.walk(m):
            if isinstance(s, Clone):
                for t in (s.priv_tm, s.priv_tr):
                    if t not in templates:
                        raise PolicyError(f"clone uses unknown template {t!r}")
        return PolicyInstance(self, env, tm, tr, templates, m, r)

    def to_doc(self) -> dict:
        def table(t):
            return {k: ([show_cell(norm_cell(c)) for c in v] if not isinstance(v, str) else show_cell(norm_cell(v)))
                    for k, v in t.items()}
        return {
            "name": self.name,
            "description": self.description,
            "executions": self.executions,
            "t_m": table(self.t_m),
            "t_r": table(self.t_r),
            "templates": {k: {r: show_cell(norm_cell(v)) for r, v in t.items()} for k, t in self.templates.items()},
            "map": self.map_handler,
            "reduce": self.reduce_handler,
        }


@lru_cache(maxsize=None)
def _parse_handlers(map_src: str, red_src: str) -> tuple[Stmt, Stmt]:
    try:
        m = lang.parse_handler(map_src, "map")
        r = lang.parse_handler(red_src, "reduce")
    except lang.ParseError as exc:
        raise PolicyError(f"handler syntax: {exc}") from exc
    problems = lint_handler(m, "map") + lint_handler(r, "reduce")
    if problems:
        raise PolicyError("; ".join(problems))
    return m, r


@dataclass(frozen=True)
class PolicyInstance:
    """A policy bound to a channel environment."""

    policy: PolicyConfig
    env: ChannelEnv
    t_m: PrivTable
    t_r: PrivTable
    templates: dict
    map_ast: Stmt
    reduce_ast: Stmt

    def handler(self, role: str, i: int, c: str) -> Stmt:
        return _instantiated(self.map_ast if role == "map" else self.reduce_ast, i, c)


@lru_cache(maxsize=4096)
def _instantiated(stmt: Stmt, i: int, c: str) -> Stmt:
    return instantiate(stmt, i, c)


def policy_from_doc(doc: dict) -> PolicyConfig:
    try:
        return PolicyConfig(
            name=str(doc.get("name", "custom")),
            executions=int(doc.get("executions", 2)),
            t_m=dict(doc["t_m"]),
            t_r=dict(doc["t_r"]),
            map_handler=str(doc["map"]),
            reduce_handler=str(doc["reduce"]),
            templates={k: dict(v) for k, v in (doc.get("templates") or {}).items()},
            description=str(doc.get("description", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyError(f"bad policy document: {exc}") from exc


def load_policy(path: Union[str, Path]) -> PolicyConfig:
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict):
        raise PolicyError(f"{path}: expected a mapping")
    pol = policy_from_doc(doc)
    pol.parsed()
    return pol


def dump_policy(pol: PolicyConfig) -> str:
    return yaml.safe_dump(pol.to_doc(), sort_keys=False)


# --------------------------------------------------------------------------
# shipped configurations

MAP_READ = """\
  input x from c;
  map(x, c, canTell(c));
  map(default(c), c, !canTell(c));
  wake(isReady(c))"""

RI_MAP = f"""\
if ask(i, c) then {{
{MAP_READ}
}}
"""

NI_MAP = f"""\
if ask(i, c) then {{
{MAP_READ}
}} else {{
  if !tell(i, c) then {{
    map(default(c), c, identical(i));
    wake(identical(i))
  }}
}}
"""

DI_MAP = f"""\
if high(c) && i == 0 then {{
  clone(identical(i), PRIV_TM, PRIV_TR)
}};
if ask(i, c) then {{
  if tell(i, c) then {{
  {MAP_READ}
  }} else {{
    map(default(c), c, identical(i));
    wake(identical(i))
  }}
}}
"""

REDUCE = """\
x := default(c);
if ask(i, c) then {
  retrieve x from i on c
};
if tell(i, c) then {
  output x to c
};
clean(c, identical(i));
wake(identical(i))
"""

RI_TM = {HIGH: ["at", "a"], LOW: ["t", "at"]}
NI_TM = {HIGH: ["at", "-"], LOW: ["t", "at"]}
STD_TR = {HIGH: ["at", "-"], LOW: ["-", "at"]}

# Output table in which the low execution may also write to high channels.
# Shipped for reference only; no named policy uses it.
VARIANT_T_R = {HIGH: ["at", "at"], LOW: ["-", "at"]}


def ri_policy() -> PolicyConfig:
    return PolicyConfig("ri", 2, dict(RI_TM), dict(STD_TR), RI_MAP, REDUCE,
                        description="removal of inputs")


def ni_policy() -> PolicyConfig:
    return PolicyConfig("ni", 2, dict(NI_TM), dict(STD_TR), NI_MAP, REDUCE,
                        description="noninterference, SME style")


def di_policy() -> PolicyConfig:
    return PolicyConfig("di", 2, dict(RI_TM), dict(STD_TR), DI_MAP, REDUCE,
                        templates={"PRIV_TM": {HIGH: "a", LOW: "t"}, "PRIV_TR": {HIGH: "-", LOW: "-"}},
                        description="deletion of inputs")


def subdi_policy() -> PolicyConfig:
    return PolicyConfig("subdi", 2, dict(NI_TM), dict(STD_TR), RI_MAP, REDUCE,
                        description="NI input table with the RI MAP handler")


def identity_policy() -> PolicyConfig:
    """One execution holding every privilege: behaves like the bare program."""
    return PolicyConfig("identity", 1, {HIGH: ["at"], LOW: ["at"]}, {HIGH: ["at"], LOW: ["at"]},
                        RI_MAP, REDUCE, description="single fully privileged execution")


SHIPPED = {"ni": ni_policy, "ri": ri_policy, "di": di_policy, "subdi": subdi_policy,
           "identity": identity_policy}


def get_policy(name: str) -> PolicyConfig:
    try:
        return SHIPPED[name.lower()]()
    except KeyError:
        raise PolicyError(f"unknown policy {name!r}; choose from {', '.join(SHIPPED)}") from None


# --------------------------------------------------------------------------
# predicates


def eval_predicate(pred: Pred, index: int, ex, t_m: PrivTable, env: ChannelEnv,
                   target: Optional[int] = None) -> bool:
    """Evaluate ``pred`` on local execution ``ex`` (at stack position ``index``).

    ``target`` is the already-evaluated argument of ``identical``.
    """
    name = pred.name
    if name == "canTell":
        r = t_m.has(index, pred.arg, "t")
    elif name == "isReady":
        h = lang.head(ex.prg)
        r = (ex.stt == "S" and isinstance(h, Input) and h.chan == pred.arg
             and lang.dequeue(ex.inq, pred.arg)[0] is not None)
    elif name == "identical":
        r = index == target
    elif name == "isWaitingInput":
        h = lang.head(ex.prg)
        r = (ex.stt == "S" and ex.sig is not None and ex.sig in env
             and env[ex.sig].direction == "in" and isinstance(h, Input) and h.chan == ex.sig)
    elif name == "isWaitingOutput":
        r = ex.stt == "S" and ex.sig is not None and ex.sig in env and env[ex.sig].direction == "out"
    else:
        raise PolicyError(f"unknown predicate {name!r}")
    return r != pred.negated
