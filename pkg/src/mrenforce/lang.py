"""Controlled programs: syntax, parser, pretty-printer, small-step semantics,
and the I/O queue algebra shared by the enforcement machine and the oracles.

Values are Python ``bool`` (T/F) or non-negative ``int``.  Because ``True == 1``
in Python, every structure that stores values compares them by
``(is_bool, int)`` so a boolean and an integer never collapse into one key.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

Value = Union[bool, int]

HIGH = "H"
LOW = "L"


class KindError(Exception):
    """Operand of the wrong kind (e.g. ``!`` applied to an integer)."""


class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.msg = msg
        self.line = line
        self.col = col


class ChannelError(Exception):
    pass


def cache_hash(cls):
    """Memoize ``hash()`` on a frozen dataclass.  Configurations are hashed
    over and over during exploration and their trees are deep."""
    compute = cls.__hash__

    def __hash__(self):
        d = self.__dict__
        h = d.get("_hash")
        if h is None:
            h = compute(self)
            object.__setattr__(self, "_hash", h)
        return h

    cls.__hash__ = __hash__
    return cls


def vkey(v: Value) -> tuple[bool, int]:
    return (type(v) is bool, int(v))


def show_value(v: Value) -> str:
    if type(v) is bool:
        return "T" if v else "F"
    return str(v)


def parse_value(text: str) -> Value:
    t = text.strip()
    if t in ("T", "true", "True"):
        return True
    if t in ("F", "false", "False"):
        return False
    if re.fullmatch(r"\d+", t):
        return int(t)
    raise ValueError(f"not a value: {text!r}")


def kind_of(v: Value) -> str:
    return "bool" if type(v) is bool else "int"


# --------------------------------------------------------------------------
# channels


@dataclass(frozen=True)
class Channel:
    name: str
    direction: str  # "in" | "out"
    level: str  # "H" | "L"
    default: Value

    def __post_init__(self):
        if self.direction not in ("in", "out"):
            raise ChannelError(f"{self.name}: direction must be in/out")
        if self.level not in (HIGH, LOW):
            raise ChannelError(f"{self.name}: level must be H/L")
        if type(self.default) is not bool and (not isinstance(self.default, int) or self.default < 0):
            raise ChannelError(f"{self.name}: default must be a boolean or a non-negative integer")

    @property
    def kind(self) -> str:
        return kind_of(self.default)


@dataclass(frozen=True)
class ChannelEnv:
    channels: tuple[Channel, ...]

    def __post_init__(self):
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ChannelError("duplicate channel names")

    @classmethod
    def of(cls, *chans: Channel) -> "ChannelEnv":
        return cls(tuple(chans))

    def __getitem__(self, name: str) -> Channel:
        for c in self.channels:
            if c.name == name:
                return c
        raise ChannelError(f"undeclared channel {name!r}")

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.channels)

    def __iter__(self) -> Iterator[Channel]:
        return iter(self.channels)

    @property
    def inputs(self) -> list[Channel]:
        return [c for c in self.channels if c.direction == "in"]

    @property
    def outputs(self) -> list[Channel]:
        return [c for c in self.channels if c.direction == "out"]

    def level(self, name: str) -> str:
        return self[name].level

    def levels(self) -> dict[str, str]:
        return {c.name: c.level for c in self.channels}


# --------------------------------------------------------------------------
# I/O items and queues


@cache_hash
@dataclass(frozen=True, eq=False)
class IoItem:
    """A single-channel I/O vector: ``v[channel] = value``, ⊥ elsewhere."""

    channel: str
    value: Value

    def _key(self):
        return (self.channel, vkey(self.value))

    def __eq__(self, other):
        return isinstance(other, IoItem) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return f"({self.channel},{show_value(self.value)})"


IoQueue = tuple  # tuple[IoItem, ...]


def q(*pairs) -> tuple[IoItem, ...]:
    """``q(("cH1", True), ("cL1", False))`` -> queue of items."""
    return tuple(IoItem(c, v) for c, v in pairs)


def dequeue(queue: Sequence[IoItem], chan: str) -> tuple[Optional[Value], tuple[IoItem, ...]]:
    """Value of the first item on ``chan`` and the queue without it; ``(None, queue)`` if absent."""
    for k, item in enumerate(queue):
        if item.channel == chan:
            return item.value, tuple(queue[:k]) + tuple(queue[k + 1:])
    return None, tuple(queue)


def restrict(queue: Iterable[IoItem], cond: Callable[[IoItem], bool]) -> tuple[IoItem, ...]:
    return tuple(item for item in queue if cond(item))


def restrict_level(queue: Iterable[IoItem], levels: dict[str, str], level: str) -> tuple[IoItem, ...]:
    return restrict(queue, lambda it: levels[it.channel] == level)


def restrict_channel(queue: Iterable[IoItem], chan: str) -> tuple[IoItem, ...]:
    return restrict(queue, lambda it: it.channel == chan)


def low_eq(q1: Iterable[IoItem], q2: Iterable[IoItem], levels: dict[str, str]) -> bool:
    return restrict_level(q1, levels, LOW) == restrict_level(q2, levels, LOW)


def channel_eq(q1: Iterable[IoItem], q2: Iterable[IoItem], chan: str) -> bool:
    return restrict_channel(q1, chan) == restrict_channel(q2, chan)


def per_channel(queue: Iterable[IoItem]) -> tuple[tuple[str, tuple], ...]:
    """Canonical per-channel projection (channel order is sorted)."""
    buckets: dict[str, list] = {}
    for item in queue:
        buckets.setdefault(item.channel, []).append(vkey(item.value))
    return tuple(sorted((c, tuple(vs)) for c, vs in buckets.items()))


# --------------------------------------------------------------------------
# memory


class _Unset:
    """Read of a variable that was never assigned; resolved to the initial
    value of whatever kind the consuming operator needs (0 or F)."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "UNSET"


UNSET = _Unset()


def initial_value(kind: Optional[str]) -> Value:
    return False if kind == "bool" else 0


@cache_hash
@dataclass(frozen=True)
class Memory:
    items: tuple[tuple[str, bool, int], ...] = ()

    @classmethod
    def of(cls, mapping: dict[str, Value]) -> "Memory":
        return cls(tuple(sorted((k, type(v) is bool, int(v)) for k, v in mapping.items())))

    def get(self, name: str):
        for k, b, v in self.items:
            if k == name:
                return bool(v) if b else v
        return UNSET

    def set(self, name: str, value) -> "Memory":
        rest = [t for t in self.items if t[0] != name]
        if value is not UNSET:
            rest.append((name, type(value) is bool, int(value)))
        return Memory(tuple(sorted(rest)))

    def as_dict(self) -> dict[str, Value]:
        return {k: (bool(v) if b else v) for k, b, v in self.items}


EMPTY_MEMORY = Memory()


# --------------------------------------------------------------------------
# abstract syntax


@cache_hash
@dataclass(frozen=True, eq=False)
class Lit:
    value: Value

    def __eq__(self, other):
        return isinstance(other, Lit) and vkey(self.value) == vkey(other.value)

    def __hash__(self):
        return hash(("Lit", vkey(self.value)))


@cache_hash
@dataclass(frozen=True)
class Var:
    name: str


@cache_hash
@dataclass(frozen=True)
class Not:
    operand: "Expr"


@cache_hash
@dataclass(frozen=True)
class BinOp:
    op: str  # + - == < && ||
    left: "Expr"
    right: "Expr"


@cache_hash
@dataclass(frozen=True)
class Call:
    """Builtin query usable only inside MAP/REDUCE handlers:
    ``ask(i, c)``, ``tell(i, c)``, ``high(c)``, ``default(c)``."""

    name: str
    args: tuple["Expr", ...]


Expr = Union[Lit, Var, Not, BinOp, Call]

BUILTINS = {"ask": 2, "tell": 2, "high": 1, "default": 1}


@cache_hash
@dataclass(frozen=True)
class Skip:
    pass


@cache_hash
@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr


@cache_hash
@dataclass(frozen=True)
class Seq:
    first: "Stmt"
    second: "Stmt"


@cache_hash
@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Stmt"
    orelse: "Stmt"


@cache_hash
@dataclass(frozen=True)
class While:
    cond: Expr
    body: "Stmt"


@cache_hash
@dataclass(frozen=True)
class Input:
    var: str
    chan: str


@cache_hash
@dataclass(frozen=True)
class Output:
    expr: Expr
    chan: str


# handler-only instructions


@cache_hash
@dataclass(frozen=True)
class Pred:
    """Predicate over one local execution.  ``arg`` is a channel name for
    canTell/isReady, an index expression for identical, None otherwise."""

    name: str
    arg: Union[str, Expr, None] = None
    negated: bool = False


PREDICATES = {"canTell": "chan", "isReady": "chan", "identical": "index",
              "isWaitingInput": None, "isWaitingOutput": None}


@cache_hash
@dataclass(frozen=True)
class MapTo:
    expr: Expr
    chan: str
    pred: Pred


@cache_hash
@dataclass(frozen=True)
class Wake:
    pred: Pred


@cache_hash
@dataclass(frozen=True)
class Clone:
    pred: Pred
    priv_tm: str
    priv_tr: str


@cache_hash
@dataclass(frozen=True)
class Retrieve:
    var: str
    index: Expr
    chan: str


@cache_hash
@dataclass(frozen=True)
class Clean:
    chan: str
    pred: Pred


Stmt = Union[Skip, Assign, Seq, If, While, Input, Output, MapTo, Wake, Clone, Retrieve, Clean]
SKIP = Skip()

MAP_ONLY = (MapTo, Clone)
REDUCE_ONLY = (Retrieve, Clean)


def walk(stmt: Stmt) -> Iterator[Stmt]:
    yield stmt
    if isinstance(stmt, Seq):
        yield from walk(stmt.first)
        yield from walk(stmt.second)
    elif isinstance(stmt, If):
        yield from walk(stmt.then)
        yield from walk(stmt.orelse)
    elif isinstance(stmt, While):
        yield from walk(stmt.body)


def head(stmt: Stmt) -> Stmt:
    """The instruction that executes next (leftmost leaf of a sequence)."""
    while isinstance(stmt, Seq):
        stmt = stmt.first
    return stmt


def check_channels(prog: Stmt, env: ChannelEnv) -> None:
    """Raise ChannelError unless every input/output names a declared channel
    of the right direction."""
    for s in walk(prog):
        if isinstance(s, Input):
            if s.chan not in env or env[s.chan].direction != "in":
                raise ChannelError(f"input from {s.chan!r}: not a declared input channel")
        elif isinstance(s, Output):
            if s.chan not in env or env[s.chan].direction != "out":
                raise ChannelError(f"output to {s.chan!r}: not a declared output channel")


# --------------------------------------------------------------------------
# parser

KEYWORDS = {"skip", "if", "then", "else", "while", "do", "input", "from",
            "output", "to", "T", "F", "true", "false"}

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+|\#[^\n]*|//[^\n]*)
  | (?P<nl>\n)
  | (?P<num>\d+)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|==|&&|\|\||[-+<!;(){},])
""", re.VERBOSE)


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(src: str) -> list[Tok]:
    toks: list[Tok] = []
    pos, line, lstart = 0, 1, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m:
            raise ParseError(f"unexpected character {src[pos]!r}", line, pos - lstart + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            lstart = m.end()
        elif kind != "ws":
            toks.append(Tok(kind, m.group(), line, pos - lstart + 1))
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - lstart + 1))
    return toks


class Parser:
    def __init__(self, src: str, handler: Optional[str] = None):
        self.toks = tokenize(src)
        self.pos = 0
        self.handler = handler  # None | "map" | "reduce"

    # helpers
    def peek(self, k: int = 0) -> Tok:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind in ("id", "op") and t.text == text

    def next(self) -> Tok:
        t = self.peek()
        self.pos += 1
        return t

    def fail(self, msg: str, tok: Optional[Tok] = None):
        tok = tok or self.peek()
        where = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ParseError(f"{msg} at {where}", tok.line, tok.col)

    def expect(self, text: str) -> Tok:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        return self.next()

    def ident(self) -> str:
        t = self.peek()
        if t.kind != "id" or t.text in KEYWORDS:
            self.fail("expected identifier")
        return self.next().text

    # statements
    def program(self) -> Stmt:
        s = self.seq()
        if self.peek().kind != "eof":
            self.fail("unexpected token")
        return s

    def seq(self) -> Stmt:
        stmts = [self.stmt()]
        while self.at(";"):
            self.next()
            if self.peek().kind == "eof" or self.at("}"):
                break
            stmts.append(self.stmt())
        out = stmts[-1]
        for s in reversed(stmts[:-1]):
            out = Seq(s, out)
        return out

    def block(self) -> Stmt:
        self.expect("{")
        if self.at("}"):
            self.next()
            return SKIP
        s = self.seq()
        self.expect("}")
        return s

    def stmt(self) -> Stmt:
        t = self.peek()
        if self.at("{"):
            return self.block()
        if self.at("skip"):
            self.next()
            return SKIP
        if self.at("if"):
            self.next()
            cond = self.expr()
            self.expect("then")
            then = self.block()
            orelse = SKIP
            if self.at("else"):
                self.next()
                orelse = self.block()
            return If(cond, then, orelse)
        if self.at("while"):
            self.next()
            cond = self.expr()
            self.expect("do")
            return While(cond, self.block())
        if self.at("input"):
            self.next()
            var = self.ident()
            self.expect("from")
            return Input(var, self.ident())
        if self.at("output"):
            self.next()
            e = self.expr()
            self.expect("to")
            return Output(e, self.ident())
        if t.kind == "id" and t.text not in KEYWORDS:
            if self.handler is not None:
                special = self.handler_stmt()
                if special is not None:
                    return special
            name = self.ident()
            self.expect(":=")
            return Assign(name, self.expr())
        self.fail("expected statement")

    def handler_stmt(self) -> Optional[Stmt]:
        t, nxt = self.peek(), self.peek(1)
        if t.text in ("map", "wake", "clone", "clean") and nxt.text == "(":
            self.next()
            self.expect("(")
            if t.text == "map":
                e = self.expr()
                self.expect(",")
                c = self.ident()
                self.expect(",")
                s = MapTo(e, c, self.pred())
            elif t.text == "wake":
                s = Wake(self.pred())
            elif t.text == "clone":
                p = self.pred()
                self.expect(",")
                tm = self.ident()
                self.expect(",")
                s = Clone(p, tm, self.ident())
            else:
                c = self.ident()
                self.expect(",")
                s = Clean(c, self.pred())
            self.expect(")")
            return s
        if t.text == "retrieve" and nxt.kind == "id" and self.peek(2).text == "from":
            self.next()
            var = self.ident()
            self.expect("from")
            idx = self.expr()
            self.expect("on")
            return Retrieve(var, idx, self.ident())
        return None

    def pred(self) -> Pred:
        neg = False
        while self.at("!"):
            self.next()
            neg = not neg
        tok = self.peek()
        name = self.ident()
        if name not in PREDICATES:
            self.fail(f"unknown predicate {name!r}", tok)
        arg: Union[str, Expr, None] = None
        if PREDICATES[name] is not None:
            self.expect("(")
            arg = self.ident() if PREDICATES[name] == "chan" else self.expr()
            self.expect(")")
        elif self.at("("):
            self.next()
            self.expect(")")
        return Pred(name, arg, neg)

    # expressions, lowest precedence first
    _LEVELS = [("||",), ("&&",), ("==",), ("<",), ("+", "-")]

    def expr(self, level: int = 0) -> Expr:
        if level == len(self._LEVELS):
            return self.unary()
        left = self.expr(level + 1)
        while any(self.at(op) for op in self._LEVELS[level]):
            op = self.next().text
            left = BinOp(op, left, self.expr(level + 1))
        return left

    def unary(self) -> Expr:
        if self.at("!"):
            self.next()
            return Not(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        t = self.peek()
        if t.kind == "num":
            self.next()
            return Lit(int(t.text))
        if t.kind == "id" and t.text in ("T", "true"):
            self.next()
            return Lit(True)
        if t.kind == "id" and t.text in ("F", "false"):
            self.next()
            return Lit(False)
        if self.at("("):
            self.next()
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "id" and t.text not in KEYWORDS:
            self.next()
            if self.handler is not None and t.text in BUILTINS and self.at("("):
                self.next()
                args = [self.expr()]
                while self.at(","):
                    self.next()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != BUILTINS[t.text]:
                    self.fail(f"{t.text} takes {BUILTINS[t.text]} argument(s)", t)
                return Call(t.text, tuple(args))
            return Var(t.text)
        self.fail("expected expression")


def parse_program(src: str, env: Optional[ChannelEnv] = None) -> Stmt:
    prog = Parser(src).program()
    if env is not None:
        check_channels(prog, env)
    return prog


def parse_handler(src: str, role: str) -> Stmt:
    return Parser(src, handler=role).program()


def parse_expr(src: str) -> Expr:
    p = Parser(src, handler="map")
    e = p.expr()
    if p.peek().kind != "eof":
        p.fail("unexpected token")
    return e


# --------------------------------------------------------------------------
# pretty printer


def pretty_expr(e: Expr, nested: bool = False) -> str:
    if isinstance(e, Lit):
        return show_value(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Not):
        inner = pretty_expr(e.operand, nested=True)
        return "!" + inner
    if isinstance(e, Call):
        return f"{e.name}(" + ", ".join(pretty_expr(a) for a in e.args) + ")"
    s = f"{pretty_expr(e.left, True)} {e.op} {pretty_expr(e.right, True)}"
    return f"({s})" if nested else s


def pretty_pred(p: Pred) -> str:
    s = p.name
    if isinstance(p.arg, str):
        s += f"({p.arg})"
    elif p.arg is not None:
        s += f"({pretty_expr(p.arg)})"
    return ("!" if p.negated else "") + s


def pretty(stmt: Stmt, indent: int = 0) -> str:
    return "\n".join(_lines(stmt, indent))


def _block(stmt: Stmt, indent: int) -> list[str]:
    return ["{"] + _lines(stmt, indent + 1) + ["  " * indent + "}"]


def _lines(stmt: Stmt, indent: int) -> list[str]:
    pad = "  " * indent
    if isinstance(stmt, Seq):
        if isinstance(stmt.first, Seq):
            first = [pad + "{"] + _lines(stmt.first, indent + 1) + [pad + "}"]
        else:
            first = _lines(stmt.first, indent)
        first[-1] += ";"
        return first + _lines(stmt.second, indent)
    if isinstance(stmt, If):
        then = _block(stmt.then, indent)
        orelse = _block(stmt.orelse, indent)
        out = [pad + f"if {pretty_expr(stmt.cond)} then " + then[0]] + then[1:]
        out[-1] += " else " + orelse[0]
        return out + orelse[1:]
    if isinstance(stmt, While):
        body = _block(stmt.body, indent)
        return [pad + f"while {pretty_expr(stmt.cond)} do " + body[0]] + body[1:]
    return [pad + _simple(stmt)]


def _simple(stmt: Stmt) -> str:
    if isinstance(stmt, Skip):
        return "skip"
    if isinstance(stmt, Assign):
        return f"{stmt.var} := {pretty_expr(stmt.expr)}"
    if isinstance(stmt, Input):
        return f"input {stmt.var} from {stmt.chan}"
    if isinstance(stmt, Output):
        return f"output {pretty_expr(stmt.expr)} to {stmt.chan}"
    if isinstance(stmt, MapTo):
        return f"map({pretty_expr(stmt.expr)}, {stmt.chan}, {pretty_pred(stmt.pred)})"
    if isinstance(stmt, Wake):
        return f"wake({pretty_pred(stmt.pred)})"
    if isinstance(stmt, Clone):
        return f"clone({pretty_pred(stmt.pred)}, {stmt.priv_tm}, {stmt.priv_tr})"
    if isinstance(stmt, Retrieve):
        return f"retrieve {stmt.var} from {pretty_expr(stmt.index)} on {stmt.chan}"
    if isinstance(stmt, Clean):
        return f"clean({stmt.chan}, {pretty_pred(stmt.pred)})"
    raise TypeError(stmt)


# --------------------------------------------------------------------------
# expression evaluation


def _need(v, kind: str):
    if v is UNSET:
        return initial_value(kind)
    if kind == "bool" and type(v) is not bool:
        raise KindError(f"expected a boolean, got {show_value(v)}")
    if kind == "int" and type(v) is bool:
        raise KindError(f"expected an integer, got {show_value(v)}")
    return v


def _eval(mem: Memory, e: Expr, builtins):
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Var):
        return mem.get(e.name)
    if isinstance(e, Not):
        return not _need(_eval(mem, e.operand, builtins), "bool")
    if isinstance(e, Call):
        if builtins is None:
            raise KindError(f"{e.name}(...) is only available in handlers")
        return builtins(e.name, e.args, lambda x: _eval(mem, x, builtins))
    a = _eval(mem, e.left, builtins)
    if e.op in ("&&", "||"):
        a = _need(a, "bool")
        # both operands are evaluated so kind errors are never masked
        b = _need(_eval(mem, e.right, builtins), "bool")
        return (a and b) if e.op == "&&" else (a or b)
    b = _eval(mem, e.right, builtins)
    if e.op == "+":
        return _need(a, "int") + _need(b, "int")
    if e.op == "-":
        return max(0, _need(a, "int") - _need(b, "int"))
    if e.op == "<":
        return _need(a, "int") < _need(b, "int")
    if e.op == "==":
        if a is UNSET and b is UNSET:
            return True
        kind = kind_of(b if a is UNSET else a)
        return _need(a, kind) == _need(b, kind)
    raise KindError(f"unknown operator {e.op}")


def eval_raw(mem: Memory, e: Expr, builtins=None):
    """Evaluate, possibly returning UNSET for a bare unassigned variable."""
    return _eval(mem, e, builtins)


def eval_expr(mem: Union[Memory, dict], e: Expr, kind: Optional[str] = None, builtins=None) -> Value:
    if isinstance(mem, dict):
        mem = Memory.of(mem)
    v = _eval(mem, e, builtins)
    if v is UNSET:
        return initial_value(kind)
    if kind is not None:
        return _need(v, kind)
    return v


# --------------------------------------------------------------------------
# small-step semantics


@dataclass(frozen=True)
class ProgConfig:
    prg: Stmt
    mem: Memory = EMPTY_MEMORY
    inq: tuple[IoItem, ...] = ()
    outq: tuple[IoItem, ...] = ()


@dataclass(frozen=True)
class Effect:
    """Result of executing one leaf instruction."""

    rule: str
    stmt: Stmt  # replacement for the leaf
    mem: Memory
    data: tuple = ()


def step_stmt(prg: Stmt, mem: Memory, leaf: Callable[[Stmt, Memory], Optional[Effect]],
              builtins=None) -> Optional[tuple[Stmt, Effect]]:
    """One transition of the statement-level rules (ASSG, COMP, IF-T/F,
    WHIL-T/F, SKIP).  I/O and handler instructions are delegated to ``leaf``,
    which returns None when the instruction is blocked.  Raises KindError."""
    if isinstance(prg, Seq):
        if isinstance(prg.first, Skip):
            return prg.second, Effect("SKIP", prg.second, mem)
        r = step_stmt(prg.first, mem, leaf, builtins)
        if r is None:
            return None
        new_first, eff = r
        return Seq(new_first, prg.second), eff
    if isinstance(prg, Skip):
        return None
    if isinstance(prg, Assign):
        v = eval_raw(mem, prg.expr, builtins)
        return SKIP, Effect("ASSG", SKIP, mem.set(prg.var, v))
    if isinstance(prg, If):
        c = _need(eval_raw(mem, prg.cond, builtins), "bool")
        return (prg.then, Effect("IF-T", prg.then, mem)) if c else (prg.orelse, Effect("IF-F", prg.orelse, mem))
    if isinstance(prg, While):
        c = _need(eval_raw(mem, prg.cond, builtins), "bool")
        if c:
            nxt = Seq(prg.body, prg)
            return nxt, Effect("WHIL-T", nxt, mem)
        return SKIP, Effect("WHIL-F", SKIP, mem)
    eff = leaf(prg, mem)
    if eff is None:
        return None
    return eff.stmt, eff


def output_value(mem: Memory, e: Expr, kind: Optional[str], builtins=None) -> Value:
    v = eval_raw(mem, e, builtins)
    if v is UNSET:
        return initial_value(kind)
    return v


def step_program(cfg: ProgConfig, env: Optional[ChannelEnv] = None) -> Optional[tuple[ProgConfig, str]]:
    """Apply exactly one rule; None when none applies.  Raises KindError."""

    def leaf(s: Stmt, mem: Memory) -> Optional[Effect]:
        if isinstance(s, Input):
            if not cfg.inq or cfg.inq[0].channel != s.chan:
                return None
            return Effect("INP", SKIP, mem.set(s.var, cfg.inq[0].value), ("in",))
        if isinstance(s, Output):
            kind = env[s.chan].kind if env is not None and s.chan in env else None
            item = IoItem(s.chan, output_value(mem, s.expr, kind))
            return Effect("OUTP", SKIP, mem, ("out", item))
        raise KindError(f"{type(s).__name__} is not a program instruction")

    r = step_stmt(cfg.prg, cfg.mem, leaf)
    if r is None:
        return None
    prg, eff = r
    inq, outq = cfg.inq, cfg.outq
    if eff.data[:1] == ("in",):
        inq = inq[1:]
    elif eff.data[:1] == ("out",):
        outq = outq + (eff.data[1],)
    return ProgConfig(prg, eff.mem, inq, outq), eff.rule


@dataclass(frozen=True)
class Outcome:
    status: str  # terminated | residual | stuck | budget
    out: tuple[IoItem, ...] = ()
    residual: tuple[IoItem, ...] = ()
    steps: int = 0
    reason: str = ""
    mem: Memory = EMPTY_MEMORY

    TERMINATED = "terminated"
    RESIDUAL = "residual"
    STUCK = "stuck"
    BUDGET = "budget"

    @property
    def terminated(self) -> bool:
        return self.status == self.TERMINATED


def run_program(prog: Stmt, inq: Sequence[IoItem] = (), budget: int = 10_000,
                env: Optional[ChannelEnv] = None) -> Outcome:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    cfg = ProgConfig(prog, EMPTY_MEMORY, tuple(inq), ())
    steps = 0
    while True:
        if isinstance(cfg.prg, Skip):
            status = Outcome.TERMINATED if not cfg.inq else Outcome.RESIDUAL
            return Outcome(status, cfg.outq, cfg.inq, steps, mem=cfg.mem)
        if steps >= budget:
            return Outcome(Outcome.BUDGET, cfg.outq, cfg.inq, steps, "step budget exhausted", cfg.mem)
        try:
            r = step_program(cfg, env)
        except KindError as exc:
            return Outcome(Outcome.STUCK, cfg.outq, cfg.inq, steps, f"kind error: {exc}", cfg.mem)
        if r is None:
            h = head(cfg.prg)
            reason = f"input blocked on {h.chan}" if isinstance(h, Input) else "no rule applies"
            return Outcome(Outcome.STUCK, cfg.outq, cfg.inq, steps, reason, cfg.mem)
        cfg, _ = r
        steps += 1


# --------------------------------------------------------------------------
# file formats


def _coerce_value(raw) -> Value:
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, int):
        if raw < 0:
            raise ValueError(f"negative value {raw}")
        return raw
    return parse_value(str(raw))


def channels_from_doc(doc) -> ChannelEnv:
    if isinstance(doc, dict):
        doc = doc.get("channels", doc)
    if not isinstance(doc, list):
        raise ChannelError("channel document must be a list of channels")
    chans = []
    for entry in doc:
        try:
            chans.append(Channel(str(entry["name"]), str(entry["direction"]), str(entry["level"]),
                                 _coerce_value(entry.get("default", 0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ChannelError(f"bad channel entry {entry!r}: {exc}") from exc
    return ChannelEnv(tuple(chans))


def channels_to_doc(env: ChannelEnv) -> list[dict]:
    return [{"name": c.name, "direction": c.direction, "level": c.level,
             "default": show_value(c.default)} for c in env]


def load_channels(path) -> ChannelEnv:
    import yaml
    from pathlib import Path
    return channels_from_doc(yaml.safe_load(Path(path).read_text()))


def parse_trace(text: str) -> tuple[IoItem, ...]:
    """``CHANNEL=VALUE`` per line; blank lines and ``#`` comments ignored."""
    items = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected CHANNEL=VALUE")
        chan, val = line.split("=", 1)
        try:
            items.append(IoItem(chan.strip(), parse_value(val)))
        except ValueError as exc:
            raise ValueError(f"line {n}: {exc}") from None
    return tuple(items)


def items_from_doc(doc) -> tuple[IoItem, ...]:
    if isinstance(doc, dict):
        doc = doc["input"]
    return tuple(IoItem(str(d["channel"]), _coerce_value(d["value"])) for d in doc)


def items_to_doc(items: Iterable[IoItem]) -> list[dict]:
    return [{"channel": it.channel, "value": show_value(it.value)} for it in items]


def format_trace(items: Iterable[IoItem]) -> str:
    return "".join(f"{it.channel}={show_value(it.value)}\n" for it in items)


def load_trace(path) -> tuple[IoItem, ...]:
    """Line format, or a JSON/YAML document: a list of {channel, value} or a
    mapping with an ``input`` key (run traces and witnesses)."""
    from pathlib import Path
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith(("[", "{")) or str(path).endswith((".json", ".yaml", ".yml")):
        import yaml
        return items_from_doc(yaml.safe_load(text))
    return parse_trace(text)
