"""Run-trace documents: build, validate, load, and render as tables.

Machine documents and pretty tables are both derived from the same run
result, so the two views cannot disagree.
"""

from __future__ import annotations

from typing import Optional

import jsonschema

from . import em, lang
from .lang import ChannelEnv, IoItem

STANDALONE_OUTCOMES = {"terminated": "Terminated", "residual": "FinishedWithResidual",
                       "stuck": "Stuck", "budget": "BudgetExceeded"}

_ITEM = {
    "type": "object",
    "required": ["channel", "value"],
    "properties": {"channel": {"type": "string"}, "value": {"type": "string"}},
    "additionalProperties": False,
}
_QUEUE = {"type": "array", "items": _ITEM}

TRACE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["outcome", "input", "consumed", "residual", "global_output", "policy"],
    "properties": {
        "outcome": {"enum": ["Completed", "QuiescentWithResidual", "Deadlocked", "BudgetExceeded",
                             "Terminated", "FinishedWithResidual", "Stuck"]},
        "policy": {"type": "string"},
        "mode": {"enum": ["channel", "head"]},
        "budget": {"type": "integer", "minimum": 1},
        "steps": {"type": "integer", "minimum": 0},
        "input": _QUEUE,
        "consumed": _QUEUE,
        "residual": _QUEUE,
        "global_output": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["step", "channel", "value", "source_exec"],
                "properties": {
                    "step": {"type": ["integer", "null"]},
                    "channel": {"type": "string"},
                    "value": {"type": "string"},
                    "source_exec": {"type": ["integer", "null"]},
                },
            },
        },
        "global_reads": {"type": "array"},
        "executions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "state", "local_in", "local_out"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "state": {"enum": ["E", "S"]},
                    "local_in": _QUEUE,
                    "local_out": _QUEUE,
                    "cloned_from": {"type": ["integer", "null"]},
                },
            },
        },
        "clone_count": {"type": "integer", "minimum": 0},
        "schedule": {"type": "array", "items": {"type": "string"}},
        "reasons": {"type": "array", "items": {"type": "string"}},
        "program": {"type": "string"},
        "channels": {"type": "array"},
    },
}


def validate(doc: dict) -> None:
    """Raise jsonschema.ValidationError if ``doc`` is not a trace document."""
    jsonschema.validate(doc, TRACE_SCHEMA)


def _q(items) -> list[dict]:
    return lang.items_to_doc(items)


def local_traces(res: em.RunResult) -> list[dict]:
    n = len(res.final.ex)
    ins: list[list] = [[] for _ in range(n)]
    outs: list[list] = [[] for _ in range(n)]
    parent: list[Optional[int]] = [None] * n
    for ev in res.log:
        kind = ev[1]
        if kind == "deliver":
            for who in ev[4]:
                ins[who].append(IoItem(ev[2], ev[3]))
        elif kind == "local_out":
            outs[ev[2]].append(IoItem(ev[3], ev[4]))
        elif kind == "clone":
            src, new = ev[2], ev[3]
            parent[new] = src
            ins[new] = list(ins[src])
            outs[new] = list(outs[src])
    return [{"id": k, "state": e.stt, "local_in": _q(ins[k]), "local_out": _q(outs[k]),
             "cloned_from": parent[k]} for k, e in enumerate(res.final.ex)]


def enforced_doc(res: em.RunResult, inq, policy: str, env: ChannelEnv, mode: str = "channel",
                 budget: Optional[int] = None, program_text: Optional[str] = None) -> dict:
    doc = {
        "outcome": res.outcome,
        "policy": policy,
        "mode": mode,
        "steps": res.steps,
        "input": _q(inq),
        "consumed": _q(res.consumed),
        "residual": _q(res.residual),
        "global_output": [{"step": w.step, "channel": w.channel, "value": lang.show_value(w.value),
                           "source_exec": w.source_exec} for w in res.writes],
        "global_reads": [{"step": s, "channel": c, "value": lang.show_value(v), "source_exec": who}
                         for s, c, v, who in res.reads],
        "executions": local_traces(res),
        "clone_count": res.clone_count,
        "schedule": list(res.schedule),
        "reasons": list(res.reasons),
        "channels": lang.channels_to_doc(env),
    }
    if budget is not None:
        doc["budget"] = budget
    if program_text is not None:
        doc["program"] = program_text
    return doc


def standalone_doc(out: lang.Outcome, inq, env: ChannelEnv, budget: Optional[int] = None,
                   program_text: Optional[str] = None) -> dict:
    consumed = tuple(inq)[:len(tuple(inq)) - len(out.residual)]
    doc = {
        "outcome": STANDALONE_OUTCOMES[out.status],
        "policy": "none",
        "steps": out.steps,
        "input": _q(inq),
        "consumed": _q(consumed),
        "residual": _q(out.residual),
        "global_output": [{"step": None, "channel": it.channel, "value": lang.show_value(it.value),
                           "source_exec": None} for it in out.out],
        "reasons": [out.reason] if out.reason else [],
        "channels": lang.channels_to_doc(env),
    }
    if budget is not None:
        doc["budget"] = budget
    if program_text is not None:
        doc["program"] = program_text
    return doc


def output_items(doc: dict) -> tuple[IoItem, ...]:
    return lang.items_from_doc(doc["global_output"])


# --------------------------------------------------------------------------
# tables


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[k])) for r in [header] + rows) for k in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header] + rows]
    return "\n".join(lines)


def _time_table(events: list[tuple], chans: list[str]) -> str:
    """Rows are time steps, columns channels; each cell the value seen there."""
    header = ["step"] + chans
    rows = []
    for step, chan, val, who in events:
        row = [str(step) if step is not None else "-"] + [""] * len(chans)
        row[1 + chans.index(chan)] = val if who is None else f"{val} [{who}]"
        rows.append(row)
    return _table(header, rows) if rows else "(none)"


def pretty(doc: dict) -> str:
    """Human-readable rendering of a trace document."""
    chans = lang.channels_from_doc(doc["channels"])
    ins = [c.name for c in chans.inputs]
    outs = [c.name for c in chans.outputs]
    parts = [f"policy {doc['policy']}: {doc['outcome']} after {doc.get('steps', '?')} steps"]
    reads = doc.get("global_reads")
    if reads is None:
        reads = [{"step": None, "channel": d["channel"], "value": d["value"], "source_exec": None}
                 for d in doc["consumed"]]
    parts.append("global input (value [requesting execution])")
    parts.append(_time_table([(r["step"], r["channel"], r["value"], r["source_exec"]) for r in reads], ins))
    parts.append("global output (value [source execution])")
    parts.append(_time_table([(w["step"], w["channel"], w["value"], w["source_exec"])
                              for w in doc["global_output"]], outs))
    parts.append("residual input: " + (" ".join(f"({d['channel']},{d['value']})" for d in doc["residual"]) or "none"))
    if doc.get("executions"):
        rows = [[str(e["id"]), e["state"],
                 " ".join(f"({d['channel']},{d['value']})" for d in e["local_in"]) or "-",
                 " ".join(f"({d['channel']},{d['value']})" for d in e["local_out"]) or "-"]
                for e in doc["executions"]]
        parts.append("executions (clones: %d)" % doc.get("clone_count", 0))
        parts.append(_table(["id", "state", "local in", "local out"], rows))
    for r in doc.get("reasons", []):
        parts.append(f"blocked: {r}")
    return "\n".join(parts)
