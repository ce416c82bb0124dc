"""Concrete events and traces, ghost erasure, and the line-based log format."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

from .errors import SortError, UnknownOp
from .logic import UNIT_VALUE, Constant, constant_sort, sort_compatible


@dataclass(frozen=True)
class Event:
    op: str
    args: Tuple[Constant, ...]
    ret: Constant
    ghost: bool = False

    def __str__(self) -> str:
        inner = " ".join([self.op, *map(render_constant, self.args)])
        tail = f" -> {render_constant(self.ret)}" if self.ret != UNIT_VALUE else ""
        mark = "~" if self.ghost else ""
        return f"<{mark}{inner}{tail}>"


Trace = Tuple[Event, ...]


def erase_ghost(alpha: Sequence[Event]) -> Trace:
    """Remove ghost-flagged events, preserving order.

    Distributes over concatenation and is idempotent.
    """
    return tuple(e for e in alpha if not e.ghost)


def well_formed(alpha: Sequence[Event], decls) -> bool:
    """Check every event's payload sorts against its declaration.

    ``decls`` is an OperatorContext (types module); only the basic-type view
    (param sorts, return sort, ghost flag) is consulted.
    """
    for e in alpha:
        decl = decls.get(e.op)
        if decl is None:
            raise UnknownOp(e.op)
        if len(e.args) != len(decl.params):
            return False
        if decl.kind == "ghost" and not e.ghost:
            return False
        if decl.kind != "ghost" and e.ghost:
            return False
        for (_, sort), value in zip(decl.params, e.args):
            if not sort_compatible(sort, value):
                return False
        if not sort_compatible(decl.ret_sort, e.ret):
            return False
    return True


# --------------------------------------------------------------------------
# Serialization: one record per line,
#   op=<name> args=[c1,...] ret=<c> ghost=<0|1>
# --------------------------------------------------------------------------


def render_constant(value: Constant) -> str:
    sort = constant_sort(value)
    if sort == "unit":
        return "()"
    if sort == "bool":
        return "true" if value else "false"
    return str(value)


def parse_constant(text: str) -> Constant:
    text = text.strip()
    if text == "()":
        return UNIT_VALUE
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        raise SortError(f"bad constant {text!r}")


def format_trace(alpha: Sequence[Event]) -> str:
    lines = []
    for e in alpha:
        args = ",".join(render_constant(a) for a in e.args)
        lines.append(
            f"op={e.op} args=[{args}] ret={render_constant(e.ret)} "
            f"ghost={1 if e.ghost else 0}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trace(text: str) -> Trace:
    events: List[Event] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = {}
        for part in line.split():
            if "=" not in part:
                raise SortError(f"line {lineno}: bad field {part!r}")
            key, _, value = part.partition("=")
            fields[key] = value
        try:
            op = fields["op"]
            arg_text = fields["args"]
            ret = parse_constant(fields["ret"])
            ghost = fields.get("ghost", "0") == "1"
        except KeyError as missing:
            raise SortError(f"line {lineno}: missing field {missing}")
        if not (arg_text.startswith("[") and arg_text.endswith("]")):
            raise SortError(f"line {lineno}: bad args {arg_text!r}")
        inner = arg_text[1:-1]
        args = tuple(parse_constant(a) for a in inner.split(",") if a.strip())
        events.append(Event(op, args, ret, ghost))
    return tuple(events)
