import random
from dataclasses import dataclass
from typing import Tuple

import pytest

from tracegen.errors import SortError, UnknownOp
from tracegen.logic import BOOL, ID, INT, UNIT, UNIT_VALUE
from tracegen.trace import (
    Event,
    erase_ghost,
    format_trace,
    parse_constant,
    parse_trace,
    render_constant,
    well_formed,
)


@dataclass(frozen=True)
class _Decl:
    params: Tuple[Tuple[str, str], ...]
    ret_sort: str
    kind: str


class _Decls:
    def __init__(self, table):
        self.table = table

    def get(self, op):
        return self.table.get(op)


DECLS = _Decls(
    {
        "push": _Decl((("x", INT),), UNIT, "effect"),
        "pop": _Decl((), INT, "effect"),
        "pushI": _Decl((("n", INT), ("x", INT)), UNIT, "ghost"),
        "readReq": _Decl((), ID, "effect"),
    }
)


def _random_event(rng):
    op = rng.choice(["push", "pop", "pushI"])
    decl = DECLS.get(op)
    args = tuple(rng.randint(-8, 8) for _ in decl.params)
    ret = UNIT_VALUE if decl.ret_sort == UNIT else rng.randint(-8, 8)
    return Event(op, args, ret, ghost=decl.kind == "ghost")


class TestErasure:
    def test_removes_only_ghosts(self):
        alpha = (
            Event("push", (1,), UNIT_VALUE),
            Event("pushI", (0, 1), UNIT_VALUE, ghost=True),
            Event("pop", (), 1),
        )
        assert erase_ghost(alpha) == (alpha[0], alpha[2])

    def test_idempotent_and_distributes_over_concat(self):
        rng = random.Random(3)
        for _ in range(100):
            a = tuple(_random_event(rng) for _ in range(rng.randrange(4)))
            b = tuple(_random_event(rng) for _ in range(rng.randrange(4)))
            assert erase_ghost(erase_ghost(a)) == erase_ghost(a)
            assert erase_ghost(a + b) == erase_ghost(a) + erase_ghost(b)


class TestWellFormed:
    def test_accepts_sorted_payloads(self):
        alpha = (
            Event("push", (3,), UNIT_VALUE),
            Event("pushI", (0, 3), UNIT_VALUE, ghost=True),
            Event("pop", (), 3),
            Event("readReq", (), 7),  # id-sorted returns are integers
        )
        assert well_formed(alpha, DECLS)

    def test_rejects_arity_mismatch(self):
        assert not well_formed([Event("push", (1, 2), UNIT_VALUE)], DECLS)

    def test_rejects_sort_mismatch(self):
        assert not well_formed([Event("push", (True,), UNIT_VALUE)], DECLS)
        assert not well_formed([Event("pop", (), UNIT_VALUE)], DECLS)

    def test_rejects_ghost_flag_mismatch(self):
        assert not well_formed([Event("pushI", (0, 1), UNIT_VALUE)], DECLS)
        assert not well_formed([Event("push", (1,), UNIT_VALUE, ghost=True)], DECLS)

    def test_unknown_op_raises(self):
        with pytest.raises(UnknownOp):
            well_formed([Event("mystery", (), UNIT_VALUE)], DECLS)


class TestSerialization:
    def test_constant_round_trip(self):
        for c in [UNIT_VALUE, True, False, 0, -8, 8, 42]:
            assert parse_constant(render_constant(c)) == c

    def test_bad_constant(self):
        with pytest.raises(SortError):
            parse_constant("zap")

    def test_format(self):
        alpha = (
            Event("push", (3,), UNIT_VALUE),
            Event("pop", (), 3),
            Event("pushI", (0, 3), UNIT_VALUE, ghost=True),
        )
        assert format_trace(alpha) == (
            "op=push args=[3] ret=() ghost=0\n"
            "op=pop args=[] ret=3 ghost=0\n"
            "op=pushI args=[0,3] ret=() ghost=1\n"
        )

    def test_round_trip_random(self):
        rng = random.Random(11)
        for _ in range(100):
            alpha = tuple(_random_event(rng) for _ in range(rng.randrange(6)))
            assert parse_trace(format_trace(alpha)) == alpha

    def test_parse_skips_blank_and_comment_lines(self):
        text = "# header\n\nop=pop args=[] ret=1 ghost=0\n"
        assert parse_trace(text) == (Event("pop", (), 1),)

    def test_parse_rejects_garbage(self):
        with pytest.raises(SortError):
            parse_trace("op=pop args=() ret=1 ghost=0")
        with pytest.raises(SortError):
            parse_trace("op=pop ret=1")
