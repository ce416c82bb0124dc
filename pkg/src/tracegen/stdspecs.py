"""Built-in operator contexts: the indexed stack and the async-read store.

These mirror the bundled ``specs/*.uhat`` files; the frontend parser is
checked against these constructions.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .logic import ID, INT, TRUE, UNIT, Lit, PrimApp, Qualifier, Var, conj
from .sre import (
    ANY,
    RET_VAR,
    SEv,
    SEvent,
    arg_var,
    concat,
    diff,
    intersect,
    star,
)
from .typesys import (
    DepArrow,
    GhostArrow,
    Inter,
    OpDecl,
    OperatorContext,
    RBase,
    UHat,
)


def _a(i: int) -> Var:
    return Var(arg_var(i), INT)


def _nu() -> Var:
    return Var(RET_VAR, INT)


def _eq(a, b) -> Qualifier:
    return PrimApp("==", (a, b))


def ev(op: str, arity: int, qual: Qualifier = TRUE, ghost: bool = False) -> SEv:
    return SEv(SEvent(op, ghost, tuple(arg_var(i) for i in range(arity)), qual))


def ev_args(
    op: str,
    arity: int,
    args: Sequence[Optional[object]],
    ret: Optional[object] = None,
    extra: Qualifier = TRUE,
    ghost: bool = False,
) -> SEv:
    """Event whose i-th payload equals args[i] (None leaves it free)."""
    parts = []
    for i, rhs in enumerate(args):
        if rhs is not None:
            parts.append(_eq(_a(i), rhs))
    if ret is not None:
        parts.append(_eq(_nu(), ret))
    parts.append(extra)
    return ev(op, arity, conj(parts), ghost)


def last(event: SEv, op_arity: int) -> object:
    """LAST(⟨op …⟩) ≡ ◯* ⟨op …⟩ (◯ \\ ⟨op⟩)*."""
    e = event.ev
    anymatch = SEv(
        SEvent(e.op, e.ghost, tuple(arg_var(i) for i in range(op_arity)), TRUE)
    )
    return concat([star(ANY), event, star(diff(ANY, anymatch))])


def plus(a, b):
    return PrimApp("+", (a, b))


def minus(a, b):
    return PrimApp("-", (a, b))


def gt0(x):
    return PrimApp("<", (Lit(0, INT), x))


# --------------------------------------------------------------------------
# Stack: push/pop with pushI/popI ghost counters
# --------------------------------------------------------------------------


def stack_ops() -> OperatorContext:
    n, m, y, x, i = (Var(s, INT) for s in "nmyxi")

    push_sig = GhostArrow(
        "n",
        INT,
        GhostArrow(
            "y",
            INT,
            DepArrow(
                "x",
                RBase(INT, PrimApp("<", (y, _nu()))),
                UHat(
                    last(ev_args("pushI", 2, [n, y], ghost=True), 2),
                    "_v",
                    RBase(UNIT),
                    concat(
                        [
                            ev_args("push", 1, [x]),
                            ev_args("pushI", 2, [plus(n, Lit(1, INT)), x], ghost=True),
                        ]
                    ),
                ),
            ),
        ),
    )

    # Last(popI m _) ∧ Last(pushI n _) ∧ ◯* ⟨pushI (n-m) x⟩ ◯*
    pop_sig = GhostArrow(
        "n",
        INT,
        GhostArrow(
            "m",
            INT,
            UHat(
                intersect(
                    [
                        last(ev_args("popI", 2, [m], ghost=True), 2),
                        last(ev_args("pushI", 2, [n], ghost=True), 2),
                        concat(
                            [
                                star(ANY),
                                ev_args("pushI", 2, [minus(n, m), x], ghost=True),
                                star(ANY),
                            ]
                        ),
                    ]
                ),
                "x",
                RBase(INT),
                concat(
                    [
                        ev_args("pop", 0, [], ret=x),
                        ev_args("popI", 2, [plus(m, Lit(1, INT)), x], ghost=True),
                    ]
                ),
            ),
        ),
    )

    def ghost_counter_sig(gop: str, cop: str, cop_arity: int) -> DepArrow:
        """i:int → x:int → ([◯*⟨cop⟩] unit [⟨gop i x | i>0⟩])
        ⊼ ([(◯ \\ ⟨gop⟩)*] unit [⟨gop i x | i=0⟩])."""
        return DepArrow(
            "i",
            RBase(INT),
            DepArrow(
                "x",
                RBase(INT),
                Inter(
                    (
                        UHat(
                            concat([star(ANY), ev(cop, cop_arity)]),
                            "_v",
                            RBase(UNIT),
                            ev_args(gop, 2, [i, x], extra=gt0(i), ghost=True),
                        ),
                        UHat(
                            star(diff(ANY, ev(gop, 2, ghost=True))),
                            "_v",
                            RBase(UNIT),
                            ev_args(gop, 2, [i, x], extra=_eq(i, Lit(0, INT)), ghost=True),
                        ),
                    )
                ),
            ),
        )

    return OperatorContext(
        [
            OpDecl("push", "effect", push_sig),
            OpDecl("pop", "effect", pop_sig),
            OpDecl("pushI", "ghost", ghost_counter_sig("pushI", "push", 1)),
            OpDecl("popI", "ghost", ghost_counter_sig("popI", "pop", 0)),
        ]
    )


def stack_property():
    """◯* ⟨pop⟩ ◯* — the test must perform at least one pop."""
    return concat([star(ANY), ev("pop", 0), star(ANY)])


# --------------------------------------------------------------------------
# Transaction store: synchronous write, asynchronous readReq/readRsp
# --------------------------------------------------------------------------


def transaction_ops() -> OperatorContext:
    v, i, iota, t = Var("v", INT), Var("i", ID), Var("iota", ID), Var("t", ID)

    write_sig = DepArrow(
        "v",
        RBase(INT),
        UHat(star(ANY), "_v", RBase(UNIT), ev_args("write", 1, [v])),
    )

    read_req_sig = GhostArrow(
        "i",
        ID,
        UHat(
            star(ANY),
            "r",
            RBase(ID, _eq(_nu(), i)),
            ev_args("readReq", 0, [], ret=i),
        ),
    )

    # readRsp: ι:id ⇝ v:int ⇝ t:{id|ν=ι} →
    #   [LAST(⟨write v⟩) ⟨readReq | ν=ι⟩ ◯*] x:{int|ν=v} [⟨readRsp t | ν=x⟩]
    read_rsp_sig = GhostArrow(
        "iota",
        ID,
        GhostArrow(
            "v",
            INT,
            DepArrow(
                "t",
                RBase(ID, _eq(_nu(), iota)),
                UHat(
                    concat(
                        [
                            last(ev_args("write", 1, [v]), 1),
                            ev_args("readReq", 0, [], ret=iota),
                            star(ANY),
                        ]
                    ),
                    "x",
                    RBase(INT, _eq(_nu(), v)),
                    ev_args("readRsp", 1, [t], ret=Var("x", INT)),
                ),
            ),
        ),
    )

    return OperatorContext(
        [
            OpDecl("write", "effect", write_sig),
            OpDecl("readReq", "effect", read_req_sig),
            OpDecl("readRsp", "effect", read_rsp_sig),
        ]
    )


def transaction_property():
    """◯* ⟨readRsp⟩ ◯* — the test must complete at least one async read."""
    return concat([star(ANY), ev("readRsp", 1), star(ANY)])
