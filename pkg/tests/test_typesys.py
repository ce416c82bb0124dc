"""Type-level checks: erasure, well-formedness, subtyping, ghost
instantiation, history specialization, and event realizability — against the
built-in stack and transaction operator contexts."""

import random
import time

import pytest

from tracegen.errors import (
    ErasureMismatch,
    SemanticError,
    SpecializationRejected,
    UnknownOp,
    WellFormednessError,
)
from tracegen.logic import (
    INT,
    TRUE,
    UNIT,
    Domain,
    Lit,
    PrimApp,
    Var,
    arrow,
    eval_qualifier,
)
from tracegen.sre import ANY, EPS, RET_VAR, SEmpty, concat, intersect, star
from tracegen.stdspecs import (
    ev,
    ev_args,
    last,
    stack_ops,
    transaction_ops,
)
from tracegen.typesys import (
    DepArrow,
    GhostArrow,
    Inter,
    OpDecl,
    OperatorContext,
    RBase,
    TypeContext,
    UHat,
    erase,
    instantiate_ghost,
    realizable_event,
    specialize_history,
    sub_pure,
    sub_uhat,
    subst_type,
    well_formed_type,
    wf_violation,
)
from reference import random_qual
from walkthrough import POSITIVE, init_history, lit, run_walkthrough

DOM = Domain(-8, 8)
STACK = stack_ops()
STORE = transaction_ops()
ALG = STACK.algebra(DOM)
TALG = STORE.algebra(DOM)
X = Var("x", INT)


def pos_int() -> RBase:
    return RBase(INT, POSITIVE)


# --------------------------------------------------------------------------
# Erasure
# --------------------------------------------------------------------------


class TestErase:
    def test_base(self):
        assert erase(RBase(INT, POSITIVE)) == INT
        assert erase(RBase(UNIT)) == UNIT

    def test_operator_signatures(self):
        assert erase(STACK.require("push").signature) == arrow(INT, UNIT)
        assert erase(STACK.require("pop").signature) == INT
        assert erase(STORE.require("readRsp").signature) == arrow("id", INT)

    def test_ghost_binders_transparent(self):
        t = GhostArrow("n", INT, RBase(INT, POSITIVE))
        assert erase(t) == INT

    def test_inter_uses_first_component(self):
        sig = STACK.require("pushI").signature
        assert erase(sig) == arrow(INT, arrow(INT, UNIT))

    def test_erasure_invariant_under_instantiation(self):
        for op in STACK.ops():
            sig = STACK.require(op).signature
            t = sig
            binders = {}
            while isinstance(t, GhostArrow):
                binders[t.var] = 0
                t = t.body
            assert erase(instantiate_ghost(sig, binders)) == erase(sig)


# --------------------------------------------------------------------------
# Substitution
# --------------------------------------------------------------------------


class TestSubstType:
    def test_respects_ret_binder(self):
        t = UHat(star(ANY), "x", RBase(INT), ev_args("pop", 0, [], ret=X))
        out = subst_type(t, {"x": Lit(3, INT)})
        # the future's x is the trace type's own return binder — untouched
        assert out == t

    def test_substitutes_free_occurrences(self):
        t = UHat(
            concat([star(ANY), ev_args("push", 1, [Var("y", INT)])]),
            "x",
            RBase(INT),
            ev_args("pop", 0, [], ret=X),
        )
        out = subst_type(t, {"y": Lit(2, INT)})
        assert out.hist == concat([star(ANY), ev_args("push", 1, [Lit(2, INT)])])

    def test_dep_arrow_shadowing(self):
        t = DepArrow("x", RBase(INT), RBase(INT, PrimApp("<", (X, Var(RET_VAR, INT)))))
        assert subst_type(t, {"x": Lit(0, INT)}).body == t.body


# --------------------------------------------------------------------------
# Well-formedness
# --------------------------------------------------------------------------


class TestWellFormed:
    def test_builtin_signatures_are_well_formed(self):
        ctx = TypeContext()
        for op in STACK.ops():
            assert well_formed_type(ctx, STACK.require(op).signature, ALG), op
        for op in STORE.ops():
            assert well_formed_type(ctx, STORE.require(op).signature, TALG), op

    def test_empty_history_rejected(self):
        t = UHat(SEmpty(), "_v", RBase(UNIT), EPS)
        assert wf_violation(TypeContext(), t, ALG) == "WfHF"

    def test_infeasible_history_rejected(self):
        never = ev("push", 1, PrimApp("<", (Var(RET_VAR, INT), Var(RET_VAR, INT))))
        t = UHat(never, "_v", RBase(UNIT), EPS)
        assert wf_violation(TypeContext(), t, ALG) == "WfHF"

    def test_unbound_qualifier_variable(self):
        t = RBase(INT, PrimApp("<", (Var("z", INT), Var(RET_VAR, INT))))
        assert wf_violation(TypeContext(), t, ALG) == "WfPBase"
        ctx = TypeContext().extend("z", RBase(INT))
        assert well_formed_type(ctx, t, ALG)

    def test_unbound_regex_variable(self):
        t = UHat(star(ANY), "_v", RBase(UNIT), ev_args("push", 1, [Var("w", INT)]))
        assert wf_violation(TypeContext(), t, ALG) == "WfHF"

    def test_ret_binder_scopes_over_history(self):
        # pop's own history mentions its return binder x — well-formed
        t = UHat(
            concat([star(ANY), ev_args("push", 1, [X]), star(ANY)]),
            "x",
            RBase(INT),
            ev_args("pop", 0, [], ret=X),
        )
        assert well_formed_type(TypeContext(), t, ALG)

    def test_unknown_operator_event(self):
        t = UHat(ev("mystery", 0), "_v", RBase(UNIT), EPS)
        assert wf_violation(TypeContext(), t, ALG) == "WfEvent"

    def test_inter_erasure_mismatch(self):
        a = UHat(star(ANY), "_v", RBase(UNIT), EPS)
        b = UHat(star(ANY), "x", RBase(INT), EPS)
        assert wf_violation(TypeContext(), Inter((a, b)), ALG) == "WFInter"


# --------------------------------------------------------------------------
# Pure subtyping (must direction)
# --------------------------------------------------------------------------


class TestSubPure:
    def test_weakening_is_sub(self):
        # {int | 0<nu} <: {int | nu=1}: every trace forced through nu=1
        # is also allowed at 0<nu... must-direction runs the other way:
        t1 = RBase(INT, POSITIVE)
        t2 = RBase(INT, PrimApp("==", (Var(RET_VAR, INT), Lit(1, INT))))
        assert sub_pure(TypeContext(), t1, t2, DOM)
        assert not sub_pure(TypeContext(), t2, t1, DOM)

    def test_top_is_bottom_element(self):
        assert sub_pure(TypeContext(), RBase(INT), RBase(INT, POSITIVE), DOM)
        assert not sub_pure(TypeContext(), RBase(INT, POSITIVE), RBase(INT), DOM)

    def test_erasure_mismatch_raises(self):
        with pytest.raises(ErasureMismatch):
            sub_pure(TypeContext(), RBase(INT), RBase(UNIT), DOM)

    def test_context_discharges(self):
        # under y:{int | nu=3}, {int|y<nu} <: {int|nu=7} but not {int|nu=2}
        ctx = TypeContext().extend(
            "y", RBase(INT, PrimApp("==", (Var(RET_VAR, INT), Lit(3, INT))))
        )
        yv = Var("y", INT)
        t1 = RBase(INT, PrimApp("<", (yv, Var(RET_VAR, INT))))
        t_hi = RBase(INT, PrimApp("==", (Var(RET_VAR, INT), Lit(7, INT))))
        t_lo = RBase(INT, PrimApp("==", (Var(RET_VAR, INT), Lit(2, INT))))
        assert sub_pure(ctx, t1, t_hi, DOM)
        assert not sub_pure(ctx, t1, t_lo, DOM)

    def test_dep_arrow_variance(self):
        # parameter contravariant, body covariant — with must-direction
        # leaves, the subtype constrains its parameter more and promises
        # less about its body
        one = PrimApp("==", (Var(RET_VAR, INT), Lit(1, INT)))
        f1 = DepArrow("a", RBase(INT, one), RBase(INT))
        f2 = DepArrow("b", RBase(INT), RBase(INT, POSITIVE))
        assert sub_pure(TypeContext(), f1, f2, DOM)
        assert not sub_pure(TypeContext(), f2, f1, DOM)

    def test_random_agreement_with_enumeration(self):
        rng = random.Random(411)
        ctx_qual = PrimApp("<=", (Lit(0, INT), Var(RET_VAR, INT)))
        ctx = TypeContext().extend("u", RBase(INT, ctx_qual))
        values = range(DOM.lo, DOM.hi + 1)
        for _ in range(80):
            q1 = random_qual(rng, 0, [-2, 0, 1, 3], ambient=("u",))
            q2 = random_qual(rng, 0, [-2, 0, 1, 3], ambient=("u",))
            got = sub_pure(ctx, RBase(INT, q1), RBase(INT, q2), DOM)
            want = all(
                eval_qualifier(q1, {"u": u, RET_VAR: nu}, DOM)
                for u in values
                if u >= 0
                for nu in values
                if eval_qualifier(q2, {"u": u, RET_VAR: nu}, DOM)
            )
            assert got == want, (q1, q2)


# --------------------------------------------------------------------------
# Trace-type subtyping
# --------------------------------------------------------------------------


def uhat(h, f, ret=None, name="_v"):
    return UHat(h, name, ret or RBase(UNIT), f)


class TestSubUHat:
    def test_reflexive(self):
        t = uhat(star(ANY), ev("push", 1))
        assert sub_uhat(TypeContext(), t, t, ALG)

    def test_history_covariant(self):
        small = uhat(ev("push", 1), ev("pop", 0))
        big = uhat(star(ANY), ev("pop", 0))
        assert sub_uhat(TypeContext(), small, big, ALG)
        assert not sub_uhat(TypeContext(), big, small, ALG)

    def test_future_contravariant(self):
        rich = uhat(star(ANY), star(ANY))
        narrow = uhat(star(ANY), ev("push", 1))
        assert sub_uhat(TypeContext(), rich, narrow, ALG)
        assert not sub_uhat(TypeContext(), narrow, rich, ALG)

    def test_return_strengthening(self):
        weak = uhat(star(ANY), ev("pop", 0), ret=RBase(INT), name="x")
        strong = uhat(star(ANY), ev("pop", 0), ret=pos_int(), name="x")
        assert sub_uhat(TypeContext(), weak, strong, ALG)
        assert not sub_uhat(TypeContext(), strong, weak, ALG)

    def test_ret_binder_renaming(self):
        t1 = UHat(star(ANY), "x", RBase(INT), ev_args("pop", 0, [], ret=X))
        t2 = UHat(star(ANY), "z", RBase(INT), ev_args("pop", 0, [], ret=Var("z", INT)))
        assert sub_uhat(TypeContext(), t1, t2, ALG)
        assert sub_uhat(TypeContext(), t2, t1, ALG)

    def test_inter_on_the_left_needs_one_component(self):
        a = uhat(ev("push", 1), ev("pop", 0))
        b = uhat(ev("pop", 0), ev("pop", 0))
        assert sub_uhat(TypeContext(), Inter((a, b)), a, ALG)
        assert sub_uhat(TypeContext(), Inter((b, a)), a, ALG)

    def test_inter_on_the_right_needs_all_components(self):
        a = uhat(ev("push", 1), ev("pop", 0))
        b = uhat(ev("pop", 0), ev("pop", 0))
        top = uhat(star(ANY), ev("pop", 0))
        assert sub_uhat(TypeContext(), a, Inter((a,)), ALG)
        assert not sub_uhat(TypeContext(), a, Inter((a, b)), ALG)
        assert sub_uhat(TypeContext(), a, Inter((a, top)), ALG)

    def test_non_trace_types_rejected(self):
        with pytest.raises(SemanticError):
            sub_uhat(TypeContext(), RBase(INT), RBase(INT), ALG)


# --------------------------------------------------------------------------
# Ghost instantiation
# --------------------------------------------------------------------------


class TestInstantiateGhost:
    def test_push_at_initial_counters(self):
        got = instantiate_ghost(STACK.require("push").signature, {"n": 0, "y": 0})
        want = DepArrow(
            "x",
            pos_int(),
            UHat(
                last(ev_args("pushI", 2, [lit(0), lit(0)], ghost=True), 2),
                "_v",
                RBase(UNIT),
                concat(
                    [
                        ev_args("push", 1, [X]),
                        ev_args("pushI", 2, [lit(1), X], ghost=True),
                    ]
                ),
            ),
        )
        assert got == want

    def test_pop_after_one_push(self):
        got = instantiate_ghost(STACK.require("pop").signature, {"n": 1, "m": 0})
        want = UHat(
            intersect(
                [
                    last(ev_args("popI", 2, [lit(0)], ghost=True), 2),
                    last(ev_args("pushI", 2, [lit(1)], ghost=True), 2),
                    concat(
                        [
                            star(ANY),
                            ev_args("pushI", 2, [lit(1), X], ghost=True),
                            star(ANY),
                        ]
                    ),
                ]
            ),
            "x",
            RBase(INT),
            concat(
                [
                    ev_args("pop", 0, [], ret=X),
                    ev_args("popI", 2, [lit(1), X], ghost=True),
                ]
            ),
        )
        assert got == want

    def test_empty_binding_is_identity(self):
        sig = STACK.require("push").signature
        assert instantiate_ghost(sig, {}) is sig

    def test_out_of_order_binding_rejected(self):
        with pytest.raises(WellFormednessError):
            instantiate_ghost(STACK.require("pop").signature, {"m": 0})

    def test_unknown_binding_rejected(self):
        with pytest.raises(WellFormednessError):
            instantiate_ghost(STACK.require("push").signature, {"n": 0, "q": 1})


# --------------------------------------------------------------------------
# History specialization
# --------------------------------------------------------------------------


class TestSpecializeHistory:
    def test_accepts_subset_history(self):
        inst = instantiate_ghost(STACK.require("push").signature, {"n": 0, "y": 0})
        ctx = TypeContext().extend("x", pos_int())
        out = specialize_history(ctx, inst.body, init_history(), ALG)
        assert out.hist == init_history()
        assert (out.ret_name, out.ret, out.future) == (
            inst.body.ret_name,
            inst.body.ret,
            inst.body.future,
        )

    def test_rejects_non_subset(self):
        inst = instantiate_ghost(STACK.require("push").signature, {"n": 0, "y": 0})
        bad = concat([ev_args("popI", 2, [lit(0), lit(0)], ghost=True)])
        with pytest.raises(SpecializationRejected) as e:
            specialize_history(TypeContext(), inst.body, bad, ALG)
        assert e.value.premise == "inclusion"

    def test_rejects_empty_history(self):
        t = uhat(star(ANY), ev("pop", 0))
        with pytest.raises(SpecializationRejected) as e:
            specialize_history(TypeContext(), t, SEmpty(), ALG)
        assert e.value.premise == "non-emptiness"

    def test_rejects_infeasible_history(self):
        t = uhat(star(ANY), ev("pop", 0))
        never = ev("push", 1, PrimApp("<", (Var(RET_VAR, INT), Var(RET_VAR, INT))))
        with pytest.raises(SpecializationRejected) as e:
            specialize_history(TypeContext(), t, never, ALG)
        assert e.value.premise == "non-emptiness"

    def test_requires_plain_trace_type(self):
        with pytest.raises(SemanticError):
            specialize_history(TypeContext(), RBase(INT), star(ANY), ALG)


# --------------------------------------------------------------------------
# Realizability
# --------------------------------------------------------------------------


class TestRealizableEvent:
    def test_pop_unrealizable_with_no_history(self):
        ctx = TypeContext().extend("x", pos_int())
        assert not realizable_event(ctx, EPS, ev("pop", 0).ev, star(ANY), STACK, ALG)

    def test_pop_realizable_somewhere(self):
        ctx = TypeContext().extend("x", pos_int())
        assert realizable_event(ctx, star(ANY), ev("pop", 0).ev, star(ANY), STACK, ALG)

    def test_push_needs_initialized_counters(self):
        ctx = TypeContext().extend("x", pos_int())
        e = ev_args("push", 1, [X]).ev
        assert realizable_event(ctx, star(ANY), e, star(ANY), STACK, ALG)
        # without the initialization ghosts there is no pushI to witness
        assert not realizable_event(ctx, EPS, e, star(ANY), STACK, ALG)
        assert realizable_event(ctx, init_history(), e, star(ANY), STACK, ALG)

    def test_ghost_events_vacuous(self):
        e = ev_args("pushI", 2, [lit(1), X], ghost=True).ev
        ctx = TypeContext().extend("x", pos_int())
        assert realizable_event(ctx, EPS, e, star(ANY), STACK, ALG)

    def test_read_response_needs_matching_request(self):
        ctx = TypeContext()
        e = ev("readRsp", 1).ev
        assert not realizable_event(ctx, EPS, e, star(ANY), STORE, TALG)
        assert realizable_event(ctx, star(ANY), e, star(ANY), STORE, TALG)

    def test_unknown_operator(self):
        with pytest.raises(UnknownOp):
            realizable_event(
                TypeContext(), EPS, ev("mystery", 0).ev, star(ANY), STACK, ALG
            )


# --------------------------------------------------------------------------
# Operator tables
# --------------------------------------------------------------------------


class TestOperatorContext:
    def test_duplicate_rejected(self):
        d = OpDecl("push", "effect", STACK.require("push").signature)
        with pytest.raises(SemanticError):
            OperatorContext([d, d])

    def test_universe_shape(self):
        assert STACK.universe() == {
            "push": (False, 1),
            "pop": (False, 0),
            "pushI": (True, 2),
            "popI": (True, 2),
        }

    def test_pop_components(self):
        (comp,) = STACK.require("pop").components()
        assert comp.ghosts == (("n", INT), ("m", INT))
        assert comp.params == ()
        assert comp.ret_name == "x"
        assert comp.head_qual == PrimApp("==", (Var(RET_VAR, INT), X))

    def test_ghost_ops_have_two_components(self):
        assert len(STACK.require("pushI").components()) == 2
        assert len(STACK.require("popI").components()) == 2


# --------------------------------------------------------------------------
# The operator-application walkthrough
# --------------------------------------------------------------------------


class TestWalkthrough:
    def test_chain_produces_expected_types(self):
        t0 = time.monotonic()
        w = run_walkthrough(DOM)
        elapsed = time.monotonic() - t0

        # push: parameter picked up the instantiated {int | 0<nu}
        assert w.push_instantiated.param_type == pos_int()
        assert w.push_applied.hist == init_history()

        # ① the declared signature, ghost binders intact
        assert isinstance(w.pop_declared, GhostArrow)
        assert w.pop_declared == STACK.require("pop").signature

        # ② counters substituted and folded: n−m = 1, m+1 = 1
        expected2 = UHat(
            intersect(
                [
                    last(ev_args("popI", 2, [lit(0)], ghost=True), 2),
                    last(ev_args("pushI", 2, [lit(1)], ghost=True), 2),
                    concat(
                        [
                            star(ANY),
                            ev_args("pushI", 2, [lit(1), X], ghost=True),
                            star(ANY),
                        ]
                    ),
                ]
            ),
            "x",
            RBase(INT),
            concat(
                [
                    ev_args("pop", 0, [], ret=X),
                    ev_args("popI", 2, [lit(1), X], ghost=True),
                ]
            ),
        )
        assert w.pop_instantiated == expected2

        # ③ same history and future, return refined to the pushed value's type
        assert w.strengthening_ok
        assert w.pop_strengthened == UHat(
            expected2.hist, "x", pos_int(), expected2.future
        )

        # ④ history pinned to exactly the post-push trace
        expected_hist4 = concat(
            [
                ev_args("pushI", 2, [lit(0), lit(0)], ghost=True),
                ev_args("popI", 2, [lit(0), lit(0)], ghost=True),
                ev_args("push", 1, [X]),
                ev_args("pushI", 2, [lit(1), X], ghost=True),
            ]
        )
        assert w.pop_applied == UHat(
            expected_hist4, "x", pos_int(), expected2.future
        )

        assert elapsed < 5.0
