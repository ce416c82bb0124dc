import random

import pytest

from reference import (
    all_letters,
    all_traces,
    random_letter,
    random_monomial,
    random_sre,
    ref_includes,
    ref_is_empty,
    ref_lang,
    ref_member,
)
from tracegen.config import DEFAULT_CONFIG
from tracegen.errors import SortError, UnknownOp
from tracegen.logic import (
    INT,
    TRUE,
    UNIT_VALUE,
    Domain,
    Lit,
    PrimApp,
    Var,
    conj,
    eq,
)
from tracegen.sre import (
    ANY,
    EMPTY,
    EPS,
    SEv,
    SEvent,
    SreAlgebra,
    UEv,
    UStar,
    arg_var,
    concat,
    diff,
    has_boolean_ops,
    intersect,
    member,
    star,
    union,
    uos_to_regex,
)
from tracegen.trace import Event


def i(n):
    return Lit(n, INT)


def v(name):
    return Var(name, INT)


def lt(a, b):
    return PrimApp("<", (a, b))


def minus(a, b):
    return PrimApp("-", (a, b))


# A two-op alphabet: `a` takes one int and returns unit, `b` takes nothing
# and returns an int.
U2 = {"a": (False, 1), "b": (False, 0)}
U2_UNIT_RET = ("a",)
DOM = Domain(0, 3)
LETTERS = all_letters(
    U2, arg_values=(0, 1, 2, 3), ret_values={"a": (UNIT_VALUE,), "b": (0, 1, 2, 3)}
)
CFG = DEFAULT_CONFIG.with_overrides(max_branches=1024)


def make_alg(domain=DOM):
    return SreAlgebra(U2, domain, CFG)


def a_ev(qual=TRUE):
    return SEv(SEvent("a", False, (arg_var(0),), qual))


def b_ev(qual=TRUE):
    return SEv(SEvent("b", False, (), qual))


def A(x):
    return Event("a", (x,), UNIT_VALUE)


def B(r):
    return Event("b", (), r)


class TestMember:
    def test_eps_matches_empty_trace(self):
        assert member([], EPS, {})
        assert not member([B(0)], EPS, {})

    def test_event_denotation_with_valuation(self):
        # <put x y | x = k ∧ y = v> matches [put k0 5] under {k↦k0, v↦5}
        put = SEv(
            SEvent(
                "put",
                False,
                (arg_var(0), arg_var(1)),
                conj([eq(v(arg_var(0)), v("k")), eq(v(arg_var(1)), v("v"))]),
            )
        )
        alpha = [Event("put", (2, 5), UNIT_VALUE)]
        assert member(alpha, put, {"k": 2, "v": 5})
        assert not member(alpha, put, {"k": 2, "v": 4})

    def test_empty_language(self):
        assert not member([], EMPTY, {})
        assert not member([B(0)], EMPTY, {})

    def test_star_and_concat(self):
        r = concat([star(a_ev()), b_ev(eq(v("nu"), i(1)))])
        assert member([A(0), A(3), B(1)], r, {}, DOM)
        assert not member([A(0), B(2)], r, {}, DOM)
        assert member([B(1)], r, {}, DOM)

    def test_boolean_ops(self):
        both = intersect([concat([ANY, ANY]), concat([a_ev(), ANY])])
        assert member([A(1), B(0)], both, {}, DOM)
        assert not member([B(0), B(0)], both, {}, DOM)
        d = diff(ANY, a_ev(eq(v(arg_var(0)), i(1))))
        assert member([A(2)], d, {}, DOM)
        assert not member([A(1)], d, {}, DOM)

    def test_agrees_with_match_relation_oracle(self):
        rng = random.Random(101)
        for trial in range(500):
            regex = _general_regex(rng, depth=3)
            alpha = tuple(rng.choice(LETTERS) for _ in range(rng.randrange(6)))
            sigma = {"u": rng.choice([0, 1, 2, 3])}
            got = member(alpha, regex, sigma, DOM)
            want = ref_member(alpha, regex, sigma, DOM)
            assert got == want, (trial, alpha, regex)


def _general_regex(rng, depth):
    """Full-grammar random regex (arbitrary nesting of ∧, \\, *)."""
    if depth == 0 or rng.random() < 0.3:
        return rng.choice(
            [
                EPS,
                ANY,
                random_letter(rng, U2, (0, 1, 2, 3), ("u",), U2_UNIT_RET),
            ]
        )
    kind = rng.randrange(5)
    sub = lambda: _general_regex(rng, depth - 1)
    if kind == 0:
        return union([sub(), sub()])
    if kind == 1:
        return concat([sub(), sub()])
    if kind == 2:
        return star(sub())
    if kind == 3:
        return intersect([sub(), sub()])
    return diff(sub(), sub())


class TestNormalize:
    def test_identity_without_boolean_ops(self):
        alg = make_alg()
        r = concat([star(a_ev()), b_ev()])
        assert alg.normalize(r) == r

    def test_intersection_idempotent_on_traces(self):
        alg = make_alg()
        r = concat([star(union([a_ev(), b_ev()])), b_ev(eq(v("nu"), i(0)))])
        n = alg.normalize(intersect([r, r]))
        assert not has_boolean_ops(n)
        for alpha in all_traces(LETTERS[:6], 3):
            assert member(alpha, n, {}, DOM) == member(alpha, r, {}, DOM)

    def test_letter_level_difference(self):
        alg = make_alg()
        n = alg.normalize(diff(ANY, a_ev()))
        assert not has_boolean_ops(n)
        assert member([B(2)], n, {}, DOM)
        assert not member([A(2)], n, {}, DOM)

    def test_denotation_preserved_on_random_sres(self):
        rng = random.Random(202)
        alg = make_alg()
        for trial in range(120):
            r = random_sre(rng, U2, (0, 1, 2, 3), ("u",), U2_UNIT_RET)
            n = alg.normalize(r)
            assert not has_boolean_ops(n), (trial, r)
            for sigma in ({"u": 0}, {"u": 2}):
                want = ref_lang(r, sigma, LETTERS, 4, DOM)
                got = ref_lang(n, sigma, LETTERS, 4, DOM)
                assert got == want, (trial, r, n)

    def test_pop_history_ordering(self):
        """Intersecting two final-occurrence constraints with an occurrence
        constraint yields a union of orderings including: the popI ghost,
        then pushI (n-m), then pushI n, with popI excluded after the first
        and all ghosts excluded at the end."""
        stack_u = {
            "push": (False, 1),
            "pop": (False, 0),
            "pushI": (True, 2),
            "popI": (True, 2),
        }
        alg = SreAlgebra(stack_u, Domain(-8, 8), CFG)
        a0, a1 = v(arg_var(0)), v(arg_var(1))
        pop_i = SEv(SEvent("popI", True, (arg_var(0), arg_var(1)), eq(a0, v("m"))))
        push_n = SEv(SEvent("pushI", True, (arg_var(0), arg_var(1)), eq(a0, v("n"))))
        push_nm = SEv(
            SEvent(
                "pushI",
                True,
                (arg_var(0), arg_var(1)),
                conj([eq(a0, minus(v("n"), v("m"))), eq(a1, v("x"))]),
            )
        )
        original = intersect(
            [
                alg.last(pop_i),
                alg.last(push_n),
                concat([star(ANY), push_nm, star(ANY)]),
            ]
        )
        normalized = alg.normalize(original)
        assert not has_boolean_ops(normalized)

        def ghost(op, *args):
            return Event(op, args, UNIT_VALUE, ghost=True)

        sigma = {"m": 1, "n": 3, "x": 5}
        ordering = (ghost("popI", 1, 0), ghost("pushI", 2, 5), ghost("pushI", 3, 0))
        assert member(ordering, original, sigma)
        assert member(ordering, normalized, sigma)
        # the merged case: m = 0 unifies the two pushI events
        sigma0 = {"m": 0, "n": 3, "x": 5}
        merged = (ghost("popI", 0, 0), ghost("pushI", 3, 5))
        assert member(merged, original, sigma0)
        assert member(merged, normalized, sigma0)
        # another pushI after the final pushI violates Last(pushI n)
        bad = ordering + (ghost("pushI", 2, 5),)
        assert not member(bad, original, sigma)
        assert not member(bad, normalized, sigma)
        # spot-check agreement on random traces
        rng = random.Random(33)
        pool = [
            ghost("popI", 1, 0),
            ghost("popI", 0, 0),
            ghost("pushI", 2, 5),
            ghost("pushI", 3, 0),
            ghost("pushI", 3, 5),
            Event("push", (5,), UNIT_VALUE),
            Event("pop", (), 5),
        ]
        for _ in range(150):
            alpha = tuple(rng.choice(pool) for _ in range(rng.randrange(5)))
            s = rng.choice([sigma, sigma0])
            assert member(alpha, normalized, s) == ref_member(alpha, original, s)


class TestEmptiness:
    def test_empty_regex(self):
        alg = make_alg()
        assert alg.is_empty(EMPTY)

    def test_satisfiable_single_event(self):
        alg = make_alg()
        assert not alg.is_empty(a_ev())

    def test_contradictory_qualifier(self):
        # <popI i x | i > 0 ∧ i = 0> denotes no trace
        alg = SreAlgebra({"popI": (True, 2)}, Domain(-8, 8), CFG)
        a0 = v(arg_var(0))
        contradictory = SEv(
            SEvent(
                "popI",
                True,
                (arg_var(0), arg_var(1)),
                conj([lt(i(0), a0), eq(a0, i(0))]),
            )
        )
        assert alg.is_empty(contradictory)

    def test_context_sensitivity(self):
        alg = make_alg()
        r = a_ev(eq(v(arg_var(0)), v("u")))
        assert not alg.is_empty(r, [])
        assert alg.is_empty(r, [lt(v("u"), i(0))])  # u out of payload range

    def test_emptiness_implies_no_members(self):
        rng = random.Random(303)
        alg = make_alg()
        for _ in range(100):
            r = random_sre(rng, U2, (0, 1), ("u",), U2_UNIT_RET)
            if not alg.is_empty(r):
                continue
            for sigma in ({"u": 0}, {"u": 1}):
                for alpha in all_traces(LETTERS[:5], 2):
                    assert not member(alpha, r, sigma, DOM)

    def test_agrees_with_enumeration(self):
        rng = random.Random(404)
        alg = make_alg()
        checked = 0
        while checked < 200:
            r = random_sre(rng, U2, (0, 1), ("u",), U2_UNIT_RET)
            context = rng.choice([[], [eq(v("u"), i(1))], [lt(v("u"), i(1))]])
            got = alg.is_empty(r, context)
            want = ref_is_empty(r, context, {"u": INT}, LETTERS, 5, DOM)
            assert got == want, (checked, r, context)
            checked += 1


class TestInclusion:
    def test_subset_of_union(self):
        alg = make_alg()
        a = concat([a_ev(), b_ev()])
        b = star(ANY)
        assert alg.includes(a, union([a, b]))
        assert alg.includes(a, b)

    def test_nonempty_not_included_in_empty(self):
        alg = make_alg()
        assert not alg.includes(b_ev(), EMPTY)
        assert alg.includes(EMPTY, b_ev())

    def test_reflexive(self):
        rng = random.Random(55)
        alg = make_alg()
        for _ in range(30):
            r = random_sre(rng, U2, (0, 1), (), U2_UNIT_RET)
            assert alg.includes(r, r)

    def test_qualifier_strength(self):
        alg = make_alg()
        strong = a_ev(eq(v(arg_var(0)), i(1)))
        weak = a_ev(lt(v(arg_var(0)), i(3)))
        assert alg.includes(strong, weak)
        assert not alg.includes(weak, strong)

    def test_context_discharges_rigid_variables(self):
        alg = make_alg()
        lhs = a_ev(eq(v(arg_var(0)), v("u")))
        rhs = a_ev(eq(v(arg_var(0)), i(1)))
        assert not alg.includes(lhs, rhs, [])
        assert alg.includes(lhs, rhs, [eq(v("u"), i(1))])

    def test_agrees_with_enumeration(self):
        rng = random.Random(606)
        alg = make_alg()
        checked = 0
        while checked < 200:
            lhs = random_sre(rng, U2, (0, 1), ("u",), U2_UNIT_RET)
            rhs = random_sre(rng, U2, (0, 1), ("u",), U2_UNIT_RET)
            if rng.random() < 0.3:
                rhs = union([lhs, rhs])  # force some inclusions to hold
            context = rng.choice([[], [eq(v("u"), i(0))]])
            got = alg.includes(lhs, rhs, context)
            want = ref_includes(lhs, rhs, context, {"u": INT}, LETTERS, 5, DOM)
            assert got == want, (checked, lhs, rhs, context)
            checked += 1

    def test_inclusion_transports_membership(self):
        rng = random.Random(707)
        alg = make_alg()
        hits = 0
        for _ in range(120):
            lhs = random_monomial(rng, U2, (0, 1), (), U2_UNIT_RET)
            rhs = random_sre(rng, U2, (0, 1), (), U2_UNIT_RET)
            if not alg.includes(lhs, rhs):
                continue
            hits += 1
            for alpha in ref_lang(lhs, {}, LETTERS, 3, DOM):
                assert member(alpha, rhs, {}, DOM)
        assert hits >= 5  # the check must actually fire


class TestUosProduct:
    def test_meta_survives_intersection(self):
        alg = make_alg()
        left = ((UEv(alg.top_event("a"), meta="keep"),),)
        right = ((UStar(alg.all_events()),),)
        out = alg.intersect_uos(left, right)
        events = [atom for m in out for atom in m if isinstance(atom, UEv)]
        assert events and all(e.meta == "keep" for e in events)

    def test_product_matches_set_intersection(self):
        rng = random.Random(808)
        alg = make_alg()
        for _ in range(60):
            r1 = random_monomial(rng, U2, (0, 1, 2), (), U2_UNIT_RET)
            r2 = random_monomial(rng, U2, (0, 1, 2), (), U2_UNIT_RET)
            got = uos_to_regex(
                alg.intersect_uos(alg.to_uos(r1), alg.to_uos(r2))
            )
            want = ref_lang(r1, {}, LETTERS, 4, DOM) & ref_lang(
                r2, {}, LETTERS, 4, DOM
            )
            assert ref_lang(got, {}, LETTERS, 4, DOM) == want, (r1, r2)


class TestValidation:
    def test_unknown_op_rejected(self):
        alg = make_alg()
        with pytest.raises(UnknownOp):
            alg.normalize(intersect([SEv(SEvent("zap", False, (), TRUE)), ANY]))

    def test_arity_mismatch_rejected(self):
        alg = make_alg()
        bad = SEv(SEvent("a", False, (), TRUE))
        with pytest.raises(SortError):
            alg.is_empty(bad)

    def test_last_shape(self):
        alg = make_alg()
        r = alg.last(a_ev(eq(v(arg_var(0)), i(1))))
        assert member([B(0), A(1), B(2)], r, {}, DOM)
        assert not member([A(1), A(2)], r, {}, DOM)  # an `a` follows the last `a`
        assert member([A(2), A(1), B(0)], r, {}, DOM)
