"""From resolved abstract traces to runnable generator programs.

Straightline derivation turns the typing context into leading ``assume``
bindings and each plan event into either an ``assume`` (ghost events) or
an ``assume``/effect-call/``assert`` triple (concrete events); Kleene
blocks are dropped.  Recursive derivation matches a plan against the
four-hole nondeterministic-loop template, validates the match by
re-justifying every event of each bounded unrolling, and instantiates the
template with straightline code for the holes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .config import DEFAULT_CONFIG, Config
from .errors import SynthesisFailed
from .dsl import (
    App,
    Assert,
    Assume,
    AssumeBind,
    Choice,
    EffApp,
    Expr,
    Fix,
    Let,
    UNIT_CONST,
    VarE,
    typecheck_basic,
)
from .logic import (
    TRUE,
    UNIT,
    PrimApp,
    Var,
    arrow,
    conj,
    conjuncts,
    exists,
    free_vars,
    subst,
)
from .sre import (
    EPS,
    RET_VAR,
    Regex,
    SEv,
    SEvent,
    SreAlgebra,
    UEv,
    UStar,
    _sorted_events,
    concat,
    union,
)
from .synth import Candidate, Plan, plan_regex
from .typesys import (
    OperatorContext,
    RBase,
    TypeContext,
    UHat,
    event_supported,
)


@dataclass(frozen=True)
class GeneratorProgram:
    """A derived generator with its claimed trace type and provenance."""

    expr: Expr
    claimed: UHat
    candidates: Tuple[Candidate, ...]


class _Namer:
    """Deterministic fresh names: base, base_1, base_2, ..."""

    def __init__(self, taken: Sequence[str] = ()):
        self.taken: Set[str] = set(taken)

    def fresh(self, base: str) -> str:
        base = base.lstrip("_") or "v"
        name = base
        k = 0
        while name in self.taken:
            k += 1
            name = f"{base}_{k}"
        self.taken.add(name)
        return name


def _wrap_assumes(bindings: Sequence[Tuple[str, RBase]], body: Expr) -> Expr:
    out = body
    for name, t in reversed(list(bindings)):
        phi = subst(t.qual, {RET_VAR: Var(name, t.sort)})
        out = AssumeBind(((name, t.sort),), phi, out)
    return out


def _bind_jointly(
    ctx_b: Sequence[Tuple[str, RBase]],
    binders: Tuple[Tuple[str, Sort], ...],
    phi: Qualifier,
    body: Expr,
) -> Expr:
    """Draw context variables and event arguments from one joint assume.

    Context qualifiers often constrain a variable only indirectly (a
    top-typed variable pinned by the event's own condition), so sampling
    each binder in isolation rejects almost every draw.  Conjoining all
    the constraints under a single binder tuple lets the witness sampler
    solve them together.
    """
    all_binders = tuple(
        (name, t.sort) for name, t in ctx_b
    ) + binders
    quals = [
        subst(t.qual, {RET_VAR: Var(name, t.sort)}) for name, t in ctx_b
    ]
    phi_all = conj(quals + [phi])
    if all_binders:
        return AssumeBind(all_binders, phi_all, body)
    if phi_all != TRUE:
        return Let("_", Assume(phi_all), body)
    return body


def _take_pending(
    pending: "Dict[str, RBase]", names: Set[str]
) -> List[Tuple[str, RBase]]:
    """Remove the named context bindings from ``pending``, together with
    everything their qualifiers transitively mention, in context order."""
    taken: Set[str] = set()
    frontier = set(names) & set(pending)
    while frontier:
        taken |= frontier
        nxt: Set[str] = set()
        for n in frontier:
            nxt |= set(free_vars(pending[n].qual)) & set(pending)
        frontier = nxt - taken
    out = [(n, t) for n, t in pending.items() if n in taken]
    for n, _ in out:
        del pending[n]
    return out


def _definitional(
    phi, pending: "Dict[str, RBase]"
) -> Tuple[List[str], List]:
    """Split a postcondition into return-defined ghosts and real checks.

    A conjunct ``nu == g`` (either orientation) *defines* a still-pending,
    otherwise-unconstrained context variable ``g``: the observed return
    value is what ``g`` stands for, so the program binds rather than
    checks it.  Only variables whose every occurrence in ``phi`` has that
    shape qualify.
    """
    parts = list(conjuncts(phi))
    cand: Dict[str, List[int]] = {}
    for k, c in enumerate(parts):
        if isinstance(c, PrimApp) and c.op == "==" and len(c.args) == 2:
            a, b = c.args
            for lhs, rhs in ((a, b), (b, a)):
                if (
                    isinstance(lhs, Var)
                    and lhs.name == RET_VAR
                    and isinstance(rhs, Var)
                    and rhs.name in pending
                    and pending[rhs.name].qual == TRUE
                ):
                    cand.setdefault(rhs.name, []).append(k)
                    break
    defined: List[str] = []
    def_idx: Set[int] = set()
    for g, idxs in cand.items():
        others = [
            k
            for k, c in enumerate(parts)
            if k not in idxs and g in free_vars(c)
        ]
        if not others:
            defined.append(g)
            def_idx.update(idxs)
    rest = [c for k, c in enumerate(parts) if k not in def_idx]
    return defined, rest


def _derive_segments(
    segs: Plan,
    tail,
    delta: OperatorContext,
    namer: _Namer,
    pending: "Dict[str, RBase]",
) -> Expr:
    # ``tail`` may be a thunk so continuations draw from ``pending`` only
    # after every earlier segment has claimed its bindings.
    if not segs:
        return tail() if callable(tail) else tail
    head, rest = segs[0], segs[1:]
    if isinstance(head, UStar):
        return _derive_segments(rest, tail, delta, namer, pending)
    e = head.ev.canonical()
    decl = delta.require(e.op)
    arg_sorts = [s for _, s in decl.params]
    fresh = [namer.fresh(v) for v in e.arg_vars]
    argmap = {
        v: Var(fresh[k], arg_sorts[k]) for k, v in enumerate(e.arg_vars)
    }
    binders = tuple((fresh[k], arg_sorts[k]) for k in range(len(fresh)))
    phi = subst(e.qual, argmap)
    if e.ghost:
        ctx_b = _take_pending(pending, set(free_vars(phi)))
        body = _derive_segments(rest, tail, delta, namer, pending)
        return _bind_jointly(ctx_b, binders, phi, body)
    ret_sort = decl.ret_sort
    defined, checks = _definitional(phi, pending)
    for g in defined:
        del pending[g]
    phi_rest = conj(checks) if checks else TRUE
    ctx_b = _take_pending(pending, set(free_vars(phi_rest)))
    if RET_VAR in free_vars(phi_rest):
        phi_pre = exists([(RET_VAR, ret_sort)], phi_rest)
    else:
        phi_pre = phi_rest
    y = namer.fresh("z" if ret_sort != UNIT else "_")
    phi_post = subst(phi_rest, {RET_VAR: Var(y, ret_sort)})
    body = _derive_segments(rest, tail, delta, namer, pending)
    for g in reversed(defined):
        body = Let(g, VarE(y), body)
    if phi_post != TRUE:
        body = Let("_", Assert(phi_post), body)
    call = Let(y, EffApp(e.op, tuple(VarE(n) for n, _ in binders)), body)
    return _bind_jointly(ctx_b, binders, phi_pre, call)


def derive_trace(
    gamma: TypeContext,
    plan: Plan,
    delta: OperatorContext,
    namer: Optional[_Namer] = None,
) -> Expr:
    """Straightline program for the plan's events.

    Context bindings are introduced on demand, right before the first
    event that mentions them; a binding whose value an event's return
    uniquely determines is bound to the observed return instead of being
    guessed up front (and then spuriously asserted).  Bindings no event
    mentions are not emitted at all.
    """
    namer = namer or _Namer(gamma.names())
    pending: Dict[str, RBase] = dict(gamma.bindings)
    return _derive_segments(plan, UNIT_CONST, delta, namer, pending)


# --------------------------------------------------------------------------
# Recursion template
# --------------------------------------------------------------------------


def _erase_plan(plan: Plan) -> Plan:
    out = []
    for seg in plan:
        if isinstance(seg, UEv):
            e = seg.ev
            out.append(UEv(SEvent(e.op, e.ghost, e.arg_vars, TRUE), seg.meta))
        else:
            out.append(
                UStar(
                    _sorted_events(
                        SEvent(e.op, e.ghost, e.arg_vars, TRUE) for e in seg.evs
                    )
                )
            )
    return tuple(out)


def _ambient_vars(segs: Plan) -> Set[str]:
    out: Set[str] = set()
    for seg in segs:
        evs = [seg.ev] if isinstance(seg, UEv) else list(seg.evs)
        for e in evs:
            payload = set(e.arg_vars) | {RET_VAR}
            out |= set(free_vars(e.qual)) - payload
    return out


def validate_matching(
    gamma: TypeContext,
    parts: Tuple[Plan, Plan, Plan, Plan],
    delta: OperatorContext,
    alg: SreAlgebra,
    unroll_bound: int = DEFAULT_CONFIG.unroll_bound,
) -> bool:
    """Does a hole assignment survive bounded unrolling?

    ``parts`` are the four template holes (e3, e1, e2, e4) of
    ``let f = fix f.λ(). () ⊕ (e1; f (); e2) in e3; f (); e4``; the i-fold
    unrolling produces the trace e3 · e1^i · e2^i · e4.  Event qualifiers
    are erased (op names, ghost flags, and Kleene alphabets are kept) and
    every event of every unrolling up to the bound — ghost events included
    — must re-justify its signature in place.  A bound of zero accepts
    every matching (degenerate but documented).
    """
    if unroll_bound <= 0:
        return True
    e3, e1, e2, e4 = (_erase_plan(p) for p in parts)
    gamma_e = TypeContext(
        tuple((n, RBase(t.sort, TRUE)) for n, t in gamma.bindings)
    )
    for i in range(unroll_bound + 1):
        plan_i = e3 + e1 * i + e2 * i + e4
        for idx, seg in enumerate(plan_i):
            if not isinstance(seg, UEv):
                continue
            ok = event_supported(
                gamma_e,
                plan_regex(plan_i[:idx]),
                seg.ev,
                plan_regex(plan_i[idx + 1 :]),
                delta,
                alg,
            )
            if not ok:
                return False
    return True


def _split_bindings(
    gamma: TypeContext, inner_segs: Plan, outer_segs: Plan
) -> Tuple[List[Tuple[str, RBase]], List[Tuple[str, RBase]]]:
    """Which context variables can be re-sampled on every loop iteration?

    Bindings nothing mentions (even transitively) are discarded first —
    derivation never emits them, so they must not anchor anything.  A
    remaining binding moves inside the recursive body when it is
    mentioned only by the loop holes and by no binding that stays
    outside.
    """
    used_in = _ambient_vars(inner_segs)
    used_out = _ambient_vars(outer_segs)
    used = set(used_in) | set(used_out)
    changed = True
    while changed:
        changed = False
        for n, t in gamma.bindings:
            if n in used:
                new = set(free_vars(t.qual)) - used
                if new:
                    used |= new
                    changed = True
    bindings = [(n, t) for n, t in gamma.bindings if n in used]
    inside = {n for n, _ in bindings if n in used_in and n not in used_out}
    changed = True
    while changed:
        changed = False
        for n, t in bindings:
            if n not in inside:
                hit = inside & set(free_vars(t.qual))
                if hit:
                    inside -= hit
                    changed = True
    inner = [(n, t) for n, t in bindings if n in inside]
    outer = [(n, t) for n, t in bindings if n not in inside]
    return inner, outer


def syn_recursion(
    gamma: TypeContext,
    plan: Plan,
    delta: OperatorContext,
    alg: SreAlgebra,
    config: Config = DEFAULT_CONFIG,
) -> Optional[Expr]:
    """First validated instantiation of the nondeterministic-loop template.

    Kleene blocks are tried as the recursion point from right to left;
    the matching places everything before the block in the loop head e1
    and everything after it in the loop tail e2 (e3 = e4 = ε), so each
    recursion level runs e1, recurses, then runs e2, and every binding
    the loop mentions is re-assumed per level.  Matchings whose head or
    tail performs no concrete operation are skipped — they either loop
    without testing anything or repeat a one-shot suffix; returns None
    when no matching survives unrolling validation.
    """
    for r in range(len(plan) - 1, -1, -1):
        if not isinstance(plan[r], UStar):
            continue
        parts = ((), plan[:r], plan[r + 1 :], ())
        _, e1, e2, _ = parts
        if not any(isinstance(s, UEv) and not s.ev.ghost for s in e1):
            continue
        if not any(isinstance(s, UEv) and not s.ev.ghost for s in e2):
            continue
        if validate_matching(gamma, parts, delta, alg, config.unroll_bound):
            return _instantiate(gamma, parts, delta)
    return None


def _instantiate(
    gamma: TypeContext, parts: Tuple[Plan, Plan, Plan, Plan], delta: OperatorContext
) -> Expr:
    e3, e1, e2, e4 = parts
    inner_b, outer_b = _split_bindings(gamma, e1 + e2, e3 + e4)
    namer = _Namer(gamma.names())
    f = namer.fresh("f")
    u = namer.fresh("u")
    # Loop-local bindings are re-assumed on every iteration; anything the
    # loop mentions from the enclosing scope must be bound before the
    # function definition, so those bindings cannot be deferred.
    inner_pending: Dict[str, RBase] = dict(inner_b)
    pending: Dict[str, RBase] = dict(outer_b)
    shared = _take_pending(
        pending, (_ambient_vars(e1 + e2) - set(inner_pending)) & set(pending)
    )
    rec_call = App(VarE(f), UNIT_CONST)
    loop_core = _derive_segments(
        e1,
        lambda: Let(
            "_",
            rec_call,
            _derive_segments(e2, UNIT_CONST, delta, namer, inner_pending),
        ),
        delta,
        namer,
        inner_pending,
    )
    loop_body = Choice(UNIT_CONST, loop_core)
    fixdef = Fix(f, arrow(UNIT, UNIT), u, UNIT, loop_body)
    main = _derive_segments(
        e3,
        lambda: Let(
            "_",
            App(VarE(f), UNIT_CONST),
            _derive_segments(e4, UNIT_CONST, delta, namer, pending),
        ),
        delta,
        namer,
        pending,
    )
    return _wrap_assumes(shared, Let(f, fixdef, main))


# --------------------------------------------------------------------------
# Program assembly
# --------------------------------------------------------------------------


def _claimed_future(plan: Plan) -> Regex:
    """Kleene blocks dropped, ghost events kept: what straightline runs emit."""
    return concat(SEv(s.ev) for s in plan if isinstance(s, UEv))


def term_derive(
    candidates: Sequence[Candidate],
    delta: OperatorContext,
    alg: SreAlgebra,
    config: Config = DEFAULT_CONFIG,
) -> GeneratorProgram:
    """Straightline and (when a template matches) recursive variants of
    every candidate, combined into one nondeterministic-choice program."""
    if not candidates:
        raise SynthesisFailed("no resolved candidates to derive from")
    variants: List[Expr] = []
    futures: List[Regex] = []
    for cand in candidates:
        straight = derive_trace(cand.gamma, cand.plan, delta)
        if straight not in variants:
            variants.append(straight)
        if any(isinstance(s, UStar) for s in cand.plan):
            rec = syn_recursion(cand.gamma, cand.plan, delta, alg, config)
            if rec is not None and rec not in variants:
                variants.append(rec)
        fut = _claimed_future(cand.plan)
        if fut not in futures:
            futures.append(fut)
    expr = variants[-1]
    for v in reversed(variants[:-1]):
        expr = Choice(v, expr)
    typecheck_basic(expr, delta)  # emitted programs are always well-sorted
    claimed = UHat(EPS, "_v", RBase(UNIT), union(futures))
    return GeneratorProgram(expr, claimed, tuple(candidates))
