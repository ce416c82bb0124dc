"""Abstract traces, regex-to-plan normalization, and the refinement loop.

An *abstract trace* (plan) is a monomial: a sequence of mandatory events
and Kleene blocks over fixed letter sets.  Each mandatory event carries a
resolved flag — unresolved events still owe the history/future obligations
of their operator's signature.  The synthesis driver repeatedly picks the
leftmost unresolved event of the oldest candidate and replaces the
candidate with every way of discharging that event's obligations, until a
budget is hit or enough fully-resolved candidates exist to derive
generator programs from.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .config import DEFAULT_CONFIG, Config
from .errors import SynthesisFailed, UnknownOp
from .logic import (
    INT,
    TRUE,
    Domain,
    Lit,
    PrimApp,
    Qualifier,
    Var,
    conj,
    conjuncts,
    free_vars,
    prim,
    sat,
    subst,
)
from .sre import (
    ANY,
    RET_VAR,
    Monomial,
    Regex,
    SAnd,
    SAny,
    SConcat,
    SDiff,
    SEmpty,
    SEps,
    SEv,
    SEvent,
    SStar,
    SUnion,
    SreAlgebra,
    UEv,
    UStar,
    concat,
    star,
    subst_regex,
    uos_to_regex,
)
from .typesys import (
    OperatorContext,
    RBase,
    TypeContext,
)

#: A plan is a monomial; UEv.meta is True for resolved events, None for
#: events whose signature obligations have not yet been discharged.
Plan = Monomial

RESOLVED = True


def plan_regex(plan: Plan) -> Regex:
    """The symbolic regex a plan denotes (resolved flags dropped)."""
    return uos_to_regex([plan])


def unresolved_index(plan: Plan) -> Optional[int]:
    """Position of the leftmost event still owing its obligations."""
    for i, seg in enumerate(plan):
        if isinstance(seg, UEv) and seg.meta is not RESOLVED:
            return i
    return None


@dataclass(frozen=True)
class Candidate:
    """A typing context paired with a plan it closes over."""

    gamma: TypeContext
    plan: Plan
    source: Regex  # the property this candidate refines
    depth: int = 0


# --------------------------------------------------------------------------
# Normalization: regex -> set of plans
# --------------------------------------------------------------------------


def norm_plan(
    alg: SreAlgebra,
    r: Regex,
    context: Sequence[Qualifier] = (),
    star_bound: int = DEFAULT_CONFIG.star_bound,
) -> Tuple[Plan, ...]:
    """All plans whose union denotes ``r``.

    Unions split into separate plans; a star whose body denotes a set of
    single events stays a Kleene block; any other star is expanded into
    0..star_bound concatenated copies (the one deliberate source of
    incompleteness).  Boolean operators go through the exact monomial
    product when possible, otherwise through the generic automaton route.
    """

    def dedup(plans: Sequence[Plan]) -> Tuple[Plan, ...]:
        out: List[Plan] = []
        for p in plans:
            if p not in out:
                out.append(p)
        return tuple(out)

    def cartesian(parts: Sequence[Tuple[Plan, ...]]) -> Tuple[Plan, ...]:
        acc: List[Plan] = [()]
        for part in parts:
            acc = [a + p for a in acc for p in part]
        return dedup(acc)

    def go(t: Regex) -> Tuple[Plan, ...]:
        if isinstance(t, SEmpty):
            return ()
        if isinstance(t, SEps):
            return ((),)
        if isinstance(t, SAny):
            return tuple((UEv(e),) for e in alg.all_events())
        if isinstance(t, SEv):
            e = alg.check_event(t.ev)
            if not alg._sat(e.qual, context):
                return ()
            return ((UEv(e),),)
        if isinstance(t, SUnion):
            out: List[Plan] = []
            for i in t.items:
                out.extend(go(i))
            return dedup(out)
        if isinstance(t, SConcat):
            return cartesian([go(i) for i in t.items])
        if isinstance(t, SStar):
            letters = alg._letter_set(t.body, context)
            if letters is not None:
                if not letters:
                    return ((),)
                return ((UStar(letters),),)
            body = go(t.body)
            out = [()]
            layer: List[Plan] = [()]
            for _ in range(star_bound):
                layer = [a + p for a in layer for p in body if p]
                out.extend(layer)
            return dedup(out)
        if isinstance(t, (SAnd, SDiff)):
            letters = alg._letter_set(t, context)
            if letters is not None:
                return tuple((UEv(e),) for e in letters)
            if isinstance(t, SAnd):
                parts = [go(i) for i in t.items]
                acc = parts[0]
                for p in parts[1:]:
                    acc = alg.intersect_uos(acc, p, context)
                return dedup(acc)
            # general difference: compile away the boolean ops first
            return go(alg.normalize(t, context))
        raise UnknownOp(f"unknown regex node {t!r}")

    return go(r)


# --------------------------------------------------------------------------
# Ambient-constraint hoisting
# --------------------------------------------------------------------------


def _linear(term: Qualifier) -> Optional[Tuple[Dict[str, int], int]]:
    """term as (coefficients, constant) over +/-, or None if non-linear."""
    if isinstance(term, Lit) and isinstance(term.value, int):
        return {}, term.value
    if isinstance(term, Var):
        return {term.name: 1}, 0
    if isinstance(term, PrimApp) and term.op in ("+", "-") and len(term.args) == 2:
        a = _linear(term.args[0])
        b = _linear(term.args[1])
        if a is None or b is None:
            return None
        sign = 1 if term.op == "+" else -1
        coeffs = dict(a[0])
        for n, c in b[0].items():
            coeffs[n] = coeffs.get(n, 0) + sign * c
        return {n: c for n, c in coeffs.items() if c}, a[1] + sign * b[1]
    return None


def _rebuild(coeffs: Dict[str, int], const: int, sorts: Dict[str, str]) -> Qualifier:
    out: Optional[Qualifier] = None
    for n in sorted(coeffs):
        c = coeffs[n]
        v = Var(n, sorts.get(n, INT))
        for _ in range(abs(c)):
            if out is None:
                out = v if c > 0 else prim("-", (Lit(0, INT), v))
            else:
                out = prim("+" if c > 0 else "-", (out, v))
    if out is None:
        return Lit(const, INT)
    if const:
        out = prim("+", (out, Lit(const, INT)))
    return out


def _payload_equalities(plan: Plan) -> List[Qualifier]:
    """Cross-constraints t1 == t2 implied by payload links p==t1 ∧ p==t2."""
    out: List[Qualifier] = []
    for seg in plan:
        if not isinstance(seg, UEv):
            continue
        e = seg.ev
        payload = set(e.arg_vars) | {RET_VAR}
        by_var: Dict[str, List[Qualifier]] = {}
        for c in conjuncts(e.qual):
            if not (isinstance(c, PrimApp) and c.op == "==" and len(c.args) == 2):
                continue
            for p_side, t_side in ((c.args[0], c.args[1]), (c.args[1], c.args[0])):
                if (
                    isinstance(p_side, Var)
                    and p_side.name in payload
                    and not (set(free_vars(t_side)) & payload)
                ):
                    by_var.setdefault(p_side.name, []).append(t_side)
                    break
        for terms in by_var.values():
            for i in range(len(terms)):
                for j in range(i + 1, len(terms)):
                    if terms[i] != terms[j]:
                        eq = prim("==", (terms[i], terms[j]))
                        if eq != TRUE and eq not in out:
                            out.append(eq)
    return out


def _hoist(
    gamma: TypeContext, plan: Plan, domain: Domain
) -> Optional[Tuple[TypeContext, Plan]]:
    """Push payload-implied ambient constraints into the context.

    Equalities between two context variables merge the bindings (the later
    one is renamed away); other equalities strengthen the qualifier of the
    latest-bound variable they mention.  Returns None when a derived
    constraint is ground-false, i.e. the plan is infeasible.
    """
    bindings: List[Tuple[str, RBase]] = list(gamma.bindings)
    handled: Set[str] = set()

    def names() -> List[str]:
        return [n for n, _ in bindings]

    def substitute(old: str, new_var: Var) -> None:
        nonlocal plan
        plan = tuple(
            UEv(
                SEvent(
                    s.ev.op,
                    s.ev.ghost,
                    s.ev.arg_vars,
                    subst(s.ev.qual, {old: new_var}),
                ),
                s.meta,
            )
            if isinstance(s, UEv)
            else s
            for s in plan
        )
        for k, (n, t) in enumerate(bindings):
            bindings[k] = (n, RBase(t.sort, subst(t.qual, {old: new_var})))

    for _ in range(len(plan) * 4 + 8):
        progress = False
        for eq in _payload_equalities(plan):
            key = repr(eq)
            if key in handled:
                continue
            handled.add(key)
            if eq == TRUE:
                continue
            if isinstance(eq, Lit):  # folded to a ground boolean
                if eq.value is False:
                    return None
                continue
            lhs, rhs = eq.args
            order = names()
            if (
                isinstance(lhs, Var)
                and isinstance(rhs, Var)
                and lhs.name in order
                and rhs.name in order
            ):
                a, b = lhs, rhs
                if order.index(a.name) > order.index(b.name):
                    a, b = b, a  # a is the earlier binding; b goes away
                ka, kb = order.index(a.name), order.index(b.name)
                merged = RBase(
                    bindings[ka][1].sort,
                    conj([bindings[ka][1].qual, bindings[kb][1].qual]),
                )
                bindings[ka] = (a.name, merged)
                del bindings[kb]
                substitute(b.name, Var(a.name, merged.sort))
                progress = True
                break
            involved = [n for n in order if n in free_vars(eq)]
            if not involved:
                if sat(eq, (), domain) is None:
                    return None
                continue
            target = involved[-1]  # latest-bound variable
            k = order.index(target)
            tsort = bindings[k][1].sort
            # orient as nu == rest when the equality is linear with a
            # unit coefficient on the target, else substitute nu in place
            lin_l, lin_r = _linear(lhs), _linear(rhs)
            new_conj: Optional[Qualifier] = None
            if lin_l is not None and lin_r is not None:
                coeffs = dict(lin_l[0])
                for n2, c2 in lin_r[0].items():
                    coeffs[n2] = coeffs.get(n2, 0) - c2
                coeffs = {n2: c2 for n2, c2 in coeffs.items() if c2}
                const = lin_l[1] - lin_r[1]
                c = coeffs.get(target)
                if c in (1, -1):
                    rest = {n2: -c2 * c for n2, c2 in coeffs.items() if n2 != target}
                    sorts = {n: t.sort for n, t in bindings}
                    new_conj = prim(
                        "==",
                        (Var(RET_VAR, tsort), _rebuild(rest, -const * c, sorts)),
                    )
            if new_conj is None:
                new_conj = subst(eq, {target: Var(RET_VAR, tsort)})
            old = bindings[k][1]
            if new_conj not in conjuncts(old.qual):
                bindings[k] = (target, RBase(old.sort, conj([old.qual, new_conj])))
                progress = True
        if not progress:
            break

    return TypeContext(tuple(_reorder(bindings))), plan


def _reorder(
    bindings: Sequence[Tuple[str, RBase]]
) -> List[Tuple[str, RBase]]:
    """Stable topological order so each qualifier sees only earlier names."""
    local = {n for n, _ in bindings}
    placed: List[Tuple[str, RBase]] = []
    done: Set[str] = set()
    remaining = list(bindings)
    while remaining:
        for k, (n, t) in enumerate(remaining):
            deps = (set(free_vars(t.qual)) - {RET_VAR}) & local
            if deps <= done:
                placed.append((n, t))
                done.add(n)
                del remaining[k]
                break
        else:  # cycle: keep the residue in original order
            placed.extend(remaining)
            break
    return placed


# --------------------------------------------------------------------------
# Refinement (one event)
# --------------------------------------------------------------------------


def _fresh_names(bases: Sequence[str], taken: Set[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for base in bases:
        name = base
        k = 0
        while name in taken:
            k += 1
            name = f"{base}{k}"
        taken.add(name)
        out[base] = name
    return out


def refine(
    delta: OperatorContext,
    gamma: TypeContext,
    plan_h: Plan,
    target: UEv,
    plan_f: Plan,
    alg: SreAlgebra,
    config: Config = DEFAULT_CONFIG,
    source: Optional[Regex] = None,
    depth: int = 0,
) -> Tuple[Candidate, ...]:
    """Discharge one unresolved event against its operator signature.

    Per intersection component: bind fresh ghost/parameter/return
    variables, strengthen the event qualifier with the signature's head
    qualifier, intersect the surrounding plan with the signature's history
    and future, renormalize, hoist implied ambient constraints, and keep
    the non-empty results with the target marked resolved.
    """
    domain = alg.domain
    ev = target.ev.canonical()
    decl = delta.require(ev.op)
    src = source if source is not None else plan_regex(plan_h + (target,) + plan_f)
    out: List[Candidate] = []
    for comp in decl.components():
        taken = set(gamma.names())
        order = (
            [n for n, _ in comp.ghosts]
            + [n for n, _ in comp.params]
            + [comp.ret_name]
        )
        ren = _fresh_names(order, taken)
        sorts = dict(comp.ghosts)
        sorts.update({n: t.sort for n, t in comp.params})
        sorts[comp.ret_name] = comp.ret.sort
        mapping = {old: Var(new, sorts[old]) for old, new in ren.items()}

        gamma2 = gamma
        for gname, gsort in comp.ghosts:
            gamma2 = gamma2.extend(ren[gname], RBase(gsort, TRUE))
        for pname, ptype in comp.params:
            gamma2 = gamma2.extend(
                ren[pname], RBase(ptype.sort, subst(ptype.qual, mapping))
            )
        gamma2 = gamma2.extend(
            ren[comp.ret_name], RBase(comp.ret.sort, subst(comp.ret.qual, mapping))
        )
        quals2 = gamma2.quals()

        head = subst(comp.head_qual, mapping)
        merged_qual = conj([ev.qual, head])
        if sat(merged_qual, quals2, domain) is None:
            continue
        resolved = UEv(
            SEvent(ev.op, ev.ghost, ev.arg_vars, merged_qual), RESOLVED
        )

        hist = subst_regex(comp.hist, mapping)
        fut = concat([subst_regex(comp.future_rest, mapping), star(ANY)])
        h_merged: List[Plan] = []
        for hp in norm_plan(alg, hist, quals2, config.star_bound):
            for m in alg.intersect_monomials(plan_h, hp, quals2):
                if m not in h_merged:
                    h_merged.append(m)
        f_merged: List[Plan] = []
        for fp in norm_plan(alg, fut, quals2, config.star_bound):
            for m in alg.intersect_monomials(plan_f, fp, quals2):
                if m not in f_merged:
                    f_merged.append(m)

        for h in h_merged:
            for f in f_merged:
                hoisted = _hoist(gamma2, h + (resolved,) + f, domain)
                if hoisted is None:
                    continue
                gamma3, plan3 = hoisted
                if alg.is_empty(plan_regex(plan3), gamma3.quals()):
                    continue
                cand = Candidate(gamma3, plan3, src, depth + 1)
                if cand not in out:
                    out.append(cand)
    return tuple(out)


# --------------------------------------------------------------------------
# Top-level driver
# --------------------------------------------------------------------------


def synthesize(
    delta: OperatorContext,
    variables: Sequence[Tuple[str, str]],
    prop: Regex,
    config: Config = DEFAULT_CONFIG,
):
    """Worklist refinement over the property, then program derivation.

    Returns up to ``config.max_candidates`` generator programs.  Raises
    SynthesisFailed when the budget runs out with nothing fully resolved.
    """
    from .derive import term_derive  # local import: derive re-enters refine

    domain = Domain(config.domain_lo, config.domain_hi)
    alg = delta.algebra(domain, config)
    gamma0 = TypeContext(()).extend_all(
        (name, RBase(sort, TRUE)) for name, sort in variables
    )
    plans = norm_plan(alg, prop, gamma0.quals(), config.star_bound)
    work = deque(Candidate(gamma0, p, prop, 0) for p in plans)
    finished: List[Candidate] = []
    steps = 0
    deadline = time.monotonic() + config.timeout_s
    last_diag = "property normalizes to no abstract traces" if not work else ""

    while work and len(finished) < config.max_candidates:
        if steps >= config.max_refine_steps:
            last_diag = last_diag or f"refine budget {config.max_refine_steps} hit"
            break
        if time.monotonic() > deadline:
            last_diag = last_diag or f"timeout {config.timeout_s}s hit"
            break
        cand = work.popleft()
        i = unresolved_index(cand.plan)
        if i is None:
            if cand not in finished:
                finished.append(cand)
            continue
        steps += 1
        new = refine(
            delta,
            cand.gamma,
            cand.plan[:i],
            cand.plan[i],
            cand.plan[i + 1 :],
            alg,
            config,
            source=cand.source,
            depth=cand.depth,
        )
        if not new:
            seg = cand.plan[i]
            last_diag = (
                f"no satisfiable refinement for <{seg.ev.op}> at depth {cand.depth}"
            )
        work.extend(new)

    if not finished:
        raise SynthesisFailed(last_diag or "no resolvable candidates")
    programs = []
    for cand in finished[: config.max_candidates]:
        programs.append(term_derive([cand], delta, alg, config))
    return programs
