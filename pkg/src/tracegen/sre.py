"""Symbolic regular expressions over qualified events.

Atoms are symbolic events ``<op x̄ | φ>``: an operation name plus a
qualifier over the event's payload variables (its arguments, bound by
``argVars``, and its return value, bound by the distinguished ``nu``) and
any ambient free variables shared across the regex.

Three engines live here:

* ``member`` — the reference denotation (recursive matching with memoization),
  supporting the full grammar including ∧ and \\.
* a *union-of-sequences* (UoS) algebra — intersections and the difference
  patterns the pipeline actually produces are compiled exactly, without any
  automaton detour, by a product over monomials (sequences of events and
  starred event-alternation blocks).  The product graph over position pairs
  is acyclic except for self-loops, so the result is again a union of
  sequences — the shape plan normalization consumes.
* a minterm automaton engine — determinization, complement, product and a
  feasibility-pruned emptiness search, used for context-sensitive inclusion
  and as a fallback for boolean combinations that do not fit the UoS shape.

Free variables are *rigid*: one valuation closes the whole regex, so path
feasibility conjoins per-event qualifiers into a single sat query.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product as iproduct
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .config import DEFAULT_CONFIG, Config
from .errors import CapacityExceeded, SortError, UnknownOp
from .logic import (
    DEFAULT_DOMAIN,
    INT,
    TRUE,
    Domain,
    Lit,
    Qualifier,
    Valuation,
    conj,
    conjuncts,
    eval_qualifier,
    free_vars,
    neg,
    rename,
    sat,
    subst,
)
from .logic import Var
from .trace import Event, Trace

# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

#: Canonical payload variable for argument position i.
def arg_var(i: int) -> str:
    return f"_a{i}"


RET_VAR = "nu"


@dataclass(frozen=True)
class SEvent:
    op: str
    ghost: bool
    arg_vars: Tuple[str, ...]
    qual: Qualifier

    def canonical(self) -> "SEvent":
        mapping = {v: arg_var(i) for i, v in enumerate(self.arg_vars) if v != arg_var(i)}
        if not mapping:
            return self
        return SEvent(
            self.op,
            self.ghost,
            tuple(arg_var(i) for i in range(len(self.arg_vars))),
            rename(self.qual, mapping),
        )

    def __str__(self) -> str:
        mark = "~" if self.ghost else ""
        head = " ".join([mark + self.op, *self.arg_vars])
        return f"<{head} | {self.qual}>"


@dataclass(frozen=True)
class SEmpty:
    pass


@dataclass(frozen=True)
class SEps:
    pass


@dataclass(frozen=True)
class SAny:
    pass


@dataclass(frozen=True)
class SEv:
    ev: SEvent


@dataclass(frozen=True)
class SUnion:
    items: Tuple["Regex", ...]


@dataclass(frozen=True)
class SConcat:
    items: Tuple["Regex", ...]


@dataclass(frozen=True)
class SStar:
    body: "Regex"


@dataclass(frozen=True)
class SAnd:
    items: Tuple["Regex", ...]


@dataclass(frozen=True)
class SDiff:
    lhs: "Regex"
    rhs: "Regex"


Regex = Union[SEmpty, SEps, SAny, SEv, SUnion, SConcat, SStar, SAnd, SDiff]

EMPTY = SEmpty()
EPS = SEps()
ANY = SAny()


def ev(op: str, qual: Qualifier = TRUE, arity: int = 0, ghost: bool = False) -> SEv:
    return SEv(SEvent(op, ghost, tuple(arg_var(i) for i in range(arity)), qual))


def union(items: Iterable[Regex]) -> Regex:
    flat: List[Regex] = []
    for r in items:
        if isinstance(r, SUnion):
            flat.extend(r.items)
        elif isinstance(r, SEmpty):
            continue
        else:
            flat.append(r)
    seen: List[Regex] = []
    for r in flat:
        if r not in seen:
            seen.append(r)
    if not seen:
        return EMPTY
    if len(seen) == 1:
        return seen[0]
    return SUnion(tuple(seen))


def concat(items: Iterable[Regex]) -> Regex:
    flat: List[Regex] = []
    for r in items:
        if isinstance(r, SConcat):
            flat.extend(r.items)
        elif isinstance(r, SEps):
            continue
        elif isinstance(r, SEmpty):
            return EMPTY
        else:
            flat.append(r)
    if not flat:
        return EPS
    if len(flat) == 1:
        return flat[0]
    return SConcat(tuple(flat))


def star(body: Regex) -> Regex:
    if isinstance(body, (SEmpty, SEps)):
        return EPS
    if isinstance(body, SStar):
        return body
    return SStar(body)


def intersect(items: Iterable[Regex]) -> Regex:
    flat: List[Regex] = []
    for r in items:
        if isinstance(r, SAnd):
            flat.extend(r.items)
        elif isinstance(r, SEmpty):
            return EMPTY
        else:
            flat.append(r)
    seen: List[Regex] = []
    for r in flat:
        if r not in seen:
            seen.append(r)
    if not seen:
        raise ValueError("empty intersection")
    if len(seen) == 1:
        return seen[0]
    return SAnd(tuple(seen))


def diff(lhs: Regex, rhs: Regex) -> Regex:
    if isinstance(lhs, SEmpty) or isinstance(rhs, SEmpty):
        return lhs
    return SDiff(lhs, rhs)


def has_boolean_ops(r: Regex) -> bool:
    if isinstance(r, (SAnd, SDiff)):
        return True
    if isinstance(r, (SUnion, SConcat)):
        return any(has_boolean_ops(i) for i in r.items)
    if isinstance(r, SStar):
        return has_boolean_ops(r.body)
    return False


def regex_free_vars(r: Regex) -> Dict[str, str]:
    """Ambient free variables (payload variables excluded)."""
    out: Dict[str, str] = {}

    def go(t: Regex) -> None:
        if isinstance(t, SEv):
            bound = set(t.ev.arg_vars) | {RET_VAR}
            for name, sort in free_vars(t.ev.qual).items():
                if name not in bound and name not in out:
                    out[name] = sort
        elif isinstance(t, (SUnion, SConcat, SAnd)):
            for i in t.items:
                go(i)
        elif isinstance(t, SStar):
            go(t.body)
        elif isinstance(t, SDiff):
            go(t.lhs)
            go(t.rhs)

    go(r)
    return out


def subst_regex(r: Regex, mapping: Dict[str, Qualifier]) -> Regex:
    """Substitute atoms for *ambient* variables throughout event qualifiers."""
    if isinstance(r, SEv):
        bound = set(r.ev.arg_vars) | {RET_VAR}
        inner = {k: v for k, v in mapping.items() if k not in bound}
        if not inner:
            return r
        return SEv(SEvent(r.ev.op, r.ev.ghost, r.ev.arg_vars, subst(r.ev.qual, inner)))
    if isinstance(r, SUnion):
        return union(subst_regex(i, mapping) for i in r.items)
    if isinstance(r, SConcat):
        return concat(subst_regex(i, mapping) for i in r.items)
    if isinstance(r, SStar):
        return star(subst_regex(r.body, mapping))
    if isinstance(r, SAnd):
        return intersect(subst_regex(i, mapping) for i in r.items)
    if isinstance(r, SDiff):
        return SDiff(subst_regex(r.lhs, mapping), subst_regex(r.rhs, mapping))
    return r


# --------------------------------------------------------------------------
# Membership (reference denotation)
# --------------------------------------------------------------------------


def _event_matches(
    e: Event, sym: SEvent, sigma: Valuation, domain: Domain
) -> bool:
    if e.op != sym.op or e.ghost != sym.ghost or len(e.args) != len(sym.arg_vars):
        return False
    env = dict(sigma)
    for v, a in zip(sym.arg_vars, e.args):
        env[v] = a
    env[RET_VAR] = e.ret
    return eval_qualifier(sym.qual, env, domain)


def member(
    alpha: Sequence[Event],
    regex: Regex,
    sigma: Valuation = {},
    domain: Domain = DEFAULT_DOMAIN,
) -> bool:
    """alpha ∈ ⟦sigma(regex)⟧ per the trace-language denotation equations."""
    alpha = tuple(alpha)
    memo: Dict[Tuple[int, int, int], bool] = {}
    nodes: Dict[int, Regex] = {}

    def key(r: Regex) -> int:
        nid = id(r)
        nodes[nid] = r
        return nid

    def match(r: Regex, i: int, j: int) -> bool:
        k = (key(r), i, j)
        got = memo.get(k)
        if got is not None:
            return got
        memo[k] = False  # cycle guard for star self-reference
        out = _match(r, i, j)
        memo[k] = out
        return out

    def _match(r: Regex, i: int, j: int) -> bool:
        if isinstance(r, SEmpty):
            return False
        if isinstance(r, SEps):
            return i == j
        if isinstance(r, SAny):
            return j == i + 1
        if isinstance(r, SEv):
            return j == i + 1 and _event_matches(alpha[i], r.ev, sigma, domain)
        if isinstance(r, SUnion):
            return any(match(x, i, j) for x in r.items)
        if isinstance(r, SAnd):
            return all(match(x, i, j) for x in r.items)
        if isinstance(r, SDiff):
            return match(r.lhs, i, j) and not match(r.rhs, i, j)
        if isinstance(r, SConcat):
            return _match_seq(r.items, i, j)
        if isinstance(r, SStar):
            if i == j:
                return True
            return any(
                match(r.body, i, k) and match(r, k, j) for k in range(i + 1, j + 1)
            )
        raise SortError(f"unknown regex node {r!r}")

    def _match_seq(items: Tuple[Regex, ...], i: int, j: int) -> bool:
        if not items:
            return i == j
        if len(items) == 1:
            return match(items[0], i, j)
        head, rest = items[0], items[1:]
        return any(match(head, i, k) and _match_seq(rest, k, j) for k in range(i, j + 1))

    return match(regex, 0, len(alpha))


# --------------------------------------------------------------------------
# Union-of-sequences (UoS) algebra
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UEv:
    """A mandatory event position; ``meta`` is opaque caller bookkeeping."""

    ev: SEvent
    meta: object = None


@dataclass(frozen=True)
class UStar:
    """A Kleene block: any number of events drawn from ``evs``."""

    evs: Tuple[SEvent, ...]


Atom = Union[UEv, UStar]
Monomial = Tuple[Atom, ...]


class NotUoS(Exception):
    """Raised internally when a regex does not fit the UoS shape."""


def uos_to_regex(monomials: Sequence[Monomial]) -> Regex:
    outs = []
    for m in monomials:
        parts: List[Regex] = []
        for a in m:
            if isinstance(a, UEv):
                parts.append(SEv(a.ev))
            else:
                parts.append(star(union(SEv(e) for e in a.evs)))
        outs.append(concat(parts))
    return union(outs)


def _ev_key(e: SEvent):
    return (e.op, e.ghost, repr(e.qual))


def _sorted_events(evs: Iterable[SEvent]) -> Tuple[SEvent, ...]:
    return tuple(sorted(set(evs), key=_ev_key))


def _payload_components(q: Qualifier, payload) -> List[Qualifier]:
    """Split a qualifier into conjunct groups connected via payload variables.

    Payload variables are existential per event occurrence, so conjunct
    groups sharing none of them are independently satisfiable; ambient
    variables stay rigid and do not merge groups.
    """
    parts = list(conjuncts(q))
    if len(parts) <= 1:
        return parts or [q]
    groups: List[Tuple[set, List[Qualifier]]] = []
    for p in parts:
        pv = set(free_vars(p)) & payload
        hit = [g for g in groups if g[0] & pv]
        if hit:
            base = hit[0]
            for other in hit[1:]:
                base[0].update(other[0])
                base[1].extend(other[1])
                groups.remove(other)
            base[0].update(pv)
            base[1].append(p)
        else:
            groups.append((pv, [p]))
    return [conj(g[1]) for g in groups]


class _LazyTable:
    """Set-like view of the ambient tuples satisfying a qualifier.

    Stands in for an eagerly enumerated table when the tuple space is too
    large; membership pins the named variables and asks a per-tuple sat
    query, memoized across probes.
    """

    def __init__(self, qual: Qualifier, names: Tuple[str, ...], domain: Domain):
        self.qual = qual
        self.names = names
        self.domain = domain
        self._memo: Dict[tuple, bool] = {}

    def __contains__(self, combo) -> bool:
        hit = self._memo.get(combo)
        if hit is None:
            pinned = subst(
                self.qual,
                {n: Lit(v, INT) for n, v in zip(self.names, combo)},
            )
            hit = sat(pinned, (), self.domain) is not None
            self._memo[combo] = hit
        return hit

    def __bool__(self) -> bool:
        return True


class SreAlgebra:
    """Boolean-algebra operations over a fixed operation universe.

    ``universe`` maps op name to ``(ghost, arity)`` for every operation that
    may occur in traces; the wildcard event ◯ ranges over exactly these.
    """

    def __init__(
        self,
        universe: Dict[str, Tuple[bool, int]],
        domain: Domain = DEFAULT_DOMAIN,
        config: Config = DEFAULT_CONFIG,
    ):
        self.universe = dict(universe)
        self.domain = domain
        self.config = config
        self._event_table_cache: Dict[Tuple[str, Qualifier], Optional[tuple]] = {}
        self._sat_cache: Dict[Tuple[Qualifier, Tuple[Qualifier, ...]], bool] = {}
        self._context_table_cache: Dict[Qualifier, tuple] = {}

    # -- helpers ----------------------------------------------------------

    def arity(self, op: str) -> int:
        if op not in self.universe:
            raise UnknownOp(op)
        return self.universe[op][1]

    def is_ghost(self, op: str) -> bool:
        if op not in self.universe:
            raise UnknownOp(op)
        return self.universe[op][0]

    def top_event(self, op: str) -> SEvent:
        ghost, arity = self.universe[op]
        return SEvent(op, ghost, tuple(arg_var(i) for i in range(arity)), TRUE)

    def all_events(self) -> Tuple[SEvent, ...]:
        return tuple(self.top_event(op) for op in sorted(self.universe))

    def check_event(self, e: SEvent) -> SEvent:
        if e.op not in self.universe:
            raise UnknownOp(e.op)
        ghost, arity = self.universe[e.op]
        if len(e.arg_vars) != arity:
            raise SortError(f"event {e.op} expects {arity} payload vars")
        if e.ghost != ghost:
            raise SortError(f"event {e.op} ghost flag mismatch")
        return e.canonical()

    def last(self, event: SEv) -> Regex:
        """LAST(<ev>) ≡ ◯* · <ev> · (◯ \\ <op>)*  — ev is the final op-event."""
        e = self.check_event(event.ev)
        return concat(
            [
                star(ANY),
                SEv(e),
                star(diff(ANY, SEv(self.top_event(e.op)))),
            ]
        )

    def _sat(self, qual: Qualifier, context: Sequence[Qualifier]) -> bool:
        key = (qual, tuple(context))
        hit = self._sat_cache.get(key)
        if hit is None:
            hit = sat(qual, list(context), self.domain) is not None
            self._sat_cache[key] = hit
        return hit

    def event_and(
        self, a: SEvent, b: SEvent, context: Sequence[Qualifier]
    ) -> Optional[SEvent]:
        if a.op != b.op or a.ghost != b.ghost:
            return None
        a = a.canonical()
        b = b.canonical()
        q = conj([a.qual, b.qual])
        if not self._sat(q, context):
            return None
        return SEvent(a.op, a.ghost, a.arg_vars, q)

    def event_minus(
        self, a: SEvent, bs: Sequence[SEvent], context: Sequence[Qualifier]
    ) -> Optional[SEvent]:
        """a ∧ ¬b1 ∧ … over same-op events; None when unsatisfiable."""
        a = a.canonical()
        negs = [neg(b.canonical().qual) for b in bs if b.op == a.op and b.ghost == a.ghost]
        q = conj([a.qual, *negs])
        if not self._sat(q, context):
            return None
        return SEvent(a.op, a.ghost, a.arg_vars, q)

    def event_set_diff(
        self, pos: Sequence[SEvent], negs: Sequence[SEvent], context: Sequence[Qualifier]
    ) -> Tuple[SEvent, ...]:
        out = []
        for p in pos:
            r = self.event_minus(p, negs, context)
            if r is not None:
                out.append(r)
        return _sorted_events(out)

    # -- UoS conversion ---------------------------------------------------

    def _letter_set(
        self, r: Regex, context: Sequence[Qualifier]
    ) -> Optional[Tuple[SEvent, ...]]:
        """If ⟦r⟧ is a set of single events, return those events, else None."""
        if isinstance(r, SAny):
            return self.all_events()
        if isinstance(r, SEv):
            return (self.check_event(r.ev),)
        if isinstance(r, SUnion):
            out: List[SEvent] = []
            for i in r.items:
                ls = self._letter_set(i, context)
                if ls is None:
                    return None
                out.extend(ls)
            return _sorted_events(out)
        if isinstance(r, SDiff):
            a = self._letter_set(r.lhs, context)
            b = self._letter_set(r.rhs, context)
            if a is None or b is None:
                return None
            return self.event_set_diff(a, b, context)
        if isinstance(r, SAnd):
            sets = [self._letter_set(i, context) for i in r.items]
            if any(s is None for s in sets):
                return None
            acc = list(sets[0])
            for s in sets[1:]:
                nxt = []
                for x in acc:
                    for y in s:
                        z = self.event_and(x, y, context)
                        if z is not None:
                            nxt.append(z)
                acc = nxt
            return _sorted_events(acc)
        return None

    def to_uos(
        self, r: Regex, context: Sequence[Qualifier] = ()
    ) -> Tuple[Monomial, ...]:
        """Exact union-of-sequences form; raises NotUoS when out of shape."""
        cap = self.config.max_branches

        def cartesian(
            parts: Sequence[Tuple[Monomial, ...]]
        ) -> Tuple[Monomial, ...]:
            acc: List[Monomial] = [()]
            for p in parts:
                nxt = [m + s for m in acc for s in p]
                if len(nxt) > cap:
                    raise CapacityExceeded("UoS branch cap exceeded")
                acc = nxt
            return tuple(acc)

        def go(t: Regex) -> Tuple[Monomial, ...]:
            if isinstance(t, SEmpty):
                return ()
            if isinstance(t, SEps):
                return ((),)
            if isinstance(t, SAny):
                return tuple((UEv(e),) for e in self.all_events())
            if isinstance(t, SEv):
                e = self.check_event(t.ev)
                if not self._sat(e.qual, context):
                    return ()
                return ((UEv(e),),)
            if isinstance(t, SUnion):
                out: List[Monomial] = []
                for i in t.items:
                    for m in go(i):
                        if m not in out:
                            out.append(m)
                if len(out) > cap:
                    raise CapacityExceeded("UoS branch cap exceeded")
                return tuple(out)
            if isinstance(t, SConcat):
                return cartesian([go(i) for i in t.items])
            if isinstance(t, SStar):
                ls = self._letter_set(t.body, context)
                if ls is None:
                    raise NotUoS()
                return ((UStar(ls),),)
            if isinstance(t, (SAnd, SDiff)):
                ls = self._letter_set(t, context)
                if ls is not None:
                    return tuple(((UEv(e),),) for e in ls)
                if isinstance(t, SAnd):
                    parts = [go(i) for i in t.items]
                    acc = parts[0]
                    for p in parts[1:]:
                        acc = self.intersect_uos(acc, p, context)
                    return acc
                raise NotUoS()
            raise SortError(f"unknown regex node {t!r}")

        out = go(r)
        return out

    # -- monomial product (exact intersection) ----------------------------

    def intersect_monomials(
        self, m1: Monomial, m2: Monomial, context: Sequence[Qualifier] = ()
    ) -> Tuple[Monomial, ...]:
        """All monomials denoting ⟦m1⟧ ∩ ⟦m2⟧.

        Product over position pairs; the only cycles are self-loops (both
        sides inside a Kleene block), so paths re-linearize into sequences.
        """
        cap = self.config.max_branches
        memo: Dict[Tuple[int, int], Tuple[Monomial, ...]] = {}

        def side_letters(m: Monomial, i: int):
            """(event, next position, meta) letter options at position i."""
            if i >= len(m):
                return []
            a = m[i]
            if isinstance(a, UEv):
                return [(a.ev, i + 1, a.meta)]
            return [(e, i, None) for e in a.evs]

        def suffixes(i: int, j: int) -> Tuple[Monomial, ...]:
            k = (i, j)
            if k in memo:
                return memo[k]
            memo[k] = ()  # guard (no true recursion cycles: i+j grows)
            out: List[Monomial] = []
            loop_evs: List[SEvent] = []
            steps: List[Tuple[Atom, int, int]] = []
            for e1, i2, meta1 in side_letters(m1, i):
                for e2, j2, meta2 in side_letters(m2, j):
                    e = self.event_and(e1, e2, context)
                    if e is None:
                        continue
                    meta = meta1 if meta1 is not None else meta2
                    if i2 == i and j2 == j:
                        loop_evs.append(e)
                    else:
                        steps.append((UEv(e, meta), i2, j2))
            # epsilon skips of Kleene blocks
            eps_targets: List[Tuple[int, int]] = []
            if i < len(m1) and isinstance(m1[i], UStar):
                eps_targets.append((i + 1, j))
            if j < len(m2) and isinstance(m2[j], UStar):
                eps_targets.append((i, j + 1))
            tails: List[Monomial] = []
            if i == len(m1) and j == len(m2):
                tails.append(())
            for i2, j2 in eps_targets:
                tails.extend(suffixes(i2, j2))
            for atom, i2, j2 in steps:
                for s in suffixes(i2, j2):
                    tails.append((atom,) + s)
            if loop_evs:
                blk = UStar(_sorted_events(loop_evs))
                tails = [
                    t if (t and t[0] == blk) else ((blk,) + t) for t in tails
                ]
            ded: List[Monomial] = []
            for t in tails:
                if t not in ded:
                    ded.append(t)
            if len(ded) > cap:
                raise CapacityExceeded("monomial product branch cap exceeded")
            memo[k] = tuple(ded)
            return memo[k]

        return suffixes(0, 0)

    def intersect_uos(
        self,
        u1: Sequence[Monomial],
        u2: Sequence[Monomial],
        context: Sequence[Qualifier] = (),
    ) -> Tuple[Monomial, ...]:
        out: List[Monomial] = []
        for m1 in u1:
            for m2 in u2:
                for m in self.intersect_monomials(m1, m2, context):
                    if m not in out:
                        out.append(m)
        if len(out) > self.config.max_branches:
            raise CapacityExceeded("UoS intersection branch cap exceeded")
        return tuple(out)

    # -- normalization -----------------------------------------------------

    def normalize(self, r: Regex, context: Sequence[Qualifier] = ()) -> Regex:
        """Equivalent regex with no ∧ or \\ operators.

        Boolean nodes over union-of-sequences operands are compiled exactly
        by the monomial product; anything else goes through the minterm DFA
        and generic state elimination.
        """
        if not has_boolean_ops(r):
            return r
        if isinstance(r, SUnion):
            return union(self.normalize(i, context) for i in r.items)
        if isinstance(r, SConcat):
            return concat(self.normalize(i, context) for i in r.items)
        if isinstance(r, SStar):
            return star(self.normalize(r.body, context))
        if isinstance(r, (SAnd, SDiff)):
            if isinstance(r, SAnd):
                parts = [self.normalize(i, context) for i in r.items]
                node: Regex = intersect(parts)
            else:
                node = SDiff(self.normalize(r.lhs, context), self.normalize(r.rhs, context))
            ls = self._letter_set(node, context)
            if ls is not None:
                return union(SEv(e) for e in ls)
            try:
                return uos_to_regex(self.to_uos(node, context))
            except NotUoS:
                return self._normalize_via_dfa(node, context)
        return r

    # -- minterm automaton engine ------------------------------------------

    def _collect_atoms(
        self, regexes: Sequence[Regex]
    ) -> Dict[str, List[Qualifier]]:
        atoms: Dict[str, List[Qualifier]] = {op: [] for op in sorted(self.universe)}

        def go(t: Regex) -> None:
            if isinstance(t, SEv):
                e = self.check_event(t.ev)
                if e.qual != TRUE and e.qual not in atoms[e.op]:
                    atoms[e.op].append(e.qual)
            elif isinstance(t, (SUnion, SConcat, SAnd)):
                for i in t.items:
                    go(i)
            elif isinstance(t, SStar):
                go(t.body)
            elif isinstance(t, SDiff):
                go(t.lhs)
                go(t.rhs)

        for r in regexes:
            go(r)
        return atoms

    def _minterms(
        self, regexes: Sequence[Regex], context: Sequence[Qualifier]
    ) -> List[Tuple[str, FrozenSet[Qualifier], Qualifier]]:
        """(op, positive atom set, full conjunction) per satisfiable minterm."""
        atoms = self._collect_atoms(regexes)
        minterms = []
        for op in sorted(self.universe):
            quals = atoms[op]
            if len(quals) > 12:
                raise CapacityExceeded(f"too many predicates on op {op}")
            n = len(quals)
            for mask in range(1 << n):
                pos = frozenset(q for i, q in enumerate(quals) if mask >> i & 1)
                parts = [q if q in pos else neg(q) for q in quals]
                full = conj(parts)
                if self._sat(full, context):
                    minterms.append((op, pos, full))
        if len(minterms) > 4 * self.config.max_branches:
            raise CapacityExceeded("minterm cap exceeded")
        return minterms

    def _nfa(self, r: Regex):
        """Thompson construction; labels are SEvent or None (= any)."""
        eps: Dict[int, Set[int]] = {}
        edges: Dict[int, List[Tuple[Optional[SEvent], int]]] = {}
        counter = [0]

        def fresh() -> int:
            counter[0] += 1
            eps.setdefault(counter[0], set())
            edges.setdefault(counter[0], [])
            return counter[0]

        def build(t: Regex) -> Tuple[int, int]:
            s, f = fresh(), fresh()
            if isinstance(t, SEmpty):
                pass
            elif isinstance(t, SEps):
                eps[s].add(f)
            elif isinstance(t, SAny):
                edges[s].append((None, f))
            elif isinstance(t, SEv):
                edges[s].append((self.check_event(t.ev), f))
            elif isinstance(t, SUnion):
                for i in t.items:
                    a, b = build(i)
                    eps[s].add(a)
                    eps[b].add(f)
            elif isinstance(t, SConcat):
                cur = s
                for i in t.items:
                    a, b = build(i)
                    eps[cur].add(a)
                    cur = b
                eps[cur].add(f)
            elif isinstance(t, SStar):
                a, b = build(t.body)
                eps[s].add(a)
                eps[s].add(f)
                eps[b].add(a)
                eps[b].add(f)
            else:
                raise SortError("NFA construction requires a normalized regex")
            return s, f

        start, final = build(r)
        return start, final, eps, edges

    def _label_covers(self, label: Optional[SEvent], mt) -> bool:
        op, pos, _ = mt
        if label is None:
            return True
        if label.op != op:
            return False
        return label.qual == TRUE or label.qual in pos

    def _determinize(self, r: Regex, minterms) -> Dict:
        start, final, eps, edges = self._nfa(r)

        def closure(states: FrozenSet[int]) -> FrozenSet[int]:
            seen = set(states)
            work = list(states)
            while work:
                s = work.pop()
                for t in eps[s]:
                    if t not in seen:
                        seen.add(t)
                        work.append(t)
            return frozenset(seen)

        init = closure(frozenset([start]))
        states = {init: 0}
        trans: Dict[int, Dict[int, int]] = {0: {}}
        accepting: Set[int] = set()
        order = [init]
        idx = 0
        while idx < len(order):
            cur = order[idx]
            cid = states[cur]
            if final in cur:
                accepting.add(cid)
            for mid, mt in enumerate(minterms):
                dests = set()
                for s in cur:
                    for label, d in edges[s]:
                        if self._label_covers(label, mt):
                            dests.add(d)
                if not dests:
                    continue
                dst = closure(frozenset(dests))
                if dst not in states:
                    states[dst] = len(states)
                    trans[states[dst]] = {}
                    order.append(dst)
                trans[cid][mid] = states[dst]
            idx += 1
            if len(states) > self.config.max_search_states:
                raise CapacityExceeded("determinization state cap exceeded")
        return {"trans": trans, "accepting": accepting, "n": len(states), "start": 0}

    @staticmethod
    def _complete(dfa: Dict, nsyms: int) -> Dict:
        trans = {s: dict(row) for s, row in dfa["trans"].items()}
        n = dfa["n"]
        sink = None
        for s in range(n):
            for m in range(nsyms):
                if m not in trans[s]:
                    if sink is None:
                        sink = n
                        trans[sink] = {m2: sink for m2 in range(nsyms)}
                    trans[s][m] = sink
        return {
            "trans": trans,
            "accepting": set(dfa["accepting"]),
            "n": n + (1 if sink is not None else 0),
            "start": dfa["start"],
        }

    def _complement(self, dfa: Dict, nsyms: int) -> Dict:
        c = self._complete(dfa, nsyms)
        c["accepting"] = set(range(c["n"])) - c["accepting"]
        return c

    @staticmethod
    def _product(d1: Dict, d2: Dict, nsyms: int) -> Dict:
        states = {(d1["start"], d2["start"]): 0}
        trans: Dict[int, Dict[int, int]] = {0: {}}
        accepting: Set[int] = set()
        order = [(d1["start"], d2["start"])]
        idx = 0
        while idx < len(order):
            s1, s2 = order[idx]
            cid = states[(s1, s2)]
            if s1 in d1["accepting"] and s2 in d2["accepting"]:
                accepting.add(cid)
            for m in range(nsyms):
                t1 = d1["trans"].get(s1, {}).get(m)
                t2 = d2["trans"].get(s2, {}).get(m)
                if t1 is None or t2 is None:
                    continue
                key = (t1, t2)
                if key not in states:
                    states[key] = len(states)
                    trans[states[key]] = {}
                    order.append(key)
                trans[cid][m] = states[key]
            idx += 1
        return {"trans": trans, "accepting": accepting, "n": len(states), "start": 0}

    #: Ambient valuations enumerated for mask-based feasibility, at most.
    _AMBIENT_CAP = 20_000

    def _ambient_space(self, ambient: Set[str], context: Sequence[Qualifier]):
        """Enumerate rigid-variable valuations, or None if there are too many.

        Returns pinning contexts (one equality list per valuation) and a
        bitmask marking the valuations consistent with ``context``.
        """
        for c in context:
            ambient = ambient | set(free_vars(c))
        names = sorted(ambient)
        values = self.domain.values(INT)
        if len(values) ** len(names) > self._AMBIENT_CAP:
            return None
        sigmas = [dict(zip(names, combo)) for combo in iproduct(values, repeat=len(names))]
        ctx_mask = 0
        for idx, sigma in enumerate(sigmas):
            if all(eval_qualifier(c, sigma, self.domain) for c in context):
                ctx_mask |= 1 << idx
        subs = [{n: Lit(sigma[n], INT) for n in names} for sigma in sigmas]
        return subs, ctx_mask

    def _ambient_mask_feasibility(self, minterms, context):
        """Mask-based feasibility test, or None if the ambient space is big.

        Enumerates all valuations of the rigid ambient variables mentioned by
        the minterms or the context.  Each minterm is satisfiable under some
        subset of them (its payload variables are existential per occurrence),
        recorded as a bitmask; a minterm set is feasible iff the intersection
        of its masks with the context's mask is non-empty.
        """
        ambient: Set[str] = set()
        for op, _pos, full in minterms:
            arity = self.universe[op][1]
            payload = {arg_var(i) for i in range(arity)} | {RET_VAR}
            ambient.update(n for n in free_vars(full) if n not in payload)
        space = self._ambient_space(ambient, context)
        if space is None:
            return None
        subs, ctx_mask = space
        if ctx_mask == 0:
            return lambda mids: False
        mask_cache: Dict[int, int] = {}

        def mid_mask(mid: int) -> int:
            if mid not in mask_cache:
                _op, _pos, full = minterms[mid]
                bits = 0
                probe = ctx_mask
                idx = 0
                while probe:
                    if (
                        probe & 1
                        and sat(subst(full, subs[idx]), (), self.domain) is not None
                    ):
                        bits |= 1 << idx
                    probe >>= 1
                    idx += 1
                mask_cache[mid] = bits
            return mask_cache[mid]

        def feasible(mids: FrozenSet[int]) -> bool:
            acc = ctx_mask
            for m in mids:
                acc &= mid_mask(m)
                if not acc:
                    return False
            return True

        return feasible

    def _feasible_nonempty(
        self, dfa: Dict, minterms, context: Sequence[Qualifier]
    ) -> bool:
        """Does some accepting path have a satisfiable qualifier conjunction?

        Search states pair an automaton state with the *set* of minterms used
        so far (payload variables are per-occurrence, so repetition is
        idempotent for satisfiability).  Unsatisfiable sets prune
        monotonically.

        Distinct minterms only interact through the rigid ambient variables,
        so when the ambient space is small the joint query decomposes: each
        minterm gets a bitmask of the ambient valuations under which it is
        satisfiable on its own, and a set is feasible iff the masks (and the
        context's mask) intersect.  Otherwise fall back to one conjoined sat
        query per set.
        """
        feasible = self._ambient_mask_feasibility(minterms, context)
        if feasible is None:
            inst_cache: Dict[int, Qualifier] = {}

            def inst(mid: int) -> Qualifier:
                if mid not in inst_cache:
                    op, _, full = minterms[mid]
                    arity = self.universe[op][1]
                    mapping = {arg_var(i): f"__m{mid}_a{i}" for i in range(arity)}
                    mapping[RET_VAR] = f"__m{mid}_r"
                    inst_cache[mid] = rename(full, mapping)
                return inst_cache[mid]

            sat_cache: Dict[FrozenSet[int], bool] = {}

            def feasible(mids: FrozenSet[int]) -> bool:
                if mids not in sat_cache:
                    sat_cache[mids] = self._sat(
                        conj(inst(m) for m in sorted(mids)), context
                    )
                return sat_cache[mids]

        start = (dfa["start"], frozenset())
        if not feasible(frozenset()):
            return False
        seen = {start}
        work = [start]
        budget = self.config.max_search_states
        while work:
            state, mids = work.pop()
            if state in dfa["accepting"]:
                return True
            for m in sorted(dfa["trans"].get(state, {})):
                dst = dfa["trans"][state][m]
                nmids = mids | {m}
                key = (dst, nmids)
                if key in seen:
                    continue
                if not feasible(nmids):
                    continue
                seen.add(key)
                work.append(key)
                if len(seen) > budget:
                    raise CapacityExceeded("feasibility search cap exceeded")
        return False

    def includes(
        self, a1: Regex, a2: Regex, context: Sequence[Qualifier] = ()
    ) -> bool:
        """⟦σ(a1)⟧ ⊆ ⟦σ(a2)⟧ for every σ consistent with ``context``.

        Free variables are rigid; implemented as emptiness of a1 ∧ ¬a2 over
        the shared minterm algebra.
        """
        a1 = self.normalize(a1, context)
        a2 = self.normalize(a2, context)
        if isinstance(a1, SEmpty):
            return True
        minterms = self._minterms([a1, a2], context)
        d1 = self._determinize(a1, minterms)
        d2 = self._complement(self._determinize(a2, minterms), len(minterms))
        prod = self._product(self._complete(d1, len(minterms)), d2, len(minterms))
        return not self._feasible_nonempty(prod, minterms, context)

    def is_empty(self, r: Regex, context: Sequence[Qualifier] = ()) -> bool:
        """No accepting path's qualifier conjunction is satisfiable.

        Kleene blocks may be taken zero times, and taking them more often
        only adds conjuncts, so they are skipped.
        """
        r = self.normalize(r, context)
        cap = self.config.max_branches * 4

        def alts(t: Regex) -> List[Tuple[SEvent, ...]]:
            if isinstance(t, SEmpty):
                return []
            if isinstance(t, (SEps, SStar, SAny)):
                return [()]
            if isinstance(t, SEv):
                return [(self.check_event(t.ev),)]
            if isinstance(t, SUnion):
                out: List[Tuple[SEvent, ...]] = []
                for i in t.items:
                    out.extend(alts(i))
                if len(out) > cap:
                    raise CapacityExceeded("emptiness branch cap exceeded")
                return out
            if isinstance(t, SConcat):
                acc: List[Tuple[SEvent, ...]] = [()]
                for i in t.items:
                    part = alts(i)
                    acc = [x + y for x in acc for y in part]
                    if len(acc) > cap:
                        raise CapacityExceeded("emptiness branch cap exceeded")
                return acc
            raise SortError("is_empty requires a normalized regex")

        alt_list = alts(r)
        ctx_tables = [t for c in context for t in self._context_tables(c)]
        ctx_names = set()
        for c in context:
            ctx_names |= set(free_vars(c))

        for alt in alt_list:
            # Events only interact through the rigid ambient variables, so
            # project each event's qualifier onto those (payload variables
            # are existential per occurrence) and join the tables.  Within
            # one occurrence, conjunct groups that share no payload variable
            # are independent as well, so the qualifier splits into
            # payload-connected components, each with its own (small) table.
            # Ambient variables confined to a single component (and absent
            # from the context) are existential and eliminated inside it.
            comps = []
            counts: Dict[str, int] = {}
            for e in dict.fromkeys(alt):
                payload = set(e.arg_vars) | {RET_VAR}
                for q in _payload_components(e.qual, payload):
                    amb = set(free_vars(q)) - payload
                    comps.append((e, q, amb))
                    for v in amb:
                        counts[v] = counts.get(v, 0) + 1
            shared = {v for v, k in counts.items() if k >= 2} | ctx_names
            tables = list(ctx_tables)
            for e, q, amb in comps:
                part = SEvent(e.op, e.ghost, e.arg_vars, q)
                tables.append(
                    self._event_table(part, tuple(sorted(amb & shared)))
                )
            if self._csp_solve(tables):
                return False
        return True

    def _context_tables(self, q: Qualifier):
        """Allowed ambient tuples of a payload-free context qualifier.

        All context variables are rigid, so a conjunction splits into one
        table per conjunct; oversized conjuncts get lazy tables.
        """
        out = []
        for c in conjuncts(q):
            cached = self._context_table_cache.get(c)
            if cached is None:
                names = tuple(sorted(free_vars(c)))
                values = self.domain.values(INT)
                if len(values) ** len(names) > self._AMBIENT_CAP:
                    cached = (names, _LazyTable(c, names, self.domain))
                else:
                    cached = (
                        names,
                        {
                            combo
                            for combo in iproduct(values, repeat=len(names))
                            if eval_qualifier(
                                c, dict(zip(names, combo)), self.domain
                            )
                        },
                    )
                self._context_table_cache[c] = cached
            out.append(cached)
        return out

    def _event_table(self, e: SEvent, names: Optional[Tuple[str, ...]] = None):
        """Shared-ambient tuples under which the event's qualifier holds.

        Everything outside ``names`` — payload variables (arguments and
        ``nu``) and ambient variables private to this occurrence — is
        existentially quantified away per tuple.  When ``names`` spans too
        many valuations to enumerate eagerly the table is lazy: membership
        is decided per tuple on demand and memoized.
        """
        if names is None:
            payload = set(e.arg_vars) | {RET_VAR}
            names = tuple(sorted(set(free_vars(e.qual)) - payload))
        key = (e.op, e.qual, names)
        cached = self._event_table_cache.get(key)
        if cached is not None:
            return cached
        values = self.domain.values(INT)
        if len(values) ** len(names) > self._AMBIENT_CAP:
            out = (names, _LazyTable(e.qual, names, self.domain))
            self._event_table_cache[key] = out
            return out
        allowed = set()
        for combo in iproduct(values, repeat=len(names)):
            pinned = subst(
                e.qual, {n: Lit(v, INT) for n, v in zip(names, combo)}
            )
            if sat(pinned, (), self.domain) is not None:
                allowed.add(combo)
        out = (names, allowed)
        self._event_table_cache[key] = out
        return out

    def _csp_solve(self, tables) -> bool:
        """Is there an ambient valuation inside every table?

        Plain backtracking over the joint variables; each table is checked
        as soon as all of its variables are assigned.
        """
        for names, allowed in tables:
            if not allowed and not names:
                return False
        all_names = sorted({n for names, _ in tables for n in names})
        values = self.domain.values(INT)
        position = {n: i for i, n in enumerate(all_names)}
        by_last: Dict[int, List] = {i: [] for i in range(len(all_names))}
        free_ok = True
        for names, allowed in tables:
            if names:
                by_last[max(position[n] for n in names)].append((names, allowed))
            elif not allowed:
                free_ok = False
        if not free_ok:
            return False

        assign: Dict[str, int] = {}

        def backtrack(i: int) -> bool:
            if i == len(all_names):
                return True
            name = all_names[i]
            for v in values:
                assign[name] = v
                if all(
                    tuple(assign[n] for n in names) in allowed
                    for names, allowed in by_last[i]
                ):
                    if backtrack(i + 1):
                        return True
            del assign[name]
            return False

        if not all_names:
            return True
        return backtrack(0)

    # -- DFA fallback normalization -----------------------------------------

    def _normalize_via_dfa(self, r: Regex, context: Sequence[Qualifier]) -> Regex:
        """Minterm DFA + generic state elimination.

        Handles ∧ and \\ by recursive product/complement.  The result may
        contain Kleene stars over non-trivial bodies; downstream plan
        normalization expands those up to the star bound.
        """
        minterms = self._minterms([r], context)
        nsyms = len(minterms)

        def to_dfa(t: Regex) -> Dict:
            if isinstance(t, SAnd):
                d = to_dfa(t.items[0])
                for i in t.items[1:]:
                    d = self._product(
                        self._complete(d, nsyms), self._complete(to_dfa(i), nsyms), nsyms
                    )
                return d
            if isinstance(t, SDiff):
                return self._product(
                    self._complete(to_dfa(t.lhs), nsyms),
                    self._complement(to_dfa(t.rhs), nsyms),
                    nsyms,
                )
            if isinstance(t, (SUnion, SConcat)):
                # rebuild boolean-free via children (children may hold ∧ deeper)
                if not has_boolean_ops(t):
                    return self._determinize(t, minterms)
                if isinstance(t, SUnion):
                    parts = [to_dfa(i) for i in t.items]
                    d = parts[0]
                    for p in parts[1:]:
                        # union via De Morgan on complements
                        d = self._complement(
                            self._product(
                                self._complement(d, nsyms),
                                self._complement(p, nsyms),
                                nsyms,
                            ),
                            nsyms,
                        )
                    return d
                raise NotUoS()  # concat-of-boolean: normalize children first
            if isinstance(t, SStar) and has_boolean_ops(t.body):
                raise NotUoS()
            return self._determinize(t, minterms)

        try:
            dfa = to_dfa(r)
        except NotUoS:
            # normalize children first, then retry as a plain automaton
            if isinstance(r, SConcat):
                return concat(self.normalize(i, context) for i in r.items)
            if isinstance(r, SStar):
                return star(self.normalize(r.body, context))
            raise CapacityExceeded("cannot normalize regex shape")
        dfa = self._trim(self._minimize(self._complete(dfa, nsyms), nsyms))
        return self._eliminate(dfa, minterms)

    @staticmethod
    def _minimize(dfa: Dict, nsyms: int) -> Dict:
        n = dfa["n"]
        part = [1 if s in dfa["accepting"] else 0 for s in range(n)]
        while True:
            sig = {}
            newpart = []
            for s in range(n):
                key = (part[s], tuple(part[dfa["trans"][s][m]] for m in range(nsyms)))
                if key not in sig:
                    sig[key] = len(sig)
                newpart.append(sig[key])
            if newpart == part:
                break
            part = newpart
        nstates = max(part) + 1
        trans = {p: {} for p in range(nstates)}
        for s in range(n):
            for m in range(nsyms):
                trans[part[s]][m] = part[dfa["trans"][s][m]]
        return {
            "trans": trans,
            "accepting": {part[s] for s in dfa["accepting"]},
            "n": nstates,
            "start": part[dfa["start"]],
        }

    @staticmethod
    def _trim(dfa: Dict) -> Dict:
        # keep states reachable from start and co-reachable to accepting
        fwd = {dfa["start"]}
        work = [dfa["start"]]
        while work:
            s = work.pop()
            for d in dfa["trans"].get(s, {}).values():
                if d not in fwd:
                    fwd.add(d)
                    work.append(d)
        rev: Dict[int, Set[int]] = {}
        for s, row in dfa["trans"].items():
            for d in row.values():
                rev.setdefault(d, set()).add(s)
        bwd = set(dfa["accepting"])
        work = list(bwd)
        while work:
            s = work.pop()
            for p in rev.get(s, ()):
                if p not in bwd:
                    bwd.add(p)
                    work.append(p)
        keep = fwd & bwd
        trans = {
            s: {m: d for m, d in row.items() if d in keep}
            for s, row in dfa["trans"].items()
            if s in keep
        }
        return {
            "trans": trans,
            "accepting": set(dfa["accepting"]) & keep,
            "n": len(keep),
            "start": dfa["start"],
            "states": keep,
        }

    def _eliminate(self, dfa: Dict, minterms) -> Regex:
        states = sorted(dfa.get("states", range(dfa["n"])))
        if dfa["start"] not in states or not dfa["accepting"]:
            return EMPTY

        def mt_event(mid: int) -> Regex:
            op, _, full = minterms[mid]
            ghost, arity = self.universe[op]
            return SEv(SEvent(op, ghost, tuple(arg_var(i) for i in range(arity)), full))

        # generalized NFA with fresh start/accept
        START, ACCEPT = -1, -2
        edges: Dict[Tuple[int, int], Regex] = {}

        def add(a: int, b: int, r: Regex) -> None:
            if isinstance(r, SEmpty):
                return
            edges[(a, b)] = union([edges.get((a, b), EMPTY), r])

        add(START, dfa["start"], EPS)
        for s in states:
            if s in dfa["accepting"]:
                add(s, ACCEPT, EPS)
            for m, d in sorted(dfa["trans"].get(s, {}).items()):
                add(s, d, mt_event(m))
        for q in states:
            loop = edges.pop((q, q), EMPTY)
            loop_star = star(loop) if not isinstance(loop, SEmpty) else EPS
            ins = [(a, r) for (a, b), r in edges.items() if b == q and a != q]
            outs = [(b, r) for (a, b), r in edges.items() if a == q and b != q]
            for a, rin in ins:
                for b, rout in outs:
                    add(a, b, concat([rin, loop_star, rout]))
            for key in [k for k in edges if q in k]:
                edges.pop(key, None)
        return edges.get((START, ACCEPT), EMPTY)
