"""Refinement types, trace types, contexts, and the algorithmic checks.

Pure types refine base sorts with qualifiers over the distinguished value
variable ``nu``; trace types ``[H] x:t [F]`` pair a pure return type with
history and future symbolic regexes, read underapproximately: every F-trace
must be producible under some H-history.  Subtyping therefore runs in the
*must* direction — a pure type shrinks by weakening its qualifier, and a
trace type is covariant in its history and contravariant in its future.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .config import DEFAULT_CONFIG, Config
from .errors import (
    ErasureMismatch,
    SemanticError,
    SortError,
    SpecializationRejected,
    UnknownOp,
    WellFormednessError,
)
from .logic import (
    DEFAULT_DOMAIN,
    INT,
    TRUE,
    UNIT,
    Constant,
    Domain,
    Lit,
    Qualifier,
    Sort,
    Var,
    arrow,
    conj,
    constant_sort,
    entails,
    free_vars,
    rename,
    subst,
)
from .sre import (
    ANY,
    EPS,
    RET_VAR,
    Regex,
    SConcat,
    SEv,
    SEvent,
    SreAlgebra,
    concat,
    intersect,
    regex_free_vars,
    star,
    subst_regex,
)

# --------------------------------------------------------------------------
# Type ASTs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RBase:
    """Refined base type {b | φ}; φ speaks about ``nu`` and ambient names."""

    sort: str
    qual: Qualifier = TRUE

    def __str__(self) -> str:
        if self.qual == TRUE:
            return self.sort
        return f"{{{self.sort} | {self.qual}}}"


@dataclass(frozen=True)
class DepArrow:
    """Dependent arrow x:t → body (body may be pure or a trace type)."""

    param: str
    param_type: RBase
    body: "AnyType"


@dataclass(frozen=True)
class GhostArrow:
    """Ghost-variable binder x:b ⇝ body."""

    var: str
    sort: str
    body: "AnyType"


@dataclass(frozen=True)
class GhostEventArrow:
    """Ghost-event binder op:s ⇝ body (kept for completeness)."""

    op: str
    sort: str
    body: "AnyType"


@dataclass(frozen=True)
class UHat:
    """Trace type [hist] ret_name : ret [future]."""

    hist: Regex
    ret_name: str
    ret: RBase
    future: Regex


@dataclass(frozen=True)
class Inter:
    """Finite intersection of trace types with equal erasures."""

    components: Tuple[UHat, ...]


PureType = Union[RBase, DepArrow, GhostArrow, GhostEventArrow]
AnyType = Union[PureType, UHat, Inter]


# --------------------------------------------------------------------------
# Contexts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TypeContext:
    """Ordered pure-type bindings (no trace types allowed)."""

    bindings: Tuple[Tuple[str, RBase], ...] = ()

    def extend(self, name: str, t: RBase) -> "TypeContext":
        if not isinstance(t, RBase):
            raise SemanticError(f"context binding {name!r} must be a base type")
        if any(n == name for n, _ in self.bindings):
            raise SemanticError(f"duplicate context binding {name!r}")
        return TypeContext(self.bindings + ((name, t),))

    def extend_all(self, items: Iterable[Tuple[str, RBase]]) -> "TypeContext":
        out = self
        for name, t in items:
            out = out.extend(name, t)
        return out

    def lookup(self, name: str) -> Optional[RBase]:
        for n, t in self.bindings:
            if n == name:
                return t
        return None

    def names(self) -> Tuple[str, ...]:
        return tuple(n for n, _ in self.bindings)

    def quals(self) -> List[Qualifier]:
        """Each binding x:{b|φ} contributes φ[nu ↦ x]."""
        out = []
        for name, t in self.bindings:
            if t.qual != TRUE:
                out.append(subst(t.qual, {RET_VAR: Var(name, t.sort)}))
        return out


@dataclass(frozen=True)
class SigComponent:
    """One intersection component of an operator signature, split apart."""

    ghosts: Tuple[Tuple[str, str], ...]
    params: Tuple[Tuple[str, RBase], ...]
    hist: Regex
    ret_name: str
    ret: RBase
    head_qual: Qualifier  # qualifier of the leading ⟨op …⟩ event of F
    future_rest: Regex  # F with that leading event removed


@dataclass(frozen=True)
class OpDecl:
    name: str
    kind: str  # "pure" | "effect" | "ghost"
    signature: AnyType

    def __post_init__(self):
        if self.kind not in ("pure", "effect", "ghost"):
            raise SemanticError(f"bad operator kind {self.kind!r}")

    @property
    def params(self) -> Tuple[Tuple[str, str], ...]:
        out = []
        t = self.signature
        while True:
            if isinstance(t, (GhostArrow, GhostEventArrow)):
                t = t.body
            elif isinstance(t, DepArrow):
                out.append((t.param, t.param_type.sort))
                t = t.body
            else:
                return tuple(out)

    @property
    def ret_sort(self) -> str:
        t = self.signature
        while isinstance(t, (GhostArrow, GhostEventArrow, DepArrow)):
            t = t.body
        if isinstance(t, RBase):
            return t.sort
        if isinstance(t, Inter):
            t = t.components[0]
        return t.ret.sort

    def components(self) -> Tuple[SigComponent, ...]:
        """Ghost/param prefix plus each trace-type alternative, head-split."""
        ghosts: List[Tuple[str, str]] = []
        params: List[Tuple[str, RBase]] = []
        t = self.signature
        while True:
            if isinstance(t, GhostArrow):
                ghosts.append((t.var, t.sort))
                t = t.body
            elif isinstance(t, DepArrow):
                params.append((t.param, t.param_type))
                t = t.body
            else:
                break
        if isinstance(t, RBase):
            return ()
        uhats = t.components if isinstance(t, Inter) else (t,)
        out = []
        for u in uhats:
            head, rest = _split_future_head(u.future, self.name)
            out.append(
                SigComponent(
                    tuple(ghosts),
                    tuple(params),
                    u.hist,
                    u.ret_name,
                    u.ret,
                    head,
                    rest,
                )
            )
        return tuple(out)


def _split_future_head(future: Regex, op: str) -> Tuple[Qualifier, Regex]:
    if isinstance(future, SEv) and future.ev.op == op:
        return future.ev.canonical().qual, EPS
    if (
        isinstance(future, SConcat)
        and isinstance(future.items[0], SEv)
        and future.items[0].ev.op == op
    ):
        return future.items[0].ev.canonical().qual, concat(future.items[1:])
    raise SemanticError(
        f"future regex of {op!r} must start with its own event"
    )


class OperatorContext:
    """The operator table Δ: names to kinded signatures.

    The definition of a *well-formed* operator context — that signatures do
    not specify unreachable traces against the real system — is a trust
    boundary assumed of the input, not machine-checked.
    """

    def __init__(self, decls: Iterable[OpDecl]):
        self.table: Dict[str, OpDecl] = {}
        for d in decls:
            if d.name in self.table:
                raise SemanticError(f"duplicate operator {d.name!r}")
            self.table[d.name] = d

    def get(self, op: str) -> Optional[OpDecl]:
        return self.table.get(op)

    def require(self, op: str) -> OpDecl:
        d = self.table.get(op)
        if d is None:
            raise UnknownOp(op)
        return d

    def ops(self) -> Tuple[str, ...]:
        return tuple(sorted(self.table))

    def universe(self) -> Dict[str, Tuple[bool, int]]:
        """Event alphabet for the regex algebra (non-pure ops only)."""
        return {
            d.name: (d.kind == "ghost", len(d.params))
            for d in self.table.values()
            if d.kind != "pure"
        }

    def algebra(
        self, domain: Domain = DEFAULT_DOMAIN, config: Config = DEFAULT_CONFIG
    ) -> SreAlgebra:
        return SreAlgebra(self.universe(), domain, config)


# --------------------------------------------------------------------------
# Erasure and substitution
# --------------------------------------------------------------------------


def erase(t: AnyType) -> Sort:
    if isinstance(t, RBase):
        return t.sort
    if isinstance(t, DepArrow):
        return arrow(erase(t.param_type), erase(t.body))
    if isinstance(t, (GhostArrow, GhostEventArrow)):
        return erase(t.body)
    if isinstance(t, UHat):
        return erase(t.ret)
    if isinstance(t, Inter):
        return erase(t.components[0])
    raise SortError(f"unknown type node {t!r}")


def subst_type(t: AnyType, mapping: Dict[str, Qualifier]) -> AnyType:
    """Substitute atoms for ambient variables, respecting binders."""
    if not mapping:
        return t
    if isinstance(t, RBase):
        inner = {k: v for k, v in mapping.items() if k != RET_VAR}
        return RBase(t.sort, subst(t.qual, inner))
    if isinstance(t, DepArrow):
        inner = {k: v for k, v in mapping.items() if k != t.param}
        return DepArrow(t.param, subst_type(t.param_type, mapping), subst_type(t.body, inner))
    if isinstance(t, GhostArrow):
        inner = {k: v for k, v in mapping.items() if k != t.var}
        return GhostArrow(t.var, t.sort, subst_type(t.body, inner))
    if isinstance(t, GhostEventArrow):
        return GhostEventArrow(t.op, t.sort, subst_type(t.body, mapping))
    if isinstance(t, UHat):
        inner = {k: v for k, v in mapping.items() if k != t.ret_name}
        return UHat(
            subst_regex(t.hist, inner),
            t.ret_name,
            subst_type(t.ret, inner),
            subst_regex(t.future, inner),
        )
    if isinstance(t, Inter):
        return Inter(tuple(subst_type(c, mapping) for c in t.components))
    raise SortError(f"unknown type node {t!r}")


# --------------------------------------------------------------------------
# Well-formedness
# --------------------------------------------------------------------------


def _qual_closed(qual: Qualifier, allowed: set) -> bool:
    return all(name in allowed for name in free_vars(qual))


def _regex_closed(r: Regex, allowed: set) -> bool:
    return all(name in allowed for name in regex_free_vars(r))


def wf_violation(ctx: TypeContext, t: AnyType, alg: SreAlgebra) -> Optional[str]:
    """Name of the first violated well-formedness rule, or None."""
    allowed = set(ctx.names())
    if isinstance(t, RBase):
        if not _qual_closed(t.qual, allowed | {RET_VAR}):
            return "WfPBase"
        return None
    if isinstance(t, DepArrow):
        bad = wf_violation(ctx, t.param_type, alg)
        if bad:
            return bad
        inner = ctx.extend(t.param, t.param_type)
        bad = wf_violation(inner, t.body, alg)
        if bad:
            return bad
        return None
    if isinstance(t, GhostArrow):
        inner = ctx.extend(t.var, RBase(t.sort))
        return wf_violation(inner, t.body, alg)
    if isinstance(t, GhostEventArrow):
        return wf_violation(ctx, t.body, alg)
    if isinstance(t, UHat):
        bad = wf_violation(ctx, t.ret, alg)
        if bad:
            return bad
        scope = allowed | {t.ret_name}
        try:
            if not (_regex_closed(t.hist, scope) and _regex_closed(t.future, scope)):
                return "WfHF"
            if alg.is_empty(t.hist, ctx.quals()):
                return "WfHF"
        except (UnknownOp, SortError):
            return "WfEvent"
        return None
    if isinstance(t, Inter):
        sorts = {erase(c) for c in t.components}
        if len(sorts) != 1:
            return "WFInter"
        for c in t.components:
            bad = wf_violation(ctx, c, alg)
            if bad:
                return bad
        return None
    return "WfPBase"


def well_formed_type(ctx: TypeContext, t: AnyType, alg: SreAlgebra) -> bool:
    return wf_violation(ctx, t, alg) is None


def require_well_formed(ctx: TypeContext, t: AnyType, alg: SreAlgebra) -> None:
    rule = wf_violation(ctx, t, alg)
    if rule is not None:
        raise WellFormednessError(rule)


# --------------------------------------------------------------------------
# Subtyping
# --------------------------------------------------------------------------


def sub_pure(
    ctx: TypeContext, t1: AnyType, t2: AnyType, domain: Domain = DEFAULT_DOMAIN
) -> bool:
    """t1 <: t2 in the must direction: t2's qualifier entails t1's."""
    if erase(t1) != erase(t2):
        raise ErasureMismatch(f"{erase(t1)} vs {erase(t2)}")
    if isinstance(t1, RBase) and isinstance(t2, RBase):
        return entails(ctx.quals() + [t2.qual], t1.qual, domain)
    if isinstance(t1, DepArrow) and isinstance(t2, DepArrow):
        # contravariant parameter, covariant body
        if not sub_pure(ctx, t2.param_type, t1.param_type, domain):
            return False
        body1 = subst_type(t1.body, {t1.param: Var(t2.param, t1.param_type.sort)})
        inner = ctx.extend(t2.param, t2.param_type)
        return sub_pure(inner, body1, t2.body, domain)
    raise SemanticError(f"subPure over non-pure types: {t1!r} <: {t2!r}")


def sub_uhat(
    ctx: TypeContext, tau1: AnyType, tau2: AnyType, alg: SreAlgebra
) -> bool:
    """tau1 <: tau2 — history covariant, future contravariant."""
    if isinstance(tau1, Inter):
        return any(sub_uhat(ctx, c, tau2, alg) for c in tau1.components)
    if isinstance(tau2, Inter):
        return all(sub_uhat(ctx, tau1, c, alg) for c in tau2.components)
    if not (isinstance(tau1, UHat) and isinstance(tau2, UHat)):
        raise SemanticError("subUHat requires trace types")
    if not sub_pure(ctx, tau1.ret, tau2.ret, alg.domain):
        return False
    x = tau1.ret_name
    h2, f2 = tau2.hist, tau2.future
    if tau2.ret_name != x:
        ren = {tau2.ret_name: Var(x, tau1.ret.sort)}
        h2 = subst_regex(h2, ren)
        f2 = subst_regex(f2, ren)
    inner = ctx.extend(x, tau1.ret) if ctx.lookup(x) is None else ctx
    cquals = inner.quals()
    return alg.includes(f2, tau1.future, cquals) and alg.includes(
        tau1.hist, h2, cquals
    )


# --------------------------------------------------------------------------
# Ghost instantiation and history specialization
# --------------------------------------------------------------------------


def instantiate_ghost(sig: AnyType, bindings: Dict[str, Constant]) -> AnyType:
    """Strip leading ghost binders named in ``bindings``, substituting values."""
    remaining = dict(bindings)
    t = sig
    while isinstance(t, GhostArrow) and t.var in remaining:
        value = remaining.pop(t.var)
        if constant_sort(value) not in (t.sort, INT):
            raise SortError(
                f"ghost {t.var!r} expects {t.sort}, got {value!r}"
            )
        t = subst_type(t.body, {t.var: Lit(value, t.sort)})
    if remaining:
        raise WellFormednessError(
            f"SubG: bindings {sorted(remaining)} do not match a ghost prefix"
        )
    return t


def specialize_history(
    ctx: TypeContext, sig: UHat, h_new: Regex, alg: SreAlgebra
) -> UHat:
    """[H]t[F] ↦ [Hnew]t[F], provided Hnew is a non-empty subset of H."""
    if not isinstance(sig, UHat):
        raise SemanticError("specializeHistory requires a plain trace type")
    cquals = ctx.quals()
    if not alg.includes(h_new, sig.hist, cquals):
        raise SpecializationRejected("inclusion")
    if alg.is_empty(h_new, cquals):
        raise SpecializationRejected("non-emptiness")
    return UHat(h_new, sig.ret_name, sig.ret, sig.future)


# --------------------------------------------------------------------------
# Realizability
# --------------------------------------------------------------------------

_fresh_counter = [0]


def _freshen(names: Sequence[str]) -> Dict[str, str]:
    _fresh_counter[0] += 1
    k = _fresh_counter[0]
    return {n: f"_rz{k}_{n}" for n in names}


def realizable_event(
    ctx: TypeContext,
    history_prefix: Regex,
    ev,
    ghost_suffix: Regex,
    delta: OperatorContext,
    alg: SreAlgebra,
) -> bool:
    """Is the concrete event justified by its operator's signature here?

    Replays the refinement premises against a fresh copy of the stored
    signature: the merged history, strengthened event, and merged future
    must admit a jointly satisfiable trace.  Ghost events are vacuously
    realizable (the definition quantifies over concrete events only).
    """
    ev = ev.canonical()
    decl = delta.require(ev.op)
    if decl.kind == "ghost" or ev.ghost:
        return True
    return event_supported(ctx, history_prefix, ev, ghost_suffix, delta, alg)


def event_supported(
    ctx: TypeContext,
    history_prefix: Regex,
    ev,
    ghost_suffix: Regex,
    delta: OperatorContext,
    alg: SreAlgebra,
) -> bool:
    """The realizability premise without the ghost-event shortcut.

    Used by the recursion-template validator, where unrolled ghost events
    must also re-justify their signatures (a lone counter event with no
    preceding concrete operation is exactly what rejects bad templates).
    """
    ev = ev.canonical()
    base_quals = ctx.quals()
    for comp in delta.require(ev.op).components():
        ren = _freshen(
            [n for n, _ in comp.ghosts]
            + [n for n, _ in comp.params]
            + [comp.ret_name]
        )
        mapping = {k: Var(v, INT) for k, v in ren.items()}
        hist = subst_regex(comp.hist, mapping)
        head = subst(comp.head_qual, mapping)
        rest = subst_regex(comp.future_rest, mapping)
        quals = list(base_quals)
        for pname, ptype in comp.params:
            q = subst(ptype.qual, {RET_VAR: Var(ren[pname], ptype.sort)})
            quals.append(subst(q, mapping))
        rq = subst(comp.ret.qual, {RET_VAR: Var(ren[comp.ret_name], comp.ret.sort)})
        quals.append(subst(rq, mapping))
        merged_ev = SEv(SEvent(ev.op, ev.ghost, ev.arg_vars, conj([ev.qual, head])))
        candidate = concat(
            [
                intersect([history_prefix, hist]),
                merged_ev,
                intersect([ghost_suffix, concat([rest, star(ANY)])]),
            ]
        )
        try:
            if not alg.is_empty(candidate, quals):
                return True
        except SortError:
            continue
    return False
