"""The generator language: terms, basic typing, and the interpreter.

Terms are nondeterministic programs that probe a black-box system under
test through its effectful operations.  A small-step interpreter reduces a
term against a pluggable effect handler, producing a trace; ``assume``
binders are read angelically — witnesses are drawn from a constraint
oracle over the bounded domain rather than by blind rejection.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .config import DEFAULT_CONFIG, Config
from .errors import BasicTypeError, SortError, StuckError, SUTFaultError, UnknownOp
from .logic import (
    BOOL,
    ID,
    INT,
    PRIM_OPS,
    TRUE,
    UNIT,
    UNIT_VALUE,
    Constant,
    Domain,
    Lit,
    Qualifier,
    Sort,
    Var,
    arrow,
    constant_sort,
    eval_qualifier,
    free_vars,
    is_arrow,
    sat_all,
    sort_compatible,
    subst,
)
from .trace import Event, Trace
from .typesys import OperatorContext

# --------------------------------------------------------------------------
# Terms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: Constant


@dataclass(frozen=True)
class VarE:
    name: str


@dataclass(frozen=True)
class Lam:
    param: str
    sort: Sort
    body: "Expr"


@dataclass(frozen=True)
class Fix:
    fname: str
    fsort: Sort
    param: str
    psort: Sort
    body: "Expr"


@dataclass(frozen=True)
class Choice:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class App:
    fn: "Expr"
    arg: "Expr"


@dataclass(frozen=True)
class PrimApp_:
    """Pure built-in operator application over values."""

    op: str
    args: Tuple["Expr", ...]


@dataclass(frozen=True)
class EffApp:
    """Effectful operator application over values."""

    op: str
    args: Tuple["Expr", ...]


@dataclass(frozen=True)
class Let:
    var: str
    bound: "Expr"
    body: "Expr"


@dataclass(frozen=True)
class Assume:
    phi: Qualifier


@dataclass(frozen=True)
class Assert:
    phi: Qualifier


@dataclass(frozen=True)
class AssumeBind:
    """``let x̄ = assume(φ(x̄)) in e`` — sugar for drawing fresh values.

    Stands for binding each variable to ``rand_int ()`` and then assuming
    φ; the interpreter reads it angelically via the constraint oracle.
    """

    binders: Tuple[Tuple[str, Sort], ...]
    phi: Qualifier
    body: "Expr"


@dataclass(frozen=True)
class RaiseError:
    """Terminal marker produced by a failed assertion."""

    phi: Qualifier


Expr = Union[
    Const,
    VarE,
    Lam,
    Fix,
    Choice,
    App,
    PrimApp_,
    EffApp,
    Let,
    Assume,
    Assert,
    AssumeBind,
    RaiseError,
]

UNIT_CONST = Const(UNIT_VALUE)


def is_value(e: Expr) -> bool:
    return isinstance(e, (Const, VarE, Lam, Fix))


def seq(*exprs: Expr) -> Expr:
    """e1; e2; … — right-nested lets binding the wildcard."""
    if not exprs:
        return UNIT_CONST
    out = exprs[-1]
    for e in reversed(exprs[:-1]):
        out = Let("_", e, out)
    return out


# --------------------------------------------------------------------------
# Substitution
# --------------------------------------------------------------------------


def _qual_mapping(mapping: Dict[str, Expr]) -> Dict[str, Qualifier]:
    """The part of a term substitution that can enter qualifiers."""
    return {k: Lit(v.value, constant_sort(v.value)) for k, v in mapping.items() if isinstance(v, Const)}


def subst_expr(e: Expr, mapping: Dict[str, Expr]) -> Expr:
    if not mapping:
        return e
    if isinstance(e, Const):
        return e
    if isinstance(e, VarE):
        return mapping.get(e.name, e)
    if isinstance(e, Lam):
        inner = {k: v for k, v in mapping.items() if k != e.param}
        return Lam(e.param, e.sort, subst_expr(e.body, inner))
    if isinstance(e, Fix):
        inner = {
            k: v for k, v in mapping.items() if k not in (e.fname, e.param)
        }
        return Fix(e.fname, e.fsort, e.param, e.psort, subst_expr(e.body, inner))
    if isinstance(e, Choice):
        return Choice(subst_expr(e.left, mapping), subst_expr(e.right, mapping))
    if isinstance(e, App):
        return App(subst_expr(e.fn, mapping), subst_expr(e.arg, mapping))
    if isinstance(e, PrimApp_):
        return PrimApp_(e.op, tuple(subst_expr(a, mapping) for a in e.args))
    if isinstance(e, EffApp):
        return EffApp(e.op, tuple(subst_expr(a, mapping) for a in e.args))
    if isinstance(e, Let):
        inner = {k: v for k, v in mapping.items() if k != e.var}
        return Let(e.var, subst_expr(e.bound, mapping), subst_expr(e.body, inner))
    if isinstance(e, Assume):
        return Assume(subst(e.phi, _qual_mapping(mapping)))
    if isinstance(e, Assert):
        return Assert(subst(e.phi, _qual_mapping(mapping)))
    if isinstance(e, AssumeBind):
        bound = {n for n, _ in e.binders}
        inner = {k: v for k, v in mapping.items() if k not in bound}
        qm = _qual_mapping(inner)
        return AssumeBind(e.binders, subst(e.phi, qm), subst_expr(e.body, inner))
    if isinstance(e, RaiseError):
        return e
    raise StuckError(f"unknown term node {e!r}")


# --------------------------------------------------------------------------
# Basic typing
# --------------------------------------------------------------------------

#: Sorts of the pure built-in operators.
_PRIM_SORTS: Dict[str, Tuple[Tuple[Sort, ...], Sort]] = {
    "+": ((INT, INT), INT),
    "-": ((INT, INT), INT),
    "==": ((INT, INT), BOOL),
    "<": ((INT, INT), BOOL),
    "<=": ((INT, INT), BOOL),
}


def _sort_ok(got: Sort, want: Sort) -> bool:
    """Sort compatibility: identifiers are carried as bounded integers."""
    if is_arrow(got) or is_arrow(want):
        return got == want
    if want in (INT, ID):
        return got in (INT, ID)
    return got == want


def _qual_sort(phi: Qualifier, env: Dict[str, Sort], rule: str) -> Sort:
    from .logic import And, Forall, Implies, Not, Or

    def fail(detail: str) -> BasicTypeError:
        return BasicTypeError(rule, detail)

    if isinstance(phi, Lit):
        return constant_sort(phi.value)
    if isinstance(phi, Var):
        s = env.get(phi.name)
        if s is None or is_arrow(s):
            raise fail(f"unbound or non-base {phi.name!r} in qualifier")
        return s
    if isinstance(phi, (And, Or)):
        for p in phi.items:
            if _qual_sort(p, env, rule) != BOOL:
                raise fail("boolean connective over non-bool")
        return BOOL
    if isinstance(phi, Not):
        if _qual_sort(phi.body, env, rule) != BOOL:
            raise fail("negation of non-bool")
        return BOOL
    if isinstance(phi, Implies):
        for p in (phi.lhs, phi.rhs):
            if _qual_sort(p, env, rule) != BOOL:
                raise fail("implication over non-bool")
        return BOOL
    if isinstance(phi, Forall):
        if _qual_sort(phi.body, {**env, phi.var: phi.sort}, rule) != BOOL:
            raise fail("quantified body is non-bool")
        return BOOL
    if hasattr(phi, "op") and hasattr(phi, "args"):
        if phi.op not in _PRIM_SORTS:
            raise fail(f"unknown primitive {phi.op!r}")
        want, ret = _PRIM_SORTS[phi.op]
        if len(phi.args) != len(want):
            raise fail(f"{phi.op} arity")
        for a, w in zip(phi.args, want):
            if not _sort_ok(_qual_sort(a, env, rule), w):
                raise fail(f"{phi.op} argument sorts")
        return ret
    raise fail(f"unknown qualifier node {phi!r}")


def _check_qual(phi: Qualifier, env: Dict[str, Sort], rule: str) -> None:
    if _qual_sort(phi, env, rule) != BOOL:
        raise BasicTypeError(rule, "qualifier is not boolean")


def typecheck_basic(
    e: Expr, delta: OperatorContext, env: Optional[Dict[str, Sort]] = None
) -> Sort:
    """The basic (sort-level) type of a term, or BasicTypeError."""
    env = dict(env or {})

    def fail(rule: str, detail: str = "") -> BasicTypeError:
        return BasicTypeError(rule, detail)

    def go(e: Expr, env: Dict[str, Sort]) -> Sort:
        if isinstance(e, Const):
            return constant_sort(e.value)
        if isinstance(e, VarE):
            if e.name not in env:
                raise fail("BtVar", e.name)
            return env[e.name]
        if isinstance(e, Lam):
            return arrow(e.sort, go(e.body, {**env, e.param: e.sort}))
        if isinstance(e, Fix):
            if not is_arrow(e.fsort) or e.fsort[1] != e.psort:
                raise fail("BtFix", "fixpoint sort must be an arrow over the parameter")
            body_sort = go(e.body, {**env, e.fname: e.fsort, e.param: e.psort})
            if body_sort != e.fsort[2]:
                raise fail("BtFix", f"body has sort {body_sort}")
            return e.fsort
        if isinstance(e, Choice):
            s1, s2 = go(e.left, env), go(e.right, env)
            if s1 != s2:
                raise fail("BtChoice", f"{s1} vs {s2}")
            return s1
        if isinstance(e, App):
            fs = go(e.fn, env)
            if not is_arrow(fs):
                raise fail("BtApp", "application head is not a function")
            arg = go(e.arg, env)
            if not _sort_ok(arg, fs[1]):
                raise fail("BtApp", f"argument {arg} vs {fs[1]}")
            return fs[2]
        if isinstance(e, PrimApp_):
            if e.op not in _PRIM_SORTS:
                raise fail("BtPrimOpApp", e.op)
            want, ret = _PRIM_SORTS[e.op]
            if len(e.args) != len(want):
                raise fail("BtPrimOpApp", f"{e.op} arity")
            for a, w in zip(e.args, want):
                if not is_value(a):
                    raise fail("BtPrimOpApp", "arguments must be values")
                if not _sort_ok(go(a, env), w):
                    raise fail("BtPrimOpApp", f"{e.op} argument sorts")
            return ret
        if isinstance(e, EffApp):
            decl = delta.get(e.op)
            if decl is None:
                raise fail("BtEfOpApp", f"unknown operator {e.op}")
            if decl.kind == "ghost":
                raise fail("BtEfOpApp", f"ghost operator {e.op} cannot execute")
            params = decl.params
            if len(e.args) != len(params):
                raise fail("BtEfOpApp", f"{e.op} arity")
            for a, (_, psort) in zip(e.args, params):
                if not is_value(a):
                    raise fail("BtEfOpApp", "arguments must be values")
                if not _sort_ok(go(a, env), psort):
                    raise fail("BtEfOpApp", f"{e.op} argument sorts")
            return decl.ret_sort
        if isinstance(e, Let):
            s = go(e.bound, env)
            return go(e.body, {**env, e.var: s})
        if isinstance(e, Assume):
            _check_qual(e.phi, env, "BtAssume")
            return UNIT
        if isinstance(e, Assert):
            _check_qual(e.phi, env, "BtAssert")
            return UNIT
        if isinstance(e, AssumeBind):
            inner = dict(env)
            for name, sort in e.binders:
                if is_arrow(sort):
                    raise fail("BtAssume", "assume binders must be base-sorted")
                inner[name] = sort
            _check_qual(e.phi, inner, "BtAssume")
            return go(e.body, inner)
        if isinstance(e, RaiseError):
            return UNIT
        raise fail("BtConst", f"unknown node {e!r}")

    return go(e, env)


# --------------------------------------------------------------------------
# Interpreter
# --------------------------------------------------------------------------

#: Effect handler: (trace so far, op, argument constants) -> return constant.
#: Signals its own failure by raising SUTFaultError.
EffectHandler = Callable[[Trace, str, Tuple[Constant, ...]], Constant]


class AngelicBlocked(Exception):
    """An assume has no witness; the angelic path is dead."""

    def __init__(self, phi: Qualifier):
        self.phi = phi
        super().__init__(str(phi))


@dataclass(frozen=True)
class ChoicePolicy:
    """Seedable branch selection for ⊕; uniform by default.

    ``left_bias`` is the probability of taking the left branch.
    """

    left_bias: float = 0.5

    def choose(self, rng: random.Random) -> bool:
        return rng.random() < self.left_bias


UNIFORM = ChoicePolicy()


def _eval_prim(op: str, args: Sequence[Constant]) -> Constant:
    a, b = args
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "==":
        return a == b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    raise StuckError(f"unknown pure operator {op!r}")


def step(
    alpha: Trace,
    e: Expr,
    handler: EffectHandler,
    rng: random.Random,
    delta: OperatorContext,
    config: Config = DEFAULT_CONFIG,
    policy: ChoicePolicy = UNIFORM,
) -> Tuple[List[Event], Expr]:
    """One reduction; returns the emitted trace delta and the new term."""
    if is_value(e):
        raise StuckError("step on a value")
    if isinstance(e, Choice):
        return [], e.left if policy.choose(rng) else e.right
    if isinstance(e, PrimApp_):
        vals = [_const_value(a) for a in e.args]
        return [], Const(_eval_prim(e.op, vals))
    if isinstance(e, EffApp):
        vals = tuple(_const_value(a) for a in e.args)
        try:
            ret = handler(alpha, e.op, vals)
        except SUTFaultError as fault:
            if fault.op is None:
                fault.op = e.op
                fault.args = vals
            raise
        decl = delta.require(e.op)
        if not sort_compatible(decl.ret_sort, ret):
            raise SUTFaultError(
                f"handler returned {ret!r} for {e.op} : {decl.ret_sort}"
            )
        return [Event(e.op, vals, ret, ghost=False)], Const(ret)
    if isinstance(e, Let):
        if isinstance(e.bound, RaiseError):
            return [], e.bound
        if is_value(e.bound):
            return [], subst_expr(e.body, {e.var: e.bound})
        d, bound = step(alpha, e.bound, handler, rng, delta, config, policy)
        return d, Let(e.var, bound, e.body)
    if isinstance(e, App):
        if isinstance(e.fn, Lam):
            return [], subst_expr(e.fn.body, {e.fn.param: e.arg})
        if isinstance(e.fn, Fix):
            f = e.fn
            unrolled = Lam(f.fname, f.fsort, subst_expr(f.body, {f.param: e.arg}))
            return [], App(unrolled, f)
        raise StuckError("application of a non-function value")
    if isinstance(e, Assume):
        if eval_qualifier(e.phi, {}, config_domain(config)):
            return [], UNIT_CONST
        raise AngelicBlocked(e.phi)
    if isinstance(e, Assert):
        if eval_qualifier(e.phi, {}, config_domain(config)):
            return [], UNIT_CONST
        return [], RaiseError(e.phi)
    if isinstance(e, AssumeBind):
        witness = _draw_witness(e, rng, config)
        if witness is None:
            raise AngelicBlocked(e.phi)
        mapping = {name: Const(witness[name]) for name, _ in e.binders}
        return [], subst_expr(e.body, mapping)
    raise StuckError(f"cannot reduce {e!r}")


def config_domain(config: Config) -> Domain:
    return Domain(config.domain_lo, config.domain_hi)


def _const_value(e: Expr) -> Constant:
    if not isinstance(e, Const):
        raise StuckError(f"operator argument {e!r} is not a constant")
    return e.value


# The same closed constraint recurs across runs and recursion levels
# (qualifiers range over a small bounded domain), so witness sets are
# memoized.  Entries depend only on the formula and the domain, never on
# the RNG, so caching preserves seeded determinism.
_WITNESS_CACHE: Dict[tuple, list] = {}
_WITNESS_CACHE_CAP = 50_000


def _draw_witness(
    e: AssumeBind, rng: random.Random, config: Config
) -> Optional[Dict[str, Constant]]:
    """A random model of the assumed constraint over the bounded domain.

    The qualifier language coincides with the oracle fragment, so the
    constraint is solved directly: witnesses are enumerated (capped) and
    one is drawn uniformly.  ``assume_retries`` bounds re-enumeration only
    in the degenerate unconstrained case.
    """
    domain = config_domain(config)
    names = [n for n, _ in e.binders]
    phi = e.phi
    extra = set(free_vars(phi)) - set(names)
    if extra:
        raise StuckError(f"assume over unbound variables {sorted(extra)}")
    if phi == TRUE:
        return {n: rng.choice(domain.values(INT)) for n in names}
    key = (phi, domain.lo, domain.hi, config.assume_witness_cap)
    witnesses = _WITNESS_CACHE.get(key)
    if witnesses is None:
        witnesses = sat_all(phi, (), domain, limit=config.assume_witness_cap)
        if len(_WITNESS_CACHE) >= _WITNESS_CACHE_CAP:
            _WITNESS_CACHE.clear()
        _WITNESS_CACHE[key] = witnesses
    if not witnesses:
        return None
    chosen = dict(rng.choice(witnesses))
    for n in names:
        chosen.setdefault(n, rng.choice(domain.values(INT)))
    return chosen


# --------------------------------------------------------------------------
# Run outcomes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Completed:
    value: Expr
    trace: Trace


@dataclass(frozen=True)
class AssertViolated:
    trace: Trace
    phi: Qualifier


@dataclass(frozen=True)
class AssumeExhausted:
    trace: Trace
    phi: Qualifier
    retries: int


@dataclass(frozen=True)
class Diverged:
    trace: Trace
    steps: int


@dataclass(frozen=True)
class Faulted:
    """The system under test signalled its own fault mid-run."""

    trace: Trace
    detail: str
    op: Optional[str] = None
    args: Tuple[Constant, ...] = ()


RunOutcome = Union[Completed, AssertViolated, AssumeExhausted, Diverged, Faulted]


def run(
    e: Expr,
    handler: EffectHandler,
    delta: OperatorContext,
    seed: int = 0,
    config: Config = DEFAULT_CONFIG,
    policy: ChoicePolicy = UNIFORM,
    rng: Optional[random.Random] = None,
) -> RunOutcome:
    """Reduce to a value or a terminal outcome under a fixed seed."""
    rng = rng if rng is not None else random.Random(seed)
    trace: List[Event] = []
    term = e
    for steps in range(config.step_budget):
        if is_value(term):
            return Completed(term, tuple(trace))
        if isinstance(term, RaiseError):
            return AssertViolated(tuple(trace), term.phi)
        try:
            delta_events, term = step(
                tuple(trace), term, handler, rng, delta, config, policy
            )
        except AngelicBlocked as blocked:
            return AssumeExhausted(tuple(trace), blocked.phi, config.assume_retries)
        except SUTFaultError as fault:
            return Faulted(tuple(trace), str(fault), fault.op, fault.args)
        trace.extend(delta_events)
    return Diverged(tuple(trace), config.step_budget)
