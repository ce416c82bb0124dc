"""Qualifier ASTs, valuations, and a bounded-domain satisfiability oracle.

Qualifiers are first-order formulas over sorted variables plus the
distinguished value variable ``nu``.  The supported fragment is
quantifier-free linear integer arithmetic + booleans + equality; universal
quantifiers are handled by bounded expansion over the configured integer
domain.  The sat oracle is an exhaustive backtracking search over that
domain, so every answer is relative to the domain bounds — which is exactly
what the rest of the toolkit (automata feasibility, assume sampling) needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

from .errors import SortError, UnsupportedTheory

# --------------------------------------------------------------------------
# Sorts and constants
# --------------------------------------------------------------------------

# Base sorts are plain strings; first-order arrows appear only in basic
# typing of lambdas and are represented as nested ('->', s1, s2) tuples.
UNIT = "unit"
BOOL = "bool"
INT = "int"
ID = "id"

BASE_SORTS = (UNIT, BOOL, INT, ID)

Sort = Union[str, tuple]

#: The unit constant.  Rendered as ``()`` in all surface syntaxes.
UNIT_VALUE = ()

Constant = Union[int, bool, tuple]


def arrow(s1: Sort, s2: Sort) -> Sort:
    return ("->", s1, s2)


def is_arrow(s: Sort) -> bool:
    return isinstance(s, tuple) and len(s) == 3 and s[0] == "->"


def constant_sort(value: Constant) -> str:
    if value is UNIT_VALUE or value == ():
        return UNIT
    if isinstance(value, bool):
        return BOOL
    if isinstance(value, int):
        return INT
    raise SortError(f"unsupported constant {value!r}")


def sort_compatible(sort: str, value: Constant) -> bool:
    got = constant_sort(value)
    if sort in (INT, ID):
        return got == INT
    return got == sort


# --------------------------------------------------------------------------
# Qualifier AST
# --------------------------------------------------------------------------

PRIM_OPS = ("+", "-", "==", "<", "<=")


@dataclass(frozen=True)
class Lit:
    value: Constant
    sort: str

    def __repr__(self) -> str:
        return f"Lit({self.value!r})"


@dataclass(frozen=True)
class Var:
    name: str
    sort: str = INT

    def __repr__(self) -> str:
        return f"Var({self.name})"


@dataclass(frozen=True)
class PrimApp:
    op: str
    args: Tuple["Qualifier", ...]

    def __post_init__(self):
        if self.op not in PRIM_OPS:
            raise UnsupportedTheory(f"unsupported primitive operator {self.op!r}")


@dataclass(frozen=True)
class Not:
    body: "Qualifier"


@dataclass(frozen=True)
class And:
    items: Tuple["Qualifier", ...]


@dataclass(frozen=True)
class Or:
    items: Tuple["Qualifier", ...]


@dataclass(frozen=True)
class Implies:
    lhs: "Qualifier"
    rhs: "Qualifier"


@dataclass(frozen=True)
class Forall:
    var: str
    sort: str
    body: "Qualifier"


Qualifier = Union[Lit, Var, PrimApp, Not, And, Or, Implies, Forall]

TRUE = Lit(True, BOOL)
FALSE = Lit(False, BOOL)

#: A valuation maps variable names to constants (the paper's sigma).
Valuation = Mapping[str, Constant]


def conj(items: Iterable[Qualifier]) -> Qualifier:
    """Flattening conjunction constructor; drops TRUE, collapses FALSE."""
    flat: List[Qualifier] = []
    for q in items:
        if isinstance(q, And):
            flat.extend(q.items)
        elif q == TRUE:
            continue
        elif q == FALSE:
            return FALSE
        else:
            flat.append(q)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disj(items: Iterable[Qualifier]) -> Qualifier:
    flat: List[Qualifier] = []
    for q in items:
        if isinstance(q, Or):
            flat.extend(q.items)
        elif q == FALSE:
            continue
        elif q == TRUE:
            return TRUE
        else:
            flat.append(q)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


def neg(q: Qualifier) -> Qualifier:
    if q == TRUE:
        return FALSE
    if q == FALSE:
        return TRUE
    if isinstance(q, Not):
        return q.body
    return Not(q)


def eq(a: Qualifier, b: Qualifier) -> Qualifier:
    return prim("==", (a, b))


def prim(op: str, args: Iterable[Qualifier]) -> Qualifier:
    """PrimApp constructor that folds ground applications to literals."""
    args = tuple(args)
    node = PrimApp(op, args)
    if all(isinstance(a, Lit) for a in args):
        try:
            value = _eval_atom(node, {})
        except SortError:
            return node
        return Lit(value, BOOL if isinstance(value, bool) else INT)
    return node


def conjuncts(q: Qualifier) -> Tuple[Qualifier, ...]:
    if isinstance(q, And):
        out: List[Qualifier] = []
        for item in q.items:
            out.extend(conjuncts(item))
        return tuple(out)
    if q == TRUE:
        return ()
    return (q,)


def free_vars(q: Qualifier) -> Dict[str, str]:
    """Free variables of ``q`` with their sorts, in first-occurrence order."""
    out: Dict[str, str] = {}

    def go(t: Qualifier, bound: Tuple[str, ...]) -> None:
        if isinstance(t, Lit):
            return
        if isinstance(t, Var):
            if t.name not in bound and t.name not in out:
                out[t.name] = t.sort
            return
        if isinstance(t, PrimApp):
            for a in t.args:
                go(a, bound)
            return
        if isinstance(t, Not):
            go(t.body, bound)
            return
        if isinstance(t, (And, Or)):
            for a in t.items:
                go(a, bound)
            return
        if isinstance(t, Implies):
            go(t.lhs, bound)
            go(t.rhs, bound)
            return
        if isinstance(t, Forall):
            go(t.body, bound + (t.var,))
            return
        raise SortError(f"unknown qualifier node {t!r}")

    go(q, ())
    return out


def subst(q: Qualifier, mapping: Mapping[str, Qualifier]) -> Qualifier:
    """Capture-avoiding substitution of atoms (Var/Lit/PrimApp) for variables."""
    if not mapping:
        return q
    if isinstance(q, Lit):
        return q
    if isinstance(q, Var):
        return mapping.get(q.name, q)
    if isinstance(q, PrimApp):
        return prim(q.op, tuple(subst(a, mapping) for a in q.args))
    if isinstance(q, Not):
        return neg(subst(q.body, mapping))
    if isinstance(q, And):
        return conj(subst(a, mapping) for a in q.items)
    if isinstance(q, Or):
        return disj(subst(a, mapping) for a in q.items)
    if isinstance(q, Implies):
        return Implies(subst(q.lhs, mapping), subst(q.rhs, mapping))
    if isinstance(q, Forall):
        inner = {k: v for k, v in mapping.items() if k != q.var}
        used: set = set()
        for v in inner.values():
            used.update(free_vars(v))
        if q.var in used:
            fresh = q.var
            taken = used | set(free_vars(q.body))
            while fresh in taken:
                fresh += "_"
            body = subst(q.body, {q.var: Var(fresh, q.sort)})
            return Forall(fresh, q.sort, subst(body, inner))
        return Forall(q.var, q.sort, subst(q.body, inner))
    raise SortError(f"unknown qualifier node {q!r}")


def rename(q: Qualifier, mapping: Mapping[str, str]) -> Qualifier:
    return subst(q, {k: Var(v, free_vars(q).get(k, INT)) for k, v in mapping.items()})


def exists(names: Sequence[Tuple[str, str]], body: Qualifier) -> Qualifier:
    """Bounded existential, encoded as ¬∀¬ over the domain."""
    out = body
    for name, sort in reversed(list(names)):
        out = neg(Forall(name, sort, neg(out)))
    return out


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    lo: int = -8
    hi: int = 8

    def values(self, sort: str) -> Sequence[Constant]:
        if sort in (INT, ID):
            return range(self.lo, self.hi + 1)
        if sort == BOOL:
            return (False, True)
        if sort == UNIT:
            return (UNIT_VALUE,)
        raise SortError(f"cannot enumerate sort {sort!r}")


DEFAULT_DOMAIN = Domain()


def _eval_atom(q: Qualifier, sigma: Valuation) -> Constant:
    if isinstance(q, Lit):
        return q.value
    if isinstance(q, Var):
        if q.name not in sigma:
            raise SortError(f"unbound variable {q.name!r}")
        return sigma[q.name]
    if isinstance(q, PrimApp):
        args = [_eval_atom(a, sigma) for a in q.args]
        op = q.op
        if op == "==":
            if len(args) != 2:
                raise SortError("== takes two arguments")
            return args[0] == args[1]
        if op in ("+", "-"):
            if not all(isinstance(a, int) and not isinstance(a, bool) for a in args):
                raise SortError(f"{op} applied to non-integers: {args!r}")
            total = args[0]
            for a in args[1:]:
                total = total + a if op == "+" else total - a
            return total
        if op in ("<", "<="):
            if len(args) != 2 or not all(
                isinstance(a, int) and not isinstance(a, bool) for a in args
            ):
                raise SortError(f"{op} applied to non-integers: {args!r}")
            return args[0] < args[1] if op == "<" else args[0] <= args[1]
    # Boolean connectives also evaluate to constants (bool).
    return _eval_bool(q, sigma)


def _eval_bool(q: Qualifier, sigma: Valuation, domain: Domain = DEFAULT_DOMAIN) -> bool:
    v = None
    if isinstance(q, (Lit, Var, PrimApp)):
        v = _eval_atom(q, sigma)
        if not isinstance(v, bool):
            raise SortError(f"expected bool, got {v!r}")
        return v
    if isinstance(q, Not):
        return not _eval_bool(q.body, sigma, domain)
    if isinstance(q, And):
        return all(_eval_bool(a, sigma, domain) for a in q.items)
    if isinstance(q, Or):
        return any(_eval_bool(a, sigma, domain) for a in q.items)
    if isinstance(q, Implies):
        return (not _eval_bool(q.lhs, sigma, domain)) or _eval_bool(q.rhs, sigma, domain)
    if isinstance(q, Forall):
        inner = dict(sigma)
        for val in domain.values(q.sort):
            inner[q.var] = val
            if not _eval_bool(q.body, inner, domain):
                return False
        return True
    raise SortError(f"unknown qualifier node {q!r}")


def eval_qualifier(
    phi: Qualifier, sigma: Valuation, domain: Domain = DEFAULT_DOMAIN
) -> bool:
    """Ground truth value of ``phi`` under ``sigma``.

    Universal quantifiers range over ``domain``.  Raises SortError when a
    free variable is unbound or a primitive is applied at the wrong sort.
    """
    return _eval_bool(phi, sigma, domain)


# --------------------------------------------------------------------------
# Satisfiability
# --------------------------------------------------------------------------


def _ground(q: Qualifier, assigned: Mapping[str, Constant]) -> bool:
    return all(name in assigned for name in free_vars(q))


def _linear_parts(
    t: Qualifier, assigned: Mapping[str, Constant]
) -> Optional[Tuple[Dict[str, int], int]]:
    """Integer term as (coefficients over unassigned vars, constant)."""
    if isinstance(t, Lit):
        if t.sort == INT and isinstance(t.value, int) and not isinstance(t.value, bool):
            return {}, t.value
        return None
    if isinstance(t, Var):
        if t.sort != INT:
            return None
        if t.name in assigned:
            v = assigned[t.name]
            if isinstance(v, int) and not isinstance(v, bool):
                return {}, v
            return None
        return {t.name: 1}, 0
    if isinstance(t, PrimApp) and t.op in ("+", "-") and len(t.args) == 2:
        a = _linear_parts(t.args[0], assigned)
        b = _linear_parts(t.args[1], assigned)
        if a is None or b is None:
            return None
        sign = 1 if t.op == "+" else -1
        coeffs = dict(a[0])
        for n, k in b[0].items():
            coeffs[n] = coeffs.get(n, 0) + sign * k
        return {n: k for n, k in coeffs.items() if k}, a[1] + sign * b[1]
    return None


def _forced_value(
    c: Qualifier, var: str, assigned: Mapping[str, Constant]
) -> Optional[Constant]:
    """If conjunct ``c`` forces a unique value for ``var``, compute it.

    Recognizes ``var == t`` / ``t == var`` with ``t`` ground, bare boolean
    ``var`` / ``!var``, and integer equalities linear in ``var`` with a
    unit coefficient once every other variable is assigned.  Purely an
    enumeration shortcut: candidates are still checked by evaluation
    afterwards.
    """
    if isinstance(c, Var) and c.name == var and c.sort == BOOL:
        return True
    if isinstance(c, Not) and isinstance(c.body, Var) and c.body.name == var:
        return False
    if isinstance(c, PrimApp) and c.op == "==" and len(c.args) == 2:
        a, b = c.args
        for lhs, rhs in ((a, b), (b, a)):
            if isinstance(lhs, Var) and lhs.name == var and _ground(rhs, assigned):
                try:
                    return _eval_atom(rhs, assigned)
                except SortError:
                    return None
        la = _linear_parts(a, assigned)
        lb = _linear_parts(b, assigned)
        if la is not None and lb is not None:
            coeffs = dict(la[0])
            for n, k in lb[0].items():
                coeffs[n] = coeffs.get(n, 0) - k
            coeffs = {n: k for n, k in coeffs.items() if k}
            const = la[1] - lb[1]
            # coeffs·vars + const == 0; solvable when var stands alone
            if set(coeffs) == {var} and abs(coeffs[var]) == 1:
                return -const // coeffs[var]
    return None


def sat(
    phi: Qualifier,
    context: Sequence[Qualifier] = (),
    domain: Domain = DEFAULT_DOMAIN,
) -> Optional[Dict[str, Constant]]:
    """Satisfiability of ``phi`` together with every context qualifier.

    Returns the lexicographically smallest witnessing valuation (variables
    ordered by name, values in domain order), or None when no valuation over
    the bounded domain exists.
    """
    goal = conj([phi, *context])
    if goal == FALSE:
        return None
    fv = free_vars(goal)
    cons = [c for c in conjuncts(goal) if free_vars(c)]
    for c in conjuncts(goal):
        if not free_vars(c) and not eval_qualifier(c, {}, domain):
            return None
    if not fv:
        return {}
    # Conjunct groups sharing no variables cannot interact, so each
    # connected component is searched independently; because components
    # are variable-disjoint, the per-component lexicographic minima
    # compose to the lexicographically smallest global witness.
    parent: Dict[str, str] = {n: n for n in fv}

    def find(a: str) -> str:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for c in cons:
        cvars = sorted(free_vars(c))
        for other in cvars[1:]:
            parent[find(other)] = find(cvars[0])
    comp_vars: Dict[str, Set[str]] = {}
    for n in fv:
        comp_vars.setdefault(find(n), set()).add(n)
    comp_cons: Dict[str, List[Qualifier]] = {}
    for c in cons:
        root = find(next(iter(free_vars(c))))
        comp_cons.setdefault(root, []).append(c)
    witness: Dict[str, Constant] = {}
    for root, vnames in comp_vars.items():
        part = _sat_component(
            sorted(vnames), comp_cons.get(root, []), fv, domain
        )
        if part is None:
            return None
        witness.update(part)
    return witness


def _sat_component(
    names: List[str],
    cons: Sequence[Qualifier],
    fv: Mapping[str, str],
    domain: Domain,
) -> Optional[Dict[str, Constant]]:
    """Lexicographic backtracking search over one conjunct component."""
    # Pre-compute, per variable, which conjuncts become fully ground once the
    # variables up to (and including) it are assigned.
    position = {n: i for i, n in enumerate(names)}
    check_at: List[List[Qualifier]] = [[] for _ in names]
    for c in cons:
        check_at[max(position[n] for n in free_vars(c))].append(c)

    assigned: Dict[str, Constant] = {}

    def candidates(idx: int) -> Iterator[Constant]:
        var = names[idx]
        forced = None
        for c in check_at[idx]:
            forced = _forced_value(c, var, assigned)
            if forced is not None:
                break
        if forced is not None:
            return iter([forced]) if forced in domain.values(fv[var]) else iter(())
        return iter(domain.values(fv[var]))

    def search(idx: int) -> bool:
        if idx == len(names):
            return True
        var = names[idx]
        for val in candidates(idx):
            if not sort_compatible(fv[var], val):
                continue
            assigned[var] = val
            ok = True
            for c in check_at[idx]:
                try:
                    if not eval_qualifier(c, assigned, domain):
                        ok = False
                        break
                except SortError:
                    ok = False
                    break
            if ok and search(idx + 1):
                return True
            del assigned[var]
        return False

    if search(0):
        return dict(assigned)
    return None


def sat_all(
    phi: Qualifier,
    context: Sequence[Qualifier] = (),
    domain: Domain = DEFAULT_DOMAIN,
    limit: int = 4096,
) -> List[Dict[str, Constant]]:
    """Up to ``limit`` witnesses in lexicographic order (for assume sampling)."""
    goal = conj([phi, *context])
    if goal == FALSE:
        return []
    fv = free_vars(goal)
    names = sorted(fv)
    cons = conjuncts(goal)
    position = {n: i for i, n in enumerate(names)}
    check_at: List[List[Qualifier]] = [[] for _ in names]
    for c in cons:
        cvars = free_vars(c)
        if not cvars:
            if not eval_qualifier(c, {}, domain):
                return []
        else:
            check_at[max(position[n] for n in cvars)].append(c)
    results: List[Dict[str, Constant]] = []
    assigned: Dict[str, Constant] = {}

    def search(idx: int) -> bool:
        if idx == len(names):
            results.append(dict(assigned))
            return len(results) >= limit
        var = names[idx]
        for val in domain.values(fv[var]):
            assigned[var] = val
            ok = True
            for c in check_at[idx]:
                try:
                    if not eval_qualifier(c, assigned, domain):
                        ok = False
                        break
                except SortError:
                    ok = False
                    break
            if ok and search(idx + 1):
                return True
            del assigned[var]
        return False

    search(0)
    return results


def entails(
    hyp: Sequence[Qualifier], concl: Qualifier, domain: Domain = DEFAULT_DOMAIN
) -> bool:
    """True iff every domain valuation satisfying all of ``hyp`` satisfies ``concl``."""
    return sat(neg(concl), hyp, domain) is None
